#include "pivot/model.hpp"

#include "pivot/kernels.hpp"
#include "pivot/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numbers>

namespace pivot {

namespace {

constexpr double kLnEps = 1e-5;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double gelu_deriv(double x) {
    double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
    double pdf = std::exp(-0.5 * x * x) * 0.39894228040143267794; // 1/sqrt(2*pi)
    return cdf + x * pdf;
}

std::string bn(std::string_view prefix, int layer, std::string_view part) {
    std::string s{prefix};
    s += "l" + std::to_string(layer) + ".";
    s += part;
    return s;
}

// Parameter spans of one transformer block.
struct BlockView {
    std::span<const double> ln1_gain, ln1_bias;
    std::span<const double> wq, bq, wk, bk, wv, bv, wo, bo;
    std::span<const double> ln2_gain, ln2_bias;
    std::span<const double> w1, b1, w2, b2;
};

BlockView bind_block(const ParamSet& p, std::string_view prefix, int layer) {
    BlockView v;
    v.ln1_gain = p.block(bn(prefix, layer, "ln1.gain"));
    v.ln1_bias = p.block(bn(prefix, layer, "ln1.bias"));
    v.wq = p.block(bn(prefix, layer, "attn.wq"));
    v.bq = p.block(bn(prefix, layer, "attn.bq"));
    v.wk = p.block(bn(prefix, layer, "attn.wk"));
    v.bk = p.block(bn(prefix, layer, "attn.bk"));
    v.wv = p.block(bn(prefix, layer, "attn.wv"));
    v.bv = p.block(bn(prefix, layer, "attn.bv"));
    v.wo = p.block(bn(prefix, layer, "attn.wo"));
    v.bo = p.block(bn(prefix, layer, "attn.bo"));
    v.ln2_gain = p.block(bn(prefix, layer, "ln2.gain"));
    v.ln2_bias = p.block(bn(prefix, layer, "ln2.bias"));
    v.w1 = p.block(bn(prefix, layer, "mlp.w1"));
    v.b1 = p.block(bn(prefix, layer, "mlp.b1"));
    v.w2 = p.block(bn(prefix, layer, "mlp.w2"));
    v.b2 = p.block(bn(prefix, layer, "mlp.b2"));
    return v;
}

// Mutable gradient pointers for the same block; null base means frozen.
struct BlockGrad {
    double *ln1_gain = nullptr, *ln1_bias = nullptr;
    double *wq = nullptr, *bq = nullptr, *wk = nullptr, *bk = nullptr;
    double *wv = nullptr, *bv = nullptr, *wo = nullptr, *bo = nullptr;
    double *ln2_gain = nullptr, *ln2_bias = nullptr;
    double *w1 = nullptr, *b1 = nullptr, *w2 = nullptr, *b2 = nullptr;
};

BlockGrad bind_block_grad(const ParamSet& p, std::string_view prefix, int layer,
                          std::vector<double>* grad) {
    BlockGrad g;
    if (!grad) return g;
    double* base = grad->data();
    g.ln1_gain = base + p.block_offset(bn(prefix, layer, "ln1.gain"));
    g.ln1_bias = base + p.block_offset(bn(prefix, layer, "ln1.bias"));
    g.wq = base + p.block_offset(bn(prefix, layer, "attn.wq"));
    g.bq = base + p.block_offset(bn(prefix, layer, "attn.bq"));
    g.wk = base + p.block_offset(bn(prefix, layer, "attn.wk"));
    g.bk = base + p.block_offset(bn(prefix, layer, "attn.bk"));
    g.wv = base + p.block_offset(bn(prefix, layer, "attn.wv"));
    g.bv = base + p.block_offset(bn(prefix, layer, "attn.bv"));
    g.wo = base + p.block_offset(bn(prefix, layer, "attn.wo"));
    g.bo = base + p.block_offset(bn(prefix, layer, "attn.bo"));
    g.ln2_gain = base + p.block_offset(bn(prefix, layer, "ln2.gain"));
    g.ln2_bias = base + p.block_offset(bn(prefix, layer, "ln2.bias"));
    g.w1 = base + p.block_offset(bn(prefix, layer, "mlp.w1"));
    g.b1 = base + p.block_offset(bn(prefix, layer, "mlp.b1"));
    g.w2 = base + p.block_offset(bn(prefix, layer, "mlp.w2"));
    g.b2 = base + p.block_offset(bn(prefix, layer, "mlp.b2"));
    return g;
}

void ln_forward(const double* x, int n, int d, std::span<const double> gain,
                std::span<const double> bias, double* out, LnTape& tape) {
    tape.xhat.resize(static_cast<std::size_t>(n) * d);
    tape.inv_std.resize(n);
    for (int i = 0; i < n; ++i) {
        const double* xi = x + static_cast<std::size_t>(i) * d;
        double mean = kernels::sum(xi, d) / d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            double c = xi[j] - mean;
            var += c * c;
        }
        var /= d;
        double inv = 1.0 / std::sqrt(var + kLnEps);
        tape.inv_std[i] = inv;
        double* xh = tape.xhat.data() + static_cast<std::size_t>(i) * d;
        double* oi = out + static_cast<std::size_t>(i) * d;
        for (int j = 0; j < d; ++j) {
            xh[j] = (xi[j] - mean) * inv;
            oi[j] = gain[j] * xh[j] + bias[j];
        }
    }
}

// dx accumulates; dgain/dbias may be null when parameters are frozen.
void ln_backward(const double* dout, int n, int d, std::span<const double> gain,
                 const LnTape& tape, double* dx, double* dgain, double* dbias) {
    std::vector<double> dxh(d);
    for (int i = 0; i < n; ++i) {
        const double* doi = dout + static_cast<std::size_t>(i) * d;
        const double* xh = tape.xhat.data() + static_cast<std::size_t>(i) * d;
        double inv = tape.inv_std[i];
        double m1 = 0.0, m2 = 0.0;
        for (int j = 0; j < d; ++j) {
            if (dgain) dgain[j] += doi[j] * xh[j];
            if (dbias) dbias[j] += doi[j];
            dxh[j] = doi[j] * gain[j];
            m1 += dxh[j];
            m2 += dxh[j] * xh[j];
        }
        m1 /= d;
        m2 /= d;
        double* dxi = dx + static_cast<std::size_t>(i) * d;
        for (int j = 0; j < d; ++j) dxi[j] += inv * (dxh[j] - m1 - xh[j] * m2);
    }
}

// Attention over explicit query rows and key/value rows. key j is visible to
// query i when key_mask[j] is set and, in causal mode, j <= i + causal_shift.
// For self-attention causal_shift is 0; pooling queries see every unmasked key.
struct AttnWeights {
    std::span<const double> wq, bq, wk, bk, wv, bv, wo, bo;
};

struct AttnGrads {
    double *wq = nullptr, *bq = nullptr, *wk = nullptr, *bk = nullptr;
    double *wv = nullptr, *bv = nullptr, *wo = nullptr, *bo = nullptr;
};

void attn_forward(const double* xq, int n_q, const double* xkv, int n_k, int d, int heads,
                  const AttnWeights& w, bool causal, const std::vector<char>& key_mask,
                  double* out, AttnTape& tape) {
    const int dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    tape.q.resize(static_cast<std::size_t>(n_q) * d);
    tape.k.resize(static_cast<std::size_t>(n_k) * d);
    tape.v.resize(static_cast<std::size_t>(n_k) * d);
    tape.alpha.assign(static_cast<std::size_t>(heads) * n_q * n_k, 0.0);
    tape.ctx.assign(static_cast<std::size_t>(n_q) * d, 0.0);

    for (int i = 0; i < n_q; ++i) {
        double* qi = tape.q.data() + static_cast<std::size_t>(i) * d;
        kernels::matvec(w.wq.data(), d, d, xq + static_cast<std::size_t>(i) * d, qi);
        kernels::axpy(1.0, w.bq.data(), qi, d);
    }
    for (int j = 0; j < n_k; ++j) {
        double* kj = tape.k.data() + static_cast<std::size_t>(j) * d;
        double* vj = tape.v.data() + static_cast<std::size_t>(j) * d;
        kernels::matvec(w.wk.data(), d, d, xkv + static_cast<std::size_t>(j) * d, kj);
        kernels::axpy(1.0, w.bk.data(), kj, d);
        kernels::matvec(w.wv.data(), d, d, xkv + static_cast<std::size_t>(j) * d, vj);
        kernels::axpy(1.0, w.bv.data(), vj, d);
    }

    std::vector<double> scores(n_k);
    std::vector<int> allowed(n_k);
    for (int h = 0; h < heads; ++h) {
        for (int i = 0; i < n_q; ++i) {
            int n_allowed = 0;
            for (int j = 0; j < n_k; ++j) {
                if (!key_mask[j]) continue;
                if (causal && j > i) continue;
                allowed[n_allowed] = j;
                const double* qh = tape.q.data() + static_cast<std::size_t>(i) * d + h * dh;
                const double* kh = tape.k.data() + static_cast<std::size_t>(j) * d + h * dh;
                scores[n_allowed] = kernels::dot(qh, kh, dh) * scale;
                ++n_allowed;
            }
            kernels::softmax_inplace(scores.data(), n_allowed);
            double* alpha = tape.alpha.data() +
                            (static_cast<std::size_t>(h) * n_q + i) * n_k;
            double* ctxh = tape.ctx.data() + static_cast<std::size_t>(i) * d + h * dh;
            for (int a = 0; a < n_allowed; ++a) {
                int j = allowed[a];
                alpha[j] = scores[a];
                const double* vh = tape.v.data() + static_cast<std::size_t>(j) * d + h * dh;
                kernels::axpy(scores[a], vh, ctxh, dh);
            }
        }
    }

    for (int i = 0; i < n_q; ++i) {
        double* oi = out + static_cast<std::size_t>(i) * d;
        kernels::matvec(w.wo.data(), d, d,
                        tape.ctx.data() + static_cast<std::size_t>(i) * d, oi);
        kernels::axpy(1.0, w.bo.data(), oi, d);
    }
}

void attn_backward(const double* xq, int n_q, const double* xkv, int n_k, int d, int heads,
                   const AttnWeights& w, bool causal, const std::vector<char>& key_mask,
                   const AttnTape& tape, const double* dout, double* dxq, double* dxkv,
                   const AttnGrads* gw) {
    const int dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    std::vector<double> dctx(static_cast<std::size_t>(n_q) * d, 0.0);
    std::vector<double> tmp(d);
    for (int i = 0; i < n_q; ++i) {
        const double* doi = dout + static_cast<std::size_t>(i) * d;
        if (gw) {
            kernels::rank1_update(gw->wo, d, d, 1.0, doi,
                                  tape.ctx.data() + static_cast<std::size_t>(i) * d);
            kernels::axpy(1.0, doi, gw->bo, d);
        }
        kernels::matvec_t(w.wo.data(), d, d, doi, tmp.data());
        kernels::axpy(1.0, tmp.data(), dctx.data() + static_cast<std::size_t>(i) * d, d);
    }

    std::vector<double> dq(static_cast<std::size_t>(n_q) * d, 0.0);
    std::vector<double> dk(static_cast<std::size_t>(n_k) * d, 0.0);
    std::vector<double> dv(static_cast<std::size_t>(n_k) * d, 0.0);

    for (int h = 0; h < heads; ++h) {
        for (int i = 0; i < n_q; ++i) {
            const double* alpha = tape.alpha.data() +
                                  (static_cast<std::size_t>(h) * n_q + i) * n_k;
            const double* dctxh = dctx.data() + static_cast<std::size_t>(i) * d + h * dh;
            const double* qh = tape.q.data() + static_cast<std::size_t>(i) * d + h * dh;
            // softmax backward over the visible keys
            double dot_sum = 0.0;
            for (int j = 0; j < n_k; ++j) {
                if (!key_mask[j] || (causal && j > i)) continue;
                const double* vh = tape.v.data() + static_cast<std::size_t>(j) * d + h * dh;
                dot_sum += alpha[j] * kernels::dot(dctxh, vh, dh);
            }
            double* dqh = dq.data() + static_cast<std::size_t>(i) * d + h * dh;
            for (int j = 0; j < n_k; ++j) {
                if (!key_mask[j] || (causal && j > i)) continue;
                const double* vh = tape.v.data() + static_cast<std::size_t>(j) * d + h * dh;
                const double* kh = tape.k.data() + static_cast<std::size_t>(j) * d + h * dh;
                double da = kernels::dot(dctxh, vh, dh);
                double ds = alpha[j] * (da - dot_sum);
                kernels::axpy(ds * scale, kh, dqh, dh);
                kernels::axpy(ds * scale, qh,
                              dk.data() + static_cast<std::size_t>(j) * d + h * dh, dh);
                kernels::axpy(alpha[j], dctxh,
                              dv.data() + static_cast<std::size_t>(j) * d + h * dh, dh);
            }
        }
    }

    for (int i = 0; i < n_q; ++i) {
        const double* dqi = dq.data() + static_cast<std::size_t>(i) * d;
        if (gw) {
            kernels::rank1_update(gw->wq, d, d, 1.0, dqi, xq + static_cast<std::size_t>(i) * d);
            kernels::axpy(1.0, dqi, gw->bq, d);
        }
        if (dxq) {
            kernels::matvec_t(w.wq.data(), d, d, dqi, tmp.data());
            kernels::axpy(1.0, tmp.data(), dxq + static_cast<std::size_t>(i) * d, d);
        }
    }
    for (int j = 0; j < n_k; ++j) {
        const double* dkj = dk.data() + static_cast<std::size_t>(j) * d;
        const double* dvj = dv.data() + static_cast<std::size_t>(j) * d;
        if (gw) {
            kernels::rank1_update(gw->wk, d, d, 1.0, dkj, xkv + static_cast<std::size_t>(j) * d);
            kernels::axpy(1.0, dkj, gw->bk, d);
            kernels::rank1_update(gw->wv, d, d, 1.0, dvj, xkv + static_cast<std::size_t>(j) * d);
            kernels::axpy(1.0, dvj, gw->bv, d);
        }
        if (dxkv) {
            kernels::matvec_t(w.wk.data(), d, d, dkj, tmp.data());
            kernels::axpy(1.0, tmp.data(), dxkv + static_cast<std::size_t>(j) * d, d);
            kernels::matvec_t(w.wv.data(), d, d, dvj, tmp.data());
            kernels::axpy(1.0, tmp.data(), dxkv + static_cast<std::size_t>(j) * d, d);
        }
    }
}

void stack_forward(const ParamSet& p, std::string_view prefix, int layers,
                   const ModelConfig& cfg, std::vector<double>& x, int n, bool causal,
                   const std::vector<char>& key_mask, StackTape& tape) {
    const int d = cfg.d_model;
    const int f = cfg.ffn_dim();
    tape.n = n;
    tape.blocks.resize(layers);

    std::vector<double> buf(static_cast<std::size_t>(n) * std::max(d, f));
    for (int l = 0; l < layers; ++l) {
        BlockTape& bt = tape.blocks[l];
        BlockView bv = bind_block(p, prefix, l);

        bt.ln1_out.resize(static_cast<std::size_t>(n) * d);
        ln_forward(x.data(), n, d, bv.ln1_gain, bv.ln1_bias, bt.ln1_out.data(), bt.ln1);

        AttnWeights aw{bv.wq, bv.bq, bv.wk, bv.bk, bv.wv, bv.bv, bv.wo, bv.bo};
        attn_forward(bt.ln1_out.data(), n, bt.ln1_out.data(), n, d, cfg.n_heads, aw, causal,
                     key_mask, buf.data(), bt.attn);
        kernels::axpy(1.0, buf.data(), x.data(), static_cast<std::size_t>(n) * d);

        bt.ln2_out.resize(static_cast<std::size_t>(n) * d);
        ln_forward(x.data(), n, d, bv.ln2_gain, bv.ln2_bias, bt.ln2_out.data(), bt.ln2);

        bt.u.resize(static_cast<std::size_t>(n) * f);
        bt.a.resize(static_cast<std::size_t>(n) * f);
        for (int i = 0; i < n; ++i) {
            double* ui = bt.u.data() + static_cast<std::size_t>(i) * f;
            kernels::matvec(bv.w1.data(), f, d,
                            bt.ln2_out.data() + static_cast<std::size_t>(i) * d, ui);
            kernels::axpy(1.0, bv.b1.data(), ui, f);
            double* ai = bt.a.data() + static_cast<std::size_t>(i) * f;
            for (int j = 0; j < f; ++j) ai[j] = gelu(ui[j]);
            double* oi = buf.data() + static_cast<std::size_t>(i) * d;
            kernels::matvec(bv.w2.data(), d, f, ai, oi);
            kernels::axpy(1.0, bv.b2.data(), oi, d);
        }
        kernels::axpy(1.0, buf.data(), x.data(), static_cast<std::size_t>(n) * d);
    }

    tape.x_last = x;
    tape.x_out.resize(static_cast<std::size_t>(n) * d);
    ln_forward(x.data(), n, d, p.block(std::string(prefix) + "lnf.gain"),
               p.block(std::string(prefix) + "lnf.bias"), tape.x_out.data(), tape.lnf);
}

// dx_out is the gradient at the stack output (after the final layer norm).
// Returns the gradient at the embedding inputs in dx_out (reused buffer).
void stack_backward(const ParamSet& p, std::string_view prefix, int layers,
                    const ModelConfig& cfg, bool causal, const std::vector<char>& key_mask,
                    const StackTape& tape, std::vector<double>& dx_out,
                    std::vector<double>* grad) {
    const int d = cfg.d_model;
    const int f = cfg.ffn_dim();
    const int n = tape.n;

    std::vector<double> dx(static_cast<std::size_t>(n) * d, 0.0);
    {
        double* dg = nullptr;
        double* db = nullptr;
        if (grad) {
            dg = grad->data() + p.block_offset(std::string(prefix) + "lnf.gain");
            db = grad->data() + p.block_offset(std::string(prefix) + "lnf.bias");
        }
        ln_backward(dx_out.data(), n, d, p.block(std::string(prefix) + "lnf.gain"), tape.lnf,
                    dx.data(), dg, db);
    }

    std::vector<double> dln(static_cast<std::size_t>(n) * d);
    std::vector<double> da(f), du(f), tmpd(d);
    for (int l = layers - 1; l >= 0; --l) {
        const BlockTape& bt = tape.blocks[l];
        BlockView bv = bind_block(p, prefix, l);
        BlockGrad bg = bind_block_grad(p, prefix, l, grad);

        // MLP: x_out = x_mid + W2 gelu(W1 ln2(x_mid) + b1) + b2
        std::fill(dln.begin(), dln.end(), 0.0);
        for (int i = 0; i < n; ++i) {
            const double* doi = dx.data() + static_cast<std::size_t>(i) * d;
            const double* ai = bt.a.data() + static_cast<std::size_t>(i) * f;
            const double* ui = bt.u.data() + static_cast<std::size_t>(i) * f;
            if (grad) {
                kernels::rank1_update(bg.w2, d, f, 1.0, doi, ai);
                kernels::axpy(1.0, doi, bg.b2, d);
            }
            kernels::matvec_t(bv.w2.data(), d, f, doi, da.data());
            for (int j = 0; j < f; ++j) du[j] = da[j] * gelu_deriv(ui[j]);
            if (grad) {
                kernels::rank1_update(bg.w1, f, d, 1.0, du.data(),
                                      bt.ln2_out.data() + static_cast<std::size_t>(i) * d);
                kernels::axpy(1.0, du.data(), bg.b1, f);
            }
            kernels::matvec_t(bv.w1.data(), f, d, du.data(), tmpd.data());
            kernels::axpy(1.0, tmpd.data(), dln.data() + static_cast<std::size_t>(i) * d, d);
        }
        // dx currently holds d x_out; residual passes it through to x_mid,
        // plus the layer-norm path from the MLP branch.
        ln_backward(dln.data(), n, d, bv.ln2_gain, bt.ln2, dx.data(), bg.ln2_gain, bg.ln2_bias);

        // Attention: x_mid = x_in + Wo ctx + bo
        std::fill(dln.begin(), dln.end(), 0.0);
        AttnWeights aw{bv.wq, bv.bq, bv.wk, bv.bk, bv.wv, bv.bv, bv.wo, bv.bo};
        AttnGrads ag{bg.wq, bg.bq, bg.wk, bg.bk, bg.wv, bg.bv, bg.wo, bg.bo};
        attn_backward(bt.ln1_out.data(), n, bt.ln1_out.data(), n, d, cfg.n_heads, aw, causal,
                      key_mask, bt.attn, dx.data(), dln.data(), dln.data(),
                      grad ? &ag : nullptr);
        ln_backward(dln.data(), n, d, bv.ln1_gain, bt.ln1, dx.data(), bg.ln1_gain, bg.ln1_bias);
    }
    dx_out = std::move(dx);
}

void add_params_common(ParamSet& p, const ModelConfig& cfg, int layers, int n_positions) {
    p.add("tok_emb", {static_cast<std::size_t>(cfg.vocab_size),
                      static_cast<std::size_t>(cfg.d_model)});
    p.add("pos_emb",
          {static_cast<std::size_t>(n_positions), static_cast<std::size_t>(cfg.d_model)});
    const std::size_t d = cfg.d_model;
    const std::size_t f = cfg.ffn_dim();
    for (int l = 0; l < layers; ++l) {
        p.add(bn("", l, "ln1.gain"), {d});
        p.add(bn("", l, "ln1.bias"), {d});
        p.add(bn("", l, "attn.wq"), {d, d});
        p.add(bn("", l, "attn.bq"), {d});
        p.add(bn("", l, "attn.wk"), {d, d});
        p.add(bn("", l, "attn.bk"), {d});
        p.add(bn("", l, "attn.wv"), {d, d});
        p.add(bn("", l, "attn.bv"), {d});
        p.add(bn("", l, "attn.wo"), {d, d});
        p.add(bn("", l, "attn.bo"), {d});
        p.add(bn("", l, "ln2.gain"), {d});
        p.add(bn("", l, "ln2.bias"), {d});
        p.add(bn("", l, "mlp.w1"), {f, d});
        p.add(bn("", l, "mlp.b1"), {f});
        p.add(bn("", l, "mlp.w2"), {d, f});
        p.add(bn("", l, "mlp.b2"), {d});
    }
    p.add("lnf.gain", {d});
    p.add("lnf.bias", {d});
}

void seed_fill(ParamSet& p, double init_std, std::uint64_t seed, std::string_view tag) {
    RandomStream rs(derive_seed(seed, tag));
    for (const ParamBlock& b : p.blocks()) {
        std::string_view comp = b.name;
        if (auto pos = comp.rfind('.'); pos != std::string_view::npos) comp = comp.substr(pos + 1);
        double* dst = p.values().data() + b.offset;
        if (comp == "gain") {
            std::fill(dst, dst + b.size(), 1.0);
        } else if (!comp.empty() && comp[0] == 'b') {
            std::fill(dst, dst + b.size(), 0.0);
        } else {
            for (std::size_t i = 0; i < b.size(); ++i) dst[i] = rs.normal() * init_std;
        }
    }
    snap_parameters(p);
}

void check_pivot_shape(const PivotRep& pivot, const ModelConfig& cfg, const char* who) {
    if (static_cast<int>(pivot.rows) != cfg.pivot_rows ||
        static_cast<int>(pivot.cols) != cfg.pivot_cols ||
        pivot.data.size() != pivot.rows * pivot.cols)
        throw InvalidInput(std::string(who) + ": pivot shape mismatch");
}

// The model only cares about the special ids, which occupy the top three
// slots; the concept/style split is the world's concern.
Vocab vocab_for(const ModelConfig& cfg) {
    Vocab v;
    v.n_concepts = cfg.vocab_size - 3;
    v.n_styles = 0;
    return v;
}

} // namespace

void ModelConfig::validate() const {
    if (vocab_size < 4) throw InvalidInput("model: vocab_size must be at least 4");
    if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0)
        throw InvalidInput("model: d_model must be a positive multiple of n_heads");
    if (enc_layers < 1 || dec_layers < 1 || ffn_mult < 1 || max_len < 1)
        throw InvalidInput("model: layer sizes must be positive");
    if (pivot_rows < 1 || pivot_cols < 1) throw InvalidInput("model: pivot shape must be positive");
    if (!(init_std > 0)) throw InvalidInput("model: init_std must be positive");
}

std::size_t ParamSet::add(std::string name, std::vector<std::size_t> shape) {
    if (finalized_) throw InvalidInput("ParamSet: add after finalize");
    if (index_.count(name)) throw InvalidInput("ParamSet: duplicate block " + name);
    ParamBlock b;
    b.name = std::move(name);
    b.offset = total_;
    b.shape = std::move(shape);
    total_ += b.size();
    index_.emplace(b.name, blocks_.size());
    blocks_.push_back(std::move(b));
    return blocks_.size() - 1;
}

void ParamSet::finalize() {
    values_.assign(total_, 0.0);
    finalized_ = true;
}

std::span<double> ParamSet::block(std::string_view name) {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw InvalidInput("ParamSet: no block named " + std::string(name));
    const ParamBlock& b = blocks_[it->second];
    return {values_.data() + b.offset, b.size()};
}

std::span<const double> ParamSet::block(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw InvalidInput("ParamSet: no block named " + std::string(name));
    const ParamBlock& b = blocks_[it->second];
    return {values_.data() + b.offset, b.size()};
}

std::size_t ParamSet::block_offset(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw InvalidInput("ParamSet: no block named " + std::string(name));
    return blocks_[it->second].offset;
}

void snap_parameters(ParamSet& params) {
    for (double& v : params.values()) v = static_cast<double>(static_cast<float>(v));
}

std::uint64_t params_hash(const ParamSet& params) {
    return fnv1a(params.values().data(), params.values().size() * sizeof(double));
}

EncoderParams init_encoder(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    EncoderParams enc;
    enc.cfg = cfg;
    add_params_common(enc.p, cfg, cfg.enc_layers, cfg.max_len + 1); // + BOS anchor
    const std::size_t d = cfg.d_model;
    enc.p.add("pool.queries", {static_cast<std::size_t>(cfg.pivot_rows), d});
    enc.p.add("pool.wq", {d, d});
    enc.p.add("pool.bq", {d});
    enc.p.add("pool.wk", {d, d});
    enc.p.add("pool.bk", {d});
    enc.p.add("pool.wv", {d, d});
    enc.p.add("pool.bv", {d});
    enc.p.add("pool.wo", {d, d});
    enc.p.add("pool.bo", {d});
    enc.p.add("head.w", {static_cast<std::size_t>(cfg.pivot_cols), d});
    enc.p.add("head.b",
              {static_cast<std::size_t>(cfg.pivot_rows), static_cast<std::size_t>(cfg.pivot_cols)});
    enc.p.finalize();
    seed_fill(enc.p, cfg.init_std, seed, "encoder.init");
    return enc;
}

DecoderParams init_decoder(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    DecoderParams dec;
    dec.cfg = cfg;
    const std::size_t d = cfg.d_model;
    dec.p.add("proj.w", {d, static_cast<std::size_t>(cfg.pivot_cols)});
    dec.p.add("proj.b", {d});
    add_params_common(dec.p, cfg, cfg.dec_layers, cfg.pivot_rows + 1 + cfg.max_len);
    dec.p.add("lm.w", {static_cast<std::size_t>(cfg.vocab_size), d});
    dec.p.add("lm.b", {static_cast<std::size_t>(cfg.vocab_size)});
    dec.p.finalize();
    seed_fill(dec.p, cfg.init_std, seed, "decoder.init");
    return dec;
}

PivotRep encoder_forward_tape(const EncoderParams& params, const Prompt& user_tokens,
                              EncoderTape& tape) {
    const ModelConfig& cfg = params.cfg;
    Vocab vocab = vocab_for(cfg);
    validate_prompt(user_tokens, vocab, cfg.max_len, /*pad_ok=*/true);

    // A BOS anchor precedes the tokens. Its attention share varies with the
    // prompt length, which gives the pooled representation a usable token
    // count signal that a plain softmax mean lacks.
    const int n = static_cast<int>(user_tokens.size()) + 1;
    const int d = cfg.d_model;
    tape.tokens.clear();
    tape.tokens.push_back(vocab.bos());
    tape.tokens.insert(tape.tokens.end(), user_tokens.begin(), user_tokens.end());
    tape.key_mask.assign(n, 1);
    for (int i = 0; i < n; ++i)
        if (tape.tokens[i] == vocab.pad()) tape.key_mask[i] = 0;

    auto tok_emb = params.p.block("tok_emb");
    auto pos_emb = params.p.block("pos_emb");
    std::vector<double> x(static_cast<std::size_t>(n) * d);
    for (int i = 0; i < n; ++i) {
        const double* te = tok_emb.data() + static_cast<std::size_t>(tape.tokens[i]) * d;
        const double* pe = pos_emb.data() + static_cast<std::size_t>(i) * d;
        double* xi = x.data() + static_cast<std::size_t>(i) * d;
        for (int j = 0; j < d; ++j) xi[j] = te[j] + pe[j];
    }

    stack_forward(params.p, "", cfg.enc_layers, cfg, x, n, /*causal=*/false, tape.key_mask,
                  tape.stack);

    // Cross-attention pooling: K learned queries over the final token states.
    const int kk = cfg.pivot_rows;
    AttnWeights aw{params.p.block("pool.wq"), params.p.block("pool.bq"),
                   params.p.block("pool.wk"), params.p.block("pool.bk"),
                   params.p.block("pool.wv"), params.p.block("pool.bv"),
                   params.p.block("pool.wo"), params.p.block("pool.bo")};
    tape.pool_out.assign(static_cast<std::size_t>(kk) * d, 0.0);
    attn_forward(params.p.block("pool.queries").data(), kk, tape.stack.x_out.data(), n, d,
                 cfg.n_heads, aw, /*causal=*/false, tape.key_mask, tape.pool_out.data(),
                 tape.pool);

    PivotRep rep;
    rep.rows = kk;
    rep.cols = cfg.pivot_cols;
    rep.data.resize(rep.rows * rep.cols);
    auto head_w = params.p.block("head.w");
    auto head_b = params.p.block("head.b"); // one bias row per pivot slot
    for (int k = 0; k < kk; ++k) {
        double* out = rep.data.data() + static_cast<std::size_t>(k) * cfg.pivot_cols;
        kernels::matvec(head_w.data(), cfg.pivot_cols, d,
                        tape.pool_out.data() + static_cast<std::size_t>(k) * d, out);
        kernels::axpy(1.0, head_b.data() + static_cast<std::size_t>(k) * cfg.pivot_cols, out,
                      cfg.pivot_cols);
    }
    return rep;
}

PivotRep encoder_forward(const EncoderParams& params, const Prompt& user_tokens) {
    EncoderTape tape;
    return encoder_forward_tape(params, user_tokens, tape);
}

void encoder_backward(const EncoderParams& params, const EncoderTape& tape,
                      const PivotRep& dpivot, std::vector<double>& grad) {
    const ModelConfig& cfg = params.cfg;
    check_pivot_shape(dpivot, cfg, "encoder_backward");
    if (grad.size() != params.p.size()) throw InvalidInput("encoder_backward: grad size mismatch");

    const int n = static_cast<int>(tape.tokens.size());
    const int d = cfg.d_model;
    const int kk = cfg.pivot_rows;

    // Output head.
    auto head_w = params.p.block("head.w");
    double* d_head_w = grad.data() + params.p.block_offset("head.w");
    double* d_head_b = grad.data() + params.p.block_offset("head.b");
    std::vector<double> dpool(static_cast<std::size_t>(kk) * d, 0.0);
    for (int k = 0; k < kk; ++k) {
        const double* dpk = dpivot.data.data() + static_cast<std::size_t>(k) * cfg.pivot_cols;
        kernels::rank1_update(d_head_w, cfg.pivot_cols, d, 1.0, dpk,
                              tape.pool_out.data() + static_cast<std::size_t>(k) * d);
        kernels::axpy(1.0, dpk, d_head_b + static_cast<std::size_t>(k) * cfg.pivot_cols,
                      cfg.pivot_cols);
        kernels::matvec_t(head_w.data(), cfg.pivot_cols, d, dpk,
                          dpool.data() + static_cast<std::size_t>(k) * d);
    }

    // Pooling cross-attention.
    AttnWeights aw{params.p.block("pool.wq"), params.p.block("pool.bq"),
                   params.p.block("pool.wk"), params.p.block("pool.bk"),
                   params.p.block("pool.wv"), params.p.block("pool.bv"),
                   params.p.block("pool.wo"), params.p.block("pool.bo")};
    AttnGrads ag{grad.data() + params.p.block_offset("pool.wq"),
                 grad.data() + params.p.block_offset("pool.bq"),
                 grad.data() + params.p.block_offset("pool.wk"),
                 grad.data() + params.p.block_offset("pool.bk"),
                 grad.data() + params.p.block_offset("pool.wv"),
                 grad.data() + params.p.block_offset("pool.bv"),
                 grad.data() + params.p.block_offset("pool.wo"),
                 grad.data() + params.p.block_offset("pool.bo")};

    std::vector<double> dxf(static_cast<std::size_t>(n) * d, 0.0);
    double* d_queries = grad.data() + params.p.block_offset("pool.queries");
    attn_backward(params.p.block("pool.queries").data(), kk, tape.stack.x_out.data(), n, d,
                  cfg.n_heads, aw, /*causal=*/false, tape.key_mask, tape.pool, dpool.data(),
                  d_queries, dxf.data(), &ag);

    // Stack and embeddings.
    stack_backward(params.p, "", cfg.enc_layers, cfg, /*causal=*/false, tape.key_mask,
                   tape.stack, dxf, &grad);
    double* d_tok = grad.data() + params.p.block_offset("tok_emb");
    double* d_pos = grad.data() + params.p.block_offset("pos_emb");
    for (int i = 0; i < n; ++i) {
        const double* dxi = dxf.data() + static_cast<std::size_t>(i) * d;
        kernels::axpy(1.0, dxi, d_tok + static_cast<std::size_t>(tape.tokens[i]) * d, d);
        kernels::axpy(1.0, dxi, d_pos + static_cast<std::size_t>(i) * d, d);
    }
}

std::vector<double> decoder_forward_tape(const DecoderParams& params, const PivotRep& pivot,
                                         const Prompt& tokens, DecoderTape& tape) {
    const ModelConfig& cfg = params.cfg;
    check_pivot_shape(pivot, cfg, "decoder");
    Vocab vocab = vocab_for(cfg);
    if (static_cast<int>(tokens.size()) > cfg.max_len)
        throw InvalidInput("decoder: token sequence exceeds max_len");
    for (std::int32_t t : tokens) {
        if (t < 0 || t >= cfg.vocab_size) throw InvalidInput("decoder: unknown token id");
        if (t == vocab.pad()) throw InvalidInput("decoder: PAD not allowed in token sequence");
    }

    const int kk = cfg.pivot_rows;
    const int d = cfg.d_model;
    const int n = kk + 1 + static_cast<int>(tokens.size());
    tape.pivot = pivot;
    tape.seq_tokens.clear();
    tape.seq_tokens.push_back(vocab.bos());
    tape.seq_tokens.insert(tape.seq_tokens.end(), tokens.begin(), tokens.end());
    tape.n = n;

    auto proj_w = params.p.block("proj.w");
    auto proj_b = params.p.block("proj.b");
    auto tok_emb = params.p.block("tok_emb");
    auto pos_emb = params.p.block("pos_emb");

    std::vector<double> x(static_cast<std::size_t>(n) * d);
    for (int k = 0; k < kk; ++k) {
        double* xi = x.data() + static_cast<std::size_t>(k) * d;
        kernels::matvec(proj_w.data(), d, cfg.pivot_cols,
                        pivot.data.data() + static_cast<std::size_t>(k) * cfg.pivot_cols, xi);
        kernels::axpy(1.0, proj_b.data(), xi, d);
        kernels::axpy(1.0, pos_emb.data() + static_cast<std::size_t>(k) * d, xi, d);
    }
    for (int i = kk; i < n; ++i) {
        std::int32_t tok = tape.seq_tokens[i - kk];
        const double* te = tok_emb.data() + static_cast<std::size_t>(tok) * d;
        const double* pe = pos_emb.data() + static_cast<std::size_t>(i) * d;
        double* xi = x.data() + static_cast<std::size_t>(i) * d;
        for (int j = 0; j < d; ++j) xi[j] = te[j] + pe[j];
    }

    std::vector<char> key_mask(n, 1);
    stack_forward(params.p, "", cfg.dec_layers, cfg, x, n, /*causal=*/true, key_mask, tape.stack);

    auto lm_w = params.p.block("lm.w");
    auto lm_b = params.p.block("lm.b");
    std::vector<double> logits(static_cast<std::size_t>(n) * cfg.vocab_size);
    for (int i = 0; i < n; ++i) {
        double* li = logits.data() + static_cast<std::size_t>(i) * cfg.vocab_size;
        kernels::matvec(lm_w.data(), cfg.vocab_size, d,
                        tape.stack.x_out.data() + static_cast<std::size_t>(i) * d, li);
        kernels::axpy(1.0, lm_b.data(), li, cfg.vocab_size);
    }
    return logits;
}

std::vector<double> decoder_logits(const DecoderParams& params, const PivotRep& pivot,
                                   const Prompt& tokens_so_far) {
    DecoderTape tape;
    std::vector<double> logits = decoder_forward_tape(params, pivot, tokens_so_far, tape);
    const int v = params.cfg.vocab_size;
    std::vector<double> last(logits.end() - v, logits.end());
    return last;
}

void decoder_backward(const DecoderParams& params, const DecoderTape& tape,
                      const std::vector<double>& dlogits, std::vector<double>* param_grad,
                      PivotRep* dpivot) {
    const ModelConfig& cfg = params.cfg;
    const int n = tape.n;
    const int d = cfg.d_model;
    const int v = cfg.vocab_size;
    const int kk = cfg.pivot_rows;
    if (dlogits.size() != static_cast<std::size_t>(n) * v)
        throw InvalidInput("decoder_backward: dlogits size mismatch");
    if (param_grad && param_grad->size() != params.p.size())
        throw InvalidInput("decoder_backward: grad size mismatch");

    auto lm_w = params.p.block("lm.w");
    std::vector<double> dxf(static_cast<std::size_t>(n) * d, 0.0);
    for (int i = 0; i < n; ++i) {
        const double* dli = dlogits.data() + static_cast<std::size_t>(i) * v;
        if (param_grad) {
            kernels::rank1_update(param_grad->data() + params.p.block_offset("lm.w"), v, d, 1.0,
                                  dli, tape.stack.x_out.data() + static_cast<std::size_t>(i) * d);
            kernels::axpy(1.0, dli, param_grad->data() + params.p.block_offset("lm.b"), v);
        }
        kernels::matvec_t(lm_w.data(), v, d, dli, dxf.data() + static_cast<std::size_t>(i) * d);
    }

    std::vector<char> key_mask(n, 1);
    stack_backward(params.p, "", cfg.dec_layers, cfg, /*causal=*/true, key_mask, tape.stack, dxf,
                   param_grad);

    auto proj_w = params.p.block("proj.w");
    if (dpivot) {
        dpivot->rows = kk;
        dpivot->cols = cfg.pivot_cols;
        dpivot->data.assign(static_cast<std::size_t>(kk) * cfg.pivot_cols, 0.0);
    }
    for (int k = 0; k < kk; ++k) {
        const double* dxk = dxf.data() + static_cast<std::size_t>(k) * d;
        if (param_grad) {
            kernels::rank1_update(param_grad->data() + params.p.block_offset("proj.w"), d,
                                  cfg.pivot_cols, 1.0, dxk,
                                  tape.pivot.data.data() +
                                      static_cast<std::size_t>(k) * cfg.pivot_cols);
            kernels::axpy(1.0, dxk, param_grad->data() + params.p.block_offset("proj.b"), d);
        }
        if (dpivot)
            kernels::matvec_t(proj_w.data(), d, cfg.pivot_cols, dxk,
                              dpivot->data.data() + static_cast<std::size_t>(k) * cfg.pivot_cols);
    }
    if (param_grad) {
        double* d_tok = param_grad->data() + params.p.block_offset("tok_emb");
        double* d_pos = param_grad->data() + params.p.block_offset("pos_emb");
        for (int i = 0; i < n; ++i) {
            const double* dxi = dxf.data() + static_cast<std::size_t>(i) * d;
            kernels::axpy(1.0, dxi, d_pos + static_cast<std::size_t>(i) * d, d);
            if (i >= kk)
                kernels::axpy(1.0, dxi,
                              d_tok + static_cast<std::size_t>(tape.seq_tokens[i - kk]) * d, d);
        }
    }
}

namespace {

// One generation step: masked, temperature-scaled distribution over the
// vocabulary. BOS and PAD are never selectable.
struct StepChoice {
    std::int32_t token = 0;
    double logp = 0.0;
};

StepChoice choose_token(const std::vector<double>& logits, const Vocab& vocab,
                        const DecodeOptions& opts, RandomStream* rs) {
    const int v = static_cast<int>(logits.size());
    std::vector<int> allowed;
    allowed.reserve(v);
    for (int id = 0; id < v; ++id)
        if (id != vocab.bos() && id != vocab.pad()) allowed.push_back(id);

    if (opts.mode == DecodeMode::Greedy) {
        int best = allowed[0];
        for (int id : allowed)
            if (logits[id] > logits[best]) best = id;
        // logp reported under the temperature-1 masked distribution
        double mx = logits[best];
        double z = 0.0;
        for (int id : allowed) z += std::exp(logits[id] - mx);
        return {best, -std::log(z)};
    }

    const double tau = opts.temperature > 0 ? opts.temperature : 1.0;
    std::vector<double> p(allowed.size());
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < allowed.size(); ++a) mx = std::max(mx, logits[allowed[a]] / tau);
    double z = 0.0;
    for (std::size_t a = 0; a < allowed.size(); ++a) {
        p[a] = std::exp(logits[allowed[a]] / tau - mx);
        z += p[a];
    }
    double draw = rs->uniform() * z;
    std::size_t pick = 0;
    double acc = 0.0;
    for (std::size_t a = 0; a < allowed.size(); ++a) {
        acc += p[a];
        if (draw < acc) {
            pick = a;
            break;
        }
        pick = a; // falls through to the last entry on rounding
    }
    return {static_cast<std::int32_t>(allowed[pick]), std::log(p[pick] / z)};
}

} // namespace

SampledDecode decode_recorded(const DecoderParams& params, const PivotRep& pivot,
                              const Prompt& prefix, const DecodeOptions& opts) {
    const ModelConfig& cfg = params.cfg;
    Vocab vocab = vocab_for(cfg);
    if (static_cast<int>(prefix.size()) >= opts.max_len)
        throw InvalidInput("decode: prefix length must be below max_len");
    if (opts.max_len > cfg.max_len)
        throw InvalidInput("decode: max_len exceeds the model's positional capacity");
    if (!prefix.empty()) {
        Vocab v = vocab;
        validate_prompt(prefix, v, cfg.max_len);
    }

    RandomStream rs(opts.seed);
    SampledDecode out;
    out.output = prefix;
    while (static_cast<int>(out.output.size()) < opts.max_len) {
        std::vector<double> logits = decoder_logits(params, pivot, out.output);
        StepChoice c = choose_token(logits, vocab, opts,
                                    opts.mode == DecodeMode::Sample ? &rs : nullptr);
        out.actions.push_back(c.token);
        out.logp.push_back(c.logp);
        if (c.token == vocab.eos()) {
            out.ended_with_eos = true;
            break;
        }
        out.output.push_back(c.token);
    }
    return out;
}

Prompt decode(const DecoderParams& params, const PivotRep& pivot, const Prompt& prefix,
              const DecodeOptions& opts) {
    return decode_recorded(params, pivot, prefix, opts).output;
}

Prompt pipeline_refine(const RefinerBundle& bundle, const Prompt& user_prompt) {
    PivotRep pivot;
    if (bundle.pivot_source == PivotSource::Encoder) {
        pivot = encoder_forward(bundle.encoder, user_prompt);
    } else {
        pivot.rows = bundle.decoder.cfg.pivot_rows;
        pivot.cols = bundle.decoder.cfg.pivot_cols;
        pivot.data.assign(pivot.rows * pivot.cols, 0.0);
    }
    DecodeOptions opts;
    opts.mode = DecodeMode::Greedy;
    opts.max_len = bundle.decoder.cfg.max_len;
    return decode(bundle.decoder, pivot, user_prompt, opts);
}

} // namespace pivot
