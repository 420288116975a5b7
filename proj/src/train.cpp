#include "pivot/train.hpp"

#include "pivot/errors.hpp"
#include "pivot/kernels.hpp"
#include "pivot/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pivot {

namespace {

// Positions in the decoder sequence whose logits are scored: position K + n
// predicts target[n] for n < T, and position K + T predicts EOS.
void lm_targets(const ModelConfig& cfg, const Prompt& target, std::vector<int>& positions,
                std::vector<int>& wanted) {
    const int kk = cfg.pivot_rows;
    const int t = static_cast<int>(target.size());
    positions.clear();
    wanted.clear();
    for (int n = 0; n < t; ++n) {
        positions.push_back(kk + n);
        wanted.push_back(target[n]);
    }
    positions.push_back(kk + t);
    wanted.push_back(cfg.vocab_size - 2); // EOS
}

} // namespace

double mse_loss(const PivotRep& pred, const PivotRep& target) {
    if (pred.rows != target.rows || pred.cols != target.cols ||
        pred.data.size() != target.data.size())
        throw InvalidInput("mse_loss: shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        double d = pred.data[i] - target.data[i];
        acc += d * d;
    }
    return acc / static_cast<double>(pred.data.size());
}

double nll_from_logits(std::span<const double> logits, int target) {
    if (target < 0 || target >= static_cast<int>(logits.size()))
        throw InvalidInput("nll_from_logits: target out of range");
    double mx = kernels::max_value(logits.data(), logits.size());
    double z = 0.0;
    for (double v : logits) z += std::exp(v - mx);
    return std::log(z) - (logits[target] - mx);
}

double lm_loss(const DecoderParams& params, const PivotRep& pivot, const Prompt& target) {
    if (target.empty()) throw InvalidInput("lm_loss: target prompt is empty");
    DecoderTape tape;
    std::vector<double> logits = decoder_forward_tape(params, pivot, target, tape);
    const int v = params.cfg.vocab_size;
    std::vector<int> positions, wanted;
    lm_targets(params.cfg, target, positions, wanted);
    double acc = 0.0;
    for (std::size_t i = 0; i < positions.size(); ++i) {
        std::span<const double> row{logits.data() + static_cast<std::size_t>(positions[i]) * v,
                                    static_cast<std::size_t>(v)};
        acc += nll_from_logits(row, wanted[i]);
    }
    return acc / static_cast<double>(positions.size());
}

double encoder_batch_loss(const EncoderParams& params, std::span<const EncoderItem> batch,
                          std::vector<double>* grad) {
    if (batch.empty()) throw InvalidInput("encoder_batch_loss: empty batch");
    if (grad && grad->size() != params.p.size())
        throw InvalidInput("encoder_batch_loss: grad size mismatch");
    const double inv_batch = 1.0 / static_cast<double>(batch.size());
    double total = 0.0;
    EncoderTape tape;
    for (const EncoderItem& item : batch) {
        PivotRep pred = encoder_forward_tape(params, item.tokens, tape);
        total += mse_loss(pred, item.target);
        if (grad) {
            PivotRep dpred;
            dpred.rows = pred.rows;
            dpred.cols = pred.cols;
            dpred.data.resize(pred.data.size());
            const double scale = 2.0 * inv_batch / static_cast<double>(pred.data.size());
            for (std::size_t i = 0; i < pred.data.size(); ++i)
                dpred.data[i] = scale * (pred.data[i] - item.target.data[i]);
            encoder_backward(params, tape, dpred, *grad);
        }
    }
    return total * inv_batch;
}

double decoder_batch_loss(const DecoderParams& params, std::span<const DecoderItem> batch,
                          std::vector<double>* grad) {
    if (batch.empty()) throw InvalidInput("decoder_batch_loss: empty batch");
    if (grad && grad->size() != params.p.size())
        throw InvalidInput("decoder_batch_loss: grad size mismatch");
    const int v = params.cfg.vocab_size;
    const double inv_batch = 1.0 / static_cast<double>(batch.size());
    double total = 0.0;
    DecoderTape tape;
    std::vector<int> positions, wanted;
    std::vector<double> probs(v);
    for (const DecoderItem& item : batch) {
        std::vector<double> logits = decoder_forward_tape(params, item.pivot, item.target, tape);
        lm_targets(params.cfg, item.target, positions, wanted);
        const double inv_tok = 1.0 / static_cast<double>(positions.size());
        std::vector<double> dlogits(logits.size(), 0.0);
        for (std::size_t i = 0; i < positions.size(); ++i) {
            const double* row = logits.data() + static_cast<std::size_t>(positions[i]) * v;
            std::copy(row, row + v, probs.begin());
            kernels::softmax_inplace(probs.data(), v);
            total += inv_tok * (-std::log(probs[wanted[i]]));
            if (grad) {
                double* drow = dlogits.data() + static_cast<std::size_t>(positions[i]) * v;
                for (int c = 0; c < v; ++c) drow[c] = probs[c] * inv_tok * inv_batch;
                drow[wanted[i]] -= inv_tok * inv_batch;
            }
        }
        if (grad) decoder_backward(params, tape, dlogits, grad, nullptr);
    }
    return total * inv_batch;
}

namespace {

template <typename Item, typename LossFn>
std::vector<double> run_sgd(std::vector<double>& values, std::size_t n_params,
                            const std::vector<Item>& items, int epochs, double lr,
                            int batch_size, std::uint64_t seed, std::string_view tag,
                            LossFn&& batch_loss) {
    std::vector<double> curve;
    curve.push_back(batch_loss(items, nullptr)); // full-dataset loss at init
    std::vector<double> grad(n_params, 0.0);
    std::vector<std::size_t> order(items.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<Item> batch;
    for (int e = 0; e < epochs; ++e) {
        RandomStream rs(derive_seed(seed, tag, static_cast<std::uint64_t>(e)));
        rs.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += batch_size) {
            std::size_t end = std::min(order.size(), start + batch_size);
            batch.clear();
            for (std::size_t i = start; i < end; ++i) batch.push_back(items[order[i]]);
            std::fill(grad.begin(), grad.end(), 0.0);
            batch_loss(batch, &grad);
            kernels::axpy(-lr, grad.data(), values.data(), n_params);
        }
        curve.push_back(batch_loss(items, nullptr));
    }
    return curve;
}

} // namespace

EncoderTrainResult train_encoder_warmup(EncoderParams init,
                                        const std::vector<PreferencePair>& pairs,
                                        const World& world, const TrainConfig& cfg) {
    if (pairs.empty()) throw InvalidInput("train_encoder_warmup: empty dataset");
    if (cfg.epochs_enc < 0 || cfg.lr_enc <= 0 || cfg.batch_size < 1)
        throw InvalidInput("train_encoder_warmup: bad config");

    EncoderTrainResult out{std::move(init), {}};
    if (cfg.epochs_enc == 0) {
        std::vector<EncoderItem> items;
        items.reserve(pairs.size());
        for (const PreferencePair& p : pairs)
            items.push_back({p.user_prompt, world.encode_image(p.target_image)});
        out.loss_curve.push_back(encoder_batch_loss(out.params, items, nullptr));
        return out; // parameters untouched
    }

    std::vector<EncoderItem> items;
    items.reserve(pairs.size());
    for (const PreferencePair& p : pairs)
        items.push_back({p.user_prompt, world.encode_image(p.target_image)});

    const EncoderParams& pref = out.params;
    out.loss_curve = run_sgd(
        out.params.p.values(), out.params.p.size(), items, cfg.epochs_enc, cfg.lr_enc,
        cfg.batch_size, cfg.seed, "train.encoder.epoch",
        [&pref](const std::vector<EncoderItem>& batch, std::vector<double>* grad) {
            return encoder_batch_loss(pref, batch, grad);
        });
    snap_parameters(out.params.p);
    return out;
}

DecoderTrainResult train_decoder_warmup(DecoderParams init,
                                        const std::vector<DecoderExample>& corpus,
                                        const World& world, const TrainConfig& cfg,
                                        bool zero_pivot) {
    if (corpus.empty()) throw InvalidInput("train_decoder_warmup: empty corpus");
    if (cfg.epochs_dec < 0 || cfg.lr_dec <= 0 || cfg.batch_size < 1)
        throw InvalidInput("train_decoder_warmup: bad config");

    DecoderTrainResult out{std::move(init), {}};
    std::vector<DecoderItem> items;
    items.reserve(corpus.size());
    PivotRep zero;
    zero.rows = out.params.cfg.pivot_rows;
    zero.cols = out.params.cfg.pivot_cols;
    zero.data.assign(zero.rows * zero.cols, 0.0);
    for (const DecoderExample& e : corpus)
        items.push_back({zero_pivot ? zero : world.encode_image(e.image), e.system_prompt});

    if (cfg.epochs_dec == 0) {
        out.loss_curve.push_back(decoder_batch_loss(out.params, items, nullptr));
        return out;
    }

    const DecoderParams& pref = out.params;
    out.loss_curve = run_sgd(
        out.params.p.values(), out.params.p.size(), items, cfg.epochs_dec, cfg.lr_dec,
        cfg.batch_size, cfg.seed, "train.decoder.epoch",
        [&pref](const std::vector<DecoderItem>& batch, std::vector<double>* grad) {
            return decoder_batch_loss(pref, batch, grad);
        });
    snap_parameters(out.params.p);
    return out;
}

GradCheckResult grad_check(const std::function<double(const std::vector<double>&)>& loss_fn,
                           const std::vector<double>& params,
                           const std::vector<double>& analytic_grad, std::size_t max_coords,
                           std::uint64_t seed, double step) {
    if (params.size() != analytic_grad.size())
        throw InvalidInput("grad_check: gradient size mismatch");
    std::vector<std::size_t> coords(params.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (coords.size() > max_coords) {
        RandomStream rs(derive_seed(seed, "grad_check"));
        rs.shuffle(coords);
        coords.resize(max_coords);
    }

    GradCheckResult res;
    std::vector<double> probe = params;
    for (std::size_t c : coords) {
        double saved = probe[c];
        probe[c] = saved + step;
        double up = loss_fn(probe);
        probe[c] = saved - step;
        double down = loss_fn(probe);
        probe[c] = saved;
        if (!std::isfinite(up) || !std::isfinite(down))
            throw InvalidInput("grad_check: non-finite loss");
        double fd = (up - down) / (2.0 * step);
        double an = analytic_grad[c];
        double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
        res.max_rel_error = std::max(res.max_rel_error, std::abs(fd - an) / denom);
        ++res.coords_checked;
    }
    return res;
}

} // namespace pivot
