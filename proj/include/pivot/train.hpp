#pragma once

#include "pivot/data.hpp"
#include "pivot/model.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace pivot {

// Warm-up stage settings. Optimization is plain stochastic gradient descent
// with a fixed step. The reference recipe trains the encoder for 3 epochs and
// the decoder for 2; its learning rates (1e-3 encoder, 2e-5 decoder) assume
// adaptive optimizers at full scale and stall with plain SGD at this size, so
// the desk defaults below are recalibrated.
struct TrainConfig {
    int epochs_enc = 3;
    double lr_enc = 0.02;
    int epochs_dec = 2;
    double lr_dec = 0.08;
    int batch_size = 1;
    std::uint64_t seed = 7;
};

// Mean of squared entrywise differences over all K*d entries. The mean
// convention (not the sum) keeps loss magnitudes shape-independent; the two
// differ by the constant K*d.
double mse_loss(const PivotRep& pred, const PivotRep& target);

// -log softmax(logits)[target], numerically stable.
double nll_from_logits(std::span<const double> logits, int target);

// Mean negative log-likelihood per predicted token, terminal EOS included,
// conditioned on the pivot prefix.
double lm_loss(const DecoderParams& params, const PivotRep& pivot, const Prompt& target);

// Batch items for the two supervised objectives.
struct EncoderItem {
    Prompt tokens;
    PivotRep target;
};
struct DecoderItem {
    PivotRep pivot;
    Prompt target;
};

// Mean batch loss; when grad is non-null it must be zero-filled with the
// parameter layout's size and receives the gradient of the mean loss.
double encoder_batch_loss(const EncoderParams& params, std::span<const EncoderItem> batch,
                          std::vector<double>* grad);
double decoder_batch_loss(const DecoderParams& params, std::span<const DecoderItem> batch,
                          std::vector<double>* grad);

struct EncoderTrainResult {
    EncoderParams params;
    std::vector<double> loss_curve; // [0] = loss at init, then one entry per epoch
};
struct DecoderTrainResult {
    DecoderParams params;
    std::vector<double> loss_curve;
};

// Fits the encoder output to the frozen image encoding of each pair's target
// image. Deterministic given cfg.seed; epochs_enc == 0 returns the initial
// parameters bit-identically.
EncoderTrainResult train_encoder_warmup(EncoderParams init,
                                        const std::vector<PreferencePair>& pairs,
                                        const World& world, const TrainConfig& cfg);

// Fits next-token prediction of the system prompt conditioned on the image
// encoding. zero_pivot trains the decoder with a fixed zero pivot instead
// (the decoder-without-image ablation).
DecoderTrainResult train_decoder_warmup(DecoderParams init,
                                        const std::vector<DecoderExample>& corpus,
                                        const World& world, const TrainConfig& cfg,
                                        bool zero_pivot = false);

// Central finite differences (64-bit throughout) against an analytic
// gradient on up to max_coords sampled coordinates. Returns the maximum
// relative error. Throws on non-finite loss values.
struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t coords_checked = 0;
};
GradCheckResult grad_check(const std::function<double(const std::vector<double>&)>& loss_fn,
                           const std::vector<double>& params,
                           const std::vector<double>& analytic_grad, std::size_t max_coords,
                           std::uint64_t seed, double step = 1e-5);

} // namespace pivot
