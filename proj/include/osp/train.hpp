#pragma once

#include <functional>
#include <optional>
#include <ostream>
#include <set>

#include "osp/metrics.hpp"
#include "osp/pipeline.hpp"
#include "osp/synth.hpp"
#include "osp/taxonomy.hpp"

namespace osp {

struct TrainConfig {
    int epochs = 10;
    int episodes_per_epoch = 64;
    int stage1_epochs = -1;  // -1: same as epochs
    double base_lr = 0.001;
    double poly_power = 0.9;
    double momentum = 0.0;
    double weight_decay = 0.0;
    double clip_norm = 0.0;  // 0 disables clipping
    int batch_size = 1;
    // Static prototypes for the first half of training unless overridden.
    int static_proto_epochs = -1;
    bool dynamic_prototypes = true;
    double proto_alpha = 0.001;  // EMA weight on the previous bank entry
    bool weight_shift = true;
    double fixed_beta = 0.5;  // used when weight_shift is off
    double scale_lo = 0.5;
    double scale_hi = 2.0;
    double flip_prob = 0.5;
    bool augment_enabled = true;
    uint64_t seed = 1;

    int effective_stage1_epochs() const { return stage1_epochs < 0 ? epochs : stage1_epochs; }
    int effective_cutoff() const { return static_proto_epochs < 0 ? epochs / 2 : static_proto_epochs; }
    // The centroid head carries inference whenever it was trained at all; only
    // a pure-AGM configuration predicts with the attention head. (AGM logits
    // are unbounded, so any probability blend would collapse onto AGM.)
    double eval_beta() const { return !weight_shift && fixed_beta >= 1.0 ? 1.0 : 0.0; }
};

// base_lr * (1 - iter/max_iter)^power
double poly_lr(int iter, int max_iter, double base_lr, double power);

struct AugmentParams {
    double scale = 1.0;
    int off_y = 0;  // crop (scaled > target) or pad (scaled < target) offset
    int off_x = 0;
    bool flip = false;
};

// Deterministic core: scale (bilinear image / nearest mask), crop-or-pad to
// the original size, optional horizontal flip. Image and mask move together.
Sample augment_with(const Sample& sample, const AugmentParams& params);

// Draws scale in [lo,hi], offsets uniformly, flip with flip_prob.
Sample augment(const Sample& sample, const TrainConfig& config, Rng& rng);

// p <- p - lr * grad for every parameter; throws NumericError (and changes
// nothing) if any gradient is non-finite.
void sgd_step(std::vector<Tensor>& params, double lr);

// SGD with optional momentum and L2 weight decay. Decay applies to kernel
// tensors on the feature path only: biases and explicitly exempted logit
// heads stay decay-free so bounded features never cap the logit scale.
class Sgd {
public:
    explicit Sgd(double momentum = 0.0, double weight_decay = 0.0, double clip_norm = 0.0)
        : momentum_(momentum), weight_decay_(weight_decay), clip_norm_(clip_norm) {}
    void exempt_from_decay(const std::vector<Tensor>& params);
    void step(std::vector<Tensor>& params, double lr);

private:
    double momentum_;
    double weight_decay_;
    double clip_norm_;
    std::map<TensorNode*, std::vector<double>> velocity_;
    std::set<TensorNode*> exempt_;
};

struct TrainStats {
    std::vector<double> loss_curve;  // one entry per optimizer step
    std::vector<double> beta_curve;  // beta used at each epoch
    DmlLossStats loss_stats;
    int skipped_episodes = 0;
    int rejected_steps = 0;
};

// Episodic meta-training of stage 2 or 3: sample pair, augment, forward both
// heads, weight-shifted loss, SGD with the poly schedule. Dynamic prototypes
// update per episode once past the static cutoff.
TrainStats meta_train(PipelineState& state, int stage, const SplitManifest& manifest,
                      const TrainConfig& config, std::ostream* log = nullptr);

// Sequential stage training with freezing. Stage 1 is supervised foreground
// parsing over all training images; stages 2-3 delegate to meta_train.
// Requires every enabled earlier stage to be trained already.
TrainStats train_stage(PipelineState& state, int stage, const SplitManifest& manifest,
                       const TrainConfig& config, std::ostream* log = nullptr);

// ---- evaluation -----------------------------------------------------------------

enum class EvalMode { KWay, OneWay };

struct EvalConfig {
    EvalMode mode = EvalMode::KWay;
    int fold = 1;
    double eval_beta = 0.0;           // AGM weight in the prediction blend
    bool base_protos_from_bank = false;
    std::ostream* episode_csv = nullptr;  // optional per-episode log
};

// Argmax prediction for one test episode at query resolution (k-way path).
LabelMask predict_episode(PipelineState& state, const Episode& episode, const EvalConfig& config);

MetricsReport run_meta_test(PipelineState& state, const SplitManifest& manifest,
                            const EvalConfig& config);

// Evaluation harness over an injectable predictor, used by the metric-level
// tests; `predict` returns a full-resolution label mask for an episode.
MetricsReport evaluate_kway(const SplitManifest& manifest, int fold,
                            const std::function<LabelMask(const Episode&)>& predict,
                            std::ostream* episode_csv = nullptr);

}  // namespace osp
