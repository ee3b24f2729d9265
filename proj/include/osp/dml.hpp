#pragma once

#include <map>
#include <vector>

#include "osp/taxonomy.hpp"
#include "osp/tensor.hpp"

namespace osp {

// Dual-metric learning head: masked-mean class prototypes with an EMA bank,
// the attention-guided (parametric) and nearest-centroid (non-parametric)
// prediction branches, and the weight-shifted loss that blends them.

struct PrototypeEntry {
    std::vector<double> vec;
    bool dynamic = false;
    bool initialized = false;
};

struct PrototypeBank {
    std::map<int, PrototypeEntry> protos;  // class id -> entry; background never appears
    double alpha = 0.001;
};

// 1x1 conv pairs shared across class branches: phi scores the foreground
// logit, omega contributes the aggregated background logit.
struct HeadParams {
    Tensor phi_kernel, phi_bias;      // [1,1,K,1], [1]
    Tensor omega_kernel, omega_bias;  // [1,1,K,1], [1]

    static HeadParams init(int k, Rng& rng);
    std::vector<Tensor> params();
};

// Per-class cosine maps in ascending class-id order.
struct DistanceMaps {
    std::vector<int> classes;
    std::vector<Tensor> maps;  // each [H,W], values in [-1,1]
};

enum class Phase { TrainEarly, TrainLate, Test };

// Masked mean of support features over one class region (graph-connected).
// The mask must already be at feature resolution.
Tensor compute_prototype(const Tensor& support_features, const std::vector<uint8_t>& class_mask);

// EMA update: p_d <- alpha * p_d + (1 - alpha) * p_now; the first call adopts
// p_now. Only base classes may be updated during training.
void update_dynamic(PrototypeBank& bank, int class_id, const std::vector<double>& p_now,
                    const std::vector<int>& base_classes);

// Prototype source per phase: early training uses per-episode static
// prototypes (gradient flows into the support features), late training reads
// the detached bank, and testing reads the bank for base classes (when
// enabled) while novel classes always get static prototypes from the test
// support. `classes` must all have nonempty regions in the mask.
std::vector<std::pair<int, Tensor>> effective_prototypes(
    const PrototypeBank& bank, const Tensor& support_features,
    const LabelMask& support_mask_feature_res, const std::vector<int>& classes, Phase phase,
    const std::vector<int>& base_classes, bool test_base_from_bank = true);

// Cosine maps of the query features against each prototype.
DistanceMaps distance_maps(const Tensor& query_features,
                           const std::vector<std::pair<int, Tensor>>& prototypes);

// Attention-guided branch: r_c = m_c * h + h, foreground logits phi(r_c),
// background logit mean_c omega(r_c), joint softmax over k+1 channels.
// Output channel order: distances.classes ascending, background last.
Tensor agm_forward(const Tensor& query_features, const DistanceMaps& distances,
                   const HeadParams& params);

// Nearest-centroid branch: logits are the distance maps themselves with
// m_bg = mean_c (1 - m_c); joint softmax, same channel order, no parameters.
Tensor ncm_forward(const DistanceMaps& distances);

// Loss weight schedule: 1 - epoch / max_epoch.
double beta(int epoch, int max_epoch);

struct DmlLossStats {
    int64_t agm_terms = 0;
    int64_t ncm_terms = 0;
};

// beta * CE(agm) + (1-beta) * CE(ncm); zero-weight branches are skipped.
// The ground truth is resampled (nearest) to the prediction resolution; its
// classes must map into the prediction channels.
Tensor dml_loss(const Tensor& agm_probs, const Tensor& ncm_probs, const LabelMask& query_gt,
                const std::vector<int>& classes, double beta_weight,
                DmlLossStats* stats = nullptr);

// Channel targets for a [H,W,k+1] prediction over `classes` + background.
std::vector<int> channel_targets(const LabelMask& gt_at_pred_res, const std::vector<int>& classes);

}  // namespace osp
