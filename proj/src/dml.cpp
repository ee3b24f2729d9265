#include "osp/dml.hpp"

#include <algorithm>
#include <cmath>

namespace osp {

HeadParams HeadParams::init(int k, Rng& rng) {
    HeadParams p;
    p.phi_kernel = Tensor::rand_init({1, 1, k, 1}, k, rng);
    p.phi_bias = Tensor::zeros({1}, true);
    p.omega_kernel = Tensor::rand_init({1, 1, k, 1}, k, rng);
    p.omega_bias = Tensor::zeros({1}, true);
    return p;
}

std::vector<Tensor> HeadParams::params() {
    return {phi_kernel, phi_bias, omega_kernel, omega_bias};
}

Tensor compute_prototype(const Tensor& support_features, const std::vector<uint8_t>& class_mask) {
    return masked_mean(support_features, class_mask);
}

void update_dynamic(PrototypeBank& bank, int class_id, const std::vector<double>& p_now,
                    const std::vector<int>& base_classes) {
    if (class_id == cls::kBackground)
        throw ContractError("update_dynamic: background has no prototype");
    if (!std::binary_search(base_classes.begin(), base_classes.end(), class_id))
        throw ContractError("update_dynamic: novel class " + std::to_string(class_id) +
                            " updated during training");
    for (double v : p_now)
        if (!std::isfinite(v)) throw NumericError("update_dynamic: non-finite prototype");
    PrototypeEntry& entry = bank.protos[class_id];
    entry.dynamic = true;
    if (!entry.initialized) {
        entry.vec = p_now;
        entry.initialized = true;
        return;
    }
    const double a = bank.alpha;
    for (size_t i = 0; i < entry.vec.size(); ++i)
        entry.vec[i] = a * entry.vec[i] + (1.0 - a) * p_now[i];
}

std::vector<std::pair<int, Tensor>> effective_prototypes(
    const PrototypeBank& bank, const Tensor& support_features,
    const LabelMask& support_mask_feature_res, const std::vector<int>& classes, Phase phase,
    const std::vector<int>& base_classes, bool test_base_from_bank) {
    std::vector<std::pair<int, Tensor>> out;
    for (int c : classes) {
        const bool is_base = std::binary_search(base_classes.begin(), base_classes.end(), c);
        bool from_bank = false;
        switch (phase) {
            case Phase::TrainEarly:
                break;
            case Phase::TrainLate:
                if (!is_base)
                    throw ContractError("effective_prototypes: novel class in training episode");
                from_bank = true;
                break;
            case Phase::Test:
                from_bank = is_base && test_base_from_bank;
                break;
        }
        if (from_bank) {
            auto it = bank.protos.find(c);
            if (it == bank.protos.end() || !it->second.initialized)
                throw StateError("effective_prototypes: dynamic prototype for class " +
                                 std::to_string(c) + " is uninitialized");
            out.emplace_back(c, Tensor::from_data({static_cast<int>(it->second.vec.size())},
                                                  it->second.vec, false));
        } else {
            out.emplace_back(
                c, compute_prototype(support_features, class_selector(support_mask_feature_res, c)));
        }
    }
    return out;
}

DistanceMaps distance_maps(const Tensor& query_features,
                           const std::vector<std::pair<int, Tensor>>& prototypes) {
    DistanceMaps dm;
    for (const auto& [c, proto] : prototypes) {
        dm.classes.push_back(c);
        dm.maps.push_back(cosine_map(query_features, proto));
    }
    return dm;
}

Tensor agm_forward(const Tensor& query_features, const DistanceMaps& distances,
                   const HeadParams& params) {
    const int k = static_cast<int>(distances.maps.size());
    if (k < 1) throw ContractError("agm_forward: no foreground classes");
    const int h = query_features.dim(0), w = query_features.dim(1);
    std::vector<Tensor> logits;
    Tensor bg_sum;
    for (int i = 0; i < k; ++i) {
        Tensor attended = attend(distances.maps[static_cast<size_t>(i)], query_features);
        Tensor fg = conv2d(attended, params.phi_kernel, params.phi_bias);
        logits.push_back(reshape(fg, {h, w}));
        Tensor bg = conv2d(attended, params.omega_kernel, params.omega_bias);
        bg_sum = i == 0 ? bg : add(bg_sum, bg);
    }
    logits.push_back(reshape(scale(bg_sum, 1.0 / k), {h, w}));
    return softmax_channels(stack_maps(logits));
}

Tensor ncm_forward(const DistanceMaps& distances) {
    const int k = static_cast<int>(distances.maps.size());
    if (k < 1) throw ContractError("ncm_forward: no foreground classes");
    const int h = distances.maps[0].dim(0), w = distances.maps[0].dim(1);
    std::vector<Tensor> logits = distances.maps;
    // m_bg = mean_c (1 - m_c) = 1 - mean_c m_c
    Tensor mean_m = distances.maps[0];
    for (int i = 1; i < k; ++i) mean_m = add(mean_m, distances.maps[static_cast<size_t>(i)]);
    Tensor ones = Tensor::full({h, w}, 1.0);
    logits.push_back(add_scalar_scale(ones, 1.0, mean_m, -1.0 / k));
    return softmax_channels(stack_maps(logits));
}

double beta(int epoch, int max_epoch) {
    if (max_epoch <= 0) throw ContractError("beta: max_epoch must be positive");
    if (epoch < 0 || epoch > max_epoch) throw ContractError("beta: epoch out of range");
    return 1.0 - static_cast<double>(epoch) / static_cast<double>(max_epoch);
}

std::vector<int> channel_targets(const LabelMask& gt_at_pred_res, const std::vector<int>& classes) {
    std::vector<int> channel_of(256, -1);
    for (size_t i = 0; i < classes.size(); ++i)
        channel_of[static_cast<size_t>(classes[i])] = static_cast<int>(i);
    channel_of[cls::kBackground] = static_cast<int>(classes.size());
    std::vector<int> targets(gt_at_pred_res.labels.size());
    for (size_t i = 0; i < targets.size(); ++i) {
        const int t = channel_of[gt_at_pred_res.labels[i]];
        if (t < 0)
            throw ContractError("dml_loss: ground-truth class " +
                                std::to_string(gt_at_pred_res.labels[i]) +
                                " outside prediction channels");
        targets[i] = t;
    }
    return targets;
}

Tensor dml_loss(const Tensor& agm_probs, const Tensor& ncm_probs, const LabelMask& query_gt,
                const std::vector<int>& classes, double beta_weight, DmlLossStats* stats) {
    if (beta_weight < 0.0 || beta_weight > 1.0)
        throw ContractError("dml_loss: beta outside [0,1]");
    const Tensor& ref = beta_weight > 0.0 ? agm_probs : ncm_probs;
    LabelMask gt = resize_mask_nearest(query_gt, ref.dim(0), ref.dim(1));
    const std::vector<int> targets = channel_targets(gt, classes);
    Tensor loss;
    bool have = false;
    if (beta_weight > 0.0) {
        if (stats) ++stats->agm_terms;
        loss = scale(cross_entropy_probs(agm_probs, targets), beta_weight);
        have = true;
    }
    if (beta_weight < 1.0) {
        if (stats) ++stats->ncm_terms;
        Tensor ncm_term = scale(cross_entropy_probs(ncm_probs, targets), 1.0 - beta_weight);
        loss = have ? add(loss, ncm_term) : ncm_term;
    }
    return loss;
}

}  // namespace osp
