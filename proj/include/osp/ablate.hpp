#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "osp/train.hpp"

namespace osp {

// Six-configuration comparison: each metric-learning mechanism is enabled on
// top of the previous one and scored by novel/human MIoU on the k-way
// benchmark. Rows: AGM, NCM, DML, DML+WS, DML+WS+KIM, DML+WS+KIM+DP.

struct AblationRow {
    std::string name;
    bool weight_shift = false;
    double fixed_beta = 0.5;
    bool use_kim = false;
    bool dynamic_prototypes = false;
};

const std::vector<AblationRow>& ablation_rows();

struct AblationRowResult {
    std::string name;
    std::vector<double> novel;  // per seed
    std::vector<double> human;
    double median_novel = 0.0;
    double median_human = 0.0;
};

struct AblationOutcome {
    std::vector<AblationRowResult> rows;
    std::vector<std::string> median_violations;  // violated ordering pairs
    std::vector<std::string> seed_violations;    // "seed 2: NCM >= DML" style notes
    bool ordering_ok = false;
    std::string verdict;
    DmlLossStats loss_stats_for(const std::string& row_name) const;
    std::vector<std::pair<std::string, DmlLossStats>> loss_stats;  // per row, last seed
};

std::string ablation_csv(const AblationOutcome& outcome);

// Trains and evaluates every row for every seed on the given manifest.
AblationOutcome run_ablation(const SplitManifest& manifest, const ModelConfig& base_model,
                             const TrainConfig& base_train, const std::vector<uint64_t>& seeds,
                             int fold, std::ostream* log = nullptr);

double median(std::vector<double> values);

}  // namespace osp
