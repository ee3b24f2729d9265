#include "osp/ablate.hpp"

#include <algorithm>
#include <sstream>

namespace osp {

const std::vector<AblationRow>& ablation_rows() {
    static const std::vector<AblationRow> rows = {
        {"AGM", false, 1.0, false, false},
        {"NCM", false, 0.0, false, false},
        {"DML", false, 0.5, false, false},
        {"DML+WS", true, 0.5, false, false},
        {"DML+WS+KIM", true, 0.5, true, false},
        {"DML+WS+KIM+DP", true, 0.5, true, true},
    };
    return rows;
}

double median(std::vector<double> values) {
    if (values.empty()) throw ContractError("median of empty set");
    std::sort(values.begin(), values.end());
    const size_t n = values.size();
    return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

namespace {

struct PairCheck {
    std::string label;
    double lo, hi;     // medians (or per-seed values)
    double min_gap;    // required hi - lo
    bool ok() const { return hi - lo >= min_gap; }
};

std::vector<PairCheck> ordering_checks(const std::vector<double>& novel,
                                       const std::vector<double>& human) {
    // indices: 0 AGM, 1 NCM, 2 DML, 3 +WS, 4 +KIM, 5 +DP
    return {
        {"AGM < DML (novel, >=1pt)", novel[0], novel[2], 0.01},
        {"NCM < DML (novel, >=1pt)", novel[1], novel[2], 0.01},
        {"DML <= DML+WS (novel)", novel[2], novel[3], 0.0},
        {"DML+WS <= DML+WS+KIM (novel)", novel[3], novel[4], 0.0},
        {"DML+WS+KIM <= DML+WS+KIM+DP (novel)", novel[4], novel[5], 0.0},
        {"DML+WS + 2pt <= DML+WS+KIM (human)", human[3], human[4], 0.02},
    };
}

}  // namespace

DmlLossStats AblationOutcome::loss_stats_for(const std::string& row_name) const {
    for (const auto& [name, stats] : loss_stats)
        if (name == row_name) return stats;
    throw ContractError("no loss stats recorded for " + row_name);
}

AblationOutcome run_ablation(const SplitManifest& manifest, const ModelConfig& base_model,
                             const TrainConfig& base_train, const std::vector<uint64_t>& seeds,
                             int fold, std::ostream* log) {
    if (seeds.empty()) throw ConfigError("ablation needs at least one seed");
    AblationOutcome outcome;
    for (const AblationRow& row : ablation_rows()) {
        AblationRowResult result;
        result.name = row.name;
        for (uint64_t seed : seeds) {
            ModelConfig model = base_model;
            model.use_kim = row.use_kim;
            TrainConfig train = base_train;
            train.seed = seed;
            train.weight_shift = row.weight_shift;
            train.fixed_beta = row.fixed_beta;
            train.dynamic_prototypes = row.dynamic_prototypes;

            Rng init_rng(seed);
            PipelineState state = PipelineState::init(model, init_rng);
            DmlLossStats stats_acc;
            if (model.use_kim) {
                train_stage(state, 1, manifest, train, log);
                TrainStats s2 = train_stage(state, 2, manifest, train, log);
                stats_acc.agm_terms += s2.loss_stats.agm_terms;
                stats_acc.ncm_terms += s2.loss_stats.ncm_terms;
            }
            TrainStats s3 = train_stage(state, 3, manifest, train, log);
            stats_acc.agm_terms += s3.loss_stats.agm_terms;
            stats_acc.ncm_terms += s3.loss_stats.ncm_terms;

            EvalConfig eval;
            eval.mode = EvalMode::KWay;
            eval.fold = fold;
            eval.eval_beta = train.eval_beta();
            eval.base_protos_from_bank = row.dynamic_prototypes;
            MetricsReport report = run_meta_test(state, manifest, eval);
            result.novel.push_back(report.novel_miou);
            result.human.push_back(report.human_miou);
            if (log)
                *log << row.name << " seed " << seed << ": novel " << report.novel_miou
                     << " human " << report.human_miou << "\n";

            if (seed == seeds.back()) outcome.loss_stats.emplace_back(row.name, stats_acc);
        }
        result.median_novel = median(result.novel);
        result.median_human = median(result.human);
        outcome.rows.push_back(std::move(result));
    }

    std::vector<double> med_novel, med_human;
    for (const auto& r : outcome.rows) {
        med_novel.push_back(r.median_novel);
        med_human.push_back(r.median_human);
    }
    for (const PairCheck& check : ordering_checks(med_novel, med_human))
        if (!check.ok()) outcome.median_violations.push_back(check.label);
    for (size_t s = 0; s < seeds.size(); ++s) {
        std::vector<double> novel, human;
        for (const auto& r : outcome.rows) {
            novel.push_back(r.novel[s]);
            human.push_back(r.human[s]);
        }
        for (const PairCheck& check : ordering_checks(novel, human))
            if (!check.ok())
                outcome.seed_violations.push_back("seed " + std::to_string(seeds[s]) + ": " +
                                                  check.label);
    }

    outcome.ordering_ok = outcome.median_violations.empty();
    std::ostringstream verdict;
    if (outcome.ordering_ok) {
        verdict << "expected ordering holds on seed medians";
        if (!outcome.seed_violations.empty())
            verdict << " (" << outcome.seed_violations.size() << " per-seed deviations)";
    } else {
        verdict << "ordering violated: ";
        for (size_t i = 0; i < outcome.median_violations.size(); ++i) {
            if (i) verdict << "; ";
            verdict << outcome.median_violations[i];
        }
    }
    outcome.verdict = verdict.str();
    return outcome;
}

std::string ablation_csv(const AblationOutcome& outcome) {
    std::ostringstream out;
    out << "config,seed,novel_miou,human_miou\n";
    for (const auto& row : outcome.rows) {
        for (size_t s = 0; s < row.novel.size(); ++s)
            out << row.name << "," << s << "," << row.novel[s] << "," << row.human[s] << "\n";
        out << row.name << ",median," << row.median_novel << "," << row.median_human << "\n";
    }
    return out.str();
}

}  // namespace osp
