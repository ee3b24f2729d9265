// osparse: one-shot human parsing experiments on synthetic figures.
// Subcommands: gen-data, train, eval, ablate. Exit codes: 0 success,
// 2 configuration error, 3 data or checkpoint error.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "osp/ablate.hpp"
#include "osp/checkpoint.hpp"
#include "osp/config.hpp"
#include "osp/synth.hpp"
#include "osp/train.hpp"

namespace fs = std::filesystem;
using namespace osp;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;

RunConfig load_config(const std::string& path, int64_t seed_override) {
    RunConfig cfg = RunConfig::load(path);
    if (seed_override >= 0) {
        cfg.data.seed = static_cast<uint64_t>(seed_override);
        cfg.train.seed = static_cast<uint64_t>(seed_override);
    }
    return cfg;
}

void require_file(const fs::path& path, const char* what) {
    if (!fs::exists(path))
        throw ConfigError(std::string(what) + " not found: " + path.string());
}

int cmd_gen_data(const RunConfig& cfg) {
    SplitManifest manifest = generate_dataset(cfg.data, cfg.resolve(cfg.data_out_dir));
    std::cout << "wrote " << manifest.s_train.size() + manifest.q_train.size() << " train and "
              << manifest.s_test.size() + manifest.q_test.size() << " test samples under "
              << cfg.resolve(cfg.data_out_dir).string() << "\n";
    return 0;
}

void write_loss_csv(const fs::path& path, const std::vector<TrainStats>& stages,
                    int episodes_per_epoch) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << "epoch,episode,loss\n";
    int epoch_base = 0;
    int64_t episode = 0;
    for (const TrainStats& stats : stages) {
        for (size_t i = 0; i < stats.loss_curve.size(); ++i, ++episode) {
            const int epoch = epoch_base + static_cast<int>(i) / std::max(1, episodes_per_epoch);
            out << epoch << "," << episode << "," << stats.loss_curve[i] << "\n";
        }
        epoch_base += static_cast<int>(stats.loss_curve.size()) / std::max(1, episodes_per_epoch);
    }
}

int cmd_train(const RunConfig& cfg, bool resume) {
    const fs::path manifest_path = cfg.resolve(cfg.paths.manifest);
    require_file(manifest_path, "manifest");
    SplitManifest manifest = SplitManifest::load(manifest_path);
    const fs::path ckpt_dir = cfg.resolve(cfg.paths.checkpoint_dir);
    fs::create_directories(ckpt_dir);

    Rng init_rng(cfg.train.seed);
    PipelineState state = PipelineState::init(cfg.model, init_rng);

    std::vector<int> stages;
    for (int s = 1; s <= 3; ++s)
        if (state.stage_enabled(s)) stages.push_back(s);

    // Resume from the deepest valid stage snapshot.
    size_t start = 0;
    if (resume) {
        for (size_t i = stages.size(); i > 0; --i) {
            const fs::path snap = ckpt_dir / ("stage" + std::to_string(stages[i - 1]) + ".popc");
            if (!fs::exists(snap)) continue;
            try {
                LoadedPipeline loaded = load_pipeline(snap);
                state = std::move(loaded.state);
                start = i;
                std::cout << "resumed from " << snap.string() << "\n";
                break;
            } catch (const CorruptCheckpoint& e) {
                std::cerr << "ignoring invalid snapshot: " << e.what() << "\n";
            }
        }
    }

    std::vector<TrainStats> stage_stats;
    for (size_t i = start; i < stages.size(); ++i) {
        const int stage = stages[i];
        std::cout << "training stage " << stage << "...\n";
        stage_stats.push_back(train_stage(state, stage, manifest, cfg.train, &std::cerr));
        save_pipeline(ckpt_dir / ("stage" + std::to_string(stage) + ".popc"), state,
                      cfg.train.eval_beta(), cfg.train.dynamic_prototypes);
    }
    save_pipeline(ckpt_dir / "model.popc", state, cfg.train.eval_beta(),
                  cfg.train.dynamic_prototypes);
    write_loss_csv(cfg.resolve(cfg.paths.loss_csv), stage_stats, cfg.train.episodes_per_epoch);
    std::cout << "checkpoints written to " << ckpt_dir.string() << "\n";
    return 0;
}

int cmd_eval(const RunConfig& cfg) {
    const fs::path manifest_path = cfg.resolve(cfg.paths.manifest);
    require_file(manifest_path, "manifest");
    const fs::path ckpt = cfg.checkpoint_path();
    require_file(ckpt, "checkpoint");

    SplitManifest manifest = SplitManifest::load(manifest_path);
    LoadedPipeline loaded = load_pipeline(ckpt);

    EvalConfig eval = cfg.eval;
    eval.eval_beta = loaded.eval_beta;
    eval.base_protos_from_bank = loaded.dynamic_prototypes;
    std::ofstream episodes(cfg.resolve(cfg.paths.episodes_csv), std::ios::binary);
    if (!episodes) throw IoError("cannot write episode csv");
    eval.episode_csv = &episodes;

    MetricsReport report = run_meta_test(loaded.state, manifest, eval);

    std::ofstream out(cfg.resolve(cfg.paths.report), std::ios::binary);
    if (!out) throw IoError("cannot write report");
    out << report.to_json();

    std::cout << "mode        " << report.mode << " (fold " << report.fold << ")\n"
              << "episodes    " << report.episode_count << "\n"
              << "novel MIoU  " << report.novel_miou << "\n"
              << "human MIoU  " << report.human_miou << "\n";
    if (report.overall_acc) std::cout << "overall acc " << *report.overall_acc << "\n";
    if (report.bi_iou) std::cout << "binary IoU  " << *report.bi_iou << "\n";
    return 0;
}

int cmd_ablate(const RunConfig& cfg) {
    const fs::path manifest_path = cfg.resolve(cfg.paths.manifest);
    require_file(manifest_path, "manifest");
    SplitManifest manifest = SplitManifest::load(manifest_path);

    AblationOutcome outcome = run_ablation(manifest, cfg.model, cfg.train, cfg.ablate.seeds,
                                           cfg.eval.fold, &std::cerr);

    const fs::path csv_path = cfg.resolve(cfg.paths.ablation_csv);
    std::ofstream csv(csv_path, std::ios::binary);
    if (!csv) throw IoError("cannot write " + csv_path.string());
    csv << ablation_csv(outcome);

    std::cout << "config            novel   human (medians over " << outcome.rows[0].novel.size()
              << " seeds)\n";
    for (const auto& row : outcome.rows) {
        std::printf("%-17s %6.3f  %6.3f\n", row.name.c_str(), row.median_novel, row.median_human);
    }
    for (const std::string& v : outcome.seed_violations) std::cout << "note: " << v << "\n";
    std::cout << "verdict: " << outcome.verdict << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"one-shot human parsing on synthetic figures"};
    app.require_subcommand(1);

    std::string config_path;
    int64_t seed_override = -1;
    bool resume = false;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "path to the JSON run config")->required();
        cmd->add_option("--seed", seed_override, "override data/train seeds");
    };
    CLI::App* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
    add_common(gen);
    CLI::App* train = app.add_subcommand("train", "train all enabled stages");
    add_common(train);
    train->add_flag("--resume", resume, "skip stages with valid checkpoints");
    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(eval);
    CLI::App* ablate = app.add_subcommand("ablate", "run the six-configuration comparison");
    add_common(ablate);

    CLI11_PARSE(app, argc, argv);

    try {
        const RunConfig cfg = load_config(config_path, seed_override);
        if (gen->parsed()) return cmd_gen_data(cfg);
        if (train->parsed()) return cmd_train(cfg, resume);
        if (eval->parsed()) return cmd_eval(cfg);
        if (ablate->parsed()) return cmd_ablate(cfg);
        return kExitConfig;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const CorruptCheckpoint& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const GenError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
}
