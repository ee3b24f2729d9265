#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "osp/pipeline.hpp"
#include "osp/synth.hpp"
#include "osp/train.hpp"

namespace osp {

// One JSON document with per-command sections. Unknown keys are errors;
// relative paths resolve against the config file's directory.

struct PathsSection {
    std::string manifest = "data/manifest.json";
    std::string checkpoint_dir = "ckpt";
    std::string checkpoint;  // eval input; defaults to <checkpoint_dir>/model.popc
    std::string report = "report.json";
    std::string loss_csv = "loss.csv";
    std::string episodes_csv = "episodes.csv";
    std::string ablation_csv = "ablation.csv";
};

struct AblateSection {
    std::vector<uint64_t> seeds = {1, 2, 3};
};

struct RunConfig {
    DatasetConfig data;       // sizes, counts, seed, fold
    std::string data_out_dir = "data";
    ModelConfig model;
    TrainConfig train;
    EvalConfig eval;          // mode + fold (blend settings come from the checkpoint)
    PathsSection paths;
    AblateSection ablate;
    std::filesystem::path base_dir;  // directory of the config file

    static RunConfig load(const std::filesystem::path& path);
    static RunConfig parse(const std::string& text, const std::filesystem::path& base_dir);

    std::filesystem::path resolve(const std::string& rel) const;
    std::filesystem::path checkpoint_path() const;
};

}  // namespace osp
