#pragma once

#include <array>
#include <cstdint>
#include <filesystem>

#include "osp/taxonomy.hpp"
#include "osp/tensor.hpp"

namespace osp {

// Procedural figure generator. Figures are layered geometric primitives on a
// noisy background; the mask is the exact rendered coverage. Appearance is
// built around two deliberate ambiguities: face/arms/legs share a skin tone
// (context, not color, separates them) and shoes/belt/hair sit close to the
// dark background palette. Both leave headroom for the coarse-stage priors to
// pay off while keeping each class findable from a single support.

struct FigureSpec {
    uint64_t seed = 0;

    // proportions in canvas-64 units, scaled to the render size
    double head_rx = 6.5;
    double head_ry = 5.0;
    double torso_half_w = 10.0;
    double arm_len = 13.0;
    double leg_gap = 2.0;

    // wardrobe
    bool hat = true;
    bool dress = false;
    bool belt = true;
    bool bag = false;

    // global pose
    double dx = 0.0;
    double dy = 0.0;
    double rot = 0.0;  // radians

    // per-class RGB after per-sample jitter
    std::array<std::array<double, 3>, cls::kFineCount> colors{};

    // uniform noise amplitudes
    double bg_noise = 0.05;
    double fg_noise = 0.02;

    // Derive a fully jittered spec from one seed.
    static FigureSpec sample(uint64_t seed);
};

struct Sample {
    Tensor image;    // [H,W,3] in [0,1]
    LabelMask mask;  // fine taxonomy ids
};

// Deterministic function of the spec. Throws GenError if a requested part
// renders with fewer than 8 pixels.
Sample generate(const FigureSpec& spec, int height, int width);

struct DatasetCounts {
    int s_train = 256;
    int q_train = 256;
    int s_test = 12;
    int q_test = 20;
};

struct DatasetConfig {
    uint64_t seed = 7;
    int height = 64;
    int width = 64;
    DatasetCounts counts;
    int fixed_support_count = 5;
    int fold = 1;
};

// Renders every split to out_dir (PPM/PGM), writes manifest.json and returns
// the manifest. Fixed test supports are the S_test images with the most
// distinct annotated classes, ties broken by index.
SplitManifest generate_dataset(const DatasetConfig& config, const std::filesystem::path& out_dir);

}  // namespace osp
