#pragma once

#include <array>
#include <string>

#include "osp/dml.hpp"
#include "osp/taxonomy.hpp"
#include "osp/tensor.hpp"

namespace osp {

// Three-stage coarse-to-fine parser. Stage 1 is a supervised foreground
// parser; stages 2 and 3 are one-shot meta learners over parent areas and
// fine classes. Each stage has its own encoder shared between the query and
// support images; knowledge infusion concatenates the previous stage's
// features and maps them back to K channels with two conv layers. Stages are
// trained sequentially with earlier stages frozen.

struct ConvLayer {
    Tensor kernel;  // [kh,kw,Cin,Cout]
    Tensor bias;    // [Cout]

    static ConvLayer init(int kh, int kw, int cin, int cout, Rng& rng);
};

struct StageEncoder {
    int stage_id = 0;
    int out_channels = 0;
    std::array<ConvLayer, 3> blocks;  // 3x3 convs, strides 2,2,1, padding 1

    static StageEncoder init(int stage_id, int k_stage, Rng& rng);
};

// [H,W,3] -> [H/4,W/4,K]; H and W must be divisible by 4. Inputs are centered
// to [-0.5, 0.5] before the first conv.
Tensor encode(const StageEncoder& stage, const Tensor& image);

struct KimFuser {
    ConvLayer conv1;  // [K_prev + K_stage (+1 with the fg prior)] -> K_stage
    ConvLayer conv2;  // K_stage -> K_stage
    Tensor input_scale;  // fixed per-channel preconditioner, set by calibration

    static KimFuser init(int in_channels, int k_stage, Rng& rng);
};

// concat(prev, cur) -> conv+relu -> conv+relu.
Tensor kim_fuse(const Tensor& prev, const Tensor& cur, const KimFuser& fuser);

// Data-dependent init: rescales the first conv's kernel per input channel by
// the inverse RMS of that channel over the probe inputs. Stages train
// sequentially, so the upstream feature scale is fixed when the fuser starts
// training; without this the frozen features' arbitrary magnitude swamps the
// He-scaled init.
void calibrate_fuser(KimFuser& fuser, const std::vector<Tensor>& concat_inputs);

struct ModelConfig {
    int k_stage = 32;
    bool use_kim = true;
    bool use_fg_prior = false;  // concat stage-1 foreground probability before fusion
};

struct PipelineState {
    ModelConfig config;
    StageEncoder enc1, enc2, enc3;
    KimFuser fuse2, fuse3;
    ConvLayer stage1_head;  // 1x1, K -> 2
    HeadParams head2, head3;
    PrototypeBank bank2, bank3;
    std::array<bool, 4> trained{};  // indexed 1..3

    static PipelineState init(const ModelConfig& config, Rng& rng);

    // With infusion disabled the model is the stage-3 meta learner alone.
    bool stage_enabled(int stage) const { return config.use_kim || stage == 3; }

    std::vector<Tensor> stage_params(int stage);
    std::vector<std::pair<std::string, Tensor>> named_params();

    // Marks exactly one stage trainable; everything else is frozen.
    void set_trainable_stage(int stage);
    void freeze_all();
};

// Binary foreground probabilities [H/4,W/4,2] from the stage-1 encoder.
Tensor stage1_forward(const PipelineState& state, const Tensor& image);

// Features feeding the heads of a stage (or stage 1's classifier input).
Tensor features_for_stage(const PipelineState& state, const Tensor& image, int stage);

// The concatenated input the stage's fuser consumes (stage 2 or 3).
Tensor fuser_input(const PipelineState& state, const Tensor& image, int stage);

struct EpisodeForward {
    std::vector<int> classes;  // surviving foreground classes, ascending
    Tensor agm_probs;          // [h,w,k+1], channel order: classes..., background
    Tensor ncm_probs;
};

struct MetaForwardOptions {
    std::vector<int> base_classes;     // fine ids, sorted ascending
    bool test_base_from_bank = false;  // dynamic-prototype lookup at meta-test
};

// EMA-updates the stage bank from one support sample (Eq.-2 step per class
// present at feature resolution). Training feeds the un-augmented support so
// the bank aggregates canonical-scale features.
void update_bank_from_support(PipelineState& state, int stage, const Tensor& support_image,
                              const LabelMask& support_mask_fine,
                              const std::vector<int>& base_classes_fine);

// Runs one episode through a meta stage (2: parent areas, 3: fine classes).
// Classes whose support region vanishes at feature resolution or whose
// prototype is degenerate are dropped; EmptyMask is thrown if none survive.
EpisodeForward stage_meta_forward(PipelineState& state, int stage, const Episode& episode,
                                  Phase phase, const MetaForwardOptions& options);

// Parent-space ids of a fine-id set (background excluded), sorted.
std::vector<int> parent_base_classes(const std::vector<int>& base_fine,
                                     const ClassTaxonomy& taxonomy);

}  // namespace osp
