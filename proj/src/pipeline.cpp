#include "osp/pipeline.hpp"

#include <algorithm>
#include <set>

namespace osp {

ConvLayer ConvLayer::init(int kh, int kw, int cin, int cout, Rng& rng) {
    ConvLayer layer;
    layer.kernel = Tensor::rand_init({kh, kw, cin, cout}, kh * kw * cin, rng);
    layer.bias = Tensor::zeros({cout}, true);
    return layer;
}

StageEncoder StageEncoder::init(int stage_id, int k_stage, Rng& rng) {
    StageEncoder enc;
    enc.stage_id = stage_id;
    enc.out_channels = k_stage;
    enc.blocks[0] = ConvLayer::init(3, 3, 3, 16, rng);
    enc.blocks[1] = ConvLayer::init(3, 3, 16, 32, rng);
    enc.blocks[2] = ConvLayer::init(3, 3, 32, k_stage, rng);
    return enc;
}

Tensor encode(const StageEncoder& stage, const Tensor& image) {
    if (image.ndim() != 3 || image.dim(2) != 3) throw ShapeError("encode: image must be [H,W,3]");
    if (image.dim(0) % 4 != 0 || image.dim(1) % 4 != 0)
        throw ShapeError("encode: spatial size must be divisible by 4");
    Tensor x = add_scalar_scale(image, 1.0, Tensor::full(image.shape(), 0.5), -1.0);
    x = relu(conv2d(x, stage.blocks[0].kernel, stage.blocks[0].bias, 2, 1));
    x = relu(conv2d(x, stage.blocks[1].kernel, stage.blocks[1].bias, 2, 1));
    x = relu(conv2d(x, stage.blocks[2].kernel, stage.blocks[2].bias, 1, 1));
    return x;
}

KimFuser KimFuser::init(int in_channels, int k_stage, Rng& rng) {
    KimFuser fuser;
    fuser.conv1 = ConvLayer::init(3, 3, in_channels, k_stage, rng);
    fuser.conv2 = ConvLayer::init(3, 3, k_stage, k_stage, rng);
    fuser.input_scale = Tensor::full({in_channels}, 1.0);
    return fuser;
}

Tensor kim_fuse(const Tensor& prev, const Tensor& cur, const KimFuser& fuser) {
    Tensor x = concat_channels(prev, cur);
    x = scale_channels(x, fuser.input_scale);
    x = relu(conv2d(x, fuser.conv1.kernel, fuser.conv1.bias, 1, 1));
    x = relu(conv2d(x, fuser.conv2.kernel, fuser.conv2.bias, 1, 1));
    return x;
}

void calibrate_fuser(KimFuser& fuser, const std::vector<Tensor>& concat_inputs) {
    if (concat_inputs.empty()) throw ContractError("calibrate_fuser: no probe inputs");
    const int cin = fuser.conv1.kernel.dim(2);
    std::vector<double> sq(static_cast<size_t>(cin), 0.0);
    int64_t count = 0;
    for (const Tensor& input : concat_inputs) {
        if (input.dim(2) != cin) throw ShapeError("calibrate_fuser: channel mismatch");
        const int hw = input.dim(0) * input.dim(1);
        for (int px = 0; px < hw; ++px)
            for (int c = 0; c < cin; ++c) {
                const double v = input.data()[static_cast<size_t>(px) * cin + c];
                sq[static_cast<size_t>(c)] += v * v;
            }
        count += hw;
    }
    // The preconditioner rescales the data, not the kernel, so gradient
    // magnitudes stay matched to the forward scale. Near-dead channels are
    // floored against the global scale so noise is never amplified unboundedly.
    double global_ms = 0.0;
    for (int c = 0; c < cin; ++c) global_ms += sq[static_cast<size_t>(c)];
    const double global_rms = std::sqrt(global_ms / (static_cast<double>(count) * cin));
    const double floor = std::max(0.05 * global_rms, 1e-9);
    for (int c = 0; c < cin; ++c) {
        const double rms = std::sqrt(sq[static_cast<size_t>(c)] / static_cast<double>(count));
        fuser.input_scale.data()[static_cast<size_t>(c)] = 1.0 / std::max(rms, floor);
    }
}

PipelineState PipelineState::init(const ModelConfig& config, Rng& rng) {
    PipelineState state;
    state.config = config;
    Rng r1 = rng.fork("stage1"), r2 = rng.fork("stage2"), r3 = rng.fork("stage3");
    const int k = config.k_stage;
    state.enc1 = StageEncoder::init(1, k, r1);
    state.enc2 = StageEncoder::init(2, k, r2);
    state.enc3 = StageEncoder::init(3, k, r3);
    const int prior = config.use_fg_prior ? 1 : 0;
    state.fuse2 = KimFuser::init(k + prior + k, k, r2);
    state.fuse3 = KimFuser::init(k + k, k, r3);
    state.stage1_head = ConvLayer::init(1, 1, k, 2, r1);
    state.head2 = HeadParams::init(k, r2);
    state.head3 = HeadParams::init(k, r3);
    state.freeze_all();
    return state;
}

namespace {

void push_conv(std::vector<Tensor>& out, const ConvLayer& layer) {
    out.push_back(layer.kernel);
    out.push_back(layer.bias);
}

}  // namespace

std::vector<Tensor> PipelineState::stage_params(int stage) {
    std::vector<Tensor> out;
    switch (stage) {
        case 1:
            for (const auto& b : enc1.blocks) push_conv(out, b);
            push_conv(out, stage1_head);
            break;
        case 2:
            for (const auto& b : enc2.blocks) push_conv(out, b);
            push_conv(out, fuse2.conv1);
            push_conv(out, fuse2.conv2);
            for (auto& t : head2.params()) out.push_back(t);
            break;
        case 3:
            for (const auto& b : enc3.blocks) push_conv(out, b);
            if (config.use_kim) {
                push_conv(out, fuse3.conv1);
                push_conv(out, fuse3.conv2);
            }
            for (auto& t : head3.params()) out.push_back(t);
            break;
        default:
            throw ContractError("stage_params: stage must be 1..3");
    }
    return out;
}

std::vector<std::pair<std::string, Tensor>> PipelineState::named_params() {
    std::vector<std::pair<std::string, Tensor>> out;
    auto add_conv = [&](const std::string& name, const ConvLayer& layer) {
        out.emplace_back(name + ".kernel", layer.kernel);
        out.emplace_back(name + ".bias", layer.bias);
    };
    auto add_enc = [&](const std::string& name, const StageEncoder& enc) {
        for (size_t i = 0; i < enc.blocks.size(); ++i)
            add_conv(name + ".b" + std::to_string(i), enc.blocks[i]);
    };
    auto add_head = [&](const std::string& name, const HeadParams& head) {
        out.emplace_back(name + ".phi.kernel", head.phi_kernel);
        out.emplace_back(name + ".phi.bias", head.phi_bias);
        out.emplace_back(name + ".omega.kernel", head.omega_kernel);
        out.emplace_back(name + ".omega.bias", head.omega_bias);
    };
    add_enc("enc1", enc1);
    add_enc("enc2", enc2);
    add_enc("enc3", enc3);
    add_conv("fuse2.c1", fuse2.conv1);
    add_conv("fuse2.c2", fuse2.conv2);
    add_conv("fuse3.c1", fuse3.conv1);
    add_conv("fuse3.c2", fuse3.conv2);
    add_conv("stage1_head", stage1_head);
    add_head("head2", head2);
    add_head("head3", head3);
    return out;
}

void PipelineState::freeze_all() {
    for (auto& [name, t] : named_params()) t.set_requires_grad(false);
}

void PipelineState::set_trainable_stage(int stage) {
    freeze_all();
    for (Tensor& t : stage_params(stage)) t.set_requires_grad(true);
}

Tensor stage1_forward(const PipelineState& state, const Tensor& image) {
    Tensor g1 = encode(state.enc1, image);
    Tensor logits = conv2d(g1, state.stage1_head.kernel, state.stage1_head.bias);
    return softmax_channels(logits);
}

namespace {

// g1, optionally extended with the stage-1 foreground probability channel.
Tensor stage2_prev(const PipelineState& state, const Tensor& image) {
    Tensor g1 = encode(state.enc1, image);
    if (!state.config.use_fg_prior) return g1;
    Tensor fg_probs = conv2d(g1, state.stage1_head.kernel, state.stage1_head.bias);
    fg_probs = softmax_channels(fg_probs);
    return concat_channels(g1, slice_channels(fg_probs, 1, 1));
}

}  // namespace

Tensor features_for_stage(const PipelineState& state, const Tensor& image, int stage) {
    if (stage == 1) return encode(state.enc1, image);
    if (stage == 3 && !state.config.use_kim) return encode(state.enc3, image);
    if (!state.config.use_kim) throw ContractError("features_for_stage: stage disabled");
    Tensor h2 = kim_fuse(stage2_prev(state, image), encode(state.enc2, image), state.fuse2);
    if (stage == 2) return h2;
    return kim_fuse(h2, encode(state.enc3, image), state.fuse3);
}

Tensor fuser_input(const PipelineState& state, const Tensor& image, int stage) {
    if (!state.config.use_kim) throw ContractError("fuser_input: infusion disabled");
    if (stage == 2)
        return concat_channels(stage2_prev(state, image), encode(state.enc2, image));
    if (stage == 3)
        return concat_channels(features_for_stage(state, image, 2), encode(state.enc3, image));
    throw ContractError("fuser_input: stage must be 2 or 3");
}

void update_bank_from_support(PipelineState& state, int stage, const Tensor& support_image,
                              const LabelMask& support_mask_fine,
                              const std::vector<int>& base_classes_fine) {
    if (stage != 2 && stage != 3) throw ContractError("update_bank_from_support: stage must be 2 or 3");
    const ClassTaxonomy& taxonomy = ClassTaxonomy::standard();
    const LabelMask mask =
        stage == 2 ? aggregate_to_parents(support_mask_fine, taxonomy) : support_mask_fine;
    const std::vector<int> base =
        stage == 2 ? parent_base_classes(base_classes_fine, taxonomy) : base_classes_fine;
    Tensor features = features_for_stage(state, support_image, stage);
    const LabelMask mask_ds = resize_mask_nearest(mask, features.dim(0), features.dim(1));
    PrototypeBank& bank = stage == 2 ? state.bank2 : state.bank3;
    for (int c : mask_ds.present_classes()) {
        Tensor p_now = compute_prototype(features, class_selector(mask_ds, c));
        update_dynamic(bank, c, p_now.data(), base);
    }
}

std::vector<int> parent_base_classes(const std::vector<int>& base_fine,
                                     const ClassTaxonomy& taxonomy) {
    std::set<int> parents;
    for (int id : base_fine) {
        const int p = taxonomy.parent_of[static_cast<size_t>(id)];
        if (p != cls::kParentBackground) parents.insert(p);
    }
    return {parents.begin(), parents.end()};
}

EpisodeForward stage_meta_forward(PipelineState& state, int stage, const Episode& episode,
                                  Phase phase, const MetaForwardOptions& options) {
    if (stage != 2 && stage != 3) throw ContractError("stage_meta_forward: stage must be 2 or 3");
    if (stage == 2 && !state.config.use_kim)
        throw ContractError("stage_meta_forward: stage 2 is disabled without infusion");

    const ClassTaxonomy& taxonomy = ClassTaxonomy::standard();
    const LabelMask support_mask =
        stage == 2 ? aggregate_to_parents(episode.support_mask, taxonomy) : episode.support_mask;
    const std::vector<int> base_for_stage =
        stage == 2 ? parent_base_classes(options.base_classes, taxonomy) : options.base_classes;

    Tensor support_features = features_for_stage(state, episode.support_image, stage);
    Tensor query_features = features_for_stage(state, episode.query_image, stage);
    const LabelMask mask_ds =
        resize_mask_nearest(support_mask, support_features.dim(0), support_features.dim(1));

    PrototypeBank& bank = stage == 2 ? state.bank2 : state.bank3;
    EpisodeForward out;
    DistanceMaps dm;
    for (int c : mask_ds.present_classes()) {
        try {
            auto protos = effective_prototypes(bank, support_features, mask_ds, {c}, phase,
                                               base_for_stage, options.test_base_from_bank);
            Tensor map = cosine_map(query_features, protos[0].second);
            dm.classes.push_back(c);
            dm.maps.push_back(std::move(map));
        } catch (const DegeneratePrototype&) {
            // all-zero features over the region; the class cannot be represented
            continue;
        }
    }
    if (dm.classes.empty()) throw EmptyMask("stage_meta_forward: no classes survive downsampling");

    out.classes = dm.classes;
    out.agm_probs = agm_forward(query_features, dm, stage == 2 ? state.head2 : state.head3);
    out.ncm_probs = ncm_forward(dm);
    return out;
}

}  // namespace osp
