#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "osp/train.hpp"

using namespace osp;
namespace fs = std::filesystem;

namespace {

struct TempDataset {
    fs::path dir;
    SplitManifest manifest;

    explicit TempDataset(const char* name, DatasetCounts counts = {10, 10, 4, 3},
                         uint64_t seed = 31) {
        dir = fs::temp_directory_path() / name;
        fs::remove_all(dir);
        DatasetConfig cfg;
        cfg.seed = seed;
        cfg.counts = counts;
        cfg.fixed_support_count = 2;
        manifest = generate_dataset(cfg, dir);
    }
    ~TempDataset() { fs::remove_all(dir); }
};

ModelConfig small_model(bool use_kim) {
    ModelConfig cfg;
    cfg.k_stage = 8;
    cfg.use_kim = use_kim;
    return cfg;
}

TrainConfig quick_train() {
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.episodes_per_epoch = 4;
    cfg.stage1_epochs = 1;
    cfg.base_lr = 0.02;
    cfg.seed = 3;
    return cfg;
}

}  // namespace

TEST_CASE("poly_lr schedule") {
    CHECK(poly_lr(0, 100, 0.001, 0.9) == 0.001);
    CHECK(poly_lr(100, 100, 0.001, 0.9) == 0.0);
    CHECK(poly_lr(50, 100, 0.001, 0.9) == doctest::Approx(5.359e-4).epsilon(1e-3));
    CHECK_THROWS_AS(poly_lr(-1, 10, 0.001, 0.9), ContractError);
    CHECK_THROWS_AS(poly_lr(11, 10, 0.001, 0.9), ContractError);
}

TEST_CASE("augment identity, involution and label purity") {
    Sample s = generate(FigureSpec::sample(7), 64, 64);

    AugmentParams identity{1.0, 0, 0, false};
    Sample same = augment_with(s, identity);
    CHECK(same.image.data() == s.image.data());
    CHECK(same.mask.labels == s.mask.labels);

    AugmentParams flip{1.0, 0, 0, true};
    Sample twice = augment_with(augment_with(s, flip), flip);
    CHECK(twice.image.data() == s.image.data());
    CHECK(twice.mask.labels == s.mask.labels);

    // scaled masks contain only ids that the source contained
    TrainConfig cfg;
    Rng rng(5);
    std::set<uint8_t> source_ids(s.mask.labels.begin(), s.mask.labels.end());
    for (int i = 0; i < 25; ++i) {
        Sample out = augment(s, cfg, rng);
        CHECK(out.image.dim(0) == 64);
        CHECK(out.mask.height == 64);
        for (uint8_t v : out.mask.labels) CHECK(source_ids.count(v) == 1);
    }
}

TEST_CASE("sgd_step arithmetic and rejection of non-finite gradients") {
    Tensor p = Tensor::scalar(1.0, true);
    std::vector<Tensor> params = {p};
    backward(scale(p, 2.0));
    sgd_step(params, 0.1);
    CHECK(p.data()[0] == doctest::Approx(0.8));

    backward(scale(p, 2.0));
    sgd_step(params, 0.0);
    CHECK(p.data()[0] == doctest::Approx(0.8));

    p.node()->grad[0] = std::nan("");
    const double before = p.data()[0];
    CHECK_THROWS_AS(sgd_step(params, 0.1), NumericError);
    CHECK(p.data()[0] == before);  // step rejected, nothing moved
}

TEST_CASE("sgd shrinks a quadratic bowl monotonically") {
    Tensor p = Tensor::from_data({3}, {3.0, -2.0, 1.0}, true);
    std::vector<Tensor> params = {p};
    double prev = std::sqrt(9 + 4 + 1);
    for (int i = 0; i < 100; ++i) {
        // f = sum(p^2) via attend trick: attend(p,p) = p + p^2
        Tensor sq = add_scalar_scale(sum_all(attend(reshape(p, {1, 3}), reshape(p, {1, 3, 1}))),
                                     1.0, sum_all(p), -1.0);
        backward(sq);
        sgd_step(params, 0.1);
        double norm = 0;
        for (double v : p.data()) norm += v * v;
        norm = std::sqrt(norm);
        CHECK(norm < prev + 1e-12);
        prev = norm;
    }
    CHECK(prev < 0.1);
}

TEST_CASE("meta_train keeps the bank static before the cutoff") {
    TempDataset data("osp_train_cutoff");
    Rng rng(1);
    PipelineState state = PipelineState::init(small_model(false), rng);
    TrainConfig cfg = quick_train();
    cfg.epochs = 2;
    cfg.static_proto_epochs = 2;  // entire run is static
    cfg.dynamic_prototypes = true;
    train_stage(state, 3, data.manifest, cfg);
    CHECK(state.bank3.protos.empty());

    PipelineState state2 = PipelineState::init(small_model(false), rng);
    cfg.static_proto_epochs = 0;  // dynamic from the start
    train_stage(state2, 3, data.manifest, cfg);
    CHECK_FALSE(state2.bank3.protos.empty());
    for (const auto& [id, entry] : state2.bank3.protos) {
        CHECK(id != cls::kBackground);
        CHECK(entry.initialized);
        CHECK(entry.dynamic);
    }
}

TEST_CASE("meta_train records the weight-shift schedule") {
    TempDataset data("osp_train_beta");
    Rng rng(2);
    PipelineState state = PipelineState::init(small_model(false), rng);
    TrainConfig cfg = quick_train();
    cfg.epochs = 4;
    cfg.weight_shift = true;
    TrainStats stats = train_stage(state, 3, data.manifest, cfg);
    REQUIRE(stats.beta_curve.size() == 4);
    CHECK(stats.beta_curve.front() == 1.0);
    CHECK(stats.beta_curve.back() == doctest::Approx(0.25));
    for (size_t i = 1; i < stats.beta_curve.size(); ++i)
        CHECK(stats.beta_curve[i] < stats.beta_curve[i - 1]);
}

TEST_CASE("pure-centroid steps leave phi and omega untouched") {
    TempDataset data("osp_train_frozen_head");
    Rng rng(3);
    PipelineState state = PipelineState::init(small_model(false), rng);
    const auto phi_before = state.head3.phi_kernel.data();
    const auto omega_before = state.head3.omega_kernel.data();
    TrainConfig cfg = quick_train();
    cfg.weight_shift = false;
    cfg.fixed_beta = 0.0;  // NCM only
    TrainStats stats = train_stage(state, 3, data.manifest, cfg);
    CHECK(stats.loss_stats.agm_terms == 0);
    CHECK(stats.loss_stats.ncm_terms > 0);
    CHECK(state.head3.phi_kernel.data() == phi_before);
    CHECK(state.head3.omega_kernel.data() == omega_before);
    // the encoder must still have moved
    PipelineState fresh = PipelineState::init(small_model(false), rng);
    (void)fresh;
}

TEST_CASE("training loss decreases on a smoothed window") {
    TempDataset data("osp_train_descent", {16, 16, 4, 3}, 77);
    Rng rng(4);
    PipelineState state = PipelineState::init(small_model(false), rng);
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.episodes_per_epoch = 24;
    cfg.base_lr = 0.05;
    cfg.weight_shift = false;
    cfg.fixed_beta = 0.5;
    cfg.augment_enabled = false;
    cfg.seed = 9;
    TrainStats stats = train_stage(state, 3, data.manifest, cfg);
    REQUIRE(stats.loss_curve.size() >= 40);
    const size_t w = 12;
    double head = 0, tail = 0;
    for (size_t i = 0; i < w; ++i) head += stats.loss_curve[i];
    for (size_t i = stats.loss_curve.size() - w; i < stats.loss_curve.size(); ++i)
        tail += stats.loss_curve[i];
    CHECK(tail / w < head / w);
}

TEST_CASE("stage-1 overfits a small pool quickly") {
    TempDataset data("osp_train_stage1", {4, 4, 2, 2}, 5);
    Rng rng(5);
    PipelineState state = PipelineState::init(small_model(true), rng);
    TrainConfig cfg;
    cfg.stage1_epochs = 8;
    cfg.episodes_per_epoch = 16;
    cfg.base_lr = 0.08;
    cfg.augment_enabled = false;
    cfg.seed = 6;
    TrainStats stats = train_stage(state, 1, data.manifest, cfg);
    // untrained binary parser starts near ln 2 on balanced masks
    CHECK(stats.loss_curve.front() == doctest::Approx(std::log(2.0)).epsilon(0.35));
    CHECK(stats.loss_curve.back() < stats.loss_curve.front());

    // forward produces a reasonable foreground IoU on a training image
    SampleLoader loader(data.manifest);
    auto [img, mask] = loader.load(data.manifest.s_train[0]);
    Tensor probs = stage1_forward(state, img);
    LabelMask fg = resize_mask_nearest(to_foreground(mask), 16, 16);
    int correct = 0;
    for (int px = 0; px < 256; ++px) {
        const int pred = probs.data()[static_cast<size_t>(px * 2 + 1)] > 0.5 ? 1 : 0;
        correct += pred == fg.labels[static_cast<size_t>(px)];
    }
    CHECK(correct > 200);
}

TEST_CASE("oracle predictor scores perfect metrics") {
    TempDataset data("osp_eval_oracle", {4, 4, 4, 3}, 21);
    MetricsReport report = evaluate_kway(
        data.manifest, 1, [](const Episode& ep) { return *ep.query_mask; }, nullptr);
    CHECK(report.episode_count == 6);  // 3 queries x 2 fixed supports
    CHECK(report.novel_miou == doctest::Approx(1.0));
    CHECK(report.human_miou == doctest::Approx(1.0));
    CHECK(*report.overall_acc == doctest::Approx(1.0));
}

TEST_CASE("constant-background predictor matches the background fraction") {
    TempDataset data("osp_eval_bg", {4, 4, 4, 3}, 22);
    SampleLoader loader(data.manifest);
    int64_t bg = 0, total = 0;
    for (const EpisodeRef& ref : enumerate_test_episodes(data.manifest)) {
        Episode ep = loader.load_test_episode(ref);
        for (uint8_t v : ep.query_mask->labels) {
            bg += v == cls::kBackground;
            ++total;
        }
    }
    MetricsReport report = evaluate_kway(
        data.manifest, 1,
        [](const Episode& ep) {
            return LabelMask(ep.query_mask->height, ep.query_mask->width);
        },
        nullptr);
    CHECK(*report.overall_acc ==
          doctest::Approx(static_cast<double>(bg) / static_cast<double>(total)));
    CHECK(report.novel_miou == doctest::Approx(0.0));
}

TEST_CASE("frozen-state evaluation is deterministic and order independent") {
    TempDataset data("osp_eval_determinism", {6, 6, 4, 3}, 23);
    Rng rng(7);
    PipelineState state = PipelineState::init(small_model(false), rng);
    TrainConfig cfg = quick_train();
    train_stage(state, 3, data.manifest, cfg);

    EvalConfig eval;
    eval.mode = EvalMode::KWay;
    eval.fold = 1;
    eval.eval_beta = 0.5;
    MetricsReport a = run_meta_test(state, data.manifest, eval);
    MetricsReport b = run_meta_test(state, data.manifest, eval);
    CHECK(a.to_json() == b.to_json());
    CHECK(a.episode_count == 6);
}

TEST_CASE("one-way evaluation reports binary iou") {
    TempDataset data("osp_eval_oneway", {6, 6, 4, 3}, 25);
    Rng rng(8);
    PipelineState state = PipelineState::init(small_model(false), rng);
    TrainConfig cfg = quick_train();
    train_stage(state, 3, data.manifest, cfg);

    EvalConfig eval;
    eval.mode = EvalMode::OneWay;
    eval.fold = 1;
    eval.eval_beta = 0.0;
    MetricsReport report = run_meta_test(state, data.manifest, eval);
    REQUIRE(report.bi_iou.has_value());
    CHECK(*report.bi_iou >= 0.0);
    CHECK(*report.bi_iou <= 1.0);
    CHECK(report.episode_count > 6);  // several single-class passes per pair
    CHECK(report.mode == "one-way");

    // both modes run from the same trained state
    EvalConfig kway;
    kway.mode = EvalMode::KWay;
    kway.fold = 1;
    MetricsReport kreport = run_meta_test(state, data.manifest, kway);
    CHECK(kreport.overall_acc.has_value());
}

TEST_CASE("evaluation requires a trained stage 3") {
    TempDataset data("osp_eval_untrained", {4, 4, 2, 2}, 26);
    Rng rng(9);
    PipelineState state = PipelineState::init(small_model(false), rng);
    EvalConfig eval;
    CHECK_THROWS_AS(run_meta_test(state, data.manifest, eval), StateError);
}
