#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "osp/synth.hpp"
#include "osp/taxonomy.hpp"

using namespace osp;

namespace {
const ClassTaxonomy& tax() { return ClassTaxonomy::standard(); }
}

TEST_CASE("select_fold returns the documented novel sets and a partition") {
    auto f1 = select_fold(tax(), 1);
    CHECK(f1.novel == std::vector<int>{cls::kPants, cls::kLegs, cls::kShoes});
    auto f2 = select_fold(tax(), 2);
    CHECK(f2.novel == std::vector<int>{cls::kHat, cls::kHair, cls::kFace});

    for (const auto& fold : {f1, f2}) {
        std::set<int> all(fold.base.begin(), fold.base.end());
        for (int c : fold.novel) {
            CHECK(all.count(c) == 0);
            all.insert(c);
        }
        all.insert(cls::kBackground);
        CHECK(static_cast<int>(all.size()) == tax().fine_count());
    }
    CHECK_THROWS_AS(select_fold(tax(), 3), ConfigError);
}

TEST_CASE("fold novel classes share one parent area") {
    for (const auto& [fold, novel] : tax().folds) {
        std::set<int> parents;
        for (int c : novel) parents.insert(tax().parent_of[static_cast<size_t>(c)]);
        CHECK(parents.size() == 1);
    }
}

TEST_CASE("relabel_for_training maps novel ids to background and is idempotent") {
    auto fold = select_fold(tax(), 1);
    LabelMask mask(2, 3);
    mask.labels = {cls::kHat, cls::kPants, cls::kLegs, cls::kArms, cls::kShoes, cls::kBackground};
    LabelMask out = relabel_for_training(mask, fold.base);
    CHECK(out.labels == std::vector<uint8_t>{cls::kHat, cls::kBackground, cls::kBackground,
                                             cls::kArms, cls::kBackground, cls::kBackground});
    LabelMask again = relabel_for_training(out, fold.base);
    CHECK(again.labels == out.labels);
    CHECK(out.labels.size() == mask.labels.size());

    // all-base mask unchanged
    LabelMask base_only(1, 3);
    base_only.labels = {cls::kHat, cls::kArms, cls::kFace};
    CHECK(relabel_for_training(base_only, fold.base).labels == base_only.labels);

    // all-novel mask becomes background
    LabelMask novel_only(1, 3);
    novel_only.labels = {cls::kPants, cls::kLegs, cls::kShoes};
    LabelMask relabeled_novel = relabel_for_training(novel_only, fold.base);
    for (uint8_t v : relabeled_novel.labels)
        CHECK(v == cls::kBackground);
}

TEST_CASE("merge_unsupported drops classes missing from the support set") {
    LabelMask gt(1, 4);
    gt.labels = {cls::kHat, cls::kFace, cls::kArms, cls::kBackground};

    LabelMask full = merge_unsupported(gt, {cls::kBackground, cls::kHat, cls::kFace, cls::kArms});
    CHECK(full.labels == gt.labels);

    LabelMask no_hat = merge_unsupported(gt, {cls::kBackground, cls::kFace, cls::kArms});
    CHECK(no_hat.labels == std::vector<uint8_t>{cls::kBackground, cls::kFace, cls::kArms,
                                                cls::kBackground});

    LabelMask none = merge_unsupported(gt, {});
    for (uint8_t v : none.labels) CHECK(v == cls::kBackground);
}

TEST_CASE("aggregate_to_parents follows the hierarchy") {
    LabelMask mask(1, 5);
    mask.labels = {cls::kPants, cls::kLegs, cls::kShoes, cls::kBackground, cls::kHat};
    LabelMask parents = aggregate_to_parents(mask, tax());
    CHECK(parents.labels == std::vector<uint8_t>{cls::kLegsArea, cls::kLegsArea, cls::kLegsArea,
                                                 cls::kParentBackground, cls::kHead});
    CHECK(parents.space == LabelSpace::Parent);

    LabelMask empty(2, 2);
    CHECK(aggregate_to_parents(empty, tax()).labels == std::vector<uint8_t>(4, 0));

    // hierarchy consistency: parents then foreground == foreground directly
    LabelMask via_parents = to_foreground(aggregate_to_parents(mask, tax()));
    LabelMask direct = to_foreground(mask);
    CHECK(via_parents.labels == direct.labels);

    // ids after aggregation are parent ids or background
    for (uint8_t v : parents.labels) CHECK(v < cls::kParentCount);
}

TEST_CASE("to_foreground binarizes and conserves pixel counts") {
    LabelMask mask(1, 4);
    mask.labels = {cls::kBackground, cls::kDress, cls::kShoes, cls::kHair};
    LabelMask fg = to_foreground(mask);
    CHECK(fg.labels == std::vector<uint8_t>{0, 1, 1, 1});
    int nonzero = 0;
    for (uint8_t v : mask.labels) nonzero += v != 0;
    int fg_count = 0;
    for (uint8_t v : fg.labels) fg_count += v != 0;
    CHECK(nonzero == fg_count);

    LabelMask empty(3, 3);
    LabelMask empty_fg = to_foreground(empty);
    for (uint8_t v : empty_fg.labels) CHECK(v == 0);
}

TEST_CASE("manifest round trip and episode enumeration") {
    SplitManifest m;
    m.fold = 2;
    for (int i = 0; i < 4; ++i)
        m.s_test.push_back({"s_test/img_" + std::to_string(i) + ".ppm",
                            "s_test/msk_" + std::to_string(i) + ".pgm"});
    for (int i = 0; i < 3; ++i)
        m.q_test.push_back({"q_test/img_" + std::to_string(i) + ".ppm",
                            "q_test/msk_" + std::to_string(i) + ".pgm"});
    m.s_train.push_back({"s_train/img_0.ppm", "s_train/msk_0.pgm"});
    m.q_train.push_back({"q_train/img_0.ppm", "q_train/msk_0.pgm"});
    m.fixed_supports = {0, 2};

    const auto path = std::filesystem::temp_directory_path() / "osp_manifest_test.json";
    m.save(path);
    SplitManifest loaded = SplitManifest::load(path);
    CHECK(loaded.fold == 2);
    CHECK(loaded.s_test.size() == 4);
    CHECK(loaded.fixed_supports == m.fixed_supports);
    CHECK(loaded.s_test[1].image == "s_test/img_1.ppm");

    auto refs = enumerate_test_episodes(loaded);
    REQUIRE(refs.size() == 6);  // 3 queries x 2 supports
    CHECK(refs[0].query_index == 0);
    CHECK(refs[0].support_index == 0);
    CHECK(refs[1].support_index == 2);
    auto again = enumerate_test_episodes(loaded);
    for (size_t i = 0; i < refs.size(); ++i) {
        CHECK(refs[i].query_index == again[i].query_index);
        CHECK(refs[i].support_index == again[i].support_index);
    }
    std::filesystem::remove(path);
}

TEST_CASE("train episode sampling is deterministic and near uniform") {
    SplitManifest m;
    for (int i = 0; i < 8; ++i) {
        m.s_train.push_back({"s", "s"});
        m.q_train.push_back({"q", "q"});
    }
    Rng rng_a(42), rng_b(42);
    for (int i = 0; i < 100; ++i) {
        EpisodeRef a = sample_train_episode_ref(m, rng_a);
        EpisodeRef b = sample_train_episode_ref(m, rng_b);
        CHECK(a.query_index == b.query_index);
        CHECK(a.support_index == b.support_index);
    }

    // 10k draws over 8 supports: expected 1250 each, sigma = sqrt(n p (1-p)) ~ 33.07
    Rng rng(7);
    std::vector<int> counts(8, 0);
    for (int i = 0; i < 10000; ++i) ++counts[static_cast<size_t>(sample_train_episode_ref(m, rng).support_index)];
    const double sigma = std::sqrt(10000.0 * (1.0 / 8) * (7.0 / 8));
    for (int c : counts) CHECK(std::abs(c - 1250.0) < 5.0 * sigma);

    SplitManifest empty;
    Rng r2(1);
    CHECK_THROWS_AS(sample_train_episode_ref(empty, r2), ConfigError);
}

TEST_CASE("resize_mask_nearest keeps ids and hits block centers") {
    LabelMask mask(4, 4);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) mask.at(y, x) = static_cast<uint8_t>(y < 2 ? 1 : 2);
    LabelMask small = resize_mask_nearest(mask, 2, 2);
    CHECK(small.labels == std::vector<uint8_t>{1, 1, 2, 2});
    LabelMask same = resize_mask_nearest(mask, 4, 4);
    CHECK(same.labels == mask.labels);

    std::set<uint8_t> in_ids(mask.labels.begin(), mask.labels.end());
    LabelMask big = resize_mask_nearest(mask, 9, 5);
    for (uint8_t v : big.labels) CHECK(in_ids.count(v) == 1);
}

TEST_CASE("meta-training episodes never contain novel ids") {
    const auto dir = std::filesystem::temp_directory_path() / "osp_tax_episode_test";
    DatasetConfig cfg;
    cfg.seed = 11;
    cfg.counts = {6, 6, 3, 3};
    cfg.fixed_support_count = 2;
    SplitManifest manifest = generate_dataset(cfg, dir);
    auto fold = select_fold(tax(), 1);
    SampleLoader loader(manifest);
    Rng rng(5);
    for (int i = 0; i < 20; ++i) {
        Episode ep = loader.load_train_episode(sample_train_episode_ref(manifest, rng), fold.base);
        for (int c : ep.effective_class_set) {
            const bool ok = c == cls::kBackground ||
                            std::binary_search(fold.base.begin(), fold.base.end(), c);
            CHECK(ok);
        }
        for (uint8_t v : ep.support_mask.labels)
            CHECK(!std::binary_search(fold.novel.begin(), fold.novel.end(), static_cast<int>(v)));
        for (uint8_t v : ep.query_mask->labels)
            CHECK(!std::binary_search(fold.novel.begin(), fold.novel.end(), static_cast<int>(v)));
    }
    std::filesystem::remove_all(dir);
}
