#include <doctest.h>

#include "osp/config.hpp"

using namespace osp;

TEST_CASE("defaults parse from an empty document") {
    RunConfig cfg = RunConfig::parse("{}", ".");
    CHECK(cfg.data.counts.s_train == 256);
    CHECK(cfg.data.counts.q_train == 256);
    CHECK(cfg.model.k_stage == 32);
    CHECK(cfg.model.use_kim);
    CHECK(cfg.train.base_lr == 0.001);
    CHECK(cfg.eval.mode == EvalMode::KWay);
    CHECK(cfg.ablate.seeds == std::vector<uint64_t>{1, 2, 3});
}

TEST_CASE("unknown keys are rejected with their full path") {
    CHECK_THROWS_WITH_AS(RunConfig::parse(R"({"data": {"bogus": 1}})", "."),
                         doctest::Contains("data.bogus"), ConfigError);
    CHECK_THROWS_WITH_AS(RunConfig::parse(R"({"mystery": {}})", "."),
                         doctest::Contains("mystery"), ConfigError);
    CHECK_THROWS_WITH_AS(RunConfig::parse(R"({"train": {"lr": 0.1}})", "."),
                         doctest::Contains("train.lr"), ConfigError);
}

TEST_CASE("field validation names the offending field") {
    CHECK_THROWS_WITH_AS(RunConfig::parse(R"({"data": {"s_train": 0}})", "."),
                         doctest::Contains("data.s_train"), ConfigError);
    CHECK_THROWS_AS(RunConfig::parse(R"({"data": {"fold": 3}})", "."), ConfigError);
    CHECK_THROWS_AS(RunConfig::parse(R"({"eval": {"mode": "two-way"}})", "."), ConfigError);
    CHECK_THROWS_AS(RunConfig::parse(R"({"train": {"base_lr": 0}})", "."), ConfigError);
    CHECK_THROWS_AS(RunConfig::parse(R"({"train": {"fixed_beta": 1.5}})", "."), ConfigError);
    CHECK_THROWS_AS(RunConfig::parse(R"({"train": {"epochs": 4, "static_proto_epochs": 9}})", "."),
                    ConfigError);
    CHECK_THROWS_AS(RunConfig::parse("[1,2]", "."), ConfigError);
    CHECK_THROWS_AS(RunConfig::parse("not json", "."), ConfigError);
}

TEST_CASE("sections apply and paths resolve against the config directory") {
    RunConfig cfg = RunConfig::parse(R"({
        "data": {"seed": 9, "s_train": 12, "q_train": 12, "s_test": 4, "q_test": 5,
                  "fixed_supports": 2, "fold": 2, "height": 48, "width": 64, "out_dir": "d"},
        "model": {"k_stage": 16, "use_kim": false},
        "train": {"epochs": 3, "episodes_per_epoch": 7, "base_lr": 0.05, "weight_shift": false,
                   "fixed_beta": 1.0, "seed": 4, "augment": false},
        "eval": {"mode": "one-way", "fold": 2},
        "paths": {"manifest": "d/manifest.json", "report": "out/report.json"}
    })",
                                     "/work/exp");
    CHECK(cfg.data.seed == 9);
    CHECK(cfg.data.fold == 2);
    CHECK(cfg.model.k_stage == 16);
    CHECK_FALSE(cfg.model.use_kim);
    CHECK(cfg.train.epochs == 3);
    CHECK_FALSE(cfg.train.augment_enabled);
    CHECK(cfg.train.eval_beta() == 1.0);
    CHECK(cfg.eval.mode == EvalMode::OneWay);
    CHECK(cfg.resolve(cfg.paths.report) == std::filesystem::path("/work/exp/out/report.json"));
    CHECK(cfg.checkpoint_path() == std::filesystem::path("/work/exp/ckpt/model.popc"));
}

TEST_CASE("eval beta picks the centroid head unless training was pure AGM") {
    RunConfig shifted = RunConfig::parse(R"({"train": {"weight_shift": true}})", ".");
    CHECK(shifted.train.eval_beta() == 0.0);
    RunConfig mixed = RunConfig::parse(R"({"train": {"weight_shift": false, "fixed_beta": 0.5}})", ".");
    CHECK(mixed.train.eval_beta() == 0.0);
    RunConfig agm_only = RunConfig::parse(R"({"train": {"weight_shift": false, "fixed_beta": 1.0}})", ".");
    CHECK(agm_only.train.eval_beta() == 1.0);
}
