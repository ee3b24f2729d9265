#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "osp/raster.hpp"
#include "osp/synth.hpp"

using namespace osp;

namespace fs = std::filesystem;

TEST_CASE("generate is a deterministic function of the spec") {
    FigureSpec spec = FigureSpec::sample(123);
    Sample a = generate(spec, 64, 64);
    Sample b = generate(spec, 64, 64);
    CHECK(a.image.data() == b.image.data());
    CHECK(a.mask.labels == b.mask.labels);
}

TEST_CASE("wardrobe flags control rendered parts") {
    FigureSpec spec = FigureSpec::sample(5);
    spec.hat = false;
    Sample no_hat = generate(spec, 64, 64);
    for (uint8_t v : no_hat.mask.labels) CHECK(v != cls::kHat);

    spec.hat = true;
    Sample with_hat = generate(spec, 64, 64);
    int hat_pixels = 0;
    for (uint8_t v : with_hat.mask.labels) hat_pixels += v == cls::kHat;
    CHECK(hat_pixels >= 8);
}

TEST_CASE("dress-less figures contain the full leg wardrobe") {
    int checked = 0;
    for (uint64_t seed = 0; seed < 1000; ++seed) {
        FigureSpec spec = FigureSpec::sample(seed);
        if (spec.dress) continue;
        ++checked;
        Sample s = generate(spec, 64, 64);
        std::set<uint8_t> present(s.mask.labels.begin(), s.mask.labels.end());
        for (uint8_t id : {cls::kPants, cls::kLegs, cls::kShoes, cls::kHair, cls::kFace})
            CHECK(present.count(id) == 1);
    }
    CHECK(checked > 300);
}

TEST_CASE("every class appears in at least 20 percent of samples") {
    std::array<int, cls::kFineCount> seen{};
    const int n = 1000;
    for (uint64_t seed = 0; seed < n; ++seed) {
        Sample s = generate(FigureSpec::sample(seed), 64, 64);
        std::set<uint8_t> present(s.mask.labels.begin(), s.mask.labels.end());
        for (uint8_t id : present) ++seen[id];
    }
    for (int id = 0; id < cls::kFineCount; ++id) {
        INFO("class " << ClassTaxonomy::standard().fine_names[static_cast<size_t>(id)]);
        CHECK(seen[static_cast<size_t>(id)] >= n / 5);
    }
}

TEST_CASE("geometric layering: shoes below legs below pants top, hat above hair") {
    for (uint64_t seed = 100; seed < 200; ++seed) {
        FigureSpec spec = FigureSpec::sample(seed);
        Sample s = generate(spec, 64, 64);
        auto rows = [&](uint8_t id) {
            int min_r = 1000, max_r = -1;
            double mean = 0;
            int count = 0;
            for (int y = 0; y < 64; ++y)
                for (int x = 0; x < 64; ++x)
                    if (s.mask.at(y, x) == id) {
                        min_r = std::min(min_r, y);
                        max_r = std::max(max_r, y);
                        mean += y;
                        ++count;
                    }
            struct R {
                int min, max;
                double mean;
                int count;
            };
            return R{min_r, max_r, count ? mean / count : 0.0, count};
        };
        auto legs = rows(cls::kLegs), shoes = rows(cls::kShoes);
        REQUIRE(legs.count > 0);
        REQUIRE(shoes.count > 0);
        CHECK(shoes.mean > legs.mean);
        CHECK(shoes.min > legs.min);
        if (!spec.dress) {
            auto pants = rows(cls::kPants);
            REQUIRE(pants.count > 0);
            CHECK(legs.min > pants.min);  // legs sit below the pants top edge
            CHECK(legs.mean > pants.mean);
        }
        if (spec.hat) {
            auto hat = rows(cls::kHat), hair = rows(cls::kHair);
            REQUIRE(hat.count > 0);
            CHECK(hat.mean < hair.mean);
            CHECK(hat.min < hair.min);
        }
    }
}

TEST_CASE("mask ids never exceed the taxonomy bound") {
    for (uint64_t seed = 300; seed < 400; ++seed) {
        Sample s = generate(FigureSpec::sample(seed), 64, 64);
        for (uint8_t v : s.mask.labels) CHECK(v < cls::kFineCount);
    }
}

TEST_CASE("canvas below the minimum is rejected") {
    CHECK_THROWS_AS(generate(FigureSpec::sample(1), 32, 64), GenError);
}

TEST_CASE("ppm/pgm round trips are exact") {
    const fs::path dir = fs::temp_directory_path() / "osp_raster_test";
    fs::create_directories(dir);
    Sample s = generate(FigureSpec::sample(9), 64, 48);

    write_ppm(dir / "img.ppm", s.image);
    Tensor img = read_ppm(dir / "img.ppm");
    REQUIRE(img.shape() == s.image.shape());
    // round trip is exact at byte granularity
    write_ppm(dir / "img2.ppm", img);
    Tensor img2 = read_ppm(dir / "img2.ppm");
    CHECK(img.data() == img2.data());

    write_pgm(dir / "msk.pgm", s.mask);
    LabelMask mask = read_pgm(dir / "msk.pgm");
    CHECK(mask.labels == s.mask.labels);

    LabelMask tiny(2, 2);
    tiny.labels = {0, 0, 0, 0};
    write_pgm(dir / "tiny.pgm", tiny);
    std::ifstream in(dir / "tiny.pgm", std::ios::binary);
    std::string contents((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(contents == std::string("P5\n2 2\n255\n") + std::string(4, '\0'));

    LabelMask eleven(1, 1);
    eleven.labels = {11};
    write_pgm(dir / "c11.pgm", eleven);
    CHECK(read_pgm(dir / "c11.pgm").labels == std::vector<uint8_t>{11});

    std::ofstream bad(dir / "bad.ppm", std::ios::binary);
    bad << "P3\n2 2\n255\n";
    bad.close();
    CHECK_THROWS_AS(read_ppm(dir / "bad.ppm"), FormatError);
    fs::remove_all(dir);
}

TEST_CASE("generate_dataset writes disjoint splits deterministically") {
    const fs::path dir_a = fs::temp_directory_path() / "osp_ds_a";
    const fs::path dir_b = fs::temp_directory_path() / "osp_ds_b";
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
    DatasetConfig cfg;
    cfg.seed = 77;
    cfg.counts = {8, 8, 4, 4};
    cfg.fixed_support_count = 2;

    SplitManifest ma = generate_dataset(cfg, dir_a);
    SplitManifest mb = generate_dataset(cfg, dir_b);

    CHECK(ma.s_train.size() == 8);
    CHECK(ma.q_train.size() == 8);
    CHECK(ma.s_test.size() == 4);
    CHECK(ma.q_test.size() == 4);
    CHECK(ma.fixed_supports.size() == 2);

    std::set<std::string> paths;
    for (const auto* split : {&ma.s_train, &ma.q_train, &ma.s_test, &ma.q_test})
        for (const auto& e : *split) CHECK(paths.insert(e.image).second);

    // identical seeds give byte-identical trees
    for (const auto* split : {&ma.s_train, &ma.q_train, &ma.s_test, &ma.q_test})
        for (const auto& e : *split) {
            std::ifstream fa(dir_a / e.image, std::ios::binary);
            std::ifstream fb(dir_b / e.image, std::ios::binary);
            std::string ca((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
            std::string cb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
            CHECK(ca == cb);
        }

    CHECK_THROWS_AS(generate_dataset(DatasetConfig{1, 64, 64, {0, 1, 1, 1}, 1, 1}, dir_a),
                    ConfigError);
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
}
