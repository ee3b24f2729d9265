#include <doctest.h>

#include "osp/metrics.hpp"
#include "osp/rng.hpp"

using namespace osp;

namespace {

LabelMask random_mask(int h, int w, int max_id, Rng& rng) {
    LabelMask m(h, w);
    for (uint8_t& v : m.labels) v = static_cast<uint8_t>(rng.next_int(max_id + 1));
    return m;
}

// Brute-force per-pixel counting oracle.
struct BruteCounts {
    std::map<int, int64_t> tp, fp, fn;
    int64_t correct = 0, total = 0;
};

BruteCounts brute(const LabelMask& pred, const LabelMask& gt, int max_id) {
    BruteCounts out;
    for (size_t i = 0; i < gt.labels.size(); ++i) {
        const int p = pred.labels[i], g = gt.labels[i];
        ++out.total;
        if (p == g) {
            ++out.correct;
            ++out.tp[g];
        } else {
            ++out.fp[p];
            ++out.fn[g];
        }
    }
    (void)max_id;
    return out;
}

}  // namespace

TEST_CASE("confusion diagonal and totals") {
    LabelMask a(2, 2), b(2, 2);
    a.labels = {0, 1, 2, 1};
    b.labels = {0, 1, 2, 1};
    Confusion conf({0, 1, 2});
    conf.add(a, b);
    CHECK(conf.at(0, 0) == 1);
    CHECK(conf.at(1, 1) == 2);
    CHECK(conf.at(2, 2) == 1);
    CHECK(conf.total() == 4);

    LabelMask c(3, 3);
    CHECK_THROWS_AS(conf.add(a, c), ShapeError);
}

TEST_CASE("miou endpoint values") {
    Confusion perfect({0, 1});
    LabelMask x(2, 2);
    x.labels = {0, 0, 1, 1};
    perfect.add(x, x);
    CHECK(miou(perfect, {0, 1}) == doctest::Approx(1.0));

    // fully disjoint prediction
    Confusion disjoint({0, 1});
    LabelMask p(2, 2), g(2, 2);
    p.labels = {1, 1, 0, 0};
    g.labels = {0, 0, 1, 1};
    disjoint.add(p, g);
    CHECK(miou(disjoint, {0, 1}) == doctest::Approx(0.0));

    // one class, intersection = union/3
    Confusion third({0, 1});
    LabelMask p2(1, 6), g2(1, 6);
    p2.labels = {0, 0, 1, 1, 0, 0};  // predicts pixels 2,3
    g2.labels = {0, 0, 0, 1, 1, 0};  // truth pixels 3,4
    third.add(p2, g2);
    CHECK(miou(third, {1}) == doctest::Approx(1.0 / 3.0));

    CHECK_THROWS_AS(miou(perfect, {}), ContractError);
}

TEST_CASE("miou 100 random pairs match the brute-force oracle exactly") {
    Rng rng(17);
    for (int trial = 0; trial < 100; ++trial) {
        LabelMask pred = random_mask(16, 16, 5, rng);
        LabelMask gt = random_mask(16, 16, 5, rng);
        std::vector<int> classes = {0, 1, 2, 3, 4, 5};
        Confusion conf(classes);
        conf.add(pred, gt);
        BruteCounts counts = brute(pred, gt, 5);

        // exact equality: both sides are ratios of identical integers
        double sum = 0.0;
        int n = 0;
        for (int c : classes) {
            const int64_t tp = counts.tp[c], fp = counts.fp[c], fn = counts.fn[c];
            if (tp + fp + fn == 0) continue;
            sum += static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
            ++n;
        }
        const double expect = n ? sum / n : 0.0;
        CHECK(miou(conf, classes) == expect);
        CHECK(overall_accuracy(conf) ==
              static_cast<double>(counts.correct) / static_cast<double>(counts.total));
    }
}

TEST_CASE("binary_iou oracle and symmetry") {
    Confusion perfect({0, 1});
    LabelMask x(2, 2);
    x.labels = {0, 1, 0, 1};
    perfect.add(x, x);
    CHECK(binary_iou(perfect) == doctest::Approx(1.0));

    // all-foreground prediction over half-foreground truth: (0.5 + 0)/2
    Confusion half({0, 1});
    LabelMask p(1, 4), g(1, 4);
    p.labels = {1, 1, 1, 1};
    g.labels = {1, 1, 0, 0};
    half.add(p, g);
    CHECK(binary_iou(half) == doctest::Approx(0.25));

    // swapping fg/bg of both sides leaves the mean unchanged
    Rng rng(23);
    for (int trial = 0; trial < 20; ++trial) {
        LabelMask a = random_mask(8, 8, 1, rng);
        LabelMask b = random_mask(8, 8, 1, rng);
        Confusion ab({0, 1});
        ab.add(a, b);
        LabelMask a2 = a, b2 = b;
        for (uint8_t& v : a2.labels) v = static_cast<uint8_t>(1 - v);
        for (uint8_t& v : b2.labels) v = static_cast<uint8_t>(1 - v);
        Confusion swapped({0, 1});
        swapped.add(a2, b2);
        CHECK(binary_iou(ab) == doctest::Approx(binary_iou(swapped)).epsilon(1e-12));
    }

    Confusion three({0, 1, 2});
    CHECK_THROWS_AS(binary_iou(three), ContractError);
}

TEST_CASE("overall accuracy endpoints") {
    Confusion conf({0, 1});
    LabelMask p(2, 2), g(2, 2);
    p.labels = {1, 1, 0, 0};
    g.labels = {1, 1, 1, 0};
    conf.add(p, g);
    CHECK(overall_accuracy(conf) == doctest::Approx(0.75));

    Confusion wrong({0, 1});
    LabelMask q(1, 2), h(1, 2);
    q.labels = {1, 0};
    h.labels = {0, 1};
    wrong.add(q, h);
    CHECK(overall_accuracy(wrong) == doctest::Approx(0.0));
}

TEST_CASE("confusion accumulation is order independent") {
    Rng rng(29);
    std::vector<std::pair<LabelMask, LabelMask>> pairs;
    for (int i = 0; i < 10; ++i)
        pairs.emplace_back(random_mask(8, 8, 3, rng), random_mask(8, 8, 3, rng));
    Confusion forward({0, 1, 2, 3}), backward_acc({0, 1, 2, 3});
    for (const auto& [p, g] : pairs) forward.add(p, g);
    for (auto it = pairs.rbegin(); it != pairs.rend(); ++it) backward_acc.add(it->first, it->second);
    CHECK(forward.counts == backward_acc.counts);
    CHECK(miou(forward, {0, 1, 2, 3}) == miou(backward_acc, {0, 1, 2, 3}));
}

TEST_CASE("miou over a single class equals that class IoU") {
    Rng rng(31);
    LabelMask pred = random_mask(8, 8, 3, rng);
    LabelMask gt = random_mask(8, 8, 3, rng);
    Confusion conf({0, 1, 2, 3});
    conf.add(pred, gt);
    auto per = per_class_iou(conf);
    for (int c : {0, 1, 2, 3})
        if (per.count(c)) CHECK(miou(conf, {c}) == per.at(c));
}

TEST_CASE("absent classes are excluded from the mean") {
    Confusion conf({0, 1, 2});
    LabelMask p(1, 4), g(1, 4);
    p.labels = {0, 0, 1, 1};
    g.labels = {0, 1, 1, 0};  // class 2 never appears
    conf.add(p, g);
    auto per = per_class_iou(conf);
    CHECK(per.count(2) == 0);
    CHECK(miou(conf, {0, 1, 2}) == doctest::Approx((per.at(0) + per.at(1)) / 2.0));
}

TEST_CASE("metrics report serializes deterministically") {
    MetricsReport r;
    r.mode = "k-way";
    r.fold = 1;
    r.episode_count = 100;
    r.novel_miou = 0.25;
    r.human_miou = 0.5;
    r.overall_acc = 0.75;
    r.class_iou[1] = 0.5;
    r.class_iou[9] = 0.125;
    const std::string a = r.to_json();
    const std::string b = r.to_json();
    CHECK(a == b);
    CHECK(a.find("\"novel_miou\": 0.25") != std::string::npos);
    CHECK(a.find("\"hat\"") != std::string::npos);
    CHECK(a.find("bi_iou") == std::string::npos);
}
