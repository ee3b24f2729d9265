#include "osp/synth.hpp"

#include <algorithm>
#include <cmath>

#include "osp/raster.hpp"

namespace osp {

namespace {

struct Prim {
    enum Kind { Rect, Ellipse } kind;
    double a = 0, b = 0, c = 0, d = 0;  // rect: x0,x1,y0,y1; ellipse: cx,cy,rx,ry
    uint8_t cls = 0;

    bool contains(double x, double y) const {
        if (kind == Rect) return x >= a && x < b && y >= c && y < d;
        const double nx = (x - a) / c;
        const double ny = (y - b) / d;
        return nx * nx + ny * ny <= 1.0;
    }
};

constexpr std::array<std::array<double, 3>, cls::kFineCount> kBaseColors = {{
    {0.10, 0.10, 0.11},  // background
    {0.22, 0.48, 0.28},  // hat
    {0.42, 0.30, 0.16},  // hair
    {0.88, 0.74, 0.62},  // face (skin family)
    {0.62, 0.18, 0.22},  // upper-clothes
    {0.70, 0.26, 0.48},  // dress (near upper-clothes)
    {0.55, 0.42, 0.22},  // belt
    {0.32, 0.44, 0.52},  // bag
    {0.86, 0.72, 0.60},  // arms (skin family)
    {0.24, 0.32, 0.62},  // pants
    {0.84, 0.70, 0.58},  // legs (skin family)
    {0.36, 0.16, 0.10},  // shoes (red-brown, the darkest foreground hue)
}};

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

FigureSpec FigureSpec::sample(uint64_t seed) {
    FigureSpec spec;
    spec.seed = seed;
    Rng rng(seed);

    Rng body = rng.fork("proportions");
    spec.head_rx = 6.5 * body.uniform(0.9, 1.1);
    spec.head_ry = 5.0 * body.uniform(0.9, 1.1);
    spec.torso_half_w = 10.0 * body.uniform(0.88, 1.12);
    spec.arm_len = 13.0 * body.uniform(0.85, 1.1);
    spec.leg_gap = body.uniform(1.5, 2.8);

    Rng wardrobe = rng.fork("wardrobe");
    spec.hat = wardrobe.bernoulli(0.6);
    spec.dress = wardrobe.bernoulli(0.4);
    spec.belt = wardrobe.bernoulli(0.65);
    spec.bag = wardrobe.bernoulli(0.6);

    Rng pose = rng.fork("pose");
    spec.dx = pose.uniform(-3.0, 3.0);
    spec.dy = pose.uniform(-3.0, 3.0);
    spec.rot = pose.uniform(-0.06, 0.06);

    // Per-sample color jitter. Skin classes share one tone draw so that only
    // context separates them; each gets a small fixed offset as a weak cue.
    Rng color = rng.fork("color");
    const double skin_shift[3] = {color.gaussian(0, 0.08), color.gaussian(0, 0.08),
                                  color.gaussian(0, 0.08)};
    for (int id = 0; id < cls::kFineCount; ++id) {
        const bool skin = id == cls::kFace || id == cls::kArms || id == cls::kLegs;
        for (int ch = 0; ch < 3; ++ch) {
            double v = kBaseColors[static_cast<size_t>(id)][static_cast<size_t>(ch)];
            v += skin ? skin_shift[ch] : color.gaussian(0, 0.08);
            spec.colors[static_cast<size_t>(id)][static_cast<size_t>(ch)] = clamp01(v);
        }
        if (skin) color.gaussian(0, 0.08);  // keep draw count independent of grouping
    }
    return spec;
}

Sample generate(const FigureSpec& spec, int height, int width) {
    if (height < 48 || width < 48) throw GenError("canvas must be at least 48x48");
    const double s = std::min(height, width) / 64.0;
    const double cx = width / 2.0;

    // Paint order, later on top. Vertical layout in canvas-64 rows.
    std::vector<Prim> prims;
    const double leg_top = 38.0, leg_bottom = 56.0, shoe_bottom = 61.0;
    const double torso_top = 23.0, torso_bottom = 38.0;
    const double hem = spec.dress ? 46.0 : 48.0;
    const double half_w = spec.torso_half_w;

    auto rect = [&](double x0, double x1, double y0, double y1, uint8_t id) {
        prims.push_back({Prim::Rect, cx + x0 * s, cx + x1 * s, y0 * s, y1 * s, id});
    };
    auto ellipse = [&](double ex, double ey, double rx, double ry, uint8_t id) {
        prims.push_back({Prim::Ellipse, cx + ex * s, ey * s, rx * s, ry * s, id});
    };

    // legs strips run under the garment; only the part below the hem shows
    const double g = spec.leg_gap;
    rect(-g - 5.0, -g, leg_top, leg_bottom, cls::kLegs);
    rect(g, g + 5.0, leg_top, leg_bottom, cls::kLegs);
    rect(-g - 6.0, -g + 1.0, leg_bottom, shoe_bottom, cls::kShoes);
    rect(g - 1.0, g + 6.0, leg_bottom, shoe_bottom, cls::kShoes);
    if (spec.dress) {
        rect(-half_w - 1.0, half_w + 1.0, torso_top, hem, cls::kDress);
    } else {
        rect(-8.0, 8.0, leg_top, hem, cls::kPants);
        rect(-half_w, half_w, torso_top, torso_bottom, cls::kUpperClothes);
    }
    if (spec.belt) rect(-half_w, half_w, 36.0, 40.0, cls::kBelt);
    if (spec.bag) ellipse(half_w + 3.0, 40.0, 4.0, 5.0, cls::kBag);
    rect(-half_w - 4.0, -half_w, 37.0 - spec.arm_len, 37.0, cls::kArms);
    rect(half_w, half_w + 4.0, 37.0 - spec.arm_len, 37.0, cls::kArms);
    ellipse(0.0, 18.0, spec.head_rx, spec.head_ry, cls::kFace);
    rect(-spec.head_rx - 2.0, spec.head_rx + 2.0, 8.0, 13.0, cls::kHair);
    if (spec.hat) rect(-spec.head_rx - 1.0, spec.head_rx + 1.0, 3.0, 8.0, cls::kHat);

    Sample out;
    out.image = Tensor::zeros({height, width, 3});
    out.mask = LabelMask(height, width, LabelSpace::Fine);

    const double ccx = width / 2.0, ccy = height / 2.0;
    const double cosr = std::cos(spec.rot), sinr = std::sin(spec.rot);
    Rng noise = Rng(spec.seed).fork("noise");

    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            // inverse pose transform into figure-local coordinates
            const double px = x + 0.5 - ccx - spec.dx * s;
            const double py = y + 0.5 - ccy - spec.dy * s;
            const double lx = cosr * px + sinr * py + ccx;
            const double ly = -sinr * px + cosr * py + ccy;
            uint8_t id = cls::kBackground;
            for (auto it = prims.rbegin(); it != prims.rend(); ++it) {
                if (it->contains(lx, ly)) {
                    id = it->cls;
                    break;
                }
            }
            out.mask.at(y, x) = id;
            const auto& base = spec.colors[id];
            const double amp = id == cls::kBackground ? spec.bg_noise : spec.fg_noise;
            for (int ch = 0; ch < 3; ++ch)
                out.image.at(y, x, ch) =
                    clamp01(base[static_cast<size_t>(ch)] + noise.uniform(-amp, amp));
        }
    }

    // Every part that was requested must actually show.
    std::array<int, cls::kFineCount> count{};
    for (uint8_t v : out.mask.labels) ++count[v];
    auto require = [&](uint8_t id) {
        if (count[id] < 8)
            throw GenError("class " + ClassTaxonomy::standard().fine_names[id] +
                           " rendered with fewer than 8 pixels");
    };
    require(cls::kHair);
    require(cls::kFace);
    require(cls::kArms);
    require(cls::kLegs);
    require(cls::kShoes);
    require(spec.dress ? cls::kDress : cls::kUpperClothes);
    if (!spec.dress) require(cls::kPants);
    if (spec.hat) require(cls::kHat);
    if (spec.belt) require(cls::kBelt);
    if (spec.bag) require(cls::kBag);
    return out;
}

SplitManifest generate_dataset(const DatasetConfig& config, const std::filesystem::path& out_dir) {
    if (config.counts.s_train < 1 || config.counts.q_train < 1 || config.counts.s_test < 1 ||
        config.counts.q_test < 1)
        throw ConfigError("generate_dataset: all split counts must be >= 1");
    if (config.fixed_support_count < 1 || config.fixed_support_count > config.counts.s_test)
        throw ConfigError("generate_dataset: fixed_support_count must be in [1, s_test]");

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string());

    SplitManifest manifest;
    manifest.fold = config.fold;
    manifest.base_dir = out_dir;

    Rng master(config.seed);
    int class_bits_index = 0;
    std::vector<std::pair<int, int>> s_test_class_counts;  // (-distinct classes, index)

    auto render_split = [&](const char* name, int count,
                            std::vector<ManifestEntry>& entries) {
        std::filesystem::create_directories(out_dir / name, ec);
        if (ec) throw IoError("cannot create split directory");
        Rng split_rng = master.fork(name);
        for (int i = 0; i < count; ++i) {
            const FigureSpec spec = FigureSpec::sample(split_rng.next_u64());
            const Sample sample = generate(spec, config.height, config.width);
            char img_name[64], msk_name[64];
            std::snprintf(img_name, sizeof img_name, "%s/img_%04d.ppm", name, i);
            std::snprintf(msk_name, sizeof msk_name, "%s/msk_%04d.pgm", name, i);
            write_ppm(out_dir / img_name, sample.image);
            write_pgm(out_dir / msk_name, sample.mask);
            entries.push_back({img_name, msk_name});
            if (std::string(name) == "s_test") {
                const int distinct = static_cast<int>(sample.mask.present_classes().size());
                s_test_class_counts.emplace_back(-distinct, class_bits_index++);
            }
        }
    };

    render_split("s_train", config.counts.s_train, manifest.s_train);
    render_split("q_train", config.counts.q_train, manifest.q_train);
    render_split("s_test", config.counts.s_test, manifest.s_test);
    render_split("q_test", config.counts.q_test, manifest.q_test);

    std::stable_sort(s_test_class_counts.begin(), s_test_class_counts.end());
    for (int i = 0; i < config.fixed_support_count; ++i)
        manifest.fixed_supports.push_back(s_test_class_counts[static_cast<size_t>(i)].second);
    std::sort(manifest.fixed_supports.begin(), manifest.fixed_supports.end());

    manifest.save(out_dir / "manifest.json");
    return manifest;
}

}  // namespace osp
