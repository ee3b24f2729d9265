#include "osp/taxonomy.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <json.hpp>

#include "osp/raster.hpp"

namespace osp {

using nlohmann::ordered_json;

std::vector<int> LabelMask::present_classes() const {
    std::set<int> ids;
    for (uint8_t v : labels)
        if (v != cls::kBackground) ids.insert(v);
    return {ids.begin(), ids.end()};
}

std::vector<int> LabelMask::class_set_with_background() const {
    std::vector<int> ids = present_classes();
    ids.insert(ids.begin(), cls::kBackground);
    return ids;
}

const ClassTaxonomy& ClassTaxonomy::standard() {
    static const ClassTaxonomy tax = [] {
        ClassTaxonomy t;
        t.fine_names = {"background", "hat",  "hair", "face", "upper-clothes", "dress",
                        "belt",       "bag",  "arms", "pants", "legs",          "shoes"};
        t.parent_of.assign(cls::kFineCount, cls::kParentBackground);
        t.parent_of[cls::kHat] = cls::kHead;
        t.parent_of[cls::kHair] = cls::kHead;
        t.parent_of[cls::kFace] = cls::kHead;
        t.parent_of[cls::kUpperClothes] = cls::kBody;
        t.parent_of[cls::kDress] = cls::kBody;
        t.parent_of[cls::kBelt] = cls::kBody;
        t.parent_of[cls::kBag] = cls::kBody;
        t.parent_of[cls::kArms] = cls::kArmsArea;
        t.parent_of[cls::kPants] = cls::kLegsArea;
        t.parent_of[cls::kLegs] = cls::kLegsArea;
        t.parent_of[cls::kShoes] = cls::kLegsArea;
        t.folds[1] = {cls::kPants, cls::kLegs, cls::kShoes};
        t.folds[2] = {cls::kHair, cls::kFace, cls::kHat};
        return t;
    }();
    return tax;
}

FoldSplit select_fold(const ClassTaxonomy& taxonomy, int fold) {
    auto it = taxonomy.folds.find(fold);
    if (it == taxonomy.folds.end()) throw ConfigError("unknown fold " + std::to_string(fold));
    FoldSplit split;
    split.novel = it->second;
    std::sort(split.novel.begin(), split.novel.end());
    for (int id = 1; id < taxonomy.fine_count(); ++id)
        if (!std::binary_search(split.novel.begin(), split.novel.end(), id))
            split.base.push_back(id);
    return split;
}

LabelMask relabel_for_training(const LabelMask& mask, const std::vector<int>& base_classes) {
    std::vector<uint8_t> keep(256, 0);
    for (int id : base_classes) keep[static_cast<size_t>(id)] = 1;
    LabelMask out = mask;
    for (uint8_t& v : out.labels)
        if (!keep[v]) v = cls::kBackground;
    return out;
}

LabelMask merge_unsupported(const LabelMask& query_gt, const std::vector<int>& support_class_set) {
    std::vector<uint8_t> keep(256, 0);
    for (int id : support_class_set) keep[static_cast<size_t>(id)] = 1;
    LabelMask out = query_gt;
    for (uint8_t& v : out.labels)
        if (!keep[v]) v = cls::kBackground;
    return out;
}

LabelMask aggregate_to_parents(const LabelMask& mask, const ClassTaxonomy& taxonomy) {
    if (mask.space != LabelSpace::Fine)
        throw ContractError("aggregate_to_parents: mask is not in the fine label space");
    LabelMask out(mask.height, mask.width, LabelSpace::Parent);
    for (size_t i = 0; i < mask.labels.size(); ++i)
        out.labels[i] = taxonomy.parent_of[mask.labels[i]];
    return out;
}

LabelMask to_foreground(const LabelMask& mask) {
    LabelMask out(mask.height, mask.width, LabelSpace::Foreground);
    for (size_t i = 0; i < mask.labels.size(); ++i)
        out.labels[i] = mask.labels[i] == cls::kBackground ? 0 : 1;
    return out;
}

LabelMask resize_mask_nearest(const LabelMask& mask, int new_h, int new_w) {
    if (new_h < 1 || new_w < 1) throw ShapeError("resize_mask_nearest: bad target size");
    if (new_h == mask.height && new_w == mask.width) return mask;
    LabelMask out(new_h, new_w, mask.space);
    const double sy = static_cast<double>(mask.height) / new_h;
    const double sx = static_cast<double>(mask.width) / new_w;
    for (int y = 0; y < new_h; ++y) {
        int src_y = static_cast<int>((y + 0.5) * sy);
        src_y = std::min(src_y, mask.height - 1);
        for (int x = 0; x < new_w; ++x) {
            int src_x = static_cast<int>((x + 0.5) * sx);
            src_x = std::min(src_x, mask.width - 1);
            out.at(y, x) = mask.at(src_y, src_x);
        }
    }
    return out;
}

std::vector<uint8_t> class_selector(const LabelMask& mask, int class_id) {
    std::vector<uint8_t> sel(mask.labels.size());
    for (size_t i = 0; i < sel.size(); ++i)
        sel[i] = mask.labels[i] == static_cast<uint8_t>(class_id) ? 1 : 0;
    return sel;
}

// ---- manifest -----------------------------------------------------------------

namespace {

ordered_json entries_to_json(const std::vector<ManifestEntry>& entries) {
    ordered_json arr = ordered_json::array();
    for (const auto& e : entries) arr.push_back({{"image", e.image}, {"mask", e.mask}});
    return arr;
}

std::vector<ManifestEntry> entries_from_json(const ordered_json& arr) {
    std::vector<ManifestEntry> out;
    for (const auto& e : arr) out.push_back({e.at("image").get<std::string>(), e.at("mask").get<std::string>()});
    return out;
}

}  // namespace

void SplitManifest::save(const std::filesystem::path& path) const {
    ordered_json doc;
    doc["fold"] = fold;
    doc["splits"] = {{"s_train", entries_to_json(s_train)},
                     {"q_train", entries_to_json(q_train)},
                     {"s_test", entries_to_json(s_test)},
                     {"q_test", entries_to_json(q_test)}};
    doc["fixed_supports"] = fixed_supports;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write manifest " + path.string());
    out << doc.dump(2) << "\n";
}

SplitManifest SplitManifest::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read manifest " + path.string());
    ordered_json doc;
    try {
        in >> doc;
    } catch (const std::exception& e) {
        throw FormatError("manifest " + path.string() + ": " + e.what());
    }
    SplitManifest m;
    try {
        m.fold = doc.at("fold").get<int>();
        const auto& splits = doc.at("splits");
        m.s_train = entries_from_json(splits.at("s_train"));
        m.q_train = entries_from_json(splits.at("q_train"));
        m.s_test = entries_from_json(splits.at("s_test"));
        m.q_test = entries_from_json(splits.at("q_test"));
        m.fixed_supports = doc.at("fixed_supports").get<std::vector<int>>();
    } catch (const std::exception& e) {
        throw FormatError("manifest " + path.string() + ": " + e.what());
    }
    for (int idx : m.fixed_supports)
        if (idx < 0 || idx >= static_cast<int>(m.s_test.size()))
            throw FormatError("manifest: fixed support index out of range");
    m.base_dir = path.parent_path();
    return m;
}

// ---- episodes -----------------------------------------------------------------

EpisodeRef sample_train_episode_ref(const SplitManifest& manifest, Rng& rng) {
    if (manifest.q_train.empty() || manifest.s_train.empty())
        throw ConfigError("sample_train_episode: empty training split");
    EpisodeRef ref;
    ref.query_index = rng.next_int(static_cast<int>(manifest.q_train.size()));
    ref.support_index = rng.next_int(static_cast<int>(manifest.s_train.size()));
    return ref;
}

std::vector<EpisodeRef> enumerate_test_episodes(const SplitManifest& manifest) {
    for (int idx : manifest.fixed_supports)
        if (idx < 0 || idx >= static_cast<int>(manifest.s_test.size()))
            throw ConfigError("enumerate_test_episodes: fixed support outside S_test");
    std::vector<EpisodeRef> refs;
    refs.reserve(manifest.q_test.size() * manifest.fixed_supports.size());
    for (int q = 0; q < static_cast<int>(manifest.q_test.size()); ++q)
        for (int s : manifest.fixed_supports) refs.push_back({q, s});
    return refs;
}

std::pair<Tensor, LabelMask> SampleLoader::load(const ManifestEntry& entry) const {
    auto it = cache_.find(entry.image);
    if (it != cache_.end()) return it->second;
    Tensor image = read_ppm(manifest_->base_dir / entry.image);
    LabelMask mask = read_pgm(manifest_->base_dir / entry.mask);
    if (mask.height != image.dim(0) || mask.width != image.dim(1))
        throw FormatError("sample " + entry.image + ": image/mask size mismatch");
    auto [pos, _] = cache_.emplace(entry.image, std::make_pair(std::move(image), std::move(mask)));
    return pos->second;
}

Episode SampleLoader::load_train_episode(const EpisodeRef& ref,
                                         const std::vector<int>& base_classes) const {
    Episode ep;
    auto [s_img, s_mask] = load(manifest_->s_train.at(static_cast<size_t>(ref.support_index)));
    auto [q_img, q_mask] = load(manifest_->q_train.at(static_cast<size_t>(ref.query_index)));
    ep.support_image = std::move(s_img);
    ep.query_image = std::move(q_img);
    ep.support_mask = relabel_for_training(s_mask, base_classes);
    LabelMask gt = relabel_for_training(q_mask, base_classes);
    ep.effective_class_set = ep.support_mask.class_set_with_background();
    ep.query_mask = merge_unsupported(gt, ep.effective_class_set);
    return ep;
}

Episode SampleLoader::load_test_episode(const EpisodeRef& ref) const {
    Episode ep;
    auto [s_img, s_mask] = load(manifest_->s_test.at(static_cast<size_t>(ref.support_index)));
    auto [q_img, q_mask] = load(manifest_->q_test.at(static_cast<size_t>(ref.query_index)));
    ep.support_image = std::move(s_img);
    ep.query_image = std::move(q_img);
    ep.support_mask = std::move(s_mask);
    ep.effective_class_set = ep.support_mask.class_set_with_background();
    ep.query_mask = merge_unsupported(q_mask, ep.effective_class_set);
    return ep;
}

}  // namespace osp
