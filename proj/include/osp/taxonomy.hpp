#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "osp/errors.hpp"
#include "osp/rng.hpp"
#include "osp/tensor.hpp"

namespace osp {

// Fine class ids. Background is 0 everywhere; the remaining eleven mirror a
// merged fashion-parsing label set grouped under four parent areas.
namespace cls {
enum Fine : uint8_t {
    kBackground = 0,
    kHat = 1,
    kHair = 2,
    kFace = 3,
    kUpperClothes = 4,
    kDress = 5,
    kBelt = 6,
    kBag = 7,
    kArms = 8,
    kPants = 9,
    kLegs = 10,
    kShoes = 11,
    kFineCount = 12,
};
enum Parent : uint8_t {
    kParentBackground = 0,
    kHead = 1,
    kBody = 2,
    kArmsArea = 3,
    kLegsArea = 4,
    kParentCount = 5,
};
}  // namespace cls

// Which label space a mask's ids live in.
enum class LabelSpace : uint8_t { Fine, Parent, Foreground };

struct LabelMask {
    int height = 0;
    int width = 0;
    std::vector<uint8_t> labels;  // row-major H*W
    LabelSpace space = LabelSpace::Fine;

    LabelMask() = default;
    LabelMask(int h, int w, LabelSpace s = LabelSpace::Fine)
        : height(h), width(w), labels(static_cast<size_t>(h) * w, 0), space(s) {}

    uint8_t at(int y, int x) const { return labels[static_cast<size_t>(y) * width + x]; }
    uint8_t& at(int y, int x) { return labels[static_cast<size_t>(y) * width + x]; }

    // Sorted foreground ids present in the mask.
    std::vector<int> present_classes() const;
    // Present foreground ids plus background, sorted.
    std::vector<int> class_set_with_background() const;
};

// Three-level hierarchy: fine class -> parent area -> foreground, plus the
// cluster-disjoint fold definitions.
struct ClassTaxonomy {
    std::vector<std::string> fine_names;            // index = fine id
    std::vector<uint8_t> parent_of;                 // fine id -> parent id (bg -> bg)
    std::map<int, std::vector<int>> folds;          // fold id -> novel fine ids

    static const ClassTaxonomy& standard();

    int fine_count() const { return static_cast<int>(fine_names.size()); }
    bool known_fold(int fold) const { return folds.count(fold) > 0; }
};

struct FoldSplit {
    std::vector<int> base;   // sorted fine ids, background excluded
    std::vector<int> novel;  // sorted fine ids
};

FoldSplit select_fold(const ClassTaxonomy& taxonomy, int fold);

// Meta-training rule: anything outside C_base becomes background. Idempotent.
LabelMask relabel_for_training(const LabelMask& mask, const std::vector<int>& base_classes);

// Evaluation rule: query ground-truth classes that the support mask does not
// annotate become background.
LabelMask merge_unsupported(const LabelMask& query_gt, const std::vector<int>& support_class_set);

// Fine -> parent area labels; background is preserved.
LabelMask aggregate_to_parents(const LabelMask& mask, const ClassTaxonomy& taxonomy);

// Any foreground id -> 1.
LabelMask to_foreground(const LabelMask& mask);

// Nearest-neighbor resampling with half-pixel centers (same convention as
// resize_bilinear); never introduces ids absent from the input.
LabelMask resize_mask_nearest(const LabelMask& mask, int new_h, int new_w);

// Binary selector for one class at the mask's own resolution.
std::vector<uint8_t> class_selector(const LabelMask& mask, int class_id);

// ---- split manifest ---------------------------------------------------------

struct ManifestEntry {
    std::string image;  // path relative to the manifest file
    std::string mask;
};

struct SplitManifest {
    int fold = 1;
    std::vector<ManifestEntry> s_train, q_train, s_test, q_test;
    std::vector<int> fixed_supports;  // indices into s_test
    std::filesystem::path base_dir;   // directory the relative paths resolve against

    void save(const std::filesystem::path& path) const;
    static SplitManifest load(const std::filesystem::path& path);
};

// ---- episodes -----------------------------------------------------------------

struct Episode {
    Tensor support_image;  // [H,W,3]
    LabelMask support_mask;
    Tensor query_image;
    std::optional<LabelMask> query_mask;
    std::vector<int> effective_class_set;  // ids present in support mask + background
};

// Deterministic (query, support) index pairs; materialized lazily by loaders.
struct EpisodeRef {
    int query_index;    // into q_train / q_test
    int support_index;  // into s_train / s_test
};

// One uniform draw from Q_train x S_train.
EpisodeRef sample_train_episode_ref(const SplitManifest& manifest, Rng& rng);

// |Q_test| x |fixed supports| refs in query-major order.
std::vector<EpisodeRef> enumerate_test_episodes(const SplitManifest& manifest);

// Loads and decodes silhouette samples on demand, caching decoded pairs.
class SampleLoader {
public:
    explicit SampleLoader(const SplitManifest& manifest) : manifest_(&manifest) {}

    // Raw (image, fine mask) pair for an entry.
    std::pair<Tensor, LabelMask> load(const ManifestEntry& entry) const;

    // Meta-training episode: relabel both masks against C_base, then merge the
    // query gt against the support's surviving class set.
    Episode load_train_episode(const EpisodeRef& ref, const std::vector<int>& base_classes) const;

    // Meta-test episode: support keeps full annotations, query gt only merged.
    Episode load_test_episode(const EpisodeRef& ref) const;

private:
    const SplitManifest* manifest_;
    mutable std::map<std::string, std::pair<Tensor, LabelMask>> cache_;
};

}  // namespace osp
