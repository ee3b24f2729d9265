#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "osp/taxonomy.hpp"

namespace osp {

// Pixel-count confusion matrix over a fixed, sorted class list. Pixels whose
// ground-truth or predicted id is outside the list are ignored.
struct Confusion {
    std::vector<int> classes;
    std::vector<int64_t> counts;  // [gt][pred], classes.size()^2

    explicit Confusion(std::vector<int> class_ids);
    void add(const LabelMask& pred, const LabelMask& gt);
    void merge(const Confusion& other);

    int index_of(int class_id) const;  // -1 if absent
    int64_t at(int gt, int pred) const;
    int64_t total() const;
};

// Mean over `subset` of TP/(TP+FP+FN); classes absent from both prediction
// and ground truth over the whole accumulation are excluded from the mean.
double miou(const Confusion& conf, const std::vector<int>& subset);

// Per-class IoU (classes absent from both sides are omitted).
std::map<int, double> per_class_iou(const Confusion& conf);

// Mean of foreground and background IoU of a 2-class confusion.
double binary_iou(const Confusion& conf);

double overall_accuracy(const Confusion& conf);

struct MetricsReport {
    std::string mode;  // "k-way" or "one-way"
    int fold = 1;
    int64_t episode_count = 0;
    double novel_miou = 0.0;
    double human_miou = 0.0;
    std::optional<double> overall_acc;  // k-way
    std::optional<double> bi_iou;       // one-way
    std::map<int, double> class_iou;    // fine id -> IoU

    // Deterministic serialization: fixed key order, shortest-round-trip doubles.
    std::string to_json() const;
};

}  // namespace osp
