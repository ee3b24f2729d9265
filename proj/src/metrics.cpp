#include "osp/metrics.hpp"

#include <algorithm>

#include <json.hpp>

namespace osp {

Confusion::Confusion(std::vector<int> class_ids) : classes(std::move(class_ids)) {
    std::sort(classes.begin(), classes.end());
    classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
    counts.assign(classes.size() * classes.size(), 0);
}

int Confusion::index_of(int class_id) const {
    auto it = std::lower_bound(classes.begin(), classes.end(), class_id);
    if (it == classes.end() || *it != class_id) return -1;
    return static_cast<int>(it - classes.begin());
}

void Confusion::add(const LabelMask& pred, const LabelMask& gt) {
    if (pred.height != gt.height || pred.width != gt.width)
        throw ShapeError("confusion: prediction and ground truth sizes differ");
    std::vector<int> lut(256, -1);
    for (size_t i = 0; i < classes.size(); ++i) lut[static_cast<size_t>(classes[i])] = static_cast<int>(i);
    const size_t n = classes.size();
    for (size_t i = 0; i < gt.labels.size(); ++i) {
        const int g = lut[gt.labels[i]];
        const int p = lut[pred.labels[i]];
        if (g < 0 || p < 0) continue;
        ++counts[static_cast<size_t>(g) * n + static_cast<size_t>(p)];
    }
}

void Confusion::merge(const Confusion& other) {
    if (other.classes != classes) throw ContractError("confusion merge: class sets differ");
    for (size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

int64_t Confusion::at(int gt, int pred) const {
    const int g = index_of(gt), p = index_of(pred);
    if (g < 0 || p < 0) throw ContractError("confusion: class not covered");
    return counts[static_cast<size_t>(g) * classes.size() + static_cast<size_t>(p)];
}

int64_t Confusion::total() const {
    int64_t t = 0;
    for (int64_t c : counts) t += c;
    return t;
}

namespace {

struct IouParts {
    int64_t tp = 0, fp = 0, fn = 0;
    bool present() const { return tp + fp + fn > 0; }
    double iou() const { return present() ? static_cast<double>(tp) / static_cast<double>(tp + fp + fn) : 0.0; }
};

IouParts iou_parts(const Confusion& conf, int class_id) {
    const int idx = conf.index_of(class_id);
    if (idx < 0) throw ContractError("iou: class not covered by confusion");
    const size_t n = conf.classes.size();
    IouParts parts;
    parts.tp = conf.counts[static_cast<size_t>(idx) * n + static_cast<size_t>(idx)];
    for (size_t j = 0; j < n; ++j) {
        if (static_cast<int>(j) == idx) continue;
        parts.fn += conf.counts[static_cast<size_t>(idx) * n + j];
        parts.fp += conf.counts[j * n + static_cast<size_t>(idx)];
    }
    return parts;
}

}  // namespace

double miou(const Confusion& conf, const std::vector<int>& subset) {
    if (subset.empty()) throw ContractError("miou: empty class set");
    double sum = 0.0;
    int counted = 0;
    for (int c : subset) {
        const IouParts parts = iou_parts(conf, c);
        if (!parts.present()) continue;  // absent everywhere: excluded from the mean
        sum += parts.iou();
        ++counted;
    }
    return counted == 0 ? 0.0 : sum / counted;
}

std::map<int, double> per_class_iou(const Confusion& conf) {
    std::map<int, double> out;
    for (int c : conf.classes) {
        const IouParts parts = iou_parts(conf, c);
        if (parts.present()) out[c] = parts.iou();
    }
    return out;
}

double binary_iou(const Confusion& conf) {
    if (conf.classes.size() != 2) throw ContractError("binary_iou: need a 2-class confusion");
    const IouParts a = iou_parts(conf, conf.classes[0]);
    const IouParts b = iou_parts(conf, conf.classes[1]);
    return 0.5 * (a.iou() + b.iou());
}

double overall_accuracy(const Confusion& conf) {
    const int64_t t = conf.total();
    if (t == 0) return 0.0;
    int64_t diag = 0;
    const size_t n = conf.classes.size();
    for (size_t i = 0; i < n; ++i) diag += conf.counts[i * n + i];
    return static_cast<double>(diag) / static_cast<double>(t);
}

std::string MetricsReport::to_json() const {
    nlohmann::ordered_json doc;
    doc["mode"] = mode;
    doc["fold"] = fold;
    doc["episode_count"] = episode_count;
    doc["novel_miou"] = novel_miou;
    doc["human_miou"] = human_miou;
    if (overall_acc) doc["overall_acc"] = *overall_acc;
    if (bi_iou) doc["bi_iou"] = *bi_iou;
    nlohmann::ordered_json classes = nlohmann::ordered_json::object();
    const auto& names = ClassTaxonomy::standard().fine_names;
    for (const auto& [id, iou] : class_iou)
        classes[names[static_cast<size_t>(id)]] = iou;
    doc["class_iou"] = classes;
    return doc.dump(2) + "\n";
}

}  // namespace osp
