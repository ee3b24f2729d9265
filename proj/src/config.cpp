#include "osp/config.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

namespace osp {

namespace {

using nlohmann::json;

// Wraps one section: typed getters plus unknown-key detection.
class Section {
public:
    Section(const json& doc, std::string name) : name_(std::move(name)) {
        if (auto it = doc.find(name_); it != doc.end()) {
            if (!it->is_object()) throw ConfigError("section '" + name_ + "' must be an object");
            obj_ = &*it;
        }
    }

    template <typename T>
    void get(const char* key, T& out) {
        if (!obj_) return;
        known_.insert(key);
        auto it = obj_->find(key);
        if (it == obj_->end()) return;
        try {
            out = it->get<T>();
        } catch (const std::exception&) {
            throw ConfigError("key '" + name_ + "." + key + "' has the wrong type");
        }
    }

    void finish() const {
        if (!obj_) return;
        for (auto it = obj_->begin(); it != obj_->end(); ++it)
            if (!known_.count(it.key()))
                throw ConfigError("unknown key '" + name_ + "." + it.key() + "'");
    }

private:
    std::string name_;
    const json* obj_ = nullptr;
    std::set<std::string> known_;
};

void check_positive(int v, const char* field) {
    if (v < 1) throw ConfigError(std::string(field) + " must be >= 1");
}

}  // namespace

RunConfig RunConfig::parse(const std::string& text, const std::filesystem::path& base_dir) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw ConfigError("config root must be an object");
    static const std::set<std::string> sections = {"data", "model", "train", "eval", "paths",
                                                   "ablate"};
    for (auto it = doc.begin(); it != doc.end(); ++it)
        if (!sections.count(it.key())) throw ConfigError("unknown section '" + it.key() + "'");

    RunConfig cfg;
    cfg.base_dir = base_dir;

    Section data(doc, "data");
    int64_t data_seed = static_cast<int64_t>(cfg.data.seed);
    data.get("seed", data_seed);
    cfg.data.seed = static_cast<uint64_t>(data_seed);
    data.get("height", cfg.data.height);
    data.get("width", cfg.data.width);
    data.get("s_train", cfg.data.counts.s_train);
    data.get("q_train", cfg.data.counts.q_train);
    data.get("s_test", cfg.data.counts.s_test);
    data.get("q_test", cfg.data.counts.q_test);
    data.get("fixed_supports", cfg.data.fixed_support_count);
    data.get("fold", cfg.data.fold);
    data.get("out_dir", cfg.data_out_dir);
    data.finish();
    check_positive(cfg.data.counts.s_train, "data.s_train");
    check_positive(cfg.data.counts.q_train, "data.q_train");
    check_positive(cfg.data.counts.s_test, "data.s_test");
    check_positive(cfg.data.counts.q_test, "data.q_test");
    check_positive(cfg.data.fixed_support_count, "data.fixed_supports");
    if (cfg.data.height < 48 || cfg.data.width < 48)
        throw ConfigError("data.height/width must be >= 48");
    if (cfg.data.fold != 1 && cfg.data.fold != 2) throw ConfigError("data.fold must be 1 or 2");

    Section model(doc, "model");
    model.get("k_stage", cfg.model.k_stage);
    model.get("use_kim", cfg.model.use_kim);
    model.get("use_fg_prior", cfg.model.use_fg_prior);
    model.finish();
    check_positive(cfg.model.k_stage, "model.k_stage");

    Section train(doc, "train");
    train.get("epochs", cfg.train.epochs);
    train.get("episodes_per_epoch", cfg.train.episodes_per_epoch);
    train.get("stage1_epochs", cfg.train.stage1_epochs);
    train.get("base_lr", cfg.train.base_lr);
    train.get("poly_power", cfg.train.poly_power);
    train.get("momentum", cfg.train.momentum);
    train.get("weight_decay", cfg.train.weight_decay);
    train.get("clip_norm", cfg.train.clip_norm);
    train.get("batch_size", cfg.train.batch_size);
    train.get("static_proto_epochs", cfg.train.static_proto_epochs);
    train.get("dynamic_prototypes", cfg.train.dynamic_prototypes);
    train.get("proto_alpha", cfg.train.proto_alpha);
    train.get("weight_shift", cfg.train.weight_shift);
    train.get("fixed_beta", cfg.train.fixed_beta);
    train.get("scale_lo", cfg.train.scale_lo);
    train.get("scale_hi", cfg.train.scale_hi);
    train.get("flip_prob", cfg.train.flip_prob);
    train.get("augment", cfg.train.augment_enabled);
    int64_t train_seed = static_cast<int64_t>(cfg.train.seed);
    train.get("seed", train_seed);
    cfg.train.seed = static_cast<uint64_t>(train_seed);
    train.finish();
    check_positive(cfg.train.epochs, "train.epochs");
    check_positive(cfg.train.episodes_per_epoch, "train.episodes_per_epoch");
    check_positive(cfg.train.batch_size, "train.batch_size");
    if (cfg.train.base_lr <= 0.0) throw ConfigError("train.base_lr must be positive");
    if (cfg.train.fixed_beta < 0.0 || cfg.train.fixed_beta > 1.0)
        throw ConfigError("train.fixed_beta must lie in [0,1]");
    if (cfg.train.proto_alpha < 0.0 || cfg.train.proto_alpha > 1.0)
        throw ConfigError("train.proto_alpha must lie in [0,1]");
    if (cfg.train.static_proto_epochs > cfg.train.epochs)
        throw ConfigError("train.static_proto_epochs must not exceed train.epochs");
    if (cfg.train.scale_lo <= 0.0 || cfg.train.scale_hi < cfg.train.scale_lo)
        throw ConfigError("train.scale_lo/scale_hi malformed");

    Section eval(doc, "eval");
    std::string mode = "k-way";
    eval.get("mode", mode);
    eval.get("fold", cfg.eval.fold);
    eval.finish();
    if (mode == "k-way")
        cfg.eval.mode = EvalMode::KWay;
    else if (mode == "one-way")
        cfg.eval.mode = EvalMode::OneWay;
    else
        throw ConfigError("eval.mode must be 'k-way' or 'one-way'");
    if (cfg.eval.fold != 1 && cfg.eval.fold != 2) throw ConfigError("eval.fold must be 1 or 2");

    Section paths(doc, "paths");
    paths.get("manifest", cfg.paths.manifest);
    paths.get("checkpoint_dir", cfg.paths.checkpoint_dir);
    paths.get("checkpoint", cfg.paths.checkpoint);
    paths.get("report", cfg.paths.report);
    paths.get("loss_csv", cfg.paths.loss_csv);
    paths.get("episodes_csv", cfg.paths.episodes_csv);
    paths.get("ablation_csv", cfg.paths.ablation_csv);
    paths.finish();

    Section ablate(doc, "ablate");
    std::vector<int64_t> seeds;
    ablate.get("seeds", seeds);
    ablate.finish();
    if (!seeds.empty()) {
        cfg.ablate.seeds.clear();
        for (int64_t s : seeds) cfg.ablate.seeds.push_back(static_cast<uint64_t>(s));
    }
    return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse(text, path.parent_path());
}

std::filesystem::path RunConfig::resolve(const std::string& rel) const {
    std::filesystem::path p(rel);
    return p.is_absolute() ? p : base_dir / p;
}

std::filesystem::path RunConfig::checkpoint_path() const {
    if (!paths.checkpoint.empty()) return resolve(paths.checkpoint);
    return resolve(paths.checkpoint_dir) / "model.popc";
}

}  // namespace osp
