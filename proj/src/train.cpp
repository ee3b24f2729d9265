#include "osp/train.hpp"

#include <algorithm>
#include <cmath>

namespace osp {

double poly_lr(int iter, int max_iter, double base_lr, double power) {
    if (iter < 0 || iter > max_iter) throw ContractError("poly_lr: iter out of range");
    if (max_iter <= 0) throw ContractError("poly_lr: max_iter must be positive");
    return base_lr * std::pow(1.0 - static_cast<double>(iter) / max_iter, power);
}

// ---- augmentation ---------------------------------------------------------------

Sample augment_with(const Sample& sample, const AugmentParams& params) {
    const int h = sample.image.dim(0), w = sample.image.dim(1);
    const int sh = std::max(1, static_cast<int>(std::lround(h * params.scale)));
    const int sw = std::max(1, static_cast<int>(std::lround(w * params.scale)));

    Tensor scaled_img = resize_bilinear(sample.image, sh, sw);
    LabelMask scaled_mask = resize_mask_nearest(sample.mask, sh, sw);

    Sample out;
    out.image = Tensor::zeros({h, w, 3});
    out.mask = LabelMask(h, w, sample.mask.space);

    const int dy = sh - h, dx = sw - w;
    const int src_y = dy >= 0 ? std::clamp(params.off_y, 0, dy) : 0;
    const int dst_y = dy >= 0 ? 0 : std::clamp(params.off_y, 0, -dy);
    const int src_x = dx >= 0 ? std::clamp(params.off_x, 0, dx) : 0;
    const int dst_x = dx >= 0 ? 0 : std::clamp(params.off_x, 0, -dx);
    const int copy_h = std::min(h, sh), copy_w = std::min(w, sw);

    for (int y = 0; y < copy_h; ++y) {
        for (int x = 0; x < copy_w; ++x) {
            for (int c = 0; c < 3; ++c)
                out.image.at(dst_y + y, dst_x + x, c) = scaled_img.at(src_y + y, src_x + x, c);
            out.mask.at(dst_y + y, dst_x + x) = scaled_mask.at(src_y + y, src_x + x);
        }
    }
    if (params.flip) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w / 2; ++x) {
                for (int c = 0; c < 3; ++c)
                    std::swap(out.image.at(y, x, c), out.image.at(y, w - 1 - x, c));
                std::swap(out.mask.at(y, x), out.mask.at(y, w - 1 - x));
            }
    }
    return out;
}

Sample augment(const Sample& sample, const TrainConfig& config, Rng& rng) {
    AugmentParams params;
    params.scale = rng.uniform(config.scale_lo, config.scale_hi);
    const int h = sample.image.dim(0), w = sample.image.dim(1);
    const int sh = std::max(1, static_cast<int>(std::lround(h * params.scale)));
    const int sw = std::max(1, static_cast<int>(std::lround(w * params.scale)));
    params.off_y = std::abs(sh - h) > 0 ? rng.next_int(std::abs(sh - h) + 1) : 0;
    params.off_x = std::abs(sw - w) > 0 ? rng.next_int(std::abs(sw - w) + 1) : 0;
    params.flip = rng.bernoulli(config.flip_prob);
    return augment_with(sample, params);
}

// ---- optimizer ------------------------------------------------------------------

void sgd_step(std::vector<Tensor>& params, double lr) {
    for (const Tensor& p : params)
        for (double g : p.node()->grad)
            if (!std::isfinite(g)) throw NumericError("sgd_step: non-finite gradient");
    for (Tensor& p : params) {
        auto& node = *p.node();
        if (node.grad.size() != node.value.size()) continue;  // untouched by backward
        for (size_t i = 0; i < node.value.size(); ++i) node.value[i] -= lr * node.grad[i];
    }
}

void Sgd::exempt_from_decay(const std::vector<Tensor>& params) {
    for (const Tensor& p : params) exempt_.insert(p.node().get());
}

void Sgd::step(std::vector<Tensor>& params, double lr) {
    if (momentum_ == 0.0 && weight_decay_ == 0.0 && clip_norm_ == 0.0) {
        sgd_step(params, lr);
        return;
    }
    for (const Tensor& p : params)
        for (double g : p.node()->grad)
            if (!std::isfinite(g)) throw NumericError("sgd_step: non-finite gradient");
    double scale = 1.0;
    if (clip_norm_ > 0.0) {
        double norm_sq = 0.0;
        for (const Tensor& p : params) {
            const auto& node = *p.node();
            if (node.grad.size() != node.value.size()) continue;
            for (double g : node.grad) norm_sq += g * g;
        }
        const double norm = std::sqrt(norm_sq);
        if (norm > clip_norm_) scale = clip_norm_ / norm;
    }
    for (Tensor& p : params) {
        auto& node = *p.node();
        if (node.grad.size() != node.value.size()) continue;
        const bool decays =
            weight_decay_ != 0.0 && p.ndim() >= 2 && !exempt_.count(&node);
        auto& vel = velocity_[&node];
        if (vel.size() != node.value.size()) vel.assign(node.value.size(), 0.0);
        for (size_t i = 0; i < node.value.size(); ++i) {
            const double g =
                scale * node.grad[i] + (decays ? weight_decay_ * node.value[i] : 0.0);
            vel[i] = momentum_ * vel[i] + g;
            node.value[i] -= lr * vel[i];
        }
    }
}

// ---- training -------------------------------------------------------------------

namespace {

// Re-derives the episode after augmentation: the effective class set follows
// the augmented support mask and the query gt is re-merged against it.
void refresh_episode_classes(Episode& episode) {
    episode.effective_class_set = episode.support_mask.class_set_with_background();
    if (episode.query_mask)
        episode.query_mask = merge_unsupported(*episode.query_mask, episode.effective_class_set);
}

TrainStats supervised_stage1(PipelineState& state, const SplitManifest& manifest,
                             const TrainConfig& config, std::ostream* log) {
    TrainStats stats;
    SampleLoader loader(manifest);
    state.set_trainable_stage(1);
    std::vector<Tensor> params = state.stage_params(1);
    Sgd optimizer(config.momentum, config.weight_decay, config.clip_norm);
    optimizer.exempt_from_decay({state.stage1_head.kernel, state.stage1_head.bias});
    Rng rng = Rng(config.seed).fork("stage1");

    // Pool: every training image, supports and queries alike.
    std::vector<const ManifestEntry*> pool;
    for (const auto& e : manifest.s_train) pool.push_back(&e);
    for (const auto& e : manifest.q_train) pool.push_back(&e);
    if (pool.empty()) throw ConfigError("train: empty training split");

    const int epochs = config.effective_stage1_epochs();
    const int total = std::max(1, epochs * config.episodes_per_epoch);
    int iter = 0;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        for (int i = 0; i < config.episodes_per_epoch; ++i, ++iter) {
            auto [img, mask] = loader.load(*pool[static_cast<size_t>(rng.next_int(static_cast<int>(pool.size())))]);
            // The binary masks derive from the full annotation: every
            // foreground class collapses to one label, so held-out regions
            // count as figure without leaking any class identity.
            Sample sample{img, to_foreground(mask)};
            if (config.augment_enabled) sample = augment(sample, config, rng);
            Tensor probs = stage1_forward(state, sample.image);
            LabelMask fg = sample.mask;
            fg = resize_mask_nearest(fg, probs.dim(0), probs.dim(1));
            std::vector<int> targets(fg.labels.begin(), fg.labels.end());
            Tensor loss = cross_entropy_probs(probs, targets);
            backward(loss);
            try {
                optimizer.step(params, poly_lr(iter, total, config.base_lr, config.poly_power));
            } catch (const NumericError& e) {
                ++stats.rejected_steps;
                if (log) *log << "stage1 step rejected: " << e.what() << "\n";
            }
            stats.loss_curve.push_back(loss.item());
        }
    }
    return stats;
}

}  // namespace

TrainStats meta_train(PipelineState& state, int stage, const SplitManifest& manifest,
                      const TrainConfig& config, std::ostream* log) {
    if (stage != 2 && stage != 3) throw ContractError("meta_train: stage must be 2 or 3");
    TrainStats stats;
    const FoldSplit fold = select_fold(ClassTaxonomy::standard(), manifest.fold);
    SampleLoader loader(manifest);
    state.set_trainable_stage(stage);
    std::vector<Tensor> params = state.stage_params(stage);
    (stage == 2 ? state.bank2 : state.bank3).alpha = config.proto_alpha;
    Sgd optimizer(config.momentum, config.weight_decay, config.clip_norm);
    optimizer.exempt_from_decay((stage == 2 ? state.head2 : state.head3).params());

    // The upstream stages are frozen, so their output scale is fixed now;
    // match the fuser's first conv to it before the first step.
    if (state.config.use_kim) {
        std::vector<Tensor> probes;
        const size_t probe_count = std::min<size_t>(4, manifest.s_train.size());
        for (size_t i = 0; i < probe_count; ++i) {
            auto [img, mask] = loader.load(manifest.s_train[i]);
            probes.push_back(fuser_input(state, img, stage).detached());
        }
        calibrate_fuser(stage == 2 ? state.fuse2 : state.fuse3, probes);
    }
    Rng rng = Rng(config.seed).fork(stage == 2 ? "meta2" : "meta3");

    const int cutoff = config.effective_cutoff();
    const int steps_per_epoch =
        std::max(1, config.episodes_per_epoch / std::max(1, config.batch_size));
    const int total_steps = std::max(1, config.epochs * steps_per_epoch);
    int step_index = 0;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const double b = config.weight_shift ? beta(epoch, config.epochs) : config.fixed_beta;
        stats.beta_curve.push_back(b);
        const bool late = config.dynamic_prototypes && epoch >= cutoff;
        const Phase phase = late ? Phase::TrainLate : Phase::TrainEarly;

        for (int step = 0; step < steps_per_epoch; ++step, ++step_index) {
            Tensor batch_loss;
            int in_batch = 0;
            for (int k = 0; k < config.batch_size; ++k) {
                EpisodeRef ref = sample_train_episode_ref(manifest, rng);
                Episode episode = loader.load_train_episode(ref, fold.base);
                if (late)
                    update_bank_from_support(state, stage, episode.support_image,
                                             episode.support_mask, fold.base);
                if (config.augment_enabled) {
                    Sample support{episode.support_image, episode.support_mask};
                    support = augment(support, config, rng);
                    episode.support_image = support.image;
                    episode.support_mask = support.mask;
                    Sample query{episode.query_image, *episode.query_mask};
                    query = augment(query, config, rng);
                    episode.query_image = query.image;
                    episode.query_mask = query.mask;
                    refresh_episode_classes(episode);
                }
                MetaForwardOptions options;
                options.base_classes = fold.base;
                try {
                    EpisodeForward fwd = stage_meta_forward(state, stage, episode, phase, options);
                    // Supervision lives in the stage's label space, restricted to
                    // the classes that survived feature-resolution downsampling.
                    LabelMask gt = stage == 2 ? aggregate_to_parents(*episode.query_mask,
                                                                     ClassTaxonomy::standard())
                                              : *episode.query_mask;
                    std::vector<int> covered = fwd.classes;
                    covered.push_back(cls::kBackground);
                    gt = merge_unsupported(gt, covered);
                    Tensor loss = dml_loss(fwd.agm_probs, fwd.ncm_probs, gt, fwd.classes, b,
                                           &stats.loss_stats);
                    batch_loss = in_batch == 0 ? loss : add(batch_loss, loss);
                    ++in_batch;
                } catch (const EmptyMask&) {
                    ++stats.skipped_episodes;
                    if (log) *log << "episode skipped: no classes at feature resolution\n";
                }
            }
            if (in_batch == 0) continue;
            if (in_batch > 1) batch_loss = scale(batch_loss, 1.0 / in_batch);
            backward(batch_loss);
            try {
                optimizer.step(params, poly_lr(step_index, total_steps, config.base_lr,
                                               config.poly_power));
            } catch (const NumericError& e) {
                ++stats.rejected_steps;
                if (log) *log << "meta step rejected: " << e.what() << "\n";
            }
            stats.loss_curve.push_back(batch_loss.item());
        }
    }
    return stats;
}

TrainStats train_stage(PipelineState& state, int stage, const SplitManifest& manifest,
                       const TrainConfig& config, std::ostream* log) {
    if (stage < 1 || stage > 3) throw ContractError("train_stage: stage must be 1..3");
    if (!state.stage_enabled(stage))
        throw StateError("train_stage: stage " + std::to_string(stage) +
                         " is disabled in this configuration");
    for (int s = 1; s < stage; ++s)
        if (state.stage_enabled(s) && !state.trained[static_cast<size_t>(s)])
            throw StateError("train_stage: stage " + std::to_string(s) + " must be trained first");

    TrainStats stats;
    if (stage == 1)
        stats = supervised_stage1(state, manifest, config, log);
    else
        stats = meta_train(state, stage, manifest, config, log);
    state.trained[static_cast<size_t>(stage)] = true;
    state.freeze_all();
    return stats;
}

// ---- evaluation -----------------------------------------------------------------

LabelMask predict_episode(PipelineState& state, const Episode& episode, const EvalConfig& config) {
    MetaForwardOptions options;
    options.base_classes = select_fold(ClassTaxonomy::standard(), config.fold).base;
    options.test_base_from_bank = config.base_protos_from_bank;
    EpisodeForward fwd = stage_meta_forward(state, 3, episode, Phase::Test, options);
    const double b = config.eval_beta;
    Tensor probs = b <= 0.0   ? fwd.ncm_probs
                   : b >= 1.0 ? fwd.agm_probs
                              : add_scalar_scale(fwd.agm_probs, b, fwd.ncm_probs, 1.0 - b);
    const int h = probs.dim(0), w = probs.dim(1), ch = probs.dim(2);
    LabelMask pred(h, w, episode.support_mask.space);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            int best = 0;
            double best_v = probs.at(y, x, 0);
            for (int k = 1; k < ch; ++k)
                if (probs.at(y, x, k) > best_v) {
                    best_v = probs.at(y, x, k);
                    best = k;
                }
            pred.at(y, x) = best == ch - 1
                                ? static_cast<uint8_t>(cls::kBackground)
                                : static_cast<uint8_t>(fwd.classes[static_cast<size_t>(best)]);
        }
    return resize_mask_nearest(pred, episode.query_image.dim(0), episode.query_image.dim(1));
}

MetricsReport evaluate_kway(const SplitManifest& manifest, int fold,
                            const std::function<LabelMask(const Episode&)>& predict,
                            std::ostream* episode_csv) {
    const ClassTaxonomy& taxonomy = ClassTaxonomy::standard();
    const FoldSplit split = select_fold(taxonomy, fold);
    std::vector<int> human;
    for (int c = 0; c < taxonomy.fine_count(); ++c) human.push_back(c);

    SampleLoader loader(manifest);
    Confusion conf(human);
    int64_t episodes = 0;
    if (episode_csv) *episode_csv << "episode,query,support,accuracy\n";
    for (const EpisodeRef& ref : enumerate_test_episodes(manifest)) {
        Episode episode = loader.load_test_episode(ref);
        LabelMask pred = predict(episode);
        Confusion one(human);
        one.add(pred, *episode.query_mask);
        if (episode_csv)
            *episode_csv << episodes << "," << ref.query_index << "," << ref.support_index << ","
                         << overall_accuracy(one) << "\n";
        conf.merge(one);
        ++episodes;
    }

    MetricsReport report;
    report.mode = "k-way";
    report.fold = fold;
    report.episode_count = episodes;
    report.novel_miou = miou(conf, split.novel);
    report.human_miou = miou(conf, human);
    report.overall_acc = overall_accuracy(conf);
    report.class_iou = per_class_iou(conf);
    return report;
}

namespace {

MetricsReport run_one_way(PipelineState& state, const SplitManifest& manifest,
                          const EvalConfig& config) {
    const ClassTaxonomy& taxonomy = ClassTaxonomy::standard();
    const FoldSplit split = select_fold(taxonomy, config.fold);
    SampleLoader loader(manifest);

    // One binary confusion per class plus a global one for Bi-IoU.
    std::map<int, Confusion> per_class;
    for (int c = 1; c < taxonomy.fine_count(); ++c) per_class.emplace(c, Confusion({0, 1}));
    Confusion global({0, 1});
    int64_t episodes = 0;
    if (config.episode_csv) *config.episode_csv << "episode,query,support,class,binary_iou\n";

    for (const EpisodeRef& ref : enumerate_test_episodes(manifest)) {
        Episode full = loader.load_test_episode(ref);
        for (int c : full.support_mask.present_classes()) {
            Episode episode = full;
            // Restrict the support annotation to the single target class.
            for (uint8_t& v : episode.support_mask.labels)
                if (v != static_cast<uint8_t>(c)) v = cls::kBackground;
            episode.effective_class_set = {cls::kBackground, c};
            LabelMask pred;
            try {
                pred = predict_episode(state, episode, config);
            } catch (const EmptyMask&) {
                continue;  // class vanished at feature resolution
            }
            LabelMask pred_bin = to_foreground(pred);
            LabelMask gt_bin(full.query_mask->height, full.query_mask->width,
                             LabelSpace::Foreground);
            for (size_t i = 0; i < gt_bin.labels.size(); ++i)
                gt_bin.labels[i] = full.query_mask->labels[i] == static_cast<uint8_t>(c) ? 1 : 0;
            Confusion one({0, 1});
            one.add(pred_bin, gt_bin);
            per_class.at(c).merge(one);
            global.merge(one);
            if (config.episode_csv)
                *config.episode_csv << episodes << "," << ref.query_index << ","
                                    << ref.support_index << "," << c << "," << binary_iou(one)
                                    << "\n";
            ++episodes;
        }
    }

    MetricsReport report;
    report.mode = "one-way";
    report.fold = config.fold;
    report.episode_count = episodes;
    double novel_sum = 0.0, human_sum = 0.0;
    int novel_n = 0, human_n = 0;
    for (auto& [c, conf] : per_class) {
        const auto iou_map = per_class_iou(conf);
        auto it = iou_map.find(1);
        if (it == iou_map.end()) continue;  // class never evaluated
        report.class_iou[c] = it->second;
        human_sum += it->second;
        ++human_n;
        if (std::binary_search(split.novel.begin(), split.novel.end(), c)) {
            novel_sum += it->second;
            ++novel_n;
        }
    }
    report.novel_miou = novel_n ? novel_sum / novel_n : 0.0;
    report.human_miou = human_n ? human_sum / human_n : 0.0;
    report.bi_iou = binary_iou(global);
    return report;
}

}  // namespace

MetricsReport run_meta_test(PipelineState& state, const SplitManifest& manifest,
                            const EvalConfig& config) {
    if (!state.trained[3])
        throw StateError("run_meta_test: stage 3 has not been trained");
    if (config.mode == EvalMode::OneWay) return run_one_way(state, manifest, config);
    MetricsReport report = evaluate_kway(
        manifest, config.fold,
        [&](const Episode& episode) {
            try {
                return predict_episode(state, episode, config);
            } catch (const EmptyMask&) {
                // no usable support class: predict all background
                LabelMask bg(episode.query_image.dim(0), episode.query_image.dim(1));
                return bg;
            }
        },
        config.episode_csv);
    return report;
}

}  // namespace osp
