#include "crossmodal/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <thread>

#include "crossmodal/error.hpp"
#include "crossmodal/rng.hpp"
#include "crossmodal/transfer.hpp"

namespace crossmodal {

namespace {

constexpr double kDivergenceLimit = 1e6;
constexpr double kVerticalScale = 4.0;  // normalizes world z for model inputs

void check_finite(double v, const char* component) {
    if (!std::isfinite(v))
        throw TrainError(std::string("trainer: ") + component + " loss is not finite");
}

// k distinct indices from [0, n), ascending. Partial Fisher-Yates, then sort
// so downstream gathers are order-stable.
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k, Rng& rng) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    if (k >= n) return idx;
    for (std::size_t i = 0; i < k; ++i)
        std::swap(idx[i], idx[i + static_cast<std::size_t>(rng.integer(n - i))]);
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

std::vector<int> grid_labels(const LabelGrid& g) { return {g.data.begin(), g.data.end()}; }

struct PairRows {
    Tensor image_rows;                // constant (teacher side)
    Tensor point_rows;                // live
    std::vector<std::size_t> order;   // entry indices, grouped by camera
};

// Gathers embedding-space rows for the given pairing entries, grouped by
// camera so the per-camera image tensors can be gathered contiguously.
PairRows gather_pair_rows(const PointPixelPairing& pairing,
                          const std::vector<std::size_t>& entry_indices,
                          const std::vector<Tensor>& image_proj, const Tensor& point_proj,
                          std::size_t image_width) {
    PairRows out;
    std::size_t cams = image_proj.size();
    std::vector<Tensor> image_parts;
    std::vector<std::size_t> point_order;
    for (std::size_t cam = 0; cam < cams; ++cam) {
        std::vector<std::size_t> rows;
        for (std::size_t e : entry_indices) {
            const PairEntry& ent = pairing.entries[e];
            if (ent.camera != cam) continue;
            rows.push_back(static_cast<std::size_t>(ent.py) * image_width +
                           static_cast<std::size_t>(ent.px));
            point_order.push_back(ent.point);
            out.order.push_back(e);
        }
        if (!rows.empty()) image_parts.push_back(gather_rows_const(image_proj[cam], rows));
    }
    out.image_rows = concat_rows(image_parts);
    out.point_rows = gather_rows(point_proj, point_order);
    return out;
}

struct StepLosses {
    Tensor total;          // graph root for backward
    LossBreakdown parts;   // unweighted component values
};

struct LogFiles {
    std::ofstream losses, norms, freeze;
    bool enabled = false;
};

void log_component(LogFiles& logs, std::size_t step, int stage, const char* name, double value) {
    if (!logs.enabled) return;
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%zu\t%d\t%s\t%.17g\n", step, stage, name, value);
    logs.losses << buf;
}

void log_norm(LogFiles& logs, std::size_t step, int stage, const char* branch, double pre,
              double post, bool clipped) {
    if (!logs.enabled) return;
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%zu\t%d\t%s\t%.17g\t%.17g\t%d\n", step, stage, branch, pre,
                  post, clipped ? 1 : 0);
    logs.norms << buf;
}

}  // namespace

double total_loss(double beta, double delta, double gamma, const LossBreakdown& parts) {
    check_finite(parts.image, "image");
    check_finite(parts.point, "point");
    check_finite(parts.distill_logit, "distill_logit");
    check_finite(parts.distill_feat, "distill_feat");
    check_finite(parts.vpm, "vpm");
    double total = beta * parts.image + delta * parts.point +
                   gamma * (parts.distill_logit + parts.distill_feat) + gamma * parts.vpm;
    check_finite(total, "total");
    return total;
}

std::uint64_t tensors_checksum(const std::vector<Tensor>& params) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const Tensor& t : params) {
        for (double v : t.values()) {
            std::uint64_t bits;
            std::memcpy(&bits, &v, 8);
            for (int b = 0; b < 8; ++b) {
                h ^= (bits >> (8 * b)) & 0xff;
                h *= 0x100000001b3ull;
            }
        }
    }
    return h;
}

Tensor point_input_tensor(const SyntheticScene& scene, const SceneSpec& spec) {
    std::size_t n = scene.coords.size();
    std::vector<double> rows(n * 4);
    double planar = spec.extent / 2.0;
    for (std::size_t i = 0; i < n; ++i) {
        rows[i * 4 + 0] = scene.coords[i][0] / planar;
        rows[i * 4 + 1] = scene.coords[i][1] / planar;
        rows[i * 4 + 2] = scene.coords[i][2] / kVerticalScale;
        rows[i * 4 + 3] = scene.intensity[i];
    }
    return Tensor::from_values({n, 4}, rows, /*requires_grad=*/false);
}

Tensor image_input_tensor(const CameraData& cam, const SceneSpec& spec) {
    std::size_t n = cam.calib.width * cam.calib.height;
    if (cam.channels.size() != 3 * n) throw ShapeError("image_input_tensor: bad channel buffer");
    double depth_scale = spec.ring_radius + spec.extent;
    std::vector<double> rows(n * 3);
    for (std::size_t i = 0; i < n; ++i) {
        rows[i * 3 + 0] = cam.channels[i] / depth_scale;
        rows[i * 3 + 1] = cam.channels[n + i];
        rows[i * 3 + 2] = cam.channels[2 * n + i] / kVerticalScale;
    }
    return Tensor::from_values({n, 3}, rows, /*requires_grad=*/false);
}

namespace {

// Image forward over all cameras: per-camera supervised loss against the
// stored pseudo grids plus the teacher's own predictions for transfer.
struct ImagePass {
    Tensor loss;  // mean over cameras with any annotated pixel
    double value = 0.0;
    std::vector<Tensor> proj;          // per-camera (H·W)×D embedding rows
    std::vector<LabelGrid> teacher;    // per-camera argmax grids
};

ImagePass image_pass(const Model& model, const SyntheticScene& scene, const RunConfig& cfg,
                     const TextEmbeddings& text, bool want_teacher) {
    ImagePass out;
    Tensor sum = Tensor::scalar(0.0);
    std::size_t active = 0;
    for (const CameraData& cam : scene.cameras) {
        Tensor input = image_input_tensor(cam, cfg.scene);
        Tensor feats = model.image_features(input, cam.calib.height, cam.calib.width);
        Tensor logits = compute_logits(feats, model.w_i2t, text);
        out.proj.push_back(matmul(feats, model.w_i2t));
        SegLoss sl = image_branch_loss(logits, grid_labels(cam.pseudo_grid), cfg.vocab.size());
        if (!sl.empty()) {
            sum = add(sum, sl.total);
            active++;
        }
        if (want_teacher) {
            LabelGrid g;
            g.width = cam.calib.width;
            g.height = cam.calib.height;
            std::vector<int> pred = argmax_rows(logits);
            g.data.assign(pred.begin(), pred.end());
            out.teacher.push_back(std::move(g));
        }
    }
    out.loss = active > 0 ? scale(sum, 1.0 / static_cast<double>(active)) : sum;
    out.value = out.loss.item();
    return out;
}

StepLosses stage2_step(const Model& model, const SyntheticScene& scene, const RunConfig& cfg,
                       const TextEmbeddings& text, std::uint64_t seed, std::size_t step,
                       const std::vector<LabelGrid>* frozen_teacher) {
    const std::size_t num_classes = cfg.vocab.size();
    StepLosses out;

    ImagePass img = image_pass(model, scene, cfg, text, frozen_teacher == nullptr);
    const std::vector<LabelGrid>& teacher = frozen_teacher != nullptr ? *frozen_teacher : img.teacher;
    out.parts.image = img.value;
    Tensor total = scale(img.loss, cfg.trainer.beta);

    Tensor pin = point_input_tensor(scene, cfg.scene);
    Tensor pfeats = model.point_features(pin);
    Tensor plogits = compute_logits(pfeats, model.w_p2t, text);
    Tensor pproj = matmul(pfeats, model.w_p2t);

    if (cfg.trainer.mode == DatasetMode::BaseAnnotated) {
        SegLoss pl = point_branch_loss(plogits, scene.gt_labels, cfg.vocab, /*base_only=*/true);
        out.parts.point = pl.empty() ? 0.0 : pl.total.item();
        if (!pl.empty()) total = add(total, scale(pl.total, cfg.trainer.delta));
    }

    std::vector<Calibration> calibs;
    for (const auto& cam : scene.cameras) calibs.push_back(cam.calib);
    PointPixelPairing pairing = project_points(scene.coords, calibs);
    std::vector<int> point_pseudo =
        transfer_labels(pairing, teacher, num_classes, scene.coords.size());

    if (cfg.transfer.logit_distill) {
        std::vector<int> targets =
            build_distill_targets(point_pseudo, scene.base_mask, cfg.vocab, cfg.transfer.novel_only);
        SegLoss dl = logit_distill_loss(plogits, targets, num_classes);
        out.parts.distill_logit = dl.empty() ? 0.0 : dl.total.item();
        if (!dl.empty()) total = add(total, scale(dl.total, cfg.trainer.gamma));
    }

    std::size_t image_width = scene.cameras.empty() ? 0 : scene.cameras[0].calib.width;

    if (cfg.transfer.feature_distill) {
        std::vector<std::size_t> matched =
            matched_pairs_for_distill(pairing, teacher, point_pseudo, num_classes);
        if (cfg.transfer.use_vpm_filter && cfg.transfer.vpm && !matched.empty()) {
            // Chunked, gradient-free screening: keep pairs the filter scores
            // with match probability >= 0.5.
            std::vector<std::size_t> kept;
            for (std::size_t start = 0; start < matched.size(); start += cfg.vpm_r_max) {
                std::size_t stop = std::min(matched.size(), start + cfg.vpm_r_max);
                std::vector<std::size_t> chunk(matched.begin() + static_cast<std::ptrdiff_t>(start),
                                               matched.begin() + static_cast<std::ptrdiff_t>(stop));
                PairRows rows = gather_pair_rows(pairing, chunk, img.proj, pproj, image_width);
                Tensor logits = model.vpm_forward(rows.image_rows, detach(rows.point_rows));
                const auto& vals = logits.values();
                for (std::size_t r = 0; r < rows.order.size(); ++r)
                    if (vals[r * 2 + 1] >= vals[r * 2]) kept.push_back(rows.order[r]);
            }
            std::sort(kept.begin(), kept.end());
            matched = std::move(kept);
        }
        if (!matched.empty()) {
            PairRows rows = gather_pair_rows(pairing, matched, img.proj, pproj, image_width);
            FeatureDistillLoss fd = feature_distill_loss(rows.image_rows, rows.point_rows);
            out.parts.distill_feat = fd.empty() ? 0.0 : fd.value.item();
            if (!fd.empty()) total = add(total, scale(fd.value, cfg.trainer.gamma));
        }
    }

    if (cfg.transfer.vpm && !pairing.entries.empty()) {
        Rng sampler(mix_seed(hash_name_seed("vpm.sample", seed), step));
        std::vector<std::size_t> sampled =
            sample_indices(pairing.entries.size(), cfg.vpm_r_max, sampler);
        PairRows rows = gather_pair_rows(pairing, sampled, img.proj, pproj, image_width);
        std::vector<int> point_pred = argmax_rows(plogits);
        std::vector<int> labels =
            vpm_match_labels(pairing, rows.order, point_pred, teacher, num_classes);
        Tensor logits = model.vpm_forward(rows.image_rows, rows.point_rows);
        MaskedCE vl = vpm_loss(logits, labels);
        out.parts.vpm = vl.empty() ? 0.0 : vl.loss.item();
        if (!vl.empty()) total = add(total, scale(vl.loss, cfg.trainer.gamma));
    }

    out.total = total;
    return out;
}

}  // namespace

TrainOutputs train_model(const RunConfig& cfg, const std::vector<SyntheticScene>& train,
                         std::uint64_t seed, const std::string& out_dir) {
    if (train.empty()) throw DataError("trainer: empty training split");
    TrainOutputs out{Model::init(cfg.model, seed),
                     embed_text(cfg.vocab, cfg.embed_dim, cfg.embed_seed),
                     {}};
    Model& model = out.model;

    AdamWConfig img_hp;
    img_hp.lr = cfg.trainer.image_lr;
    img_hp.weight_decay = cfg.trainer.image_weight_decay;
    AdamWConfig pt_hp;
    pt_hp.lr = cfg.trainer.point_lr;
    pt_hp.weight_decay = cfg.trainer.point_weight_decay;

    std::vector<Tensor> image_group = model.image_params();
    std::vector<Tensor> point_group = model.point_params(cfg.transfer.vpm);
    std::vector<Tensor> frozen_group = model.point_params(true);
    AdamW img_opt(image_group, img_hp);
    AdamW pt_opt(point_group, pt_hp);

    LogFiles logs;
    if (!out_dir.empty()) {
        logs.enabled = true;
        logs.losses.open(out_dir + "/losses.log");
        logs.norms.open(out_dir + "/norms.log");
        logs.freeze.open(out_dir + "/freeze.log");
        if (!logs.losses || !logs.norms || !logs.freeze)
            throw IoError("trainer: cannot open log files under " + out_dir);
    }

    const std::size_t n = train.size();
    for (std::size_t s = 0; s < cfg.trainer.stage1_steps; ++s) {
        const SyntheticScene& scene = train[s % n];
        ImagePass img = image_pass(model, scene, cfg, out.text, /*want_teacher=*/false);
        check_finite(img.value, "image");
        if (img.value > kDivergenceLimit)
            throw TrainError("trainer: image loss diverged in stage 1 at step " + std::to_string(s));
        img_opt.zero_grad();
        img.loss.backward();
        for (Tensor& p : image_group) p.ensure_grad();
        double pre = clip_grad_global_norm(image_group, cfg.trainer.clip_norm);
        double post = std::min(pre, cfg.trainer.clip_norm);
        img_opt.step();
        log_component(logs, s, 1, "image", img.value);
        log_norm(logs, s, 1, "image", pre, post, pre > cfg.trainer.clip_norm);
        std::uint64_t sum = tensors_checksum(frozen_group);
        out.stage1_frozen_checksums.push_back(sum);
        if (logs.enabled) {
            char buf[40];
            std::snprintf(buf, sizeof(buf), "%zu\t%016llx\n", s,
                          static_cast<unsigned long long>(sum));
            logs.freeze << buf;
        }
    }

    std::map<std::size_t, std::vector<LabelGrid>> teacher_cache;
    for (std::size_t s = 0; s < cfg.trainer.stage2_steps; ++s) {
        std::size_t step = cfg.trainer.stage1_steps + s;
        std::size_t scene_idx = s % n;
        const SyntheticScene& scene = train[scene_idx];

        const std::vector<LabelGrid>* frozen = nullptr;
        if (cfg.trainer.freeze_teacher) {
            auto it = teacher_cache.find(scene_idx);
            if (it == teacher_cache.end()) {
                // First visit under a frozen teacher: snapshot the grids the
                // scene will keep for the rest of the stage.
                ImagePass snap = image_pass(model, scene, cfg, out.text, /*want_teacher=*/true);
                it = teacher_cache.emplace(scene_idx, std::move(snap.teacher)).first;
            }
            frozen = &it->second;
        }
        StepLosses losses = stage2_step(model, scene, cfg, out.text, seed, step, frozen);

        double value =
            total_loss(cfg.trainer.beta, cfg.trainer.delta, cfg.trainer.gamma, losses.parts);
        if (value > kDivergenceLimit)
            throw TrainError("trainer: total loss diverged in stage 2 at step " + std::to_string(step));

        img_opt.zero_grad();
        pt_opt.zero_grad();
        losses.total.backward();
        for (Tensor& p : image_group) p.ensure_grad();
        for (Tensor& p : point_group) p.ensure_grad();
        log_norm(logs, step, 2, "image", grad_global_norm(image_group),
                 grad_global_norm(image_group), false);
        log_norm(logs, step, 2, "point", grad_global_norm(point_group),
                 grad_global_norm(point_group), false);
        img_opt.step();
        pt_opt.step();

        log_component(logs, step, 2, "image", losses.parts.image);
        log_component(logs, step, 2, "point", losses.parts.point);
        log_component(logs, step, 2, "distill_logit", losses.parts.distill_logit);
        log_component(logs, step, 2, "distill_feat", losses.parts.distill_feat);
        log_component(logs, step, 2, "vpm", losses.parts.vpm);
    }
    return out;
}

std::vector<int> predict_scene(const Model& model, const TextEmbeddings& text,
                               const SyntheticScene& scene, const SceneSpec& spec) {
    Tensor input = point_input_tensor(scene, spec);
    Tensor logits = compute_logits(model.point_features(input), model.w_p2t, text);
    return argmax_rows(logits);
}

namespace {

template <typename Fn>
MetricsReport pooled_eval(const std::vector<SyntheticScene>& scenes, const ClassVocabulary& vocab,
                          int workers, Fn per_scene) {
    std::size_t w = std::max(1, workers);
    w = std::min<std::size_t>(w, std::max<std::size_t>(scenes.size(), 1));
    std::vector<ConfusionAccumulator> parts(w, ConfusionAccumulator(vocab.size()));
    auto run_range = [&](std::size_t worker) {
        for (std::size_t i = worker; i < scenes.size(); i += w) {
            std::vector<int> pred = per_scene(scenes[i]);
            parts[worker].add_batch(scenes[i].gt_labels, pred);
        }
    };
    if (w == 1) {
        run_range(0);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t k = 0; k < w; ++k) pool.emplace_back(run_range, k);
        for (auto& t : pool) t.join();
    }
    ConfusionAccumulator confusion(vocab.size());
    for (const auto& p : parts) confusion.merge(p);
    MetricsReport report = compute_metrics(confusion, vocab);
    report.num_scenes = scenes.size();
    return report;
}

}  // namespace

MetricsReport evaluate_model(const Model& model, const TextEmbeddings& text,
                             const std::vector<SyntheticScene>& scenes,
                             const ClassVocabulary& vocab, const SceneSpec& spec, int workers) {
    return pooled_eval(scenes, vocab, workers, [&](const SyntheticScene& scene) {
        return predict_scene(model, text, scene, spec);
    });
}

MetricsReport evaluate_transfer_baseline(const std::vector<SyntheticScene>& scenes,
                                         const ClassVocabulary& vocab, int workers) {
    return pooled_eval(scenes, vocab, workers, [&](const SyntheticScene& scene) {
        std::vector<Calibration> calibs;
        std::vector<LabelGrid> grids;
        for (const auto& cam : scene.cameras) {
            calibs.push_back(cam.calib);
            grids.push_back(cam.pseudo_grid);
        }
        PointPixelPairing pairing = project_points(scene.coords, calibs);
        return transfer_labels(pairing, grids, vocab.size(), scene.coords.size());
    });
}

}  // namespace crossmodal
