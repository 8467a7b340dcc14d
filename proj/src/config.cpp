#include "crossmodal/config.hpp"

#include <cmath>
#include <cstdlib>
#include <set>

#include "crossmodal/error.hpp"
#include "crossmodal/io.hpp"
#include "crossmodal/rng.hpp"

namespace crossmodal {

namespace {

using nlohmann::json;

[[noreturn]] void bad(const std::string& path, const std::string& what) {
    throw ConfigError("config: " + path + ": " + what);
}

void expect_object(const json& v, const std::string& path) {
    if (!v.is_object()) bad(path, "expected an object");
}

void expect_keys(const json& obj, const std::string& path, const std::set<std::string>& allowed) {
    expect_object(obj, path);
    for (const auto& [key, _] : obj.items())
        if (allowed.find(key) == allowed.end()) bad(path + "." + key, "unknown key");
}

double as_double(const json& v, const std::string& path) {
    if (!v.is_number()) bad(path, "expected a number");
    return v.get<double>();
}

std::uint64_t as_u64(const json& v, const std::string& path) {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0)
        return static_cast<std::uint64_t>(v.get<std::int64_t>());
    bad(path, "expected a non-negative integer");
}

std::size_t as_size(const json& v, const std::string& path) {
    return static_cast<std::size_t>(as_u64(v, path));
}

int as_int(const json& v, const std::string& path) {
    if (!v.is_number_integer() && !v.is_number_unsigned()) bad(path, "expected an integer");
    return v.get<int>();
}

bool as_bool(const json& v, const std::string& path) {
    if (!v.is_boolean()) bad(path, "expected a boolean");
    return v.get<bool>();
}

std::string as_string(const json& v, const std::string& path) {
    if (!v.is_string()) bad(path, "expected a string");
    return v.get<std::string>();
}

std::vector<std::string> as_string_list(const json& v, const std::string& path) {
    if (!v.is_array()) bad(path, "expected an array of strings");
    std::vector<std::string> out;
    for (const auto& e : v) {
        if (!e.is_string()) bad(path, "expected an array of strings");
        out.push_back(e.get<std::string>());
    }
    return out;
}

std::vector<std::size_t> as_size_list(const json& v, const std::string& path) {
    if (!v.is_array()) bad(path, "expected an array of integers");
    std::vector<std::size_t> out;
    for (const auto& e : v) out.push_back(as_size(e, path));
    return out;
}

template <typename T, typename Fn>
void maybe(const json& obj, const char* key, const std::string& path, T& slot, Fn fn) {
    if (obj.contains(key)) slot = fn(obj.at(key), path + "." + key);
}

ShapeKind parse_kind(const std::string& s, const std::string& path) {
    if (s == "plane") return ShapeKind::Plane;
    if (s == "box") return ShapeKind::Box;
    if (s == "cylinder") return ShapeKind::Cylinder;
    bad(path, "shape must be one of plane|box|cylinder");
}

const char* kind_name(ShapeKind k) {
    switch (k) {
        case ShapeKind::Plane: return "plane";
        case ShapeKind::Box: return "box";
        case ShapeKind::Cylinder: return "cylinder";
    }
    return "box";
}

ClassShapeSpec parse_class_shape(const json& v, const std::string& path) {
    expect_keys(v, path,
                {"name", "shape", "intensity", "size_min", "size_max", "height_min", "height_max",
                 "radius_min", "radius_max"});
    if (!v.contains("name") || !v.contains("shape"))
        bad(path, "class entries need at least name and shape");
    ClassShapeSpec out;
    out.name = as_string(v.at("name"), path + ".name");
    out.kind = parse_kind(as_string(v.at("shape"), path + ".shape"), path + ".shape");
    maybe(v, "intensity", path, out.intensity, as_double);
    maybe(v, "size_min", path, out.size_min, as_double);
    maybe(v, "size_max", path, out.size_max, as_double);
    maybe(v, "height_min", path, out.height_min, as_double);
    maybe(v, "height_max", path, out.height_max, as_double);
    maybe(v, "radius_min", path, out.radius_min, as_double);
    maybe(v, "radius_max", path, out.radius_max, as_double);
    if (out.size_min > out.size_max || out.height_min > out.height_max ||
        out.radius_min > out.radius_max)
        bad(path, "range minimum exceeds maximum");
    if (out.kind != ShapeKind::Plane && (out.size_min <= 0.0 || out.height_min <= 0.0 || out.radius_min <= 0.0))
        bad(path, "object dimensions must be positive");
    return out;
}

DatasetMode parse_mode(const std::string& s, const std::string& path) {
    if (s == "base_annotated") return DatasetMode::BaseAnnotated;
    if (s == "annotation_free") return DatasetMode::AnnotationFree;
    bad(path, "mode must be base_annotated or annotation_free");
}

}  // namespace

RunConfig default_run_config() {
    RunConfig cfg;
    cfg.vocab.names = {"ground", "wall", "pillar", "crate", "barrel"};
    cfg.vocab.is_base = {true, true, true, false, false};

    auto shape = [](const char* name, ShapeKind kind, double intensity) {
        ClassShapeSpec s;
        s.name = name;
        s.kind = kind;
        s.intensity = intensity;
        return s;
    };
    ClassShapeSpec ground = shape("ground", ShapeKind::Plane, 0.10);
    ClassShapeSpec wall = shape("wall", ShapeKind::Box, 0.32);
    wall.size_min = 2.6;
    wall.size_max = 3.4;
    wall.height_min = 2.2;
    wall.height_max = 3.0;
    ClassShapeSpec pillar = shape("pillar", ShapeKind::Cylinder, 0.55);
    pillar.radius_min = 0.5;
    pillar.radius_max = 0.8;
    pillar.height_min = 2.4;
    pillar.height_max = 3.2;
    ClassShapeSpec crate = shape("crate", ShapeKind::Box, 0.78);
    crate.size_min = 1.0;
    crate.size_max = 1.6;
    crate.height_min = 0.8;
    crate.height_max = 1.4;
    ClassShapeSpec barrel = shape("barrel", ShapeKind::Cylinder, 0.95);
    barrel.radius_min = 0.45;
    barrel.radius_max = 0.65;
    barrel.height_min = 1.1;
    barrel.height_max = 1.6;
    cfg.scene.classes = {ground, wall, pillar, crate, barrel};

    cfg.noise.rot_sigma = cfg.rot_sigma_deg * M_PI / 180.0;
    cfg.noise.trans_sigma = 0.05;
    cfg.noise.p_flip = 0.1;
    cfg.noise.p_drop = 0.1;
    cfg.noise.dilation_px = 2;

    cfg.model.num_classes = cfg.vocab.size();
    cfg.model.embed_dim = cfg.embed_dim;
    return cfg;
}

nlohmann::json RunConfig::merged() const {
    json j;
    std::vector<std::string> base_names, novel_names;
    for (std::size_t i = 0; i < vocab.size(); ++i)
        (vocab.is_base[i] ? base_names : novel_names).push_back(vocab.names[i]);
    j["vocab"] = {{"names", vocab.names}, {"base", base_names}, {"novel", novel_names}};
    j["embed"] = {{"dim", embed_dim}, {"seed", embed_seed}};

    json classes = json::array();
    for (const auto& c : scene.classes) {
        classes.push_back({{"name", c.name},
                           {"shape", kind_name(c.kind)},
                           {"intensity", c.intensity},
                           {"size_min", c.size_min},
                           {"size_max", c.size_max},
                           {"height_min", c.height_min},
                           {"height_max", c.height_max},
                           {"radius_min", c.radius_min},
                           {"radius_max", c.radius_max}});
    }
    j["scene"] = {{"extent", scene.extent},
                  {"objects_min", scene.objects_min},
                  {"objects_max", scene.objects_max},
                  {"points_per_object_min", scene.points_per_object_min},
                  {"points_per_object_max", scene.points_per_object_max},
                  {"ground_points", scene.ground_points},
                  {"cameras", scene.cameras},
                  {"ring_radius", scene.ring_radius},
                  {"camera_height", scene.camera_height},
                  {"image_width", scene.image_width},
                  {"image_height", scene.image_height},
                  {"focal", scene.focal},
                  {"intensity_sigma", scene.intensity_sigma},
                  {"classes", classes},
                  {"train_scenes", train_scenes},
                  {"eval_scenes", eval_scenes},
                  {"seed", scene_seed}};
    j["noise"] = {{"rot_sigma_deg", rot_sigma_deg},
                  {"trans_sigma", noise.trans_sigma},
                  {"p_flip", noise.p_flip},
                  {"p_drop", noise.p_drop},
                  {"dilation_px", noise.dilation_px}};
    j["model"] = {{"feature_dim", model.feature_dim},
                  {"image_channels", model.image_channels},
                  {"point_hidden", model.point_hidden}};
    j["vpm"] = {{"heads", model.vpm_heads}, {"r_max", vpm_r_max}};
    j["transfer"] = {{"use_vpm_filter", transfer.use_vpm_filter},
                     {"logit_distill", transfer.logit_distill},
                     {"novel_only", transfer.novel_only},
                     {"feature_distill", transfer.feature_distill},
                     {"vpm", transfer.vpm}};
    j["trainer"] = {{"stage1_steps", trainer.stage1_steps},
                    {"stage2_steps", trainer.stage2_steps},
                    {"clip_norm", trainer.clip_norm},
                    {"image_lr", trainer.image_lr},
                    {"image_weight_decay", trainer.image_weight_decay},
                    {"point_lr", trainer.point_lr},
                    {"point_weight_decay", trainer.point_weight_decay},
                    {"beta", trainer.beta},
                    {"delta", trainer.delta},
                    {"gamma", trainer.gamma},
                    {"seed", trainer.seed},
                    {"mode", trainer.mode == DatasetMode::BaseAnnotated ? "base_annotated"
                                                                        : "annotation_free"},
                    {"freeze_teacher", trainer.freeze_teacher}};
    j["eval"] = {{"workers", workers}, {"seeds", ablation_seeds}};
    return j;
}

std::string RunConfig::hash() const { return config_hash(merged()); }

std::string config_hash(const nlohmann::json& merged) {
    std::string canon = merged.dump();
    std::uint64_t h = fnv1a(canon);
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

RunConfig parse_run_config(const nlohmann::json& user) {
    expect_keys(user, "config",
                {"vocab", "embed", "scene", "noise", "model", "vpm", "transfer", "trainer", "eval"});
    RunConfig cfg = default_run_config();

    if (user.contains("vocab")) {
        const json& v = user.at("vocab");
        expect_keys(v, "vocab", {"names", "base", "novel"});
        if (!v.contains("names") || !v.contains("base") || !v.contains("novel"))
            bad("vocab", "names, base, and novel are all required");
        auto names = as_string_list(v.at("names"), "vocab.names");
        auto base = as_string_list(v.at("base"), "vocab.base");
        auto novel = as_string_list(v.at("novel"), "vocab.novel");
        cfg.vocab.names = names;
        cfg.vocab.is_base.assign(names.size(), false);
        std::set<std::string> base_set(base.begin(), base.end());
        std::set<std::string> novel_set(novel.begin(), novel.end());
        if (base_set.size() != base.size() || novel_set.size() != novel.size())
            bad("vocab", "duplicate class in base/novel lists");
        for (std::size_t i = 0; i < names.size(); ++i) {
            bool in_base = base_set.count(names[i]) > 0;
            bool in_novel = novel_set.count(names[i]) > 0;
            if (in_base == in_novel)
                bad("vocab", "class '" + names[i] + "' must appear in exactly one of base/novel");
            cfg.vocab.is_base[i] = in_base;
        }
        if (base_set.size() + novel_set.size() != names.size())
            bad("vocab", "base/novel mention classes that are not in names");
        // A replaced vocabulary invalidates the default shape table; require
        // an explicit scene.classes unless the names happen to match.
        if (names != default_run_config().vocab.names &&
            (!user.contains("scene") || !user.at("scene").contains("classes")))
            bad("vocab", "custom vocabularies must also provide scene.classes");
    }
    cfg.vocab.validate();

    if (user.contains("embed")) {
        const json& v = user.at("embed");
        expect_keys(v, "embed", {"dim", "seed"});
        maybe(v, "dim", "embed", cfg.embed_dim, as_size);
        maybe(v, "seed", "embed", cfg.embed_seed, as_u64);
        if (cfg.embed_dim < 2) bad("embed.dim", "embedding dimension must be at least 2");
    }

    if (user.contains("scene")) {
        const json& v = user.at("scene");
        expect_keys(v, "scene",
                    {"extent", "objects_min", "objects_max", "points_per_object_min",
                     "points_per_object_max", "ground_points", "cameras", "ring_radius",
                     "camera_height", "image_width", "image_height", "focal", "intensity_sigma",
                     "classes", "train_scenes", "eval_scenes", "seed"});
        maybe(v, "extent", "scene", cfg.scene.extent, as_double);
        maybe(v, "objects_min", "scene", cfg.scene.objects_min, as_int);
        maybe(v, "objects_max", "scene", cfg.scene.objects_max, as_int);
        maybe(v, "points_per_object_min", "scene", cfg.scene.points_per_object_min, as_int);
        maybe(v, "points_per_object_max", "scene", cfg.scene.points_per_object_max, as_int);
        maybe(v, "ground_points", "scene", cfg.scene.ground_points, as_int);
        maybe(v, "cameras", "scene", cfg.scene.cameras, as_int);
        maybe(v, "ring_radius", "scene", cfg.scene.ring_radius, as_double);
        maybe(v, "camera_height", "scene", cfg.scene.camera_height, as_double);
        maybe(v, "image_width", "scene", cfg.scene.image_width, as_size);
        maybe(v, "image_height", "scene", cfg.scene.image_height, as_size);
        maybe(v, "focal", "scene", cfg.scene.focal, as_double);
        maybe(v, "intensity_sigma", "scene", cfg.scene.intensity_sigma, as_double);
        maybe(v, "train_scenes", "scene", cfg.train_scenes, as_size);
        maybe(v, "eval_scenes", "scene", cfg.eval_scenes, as_size);
        maybe(v, "seed", "scene", cfg.scene_seed, as_u64);
        if (v.contains("classes")) {
            if (!v.at("classes").is_array()) bad("scene.classes", "expected an array");
            cfg.scene.classes.clear();
            std::size_t i = 0;
            for (const auto& entry : v.at("classes"))
                cfg.scene.classes.push_back(
                    parse_class_shape(entry, "scene.classes[" + std::to_string(i++) + "]"));
        }
    }

    if (user.contains("noise")) {
        const json& v = user.at("noise");
        expect_keys(v, "noise", {"rot_sigma_deg", "trans_sigma", "p_flip", "p_drop", "dilation_px"});
        maybe(v, "rot_sigma_deg", "noise", cfg.rot_sigma_deg, as_double);
        maybe(v, "trans_sigma", "noise", cfg.noise.trans_sigma, as_double);
        maybe(v, "p_flip", "noise", cfg.noise.p_flip, as_double);
        maybe(v, "p_drop", "noise", cfg.noise.p_drop, as_double);
        maybe(v, "dilation_px", "noise", cfg.noise.dilation_px, as_int);
        if (cfg.rot_sigma_deg < 0.0) bad("noise.rot_sigma_deg", "must be non-negative");
        cfg.noise.rot_sigma = cfg.rot_sigma_deg * M_PI / 180.0;
    }

    if (user.contains("model")) {
        const json& v = user.at("model");
        expect_keys(v, "model", {"feature_dim", "image_channels", "point_hidden"});
        maybe(v, "feature_dim", "model", cfg.model.feature_dim, as_size);
        maybe(v, "image_channels", "model", cfg.model.image_channels, as_size_list);
        maybe(v, "point_hidden", "model", cfg.model.point_hidden, as_size_list);
    }

    if (user.contains("vpm")) {
        const json& v = user.at("vpm");
        expect_keys(v, "vpm", {"heads", "r_max"});
        maybe(v, "heads", "vpm", cfg.model.vpm_heads, as_size);
        maybe(v, "r_max", "vpm", cfg.vpm_r_max, as_size);
        if (cfg.vpm_r_max == 0) bad("vpm.r_max", "must be positive");
    }

    if (user.contains("transfer")) {
        const json& v = user.at("transfer");
        expect_keys(v, "transfer",
                    {"use_vpm_filter", "logit_distill", "novel_only", "feature_distill", "vpm"});
        maybe(v, "use_vpm_filter", "transfer", cfg.transfer.use_vpm_filter, as_bool);
        maybe(v, "logit_distill", "transfer", cfg.transfer.logit_distill, as_bool);
        maybe(v, "novel_only", "transfer", cfg.transfer.novel_only, as_bool);
        maybe(v, "feature_distill", "transfer", cfg.transfer.feature_distill, as_bool);
        maybe(v, "vpm", "transfer", cfg.transfer.vpm, as_bool);
    }

    if (user.contains("trainer")) {
        const json& v = user.at("trainer");
        expect_keys(v, "trainer",
                    {"stage1_steps", "stage2_steps", "clip_norm", "image_lr", "image_weight_decay",
                     "point_lr", "point_weight_decay", "beta", "delta", "gamma", "seed", "mode",
                     "freeze_teacher"});
        maybe(v, "stage1_steps", "trainer", cfg.trainer.stage1_steps, as_size);
        maybe(v, "stage2_steps", "trainer", cfg.trainer.stage2_steps, as_size);
        maybe(v, "clip_norm", "trainer", cfg.trainer.clip_norm, as_double);
        maybe(v, "image_lr", "trainer", cfg.trainer.image_lr, as_double);
        maybe(v, "image_weight_decay", "trainer", cfg.trainer.image_weight_decay, as_double);
        maybe(v, "point_lr", "trainer", cfg.trainer.point_lr, as_double);
        maybe(v, "point_weight_decay", "trainer", cfg.trainer.point_weight_decay, as_double);
        maybe(v, "beta", "trainer", cfg.trainer.beta, as_double);
        maybe(v, "delta", "trainer", cfg.trainer.delta, as_double);
        maybe(v, "gamma", "trainer", cfg.trainer.gamma, as_double);
        maybe(v, "seed", "trainer", cfg.trainer.seed, as_u64);
        if (v.contains("mode"))
            cfg.trainer.mode = parse_mode(as_string(v.at("mode"), "trainer.mode"), "trainer.mode");
        maybe(v, "freeze_teacher", "trainer", cfg.trainer.freeze_teacher, as_bool);
        if (cfg.trainer.image_lr <= 0.0 || cfg.trainer.point_lr <= 0.0)
            bad("trainer", "learning rates must be positive");
        if (cfg.trainer.clip_norm <= 0.0) bad("trainer.clip_norm", "must be positive");
        if (cfg.trainer.beta < 0.0 || cfg.trainer.delta < 0.0 || cfg.trainer.gamma < 0.0)
            bad("trainer", "loss weights must be non-negative");
        if (cfg.trainer.image_weight_decay < 0.0 || cfg.trainer.point_weight_decay < 0.0)
            bad("trainer", "weight decay must be non-negative");
    }

    if (user.contains("eval")) {
        const json& v = user.at("eval");
        expect_keys(v, "eval", {"workers", "seeds"});
        maybe(v, "workers", "eval", cfg.workers, as_int);
        if (cfg.workers < 1) bad("eval.workers", "must be at least 1");
        if (v.contains("seeds")) {
            if (!v.at("seeds").is_array() || v.at("seeds").empty())
                bad("eval.seeds", "expected a non-empty array of integers");
            cfg.ablation_seeds.clear();
            for (const auto& e : v.at("seeds"))
                cfg.ablation_seeds.push_back(as_u64(e, "eval.seeds"));
        }
    }

    cfg.model.num_classes = cfg.vocab.size();
    cfg.model.embed_dim = cfg.embed_dim;
    cfg.model.validate();
    cfg.scene.validate(cfg.vocab);
    cfg.noise.validate();
    if (cfg.train_scenes == 0 || cfg.eval_scenes == 0)
        bad("scene", "train_scenes and eval_scenes must be positive");
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    try {
        return parse_run_config(read_json_file(path));
    } catch (const IoError& e) {
        // An unreadable or malformed config file is a configuration problem,
        // not a runtime failure: exit code 1, with the offending path visible.
        throw ConfigError(e.what());
    }
}

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, std::uint64_t config_seed) {
    if (flag.has_value()) return *flag;
    const char* env = std::getenv("CROSSMODAL_SEED");
    if (env != nullptr && env[0] != '\0') {
        char* end = nullptr;
        unsigned long long v = std::strtoull(env, &end, 10);
        if (end == nullptr || *end != '\0')
            throw ConfigError("CROSSMODAL_SEED must be a non-negative integer, got '" +
                              std::string(env) + "'");
        return static_cast<std::uint64_t>(v);
    }
    return config_seed;
}

}  // namespace crossmodal
