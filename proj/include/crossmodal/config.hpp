// Run configuration: typed schema with defaults, strict JSON merging (unknown
// keys are rejected with their dotted path), canonical hashing, and seed
// resolution (flag > CROSSMODAL_SEED > config).

#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "vendor/json.hpp"

#include "crossmodal/alignment.hpp"
#include "crossmodal/model.hpp"
#include "crossmodal/scenegen.hpp"

namespace crossmodal {

struct TransferFlags {
    bool use_vpm_filter = false;  // gate feature distillation by VPM match probability ≥ 0.5
    bool logit_distill = true;    // pseudo-label cross-entropy + dice on points
    bool novel_only = true;       // restrict distillation targets to novel + ignore
    bool feature_distill = true;  // cosine feature alignment on matched pairs
    bool vpm = true;              // train the pair-filtering head
};

struct TrainerParams {
    std::size_t stage1_steps = 500;
    std::size_t stage2_steps = 1000;
    double clip_norm = 1.0;  // applied in stage 1 only
    double image_lr = 3e-3, image_weight_decay = 1e-2;
    double point_lr = 6e-3, point_weight_decay = 1e-2;
    double beta = 1.0;   // image-branch loss weight
    double delta = 1.0;  // point-branch loss weight
    double gamma = 0.5;  // distillation and pair-filter weight
    std::uint64_t seed = 1;
    DatasetMode mode = DatasetMode::BaseAnnotated;
    bool freeze_teacher = false;  // ablation: stop refreshing pseudo-labels in stage 2
};

struct RunConfig {
    ClassVocabulary vocab;
    std::size_t embed_dim = 16;
    std::uint64_t embed_seed = 7;
    SceneSpec scene;
    std::size_t train_scenes = 200;
    std::size_t eval_scenes = 50;
    std::uint64_t scene_seed = 11;
    double rot_sigma_deg = 1.0;  // config-facing unit; NoiseModel carries radians
    NoiseModel noise;
    ModelConfig model;
    std::size_t vpm_r_max = 1024;
    TransferFlags transfer;
    TrainerParams trainer;
    int workers = 1;
    std::vector<std::uint64_t> ablation_seeds = {0, 1, 2};

    // Canonical, fully-populated JSON image; parse(merged()) round-trips.
    nlohmann::json merged() const;
    std::string hash() const;  // FNV-1a over the canonical dump
};

RunConfig default_run_config();
RunConfig parse_run_config(const nlohmann::json& user);
RunConfig load_run_config(const std::string& path);

std::string config_hash(const nlohmann::json& merged);

// Precedence: explicit flag, then the CROSSMODAL_SEED environment variable,
// then the configured value.
std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, std::uint64_t config_seed);

}  // namespace crossmodal
