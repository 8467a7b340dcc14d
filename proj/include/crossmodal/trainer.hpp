// Two-stage training driver, deterministic end to end, plus the shared
// evaluation paths (trained model and the raw 2D→3D transfer baseline).

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crossmodal/config.hpp"
#include "crossmodal/metrics.hpp"
#include "crossmodal/model.hpp"
#include "crossmodal/scenegen.hpp"

namespace crossmodal {

struct LossBreakdown {
    double image = 0.0;
    double point = 0.0;
    double distill_logit = 0.0;
    double distill_feat = 0.0;
    double vpm = 0.0;
};

// beta·image + delta·point + gamma·(distill_logit + distill_feat) + gamma·vpm.
// Throws TrainError naming the first non-finite component.
double total_loss(double beta, double delta, double gamma, const LossBreakdown& parts);

// FNV-1a over the raw parameter bytes, in list order.
std::uint64_t tensors_checksum(const std::vector<Tensor>& params);

// Model inputs: coordinates scaled by the workspace half-extent (z by a fixed
// vertical scale), image channels by scene-dependent depth/height ranges.
Tensor point_input_tensor(const SyntheticScene& scene, const SceneSpec& spec);
Tensor image_input_tensor(const CameraData& cam, const SceneSpec& spec);

struct TrainOutputs {
    Model model;
    TextEmbeddings text;
    std::vector<std::uint64_t> stage1_frozen_checksums;  // one per stage-1 step
};

// Runs both stages over the training split. When out_dir is non-empty, writes
// losses.log (step, stage, component, value), norms.log (image-branch gradient
// norms and clip decisions), and freeze.log (stage-1 checksums of the frozen
// point-side parameter group).
TrainOutputs train_model(const RunConfig& cfg, const std::vector<SyntheticScene>& train,
                         std::uint64_t seed, const std::string& out_dir);

std::vector<int> predict_scene(const Model& model, const TextEmbeddings& text,
                               const SyntheticScene& scene, const SceneSpec& spec);

MetricsReport evaluate_model(const Model& model, const TextEmbeddings& text,
                             const std::vector<SyntheticScene>& scenes,
                             const ClassVocabulary& vocab, const SceneSpec& spec, int workers);

// Projects every point into the stored (noisy) pseudo-label grids and takes
// the transferred label as the prediction; unmatched points count as misses.
MetricsReport evaluate_transfer_baseline(const std::vector<SyntheticScene>& scenes,
                                         const ClassVocabulary& vocab, int workers);

}  // namespace crossmodal
