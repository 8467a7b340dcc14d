// The two learned branches and the vision-point matcher, with a flat named
// parameter registry for checkpointing, checksums, and optimizer grouping.

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "crossmodal/tensor.hpp"

namespace crossmodal {

struct ModelConfig {
    std::size_t num_classes = 0;
    std::size_t embed_dim = 16;            // text embedding dim D
    std::size_t feature_dim = 16;          // extractor output dim
    std::size_t image_in_channels = 3;     // depth, intensity, height renders
    std::vector<std::size_t> image_channels = {10, 12};  // two 3×3 mixing layers
    std::size_t point_in_features = 4;     // x, y, z, intensity
    std::vector<std::size_t> point_hidden = {32, 32};
    std::size_t vpm_heads = 2;             // must divide embed_dim

    void validate() const;
};

// Per-head attention maps; all weights D×(D/h).
struct VpmHead {
    Tensor q, k, v;
};

struct VpmParams {
    std::vector<VpmHead> self_heads;   // over image rows
    std::vector<VpmHead> cross_heads;  // image queries vs point keys/values
    Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;  // D → 2D → D, tanh
    Tensor cls_w1, cls_b1, cls_w2, cls_b2;  // D → D → 2, tanh
};

struct Model {
    ModelConfig cfg;

    // image extractor: two unfold-3×3 mixing layers + pointwise map, all tanh
    Tensor conv1_w, conv1_b;
    Tensor conv2_w, conv2_b;
    Tensor img_out_w, img_out_b;
    Tensor w_i2t;  // feature_dim × embed_dim, no bias

    // point extractor: 3-layer pointwise MLP, tanh
    Tensor pt_w1, pt_b1, pt_w2, pt_b2, pt_w3, pt_b3;
    Tensor w_p2t;

    VpmParams vpm;

    static Model init(const ModelConfig& cfg, std::uint64_t seed);

    // Fixed registry order; names are stable across versions of the same
    // architecture (they key checkpoints).
    std::vector<std::pair<std::string, Tensor>> named_params() const;
    std::vector<Tensor> image_params() const;  // extractor + w_i2t
    std::vector<Tensor> point_params(bool include_vpm) const;  // extractor + w_p2t (+ VPM)
    std::vector<Tensor> vpm_params() const;

    // channels is (H·W)×image_in_channels for one camera; output (H·W)×feature_dim.
    Tensor image_features(const Tensor& channels, std::size_t height, std::size_t width) const;
    // feats is N×point_in_features; output N×feature_dim.
    Tensor point_features(const Tensor& feats) const;
    // Self-attention over image rows, multi-head cross-attention into point
    // rows, FFN, binary classifier; r×D inputs → r×2 match logits.
    Tensor vpm_forward(const Tensor& image_rows, const Tensor& point_rows) const;
};

}  // namespace crossmodal
