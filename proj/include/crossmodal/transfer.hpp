// Cross-modal transfer: logit-distillation targets, feature distillation and
// the vision-point matching losses.

#pragma once

#include <cstdint>
#include <vector>

#include "crossmodal/alignment.hpp"
#include "crossmodal/geometry.hpp"
#include "crossmodal/tensor.hpp"

namespace crossmodal {

// Per-point distillation targets from projected teacher labels:
//  - base-annotated points → ignore (their supervision is 3-D GT),
//  - unpaired points (sentinel pseudo-label) → ignore,
//  - with novel_only, pseudo-labels of base classes → ignore,
//  - everything else keeps its pseudo-label.
std::vector<int> build_distill_targets(const std::vector<int>& pseudo_labels,
                                       const std::vector<std::uint8_t>& base_mask,
                                       const ClassVocabulary& vocab, bool novel_only);

// CE+dice over the non-ignored distill targets (same composition as the
// branch segmentation losses).
SegLoss logit_distill_loss(const Tensor& point_logits, const std::vector<int>& targets,
                           std::size_t num_classes);

// mean(1 − cosine) over matched (image row, point row) pairs; the image side
// is expected to be detached by the caller (the image branch is the teacher).
struct FeatureDistillLoss {
    Tensor value;
    std::size_t pairs = 0;
    bool empty() const { return pairs == 0; }
};
FeatureDistillLoss feature_distill_loss(const Tensor& image_rows, const Tensor& point_rows);

// Binary match labels over pairing entries: 1 iff the point's class equals
// the class at its projected pixel; the ignore sentinel never matches.
std::vector<int> vpm_match_labels(const PointPixelPairing& pairing,
                                  const std::vector<std::size_t>& entry_indices,
                                  const std::vector<int>& point_classes,
                                  const std::vector<LabelGrid>& pixel_classes,
                                  std::size_t num_classes);

// Softmax over the two logits per pair + cross-entropy against the binary
// labels, averaged over pairs; r = 0 → empty zero scalar.
MaskedCE vpm_loss(const Tensor& match_logits, const std::vector<int>& labels);

}  // namespace crossmodal
