// Class vocabulary, frozen pseudo text embeddings, cosine similarity logits,
// and the shared CE+dice segmentation loss used by both branches.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crossmodal/tensor.hpp"

namespace crossmodal {

struct ClassVocabulary {
    std::vector<std::string> names;
    std::vector<std::uint8_t> is_base;  // parallel to names

    std::size_t size() const { return names.size(); }
    int ignore_id() const { return static_cast<int>(names.size()); }
    std::vector<std::size_t> base_ids() const;
    std::vector<std::size_t> novel_ids() const;
    // Base/novel must partition the ids; duplicate names rejected.
    void validate() const;
};

struct TextEmbeddings {
    std::size_t dim = 0;
    std::vector<double> matrix;  // C×dim row-major, unit rows, frozen

    Tensor as_tensor(std::size_t num_classes) const;  // constant leaf
};

// Deterministic unit rows seeded by hash(name, seed); rejection-resampled so
// every pair of distinct rows has |cos| < 0.5. 1000 failed tries for one row
// → ConfigError (dim too small for the vocabulary).
TextEmbeddings embed_text(const ClassVocabulary& vocab, std::size_t dim, std::uint64_t seed);

// Projected features are L2-normalized, then dotted against the unit text
// rows, so logits are cosine similarities in [−1, 1]. A zero-norm projected
// row yields an all-zero logits row.
Tensor compute_logits(const Tensor& features, const Tensor& head_weight,
                      const TextEmbeddings& emb);

// CE + dice over rows whose label is not the ignore sentinel.
//   total = mean CE + (1 − mean dice over classes present in the targets)
// dice_c = (2·Σpₜ + ε)/(Σp + Σt + ε) with ε = 1, computed on softmax
// probabilities. All rows ignored → constant zero scalar flagged empty.
struct SegLoss {
    Tensor total;
    double ce = 0.0;
    double dice = 0.0;  // the (1 − mean dice) term
    std::size_t count = 0;
    bool empty() const { return count == 0; }
};
SegLoss segmentation_loss(const Tensor& logits, const std::vector<int>& labels,
                          std::size_t num_classes);

// L_image: CE+dice against per-pixel pseudo-labels.
SegLoss image_branch_loss(const Tensor& logits, const std::vector<int>& pixel_labels,
                          std::size_t num_classes);

// L_point: CE+dice against 3-D ground truth; base_only replaces novel-class
// labels with the ignore sentinel first.
SegLoss point_branch_loss(const Tensor& logits, const std::vector<int>& gt_labels,
                          const ClassVocabulary& vocab, bool base_only);

// Row-wise argmax with lowest-id tie-break; the inference rule.
std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace crossmodal
