#include "crossmodal/transfer.hpp"

#include "crossmodal/error.hpp"

namespace crossmodal {

std::vector<int> build_distill_targets(const std::vector<int>& pseudo_labels,
                                       const std::vector<std::uint8_t>& base_mask,
                                       const ClassVocabulary& vocab, bool novel_only) {
    if (pseudo_labels.size() != base_mask.size())
        throw ShapeError("build_distill_targets: " + std::to_string(pseudo_labels.size()) +
                         " labels vs " + std::to_string(base_mask.size()) + " mask entries");
    const int ignore = vocab.ignore_id();
    std::vector<int> targets(pseudo_labels.size(), ignore);
    for (std::size_t i = 0; i < pseudo_labels.size(); ++i) {
        const int l = pseudo_labels[i];
        if (base_mask[i] || l == ignore) continue;
        if (l < 0 || l > ignore)
            throw DataError("build_distill_targets: pseudo-label " + std::to_string(l) +
                            " out of vocabulary range");
        if (novel_only && vocab.is_base[static_cast<std::size_t>(l)]) continue;
        targets[i] = l;
    }
    return targets;
}

SegLoss logit_distill_loss(const Tensor& point_logits, const std::vector<int>& targets,
                           std::size_t num_classes) {
    return segmentation_loss(point_logits, targets, num_classes);
}

FeatureDistillLoss feature_distill_loss(const Tensor& image_rows, const Tensor& point_rows) {
    if (image_rows.rows() == 0) return {Tensor::scalar(0.0), 0};
    return {cosine_distance_mean(image_rows, point_rows), image_rows.rows()};
}

std::vector<int> vpm_match_labels(const PointPixelPairing& pairing,
                                  const std::vector<std::size_t>& entry_indices,
                                  const std::vector<int>& point_classes,
                                  const std::vector<LabelGrid>& pixel_classes,
                                  std::size_t num_classes) {
    const int ignore = ignore_label(num_classes);
    std::vector<int> labels(entry_indices.size(), 0);
    for (std::size_t i = 0; i < entry_indices.size(); ++i) {
        const PairEntry& e = pairing.entries[entry_indices[i]];
        const std::int32_t pix = pixel_classes[e.camera].at(e.px, e.py);
        const int pt = point_classes[e.point];
        labels[i] = (pix != ignore && pt != ignore && pix == pt) ? 1 : 0;
    }
    return labels;
}

MaskedCE vpm_loss(const Tensor& match_logits, const std::vector<int>& labels) {
    if (match_logits.cols() != 2)
        throw ShapeError("vpm_loss: expected r×2 logits, got " +
                         std::to_string(match_logits.cols()) + " columns");
    // Labels are 0/1; 2 can never appear, so it serves as the ignore id and
    // every row counts.
    return masked_softmax_ce(match_logits, labels, 2);
}

}  // namespace crossmodal
