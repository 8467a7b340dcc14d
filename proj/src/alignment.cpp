#include "crossmodal/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "crossmodal/error.hpp"
#include "crossmodal/kernels.hpp"
#include "crossmodal/rng.hpp"

namespace crossmodal {

std::vector<std::size_t> ClassVocabulary::base_ids() const {
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < is_base.size(); ++i)
        if (is_base[i]) ids.push_back(i);
    return ids;
}

std::vector<std::size_t> ClassVocabulary::novel_ids() const {
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < is_base.size(); ++i)
        if (!is_base[i]) ids.push_back(i);
    return ids;
}

void ClassVocabulary::validate() const {
    if (names.empty()) throw ConfigError("vocabulary: no classes");
    if (names.size() != is_base.size())
        throw ConfigError("vocabulary: base/novel split does not cover all classes");
    std::set<std::string> unique(names.begin(), names.end());
    if (unique.size() != names.size()) throw ConfigError("vocabulary: duplicate class name");
}

Tensor TextEmbeddings::as_tensor(std::size_t num_classes) const {
    return Tensor::from_values({num_classes, dim}, matrix, false);
}

TextEmbeddings embed_text(const ClassVocabulary& vocab, std::size_t dim, std::uint64_t seed) {
    vocab.validate();
    TextEmbeddings emb;
    emb.dim = dim;
    emb.matrix.resize(vocab.size() * dim);
    for (std::size_t c = 0; c < vocab.size(); ++c) {
        Rng rng(hash_name_seed(vocab.names[c], seed));
        double* row = emb.matrix.data() + c * dim;
        bool accepted = false;
        for (int attempt = 0; attempt < 1000 && !accepted; ++attempt) {
            double sumsq = 0.0;
            for (std::size_t j = 0; j < dim; ++j) {
                row[j] = rng.normal();
                sumsq += row[j] * row[j];
            }
            if (sumsq == 0.0) continue;
            const double inv = 1.0 / std::sqrt(sumsq);
            for (std::size_t j = 0; j < dim; ++j) row[j] *= inv;
            accepted = true;
            for (std::size_t prev = 0; prev < c && accepted; ++prev) {
                const double cos =
                    kern::active().dot(row, emb.matrix.data() + prev * dim, dim);
                if (std::abs(cos) >= 0.5) accepted = false;
            }
        }
        if (!accepted)
            throw ConfigError("embed_text: could not separate '" + vocab.names[c] +
                              "' after 1000 tries; embedding dim " + std::to_string(dim) +
                              " is too small");
    }
    return emb;
}

Tensor compute_logits(const Tensor& features, const Tensor& head_weight,
                      const TextEmbeddings& emb) {
    const Tensor projected = matmul(features, head_weight);
    if (projected.cols() != emb.dim)
        throw ShapeError("compute_logits: head output dim " + std::to_string(projected.cols()) +
                         " != embedding dim " + std::to_string(emb.dim));
    const Tensor normed = l2_normalize_rows(projected);
    const std::size_t num_classes = emb.matrix.size() / emb.dim;
    return matmul_nt(normed, emb.as_tensor(num_classes));
}

SegLoss segmentation_loss(const Tensor& logits, const std::vector<int>& labels,
                          std::size_t num_classes) {
    constexpr double kDiceEps = 1.0;
    const int ignore = static_cast<int>(num_classes);
    if (logits.cols() != num_classes)
        throw ShapeError("segmentation_loss: logits have " + std::to_string(logits.cols()) +
                         " columns for " + std::to_string(num_classes) + " classes");

    MaskedCE ce = masked_softmax_ce(logits, labels, ignore);
    if (ce.empty()) return {ce.loss, 0.0, 0.0, 0};

    const std::size_t m = logits.rows(), c = num_classes;
    std::vector<double> row_mask(m, 0.0);
    std::vector<double> onehot(m * c, 0.0);
    std::vector<double> class_count(c, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        if (labels[i] == ignore) continue;
        row_mask[i] = 1.0;
        onehot[i * c + labels[i]] = 1.0;
        class_count[labels[i]] += 1.0;
    }
    std::size_t present = 0;
    for (double n : class_count)
        if (n > 0.0) ++present;
    std::vector<double> present_weight(c, 0.0);
    for (std::size_t j = 0; j < c; ++j)
        if (class_count[j] > 0.0) present_weight[j] = 1.0 / static_cast<double>(present);

    const Tensor probs = scale_rows(softmax_rows(logits), row_mask);
    const Tensor onehot_t = Tensor::from_values({m, c}, std::move(onehot), false);
    const Tensor inter = colsum(mul(probs, onehot_t));
    const Tensor psum = colsum(probs);
    const Tensor tsum = Tensor::from_values({1, c}, std::move(class_count), false);
    const Tensor dice_per_class =
        divide(add_scalar(scale(inter, 2.0), kDiceEps), add_scalar(add(psum, tsum), kDiceEps));
    const Tensor dice_mean =
        sum_all(mul(dice_per_class, Tensor::from_values({1, c}, std::move(present_weight), false)));
    const Tensor dice_loss = add_scalar(scale(dice_mean, -1.0), 1.0);

    SegLoss out;
    out.total = add(ce.loss, dice_loss);
    out.ce = ce.loss.item();
    out.dice = dice_loss.item();
    out.count = ce.count;
    return out;
}

SegLoss image_branch_loss(const Tensor& logits, const std::vector<int>& pixel_labels,
                          std::size_t num_classes) {
    return segmentation_loss(logits, pixel_labels, num_classes);
}

SegLoss point_branch_loss(const Tensor& logits, const std::vector<int>& gt_labels,
                          const ClassVocabulary& vocab, bool base_only) {
    if (!base_only) return segmentation_loss(logits, gt_labels, vocab.size());
    std::vector<int> masked(gt_labels);
    const int ignore = vocab.ignore_id();
    for (int& l : masked)
        if (l != ignore && !vocab.is_base[static_cast<std::size_t>(l)]) l = ignore;
    return segmentation_loss(logits, masked, vocab.size());
}

std::vector<int> argmax_rows(const Tensor& logits) {
    const std::size_t m = logits.rows(), n = logits.cols();
    std::vector<int> out(m);
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = logits.values().data() + i * n;
        std::size_t best = 0;
        for (std::size_t j = 1; j < n; ++j)
            if (row[j] > row[best]) best = j;  // strict: ties keep the lowest id
        out[i] = static_cast<int>(best);
    }
    return out;
}

}  // namespace crossmodal
