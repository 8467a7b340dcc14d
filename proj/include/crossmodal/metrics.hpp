// Evaluation accounting: pooled confusion counts over an eval set, per-class
// IoU, base/novel means, and their harmonic combination.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crossmodal/alignment.hpp"

namespace crossmodal {

// Rows: ground-truth class (ignore rows are skipped entirely).
// Columns: predicted class, plus one trailing column for "no prediction"
// (points the system abstained on still count as false negatives).
class ConfusionAccumulator {
public:
    explicit ConfusionAccumulator(std::size_t num_classes);

    // pred may be the ignore sentinel (= num_classes) to mean "no prediction".
    void add(int gt, int pred);
    void add_batch(const std::vector<int>& gt, const std::vector<int>& pred);
    void merge(const ConfusionAccumulator& other);

    std::size_t num_classes() const { return num_classes_; }
    std::uint64_t count(std::size_t gt, std::size_t pred_col) const;
    std::uint64_t total() const;
    std::uint64_t gt_count(std::size_t cls) const;

    // TP / (TP + FP + FN); zero denominator yields 0.
    double iou(std::size_t cls) const;

private:
    std::size_t num_classes_;
    std::vector<std::uint64_t> counts_;  // num_classes x (num_classes + 1)
};

struct ClassMetric {
    std::string name;
    double iou = 0.0;
    bool present = false;  // appeared as ground truth anywhere in the eval set
};

struct MetricsReport {
    std::vector<ClassMetric> per_class;
    double miou_base = 0.0;
    double miou_novel = 0.0;
    double miou_all = 0.0;
    double hiou = 0.0;
    std::uint64_t num_points = 0;
    std::size_t num_scenes = 0;
};

// 2ab/(a+b); defined as 0 when both are 0.
double hiou(double base, double novel);

// Means cover only classes present in the ground truth of the eval set.
MetricsReport compute_metrics(const ConfusionAccumulator& confusion,
                              const ClassVocabulary& vocab);

// Convenience entry over parallel prediction/ground-truth arrays (the single
// metrics path both trained evaluation and the baseline go through).
MetricsReport compute_metrics(const std::vector<int>& pred, const std::vector<int>& gt,
                              const ClassVocabulary& vocab);

}  // namespace crossmodal
