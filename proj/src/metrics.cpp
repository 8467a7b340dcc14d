#include "crossmodal/metrics.hpp"

#include "crossmodal/error.hpp"

namespace crossmodal {

ConfusionAccumulator::ConfusionAccumulator(std::size_t num_classes)
    : num_classes_(num_classes), counts_(num_classes * (num_classes + 1), 0) {
    if (num_classes == 0) throw ConfigError("metrics: need at least one class");
}

void ConfusionAccumulator::add(int gt, int pred) {
    int c = static_cast<int>(num_classes_);
    if (gt < 0 || gt > c) throw DataError("metrics: ground-truth label out of range");
    if (pred < 0 || pred > c) throw DataError("metrics: predicted label out of range");
    if (gt == c) return;  // ignore-labelled ground truth is excluded
    counts_[static_cast<std::size_t>(gt) * (num_classes_ + 1) + static_cast<std::size_t>(pred)]++;
}

void ConfusionAccumulator::add_batch(const std::vector<int>& gt, const std::vector<int>& pred) {
    if (gt.size() != pred.size()) throw ShapeError("metrics: gt/pred length mismatch");
    for (std::size_t i = 0; i < gt.size(); ++i) add(gt[i], pred[i]);
}

void ConfusionAccumulator::merge(const ConfusionAccumulator& other) {
    if (other.num_classes_ != num_classes_) throw ShapeError("metrics: class count mismatch in merge");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionAccumulator::count(std::size_t gt, std::size_t pred_col) const {
    return counts_.at(gt * (num_classes_ + 1) + pred_col);
}

std::uint64_t ConfusionAccumulator::total() const {
    std::uint64_t t = 0;
    for (auto v : counts_) t += v;
    return t;
}

std::uint64_t ConfusionAccumulator::gt_count(std::size_t cls) const {
    std::uint64_t t = 0;
    for (std::size_t p = 0; p <= num_classes_; ++p) t += count(cls, p);
    return t;
}

double ConfusionAccumulator::iou(std::size_t cls) const {
    std::uint64_t tp = count(cls, cls);
    std::uint64_t fn = gt_count(cls) - tp;
    std::uint64_t fp = 0;
    for (std::size_t g = 0; g < num_classes_; ++g)
        if (g != cls) fp += count(g, cls);
    std::uint64_t denom = tp + fp + fn;
    if (denom == 0) return 0.0;
    return static_cast<double>(tp) / static_cast<double>(denom);
}

double hiou(double base, double novel) {
    if (base + novel <= 0.0) return 0.0;
    return 2.0 * base * novel / (base + novel);
}

MetricsReport compute_metrics(const std::vector<int>& pred, const std::vector<int>& gt,
                              const ClassVocabulary& vocab) {
    ConfusionAccumulator confusion(vocab.size());
    confusion.add_batch(gt, pred);
    return compute_metrics(confusion, vocab);
}

MetricsReport compute_metrics(const ConfusionAccumulator& confusion,
                              const ClassVocabulary& vocab) {
    if (confusion.num_classes() != vocab.size())
        throw ShapeError("metrics: vocabulary size does not match confusion matrix");
    MetricsReport report;
    report.num_points = confusion.total();
    double base_sum = 0.0, novel_sum = 0.0, all_sum = 0.0;
    std::size_t base_n = 0, novel_n = 0, all_n = 0;
    for (std::size_t c = 0; c < vocab.size(); ++c) {
        ClassMetric m;
        m.name = vocab.names[c];
        m.present = confusion.gt_count(c) > 0;
        m.iou = m.present ? confusion.iou(c) : 0.0;
        if (m.present) {
            all_sum += m.iou;
            all_n++;
            if (vocab.is_base[c]) {
                base_sum += m.iou;
                base_n++;
            } else {
                novel_sum += m.iou;
                novel_n++;
            }
        }
        report.per_class.push_back(std::move(m));
    }
    report.miou_base = base_n ? base_sum / static_cast<double>(base_n) : 0.0;
    report.miou_novel = novel_n ? novel_sum / static_cast<double>(novel_n) : 0.0;
    report.miou_all = all_n ? all_sum / static_cast<double>(all_n) : 0.0;
    report.hiou = hiou(report.miou_base, report.miou_novel);
    return report;
}

}  // namespace crossmodal
