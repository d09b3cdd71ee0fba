#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "segens/types.hpp"

namespace segens {

// ---------------------------------------------------------------------------
// Semantic metrics
// ---------------------------------------------------------------------------

// Rows = gt class id, cols = predicted class id, both in [1, num_classes].
// Pixels with gt VOID are skipped. Stored as a flat (num_classes+1)^2 grid
// so dataset-native (possibly sparse) id spaces work unchanged.
struct ConfusionMatrix {
    std::uint16_t num_classes = 0;
    std::vector<std::uint64_t> counts;  // (num_classes+1)^2

    explicit ConfusionMatrix(std::uint16_t n = 0)
        : num_classes(n),
          counts(static_cast<std::size_t>(n + 1) * (n + 1), 0) {}

    std::uint64_t& at(std::uint16_t gt, std::uint16_t pred) {
        return counts[static_cast<std::size_t>(gt) * (num_classes + 1) + pred];
    }
    std::uint64_t at(std::uint16_t gt, std::uint16_t pred) const {
        return counts[static_cast<std::size_t>(gt) * (num_classes + 1) + pred];
    }
    void merge(const ConfusionMatrix& o) {
        for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += o.counts[i];
    }
};

inline ConfusionMatrix confusion_matrix(const SemanticLabelMap& pred,
                                        const SemanticLabelMap& gt,
                                        std::uint16_t num_classes) {
    if (pred.pixels() != gt.pixels())
        throw ShapeMismatch("prediction and ground truth shapes differ");
    ConfusionMatrix cm(num_classes);
    for (std::size_t i = 0; i < gt.pixels(); ++i) {
        if (gt.ids[i] == kVoidClass) continue;
        cm.at(gt.ids[i], std::min<std::uint16_t>(pred.ids[i], num_classes))++;
    }
    return cm;
}

// Dataset mIoU: average IoU over classes with gt presence. Classes with
// predictions but no ground truth anywhere are ignored (distribution-shift
// rule). Returns nullopt if no class has ground truth.
inline std::optional<double> miou(const ConfusionMatrix& cm) {
    double total = 0.0;
    int n = 0;
    for (std::uint16_t k = 1; k <= cm.num_classes; ++k) {
        std::uint64_t tp = cm.at(k, k), fp = 0, fn = 0;
        for (std::uint16_t j = 1; j <= cm.num_classes; ++j) {
            if (j != k) {
                fp += cm.at(j, k);
                fn += cm.at(k, j);
            }
        }
        std::uint64_t gt_total = tp + fn;
        if (gt_total == 0) continue;
        total += static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
        ++n;
    }
    if (n == 0) return std::nullopt;
    return total / n;
}

// Per-image IoU averaged over classes present in gt or pred of this image
// (gt VOID pixels excluded on both sides). All-VOID images yield nullopt.
inline std::optional<double> per_image_iou(const SemanticLabelMap& pred,
                                           const SemanticLabelMap& gt,
                                           std::uint16_t num_classes) {
    if (pred.pixels() != gt.pixels())
        throw ShapeMismatch("prediction and ground truth shapes differ");
    std::vector<std::uint64_t> inter(num_classes + 1, 0), gt_area(num_classes + 1, 0),
        pred_area(num_classes + 1, 0);
    bool any = false;
    for (std::size_t i = 0; i < gt.pixels(); ++i) {
        if (gt.ids[i] == kVoidClass) continue;
        any = true;
        std::uint16_t g = gt.ids[i];
        std::uint16_t p = std::min<std::uint16_t>(pred.ids[i], num_classes);
        gt_area[g]++;
        pred_area[p]++;
        if (g == p) inter[g]++;
    }
    if (!any) return std::nullopt;
    double total = 0.0;
    int n = 0;
    for (std::uint16_t k = 1; k <= num_classes; ++k) {
        std::uint64_t uni = gt_area[k] + pred_area[k] - inter[k];
        if (uni == 0) continue;
        total += static_cast<double>(inter[k]) / static_cast<double>(uni);
        ++n;
    }
    return total / n;
}

// ---------------------------------------------------------------------------
// Panoptic quality
// ---------------------------------------------------------------------------

struct PqClassStats {
    double iou_sum = 0.0;
    std::uint32_t tp = 0, fp = 0, fn = 0;

    void merge(const PqClassStats& o) {
        iou_sum += o.iou_sum;
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
    }
    bool present() const { return tp + fp + fn > 0; }
    double pq() const {
        return present() ? iou_sum / (tp + 0.5 * fp + 0.5 * fn) : 0.0;
    }
    double sq() const { return tp ? iou_sum / tp : 0.0; }
    double rq() const {
        return present() ? tp / (tp + 0.5 * fp + 0.5 * fn) : 0.0;
    }
};

struct PqResult {
    double pq = 0.0, sq = 0.0, rq = 0.0;
    std::map<std::uint16_t, PqClassStats> per_class;
    int classes_counted = 0;
};

// Per-class segment stats: segments match within class at IoU > 0.5 (unique
// by the standard PQ argument). Predicted segments with more than half their
// area over gt VOID are not counted as false positives.
inline std::map<std::uint16_t, PqClassStats> pq_stats(const PanopticLabelMap& pred,
                                                      const PanopticLabelMap& gt) {
    if (pred.pixels() != gt.pixels())
        throw ShapeMismatch("prediction and ground truth shapes differ");

    std::map<std::uint32_t, std::uint64_t> gt_area, pred_area, void_overlap;
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint64_t> inter;
    for (std::size_t i = 0; i < gt.pixels(); ++i) {
        std::uint32_t g = gt.ids[i], p = pred.ids[i];
        if (g != kVoidSegment) gt_area[g]++;
        if (p != kVoidSegment) {
            pred_area[p]++;
            if (g == kVoidSegment)
                void_overlap[p]++;
            else
                inter[{g, p}]++;
        }
    }

    std::map<std::uint16_t, PqClassStats> stats;
    std::set<std::uint32_t> matched_gt, matched_pred;
    for (const auto& [key, overlap] : inter) {
        auto [g, p] = key;
        if (segment_class(g) != segment_class(p)) continue;
        double uni = static_cast<double>(gt_area[g] + pred_area[p] - overlap);
        double iou = overlap / uni;
        if (iou > 0.5) {
            PqClassStats& s = stats[segment_class(g)];
            s.iou_sum += iou;
            s.tp++;
            matched_gt.insert(g);
            matched_pred.insert(p);
        }
    }
    for (const auto& [g, area] : gt_area)
        if (!matched_gt.count(g)) stats[segment_class(g)].fn++;
    for (const auto& [p, area] : pred_area) {
        if (matched_pred.count(p)) continue;
        if (2 * void_overlap[p] > area) continue;  // mostly over VOID: ignored
        stats[segment_class(p)].fp++;
    }
    return stats;
}

// Reduce per-class stats to PQ/SQ/RQ, averaging over classes present. With
// ignore_without_gt, classes with no ground truth segments are skipped.
inline PqResult pq_reduce(const std::map<std::uint16_t, PqClassStats>& stats,
                          bool ignore_without_gt = false) {
    PqResult r;
    r.per_class = stats;
    for (const auto& [cls, s] : stats) {
        if (!s.present()) continue;
        if (ignore_without_gt && s.tp + s.fn == 0) continue;
        r.pq += s.pq();
        r.sq += s.sq();
        r.rq += s.rq();
        r.classes_counted++;
    }
    if (r.classes_counted > 0) {
        r.pq /= r.classes_counted;
        r.sq /= r.classes_counted;
        r.rq /= r.classes_counted;
    }
    return r;
}

inline PqResult pq(const PanopticLabelMap& pred, const PanopticLabelMap& gt,
                   bool ignore_without_gt = false) {
    return pq_reduce(pq_stats(pred, gt), ignore_without_gt);
}

inline std::optional<double> per_image_pq(const PanopticLabelMap& pred,
                                          const PanopticLabelMap& gt) {
    auto stats = pq_stats(pred, gt);
    PqResult r = pq_reduce(stats);
    if (r.classes_counted == 0) return std::nullopt;
    return r.pq;
}

// ---------------------------------------------------------------------------
// Calibration
// ---------------------------------------------------------------------------

struct CalibSample {
    double confidence;  // in [0, 1]
    bool correct;
};

// Streaming equal-width binning on [0,1]; bins are right-closed, so a
// confidence of exactly 0 lands in the first bin.
class EceAccumulator {
  public:
    explicit EceAccumulator(std::uint32_t bins = 15) : bins_(bins) {
        if (bins_ < 1) throw Error("ECE needs at least one bin");
        count_.assign(bins_, 0);
        conf_sum_.assign(bins_, 0.0);
        correct_.assign(bins_, 0);
    }

    void add(const CalibSample& s) {
        if (!(s.confidence >= 0.0 && s.confidence <= 1.0))
            throw Error("calibration confidence out of [0,1]");
        std::uint32_t b =
            s.confidence <= 0.0
                ? 0
                : static_cast<std::uint32_t>(std::ceil(s.confidence * bins_)) - 1;
        b = std::min(b, bins_ - 1);
        count_[b]++;
        conf_sum_[b] += s.confidence;
        if (s.correct) correct_[b]++;
        ++n_;
    }

    std::uint64_t total() const { return n_; }

    void merge(const EceAccumulator& o) {
        if (o.bins_ != bins_) throw ShapeMismatch("merging ECE accumulators with different bin counts");
        for (std::uint32_t b = 0; b < bins_; ++b) {
            count_[b] += o.count_[b];
            conf_sum_[b] += o.conf_sum_[b];
            correct_[b] += o.correct_[b];
        }
        n_ += o.n_;
    }

    double ece() const {
        if (n_ == 0) throw EmptyInput("no calibration samples");
        double e = 0.0;
        for (std::uint32_t b = 0; b < bins_; ++b) {
            if (count_[b] == 0) continue;
            double acc = static_cast<double>(correct_[b]) / count_[b];
            double conf = conf_sum_[b] / count_[b];
            e += (static_cast<double>(count_[b]) / n_) * std::abs(acc - conf);
        }
        return e;
    }

  private:
    std::uint32_t bins_;
    std::uint64_t n_ = 0;
    std::vector<std::uint64_t> count_, correct_;
    std::vector<double> conf_sum_;
};

inline double ece(const std::vector<CalibSample>& samples, std::uint32_t bins = 15) {
    EceAccumulator acc(bins);
    for (const CalibSample& s : samples) acc.add(s);
    return acc.ece();
}

// One sample per non-VOID gt pixel: confidence = max softmax of the fused
// class distribution, correct = semantic argmax equals gt.
template <class Sink>
void calib_samples_semantic(const PixelClassDistribution& d, const SemanticLabelMap& pred,
                            const SemanticLabelMap& gt, Sink&& sink) {
    if (d.pixels() != gt.pixels() || pred.pixels() != gt.pixels())
        throw ShapeMismatch("calibration inputs disagree on shape");
    for (std::size_t i = 0; i < gt.pixels(); ++i) {
        if (gt.ids[i] == kVoidClass) continue;
        auto row = d.pixel(i);
        float best = row[0];
        for (std::uint16_t k = 1; k < d.classes; ++k) best = std::max(best, row[k]);
        sink(CalibSample{static_cast<double>(best), pred.ids[i] == gt.ids[i]});
    }
}

// One sample per non-VOID gt pixel: correct iff the predicted segment under
// the pixel is PQ-matched (same class, IoU > 0.5) to the gt segment under it.
template <class Sink>
void calib_samples_panoptic(const PixelClassDistribution& d, const PanopticLabelMap& pred,
                            const PanopticLabelMap& gt, Sink&& sink) {
    if (d.pixels() != gt.pixels() || pred.pixels() != gt.pixels())
        throw ShapeMismatch("calibration inputs disagree on shape");

    // Recover the PQ matching for this image.
    std::map<std::uint32_t, std::uint64_t> gt_area, pred_area;
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint64_t> inter;
    for (std::size_t i = 0; i < gt.pixels(); ++i) {
        std::uint32_t g = gt.ids[i], p = pred.ids[i];
        if (g != kVoidSegment) gt_area[g]++;
        if (p != kVoidSegment) pred_area[p]++;
        if (g != kVoidSegment && p != kVoidSegment) inter[{g, p}]++;
    }
    std::set<std::pair<std::uint32_t, std::uint32_t>> matched;
    for (const auto& [key, overlap] : inter) {
        auto [g, p] = key;
        if (segment_class(g) != segment_class(p)) continue;
        double uni = static_cast<double>(gt_area[g] + pred_area[p] - overlap);
        if (overlap / uni > 0.5) matched.insert({g, p});
    }

    for (std::size_t i = 0; i < gt.pixels(); ++i) {
        if (gt.ids[i] == kVoidSegment) continue;
        auto row = d.pixel(i);
        float best = row[0];
        for (std::uint16_t k = 1; k < d.classes; ++k) best = std::max(best, row[k]);
        bool correct = pred.ids[i] != kVoidSegment &&
                       matched.count({gt.ids[i], pred.ids[i]}) > 0;
        sink(CalibSample{static_cast<double>(best), correct});
    }
}

// ---------------------------------------------------------------------------
// Selective prediction / OOD
// ---------------------------------------------------------------------------

struct ScoreRecord {
    std::string image_id;
    double confidence;
    double risk;  // 1 - per-image metric, in [0, 1]
    bool is_ood = false;
};

// Mean selective risk over all discrete coverage levels, deferring lowest
// confidence last. Ties in confidence break stably by image id.
inline double aurc(std::vector<ScoreRecord> records) {
    if (records.empty()) throw EmptyInput("AURC needs at least one record");
    std::sort(records.begin(), records.end(),
              [](const ScoreRecord& a, const ScoreRecord& b) {
                  if (a.confidence != b.confidence) return a.confidence > b.confidence;
                  return a.image_id < b.image_id;
              });
    double risk_sum = 0.0, area = 0.0;
    for (std::size_t k = 0; k < records.size(); ++k) {
        risk_sum += records[k].risk;
        area += risk_sum / static_cast<double>(k + 1);
    }
    return area / static_cast<double>(records.size());
}

// Rank-statistic AUROC: P(score_pos > score_neg) + 0.5 * P(tie), computed
// from tie-aware ranks.
inline double auroc(const std::vector<double>& scores, const std::vector<bool>& labels) {
    if (scores.size() != labels.size())
        throw ShapeMismatch("scores and labels differ in length");
    std::size_t n_pos = 0;
    for (bool l : labels) n_pos += l ? 1 : 0;
    std::size_t n_neg = labels.size() - n_pos;
    if (n_pos == 0 || n_neg == 0)
        throw DegenerateLabels("AUROC needs both positive and negative labels");

    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double pos_rank_sum = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        double mid_rank = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
        for (std::size_t k = i; k <= j; ++k)
            if (labels[order[k]]) pos_rank_sum += mid_rank;
        i = j + 1;
    }
    return (pos_rank_sum - 0.5 * n_pos * (n_pos + 1)) /
           (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

}  // namespace segens
