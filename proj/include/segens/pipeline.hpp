#pragma once

#include <atomic>
#include <cstdlib>
#include <exception>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "segens/aggregate.hpp"
#include "segens/align.hpp"
#include "segens/fuse.hpp"
#include "segens/io.hpp"
#include "segens/metrics.hpp"
#include "segens/pixagg.hpp"
#include "segens/remap.hpp"
#include "segens/uncertainty.hpp"

namespace segens {

// ---------------------------------------------------------------------------
// File-backed aligned ensemble: chains the streaming container readers so at
// most one sample is resident at a time. Fold order is manifest order
// (containers in listed order, samples in stored order).
// ---------------------------------------------------------------------------

namespace detail {

class ChainedFileSource final : public SampleSource {
  public:
    ChainedFileSource(std::shared_ptr<std::vector<std::filesystem::path>> paths,
                      std::shared_ptr<std::vector<FlowField>> flows,
                      std::uint32_t frame_h, std::uint32_t frame_w)
        : paths_(std::move(paths)),
          flows_(std::move(flows)),
          frame_h_(frame_h),
          frame_w_(frame_w) {}

    std::optional<SampleTensor> next() override {
        while (true) {
            if (!reader_) {
                if (path_idx_ >= paths_->size()) return std::nullopt;
                reader_ =
                    std::make_unique<SampleStreamReader>((*paths_)[path_idx_++]);
            }
            auto s = reader_->next();
            if (!s) {
                reader_.reset();
                continue;
            }
            return align_sample(std::move(*s), frame_h_, frame_w_, *flows_);
        }
    }

  private:
    std::shared_ptr<std::vector<std::filesystem::path>> paths_;
    std::shared_ptr<std::vector<FlowField>> flows_;
    std::uint32_t frame_h_, frame_w_;
    std::size_t path_idx_ = 0;
    std::unique_ptr<SampleStreamReader> reader_;
};

}  // namespace detail

inline AlignedEnsemble open_file_ensemble(const DatasetIndex& index,
                                          const ManifestRecord& rec,
                                          std::uint32_t frame_h, std::uint32_t frame_w) {
    if (rec.samples.empty()) throw EmptyEnsemble("record lists no sample containers");
    auto paths = std::make_shared<std::vector<std::filesystem::path>>();
    AlignedEnsemble ens;
    ens.frame_h = frame_h;
    ens.frame_w = frame_w;
    for (const std::string& rel : rec.samples) {
        paths->push_back(index.resolve(rel));
        SampleStreamReader probe(paths->back());
        if (ens.class_columns == 0)
            ens.class_columns = probe.header().class_columns;
        else if (probe.header().class_columns != ens.class_columns)
            throw MixedClassCount("containers disagree on the class column count");
        ens.count += probe.header().count;
    }
    auto flows = std::make_shared<std::vector<FlowField>>();
    for (const std::string& rel : rec.flows) flows->push_back(read_flow(index.resolve(rel)));
    ens.open = [paths, flows, frame_h, frame_w]() {
        return std::make_unique<detail::ChainedFileSource>(paths, flows, frame_h,
                                                           frame_w);
    };
    return ens;
}

// ---------------------------------------------------------------------------
// Per-image evaluation
// ---------------------------------------------------------------------------

struct EvalOptions {
    std::vector<Measure> measures{kAllMeasures, kAllMeasures + std::size(kAllMeasures)};
    PixelAgg pixel_agg;
    PanopticOptions panoptic;
    std::uint32_t bins = 15;
    std::set<std::uint16_t> things;
    std::uint16_t num_classes = 0;  // 0 = take the first container's class count
    std::optional<ClassMapping> remap;  // applied to predictions
    bool domain_semantic = true;
    bool domain_panoptic = true;
};

struct ImageEval {
    std::string id;
    bool is_ood = false;
    std::string pair_id;
    std::uint32_t samples = 0;
    std::optional<double> iou;
    std::optional<double> pq;
    std::size_t fallback_pixels = 0;
    // Raw aggregated value per measure (orientation-dependent sign handled by
    // the consumers via uncertainty_score / confidence conversions).
    std::map<Measure, double> aggregated;
};

struct ImagePartial {
    ImageEval eval;
    ConfusionMatrix cm;
    std::map<std::uint16_t, PqClassStats> pq_stats;
    EceAccumulator ece_semantic{15};
    EceAccumulator ece_panoptic{15};
};

inline double uncertainty_score(Measure m, double aggregated) {
    return measure_orientation(m) == Orientation::higher_is_confident ? -aggregated
                                                                      : aggregated;
}

inline ImagePartial evaluate_image(const DatasetIndex& index, const ManifestRecord& rec,
                                   const EvalOptions& opt) {
    ImagePartial out{ImageEval{},
                     ConfusionMatrix(0),
                     {},
                     EceAccumulator(opt.bins),
                     EceAccumulator(opt.bins)};
    out.eval.id = rec.id;
    out.eval.is_ood = rec.is_ood;
    out.eval.pair_id = rec.pair_id;

    SemanticLabelMap gt_sem = read_semantic(index.resolve(rec.gt_semantic));
    PanopticLabelMap gt_pan = read_panoptic(index.resolve(rec.gt_panoptic));
    if (gt_pan.pixels() != gt_sem.pixels())
        throw ShapeMismatch("semantic and panoptic ground truth shapes differ");

    AlignedEnsemble ens = open_file_ensemble(index, rec, gt_sem.height, gt_sem.width);
    out.eval.samples = ens.count;

    EnsembleAccumulator acc;
    SampleTensor fused = aggregate_stream(ens, {&acc});

    PixelClassDistribution dist = acc.mean_class_distribution();
    out.eval.fallback_pixels = dist.fallback_pixels;
    SemanticLabelMap pred_sem = semantic_inference(dist);
    PanopticLabelMap pred_pan = panoptic_inference(fused, opt.things, opt.panoptic);
    if (opt.remap) {
        pred_sem = remap_semantic(pred_sem, *opt.remap);
        pred_pan = remap_panoptic(pred_pan, *opt.remap);
    }

    std::uint16_t num_classes = opt.num_classes ? opt.num_classes : dist.classes;

    if (opt.domain_semantic) {
        out.cm = confusion_matrix(pred_sem, gt_sem, num_classes);
        out.eval.iou = per_image_iou(pred_sem, gt_sem, num_classes);
        calib_samples_semantic(dist, pred_sem, gt_sem,
                               [&](const CalibSample& s) { out.ece_semantic.add(s); });
    }
    if (opt.domain_panoptic) {
        out.pq_stats = pq_stats(pred_pan, gt_pan);
        out.eval.pq = per_image_pq(pred_pan, gt_pan);
        calib_samples_panoptic(dist, pred_pan, gt_pan,
                               [&](const CalibSample& s) { out.ece_panoptic.add(s); });
    }

    for (Measure m : opt.measures) {
        UncertaintyMap map;
        switch (m) {
            case Measure::predictive_mask_variance:
                map = predictive_mask_variance(fused);
                break;
            case Measure::max_softmax_cm:
                map = max_softmax_score(dist);
                break;
            case Measure::max_norm_sigmoid_mask:
                map = max_normalized_sigmoid_mask(fused);
                break;
            case Measure::combined_softmax_sigmoid:
                map = combined_softmax_sigmoid(max_softmax_score(dist),
                                               max_normalized_sigmoid_mask(fused),
                                               pred_pan, opt.things);
                break;
            default:
                map = acc.finalize(m);
        }
        out.eval.aggregated[m] = aggregate_pixels(map, opt.pixel_agg);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dataset-level reduction
// ---------------------------------------------------------------------------

struct DatasetEval {
    std::vector<ImageEval> images;  // manifest order
    ConfusionMatrix cm{0};
    std::map<std::uint16_t, PqClassStats> pq_class_stats;
    EceAccumulator ece_semantic{15};
    EceAccumulator ece_panoptic{15};
    std::size_t ood_without_pair = 0;

    std::optional<double> dataset_miou() const { return miou(cm); }
    PqResult dataset_pq() const { return pq_reduce(pq_class_stats); }

    // Selective-prediction AURC per measure: risk = 1 - per-image metric,
    // confidence = signed aggregated score. Images lacking the metric are
    // skipped.
    double aurc_for(Measure m, bool panoptic) const {
        std::vector<ScoreRecord> recs;
        for (const ImageEval& e : images) {
            const std::optional<double>& metric = panoptic ? e.pq : e.iou;
            if (!metric) continue;
            auto it = e.aggregated.find(m);
            if (it == e.aggregated.end()) continue;
            recs.push_back(
                {e.id, -uncertainty_score(m, it->second), 1.0 - *metric, e.is_ood});
        }
        return aurc(std::move(recs));
    }

    double auroc_for(Measure m) const {
        std::vector<double> scores;
        std::vector<bool> labels;
        for (const ImageEval& e : images) {
            auto it = e.aggregated.find(m);
            if (it == e.aggregated.end()) continue;
            scores.push_back(uncertainty_score(m, it->second));
            labels.push_back(e.is_ood);
        }
        return auroc(scores, labels);
    }
};

inline unsigned worker_count() {
    if (const char* env = std::getenv("SEGENS_THREADS")) {
        long n = std::strtol(env, nullptr, 10);
        if (n >= 1) return static_cast<unsigned>(n);
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw ? hw : 1;
}

// Images fan out over a worker pool; reduction runs single-threaded in
// manifest order so results are deterministic regardless of thread count.
inline DatasetEval evaluate_dataset(const DatasetIndex& index, const EvalOptions& opt) {
    if (index.records.empty()) throw EmptyInput("manifest has no records");
    std::size_t n = index.records.size();
    std::vector<std::unique_ptr<ImagePartial>> partials(n);
    std::exception_ptr failure;
    std::mutex failure_mu;
    std::atomic<std::size_t> next{0};
    unsigned workers = std::min<std::size_t>(worker_count(), n);

    auto work = [&] {
        while (true) {
            std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                partials[i] = std::make_unique<ImagePartial>(
                    evaluate_image(index, index.records[i], opt));
            } catch (...) {
                std::lock_guard<std::mutex> lock(failure_mu);
                if (!failure) failure = std::current_exception();
                return;
            }
        }
    };
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < workers; ++t) pool.emplace_back(work);
        for (std::thread& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);

    DatasetEval out;
    out.ood_without_pair = index.ood_without_pair;
    out.ece_semantic = EceAccumulator(opt.bins);
    out.ece_panoptic = EceAccumulator(opt.bins);
    bool cm_init = false;
    for (std::size_t i = 0; i < n; ++i) {
        ImagePartial& p = *partials[i];
        out.images.push_back(std::move(p.eval));
        if (opt.domain_semantic) {
            if (!cm_init) {
                out.cm = std::move(p.cm);
                cm_init = true;
            } else {
                out.cm.merge(p.cm);
            }
            out.ece_semantic.merge(p.ece_semantic);
        }
        if (opt.domain_panoptic) {
            for (const auto& [cls, s] : p.pq_stats) out.pq_class_stats[cls].merge(s);
            out.ece_panoptic.merge(p.ece_panoptic);
        }
        partials[i].reset();
    }
    return out;
}

}  // namespace segens
