#pragma once

#include <set>
#include <vector>

#include "segens/aggregate.hpp"
#include "segens/fuse.hpp"
#include "segens/types.hpp"

namespace segens {

// Shannon entropy in nats with 0 * ln 0 = 0.
template <class Range>
double entropy(const Range& dist) {
    double h = 0.0;
    for (double p : dist)
        if (p > 0.0) h -= p * std::log(p);
    return h;
}

// ---------------------------------------------------------------------------
// Streaming per-pixel state for the Table-style measure family. State size
// is independent of the number of samples observed: plain per-pixel sums,
// divided out at finalize so streaming and batch recomputation agree.
// ---------------------------------------------------------------------------

class EnsembleAccumulator final : public SampleAccumulator {
  public:
    void observe(const SampleTensor& s) override {
        if (n_ == 0) init(s);
        if (s.queries != queries_ || s.pixels() != pixels_)
            throw ShapeMismatch("accumulator shape differs from sample");
        std::size_t px = pixels_;

        PixelClassDistribution d = pixel_class_distribution(s);
        std::vector<double> m = mask_assignment_distribution(s);

        std::vector<double> cls(classes_);
        for (std::size_t i = 0; i < px; ++i) {
            auto row = d.pixel(i);
            for (std::uint16_t k = 0; k < classes_; ++k) {
                cls[k] = row[k];
                sum_class_[i * classes_ + k] += cls[k];
            }
            sum_class_entropy_[i] += entropy(cls);

            const double* mrow = m.data() + i * queries_;
            double hm = 0.0;
            for (std::uint32_t p = 0; p < queries_; ++p) {
                double v = mrow[p];
                sum_mask_[i * queries_ + p] += v;
                if (v > 0.0) hm -= v * std::log(v);
            }
            sum_mask_entropy_[i] += hm;
        }
        for (std::uint32_t p = 0; p < queries_; ++p) {
            const float* plane = s.mask_logits.data() + static_cast<std::size_t>(p) * px;
            for (std::size_t i = 0; i < px; ++i) {
                double sig = sigmoid(plane[i]);
                sum_sigma_[static_cast<std::size_t>(p) * px + i] += sig;
                sum_sigma_sq_[static_cast<std::size_t>(p) * px + i] += sig * sig;
            }
        }
        ++n_;
    }

    std::uint32_t samples_seen() const { return n_; }
    std::uint32_t queries() const { return queries_; }
    std::uint16_t classes() const { return classes_; }

    // Probability-space predictive mean over the c dataset classes (Eq.-1
    // style mean of per-sample distributions).
    PixelClassDistribution mean_class_distribution() const {
        require_samples();
        PixelClassDistribution out(height_, width_, classes_);
        for (std::size_t i = 0; i < sum_class_.size(); ++i)
            out.probs[i] = static_cast<float>(sum_class_[i] / n_);
        return out;
    }

    UncertaintyMap predictive_entropy_cm() const {
        require_samples();
        UncertaintyMap out(Measure::predictive_entropy_cm, height_, width_);
        std::vector<double> mean(classes_);
        for (std::size_t i = 0; i < pixels_; ++i) {
            for (std::uint16_t k = 0; k < classes_; ++k)
                mean[k] = sum_class_[i * classes_ + k] / n_;
            out.values[i] = static_cast<float>(entropy(mean));
        }
        return out;
    }

    UncertaintyMap predictive_entropy_m() const {
        require_samples();
        UncertaintyMap out(Measure::predictive_entropy_m, height_, width_);
        std::vector<double> mean(queries_);
        for (std::size_t i = 0; i < pixels_; ++i) {
            for (std::uint32_t p = 0; p < queries_; ++p)
                mean[p] = sum_mask_[i * queries_ + p] / n_;
            out.values[i] = static_cast<float>(entropy(mean));
        }
        return out;
    }

    UncertaintyMap expected_entropy_cm() const {
        return mean_map(Measure::expected_entropy_cm, sum_class_entropy_);
    }
    UncertaintyMap expected_entropy_m() const {
        return mean_map(Measure::expected_entropy_m, sum_mask_entropy_);
    }

    UncertaintyMap mutual_information_cm() const {
        return mutual_information(Measure::mutual_information_cm, sum_class_, classes_,
                                  sum_class_entropy_);
    }
    UncertaintyMap mutual_information_m() const {
        return mutual_information(Measure::mutual_information_m, sum_mask_, queries_,
                                  sum_mask_entropy_);
    }

    // Mean over queries of the across-sample population variance of
    // sigma(M_p(x)).
    UncertaintyMap expected_mask_variance() const {
        require_samples();
        UncertaintyMap out(Measure::expected_mask_variance, height_, width_);
        out.degenerate = n_ == 1;
        for (std::size_t i = 0; i < pixels_; ++i) {
            double acc = 0.0;
            for (std::uint32_t p = 0; p < queries_; ++p) {
                std::size_t j = static_cast<std::size_t>(p) * pixels_ + i;
                double mean = sum_sigma_[j] / n_;
                double var = sum_sigma_sq_[j] / n_ - mean * mean;
                acc += std::max(0.0, var);
            }
            out.values[i] = static_cast<float>(acc / queries_);
        }
        return out;
    }

    UncertaintyMap finalize(Measure m) const {
        switch (m) {
            case Measure::predictive_entropy_cm: return predictive_entropy_cm();
            case Measure::predictive_entropy_m: return predictive_entropy_m();
            case Measure::expected_entropy_cm: return expected_entropy_cm();
            case Measure::expected_entropy_m: return expected_entropy_m();
            case Measure::mutual_information_cm: return mutual_information_cm();
            case Measure::mutual_information_m: return mutual_information_m();
            case Measure::expected_mask_variance: return expected_mask_variance();
            default:
                throw Error("measure is not accumulator-backed: " +
                            std::string(measure_name(m)));
        }
    }

  private:
    void init(const SampleTensor& s) {
        queries_ = s.queries;
        classes_ = s.dataset_classes();
        height_ = s.height;
        width_ = s.width;
        pixels_ = s.pixels();
        sum_class_.assign(pixels_ * classes_, 0.0);
        sum_class_entropy_.assign(pixels_, 0.0);
        sum_mask_.assign(pixels_ * queries_, 0.0);
        sum_mask_entropy_.assign(pixels_, 0.0);
        sum_sigma_.assign(pixels_ * queries_, 0.0);
        sum_sigma_sq_.assign(pixels_ * queries_, 0.0);
    }
    void require_samples() const {
        if (n_ == 0) throw NoSamples("accumulator has seen no samples");
    }
    UncertaintyMap mean_map(Measure m, const std::vector<double>& sums) const {
        require_samples();
        UncertaintyMap out(m, height_, width_);
        for (std::size_t i = 0; i < pixels_; ++i)
            out.values[i] = static_cast<float>(sums[i] / n_);
        return out;
    }
    // Both entropy terms evaluated in double so the Jensen gap never goes
    // negative past rounding noise.
    UncertaintyMap mutual_information(Measure m, const std::vector<double>& dist_sums,
                                      std::size_t arity,
                                      const std::vector<double>& expected_sums) const {
        require_samples();
        UncertaintyMap out(m, height_, width_);
        out.degenerate = n_ == 1;
        std::vector<double> mean(arity);
        for (std::size_t i = 0; i < pixels_; ++i) {
            for (std::size_t k = 0; k < arity; ++k)
                mean[k] = dist_sums[i * arity + k] / n_;
            double mi = entropy(mean) - expected_sums[i] / n_;
            if (mi < -1e-9)
                throw Error("mutual information fell below the Jensen floor");
            out.values[i] = static_cast<float>(std::max(0.0, mi));
        }
        return out;
    }

    std::uint32_t n_ = 0;
    std::uint32_t queries_ = 0;
    std::uint16_t classes_ = 0;
    std::uint32_t height_ = 0, width_ = 0;
    std::size_t pixels_ = 0;
    std::vector<double> sum_class_;          // px * c
    std::vector<double> sum_class_entropy_;  // px
    std::vector<double> sum_mask_;           // px * P
    std::vector<double> sum_mask_entropy_;   // px
    std::vector<double> sum_sigma_;          // P * px
    std::vector<double> sum_sigma_sq_;       // P * px
};

// ---------------------------------------------------------------------------
// Fused-prediction measures (no streaming state needed).
// ---------------------------------------------------------------------------

inline UncertaintyMap max_softmax_score(const PixelClassDistribution& d) {
    UncertaintyMap out(Measure::max_softmax_cm, d.height, d.width);
    for (std::size_t i = 0; i < d.pixels(); ++i) {
        auto row = d.pixel(i);
        float best = row[0];
        for (std::uint16_t k = 1; k < d.classes; ++k) best = std::max(best, row[k]);
        out.values[i] = best;
    }
    return out;
}

inline UncertaintyMap max_normalized_sigmoid_mask(const SampleTensor& fused) {
    UncertaintyMap out(Measure::max_norm_sigmoid_mask, fused.height, fused.width);
    std::size_t px = fused.pixels();
    for (std::size_t i = 0; i < px; ++i) {
        double total = 0.0, best = 0.0;
        for (std::uint32_t p = 0; p < fused.queries; ++p) {
            double v = sigmoid(fused.mask_logits[static_cast<std::size_t>(p) * px + i]);
            total += v;
            best = std::max(best, v);
        }
        out.values[i] = static_cast<float>(best / total);
    }
    return out;
}

// Variance across queries of the fused sample's sigma masks.
inline UncertaintyMap predictive_mask_variance(const SampleTensor& fused) {
    UncertaintyMap out(Measure::predictive_mask_variance, fused.height, fused.width);
    std::size_t px = fused.pixels();
    for (std::size_t i = 0; i < px; ++i) {
        double sum = 0.0, sum_sq = 0.0;
        for (std::uint32_t p = 0; p < fused.queries; ++p) {
            double v = sigmoid(fused.mask_logits[static_cast<std::size_t>(p) * px + i]);
            sum += v;
            sum_sq += v * v;
        }
        double mean = sum / fused.queries;
        out.values[i] =
            static_cast<float>(std::max(0.0, sum_sq / fused.queries - mean * mean));
    }
    return out;
}

// Max softmax everywhere, except on pixels whose panoptic segment is a thing
// class, where it is the mean of the two confidence scores.
inline UncertaintyMap combined_softmax_sigmoid(const UncertaintyMap& max_softmax,
                                               const UncertaintyMap& max_norm_sigmoid,
                                               const PanopticLabelMap& panoptic,
                                               const std::set<std::uint16_t>& things) {
    if (max_softmax.pixels() != panoptic.pixels() ||
        max_norm_sigmoid.pixels() != panoptic.pixels())
        throw ShapeMismatch("combined measure inputs disagree on shape");
    UncertaintyMap out(Measure::combined_softmax_sigmoid, max_softmax.height,
                       max_softmax.width);
    for (std::size_t i = 0; i < out.pixels(); ++i) {
        std::uint16_t cls = segment_class(panoptic.ids[i]);
        out.values[i] = things.count(cls)
                            ? 0.5f * (max_softmax.values[i] + max_norm_sigmoid.values[i])
                            : max_softmax.values[i];
    }
    return out;
}

// All eleven measure maps for one fused prediction. Single-sample ensembles
// get exact zeros for the sample-spread measures, tagged degenerate.
inline std::vector<UncertaintyMap> compute_all_measures(
    const EnsembleAccumulator& acc, const SampleTensor& fused,
    const PanopticLabelMap& panoptic, const std::set<std::uint16_t>& things) {
    PixelClassDistribution mean_d = acc.mean_class_distribution();
    UncertaintyMap msm = max_softmax_score(mean_d);
    UncertaintyMap mns = max_normalized_sigmoid_mask(fused);

    std::vector<UncertaintyMap> out;
    out.push_back(acc.predictive_entropy_cm());
    out.push_back(acc.predictive_entropy_m());
    out.push_back(acc.expected_entropy_m());
    out.push_back(acc.expected_entropy_cm());
    out.push_back(acc.mutual_information_m());
    out.push_back(acc.mutual_information_cm());
    out.push_back(acc.expected_mask_variance());
    out.push_back(predictive_mask_variance(fused));
    out.push_back(msm);
    out.push_back(mns);
    out.push_back(combined_softmax_sigmoid(msm, mns, panoptic, things));
    return out;
}

}  // namespace segens
