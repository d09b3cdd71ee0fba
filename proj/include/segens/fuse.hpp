#pragma once

#include <set>
#include <vector>

#include "segens/types.hpp"

namespace segens {

// Per-pixel class distribution: d(x) is the sigma-mask-weighted sum of each
// query's softmax over the c dataset classes (no-object column excluded),
// renormalized to 1. Pixels where every query's mass underflows fall back to
// uniform; the count is reported on the result, not treated as a failure.
inline PixelClassDistribution pixel_class_distribution(const SampleTensor& s) {
    std::uint16_t c = s.dataset_classes();
    PixelClassDistribution out(s.height, s.width, c);
    std::size_t px = s.pixels();

    // Precompute each query's class softmax once.
    std::vector<double> soft(static_cast<std::size_t>(s.queries) * s.class_columns);
    for (std::uint32_t p = 0; p < s.queries; ++p)
        softmax_row(s.logit_row(p),
                    {soft.data() + static_cast<std::size_t>(p) * s.class_columns,
                     s.class_columns});

    std::vector<double> acc(c);
    for (std::size_t i = 0; i < px; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::uint32_t p = 0; p < s.queries; ++p) {
            double w = sigmoid(s.mask_logits[static_cast<std::size_t>(p) * px + i]);
            const double* row = soft.data() + static_cast<std::size_t>(p) * s.class_columns;
            for (std::uint16_t k = 0; k < c; ++k) acc[k] += w * row[k];
        }
        double total = 0.0;
        for (double v : acc) total += v;
        auto dst = out.pixel(i);
        if (total <= 0.0) {
            ++out.fallback_pixels;
            for (std::uint16_t k = 0; k < c; ++k) dst[k] = static_cast<float>(1.0 / c);
        } else {
            for (std::uint16_t k = 0; k < c; ++k)
                dst[k] = static_cast<float>(acc[k] / total);
        }
    }
    return out;
}

// "Mask"-variant distribution: sigma(M_p(x)) normalized over queries.
// Returned as h*w*P doubles (row-major pixel-major) since it feeds entropy
// accumulators directly.
inline std::vector<double> mask_assignment_distribution(const SampleTensor& s) {
    std::size_t px = s.pixels();
    std::vector<double> out(px * s.queries);
    for (std::size_t i = 0; i < px; ++i) {
        double total = 0.0;
        for (std::uint32_t p = 0; p < s.queries; ++p) {
            double v = sigmoid(s.mask_logits[static_cast<std::size_t>(p) * px + i]);
            out[i * s.queries + p] = v;
            total += v;
        }
        for (std::uint32_t p = 0; p < s.queries; ++p) out[i * s.queries + p] /= total;
    }
    return out;
}

// Per-pixel argmax over the c classes; ties go to the lowest class id.
// Class column k maps to dataset class id k + 1 (0 is VOID, never emitted).
inline SemanticLabelMap semantic_inference(const PixelClassDistribution& d) {
    SemanticLabelMap out(d.height, d.width);
    for (std::size_t i = 0; i < d.pixels(); ++i) {
        auto row = d.pixel(i);
        std::uint16_t best = 0;
        float best_v = row[0];
        for (std::uint16_t k = 1; k < d.classes; ++k)
            if (row[k] > best_v) {
                best_v = row[k];
                best = k;
            }
        out.ids[i] = static_cast<std::uint16_t>(best + 1);
    }
    return out;
}

struct PanopticOptions {
    double score_thresh = 0.8;
    double overlap_thresh = 0.8;
};

// Mask2Former-style panoptic inference. Queries survive if their argmax
// class (over the full row including no-object) is a real class with
// probability >= score_thresh. Each pixel goes to the surviving query
// maximizing classprob * sigma(mask); a query's segment is dropped when its
// claimed area falls below overlap_thresh of its binary-mask area. Stuff
// segments of equal class merge (instance 0); things get instance ids in
// query order. Uncovered pixels stay VOID.
inline PanopticLabelMap panoptic_inference(const SampleTensor& s,
                                           const std::set<std::uint16_t>& thing_classes,
                                           const PanopticOptions& opt = {}) {
    std::uint16_t c = s.dataset_classes();
    std::size_t px = s.pixels();

    struct Kept {
        std::uint32_t query;
        std::uint16_t class_id;
        double score;
    };
    std::vector<Kept> kept;
    std::vector<double> soft(s.class_columns);
    for (std::uint32_t p = 0; p < s.queries; ++p) {
        softmax_row(s.logit_row(p), soft);
        std::uint32_t arg = 0;
        for (std::uint32_t k = 1; k < s.class_columns; ++k)
            if (soft[k] > soft[arg]) arg = k;
        if (arg == static_cast<std::uint32_t>(c)) continue;  // no-object wins
        if (soft[arg] < opt.score_thresh) continue;
        kept.push_back({p, static_cast<std::uint16_t>(arg + 1), soft[arg]});
    }

    PanopticLabelMap out(s.height, s.width);
    if (kept.empty()) return out;

    // Per-pixel winner among kept queries.
    std::vector<std::uint32_t> winner(px, static_cast<std::uint32_t>(kept.size()));
    std::vector<double> winner_v(px, 0.0);
    std::vector<std::size_t> claimed(kept.size(), 0), binary_area(kept.size(), 0);
    for (std::size_t k = 0; k < kept.size(); ++k) {
        const float* plane =
            s.mask_logits.data() + static_cast<std::size_t>(kept[k].query) * px;
        for (std::size_t i = 0; i < px; ++i) {
            double sig = sigmoid(plane[i]);
            if (sig >= 0.5) ++binary_area[k];
            double v = kept[k].score * sig;
            if (v > winner_v[i]) {
                winner_v[i] = v;
                winner[i] = static_cast<std::uint32_t>(k);
            }
        }
    }
    for (std::size_t i = 0; i < px; ++i)
        if (winner[i] < kept.size()) ++claimed[winner[i]];

    // Segment filtering and id assignment.
    std::vector<std::uint32_t> encoded(kept.size(), kVoidSegment);
    std::vector<std::uint16_t> next_instance(c + 1, 1);
    std::vector<bool> stuff_emitted(c + 1, false);
    for (std::size_t k = 0; k < kept.size(); ++k) {
        if (binary_area[k] == 0 || claimed[k] == 0) continue;
        if (static_cast<double>(claimed[k]) <
            opt.overlap_thresh * static_cast<double>(binary_area[k]))
            continue;
        std::uint16_t cls = kept[k].class_id;
        if (thing_classes.count(cls)) {
            encoded[k] = encode_segment(cls, next_instance[cls]++);
        } else {
            encoded[k] = encode_segment(cls, 0);  // stuff merges by class
            stuff_emitted[cls] = true;
        }
    }
    for (std::size_t i = 0; i < px; ++i)
        if (winner[i] < kept.size()) out.ids[i] = encoded[winner[i]];
    return out;
}

}  // namespace segens
