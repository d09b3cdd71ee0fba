#pragma once

#include <algorithm>
#include <memory>
#include <numeric>
#include <tuple>
#include <vector>

#include "segens/align.hpp"
#include "segens/types.hpp"

namespace segens {

// Bijection on [0, P): incoming query index -> reference query index.
using MatchPermutation = std::vector<std::uint32_t>;

namespace detail {

// D[a][b] = || sigma(next_a) - sigma(ref_b) ||_2 over all pixels. RefT is
// float for sample-vs-sample tests, double for the running mean.
template <class RefT>
std::vector<double> mask_distance_matrix_impl(const RefT* ref_masks,
                                              const float* next_masks, std::uint32_t p,
                                              std::size_t pixels) {
    std::vector<double> sq(static_cast<std::size_t>(p) * p, 0.0);
    std::vector<double> sig_next(p), sig_ref(p);
    for (std::size_t i = 0; i < pixels; ++i) {
        for (std::uint32_t q = 0; q < p; ++q) {
            sig_next[q] = sigmoid(next_masks[static_cast<std::size_t>(q) * pixels + i]);
            sig_ref[q] = sigmoid(static_cast<double>(
                ref_masks[static_cast<std::size_t>(q) * pixels + i]));
        }
        for (std::uint32_t a = 0; a < p; ++a)
            for (std::uint32_t b = 0; b < p; ++b) {
                double d = sig_next[a] - sig_ref[b];
                sq[static_cast<std::size_t>(a) * p + b] += d * d;
            }
    }
    for (double& v : sq) v = std::sqrt(v);
    return sq;
}

}  // namespace detail

inline std::vector<double> mask_distance_matrix(const SampleTensor& ref,
                                                const SampleTensor& next) {
    if (ref.queries != next.queries || ref.height != next.height ||
        ref.width != next.width)
        throw ShapeMismatch("mask distance needs matching P, h, w");
    return detail::mask_distance_matrix_impl(ref.mask_logits.data(),
                                             next.mask_logits.data(), ref.queries,
                                             ref.pixels());
}

// Globally-greedy assignment without replacement: repeatedly take the
// smallest unassigned (incoming, reference) pair, ties broken by row then
// column index. Deterministic; always a bijection.
inline MatchPermutation greedy_match(const std::vector<double>& d, std::uint32_t p) {
    std::vector<std::uint32_t> order(d.size());
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](std::uint32_t i, std::uint32_t j) {
        if (d[i] != d[j]) return d[i] < d[j];
        return i < j;  // flat index order == (row asc, col asc)
    });
    MatchPermutation perm(p, p);
    std::vector<bool> ref_taken(p, false);
    std::uint32_t assigned = 0;
    for (std::uint32_t flat : order) {
        std::uint32_t a = flat / p, b = flat % p;
        if (perm[a] != p || ref_taken[b]) continue;
        perm[a] = b;
        ref_taken[b] = true;
        if (++assigned == p) break;
    }
    return perm;
}

// Minimum-cost bijection (Jonker-Volgenant style shortest augmenting paths).
// Kept as the exact oracle against which greedy matching is validated.
inline MatchPermutation hungarian_match(const std::vector<double>& d, std::uint32_t n) {
    constexpr double kInf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<std::uint32_t> match(n + 1, n);  // column -> row
    for (std::uint32_t i = 0; i < n; ++i) {
        std::vector<double> minv(n, kInf);
        std::vector<bool> used(n + 1, false);
        std::vector<std::uint32_t> way(n, n);
        std::uint32_t j0 = n;  // virtual start column
        std::uint32_t i0 = i;
        do {
            used[j0] = true;
            std::uint32_t cur = (j0 == n) ? i0 : match[j0];
            double delta = kInf;
            std::uint32_t j1 = n;
            for (std::uint32_t j = 0; j < n; ++j) {
                if (used[j]) continue;
                double reduced = d[static_cast<std::size_t>(cur) * n + j] - u[cur] - v[j];
                if (reduced < minv[j]) {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::uint32_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[j == n ? i0 : match[j]] += delta;
                    if (j < n) v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (match[j0] != n);
        // Augment along the path back to the virtual column.
        while (j0 != n) {
            std::uint32_t j1 = way[j0];
            match[j0] = (j1 == n) ? i0 : match[j1];
            j0 = j1;
        }
    }
    MatchPermutation perm(n, n);
    for (std::uint32_t j = 0; j < n; ++j) perm[match[j]] = j;
    return perm;
}

inline double assignment_cost(const std::vector<double>& d, std::uint32_t p,
                              const MatchPermutation& perm) {
    double total = 0.0;
    for (std::uint32_t a = 0; a < p; ++a)
        total += d[static_cast<std::size_t>(a) * p + perm[a]];
    return total;
}

// Reorders queries in place so that incoming query a lands at slot perm[a].
// One spare row/plane buffer; never a second full sample.
inline void permute_queries(SampleTensor& s, const MatchPermutation& perm) {
    std::vector<float> tmp_logits(s.class_columns);
    std::vector<float> tmp_mask(s.pixels());
    // out[perm[a]] = in[a], done by cycle decomposition on the inverse map.
    std::vector<std::uint32_t> inv(s.queries);
    for (std::uint32_t a = 0; a < s.queries; ++a) inv[perm[a]] = a;
    std::vector<bool> done(s.queries, false);
    for (std::uint32_t start = 0; start < s.queries; ++start) {
        if (done[start] || inv[start] == start) {
            done[start] = true;
            continue;
        }
        auto lr = s.logit_row(start);
        std::copy(lr.begin(), lr.end(), tmp_logits.begin());
        auto mp = s.mask_plane(start);
        std::copy(mp.begin(), mp.end(), tmp_mask.begin());
        std::uint32_t slot = start;
        while (inv[slot] != start) {
            std::uint32_t from = inv[slot];
            auto src_l = s.logit_row(from);
            std::copy(src_l.begin(), src_l.end(), s.logit_row(slot).begin());
            auto src_m = s.mask_plane(from);
            std::copy(src_m.begin(), src_m.end(), s.mask_plane(slot).begin());
            done[slot] = true;
            slot = from;
        }
        std::copy(tmp_logits.begin(), tmp_logits.end(), s.logit_row(slot).begin());
        std::copy(tmp_mask.begin(), tmp_mask.end(), s.mask_plane(slot).begin());
        done[slot] = true;
    }
}

// ---------------------------------------------------------------------------
// Streaming accumulator interface: every matched sample is observed exactly
// once, in fold order.
// ---------------------------------------------------------------------------

class SampleAccumulator {
  public:
    virtual ~SampleAccumulator() = default;
    virtual void observe(const SampleTensor& aligned_matched) = 0;
};

// ---------------------------------------------------------------------------
// RunningAggregate: constant-memory Mask Distance fold. The first sample
// initializes the running mean; later samples are matched against the mean
// and folded in logit space. The mean buffers register as one resident
// sample for the instrumentation counter.
// ---------------------------------------------------------------------------

class RunningAggregate {
  public:
    RunningAggregate() = default;

    std::uint32_t count() const { return count_; }
    std::uint32_t queries() const { return queries_; }

    void attach(SampleAccumulator* acc) { accumulators_.push_back(acc); }

    void fold(SampleTensor&& next) {
        validate_sample(next, class_columns_ ? class_columns_ : std::uint16_t{0});
        if (next.transform.kind != TransformKind::identity)
            throw WrongTransform("fold requires aligned (identity) samples");
        if (count_ == 0) {
            init_from(next);
        } else {
            if (next.queries != queries_ || next.pixels() != pixels_)
                throw ShapeMismatch("sample shape differs from the running mean");
            auto d = detail::mask_distance_matrix_impl(
                mean_mask_.data(), next.mask_logits.data(), queries_, pixels_);
            MatchPermutation perm = greedy_match(d, queries_);
            permute_queries(next, perm);
            ++count_;
            double inv = 1.0 / count_;
            for (std::size_t i = 0; i < mean_logits_.size(); ++i)
                mean_logits_[i] += (next.class_logits[i] - mean_logits_[i]) * inv;
            for (std::size_t i = 0; i < mean_mask_.size(); ++i)
                mean_mask_[i] += (next.mask_logits[i] - mean_mask_[i]) * inv;
        }
        for (SampleAccumulator* acc : accumulators_) acc->observe(next);
    }

    // Materializes the fused mean sample (f32 storage).
    SampleTensor fused() const {
        if (count_ == 0) throw NoSamples("no samples folded");
        SampleTensor out(queries_, class_columns_, height_, width_);
        for (std::size_t i = 0; i < mean_logits_.size(); ++i)
            out.class_logits[i] = static_cast<float>(mean_logits_[i]);
        for (std::size_t i = 0; i < mean_mask_.size(); ++i)
            out.mask_logits[i] = static_cast<float>(mean_mask_[i]);
        return out;
    }

  private:
    void init_from(const SampleTensor& s) {
        queries_ = s.queries;
        class_columns_ = s.class_columns;
        height_ = s.height;
        width_ = s.width;
        pixels_ = s.pixels();
        mean_logits_.assign(s.class_logits.begin(), s.class_logits.end());
        mean_mask_.assign(s.mask_logits.begin(), s.mask_logits.end());
        token_.arm();
        count_ = 1;
    }

    std::uint32_t count_ = 0;
    std::uint32_t queries_ = 0;
    std::uint16_t class_columns_ = 0;
    std::uint32_t height_ = 0, width_ = 0;
    std::size_t pixels_ = 0;
    std::vector<double> mean_logits_;
    std::vector<double> mean_mask_;
    std::vector<SampleAccumulator*> accumulators_;
    detail::ResidencyToken token_;
};

// Folds the whole ensemble in producer order and returns the fused sample.
// Q = 1 is the baseline path: the single sample passes through unchanged.
inline SampleTensor aggregate_stream(const AlignedEnsemble& ensemble,
                                     std::vector<SampleAccumulator*> accumulators = {}) {
    if (ensemble.count == 0) throw EmptyEnsemble("ensemble reports zero samples");
    RunningAggregate agg;
    for (SampleAccumulator* acc : accumulators) agg.attach(acc);
    auto src = ensemble.open();
    std::uint32_t seen = 0;
    while (true) {
        auto s = src->next();
        if (!s) break;
        agg.fold(std::move(*s));
        ++seen;
    }
    if (seen != ensemble.count)
        throw ShapeMismatch("producer yielded " + std::to_string(seen) +
                            " samples, ensemble declared " +
                            std::to_string(ensemble.count));
    return agg.fused();
}

}  // namespace segens
