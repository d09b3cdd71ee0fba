#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "segens/types.hpp"

namespace segens {

inline constexpr float kNeutralMaskLogit = -10.0f;  // sigma ~ 4.5e-5

// ---------------------------------------------------------------------------
// TTA inversions. Geometry only ever touches M; class logits pass through.
// ---------------------------------------------------------------------------

inline SampleTensor invert_hflip(SampleTensor s) {
    if (s.transform.kind != TransformKind::hflip)
        throw WrongTransform("invert_hflip requires an hflip-tagged sample");
    for (std::uint32_t p = 0; p < s.queries; ++p)
        for (std::uint32_t y = 0; y < s.height; ++y) {
            float* row = &s.mask(p, y, 0);
            std::reverse(row, row + s.width);
        }
    s.transform = TransformDescriptor::identity();
    return s;
}

namespace detail {

// Bilinear sample of one mask plane at continuous (x, y), half-pixel-center
// convention with edge clamping. Used by invert_scale.
inline double bilinear_at(std::span<const float> plane, std::uint32_t h, std::uint32_t w,
                          double x, double y) {
    x = std::clamp(x, 0.0, static_cast<double>(w - 1));
    y = std::clamp(y, 0.0, static_cast<double>(h - 1));
    std::uint32_t x0 = static_cast<std::uint32_t>(x);
    std::uint32_t y0 = static_cast<std::uint32_t>(y);
    std::uint32_t x1 = std::min(x0 + 1, w - 1);
    std::uint32_t y1 = std::min(y0 + 1, h - 1);
    double fx = x - x0;
    double fy = y - y0;
    double v00 = plane[static_cast<std::size_t>(y0) * w + x0];
    double v01 = plane[static_cast<std::size_t>(y0) * w + x1];
    double v10 = plane[static_cast<std::size_t>(y1) * w + x0];
    double v11 = plane[static_cast<std::size_t>(y1) * w + x1];
    return v00 * (1 - fx) * (1 - fy) + v01 * fx * (1 - fy) + v10 * (1 - fx) * fy +
           v11 * fx * fy;
}

}  // namespace detail

// Resizes M back to the reference frame via bilinear interpolation in logit
// space (sigma is monotone, so interpolating logits avoids double-squashing).
inline SampleTensor invert_scale(const SampleTensor& s, std::uint32_t target_h,
                                 std::uint32_t target_w) {
    if (s.transform.kind != TransformKind::scale)
        throw WrongTransform("invert_scale requires a scale-tagged sample");
    if (target_h == 0 || target_w == 0)
        throw DegenerateTarget("scale inversion target has a zero dimension");

    SampleTensor out(s.queries, s.class_columns, target_h, target_w);
    out.class_logits = s.class_logits;
    out.transform = TransformDescriptor::identity();

    // Half-pixel-center mapping between the two grids.
    double sx = static_cast<double>(s.width) / target_w;
    double sy = static_cast<double>(s.height) / target_h;
    for (std::uint32_t p = 0; p < s.queries; ++p) {
        auto src = s.mask_plane(p);
        for (std::uint32_t y = 0; y < target_h; ++y) {
            double srcy = (y + 0.5) * sy - 0.5;
            for (std::uint32_t x = 0; x < target_w; ++x) {
                double srcx = (x + 0.5) * sx - 0.5;
                out.mask(p, y, x) = static_cast<float>(
                    detail::bilinear_at(src, s.height, s.width, srcx, srcy));
            }
        }
    }
    return out;
}

// Backward warp: the output mask logit at pixel (x, y) samples the prior
// frame at (x + dx, y + dy). Invalid or out-of-bounds pixels receive the
// neutral logit for every query.
inline SampleTensor warp_prior_frame(const SampleTensor& s, const FlowField& flow,
                                     float neutral_logit = kNeutralMaskLogit) {
    if (s.transform.kind != TransformKind::prior_frame)
        throw WrongTransform("warp_prior_frame requires a prior_frame-tagged sample");
    if (flow.height != s.height || flow.width != s.width)
        throw ShapeMismatch("flow field dimensions do not match the sample");

    SampleTensor out(s.queries, s.class_columns, s.height, s.width);
    out.class_logits = s.class_logits;
    out.transform = TransformDescriptor::identity();

    for (std::uint32_t p = 0; p < s.queries; ++p) {
        auto src = s.mask_plane(p);
        for (std::uint32_t y = 0; y < s.height; ++y)
            for (std::uint32_t x = 0; x < s.width; ++x) {
                std::size_t i = flow.idx(y, x);
                if (!flow.valid[i]) {
                    out.mask(p, y, x) = neutral_logit;
                    continue;
                }
                double srcx = x + static_cast<double>(flow.dx[i]);
                double srcy = y + static_cast<double>(flow.dy[i]);
                if (srcx < 0.0 || srcy < 0.0 || srcx > s.width - 1.0 ||
                    srcy > s.height - 1.0) {
                    out.mask(p, y, x) = neutral_logit;
                    continue;
                }
                out.mask(p, y, x) = static_cast<float>(
                    detail::bilinear_at(src, s.height, s.width, srcx, srcy));
            }
    }
    return out;
}

// Dispatch on transform provenance; identity samples pass through untouched.
inline SampleTensor align_sample(SampleTensor s, std::uint32_t frame_h,
                                 std::uint32_t frame_w,
                                 const std::vector<FlowField>& flows,
                                 float neutral_logit = kNeutralMaskLogit) {
    switch (s.transform.kind) {
        case TransformKind::identity:
            return s;
        case TransformKind::hflip: {
            // A non-unit scale factor on an hflip tag marks a combined
            // flip-and-resize pass: mirror at the native resolution, then
            // resize back to the reference frame.
            float factor = s.transform.scale_factor;
            SampleTensor mirrored = invert_hflip(std::move(s));
            if (factor == 1.0f) return mirrored;
            mirrored.transform = TransformDescriptor::scale(factor);
            return invert_scale(mirrored, frame_h, frame_w);
        }
        case TransformKind::scale:
            return invert_scale(s, frame_h, frame_w);
        case TransformKind::prior_frame: {
            std::uint8_t k = s.transform.frame_offset;
            if (k == 0 || k > flows.size())
                throw MissingFlow("no flow field for prior frame offset " +
                                  std::to_string(static_cast<int>(k)));
            return warp_prior_frame(s, flows[k - 1], neutral_logit);
        }
    }
    throw WrongTransform("unknown transform kind");
}

// ---------------------------------------------------------------------------
// AlignedEnsemble: a re-iterable, ordered stream of identity-frame samples.
// ---------------------------------------------------------------------------

class SampleSource {
  public:
    virtual ~SampleSource() = default;
    // Yields the next sample or nullopt at end of stream.
    virtual std::optional<SampleTensor> next() = 0;
};

struct AlignedEnsemble {
    std::uint32_t count = 0;  // Q
    std::uint32_t frame_h = 0;
    std::uint32_t frame_w = 0;
    std::uint16_t class_columns = 0;
    // Opening the ensemble again must yield the same Q samples in the same
    // order; a single opened source is not shared across threads.
    std::function<std::unique_ptr<SampleSource>()> open;
};

namespace detail {

class VectorSource final : public SampleSource {
  public:
    VectorSource(const std::vector<SampleTensor>* samples, std::uint32_t frame_h,
                 std::uint32_t frame_w, const std::vector<FlowField>* flows,
                 float neutral_logit)
        : samples_(samples),
          flows_(flows),
          frame_h_(frame_h),
          frame_w_(frame_w),
          neutral_(neutral_logit) {}

    std::optional<SampleTensor> next() override {
        if (pos_ >= samples_->size()) return std::nullopt;
        const SampleTensor& raw = (*samples_)[pos_++];
        return align_sample(raw, frame_h_, frame_w_, *flows_, neutral_);
    }

  private:
    const std::vector<SampleTensor>* samples_;
    const std::vector<FlowField>* flows_;
    std::uint32_t frame_h_, frame_w_;
    float neutral_;
    std::size_t pos_ = 0;
};

}  // namespace detail

// Assembles raw tagged samples (plus one flow field per prior-frame offset)
// into an aligned ensemble. Samples are ordered by transform descriptor
// (frame offset, kind, scale factor), ties kept in input order so MC
// replicas stay in their original sequence.
inline AlignedEnsemble build_aligned_ensemble(std::vector<SampleTensor> raw,
                                              std::vector<FlowField> flows,
                                              std::uint32_t frame_h,
                                              std::uint32_t frame_w,
                                              float neutral_logit = kNeutralMaskLogit) {
    if (raw.empty()) throw EmptyEnsemble("ensemble needs at least one sample");
    std::uint16_t c_total = raw.front().class_columns;
    for (const SampleTensor& s : raw) {
        if (s.class_columns != c_total)
            throw MixedClassCount("samples disagree on the class column count");
        if (s.transform.kind == TransformKind::prior_frame) {
            std::uint8_t k = s.transform.frame_offset;
            if (k == 0 || k > flows.size())
                throw MissingFlow("no flow field for prior frame offset " +
                                  std::to_string(static_cast<int>(k)));
        }
    }
    std::stable_sort(raw.begin(), raw.end(),
                     [](const SampleTensor& a, const SampleTensor& b) {
                         return transform_less(a.transform, b.transform);
                     });

    AlignedEnsemble ens;
    ens.count = static_cast<std::uint32_t>(raw.size());
    ens.frame_h = frame_h;
    ens.frame_w = frame_w;
    ens.class_columns = c_total;
    auto samples = std::make_shared<std::vector<SampleTensor>>(std::move(raw));
    auto flow_store = std::make_shared<std::vector<FlowField>>(std::move(flows));
    ens.open = [samples, flow_store, frame_h, frame_w, neutral_logit]() {
        return std::make_unique<detail::VectorSource>(samples.get(), frame_h, frame_w,
                                                      flow_store.get(), neutral_logit);
    };
    return ens;
}

// ---------------------------------------------------------------------------
// Configuration enumeration: the multiplicative sample rule. An MC count of
// zero means one deterministic pass; TTA always includes the untransformed
// pass; prior frames multiply by (n_prior + 1) for the current frame.
// ---------------------------------------------------------------------------

enum class TtaMode { none, hflip, scale, scale_hflip };

inline const char* tta_mode_name(TtaMode m) {
    switch (m) {
        case TtaMode::none: return "none";
        case TtaMode::hflip: return "hflip";
        case TtaMode::scale: return "scale";
        case TtaMode::scale_hflip: return "scale+hflip";
    }
    return "?";
}

inline bool tta_mode_from_name(const std::string& name, TtaMode& out) {
    for (TtaMode m : {TtaMode::none, TtaMode::hflip, TtaMode::scale, TtaMode::scale_hflip})
        if (name == tta_mode_name(m)) {
            out = m;
            return true;
        }
    return false;
}

// TTA transforms for one network pass, identity first.
inline std::vector<TransformDescriptor> tta_transforms(TtaMode mode,
                                                       float scale_lo = 0.8f,
                                                       float scale_hi = 1.25f) {
    std::vector<TransformDescriptor> out{TransformDescriptor::identity()};
    if (mode == TtaMode::hflip || mode == TtaMode::scale_hflip)
        out.push_back(TransformDescriptor::hflip());
    if (mode == TtaMode::scale || mode == TtaMode::scale_hflip) {
        out.push_back(TransformDescriptor::scale(scale_lo));
        out.push_back(TransformDescriptor::scale(scale_hi));
    }
    if (mode == TtaMode::scale_hflip) {
        // Combined variants: an hflip-tagged descriptor with a non-unit scale
        // factor means the pass was both flipped and resized.
        out.push_back({TransformKind::hflip, scale_lo, 0});
        out.push_back({TransformKind::hflip, scale_hi, 0});
    }
    return out;
}

struct PredictionConfig {
    std::uint32_t mc_samples = 0;    // 0 = deterministic single pass
    std::uint32_t prior_frames = 0;  // frames before the current one
    TtaMode tta = TtaMode::none;
};

inline std::uint32_t network_passes(const PredictionConfig& cfg) {
    return std::max<std::uint32_t>(1, cfg.mc_samples);
}

inline std::uint32_t total_samples(const PredictionConfig& cfg) {
    return network_passes(cfg) * (cfg.prior_frames + 1) *
           static_cast<std::uint32_t>(tta_transforms(cfg.tta).size());
}

// Full cross product of (frame, tta, mc replica) descriptors in the canonical
// ensemble order. The mc replica index is implicit in repetition.
inline std::vector<TransformDescriptor> enumerate_config(const PredictionConfig& cfg) {
    std::vector<TransformDescriptor> out;
    auto ttas = tta_transforms(cfg.tta);
    for (std::uint32_t f = 0; f <= cfg.prior_frames; ++f)
        for (const TransformDescriptor& t : ttas)
            for (std::uint32_t m = 0; m < network_passes(cfg); ++m) {
                // Prior-frame samples carry only the frame tag; any TTA geometry
                // on a prior frame is inverted by the producer before the warp.
                TransformDescriptor d =
                    f > 0 ? TransformDescriptor::prior_frame(static_cast<std::uint8_t>(f))
                          : t;
                out.push_back(d);
                (void)m;
            }
    return out;
}

}  // namespace segens
