#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace segens {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NonFiniteLogit : Error {
    std::size_t index;
    explicit NonFiniteLogit(std::size_t idx, const std::string& where)
        : Error("non-finite logit at index " + std::to_string(idx) + " in " + where),
          index(idx) {}
};
struct ShapeMismatch : Error { using Error::Error; };
struct EmptyTensor : Error { using Error::Error; };
struct WrongTransform : Error { using Error::Error; };
struct DegenerateTarget : Error { using Error::Error; };
struct MissingFlow : Error { using Error::Error; };
struct MixedClassCount : Error { using Error::Error; };
struct EmptyEnsemble : Error { using Error::Error; };
struct NoSamples : Error { using Error::Error; };
struct EmptyInput : Error { using Error::Error; };
struct DegenerateLabels : Error { using Error::Error; };
struct Unplaceable : Error { using Error::Error; };
struct MissingBaseline : Error { using Error::Error; };

// ---------------------------------------------------------------------------
// Resident-sample instrumentation
//
// Counts live full-payload SampleTensor instances (plus the aggregator's
// running mean, which registers itself as one resident sample). Used to
// verify that streaming aggregation keeps a flat memory high-water mark.
// ---------------------------------------------------------------------------

namespace detail {

struct ResidencyStats {
    inline static std::atomic<int> current{0};
    inline static std::atomic<int> high_water{0};

    static void add() {
        int cur = current.fetch_add(1) + 1;
        int hw = high_water.load();
        while (cur > hw && !high_water.compare_exchange_weak(hw, cur)) {
        }
    }
    static void remove() { current.fetch_sub(1); }
    static void reset_high_water() { high_water.store(current.load()); }
};

// RAII registration handle; an empty token is not counted.
class ResidencyToken {
  public:
    ResidencyToken() = default;
    explicit ResidencyToken(bool armed) : armed_(armed) {
        if (armed_) ResidencyStats::add();
    }
    ResidencyToken(const ResidencyToken& o) : armed_(o.armed_) {
        if (armed_) ResidencyStats::add();
    }
    ResidencyToken(ResidencyToken&& o) noexcept : armed_(o.armed_) { o.armed_ = false; }
    ResidencyToken& operator=(const ResidencyToken& o) {
        if (this != &o) {
            disarm();
            armed_ = o.armed_;
            if (armed_) ResidencyStats::add();
        }
        return *this;
    }
    ResidencyToken& operator=(ResidencyToken&& o) noexcept {
        if (this != &o) {
            disarm();
            armed_ = o.armed_;
            o.armed_ = false;
        }
        return *this;
    }
    ~ResidencyToken() { disarm(); }

    void arm() {
        if (!armed_) {
            ResidencyStats::add();
            armed_ = true;
        }
    }
    void disarm() {
        if (armed_) {
            ResidencyStats::remove();
            armed_ = false;
        }
    }

  private:
    bool armed_ = false;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Transform provenance
// ---------------------------------------------------------------------------

enum class TransformKind : std::uint8_t {
    identity = 0,
    hflip = 1,
    scale = 2,
    prior_frame = 3,
};

struct TransformDescriptor {
    TransformKind kind = TransformKind::identity;
    float scale_factor = 1.0f;   // meaningful for kind == scale
    std::uint8_t frame_offset = 0;  // k >= 1 for kind == prior_frame

    static TransformDescriptor identity() { return {}; }
    static TransformDescriptor hflip() { return {TransformKind::hflip, 1.0f, 0}; }
    static TransformDescriptor scale(float factor) {
        return {TransformKind::scale, factor, 0};
    }
    static TransformDescriptor prior_frame(std::uint8_t k) {
        return {TransformKind::prior_frame, 1.0f, k};
    }

    bool operator==(const TransformDescriptor&) const = default;
};

// Deterministic ordering used when assembling ensembles: prior frames first
// by descending age would be arbitrary; we sort ascending by (frame offset,
// kind, scale factor) so identity/current-frame samples come first.
inline bool transform_less(const TransformDescriptor& a, const TransformDescriptor& b) {
    if (a.frame_offset != b.frame_offset) return a.frame_offset < b.frame_offset;
    if (a.kind != b.kind) return static_cast<int>(a.kind) < static_cast<int>(b.kind);
    return a.scale_factor < b.scale_factor;
}

// ---------------------------------------------------------------------------
// SampleTensor: one ensemble member's raw network output.
//
// class_logits holds P rows of c_total = c + 1 values; the trailing column is
// the "no object" score. mask_logits holds P planes of h*w values.
// ---------------------------------------------------------------------------

class SampleTensor {
  public:
    std::uint32_t queries = 0;        // P
    std::uint16_t class_columns = 0;  // c_total = c + 1
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::vector<float> class_logits;  // P x c_total
    std::vector<float> mask_logits;   // P x h x w
    TransformDescriptor transform;

    SampleTensor() = default;
    SampleTensor(std::uint32_t p, std::uint16_t c_total, std::uint32_t h, std::uint32_t w)
        : queries(p),
          class_columns(c_total),
          height(h),
          width(w),
          class_logits(static_cast<std::size_t>(p) * c_total, 0.0f),
          mask_logits(static_cast<std::size_t>(p) * h * w, 0.0f),
          token_(true) {}

    std::uint16_t dataset_classes() const {
        return static_cast<std::uint16_t>(class_columns > 0 ? class_columns - 1 : 0);
    }
    std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }

    float& logit(std::uint32_t p, std::uint32_t col) {
        return class_logits[static_cast<std::size_t>(p) * class_columns + col];
    }
    float logit(std::uint32_t p, std::uint32_t col) const {
        return class_logits[static_cast<std::size_t>(p) * class_columns + col];
    }
    std::span<float> logit_row(std::uint32_t p) {
        return {class_logits.data() + static_cast<std::size_t>(p) * class_columns,
                class_columns};
    }
    std::span<const float> logit_row(std::uint32_t p) const {
        return {class_logits.data() + static_cast<std::size_t>(p) * class_columns,
                class_columns};
    }
    float& mask(std::uint32_t p, std::uint32_t y, std::uint32_t x) {
        return mask_logits[(static_cast<std::size_t>(p) * height + y) * width + x];
    }
    float mask(std::uint32_t p, std::uint32_t y, std::uint32_t x) const {
        return mask_logits[(static_cast<std::size_t>(p) * height + y) * width + x];
    }
    std::span<float> mask_plane(std::uint32_t p) {
        return {mask_logits.data() + static_cast<std::size_t>(p) * pixels(), pixels()};
    }
    std::span<const float> mask_plane(std::uint32_t p) const {
        return {mask_logits.data() + static_cast<std::size_t>(p) * pixels(), pixels()};
    }

    // Re-arms the residency token after manual field population.
    void mark_resident() {
        if (!mask_logits.empty()) token_.arm();
    }

  private:
    detail::ResidencyToken token_;
};

// ---------------------------------------------------------------------------
// Label maps and per-pixel products
// ---------------------------------------------------------------------------

inline constexpr std::uint16_t kVoidClass = 0;
inline constexpr std::uint32_t kVoidSegment = 0;

struct SemanticLabelMap {
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::vector<std::uint16_t> ids;  // h x w, 0 = VOID

    SemanticLabelMap() = default;
    SemanticLabelMap(std::uint32_t h, std::uint32_t w)
        : height(h), width(w), ids(static_cast<std::size_t>(h) * w, kVoidClass) {}

    std::uint16_t& at(std::uint32_t y, std::uint32_t x) {
        return ids[static_cast<std::size_t>(y) * width + x];
    }
    std::uint16_t at(std::uint32_t y, std::uint32_t x) const {
        return ids[static_cast<std::size_t>(y) * width + x];
    }
    std::size_t pixels() const { return ids.size(); }
};

// Encoded panoptic id: class_id * 65536 + instance_id, VOID encoded as 0.
inline std::uint32_t encode_segment(std::uint16_t class_id, std::uint16_t instance_id) {
    return static_cast<std::uint32_t>(class_id) * 65536u + instance_id;
}
inline std::uint16_t segment_class(std::uint32_t encoded) {
    return static_cast<std::uint16_t>(encoded / 65536u);
}
inline std::uint16_t segment_instance(std::uint32_t encoded) {
    return static_cast<std::uint16_t>(encoded % 65536u);
}

struct PanopticLabelMap {
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::vector<std::uint32_t> ids;  // h x w encoded segment ids, 0 = VOID

    PanopticLabelMap() = default;
    PanopticLabelMap(std::uint32_t h, std::uint32_t w)
        : height(h), width(w), ids(static_cast<std::size_t>(h) * w, kVoidSegment) {}

    std::uint32_t& at(std::uint32_t y, std::uint32_t x) {
        return ids[static_cast<std::size_t>(y) * width + x];
    }
    std::uint32_t at(std::uint32_t y, std::uint32_t x) const {
        return ids[static_cast<std::size_t>(y) * width + x];
    }
    std::size_t pixels() const { return ids.size(); }
};

// Backward flow (target -> source): displacement added to the target pixel
// gives the sampling position in the source (prior) frame.
struct FlowField {
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::vector<float> dx;  // h x w
    std::vector<float> dy;  // h x w
    std::vector<std::uint8_t> valid;  // h x w, 0 or 1

    FlowField() = default;
    FlowField(std::uint32_t h, std::uint32_t w)
        : height(h),
          width(w),
          dx(static_cast<std::size_t>(h) * w, 0.0f),
          dy(static_cast<std::size_t>(h) * w, 0.0f),
          valid(static_cast<std::size_t>(h) * w, 1) {}

    std::size_t idx(std::uint32_t y, std::uint32_t x) const {
        return static_cast<std::size_t>(y) * width + x;
    }
    std::size_t pixels() const { return dx.size(); }
};

// Per-pixel distribution over the c dataset classes (no-object marginalized
// out). Values stored as f32, all math done in f64 before storage.
struct PixelClassDistribution {
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::uint16_t classes = 0;  // c
    std::vector<float> probs;   // h x w x c
    std::size_t fallback_pixels = 0;  // pixels resolved by the uniform fallback

    PixelClassDistribution() = default;
    PixelClassDistribution(std::uint32_t h, std::uint32_t w, std::uint16_t c)
        : height(h),
          width(w),
          classes(c),
          probs(static_cast<std::size_t>(h) * w * c, 0.0f) {}

    std::span<float> pixel(std::size_t i) {
        return {probs.data() + i * classes, classes};
    }
    std::span<const float> pixel(std::size_t i) const {
        return {probs.data() + i * classes, classes};
    }
    std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }
};

// ---------------------------------------------------------------------------
// Uncertainty measures
// ---------------------------------------------------------------------------

enum class Measure {
    predictive_entropy_cm,
    predictive_entropy_m,
    expected_entropy_m,
    expected_entropy_cm,
    mutual_information_m,
    mutual_information_cm,
    expected_mask_variance,
    predictive_mask_variance,
    max_softmax_cm,
    max_norm_sigmoid_mask,
    combined_softmax_sigmoid,
};

inline constexpr Measure kAllMeasures[] = {
    Measure::predictive_entropy_cm,   Measure::predictive_entropy_m,
    Measure::expected_entropy_m,      Measure::expected_entropy_cm,
    Measure::mutual_information_m,    Measure::mutual_information_cm,
    Measure::expected_mask_variance,  Measure::predictive_mask_variance,
    Measure::max_softmax_cm,          Measure::max_norm_sigmoid_mask,
    Measure::combined_softmax_sigmoid,
};

inline const char* measure_name(Measure m) {
    switch (m) {
        case Measure::predictive_entropy_cm: return "predictive_entropy_cm";
        case Measure::predictive_entropy_m: return "predictive_entropy_m";
        case Measure::expected_entropy_m: return "expected_entropy_m";
        case Measure::expected_entropy_cm: return "expected_entropy_cm";
        case Measure::mutual_information_m: return "mutual_information_m";
        case Measure::mutual_information_cm: return "mutual_information_cm";
        case Measure::expected_mask_variance: return "expected_mask_variance";
        case Measure::predictive_mask_variance: return "predictive_mask_variance";
        case Measure::max_softmax_cm: return "max_softmax_cm";
        case Measure::max_norm_sigmoid_mask: return "max_norm_sigmoid_mask";
        case Measure::combined_softmax_sigmoid: return "combined_softmax_sigmoid";
    }
    return "?";
}

inline bool measure_from_name(const std::string& name, Measure& out) {
    for (Measure m : kAllMeasures) {
        if (name == measure_name(m)) {
            out = m;
            return true;
        }
    }
    return false;
}

// Confidence-type measures store the confidence value; the orientation flag
// tells downstream scoring which way is "more uncertain".
enum class Orientation { higher_is_uncertain, higher_is_confident };

inline Orientation measure_orientation(Measure m) {
    switch (m) {
        case Measure::max_softmax_cm:
        case Measure::max_norm_sigmoid_mask:
        case Measure::combined_softmax_sigmoid:
            return Orientation::higher_is_confident;
        default:
            return Orientation::higher_is_uncertain;
    }
}

struct UncertaintyMap {
    Measure measure = Measure::predictive_entropy_cm;
    Orientation orientation = Orientation::higher_is_uncertain;
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::vector<float> values;  // h x w, non-negative, finite
    bool degenerate = false;    // Q=1 sample-spread measure emitted as zeros

    UncertaintyMap() = default;
    UncertaintyMap(Measure m, std::uint32_t h, std::uint32_t w)
        : measure(m),
          orientation(measure_orientation(m)),
          height(h),
          width(w),
          values(static_cast<std::size_t>(h) * w, 0.0f) {}

    std::size_t pixels() const { return values.size(); }
};

// ---------------------------------------------------------------------------
// Elementwise primitives
// ---------------------------------------------------------------------------

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

// Max-subtraction stabilized softmax; writes c doubles summing to 1.
inline void softmax_row(std::span<const float> logits, std::span<double> out) {
    double mx = -std::numeric_limits<double>::infinity();
    for (float v : logits) mx = std::max(mx, static_cast<double>(v));
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(static_cast<double>(logits[i]) - mx);
        sum += out[i];
    }
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] /= sum;
}

inline std::vector<double> softmax_over_classes(std::span<const float> logits) {
    std::vector<double> out(logits.size());
    softmax_row(logits, out);
    return out;
}

// sigma applied to one mask plane.
inline std::vector<double> sigmoid_mask(std::span<const float> logits) {
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = sigmoid(logits[i]);
    return out;
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

// expected_class_columns = 0 means "no ensemble-wide expectation".
inline const SampleTensor& validate_sample(const SampleTensor& s,
                                           std::uint16_t expected_class_columns = 0) {
    if (s.queries < 1 || s.pixels() < 1)
        throw EmptyTensor("sample has zero queries or zero pixels");
    if (s.class_columns < 2)
        throw EmptyTensor("sample needs at least one dataset class plus no-object");
    if (expected_class_columns != 0 && s.class_columns != expected_class_columns)
        throw ShapeMismatch("class column count " + std::to_string(s.class_columns) +
                            " differs from ensemble-wide " +
                            std::to_string(expected_class_columns));
    if (s.class_logits.size() != static_cast<std::size_t>(s.queries) * s.class_columns)
        throw ShapeMismatch("class logit buffer does not match P x c_total");
    if (s.mask_logits.size() != static_cast<std::size_t>(s.queries) * s.pixels())
        throw ShapeMismatch("mask logit buffer does not match P x h x w");
    for (std::size_t i = 0; i < s.class_logits.size(); ++i)
        if (!std::isfinite(s.class_logits[i])) throw NonFiniteLogit(i, "class logits");
    for (std::size_t i = 0; i < s.mask_logits.size(); ++i)
        if (!std::isfinite(s.mask_logits[i])) throw NonFiniteLogit(i, "mask logits");
    return s;
}

}  // namespace segens
