#pragma once

#include <optional>
#include <set>
#include <vector>

#include "segens/types.hpp"

namespace segens {

// ---------------------------------------------------------------------------
// CounterRng: a counter-based generator (SplitMix64 finalizer over
// seed + index * golden-gamma). Any language can reproduce the stream from
// the seed alone; draws are indexed, not stateful beyond the counter.
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

class CounterRng {
  public:
    explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0)
        : seed_(splitmix64(seed ^ splitmix64(stream))) {}

    std::uint64_t next_u64() { return splitmix64(seed_ + counter_++ * kGamma); }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }
    // Uniform integer in [lo, hi] inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        return lo + static_cast<std::int64_t>(
                        next_u64() % static_cast<std::uint64_t>(hi - lo + 1));
    }
    // Standard normal via Box-Muller (one value per call, pair cached).
    double normal() {
        if (cached_) {
            cached_ = false;
            return cache_;
        }
        double u1 = std::max(uniform(), 1e-300);
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * 3.141592653589793 * u2;
        cache_ = r * std::sin(a);
        cached_ = true;
        return r * std::cos(a);
    }

  private:
    static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ull;
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
    double cache_ = 0.0;
    bool cached_ = false;
};

// ---------------------------------------------------------------------------
// Scenes: non-overlapping axis-aligned rectangles over a stuff background,
// with an ideal saturated-logit sample reproducing the ground truth exactly.
// ---------------------------------------------------------------------------

struct Rect {
    std::uint32_t x0, y0, x1, y1;  // half-open
    std::uint16_t class_id;
    std::uint16_t instance_id;

    bool contains(std::uint32_t x, std::uint32_t y) const {
        return x >= x0 && x < x1 && y >= y0 && y < y1;
    }
    bool overlaps(const Rect& o, std::uint32_t margin) const {
        return !(x1 + margin <= o.x0 || o.x1 + margin <= x0 || y1 + margin <= o.y0 ||
                 o.y1 + margin <= y0);
    }
};

struct SceneConfig {
    std::uint32_t height = 64;
    std::uint32_t width = 64;
    std::uint32_t n_objects = 3;
    std::uint16_t classes = 6;           // dataset class ids 1..classes
    std::uint16_t stuff_background = 1;  // background class id
    std::set<std::uint16_t> things;      // defaults to {2..classes} when empty
    std::uint32_t queries = 8;           // P, must cover n_objects + background
    std::uint32_t min_size = 8;
    std::uint32_t max_size = 16;
    std::uint32_t margin = 2;         // min separation between rectangles
    float logit_magnitude = 40.0f;    // saturation level of the ideal sample

    std::set<std::uint16_t> thing_set() const {
        if (!things.empty()) return things;
        std::set<std::uint16_t> s;
        for (std::uint16_t k = 2; k <= classes; ++k) s.insert(k);
        return s;
    }
};

struct Scene {
    SemanticLabelMap gt_semantic;
    PanopticLabelMap gt_panoptic;
    SampleTensor ideal;
    std::vector<Rect> objects;
    std::optional<Rect> ood_object;  // unseen-class rectangle; not in gt
};

namespace detail {

// Places n non-overlapping rectangles, keeping reserve_x/reserve_y of slack
// so a moving scene stays in-frame. Throws Unplaceable after bounded retries.
inline std::vector<Rect> place_rects(CounterRng& rng, const SceneConfig& cfg,
                                     std::uint32_t n, std::uint32_t reserve_x,
                                     std::uint32_t reserve_y,
                                     const std::vector<Rect>& avoid = {}) {
    std::vector<Rect> rects;
    std::set<std::uint16_t> things = cfg.thing_set();
    std::vector<std::uint16_t> thing_list(things.begin(), things.end());
    if (thing_list.empty() && n > 0)
        throw Unplaceable("scene config has objects but no thing classes");
    std::vector<std::uint16_t> next_instance(cfg.classes + 1, 1);
    for (std::uint32_t j = 0; j < n; ++j) {
        bool placed = false;
        for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
            // After many failed attempts fall back to minimum-size rectangles,
            // which maximises the chance of fitting into the remaining space.
            std::uint32_t hi = attempt < 100 ? cfg.max_size : cfg.min_size;
            std::uint32_t w =
                static_cast<std::uint32_t>(rng.uniform_int(cfg.min_size, hi));
            std::uint32_t h =
                static_cast<std::uint32_t>(rng.uniform_int(cfg.min_size, hi));
            if (w + reserve_x + 2 > cfg.width || h + reserve_y + 2 > cfg.height) continue;
            std::uint32_t x0 = static_cast<std::uint32_t>(
                rng.uniform_int(1, cfg.width - w - reserve_x - 1));
            std::uint32_t y0 = static_cast<std::uint32_t>(
                rng.uniform_int(1, cfg.height - h - reserve_y - 1));
            Rect r{x0, y0, x0 + w, y0 + h, 0, 0};
            bool clash = false;
            for (const Rect& o : rects)
                if (r.overlaps(o, cfg.margin)) clash = true;
            for (const Rect& o : avoid)
                if (r.overlaps(o, cfg.margin)) clash = true;
            if (clash) continue;
            std::uint16_t cls = thing_list[j % thing_list.size()];
            r.class_id = cls;
            r.instance_id = next_instance[cls]++;
            rects.push_back(r);
            placed = true;
        }
        if (!placed) throw Unplaceable("could not place rectangle " + std::to_string(j));
    }
    return rects;
}

inline void fill_ideal(SampleTensor& s, const SceneConfig& cfg,
                       const std::vector<Rect>& rects) {
    float m = cfg.logit_magnitude;
    std::uint16_t no_object = cfg.classes;  // trailing column index
    // All queries start inactive: no-object class, mask fully off.
    for (std::uint32_t p = 0; p < s.queries; ++p) {
        for (std::uint16_t k = 0; k < s.class_columns; ++k)
            s.logit(p, k) = (k == no_object) ? m : -m;
        auto plane = s.mask_plane(p);
        std::fill(plane.begin(), plane.end(), -m);
    }
    // Query 0: stuff background covering everything outside the rectangles.
    for (std::uint16_t k = 0; k < s.class_columns; ++k)
        s.logit(0, k) = (k == cfg.stuff_background - 1) ? m : -m;
    auto bg = s.mask_plane(0);
    std::fill(bg.begin(), bg.end(), m);
    for (const Rect& r : rects)
        for (std::uint32_t y = r.y0; y < r.y1; ++y)
            for (std::uint32_t x = r.x0; x < r.x1; ++x)
                s.mask(0, y, x) = -m;
    // Queries 1..n: one per rectangle.
    for (std::size_t j = 0; j < rects.size(); ++j) {
        std::uint32_t p = static_cast<std::uint32_t>(j + 1);
        for (std::uint16_t k = 0; k < s.class_columns; ++k)
            s.logit(p, k) = (k == rects[j].class_id - 1) ? m : -m;
        for (std::uint32_t y = rects[j].y0; y < rects[j].y1; ++y)
            for (std::uint32_t x = rects[j].x0; x < rects[j].x1; ++x)
                s.mask(p, y, x) = m;
    }
}

inline void fill_gt(Scene& scene, const SceneConfig& cfg) {
    auto& sem = scene.gt_semantic;
    auto& pan = scene.gt_panoptic;
    for (std::size_t i = 0; i < sem.pixels(); ++i) {
        sem.ids[i] = cfg.stuff_background;
        pan.ids[i] = encode_segment(cfg.stuff_background, 0);
    }
    for (const Rect& r : scene.objects)
        for (std::uint32_t y = r.y0; y < r.y1; ++y)
            for (std::uint32_t x = r.x0; x < r.x1; ++x) {
                sem.at(y, x) = r.class_id;
                pan.at(y, x) = encode_segment(r.class_id, r.instance_id);
            }
}

}  // namespace detail

inline Scene gen_scene(std::uint64_t seed, const SceneConfig& cfg) {
    if (cfg.n_objects + 1 > cfg.queries)
        throw Unplaceable("query budget too small for object count");
    CounterRng rng(seed, /*stream=*/1);
    Scene scene;
    scene.objects = detail::place_rects(rng, cfg, cfg.n_objects, 0, 0);
    scene.gt_semantic = SemanticLabelMap(cfg.height, cfg.width);
    scene.gt_panoptic = PanopticLabelMap(cfg.height, cfg.width);
    detail::fill_gt(scene, cfg);
    scene.ideal = SampleTensor(cfg.queries, static_cast<std::uint16_t>(cfg.classes + 1),
                               cfg.height, cfg.width);
    detail::fill_ideal(scene.ideal, cfg, scene.objects);
    return scene;
}

// ---------------------------------------------------------------------------
// Perturbation: additive class-logit noise, integer per-query mask
// translation, optional query shuffle. Deterministic in the seed.
// ---------------------------------------------------------------------------

struct NoiseConfig {
    double logit_sigma = 0.0;
    std::uint32_t jitter_px = 0;
    bool shuffle = false;
};

namespace detail {

inline void shift_plane(std::span<float> plane, std::uint32_t h, std::uint32_t w,
                        std::int64_t dx, std::int64_t dy, float fill) {
    if (dx == 0 && dy == 0) return;
    std::vector<float> src(plane.begin(), plane.end());
    for (std::uint32_t y = 0; y < h; ++y)
        for (std::uint32_t x = 0; x < w; ++x) {
            std::int64_t sx = static_cast<std::int64_t>(x) - dx;
            std::int64_t sy = static_cast<std::int64_t>(y) - dy;
            plane[static_cast<std::size_t>(y) * w + x] =
                (sx >= 0 && sy >= 0 && sx < w && sy < h)
                    ? src[static_cast<std::size_t>(sy) * w + sx]
                    : fill;
        }
}

}  // namespace detail

inline SampleTensor perturb_sample(const SampleTensor& ideal, std::uint64_t seed,
                                   const NoiseConfig& noise) {
    CounterRng rng(seed, /*stream=*/2);
    SampleTensor out = ideal;
    if (noise.logit_sigma > 0.0)
        for (float& v : out.class_logits)
            v += static_cast<float>(rng.normal() * noise.logit_sigma);
    if (noise.jitter_px > 0) {
        std::int64_t j = noise.jitter_px;
        for (std::uint32_t p = 0; p < out.queries; ++p) {
            std::int64_t dx = rng.uniform_int(-j, j);
            std::int64_t dy = rng.uniform_int(-j, j);
            detail::shift_plane(out.mask_plane(p), out.height, out.width, dx, dy,
                                -40.0f);
        }
    }
    if (noise.shuffle) {
        // Fisher-Yates on query rows via index swap vector.
        std::vector<std::uint32_t> perm(out.queries);
        for (std::uint32_t i = 0; i < out.queries; ++i) perm[i] = i;
        for (std::uint32_t i = out.queries; i > 1; --i) {
            std::uint32_t k = static_cast<std::uint32_t>(rng.uniform_int(0, i - 1));
            std::swap(perm[i - 1], perm[k]);
        }
        SampleTensor shuffled(out.queries, out.class_columns, out.height, out.width);
        shuffled.transform = out.transform;
        for (std::uint32_t p = 0; p < out.queries; ++p) {
            auto src_l = out.logit_row(perm[p]);
            std::copy(src_l.begin(), src_l.end(), shuffled.logit_row(p).begin());
            auto src_m = out.mask_plane(perm[p]);
            std::copy(src_m.begin(), src_m.end(), shuffled.mask_plane(p).begin());
        }
        return shuffled;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Sequences: rectangles translating at fixed integer velocity with exact
// backward flow. Frame n_prior is "current"; flows[k-1] maps the current
// frame back to the frame k steps earlier, with validity false where the
// background was occluded in that prior frame.
// ---------------------------------------------------------------------------

struct Sequence {
    Scene current;                      // gt + ideal for the evaluated frame
    std::vector<SampleTensor> priors;   // ideal samples, offset 1..n_prior
    std::vector<FlowField> flows;       // flows[k-1] for offset k
};

inline Sequence gen_sequence(std::uint64_t seed, const SceneConfig& cfg,
                             std::uint32_t n_prior, std::int64_t vx, std::int64_t vy) {
    if (cfg.n_objects + 1 > cfg.queries)
        throw Unplaceable("query budget too small for object count");
    CounterRng rng(seed, /*stream=*/3);
    // Rectangles are placed at the earliest frame; total displacement over
    // the sequence is reserved so motion keeps objects in-frame.
    std::uint32_t reserve_x = static_cast<std::uint32_t>(std::abs(vx) * n_prior);
    std::uint32_t reserve_y = static_cast<std::uint32_t>(std::abs(vy) * n_prior);
    std::vector<Rect> base = detail::place_rects(rng, cfg, cfg.n_objects, reserve_x + 1,
                                                 reserve_y + 1);
    // Shift the base placement so negative velocities stay in range too.
    std::int64_t ox = vx < 0 ? reserve_x : 0;
    std::int64_t oy = vy < 0 ? reserve_y : 0;

    auto rects_at = [&](std::uint32_t frame) {
        std::vector<Rect> rs = base;
        std::int64_t dx = ox + vx * frame, dy = oy + vy * frame;
        for (Rect& r : rs) {
            r.x0 = static_cast<std::uint32_t>(r.x0 + dx);
            r.x1 = static_cast<std::uint32_t>(r.x1 + dx);
            r.y0 = static_cast<std::uint32_t>(r.y0 + dy);
            r.y1 = static_cast<std::uint32_t>(r.y1 + dy);
        }
        return rs;
    };

    Sequence seq;
    std::vector<Rect> current_rects = rects_at(n_prior);
    seq.current.objects = current_rects;
    seq.current.gt_semantic = SemanticLabelMap(cfg.height, cfg.width);
    seq.current.gt_panoptic = PanopticLabelMap(cfg.height, cfg.width);
    detail::fill_gt(seq.current, cfg);
    seq.current.ideal = SampleTensor(
        cfg.queries, static_cast<std::uint16_t>(cfg.classes + 1), cfg.height, cfg.width);
    detail::fill_ideal(seq.current.ideal, cfg, current_rects);

    for (std::uint32_t k = 1; k <= n_prior; ++k) {
        std::vector<Rect> prior_rects = rects_at(n_prior - k);
        SampleTensor prior(cfg.queries, static_cast<std::uint16_t>(cfg.classes + 1),
                           cfg.height, cfg.width);
        detail::fill_ideal(prior, cfg, prior_rects);
        prior.transform = TransformDescriptor::prior_frame(static_cast<std::uint8_t>(k));
        seq.priors.push_back(std::move(prior));

        FlowField flow(cfg.height, cfg.width);
        float fdx = static_cast<float>(-vx * static_cast<std::int64_t>(k));
        float fdy = static_cast<float>(-vy * static_cast<std::int64_t>(k));
        for (std::uint32_t y = 0; y < cfg.height; ++y)
            for (std::uint32_t x = 0; x < cfg.width; ++x) {
                std::size_t i = flow.idx(y, x);
                bool in_current = false;
                for (const Rect& r : current_rects)
                    if (r.contains(x, y)) in_current = true;
                if (in_current) {
                    flow.dx[i] = fdx;
                    flow.dy[i] = fdy;
                    continue;
                }
                // Static background; occluded in the prior frame where a
                // rectangle used to cover this pixel.
                for (const Rect& r : prior_rects)
                    if (r.contains(x, y)) flow.valid[i] = 0;
            }
        seq.flows.push_back(std::move(flow));
    }
    return seq;
}

// ---------------------------------------------------------------------------
// OOD variants: an extra rectangle of a class outside the label space. The
// ground truth is untouched (the object is unknown to the dataset); each
// ensemble member explains the region with a random known class at moderate
// confidence, so members disagree exactly where the anomaly sits.
// ---------------------------------------------------------------------------

inline Scene make_ood_variant(Scene base, std::uint64_t seed, const SceneConfig& cfg) {
    CounterRng rng(seed, /*stream=*/4);
    SceneConfig ood_cfg = cfg;
    std::vector<Rect> placed =
        detail::place_rects(rng, ood_cfg, 1, 0, 0, /*avoid=*/base.objects);
    base.ood_object = placed.front();
    return base;
}

// One ensemble member. For OOD scenes the first inactive query is activated
// on the anomaly with a random known class at the given logit magnitude.
inline SampleTensor make_member(const Scene& scene, std::uint64_t member_seed,
                                const NoiseConfig& noise,
                                float confusion_magnitude = 3.0f) {
    SampleTensor s = perturb_sample(scene.ideal, member_seed, noise);
    if (scene.ood_object) {
        CounterRng rng(member_seed, /*stream=*/5);
        std::uint32_t q = static_cast<std::uint32_t>(scene.objects.size() + 1);
        if (q >= s.queries) throw Unplaceable("no spare query for the anomaly");
        std::uint16_t c = s.dataset_classes();
        std::uint16_t cls = static_cast<std::uint16_t>(rng.uniform_int(1, c));
        for (std::uint16_t k = 0; k < s.class_columns; ++k)
            s.logit(q, k) = (k == cls - 1) ? confusion_magnitude : 0.0f;
        const Rect& r = *scene.ood_object;
        auto plane = s.mask_plane(q);
        std::fill(plane.begin(), plane.end(), -40.0f);
        for (std::uint32_t y = r.y0; y < r.y1; ++y)
            for (std::uint32_t x = r.x0; x < r.x1; ++x) s.mask(q, y, x) = 40.0f;
    }
    return s;
}

}  // namespace segens
