#pragma once

#include <string>

#include "segens/types.hpp"

namespace segens {

enum class PixelAggMode { image_mean, image_sum, patch };

struct PixelAgg {
    PixelAggMode mode = PixelAggMode::image_mean;
    std::uint32_t patch = 128;

    std::string name() const {
        switch (mode) {
            case PixelAggMode::image_mean: return "image-mean";
            case PixelAggMode::image_sum: return "image-sum";
            case PixelAggMode::patch: return "patch:" + std::to_string(patch);
        }
        return "?";
    }

    // Parses "image-mean" | "image-sum" | "patch:<N>".
    static bool parse(const std::string& s, PixelAgg& out) {
        if (s == "image-mean") {
            out = {PixelAggMode::image_mean, 0};
            return true;
        }
        if (s == "image-sum") {
            out = {PixelAggMode::image_sum, 0};
            return true;
        }
        if (s.rfind("patch:", 0) == 0) {
            int n = std::stoi(s.substr(6));
            if (n < 1) return false;
            out = {PixelAggMode::patch, static_cast<std::uint32_t>(n)};
            return true;
        }
        return false;
    }
};

inline double image_aggregate(const UncertaintyMap& u, PixelAggMode mode) {
    double sum = 0.0;
    for (float v : u.values) sum += v;
    return mode == PixelAggMode::image_sum ? sum : sum / static_cast<double>(u.pixels());
}

// Non-overlapping patch tiling (ragged edge tiles kept); per-tile mean; the
// image score is the extreme tile in the uncertain direction: max tile mean
// for uncertainty orientation, min for confidence orientation.
inline double patch_aggregate(const UncertaintyMap& u, std::uint32_t patch) {
    if (patch < 1) throw Error("patch size must be >= 1");
    bool want_max = u.orientation == Orientation::higher_is_uncertain;
    double best = want_max ? -std::numeric_limits<double>::infinity()
                           : std::numeric_limits<double>::infinity();
    for (std::uint32_t ty = 0; ty < u.height; ty += patch)
        for (std::uint32_t tx = 0; tx < u.width; tx += patch) {
            std::uint32_t ye = std::min(ty + patch, u.height);
            std::uint32_t xe = std::min(tx + patch, u.width);
            double sum = 0.0;
            for (std::uint32_t y = ty; y < ye; ++y)
                for (std::uint32_t x = tx; x < xe; ++x)
                    sum += u.values[static_cast<std::size_t>(y) * u.width + x];
            double mean = sum / (static_cast<double>(ye - ty) * (xe - tx));
            best = want_max ? std::max(best, mean) : std::min(best, mean);
        }
    return best;
}

inline double aggregate_pixels(const UncertaintyMap& u, const PixelAgg& agg) {
    return agg.mode == PixelAggMode::patch ? patch_aggregate(u, agg.patch)
                                           : image_aggregate(u, agg.mode);
}

// Confidence score used for ranking: confidence measures pass through,
// uncertainty measures are negated.
inline double confidence_score(const UncertaintyMap& u, const PixelAgg& agg) {
    double v = aggregate_pixels(u, agg);
    return u.orientation == Orientation::higher_is_confident ? v : -v;
}

}  // namespace segens
