#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <segens/pixagg.hpp>
#include <segens/synth.hpp>

#include "oracles.hpp"

using namespace segens;

namespace {

UncertaintyMap make_map(Measure m, std::uint32_t h, std::uint32_t w,
                        const std::vector<float>& v) {
    UncertaintyMap u(m, h, w);
    u.values = v;
    return u;
}

}  // namespace

TEST_CASE("image mean of a constant map is the constant") {
    UncertaintyMap u = make_map(Measure::predictive_entropy_cm, 3, 3,
                                std::vector<float>(9, 0.7f));
    CHECK(image_aggregate(u, PixelAggMode::image_mean) == doctest::Approx(0.7).epsilon(1e-6));
}

TEST_CASE("image sum of [1,2,3,4] is 10") {
    UncertaintyMap u = make_map(Measure::predictive_entropy_cm, 2, 2, {1, 2, 3, 4});
    CHECK(image_aggregate(u, PixelAggMode::image_sum) == doctest::Approx(10.0));
    CHECK(image_aggregate(u, PixelAggMode::image_mean) == doctest::Approx(2.5));
}

TEST_CASE("image mean equals sum over pixel count on random maps") {
    CounterRng rng(3, 0);
    std::vector<float> v(35);
    for (float& x : v) x = static_cast<float>(rng.uniform());
    UncertaintyMap u = make_map(Measure::mutual_information_cm, 5, 7, v);
    double sum = 0.0;
    for (float x : v) sum += x;
    CHECK(image_aggregate(u, PixelAggMode::image_mean) ==
          doctest::Approx(sum / 35).epsilon(1e-12));
}

TEST_CASE("patch aggregation of a constant map is the constant") {
    UncertaintyMap u = make_map(Measure::predictive_entropy_cm, 6, 6,
                                std::vector<float>(36, 1.3f));
    for (std::uint32_t patch : {1u, 2u, 4u, 5u, 6u, 100u})
        CHECK(patch_aggregate(u, patch) == doctest::Approx(1.3).epsilon(1e-6));
}

TEST_CASE("an aligned hotspot tile dominates the patch score") {
    std::vector<float> v(64, 0.0f);
    for (std::uint32_t y = 0; y < 4; ++y)
        for (std::uint32_t x = 4; x < 8; ++x) v[y * 8 + x] = 1.0f;
    UncertaintyMap u = make_map(Measure::mutual_information_cm, 8, 8, v);
    CHECK(patch_aggregate(u, 4) == doctest::Approx(1.0));
    CHECK(image_aggregate(u, PixelAggMode::image_mean) == doctest::Approx(0.25));
}

TEST_CASE("patch aggregation matches the brute-force tile oracle") {
    CounterRng rng(9, 0);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<float> v(72);
        for (float& x : v) x = static_cast<float>(rng.uniform());
        // 9x8: ragged tiles with patch 4 along height
        UncertaintyMap unc = make_map(Measure::predictive_entropy_cm, 9, 8, v);
        CHECK(patch_aggregate(unc, 4) ==
              doctest::Approx(oracle::patch_bruteforce(v, 9, 8, 4, true)).epsilon(1e-12));
        UncertaintyMap conf = make_map(Measure::max_softmax_cm, 9, 8, v);
        CHECK(patch_aggregate(conf, 4) ==
              doctest::Approx(oracle::patch_bruteforce(v, 9, 8, 4, false)).epsilon(1e-12));
    }
}

TEST_CASE("whole-image patch equals the image mean") {
    CounterRng rng(4, 0);
    std::vector<float> v(48);
    for (float& x : v) x = static_cast<float>(rng.uniform());
    UncertaintyMap u = make_map(Measure::expected_entropy_cm, 6, 8, v);
    CHECK(patch_aggregate(u, 8) ==
          doctest::Approx(image_aggregate(u, PixelAggMode::image_mean)).epsilon(1e-12));
}

TEST_CASE("aggregates are monotone in the uncertain direction") {
    CounterRng rng(5, 0);
    std::vector<float> v(36), bumped(36);
    for (std::size_t i = 0; i < 36; ++i) {
        v[i] = static_cast<float>(rng.uniform());
        bumped[i] = v[i] + 0.25f;
    }
    UncertaintyMap a = make_map(Measure::mutual_information_m, 6, 6, v);
    UncertaintyMap b = make_map(Measure::mutual_information_m, 6, 6, bumped);
    CHECK(image_aggregate(b, PixelAggMode::image_mean) >=
          image_aggregate(a, PixelAggMode::image_mean));
    CHECK(patch_aggregate(b, 4) >= patch_aggregate(a, 4));
}

TEST_CASE("flag parsing round-trips") {
    PixelAgg agg;
    REQUIRE(PixelAgg::parse("image-mean", agg));
    CHECK(agg.mode == PixelAggMode::image_mean);
    REQUIRE(PixelAgg::parse("image-sum", agg));
    CHECK(agg.mode == PixelAggMode::image_sum);
    REQUIRE(PixelAgg::parse("patch:32", agg));
    CHECK(agg.mode == PixelAggMode::patch);
    CHECK(agg.patch == 32);
    CHECK(agg.name() == "patch:32");
    CHECK_FALSE(PixelAgg::parse("patch:0", agg));
    CHECK_FALSE(PixelAgg::parse("bogus", agg));
}

TEST_CASE("confidence_score negates uncertainty-oriented values") {
    UncertaintyMap unc = make_map(Measure::mutual_information_cm, 1, 2, {0.5f, 0.5f});
    UncertaintyMap conf = make_map(Measure::max_softmax_cm, 1, 2, {0.5f, 0.5f});
    PixelAgg agg{PixelAggMode::image_mean, 0};
    CHECK(confidence_score(unc, agg) == doctest::Approx(-0.5));
    CHECK(confidence_score(conf, agg) == doctest::Approx(0.5));
}
