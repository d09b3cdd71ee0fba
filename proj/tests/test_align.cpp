#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <segens/align.hpp>
#include <segens/synth.hpp>

#include "oracles.hpp"

using namespace segens;

namespace {

SampleTensor ramp_sample(std::uint32_t p, std::uint32_t h, std::uint32_t w) {
    SampleTensor s(p, 3, h, w);
    for (std::uint32_t q = 0; q < p; ++q)
        for (std::uint32_t y = 0; y < h; ++y)
            for (std::uint32_t x = 0; x < w; ++x)
                s.mask(q, y, x) = static_cast<float>(q * 100 + y * w + x);
    return s;
}

}  // namespace

TEST_CASE("invert_hflip mirrors a 1x1x2 mask") {
    SampleTensor s(1, 2, 1, 2);
    s.mask(0, 0, 0) = 1.0f;
    s.mask(0, 0, 1) = 2.0f;
    s.transform = TransformDescriptor::hflip();
    SampleTensor out = invert_hflip(std::move(s));
    CHECK(out.mask(0, 0, 0) == 2.0f);
    CHECK(out.mask(0, 0, 1) == 1.0f);
    CHECK(out.transform.kind == TransformKind::identity);
}

TEST_CASE("hflip inversion is a bit-exact involution") {
    SampleTensor original = ramp_sample(3, 5, 7);
    SampleTensor flipped = original;
    for (std::uint32_t q = 0; q < flipped.queries; ++q)
        for (std::uint32_t y = 0; y < flipped.height; ++y)
            for (std::uint32_t x = 0; x < flipped.width; ++x)
                flipped.mask(q, y, x) = original.mask(q, y, original.width - 1 - x);
    flipped.transform = TransformDescriptor::hflip();
    SampleTensor restored = invert_hflip(std::move(flipped));
    CHECK(restored.mask_logits == original.mask_logits);
    CHECK(restored.class_logits == original.class_logits);
}

TEST_CASE("invert_hflip rejects non-hflip samples") {
    SampleTensor s(1, 2, 1, 2);
    CHECK_THROWS_AS(invert_hflip(std::move(s)), WrongTransform);
}

TEST_CASE("invert_scale of a constant mask stays constant") {
    SampleTensor s(2, 3, 4, 4);
    for (float& v : s.mask_logits) v = 1.25f;
    s.transform = TransformDescriptor::scale(0.8f);
    SampleTensor out = invert_scale(s, 5, 5);
    CHECK(out.height == 5);
    CHECK(out.width == 5);
    for (float v : out.mask_logits) CHECK(v == doctest::Approx(1.25f).epsilon(1e-6));
}

TEST_CASE("invert_scale matches the standalone bilinear oracle") {
    SampleTensor s(1, 2, 2, 2);
    s.mask(0, 0, 0) = 0.0f;
    s.mask(0, 0, 1) = 0.0f;
    s.mask(0, 1, 0) = 4.0f;
    s.mask(0, 1, 1) = 4.0f;
    s.transform = TransformDescriptor::scale(0.5f);
    SampleTensor out = invert_scale(s, 4, 4);
    std::vector<double> grid{0, 0, 4, 4};
    double sx = 2.0 / 4, sy = 2.0 / 4;
    for (std::uint32_t y = 0; y < 4; ++y)
        for (std::uint32_t x = 0; x < 4; ++x) {
            double expect =
                oracle::bilinear(grid, 2, 2, (x + 0.5) * sx - 0.5, (y + 0.5) * sy - 0.5);
            CHECK(out.mask(0, y, x) == doctest::Approx(expect).epsilon(1e-6));
        }
}

TEST_CASE("invert_scale restores the reference frame dimensions") {
    SampleTensor s(1, 2, 80, 80);
    s.transform = TransformDescriptor::scale(0.8f);
    SampleTensor out = invert_scale(s, 100, 100);
    CHECK(out.height == 100);
    CHECK(out.width == 100);
    CHECK(out.transform.kind == TransformKind::identity);
    CHECK_THROWS_AS(invert_scale(s, 0, 100), DegenerateTarget);
}

TEST_CASE("zero flow with all-valid pixels is an identity warp") {
    SampleTensor s = ramp_sample(2, 4, 6);
    s.transform = TransformDescriptor::prior_frame(1);
    FlowField flow(4, 6);
    SampleTensor out = warp_prior_frame(s, flow);
    for (std::size_t i = 0; i < out.mask_logits.size(); ++i)
        CHECK(out.mask_logits[i] == doctest::Approx(s.mask_logits[i]).epsilon(1e-6));
}

TEST_CASE("integer translation flow shifts a ramp and fills the border") {
    SampleTensor s = ramp_sample(1, 3, 4);
    s.transform = TransformDescriptor::prior_frame(1);
    FlowField flow(3, 4);
    for (std::size_t i = 0; i < flow.pixels(); ++i) flow.dx[i] = 1.0f;
    SampleTensor out = warp_prior_frame(s, flow);
    for (std::uint32_t y = 0; y < 3; ++y) {
        for (std::uint32_t x = 0; x + 1 < 4; ++x)
            CHECK(out.mask(0, y, x) == doctest::Approx(s.mask(0, y, x + 1)));
        CHECK(out.mask(0, y, 3) == kNeutralMaskLogit);  // samples x=4, out of bounds
    }
}

TEST_CASE("all-invalid flow yields the neutral logit everywhere") {
    SampleTensor s = ramp_sample(2, 3, 3);
    s.transform = TransformDescriptor::prior_frame(1);
    FlowField flow(3, 3);
    std::fill(flow.valid.begin(), flow.valid.end(), std::uint8_t{0});
    SampleTensor out = warp_prior_frame(s, flow);
    for (float v : out.mask_logits) CHECK(v == kNeutralMaskLogit);
}

TEST_CASE("warp rejects mismatched flow shape and wrong transform") {
    SampleTensor s(1, 2, 3, 3);
    s.transform = TransformDescriptor::prior_frame(1);
    FlowField bad(2, 3);
    CHECK_THROWS_AS(warp_prior_frame(s, bad), ShapeMismatch);
    SampleTensor id(1, 2, 3, 3);
    FlowField ok(3, 3);
    CHECK_THROWS_AS(warp_prior_frame(id, ok), WrongTransform);
}

TEST_CASE("sample multiplicativity follows the product rule") {
    // (mc, prior, tta) -> expected total
    struct Row {
        std::uint32_t mc, prior;
        TtaMode tta;
        std::uint32_t total;
    };
    const Row rows[] = {
        {0, 0, TtaMode::none, 1},        {3, 0, TtaMode::none, 3},
        {3, 0, TtaMode::hflip, 6},       {0, 1, TtaMode::none, 2},
        {0, 1, TtaMode::scale_hflip, 12}, {0, 0, TtaMode::scale, 3},
        {0, 0, TtaMode::scale_hflip, 6}, {2, 2, TtaMode::hflip, 12},
        {5, 0, TtaMode::none, 5},        {0, 5, TtaMode::none, 6},
        {3, 1, TtaMode::scale, 18},
    };
    for (const Row& r : rows) {
        PredictionConfig cfg{r.mc, r.prior, r.tta};
        CHECK(total_samples(cfg) == r.total);
        CHECK(enumerate_config(cfg).size() == r.total);
    }
}

TEST_CASE("build_aligned_ensemble: 3 MC passes with hflip TTA give Q = 6") {
    std::vector<SampleTensor> raw;
    for (int m = 0; m < 3; ++m) {
        raw.emplace_back(2, 3, 4, 4);
        SampleTensor flip(2, 3, 4, 4);
        flip.transform = TransformDescriptor::hflip();
        raw.push_back(std::move(flip));
    }
    AlignedEnsemble ens = build_aligned_ensemble(std::move(raw), {}, 4, 4);
    CHECK(ens.count == 6);
    auto src = ens.open();
    std::uint32_t seen = 0;
    while (auto s = src->next()) {
        CHECK(s->transform.kind == TransformKind::identity);
        ++seen;
    }
    CHECK(seen == 6);
}

TEST_CASE("build_aligned_ensemble: single identity sample passes through") {
    std::vector<SampleTensor> raw;
    raw.push_back(ramp_sample(2, 3, 3));
    AlignedEnsemble ens = build_aligned_ensemble(std::move(raw), {}, 3, 3);
    CHECK(ens.count == 1);
    auto src = ens.open();
    auto s = src->next();
    REQUIRE(s.has_value());
    CHECK(s->mask_logits == ramp_sample(2, 3, 3).mask_logits);
    CHECK_FALSE(src->next().has_value());
}

TEST_CASE("build_aligned_ensemble: 0 MC, 1 prior frame, scale+hflip gives Q = 12") {
    PredictionConfig cfg{0, 1, TtaMode::scale_hflip};
    std::vector<SampleTensor> raw;
    for (const TransformDescriptor& d : enumerate_config(cfg)) {
        SampleTensor s(2, 3, d.kind == TransformKind::scale
                                 ? static_cast<std::uint32_t>(8 * d.scale_factor)
                                 : 8,
                       d.kind == TransformKind::scale
                           ? static_cast<std::uint32_t>(8 * d.scale_factor)
                           : 8);
        s.transform = d;
        raw.push_back(std::move(s));
    }
    REQUIRE(raw.size() == 12);
    std::vector<FlowField> flows{FlowField(8, 8)};
    AlignedEnsemble ens = build_aligned_ensemble(std::move(raw), std::move(flows), 8, 8);
    CHECK(ens.count == 12);
    auto src = ens.open();
    std::uint32_t seen = 0;
    while (auto s = src->next()) {
        CHECK(s->transform.kind == TransformKind::identity);
        CHECK(s->height == 8);
        CHECK(s->width == 8);
        ++seen;
    }
    CHECK(seen == 12);
}

TEST_CASE("build_aligned_ensemble validates flows and class counts") {
    std::vector<SampleTensor> raw;
    SampleTensor prior(1, 3, 4, 4);
    prior.transform = TransformDescriptor::prior_frame(2);
    raw.push_back(std::move(prior));
    CHECK_THROWS_AS(build_aligned_ensemble(std::move(raw), {FlowField(4, 4)}, 4, 4),
                    MissingFlow);

    std::vector<SampleTensor> mixed;
    mixed.emplace_back(1, 3, 4, 4);
    mixed.emplace_back(1, 4, 4, 4);
    CHECK_THROWS_AS(build_aligned_ensemble(std::move(mixed), {}, 4, 4), MixedClassCount);

    CHECK_THROWS_AS(build_aligned_ensemble({}, {}, 4, 4), EmptyEnsemble);
}

TEST_CASE("re-opening an ensemble yields the same samples in the same order") {
    std::vector<SampleTensor> raw;
    for (int i = 0; i < 3; ++i) {
        SampleTensor s = ramp_sample(2, 4, 4);
        s.mask(0, 0, 0) = static_cast<float>(i);
        raw.push_back(std::move(s));
    }
    AlignedEnsemble ens = build_aligned_ensemble(std::move(raw), {}, 4, 4);
    std::vector<float> first_pass, second_pass;
    auto src = ens.open();
    while (auto s = src->next()) first_pass.push_back(s->mask(0, 0, 0));
    src = ens.open();
    while (auto s = src->next()) second_pass.push_back(s->mask(0, 0, 0));
    CHECK(first_pass == second_pass);
    CHECK(first_pass.size() == 3);
}
