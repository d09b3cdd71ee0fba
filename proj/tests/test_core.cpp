#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include <segens/types.hpp>

using namespace segens;

TEST_CASE("validate_sample accepts the minimal sample") {
    SampleTensor s(1, 2, 1, 1);
    CHECK_NOTHROW(validate_sample(s));
}

TEST_CASE("validate_sample rejects a NaN mask logit with its index") {
    SampleTensor s(2, 3, 2, 2);
    s.mask(1, 0, 1) = std::nanf("");
    CHECK_THROWS_AS(validate_sample(s), NonFiniteLogit);
    try {
        validate_sample(s);
    } catch (const NonFiniteLogit& e) {
        CHECK(e.index == 1 * 4 + 1);
    }
}

TEST_CASE("validate_sample rejects an ensemble-wide class column mismatch") {
    SampleTensor s(1, 3, 1, 1);
    CHECK_THROWS_AS(validate_sample(s, 4), ShapeMismatch);
    CHECK_NOTHROW(validate_sample(s, 3));
}

TEST_CASE("validate_sample rejects empty tensors") {
    SampleTensor zero_q;
    CHECK_THROWS_AS(validate_sample(zero_q), EmptyTensor);
    SampleTensor one_col(1, 1, 1, 1);
    CHECK_THROWS_AS(validate_sample(one_col), EmptyTensor);
}

TEST_CASE("softmax of equal logits is uniform") {
    float logits[3] = {0.0f, 0.0f, 0.0f};
    auto p = softmax_over_classes({logits, 3});
    for (double v : p) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-9));
}

TEST_CASE("softmax saturates stably under a huge logit") {
    float logits[3] = {1000.0f, 0.0f, 0.0f};
    auto p = softmax_over_classes({logits, 3});
    CHECK(p[0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(p[1] == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(std::isfinite(p[0]));
}

TEST_CASE("softmax closed form [ln2, 0] -> [2/3, 1/3]") {
    float logits[2] = {static_cast<float>(std::log(2.0)), 0.0f};
    auto p = softmax_over_classes({logits, 2});
    CHECK(p[0] == doctest::Approx(2.0 / 3).epsilon(1e-7));
    CHECK(p[1] == doctest::Approx(1.0 / 3).epsilon(1e-7));
}

TEST_CASE("softmax is shift invariant") {
    float a[4] = {0.3f, -1.2f, 2.0f, 0.0f};
    float b[4] = {0.3f + 7.5f, -1.2f + 7.5f, 2.0f + 7.5f, 7.5f};
    auto pa = softmax_over_classes({a, 4});
    auto pb = softmax_over_classes({b, 4});
    for (int i = 0; i < 4; ++i) CHECK(pa[i] == doctest::Approx(pb[i]).epsilon(1e-6));
}

TEST_CASE("sigmoid fixed points and symmetry") {
    CHECK(sigmoid(0.0) == 0.5);
    CHECK(sigmoid(-0.0) == 0.5);
    for (double x : {-20.0, -3.5, -0.1, 0.7, 4.0, 30.0})
        CHECK(sigmoid(x) + sigmoid(-x) == doctest::Approx(1.0).epsilon(1e-12));
    float zeros[4] = {0.0f, 0.0f, 0.0f, 0.0f};
    for (double v : sigmoid_mask({zeros, 4})) CHECK(v == 0.5);
}

TEST_CASE("panoptic id encoding is a bijection") {
    for (std::uint32_t cls : {0u, 1u, 19u, 65535u})
        for (std::uint32_t inst : {0u, 1u, 77u, 65535u}) {
            std::uint32_t enc = encode_segment(static_cast<std::uint16_t>(cls),
                                               static_cast<std::uint16_t>(inst));
            CHECK(segment_class(enc) == cls);
            CHECK(segment_instance(enc) == inst);
        }
    CHECK(encode_segment(0, 0) == kVoidSegment);
}

TEST_CASE("measure names round-trip and orientations are consistent") {
    for (Measure m : kAllMeasures) {
        Measure back;
        REQUIRE(measure_from_name(measure_name(m), back));
        CHECK(back == m);
        UncertaintyMap map(m, 2, 2);
        CHECK(map.orientation == measure_orientation(m));
    }
    Measure m;
    CHECK_FALSE(measure_from_name("bogus", m));
    CHECK(measure_orientation(Measure::max_softmax_cm) == Orientation::higher_is_confident);
    CHECK(measure_orientation(Measure::mutual_information_cm) ==
          Orientation::higher_is_uncertain);
}

TEST_CASE("transform ordering puts the current frame first") {
    auto id = TransformDescriptor::identity();
    auto flip = TransformDescriptor::hflip();
    auto sc = TransformDescriptor::scale(0.8f);
    auto prior = TransformDescriptor::prior_frame(1);
    CHECK(transform_less(id, flip));
    CHECK(transform_less(flip, sc));
    CHECK(transform_less(sc, prior));
    CHECK(transform_less(TransformDescriptor::scale(0.8f), TransformDescriptor::scale(1.25f)));
    CHECK(transform_less(TransformDescriptor::prior_frame(1), TransformDescriptor::prior_frame(2)));
}
