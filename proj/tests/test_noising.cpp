#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "mmedpo/errors.hpp"
#include "mmedpo/noising.hpp"

using namespace mmedpo;

TEST_CASE("schedule products") {
    auto one = build_schedule(1, 0.9, 0.9);
    CHECK(one.xi == std::vector<double>{0.9});
    CHECK(one.cumulative == std::vector<double>{0.9});

    auto three = build_schedule(3, 0.5, 0.5);
    CHECK(three.cumulative[0] == 0.5);
    CHECK(three.cumulative[1] == 0.25);
    CHECK(three.cumulative[2] == 0.125);

    CHECK_THROWS_AS(build_schedule(3, 0.9, 1.2), ValidationError);
    CHECK_THROWS_AS(build_schedule(0, 0.9, 0.9), ValidationError);
}

TEST_CASE("default schedule is strictly decreasing in (0, 1)") {
    const auto s = build_schedule(500, 0.9999, 0.98);
    CHECK(s.xi.front() == 0.9999);
    CHECK(s.xi.back() == doctest::Approx(0.98).epsilon(1e-12));
    for (std::size_t i = 0; i < s.steps(); ++i) {
        CHECK((s.cumulative[i] > 0.0 && s.cumulative[i] < 1.0));
        if (i > 0) CHECK(s.cumulative[i] < s.cumulative[i - 1]);
    }
}

TEST_CASE("zero mask leaves the image untouched and draws nothing") {
    Rng r(1);
    const ImageTensor img = testing::random_image(5, 5, 3, r);
    LesionHeatmap h{5, 5, std::vector<float>(25, 0.0f), 0.5f};
    const auto s = build_schedule(10, 0.99, 0.9);
    Rng a(9), b(9);
    CHECK(noise_image(img, h, s, 5, a) == img);
    CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("near-identity schedule barely moves the image") {
    Rng r(2);
    const ImageTensor img = testing::random_image(4, 4, 2, r);
    LesionHeatmap h{4, 4, std::vector<float>(16, 1.0f), 1.0f};
    const auto s = build_schedule(1, 0.999999, 0.999999);
    Rng n(3), probe(3);
    const auto out = noise_image(img, h, s, 0, n);
    // The shift is sqrt(1e-6) |eps| per element, so 1e-3 per unit of |eps|.
    for (std::size_t i = 0; i < img.size(); ++i) {
        CHECK(std::abs(out.data()[i] - img.data()[i]) <= 1e-3 * std::abs(probe.gaussian()) + 1e-6);
    }
}

TEST_CASE("single pixel evaluation with the seeded draw") {
    const ImageTensor img(1, 1, 1);
    LesionHeatmap h{1, 1, {1.0f}, 1.0f};
    const auto s = build_schedule(2, 0.5, 0.5);  // cumulative[1] = 0.25
    Rng n(11), probe(11);
    const auto out = noise_image(img, h, s, 1, n);
    const double eps = probe.gaussian();
    CHECK(out.data()[0] == doctest::Approx(std::sqrt(0.75) * eps).epsilon(1e-6));
}

TEST_CASE("global noising equals an all-ones mask") {
    Rng r(4);
    const ImageTensor img = testing::random_image(3, 3, 2, r);
    LesionHeatmap ones{3, 3, std::vector<float>(9, 1.0f), 1.0f};
    const auto s = build_schedule(50, 0.999, 0.95);
    Rng a(5), b(5);
    CHECK(noise_image_global(img, s, 30, a) == noise_image(img, ones, s, 30, b));

    Rng c(5), probe(5);
    const ImageTensor zero(2, 2, 2);
    const auto s2 = build_schedule(2, 0.5, 0.5);
    const auto out = noise_image_global(zero, s2, 1, c);
    for (std::size_t i = 0; i < out.size(); ++i) {
        CHECK(out.data()[i] == doctest::Approx(std::sqrt(0.75) * probe.gaussian()).epsilon(1e-6));
    }
    Rng d(1);
    CHECK_THROWS_AS(noise_image_global(zero, s2, 2, d), ValidationError);
}

TEST_CASE("unmasked pixels are bit-identical") {
    Rng r(6);
    const ImageTensor img = testing::random_image(8, 8, 3, r);
    const auto h = synth_heatmap(img, 3.0, 4.0, 2.0, 0.9);
    const auto s = build_schedule(500, 0.9999, 0.98);
    Rng n(7);
    const auto out = noise_image(img, h, s, 400, n);
    std::size_t changed = 0;
    for (std::size_t p = 0; p < img.pixels(); ++p) {
        for (std::size_t c = 0; c < 3; ++c) {
            const float a = img.data()[p * 3 + c], b = out.data()[p * 3 + c];
            if (h.mask[p] == 0.0f) CHECK(a == b);
            else changed += a != b;
        }
    }
    CHECK(changed > 0);
}

TEST_CASE("heatmap geometry") {
    const ImageTensor img(6, 6, 1);
    const auto all = synth_heatmap(img, 2.5, 2.5, 10.0, 0.5);
    for (float v : all.mask) CHECK(v == 1.0f);
    const auto dot = synth_heatmap(img, 2.0, 3.0, 0.5, 0.5);
    std::size_t on = 0;
    for (float v : dot.mask) on += v > 0.0f;
    CHECK(on == 1);
    CHECK(dot.mask[2 * 6 + 3] == 1.0f);
    CHECK_THROWS_AS(synth_heatmap(img, 2, 2, 1, 1.1), ValidationError);
}

TEST_CASE("mask mismatch is rejected") {
    const ImageTensor img(4, 4, 1);
    LesionHeatmap h{3, 3, std::vector<float>(9, 1.0f), 0.5f};
    const auto s = build_schedule(5, 0.99, 0.9);
    Rng n(1);
    CHECK_THROWS_AS(noise_image(img, h, s, 1, n), ValidationError);
}
