#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "csgfit/grad.hpp"
#include "csgfit/losses.hpp"
#include "csgfit/rng.hpp"
#include "test_helpers.hpp"

using namespace csgfit;
using csgfit::test::cube_model;
using csgfit::test::cube_primitive;
using csgfit::test::random_model;

namespace {

SampleSet single_sample(const Vec3& p, int label, SampleKind kind = SampleKind::kFreespace) {
    SampleSet s;
    s.push(p, static_cast<std::uint8_t>(label), kind);
    return s;
}

SampleSet random_batch(Rng& rng, std::size_t n) {
    SampleSet s;
    for (std::size_t i = 0; i < n; ++i) {
        const SampleKind kind = i % 3 == 0   ? SampleKind::kSurfaceIn
                                : i % 3 == 1 ? SampleKind::kSurfaceOut
                                             : SampleKind::kFreespace;
        s.push(rng.normal_vec3() * 0.4, rng.uniform() < 0.5 ? 1 : 0, kind);
    }
    return s;
}

}  // namespace

TEST_CASE("sample_loss") {
    SECTION("saturated model scores zero") {
        CsgModel m = cube_model(0.5, 1e-4, 200.0);
        SampleSet s;
        s.push({0, 0, 0}, 1, SampleKind::kSurfaceIn);    // deep inside
        s.push({3, 0, 0}, 0, SampleKind::kFreespace);    // far outside
        CHECK(sample_loss(m, s) < 1e-6);
    }
    SECTION("indicator 0.5 everywhere gives 0.25") {
        // Samples exactly on the cube boundary: Phi ~ 0 at tiny delta.
        CsgModel m = cube_model(0.5, 1e-4, 75.0);
        SampleSet s;
        s.push({0.5, 0, 0}, 1, SampleKind::kSurfaceIn);
        s.push({0, 0.5, 0}, 0, SampleKind::kSurfaceOut);
        s.push({0, 0, -0.5}, 1, SampleKind::kSurfaceIn);
        CHECK(sample_loss(m, s) == Catch::Approx(0.25).margin(1e-3));
    }
    SECTION("single sample with O=0.8 and label 0 gives 0.64") {
        CsgModel m = cube_model(0.5, 1e-4, 75.0);
        // Choose depth so sigmoid(-sigma*Phi) = 0.8, i.e. Phi = -ln(4)/sigma.
        const double depth = std::log(4.0) / 75.0;
        const SampleSet s = single_sample({0.5 - depth, 0, 0}, 0);
        CHECK(sample_loss(m, s) == Catch::Approx(0.64).margin(1e-4));
    }
    SECTION("empty batch raises") {
        CHECK_THROWS_AS(sample_loss(cube_model(), SampleSet{}), std::invalid_argument);
    }
    SECTION("permutation invariance") {
        Rng rng(41);
        const CsgModel m = random_model(rng, 3, 1);
        SampleSet s = random_batch(rng, 500);
        const double a = sample_loss(m, s);
        std::reverse(s.points.begin(), s.points.end());
        std::reverse(s.labels.begin(), s.labels.end());
        std::reverse(s.kinds.begin(), s.kinds.end());
        CHECK(sample_loss(m, s) == Catch::Approx(a).epsilon(1e-12));
    }
}

TEST_CASE("overlap_loss") {
    SECTION("single primitive can never overlap") {
        CHECK(overlap_loss(cube_model(), single_sample({0, 0, 0}, 1)) == 0.0);
    }
    SECTION("two coincident cubes at the shared center") {
        CsgModel m = cube_model(0.5, 1e-4, 75.0);
        m.positives.push_back(m.positives[0]);
        CHECK(overlap_loss(m, single_sample({0, 0, 0}, 1)) == Catch::Approx(1.0).margin(1e-3));
    }
    SECTION("disjoint primitives do not overlap") {
        CsgModel m = cube_model(0.5, 1e-4, 75.0);
        ConvexPrimitive other = cube_primitive({5, 0, 0}, 0.5, 1e-4);
        m.positives.push_back(other);
        Rng rng(43);
        SampleSet s = random_batch(rng, 200);
        CHECK(overlap_loss(m, s) < 1e-6);
    }
}

TEST_CASE("unique_parametrization_loss") {
    SECTION("canonical cube scores zero") {
        CHECK(unique_parametrization_loss(cube_model()) == 0.0);
    }
    SECTION("one negative offset contributes its square to the offset mean") {
        CsgModel m = cube_model();
        m.positives[0].offsets[2] = -0.1;
        CHECK(unique_parametrization_loss(m) == Catch::Approx(0.01 / 6.0).epsilon(1e-12));
    }
    SECTION("a stored normal of length 2 contributes 1 to the normal mean") {
        CsgModel m = cube_model();
        m.positives[0].normals[1] = {0, 2, 0};
        CHECK(unique_parametrization_loss(m) == Catch::Approx(1.0 / 6.0).epsilon(1e-12));
    }
}

TEST_CASE("guidance_loss") {
    SECTION("boundary through the nearest samples scores ~0") {
        CsgModel m = cube_model(0.5, 1e-4, 75.0);
        SampleSet s;
        for (int i = -3; i <= 3; ++i)
            s.push({0.5, i * 0.1, 0.0}, 1, SampleKind::kSurfaceIn);  // on the +x face
        CHECK(guidance_loss(m, s) < 1e-6);
    }
    SECTION("a far primitive scores high and improves as it approaches") {
        SampleSet s;
        for (int i = 0; i < 10; ++i) s.push({0, 0, i * 0.01}, 1, SampleKind::kSurfaceIn);
        CsgModel far = cube_model();
        far.positives[0].center = {4, 0, 0};
        CsgModel near = cube_model();
        near.positives[0].center = {1.5, 0, 0};
        CHECK(guidance_loss(far, s) > guidance_loss(near, s));
        CHECK(guidance_loss(far, s) > 1.0);
    }
    SECTION("fewer samples than neighbors uses all available") {
        Rng rng(47);
        const CsgModel m = random_model(rng, 2, 0);
        SampleSet s;
        for (int i = 0; i < 7; ++i) s.push(rng.normal_vec3(), 1, SampleKind::kSurfaceIn);
        // With M far above the sample count this reduces to the mean over all.
        CHECK(guidance_loss(m, s, 50) == Catch::Approx(guidance_loss(m, s, 7)).epsilon(1e-12));
    }
}

TEST_CASE("localization_loss") {
    SECTION("center on a sample scores zero") {
        CsgModel m = cube_model();
        const SampleSet s = single_sample({0, 0, 0}, 1, SampleKind::kSurfaceIn);
        CHECK(localization_loss(m, s) == 0.0);
    }
    SECTION("distance 0.3 contributes 0.09") {
        CsgModel m = cube_model();
        const SampleSet s = single_sample({0.3, 0, 0}, 1, SampleKind::kSurfaceIn);
        CHECK(localization_loss(m, s) == Catch::Approx(0.09).epsilon(1e-12));
    }
    SECTION("invariant under sample permutation") {
        Rng rng(53);
        const CsgModel m = random_model(rng, 3, 2);
        SampleSet s = random_batch(rng, 300);
        const double a = localization_loss(m, s);
        std::reverse(s.points.begin(), s.points.end());
        std::reverse(s.labels.begin(), s.labels.end());
        std::reverse(s.kinds.begin(), s.kinds.end());
        CHECK(localization_loss(m, s) == Catch::Approx(a).epsilon(1e-12));
    }
}

TEST_CASE("total_loss") {
    Rng rng(59);
    const CsgModel m = random_model(rng, 3, 2);
    const SampleSet s = random_batch(rng, 400);

    SECTION("sample-only weights reduce to sample_loss") {
        LossWeights w;
        w.w_overlap = w.w_unique = w.w_guidance = w.w_localization = 0.0;
        CHECK(total_loss(m, s, w).total == Catch::Approx(sample_loss(m, s)).epsilon(1e-12));
    }
    SECTION("doubling every weight doubles the total") {
        LossWeights w;
        const LossBreakdown b1 = total_loss(m, s, w);
        LossWeights w2 = w;
        w2.w_sample *= 2.0;
        w2.w_overlap *= 2.0;
        w2.w_unique *= 2.0;
        w2.w_guidance *= 2.0;
        w2.w_localization *= 2.0;
        const LossBreakdown b2 = total_loss(m, s, w2);
        CHECK(b2.total == Catch::Approx(2.0 * b1.total).epsilon(1e-12));
    }
    SECTION("breakdown total equals the weighted sum") {
        const LossWeights w;
        const LossBreakdown b = total_loss(m, s, w);
        CHECK(b.total == Catch::Approx(b.weighted_sum(w)).margin(1e-9));
    }
    SECTION("every term is finite and non-negative") {
        const LossBreakdown b = total_loss(m, s, LossWeights{});
        for (double v : {b.sample, b.overlap, b.unique, b.guidance, b.localization, b.total}) {
            CHECK(std::isfinite(v));
            CHECK(v >= 0.0);
        }
    }
    SECTION("forward path agrees with the fused gradient path") {
        const LossWeights w;
        const LossBreakdown a = total_loss(m, s, w);
        const LossBreakdown b = grad_total_loss(m, s, w).breakdown;
        CHECK(a.sample == Catch::Approx(b.sample).epsilon(1e-13));
        CHECK(a.overlap == Catch::Approx(b.overlap).epsilon(1e-13));
        CHECK(a.unique == Catch::Approx(b.unique).epsilon(1e-13));
        CHECK(a.guidance == Catch::Approx(b.guidance).epsilon(1e-13));
        CHECK(a.localization == Catch::Approx(b.localization).epsilon(1e-13));
    }
}

TEST_CASE("auxiliary terms treat positives and negatives independently") {
    // Per-primitive contributions do not change when negatives are removed:
    // the mean over K primitives is the mean of single-primitive values.
    Rng rng(61);
    CsgModel m = random_model(rng, 3, 2);
    const SampleSet s = random_batch(rng, 200);

    auto single_prim_value = [&](const ConvexPrimitive& p, auto&& lossfn) {
        CsgModel one;
        one.sharpness_sigma = m.sharpness_sigma;
        one.positives.push_back(p);
        return lossfn(one, s);
    };

    for (auto [lossfn, name] :
         {std::pair{+[](const CsgModel& mm, const SampleSet& ss) { return guidance_loss(mm, ss); },
                    "guidance"},
          std::pair{+[](const CsgModel& mm, const SampleSet& ss) {
                        return localization_loss(mm, ss);
                    },
                    "localization"}}) {
        DYNAMIC_SECTION(name) {
            double sum = 0.0;
            for (const auto& p : m.positives) sum += single_prim_value(p, lossfn);
            for (const auto& p : m.negatives) sum += single_prim_value(p, lossfn);
            CHECK(lossfn(m, s) == Catch::Approx(sum / 5.0).epsilon(1e-12));

            CsgModel pos_only = m;
            pos_only.negatives.clear();
            double pos_sum = 0.0;
            for (const auto& p : m.positives) pos_sum += single_prim_value(p, lossfn);
            CHECK(lossfn(pos_only, s) == Catch::Approx(pos_sum / 3.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("smooth union mode") {
    Rng rng(67);
    const CsgModel m = random_model(rng, 3, 1);
    const SampleSet s = random_batch(rng, 200);
    SECTION("smooth union dominates the hard max pointwise") {
        for (std::size_t i = 0; i < s.size(); ++i) {
            const double hard = union_indicator(m.positives, s.points[i], m.sharpness_sigma,
                                                UnionMode::kHardMax);
            const double smooth = union_indicator(m.positives, s.points[i], m.sharpness_sigma,
                                                  UnionMode::kSmooth);
            CHECK(smooth >= hard - 1e-15);
            CHECK(smooth <= 1.0);
        }
    }
    SECTION("sample loss is finite in both modes") {
        CHECK(std::isfinite(sample_loss(m, s, UnionMode::kHardMax)));
        CHECK(std::isfinite(sample_loss(m, s, UnionMode::kSmooth)));
    }
}
