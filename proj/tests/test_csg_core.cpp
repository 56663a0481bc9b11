#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "csgfit/csg_core.hpp"
#include "csgfit/rng.hpp"
#include "test_helpers.hpp"

using namespace csgfit;
using csgfit::test::cube_model;
using csgfit::test::cube_primitive;
using csgfit::test::cube_primitive_symmetric;
using csgfit::test::cube_with_hole_model;
using csgfit::test::random_model;
using csgfit::test::random_primitive;

namespace {

// Independent Phi oracle: direct LogSumExp over explicit face values.
double phi_oracle(const ConvexPrimitive& p, const Vec3& x) {
    double sum = 0.0;
    for (int i = 0; i < p.face_count(); ++i)
        sum += std::exp((dot(p.face_normal(i), x - p.center) - p.offsets[i]) / p.blend_delta);
    return p.blend_delta * std::log(sum);
}

}  // namespace

TEST_CASE("convex_phi on the unit cube") {
    const ConvexPrimitive cube = cube_primitive({0, 0, 0}, 0.5, 1e-4);

    SECTION("center of the cube: smooth max ~ hard max") {
        CHECK(convex_phi(cube, {0, 0, 0}) == Catch::Approx(-0.5).margin(1e-3));
    }
    SECTION("face center: matches the hand-computed LogSumExp") {
        const Vec3 x{0.5, 0, 0};
        // a = (0, -0.5, -0.5, -1, -0.5, -0.5); only the zero term survives at
        // delta = 1e-4, so the exact value is delta*log(1 + tiny) ~ 0.
        const double exact = phi_oracle(cube, x);
        CHECK(std::abs(convex_phi(cube, x) - exact) < 1e-12);
        CHECK(std::abs(convex_phi(cube, x)) < 2e-3);
    }
    SECTION("larger delta inflates the value above the hard max") {
        ConvexPrimitive soft = cube;
        soft.blend_delta = 0.1;
        CHECK(convex_phi(soft, {0, 0, 0}) > -0.5);
        CHECK(convex_phi(soft, {0, 0, 0}) ==
              Catch::Approx(-0.5 + 0.1 * std::log(6.0)).epsilon(1e-12));
    }
    SECTION("non-finite parameters raise") {
        ConvexPrimitive bad = cube;
        bad.center.x = std::numeric_limits<double>::quiet_NaN();
        CHECK_THROWS_AS(convex_phi(bad, {0, 0, 0}), EvaluationError);
    }
    SECTION("symmetric storage evaluates identically to the expanded form") {
        const ConvexPrimitive sym = cube_primitive_symmetric({0, 0, 0}, 0.5, 1e-3);
        ConvexPrimitive free = cube_primitive({0, 0, 0}, 0.5, 1e-3);
        // Match the symmetric face order: +x,+y,+z then -x,-y,-z.
        Rng rng(7);
        for (int i = 0; i < 50; ++i) {
            const Vec3 x = rng.normal_vec3();
            CHECK(convex_phi(sym, x) == Catch::Approx(convex_phi(free, x)).epsilon(1e-12));
        }
    }
}

TEST_CASE("convex_indicator") {
    const ConvexPrimitive cube = cube_primitive({0, 0, 0}, 0.5, 1e-4);
    SECTION("Phi = 0 maps to 0.5") {
        CHECK(indicator_from_phi(0.0, 75.0) == Catch::Approx(0.5).epsilon(1e-15));
    }
    SECTION("deep inside saturates to 1") {
        CHECK(indicator_from_phi(-10.0, 75.0) == Catch::Approx(1.0).margin(1e-12));
        const ConvexPrimitive big = cube_primitive({0, 0, 0}, 10.0, 1e-4);
        CHECK(convex_indicator(big, {0, 0, 0}, 75.0) == Catch::Approx(1.0).margin(1e-12));
    }
    SECTION("scalar sigmoid value") {
        CHECK(indicator_from_phi(0.02, 75.0) == Catch::Approx(0.18242552).margin(1e-6));
    }
    SECTION("monotone decreasing in Phi") {
        double prev = 1.0;
        for (double phi = -1.0; phi <= 1.0; phi += 0.01) {
            const double c = indicator_from_phi(phi, 75.0);
            CHECK(c <= prev);
            prev = c;
        }
    }
    SECTION("sigma must be positive") {
        CHECK_THROWS_AS(convex_indicator(cube, {0, 0, 0}, 0.0), std::invalid_argument);
    }
}

TEST_CASE("union_indicator") {
    const double sigma = 75.0;
    SECTION("empty set contributes 0") {
        CHECK(union_indicator({}, {0, 0, 0}, sigma) == 0.0);
    }
    SECTION("one cube at its center is occupied") {
        const std::vector<ConvexPrimitive> prims = {cube_primitive({0, 0, 0}, 0.5, 1e-4)};
        CHECK(union_indicator(prims, {0, 0, 0}, sigma) == Catch::Approx(1.0).margin(1e-9));
    }
    SECTION("max selects the containing primitive") {
        const std::vector<ConvexPrimitive> prims = {cube_primitive({-2, 0, 0}, 0.5, 1e-4),
                                                    cube_primitive({2, 0, 0}, 0.5, 1e-4)};
        const Vec3 x{2, 0.1, -0.1};
        CHECK(union_indicator(prims, x, sigma) == convex_indicator(prims[1], x, sigma));
    }
}

TEST_CASE("csg_indicator semantics of relu(O+ - O-)") {
    SECTION("relu clamps a negative difference to 0") {
        CsgModel m;
        m.sharpness_sigma = 75.0;
        // Positive cube just out of reach (weak response), negative cube on top of x.
        m.positives.push_back(cube_primitive({0.512, 0, 0}, 0.01, 1e-4));
        m.negatives.push_back(cube_primitive({0, 0, 0}, 0.3, 1e-4));
        const Vec3 x{0, 0, 0};
        const double o_pos = union_indicator(m.positives, x, m.sharpness_sigma);
        const double o_neg = union_indicator(m.negatives, x, m.sharpness_sigma);
        REQUIRE(o_pos < o_neg);
        CHECK(csg_indicator(m, x) == 0.0);
    }
    SECTION("carved region is empty, solid region is full") {
        const CsgModel m = cube_with_hole_model(1e-3, 75.0);
        CHECK(csg_indicator(m, {0, 0, 0}) == Catch::Approx(0.0).margin(1e-3));
        CHECK(csg_indicator(m, {0.35, 0.35, 0}) == Catch::Approx(1.0).margin(1e-3));
    }
}

TEST_CASE("csg_sdf") {
    SECTION("distance to a unit cube on-axis") {
        const CsgModel m = cube_model(0.5, 1e-3);
        CHECK(csg_sdf(m, {2, 0, 0}) == Catch::Approx(1.5).margin(0.05));
    }
    SECTION("hole axis is outside the solid") {
        const CsgModel m = cube_with_hole_model();
        CHECK(csg_sdf(m, {0, 0, 0}) > 0.0);
    }
    SECTION("no negatives reduces to min over positive Phi") {
        Rng rng(3);
        const CsgModel m = random_model(rng, 3, 0);
        for (int i = 0; i < 100; ++i) {
            const Vec3 x = rng.normal_vec3();
            double expected = std::numeric_limits<double>::infinity();
            for (const auto& p : m.positives) expected = std::min(expected, convex_phi(p, x));
            CHECK(csg_sdf(m, x) == expected);
        }
    }
}

TEST_CASE("face_label_at") {
    SECTION("face of a lone cube") {
        const CsgModel m = cube_model(0.5, 1e-4);
        const FaceTriple t = face_label_at(m, {0, 0, 0.49995});
        CHECK(t.face_index == 2);  // +z face
        CHECK(t.positive_index == 0);
        CHECK(t.negative_index == FaceTriple::kNone);
    }
    SECTION("carved wall belongs to the negative primitive") {
        const CsgModel m = cube_with_hole_model(1e-4);
        const FaceTriple t = face_label_at(m, {0.2, 0.05, 0.1});
        CHECK(t.negative_index == 0);
        CHECK(t.positive_index == 0);
        CHECK(t.face_index == 0);  // +x face of the prism
    }
    SECTION("far point is rejected") {
        const CsgModel m = cube_model();
        CHECK_THROWS_AS(face_label_at(m, {5, 5, 5}), std::invalid_argument);
    }
}

TEST_CASE("max_label_count") {
    CHECK(max_label_count(6, 12, 0) == 72);
    CHECK(max_label_count(6, 12, 6) == 252);
    CHECK(max_label_count(6, 1, 0) == 6);
    CHECK_THROWS_AS(max_label_count(3, 12, 0), std::invalid_argument);
    CHECK_THROWS_AS(max_label_count(6, 12, 12), std::invalid_argument);
    CHECK_THROWS_AS(max_label_count(6, 12, -1), std::invalid_argument);
}

TEST_CASE("property: monotone smoothing in delta") {
    Rng rng(11);
    for (int trial = 0; trial < 1000; ++trial) {
        ConvexPrimitive p = random_primitive(rng, 1.0);
        const Vec3 x = rng.normal_vec3();
        double d1 = rng.uniform(1e-4, 0.2), d2 = rng.uniform(1e-4, 0.2);
        if (d1 > d2) std::swap(d1, d2);
        p.blend_delta = d1;
        const double phi1 = convex_phi(p, x);
        p.blend_delta = d2;
        const double phi2 = convex_phi(p, x);
        REQUIRE(phi2 >= phi1 - 1e-12);
    }
}

TEST_CASE("property: indicator range and set-difference consistency") {
    Rng rng(13);
    const CsgModel m = random_model(rng, 3, 2);
    for (int i = 0; i < 1000; ++i) {
        const Vec3 x = rng.normal_vec3();
        const double o = csg_indicator(m, x);
        REQUIRE(o >= 0.0);
        REQUIRE(o <= 1.0);
        REQUIRE(o <= union_indicator(m.positives, x, m.sharpness_sigma) + 1e-15);
    }
}

TEST_CASE("property: no negatives degenerates to the positive union") {
    Rng rng(17);
    const CsgModel m = random_model(rng, 4, 0);
    for (int i = 0; i < 500; ++i) {
        const Vec3 x = rng.normal_vec3();
        REQUIRE(csg_indicator(m, x) == union_indicator(m.positives, x, m.sharpness_sigma));
    }
}

TEST_CASE("property: sdf sign agrees with the indicator away from the surface") {
    Rng rng(19);
    const CsgModel m = random_model(rng, 3, 2, 0.01, 200.0);
    const double delta = 0.01;
    int checked = 0;
    for (int i = 0; i < 1000; ++i) {
        const Vec3 x = rng.normal_vec3() * 0.5;
        const double sdf = csg_sdf(m, x);
        const bool inside_by_indicator = csg_indicator(m, x) > 0.5;
        if (std::abs(sdf) < 3.0 * delta) continue;  // surface band is exempt
        ++checked;
        REQUIRE((sdf < 0.0) == inside_by_indicator);
    }
    REQUIRE(checked > 500);
}

TEST_CASE("property: rigid-transform equivariance of Phi") {
    Rng rng(23);
    for (int trial = 0; trial < 100; ++trial) {
        const ConvexPrimitive p = random_primitive(rng, rng.uniform(1e-3, 0.1));
        const Mat3 rot = rng.random_rotation();
        const Vec3 shift = rng.normal_vec3();
        ConvexPrimitive q = p;
        q.center = rot * p.center + shift;
        for (auto& n : q.normals) n = rot * n;
        const Vec3 x = rng.normal_vec3();
        const Vec3 tx = rot * x + shift;
        REQUIRE(convex_phi(p, x) == Catch::Approx(convex_phi(q, tx)).margin(1e-9));
    }
}

TEST_CASE("invariants of the parameterization") {
    SECTION("symmetric f=6 primitive has 16 effective DOF") {
        const ConvexPrimitive p = cube_primitive_symmetric({0, 0, 0}, 0.5, 0.02);
        CHECK(p.dof() == 16);
        CHECK(p.face_count() == 6);
        CHECK(p.stored_normal_count() == 3);
    }
    SECTION("validate rejects bad primitives") {
        ConvexPrimitive p = cube_primitive({0, 0, 0}, 0.5, 0.02);
        p.blend_delta = 0.0;
        CHECK_THROWS_AS(p.validate(), std::invalid_argument);
        p = cube_primitive({0, 0, 0}, 0.5, 0.02);
        p.offsets.pop_back();
        CHECK_THROWS_AS(p.validate(), std::invalid_argument);
        ConvexPrimitive tri = cube_primitive({0, 0, 0}, 0.5, 0.02);
        tri.normals.resize(3);
        tri.offsets.resize(3);
        CHECK_THROWS_AS(tri.validate(), std::invalid_argument);
    }
    SECTION("model invariants") {
        CsgModel m;
        CHECK_THROWS_AS(m.validate(), std::invalid_argument);  // no positives
        m = cube_model();
        m.scene_transform.scale = 0.0;
        CHECK_THROWS_AS(m.validate(), std::invalid_argument);
        m = cube_model();
        m.sharpness_sigma = -1.0;
        CHECK_THROWS_AS(m.validate(), std::invalid_argument);
    }
}
