#include "l2r/core.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "l2r/rng.hpp"

using namespace l2r;

namespace {

PointCloud make_cloud(std::initializer_list<std::array<float, 4>> rows) {
    PointCloud pc;
    for (const auto& r : rows) pc.append({r[0], r[1], r[2], r[3]});
    return pc;
}

}  // namespace

TEST(CropToRange, CloudInsideRangeIsUnchanged) {
    const PointCloud pc = make_cloud({{1, 2, 0, 0.5f}, {10, -3, 1, 0.1f}});
    const PointCloud out = crop_to_range(pc, Range3D::detector_default());
    EXPECT_EQ(out.data, pc.data);
}

TEST(CropToRange, PointBeyondXMaxIsRemoved) {
    // Detector range ends at x = 51.2 m.
    const PointCloud pc = make_cloud({{51.3f, 0, 0, 0}, {51.0f, 0, 0, 0}});
    const PointCloud out = crop_to_range(pc, Range3D::detector_default());
    ASSERT_EQ(out.size(), 1u);
    EXPECT_FLOAT_EQ(out.x(0), 51.0f);
}

TEST(CropToRange, BoundaryIsInclusive) {
    // 51.5 is exactly representable in float, so the boundary test is exact.
    const PointCloud pc = make_cloud({{51.5f, 0, 0, 0}, {-10.0f, 0, 0, 0}});
    const Range3D range{{-10.0, -1.0, -1.0}, {51.5, 1.0, 1.0}};
    const PointCloud out = crop_to_range(pc, range);
    EXPECT_EQ(out.size(), 2u);
}

TEST(CropToRange, MatchesBruteForceMembershipOnRandomPoints) {
    Rng rng(7);
    PointCloud pc;
    for (int i = 0; i < 1000; ++i) {
        pc.append({static_cast<float>(rng.uniform(-60, 60)), static_cast<float>(rng.uniform(-60, 60)),
                   static_cast<float>(rng.uniform(-60, 60)), static_cast<float>(rng.unit())});
    }
    const Range3D range = Range3D::detector_default();
    const PointCloud out = crop_to_range(pc, range);

    // Oracle: independent per-point membership filter.
    PointCloud expected = PointCloud::empty_like(pc);
    for (size_t i = 0; i < pc.size(); ++i) {
        const float x = pc.x(i), y = pc.y(i), z = pc.z(i);
        const bool in = x >= 0.0f && x <= 51.2f && y >= -25.6f && y <= 25.6f && z >= -3.0f &&
                        z <= 2.0f;
        if (in) expected.append(pc.row(i));
    }
    EXPECT_EQ(out.data, expected.data);
}

TEST(CropToRange, Idempotent) {
    Rng rng(11);
    PointCloud pc;
    for (int i = 0; i < 500; ++i)
        pc.append({static_cast<float>(rng.uniform(-5, 55)), static_cast<float>(rng.uniform(-30, 30)),
                   static_cast<float>(rng.uniform(-4, 3)), 0.0f});
    const Range3D range = Range3D::detector_default();
    const PointCloud once = crop_to_range(pc, range);
    const PointCloud twice = crop_to_range(once, range);
    EXPECT_EQ(once.data, twice.data);
}

TEST(BoxCorners, UnitCubeAxisAligned) {
    Box3D box;
    box.dims = {1, 1, 1};
    const Corners3 c = box_corners(box);
    std::set<std::array<double, 3>> got(c.begin(), c.end());
    for (double sx : {-0.5, 0.5})
        for (double sy : {-0.5, 0.5})
            for (double sz : {-0.5, 0.5}) EXPECT_TRUE(got.count({sx, sy, sz}));
    // Bottom face first, counter-clockwise seen from +z.
    for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(c[static_cast<size_t>(i)][2], -0.5);
    const double area2 = (c[1][0] - c[0][0]) * (c[2][1] - c[1][1]) -
                         (c[1][1] - c[0][1]) * (c[2][0] - c[1][0]);
    EXPECT_GT(area2, 0.0);
}

TEST(BoxCorners, QuarterTurnSwapsExtents) {
    Box3D box;
    box.dims = {2, 1, 1};
    box.yaw = kPi / 2.0;
    const Corners3 c = box_corners(box);
    double min_x = 1e9, max_x = -1e9, min_y = 1e9, max_y = -1e9;
    for (const auto& p : c) {
        min_x = std::min(min_x, p[0]);
        max_x = std::max(max_x, p[0]);
        min_y = std::min(min_y, p[1]);
        max_y = std::max(max_y, p[1]);
    }
    EXPECT_NEAR(max_x - min_x, 1.0, 1e-12);
    EXPECT_NEAR(max_y - min_y, 2.0, 1e-12);
}

TEST(BoxCorners, MatchesRotationMatrixOracle) {
    Box3D box;
    box.center = {3.0, -2.0, 0.7};
    box.dims = {4.2, 1.9, 1.6};
    box.yaw = 0.3;
    const Corners3 got = box_corners(box);

    const double c = std::cos(0.3), s = std::sin(0.3);
    const double lx[4] = {-2.1, 2.1, 2.1, -2.1};
    const double ly[4] = {-0.95, -0.95, 0.95, 0.95};
    for (int i = 0; i < 8; ++i) {
        const int j = i % 4;
        const double ex = c * lx[j] - s * ly[j] + 3.0;
        const double ey = s * lx[j] + c * ly[j] - 2.0;
        const double ez = 0.7 + (i < 4 ? -0.8 : 0.8);
        EXPECT_NEAR(got[static_cast<size_t>(i)][0], ex, 1e-12);
        EXPECT_NEAR(got[static_cast<size_t>(i)][1], ey, 1e-12);
        EXPECT_NEAR(got[static_cast<size_t>(i)][2], ez, 1e-12);
    }
}

TEST(BoxCorners, RoundTripsThroughReconstruction) {
    Rng rng(21);
    for (int trial = 0; trial < 50; ++trial) {
        Box3D box;
        box.center = {rng.uniform(-20, 40), rng.uniform(-20, 20), rng.uniform(-2, 1)};
        box.dims = {rng.uniform(0.5, 5), rng.uniform(0.4, 2.5), rng.uniform(0.8, 2.2)};
        box.yaw = normalize_yaw(rng.uniform(-kPi, kPi));
        const Corners3 c = box_corners(box);

        std::array<double, 3> center{0, 0, 0};
        for (const auto& p : c)
            for (int a = 0; a < 3; ++a) center[static_cast<size_t>(a)] += p[static_cast<size_t>(a)] / 8.0;
        const double l = std::hypot(c[1][0] - c[0][0], c[1][1] - c[0][1]);
        const double w = std::hypot(c[3][0] - c[0][0], c[3][1] - c[0][1]);
        const double h = c[4][2] - c[0][2];
        const double yaw = normalize_yaw(std::atan2(c[1][1] - c[0][1], c[1][0] - c[0][0]));
        for (int a = 0; a < 3; ++a)
            EXPECT_NEAR(center[static_cast<size_t>(a)], box.center[static_cast<size_t>(a)], 1e-9);
        EXPECT_NEAR(l, box.dims[0], 1e-9);
        EXPECT_NEAR(w, box.dims[1], 1e-9);
        EXPECT_NEAR(h, box.dims[2], 1e-9);
        EXPECT_NEAR(yaw, box.yaw, 1e-9);
    }
}

TEST(NormalizeYaw, MapsIntoHalfOpenInterval) {
    EXPECT_DOUBLE_EQ(normalize_yaw(0.0), 0.0);
    EXPECT_DOUBLE_EQ(normalize_yaw(kPi), kPi);
    EXPECT_NEAR(normalize_yaw(-kPi), kPi, 1e-12);
    EXPECT_NEAR(normalize_yaw(3 * kPi), kPi, 1e-9);
    EXPECT_NEAR(normalize_yaw(-0.5), -0.5, 1e-12);
    EXPECT_NEAR(normalize_yaw(2 * kPi + 0.25), 0.25, 1e-9);
}

TEST(Validate, RejectsBrokenClouds) {
    PointCloud pc;
    pc.schema = {"x", "y"};
    EXPECT_THROW(validate(pc), std::invalid_argument);

    pc = PointCloud{};
    pc.append({0, 0, 0, std::numeric_limits<float>::quiet_NaN()});
    EXPECT_THROW(validate(pc), std::invalid_argument);

    pc = PointCloud{};
    pc.source = Source::Mixed;
    EXPECT_THROW(validate(pc), std::invalid_argument);  // no indicator channel

    pc = PointCloud{};
    pc.schema = {"x", "y", "z", kRadarIndicatorChannel};
    pc.source = Source::Mixed;
    pc.append({0, 0, 0, 0.5f});
    EXPECT_THROW(validate(pc), std::invalid_argument);  // indicator must be 0/1
}

TEST(Validate, AcceptsWellFormedClouds) {
    PointCloud pc;
    pc.append({1, 2, 3, 0.5f});
    EXPECT_NO_THROW(validate(pc));

    PointCloud mixed;
    mixed.schema = {"x", "y", "z", kRadarIndicatorChannel};
    mixed.source = Source::Mixed;
    mixed.append({0, 0, 0, 1.0f});
    mixed.append({1, 1, 1, 0.0f});
    EXPECT_NO_THROW(validate(mixed));
}

TEST(Range3D, RejectsInvertedBounds) {
    Range3D r{{0, 0, 0}, {1, 1, 0}};
    EXPECT_THROW(validate(r), std::invalid_argument);
}
