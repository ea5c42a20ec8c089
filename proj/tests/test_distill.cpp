#include "l2r/distill.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "l2r/core.hpp"
#include "l2r/rng.hpp"

using namespace l2r;

namespace {

DenseMap map_of(int h, int w, int c, const std::vector<double>& values) {
    DenseMap m = DenseMap::zeros(h, w, c);
    m.data = values;
    return m;
}

DenseMap random_map(int h, int w, int c, uint64_t seed, double lo = 0.0, double hi = 1.0) {
    DenseMap m = DenseMap::zeros(h, w, c);
    Rng rng(seed);
    for (double& v : m.data) v = rng.uniform(lo, hi);
    return m;
}

}  // namespace

TEST(BilinearResize, SameSizeIsIdentity) {
    const DenseMap m = random_map(5, 7, 3, 1);
    const DenseMap out = bilinear_resize(m, 5, 7);
    EXPECT_EQ(out.data, m.data);
}

TEST(BilinearResize, ConstantMapStaysConstant) {
    DenseMap m = DenseMap::zeros(3, 4, 2);
    for (double& v : m.data) v = 0.37;
    const DenseMap out = bilinear_resize(m, 9, 5);
    for (double v : out.data) EXPECT_DOUBLE_EQ(v, 0.37);
}

TEST(BilinearResize, TwoByTwoToThreeByThreeCenterIsAverage) {
    const DenseMap m = map_of(2, 2, 1, {0, 1, 2, 3});
    const DenseMap out = bilinear_resize(m, 3, 3);
    EXPECT_DOUBLE_EQ(out.at(1, 1, 0), 1.5);
    EXPECT_DOUBLE_EQ(out.at(0, 0, 0), 0.0);
    EXPECT_DOUBLE_EQ(out.at(0, 2, 0), 1.0);
    EXPECT_DOUBLE_EQ(out.at(2, 0, 0), 2.0);
    EXPECT_DOUBLE_EQ(out.at(2, 2, 0), 3.0);
    EXPECT_DOUBLE_EQ(out.at(0, 1, 0), 0.5);
}

TEST(BilinearResize, ExactOnAffineFields) {
    DenseMap m = DenseMap::zeros(4, 6, 1);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 6; ++c) m.at(r, c, 0) = 2.0 + 0.5 * r - 0.25 * c;
    const DenseMap out = bilinear_resize(m, 7, 11);
    const double sy = 3.0 / 6.0, sx = 5.0 / 10.0;
    for (int r = 0; r < 7; ++r)
        for (int c = 0; c < 11; ++c)
            EXPECT_NEAR(out.at(r, c, 0), 2.0 + 0.5 * (r * sy) - 0.25 * (c * sx), 1e-12);
}

TEST(BilinearResize, RejectsBadTargets) {
    const DenseMap m = random_map(2, 2, 1, 2);
    EXPECT_THROW(bilinear_resize(m, 0, 3), std::invalid_argument);
}

TEST(LogitKd, EqualInputsGiveZero) {
    const DenseMap m = random_map(4, 4, 2, 3);
    RegressionSet reg;
    reg.dim = 7;
    Rng rng(4);
    for (int i = 0; i < 21; ++i) reg.student.push_back(rng.uniform(-1, 1));
    reg.teacher = reg.student;
    const LogitKdResult out = logit_kd_loss(m, m, reg);
    EXPECT_DOUBLE_EQ(out.cls, 0.0);
    EXPECT_DOUBLE_EQ(out.reg, 0.0);
}

TEST(LogitKd, ScalarDifferenceIsItsAbsoluteValue) {
    const DenseMap student = map_of(1, 1, 1, {0.7});
    const DenseMap teacher = map_of(1, 1, 1, {0.4});
    const LogitKdResult out = logit_kd_loss(student, teacher, RegressionSet{});
    EXPECT_NEAR(out.cls, 0.3, 1e-15);
}

TEST(LogitKd, MatchesStraightLineFormulaOnRandomMaps) {
    const DenseMap student = random_map(4, 4, 2, 5);
    const DenseMap teacher = random_map(4, 4, 2, 6);
    RegressionSet reg;
    reg.dim = 3;
    Rng rng(7);
    for (int i = 0; i < 12; ++i) {
        reg.student.push_back(rng.uniform(-2, 2));
        reg.teacher.push_back(rng.uniform(-2, 2));
    }
    const LogitKdResult out = logit_kd_loss(student, teacher, reg);

    double cls = 0.0;
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) {
            double sq = 0.0;
            for (int ch = 0; ch < 2; ++ch) {
                const double d = student.at(r, c, ch) - teacher.at(r, c, ch);
                sq += d * d;
            }
            cls += std::sqrt(sq);
        }
    cls /= 16.0;
    double reg_expected = 0.0;
    for (size_t i = 0; i < reg.student.size(); ++i) {
        const double d = std::abs(reg.student[i] - reg.teacher[i]);
        reg_expected += d < 1.0 ? 0.5 * d * d : d - 0.5;
    }
    reg_expected /= static_cast<double>(reg.student.size());
    EXPECT_NEAR(out.cls, cls, 1e-9);
    EXPECT_NEAR(out.reg, reg_expected, 1e-9);
}

TEST(LogitKd, ResizesStudentToTeacherShape) {
    DenseMap student = DenseMap::zeros(2, 2, 1);
    for (double& v : student.data) v = 0.5;
    const DenseMap teacher = DenseMap::zeros(4, 4, 1);
    const LogitKdResult out = logit_kd_loss(student, teacher, RegressionSet{});
    EXPECT_NEAR(out.cls, 0.5, 1e-12);  // constant resizes exactly
}

TEST(LogitKd, RejectsBadInputs) {
    const DenseMap a = random_map(2, 2, 1, 8);
    const DenseMap b = random_map(2, 2, 2, 9);
    EXPECT_THROW(logit_kd_loss(a, b, RegressionSet{}), std::invalid_argument);

    RegressionSet mismatched;
    mismatched.dim = 2;
    mismatched.student = {1, 2};
    mismatched.teacher = {1, 2, 3, 4};
    EXPECT_THROW(logit_kd_loss(a, a, mismatched), std::invalid_argument);

    DenseMap out_of_range = a;
    out_of_range.data[0] = 1.5;
    EXPECT_THROW(logit_kd_loss(out_of_range, a, RegressionSet{}), std::invalid_argument);
}

namespace {

Box3D bev_box(double x, double y, double l, double w, double yaw = 0.0) {
    Box3D b;
    b.center = {x, y, 0.0};
    b.dims = {l, w, 1.0};
    b.yaw = yaw;
    return b;
}

}  // namespace

TEST(RoiAlign, SingleCellBoxReadsThePixelValue) {
    DenseMap m = random_map(4, 4, 1, 10);
    m.geom = MapGeometry{0.0, 0.0, 1.0, 1.0};
    // Box covering exactly the pixel cell [2,3) x [1,2): its center sample
    // hits that pixel's center.
    const RoiFeatures out = roi_align(m, {bev_box(2.5, 1.5, 1.0, 1.0)}, 1);
    EXPECT_DOUBLE_EQ(out.cell(0, 0, 0)[0], m.at(1, 2, 0));
}

TEST(RoiAlign, ConstantMapGivesConstantFeatures) {
    DenseMap m = DenseMap::zeros(8, 8, 2);
    for (double& v : m.data) v = 1.25;
    m.geom = MapGeometry{0.0, 0.0, 0.5, 0.5};
    const RoiFeatures out = roi_align(m, {bev_box(2.0, 2.0, 1.5, 1.0, 0.4)}, 7);
    for (double v : out.data) EXPECT_DOUBLE_EQ(v, 1.25);
}

TEST(RoiAlign, BoxOutsideTheMapIsZeroAndFlagged) {
    DenseMap m = random_map(4, 4, 1, 11);
    m.geom = MapGeometry{0.0, 0.0, 1.0, 1.0};
    const RoiFeatures out = roi_align(m, {bev_box(100.0, 100.0, 2.0, 2.0)}, 3);
    EXPECT_EQ(out.outside[0], 1);
    for (double v : out.data) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(RoiAlign, CenterSamplesTrackSupersampledCellAverages) {
    // Smooth-ish random map; box spans ~2x2 pixels so each of the 7x7 roi
    // cells is small against the map resolution.
    DenseMap m = random_map(16, 16, 1, 12);
    m.geom = MapGeometry{0.0, 0.0, 1.0, 1.0};
    const Box3D box = bev_box(8.2, 7.6, 2.3, 1.9, 0.35);
    const int n = 7;
    const RoiFeatures out = roi_align(m, {box}, n);

    const Corners3 corners = box_corners(box);
    double lo_x = corners[0][0], hi_x = corners[0][0], lo_y = corners[0][1], hi_y = corners[0][1];
    for (int i = 1; i < 4; ++i) {
        lo_x = std::min(lo_x, corners[static_cast<size_t>(i)][0]);
        hi_x = std::max(hi_x, corners[static_cast<size_t>(i)][0]);
        lo_y = std::min(lo_y, corners[static_cast<size_t>(i)][1]);
        hi_y = std::max(hi_y, corners[static_cast<size_t>(i)][1]);
    }
    auto sample = [&](double x, double y) {
        double px = std::clamp(x - 0.5, 0.0, 15.0);
        double py = std::clamp(y - 0.5, 0.0, 15.0);
        const int x0 = std::min(static_cast<int>(px), 15), x1 = std::min(x0 + 1, 15);
        const int y0 = std::min(static_cast<int>(py), 15), y1 = std::min(y0 + 1, 15);
        const double wx = px - x0, wy = py - y0;
        return (m.at(y0, x0, 0) * (1 - wx) + m.at(y0, x1, 0) * wx) * (1 - wy) +
               (m.at(y1, x0, 0) * (1 - wx) + m.at(y1, x1, 0) * wx) * wy;
    };
    for (int gi = 0; gi < n; ++gi) {
        for (int gj = 0; gj < n; ++gj) {
            // 100x-supersampled average over the roi cell.
            double acc = 0.0;
            for (int sy = 0; sy < 10; ++sy)
                for (int sx = 0; sx < 10; ++sx) {
                    const double x = lo_x + (hi_x - lo_x) * (gj + (sx + 0.5) / 10.0) / n;
                    const double y = lo_y + (hi_y - lo_y) * (gi + (sy + 0.5) / 10.0) / n;
                    acc += sample(x, y);
                }
            acc /= 100.0;
            EXPECT_NEAR(out.cell(0, gi, gj)[0], acc, 5e-2);
        }
    }
}

TEST(RoiAlign, RequiresGeometryAndBoxes) {
    DenseMap m = random_map(4, 4, 1, 13);
    EXPECT_THROW(roi_align(m, {bev_box(1, 1, 1, 1)}, 3), std::invalid_argument);
    m.geom = MapGeometry{};
    EXPECT_THROW(roi_align(m, {}, 3), std::invalid_argument);
}

TEST(ChannelAlign, IdentityWeightsAreRelu) {
    DenseMap m = random_map(3, 3, 2, 14, -1.0, 1.0);
    const DenseMap out = channel_align(m, ChannelAlignParams::identity(2));
    for (size_t i = 0; i < m.data.size(); ++i)
        EXPECT_DOUBLE_EQ(out.data[i], std::max(0.0, m.data[i]));
}

TEST(ChannelAlign, AllNegativeInputMapsToZero) {
    DenseMap m = random_map(3, 3, 2, 15, -2.0, -0.5);
    const DenseMap out = channel_align(m, ChannelAlignParams::identity(2));
    for (double v : out.data) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(ChannelAlign, MatchesPerPixelMatrixMultiplyOracle) {
    const DenseMap m = random_map(3, 3, 2, 16, -1.0, 1.0);
    ChannelAlignParams p;
    p.in_channels = 2;
    p.out_channels = 4;
    Rng rng(17);
    for (int i = 0; i < 8; ++i) p.weight.push_back(rng.uniform(-1, 1));
    for (int i = 0; i < 4; ++i) {
        p.scale.push_back(rng.uniform(0.5, 2));
        p.shift.push_back(rng.uniform(-0.5, 0.5));
    }
    const DenseMap out = channel_align(m, p);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
            for (int oc = 0; oc < 4; ++oc) {
                double acc = 0.0;
                for (int ic = 0; ic < 2; ++ic)
                    acc += m.at(r, c, ic) * p.weight[static_cast<size_t>(ic * 4 + oc)];
                const double expect = std::max(
                    0.0, p.scale[static_cast<size_t>(oc)] * acc + p.shift[static_cast<size_t>(oc)]);
                EXPECT_NEAR(out.at(r, c, oc), expect, 1e-12);
            }
}

TEST(ChannelAlign, RejectsShapeMismatches) {
    const DenseMap m = random_map(2, 2, 3, 18);
    EXPECT_THROW(channel_align(m, ChannelAlignParams::identity(2)), std::invalid_argument);
}

TEST(FeatureKd, StudentMatchingTeacherAfterAlignmentIsZero) {
    DenseMap teacher = random_map(6, 6, 2, 19);
    teacher.geom = MapGeometry{0.0, 0.0, 1.0, 1.0};
    DenseMap student = teacher;
    student.geom.reset();
    // Identity alignment still applies ReLU; keep features non-negative so
    // the aligned student is bit-equal to the teacher.
    const ChannelAlignParams align = ChannelAlignParams::identity(2);
    const std::vector<Box3D> gt{bev_box(3.0, 3.0, 2.0, 1.5, 0.2)};
    EXPECT_DOUBLE_EQ(feature_kd_loss(student, teacher, gt, &align, 7), 0.0);
}

TEST(FeatureKd, HandTracedSingleBoxSingleCell) {
    // 1x1 maps with one channel: roi sampling reads the single pixel on both
    // sides, so the loss is |s - t|.
    DenseMap teacher = map_of(1, 1, 1, {0.2});
    teacher.geom = MapGeometry{0.0, 0.0, 1.0, 1.0};
    const DenseMap student = map_of(1, 1, 1, {0.9});
    const std::vector<Box3D> gt{bev_box(0.5, 0.5, 1.0, 1.0)};
    EXPECT_NEAR(feature_kd_loss(student, teacher, gt, nullptr, 1), 0.7, 1e-12);
}

TEST(FeatureKd, EmptyGtIsZero) {
    DenseMap teacher = random_map(4, 4, 2, 20);
    teacher.geom = MapGeometry{};
    const DenseMap student = random_map(4, 4, 2, 21);
    EXPECT_DOUBLE_EQ(feature_kd_loss(student, teacher, {}, nullptr, 7), 0.0);
}

TEST(LabelKdTargets, ThresholdAboveAllScoresKeepsOnlyGt) {
    std::vector<Box3D> gt(2);
    std::vector<Box3D> preds(3);
    for (size_t i = 0; i < preds.size(); ++i) preds[i].score = 0.3 + 0.1 * static_cast<double>(i);
    EXPECT_EQ(label_kd_targets(gt, preds, 0.9).size(), 2u);
}

TEST(LabelKdTargets, ZeroThresholdKeepsEverything) {
    std::vector<Box3D> gt(2);
    std::vector<Box3D> preds(3);
    for (auto& p : preds) p.score = 0.01;
    const auto out = label_kd_targets(gt, preds, 0.0);
    EXPECT_EQ(out.size(), 5u);
    for (const Box3D& b : out) EXPECT_FALSE(b.score.has_value());
}

TEST(LabelKdTargets, FiltersByScoreThreshold) {
    std::vector<Box3D> gt(2);
    std::vector<Box3D> preds(3);
    preds[0].score = 0.9;
    preds[1].score = 0.4;
    preds[2].score = 0.2;
    EXPECT_EQ(label_kd_targets(gt, preds, 0.5).size(), 3u);
}

TEST(LabelKdTargets, SizeIsMonotoneInTau) {
    Rng rng(22);
    for (int t = 0; t < 50; ++t) {
        std::vector<Box3D> gt(rng.bounded(4));
        std::vector<Box3D> preds(rng.bounded(8));
        double max_score = 0.0;
        for (auto& p : preds) {
            p.score = rng.unit();
            max_score = std::max(max_score, *p.score);
        }
        size_t prev = gt.size() + preds.size();
        for (double tau : {0.0, 0.2, 0.4, 0.6, 0.8, 1.0}) {
            const size_t n = label_kd_targets(gt, preds, tau).size();
            EXPECT_LE(n, prev);
            prev = n;
        }
        EXPECT_EQ(label_kd_targets(gt, preds, 0.0).size(), gt.size() + preds.size());
        if (!preds.empty()) {
            EXPECT_EQ(label_kd_targets(gt, preds, std::nextafter(max_score, 2.0)).size(),
                      gt.size());
        }
    }
}

TEST(LabelKdTargets, RejectsUnscoredPredictionsAndBadTau) {
    std::vector<Box3D> gt(1);
    std::vector<Box3D> preds(1);  // no score
    EXPECT_THROW(label_kd_targets(gt, preds, 0.5), std::invalid_argument);
    preds[0].score = 0.5;
    EXPECT_THROW(label_kd_targets(gt, preds, 1.5), std::invalid_argument);
}

namespace {

AnchorGridParams simple_anchor_grid() {
    AnchorGridParams p;
    p.geom = MapGeometry{0.0, 0.0, 4.0, 4.0};
    p.grid_h = 2;
    p.grid_w = 2;
    Box3D tmpl;
    tmpl.dims = {3.8, 1.8, 1.5};
    tmpl.center = {0, 0, -1.0};
    tmpl.yaw = 0.0;
    tmpl.label = 0;
    p.templates = {tmpl};
    return p;
}

}  // namespace

TEST(DetectionLoss, PerfectRegressionOnMatchedAnchorsIsZero) {
    const AnchorGridParams p = simple_anchor_grid();
    // One target sitting exactly on the anchor of cell (0, 0).
    Box3D target = anchor_at_cell(p, 0, 0, 0);
    target.dims = {4.0, 2.0, 1.6};
    const DenseMap logits = DenseMap::zeros(2, 2, 1);
    RegressionPredictions reg;
    reg.values.assign(4 * 7, 0.0);
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 2; ++c) {
            const Box3D anchor = anchor_at_cell(p, r, c, 0);
            if (bev_iou(anchor, target) >= p.positive_iou) {
                const auto enc = encode_box_to_anchor(target, anchor);
                for (int k = 0; k < 7; ++k)
                    reg.values[static_cast<size_t>((r * 2 + c) * 7 + k)] = enc[static_cast<size_t>(k)];
            }
        }
    const DetectionLossResult out = detection_loss(logits, reg, {target}, p);
    EXPECT_GE(out.positives, 1u);
    EXPECT_DOUBLE_EQ(out.reg, 0.0);
}

TEST(DetectionLoss, SingleAnchorHandComputedFocal) {
    AnchorGridParams p = simple_anchor_grid();
    p.grid_h = p.grid_w = 1;
    p.geom = MapGeometry{0.0, 0.0, 2.0, 2.0};
    Box3D target = anchor_at_cell(p, 0, 0, 0);  // perfect overlap -> positive
    DenseMap logits = DenseMap::zeros(1, 1, 1);
    logits.at(0, 0, 0) = 0.8;
    RegressionPredictions reg;
    reg.values.assign(7, 0.0);
    const DetectionLossResult out = detection_loss(logits, reg, {target}, p);
    // Hand-computed scalar focal term for y=1, logit 0.8, alpha .25, gamma 2.
    const double prob = 1.0 / (1.0 + std::exp(-0.8));
    const double expect = -0.25 * std::pow(1.0 - prob, 2.0) * std::log(prob);
    EXPECT_NEAR(out.cls, expect, 1e-12);
    EXPECT_EQ(out.positives, 1u);
}

TEST(DetectionLoss, EmptyTargetsGivePureNegativeFocal) {
    const AnchorGridParams p = simple_anchor_grid();
    DenseMap logits = random_map(2, 2, 1, 23, -2.0, 2.0);
    RegressionPredictions reg;
    reg.values.assign(4 * 7, 0.0);
    const DetectionLossResult out = detection_loss(logits, reg, {}, p);
    EXPECT_DOUBLE_EQ(out.reg, 0.0);
    double expect = 0.0;
    for (double logit : logits.data) expect += focal_loss(logit, 0.0, 0.25, 2.0);
    EXPECT_NEAR(out.cls, expect / 4.0, 1e-12);
}

TEST(DetectionLoss, RejectsEmptyAnchorGrid) {
    AnchorGridParams p = simple_anchor_grid();
    p.templates.clear();
    const DenseMap logits = DenseMap::zeros(2, 2, 1);
    EXPECT_THROW(detection_loss(logits, RegressionPredictions{}, {}, p), std::invalid_argument);
}

TEST(JointLoss, AllZeroComponentsGiveZero) {
    const LossReport r = joint_loss(LossComponents{}, LossWeights{});
    EXPECT_DOUBLE_EQ(r.joint, 0.0);
}

TEST(JointLoss, UnitComponentsWithPublishedWeights) {
    LossComponents c;
    c.reg = c.cls = c.feat = c.logit_reg = c.logit_cls = 1.0;
    const LossReport r = joint_loss(c, LossWeights{});
    // 1.0 + 1.0 + 0.1 + 0.3 + 0.001
    EXPECT_NEAR(r.joint, 2.401, 1e-12);
}

TEST(JointLoss, LinearInEachComponent) {
    const LossWeights w{};
    Rng rng(24);
    for (int t = 0; t < 20; ++t) {
        LossComponents c;
        c.reg = rng.unit();
        c.cls = rng.unit();
        c.feat = rng.unit();
        c.logit_reg = rng.unit();
        c.logit_cls = rng.unit();
        const double base = joint_loss(c, w).joint;
        LossComponents bumped = c;
        bumped.feat += 1.0;
        EXPECT_NEAR(joint_loss(bumped, w).joint - base, w.feat, 1e-12);
        bumped = c;
        bumped.logit_cls += 2.0;
        EXPECT_NEAR(joint_loss(bumped, w).joint - base, 2.0 * w.logit_cls, 1e-12);
    }
}

TEST(JointLoss, RejectsNegativeWeightsAndNonFiniteComponents) {
    LossWeights w;
    w.feat = -0.1;
    EXPECT_THROW(joint_loss(LossComponents{}, w), std::invalid_argument);
    LossComponents c;
    c.reg = std::numeric_limits<double>::infinity();
    EXPECT_THROW(joint_loss(c, LossWeights{}), std::invalid_argument);
}

TEST(Gradients, SmoothL1MatchesCentralDifferences) {
    const double beta = 1.0, eps = 1e-6;
    for (double x : {-3.0, -1.7, -0.4, 0.3, 1.2, 2.5, 8.0}) {
        const double fd = (smooth_l1(x + eps, beta) - smooth_l1(x - eps, beta)) / (2 * eps);
        const double an = smooth_l1_grad(x, beta);
        EXPECT_NEAR(an, fd, 1e-4 * std::max(1.0, std::abs(fd)));
    }
}

TEST(Gradients, FocalMatchesCentralDifferencesAtRandomLogits) {
    Rng rng(25);
    const double eps = 1e-6;
    for (int t = 0; t < 100; ++t) {
        const double logit = rng.uniform(-4, 4);
        const double target = rng.unit() < 0.5 ? 0.0 : 1.0;
        const double fd =
            (focal_loss(logit + eps, target) - focal_loss(logit - eps, target)) / (2 * eps);
        const double an = focal_loss_grad(logit, target);
        EXPECT_NEAR(an, fd, 1e-4 * std::max(1e-6, std::abs(fd)))
            << "logit " << logit << " target " << target;
    }
}
