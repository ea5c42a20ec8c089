#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "l2r/core.hpp"
#include "l2r/eval.hpp"

namespace l2r {

// BEV placement of a dense map: pixel (row, col) center sits at
// (origin_x + (col+0.5)*cell_x, origin_y + (row+0.5)*cell_y).
struct MapGeometry {
    double origin_x = 0.0, origin_y = 0.0;
    double cell_x = 1.0, cell_y = 1.0;
};

// Row-major H x W x C grid of finite reals (class maps, feature maps).
struct DenseMap {
    int height = 0, width = 0, channels = 0;
    std::vector<double> data;
    std::optional<MapGeometry> geom;

    static DenseMap zeros(int h, int w, int c) {
        DenseMap m;
        m.height = h;
        m.width = w;
        m.channels = c;
        m.data.assign(static_cast<size_t>(h) * static_cast<size_t>(w) * static_cast<size_t>(c),
                      0.0);
        return m;
    }
    double at(int r, int c, int ch) const {
        return data[(static_cast<size_t>(r) * static_cast<size_t>(width) +
                     static_cast<size_t>(c)) *
                        static_cast<size_t>(channels) +
                    static_cast<size_t>(ch)];
    }
    double& at(int r, int c, int ch) {
        return data[(static_cast<size_t>(r) * static_cast<size_t>(width) +
                     static_cast<size_t>(c)) *
                        static_cast<size_t>(channels) +
                    static_cast<size_t>(ch)];
    }
};

inline void validate(const DenseMap& m) {
    if (m.height < 1 || m.width < 1 || m.channels < 1)
        throw std::invalid_argument("dense map dims must be >= 1");
    if (m.data.size() != static_cast<size_t>(m.height) * static_cast<size_t>(m.width) *
                             static_cast<size_t>(m.channels))
        throw std::invalid_argument("dense map data length mismatch");
    for (double v : m.data)
        if (!std::isfinite(v)) throw std::invalid_argument("dense map contains non-finite values");
}

// Paired student/teacher box-regression rows, one per matched location.
struct RegressionSet {
    int dim = 0;
    std::vector<double> student;
    std::vector<double> teacher;
    size_t rows() const { return dim > 0 ? student.size() / static_cast<size_t>(dim) : 0; }
};

enum class Reduction { Mean, Sum };

// Align-corners bilinear interpolation per channel. Exact identity when the
// target equals the source size, exact on fields affine in (row, col).
inline DenseMap bilinear_resize(const DenseMap& in, int out_h, int out_w) {
    validate(in);
    if (out_h < 1 || out_w < 1) throw std::invalid_argument("resize target dims must be >= 1");
    DenseMap out = DenseMap::zeros(out_h, out_w, in.channels);
    const double sy = out_h > 1 ? static_cast<double>(in.height - 1) / (out_h - 1) : 0.0;
    const double sx = out_w > 1 ? static_cast<double>(in.width - 1) / (out_w - 1) : 0.0;
    for (int r = 0; r < out_h; ++r) {
        const double fy = r * sy;
        const int y0 = std::min(static_cast<int>(fy), in.height - 1);
        const int y1 = std::min(y0 + 1, in.height - 1);
        const double wy = fy - y0;
        for (int c = 0; c < out_w; ++c) {
            const double fx = c * sx;
            const int x0 = std::min(static_cast<int>(fx), in.width - 1);
            const int x1 = std::min(x0 + 1, in.width - 1);
            const double wx = fx - x0;
            for (int ch = 0; ch < in.channels; ++ch) {
                const double top = in.at(y0, x0, ch) * (1.0 - wx) + in.at(y0, x1, ch) * wx;
                const double bot = in.at(y1, x0, ch) * (1.0 - wx) + in.at(y1, x1, ch) * wx;
                out.at(r, c, ch) = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    if (in.geom) {
        MapGeometry g = *in.geom;
        g.cell_x = g.cell_x * in.width / out_w;
        g.cell_y = g.cell_y * in.height / out_h;
        out.geom = g;
    }
    return out;
}

inline double smooth_l1(double diff, double beta = 1.0) {
    const double a = std::abs(diff);
    return a < beta ? 0.5 * diff * diff / beta : a - 0.5 * beta;
}

inline double smooth_l1_grad(double diff, double beta = 1.0) {
    const double a = std::abs(diff);
    return a < beta ? diff / beta : (diff > 0.0 ? 1.0 : -1.0);
}

namespace detail {

inline double softplus(double x) { return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0); }

}  // namespace detail

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Focal loss on a raw logit with binary target, numerically stable.
inline double focal_loss(double logit, double target, double alpha = 0.25, double gamma = 2.0) {
    const double p = sigmoid(logit);
    if (target > 0.5) {
        const double log_p = -detail::softplus(-logit);
        return -alpha * std::pow(1.0 - p, gamma) * log_p;
    }
    const double log_q = -detail::softplus(logit);
    return -(1.0 - alpha) * std::pow(p, gamma) * log_q;
}

inline double focal_loss_grad(double logit, double target, double alpha = 0.25,
                              double gamma = 2.0) {
    const double p = sigmoid(logit);
    const double q = 1.0 - p;
    if (target > 0.5) {
        const double log_p = -detail::softplus(-logit);
        return alpha * (gamma * p * std::pow(q, gamma) * log_p - std::pow(q, gamma + 1.0));
    }
    const double log_q = -detail::softplus(logit);
    return (1.0 - alpha) * (std::pow(p, gamma + 1.0) - gamma * std::pow(p, gamma) * q * log_q);
}

struct SmoothL1Params {
    double beta = 1.0;
    Reduction reduction = Reduction::Mean;
};

struct LogitKdResult {
    double cls = 0.0;
    double reg = 0.0;
};

// Logit distillation: the classification part is the per-location L2 norm
// across channels of (resized student - teacher), mean (or sum) over
// locations; the regression part is smooth-L1 over the paired rows. Class
// maps are post-sigmoid, entries in [0, 1].
inline LogitKdResult logit_kd_loss(const DenseMap& student_cls, const DenseMap& teacher_cls,
                                   const RegressionSet& reg, const SmoothL1Params& params = {}) {
    validate(student_cls);
    validate(teacher_cls);
    if (student_cls.channels != teacher_cls.channels)
        throw std::invalid_argument("class maps must have the same channel count");
    for (const DenseMap* m : {&student_cls, &teacher_cls})
        for (double v : m->data)
            if (v < 0.0 || v > 1.0)
                throw std::invalid_argument("class map entries must be in [0, 1]");
    if (reg.student.size() != reg.teacher.size())
        throw std::invalid_argument("regression sets must have equal shape");
    if (reg.dim > 0 && reg.student.size() % static_cast<size_t>(reg.dim) != 0)
        throw std::invalid_argument("regression data length is not a multiple of its dim");

    const DenseMap resized = bilinear_resize(student_cls, teacher_cls.height, teacher_cls.width);
    LogitKdResult out;
    const size_t locations =
        static_cast<size_t>(teacher_cls.height) * static_cast<size_t>(teacher_cls.width);
    for (int r = 0; r < teacher_cls.height; ++r) {
        for (int c = 0; c < teacher_cls.width; ++c) {
            double sq = 0.0;
            for (int ch = 0; ch < teacher_cls.channels; ++ch) {
                const double d = resized.at(r, c, ch) - teacher_cls.at(r, c, ch);
                sq += d * d;
            }
            out.cls += std::sqrt(sq);
        }
    }
    if (params.reduction == Reduction::Mean && locations > 0)
        out.cls /= static_cast<double>(locations);

    for (size_t i = 0; i < reg.student.size(); ++i)
        out.reg += smooth_l1(reg.student[i] - reg.teacher[i], params.beta);
    if (params.reduction == Reduction::Mean && !reg.student.empty())
        out.reg /= static_cast<double>(reg.student.size());
    return out;
}

// Per-box n x n x C features sampled at the cell centers of each box's
// axis-aligned BEV bounding rectangle; samples clamp to the map border.
struct RoiFeatures {
    int grid = 0, channels = 0;
    std::vector<double> data;      // boxes * grid * grid * channels
    std::vector<uint8_t> outside;  // per box: rectangle entirely off the map

    std::span<const double> cell(size_t box, int gi, int gj) const {
        const size_t g = static_cast<size_t>(grid);
        const size_t offset =
            ((box * g + static_cast<size_t>(gi)) * g + static_cast<size_t>(gj)) *
            static_cast<size_t>(channels);
        return {data.data() + offset, static_cast<size_t>(channels)};
    }
};

inline RoiFeatures roi_align(const DenseMap& map, const std::vector<Box3D>& boxes, int grid_n) {
    validate(map);
    if (!map.geom) throw std::invalid_argument("roi_align needs a map with BEV geometry");
    if (boxes.empty()) throw std::invalid_argument("roi_align needs at least one box");
    if (grid_n < 1) throw std::invalid_argument("roi grid must be >= 1");
    const MapGeometry g = *map.geom;
    const double map_min_x = g.origin_x, map_min_y = g.origin_y;
    const double map_max_x = g.origin_x + g.cell_x * map.width;
    const double map_max_y = g.origin_y + g.cell_y * map.height;

    RoiFeatures out;
    out.grid = grid_n;
    out.channels = map.channels;
    out.data.assign(boxes.size() * static_cast<size_t>(grid_n) * static_cast<size_t>(grid_n) *
                        static_cast<size_t>(map.channels),
                    0.0);
    out.outside.assign(boxes.size(), 0);

    for (size_t b = 0; b < boxes.size(); ++b) {
        const Corners3 corners = box_corners(boxes[b]);
        double lo_x = corners[0][0], hi_x = corners[0][0];
        double lo_y = corners[0][1], hi_y = corners[0][1];
        for (int i = 1; i < 4; ++i) {
            lo_x = std::min(lo_x, corners[static_cast<size_t>(i)][0]);
            hi_x = std::max(hi_x, corners[static_cast<size_t>(i)][0]);
            lo_y = std::min(lo_y, corners[static_cast<size_t>(i)][1]);
            hi_y = std::max(hi_y, corners[static_cast<size_t>(i)][1]);
        }
        if (hi_x < map_min_x || lo_x > map_max_x || hi_y < map_min_y || lo_y > map_max_y) {
            out.outside[b] = 1;  // zero feature block
            continue;
        }
        for (int gi = 0; gi < grid_n; ++gi) {
            const double y = lo_y + (hi_y - lo_y) * (gi + 0.5) / grid_n;
            double py = (y - g.origin_y) / g.cell_y - 0.5;
            py = std::clamp(py, 0.0, static_cast<double>(map.height - 1));
            const int y0 = std::min(static_cast<int>(py), map.height - 1);
            const int y1 = std::min(y0 + 1, map.height - 1);
            const double wy = py - y0;
            for (int gj = 0; gj < grid_n; ++gj) {
                const double x = lo_x + (hi_x - lo_x) * (gj + 0.5) / grid_n;
                double px = (x - g.origin_x) / g.cell_x - 0.5;
                px = std::clamp(px, 0.0, static_cast<double>(map.width - 1));
                const int x0 = std::min(static_cast<int>(px), map.width - 1);
                const int x1 = std::min(x0 + 1, map.width - 1);
                const double wx = px - x0;
                const size_t offset = ((b * static_cast<size_t>(grid_n) +
                                        static_cast<size_t>(gi)) *
                                           static_cast<size_t>(grid_n) +
                                       static_cast<size_t>(gj)) *
                                      static_cast<size_t>(map.channels);
                for (int ch = 0; ch < map.channels; ++ch) {
                    const double top = map.at(y0, x0, ch) * (1.0 - wx) + map.at(y0, x1, ch) * wx;
                    const double bot = map.at(y1, x0, ch) * (1.0 - wx) + map.at(y1, x1, ch) * wx;
                    out.data[offset + static_cast<size_t>(ch)] = top * (1.0 - wy) + bot * wy;
                }
            }
        }
    }
    return out;
}

// 1x1 convolution block in inference form: per-pixel linear map, folded
// batch-norm affine, then ReLU.
struct ChannelAlignParams {
    int in_channels = 0, out_channels = 0;
    std::vector<double> weight;  // in_channels x out_channels, row-major
    std::vector<double> scale;   // per output channel
    std::vector<double> shift;   // per output channel

    static ChannelAlignParams identity(int channels) {
        ChannelAlignParams p;
        p.in_channels = p.out_channels = channels;
        p.weight.assign(static_cast<size_t>(channels) * static_cast<size_t>(channels), 0.0);
        for (int i = 0; i < channels; ++i)
            p.weight[static_cast<size_t>(i) * static_cast<size_t>(channels) +
                     static_cast<size_t>(i)] = 1.0;
        p.scale.assign(static_cast<size_t>(channels), 1.0);
        p.shift.assign(static_cast<size_t>(channels), 0.0);
        return p;
    }
};

inline DenseMap channel_align(const DenseMap& map, const ChannelAlignParams& p) {
    validate(map);
    if (p.in_channels != map.channels)
        throw std::invalid_argument("channel_align input channel mismatch");
    if (p.weight.size() != static_cast<size_t>(p.in_channels) * static_cast<size_t>(p.out_channels))
        throw std::invalid_argument("channel_align weight shape mismatch");
    if (p.scale.size() != static_cast<size_t>(p.out_channels) ||
        p.shift.size() != static_cast<size_t>(p.out_channels))
        throw std::invalid_argument("channel_align batch-norm arrays must match output channels");
    DenseMap out = DenseMap::zeros(map.height, map.width, p.out_channels);
    out.geom = map.geom;
    for (int r = 0; r < map.height; ++r) {
        for (int c = 0; c < map.width; ++c) {
            for (int oc = 0; oc < p.out_channels; ++oc) {
                double acc = 0.0;
                for (int ic = 0; ic < p.in_channels; ++ic)
                    acc += map.at(r, c, ic) *
                           p.weight[static_cast<size_t>(ic) * static_cast<size_t>(p.out_channels) +
                                    static_cast<size_t>(oc)];
                const double v = p.scale[static_cast<size_t>(oc)] * acc +
                                 p.shift[static_cast<size_t>(oc)];
                out.at(r, c, oc) = std::max(0.0, v);
            }
        }
    }
    return out;
}

// Feature distillation: mean over (boxes x grid cells) of the channel-wise
// L2 norm of roi(align(resize(student)), gt) - roi(teacher, gt). Returns 0
// when there is no ground truth to pool over.
inline double feature_kd_loss(const DenseMap& f_student, const DenseMap& f_teacher,
                              const std::vector<Box3D>& gt,
                              const ChannelAlignParams* align = nullptr, int grid_n = 7,
                              Reduction reduction = Reduction::Mean) {
    validate(f_teacher);
    if (!f_teacher.geom) throw std::invalid_argument("teacher feature map needs BEV geometry");
    if (gt.empty()) return 0.0;  // no RoIs to mimic
    DenseMap s = bilinear_resize(f_student, f_teacher.height, f_teacher.width);
    s.geom = f_teacher.geom;
    if (align) s = channel_align(s, *align);
    if (s.channels != f_teacher.channels)
        throw std::invalid_argument("student features must match teacher channels after alignment");
    const RoiFeatures rs = roi_align(s, gt, grid_n);
    const RoiFeatures rt = roi_align(f_teacher, gt, grid_n);
    double acc = 0.0;
    for (size_t b = 0; b < gt.size(); ++b) {
        for (int gi = 0; gi < grid_n; ++gi) {
            for (int gj = 0; gj < grid_n; ++gj) {
                const auto cs = rs.cell(b, gi, gj);
                const auto ct = rt.cell(b, gi, gj);
                double sq = 0.0;
                for (size_t ch = 0; ch < cs.size(); ++ch) {
                    const double d = cs[ch] - ct[ch];
                    sq += d * d;
                }
                acc += std::sqrt(sq);
            }
        }
    }
    if (reduction == Reduction::Mean)
        acc /= static_cast<double>(gt.size()) * grid_n * grid_n;
    return acc;
}

// Modified ground-truth set for label distillation: the ground truth plus
// every teacher prediction scoring at least tau, gt first, no deduplication.
// Merged predictions become targets, so their scores are dropped.
inline std::vector<Box3D> label_kd_targets(const std::vector<Box3D>& gt,
                                           const std::vector<Box3D>& teacher_preds, double tau) {
    if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("tau must be in [0, 1]");
    for (const Box3D& p : teacher_preds)
        if (!p.score) throw std::invalid_argument("teacher predictions must carry scores");
    std::vector<Box3D> out = gt;
    for (const Box3D& p : teacher_preds) {
        if (*p.score >= tau) {
            Box3D t = p;
            t.score.reset();
            out.push_back(t);
        }
    }
    return out;
}

// Reference detector loss: focal classification over IoU-matched anchors
// plus smooth-L1 over positives, each mean-reduced.
struct AnchorGridParams {
    MapGeometry geom;
    int grid_h = 0, grid_w = 0;
    // Per-cell anchor templates; center x/y are replaced by the cell center.
    std::vector<Box3D> templates;
    double positive_iou = 0.6;
    double negative_iou = 0.45;
    double focal_alpha = 0.25;
    double focal_gamma = 2.0;
    double smooth_l1_beta = 1.0;
};

struct RegressionPredictions {
    int dim = 7;
    std::vector<double> values;  // anchors x dim
    size_t rows() const { return dim > 0 ? values.size() / static_cast<size_t>(dim) : 0; }
};

// Standard anchor-relative box encoding (offsets over the BEV diagonal,
// log-ratio sizes, yaw difference).
inline std::array<double, 7> encode_box_to_anchor(const Box3D& target, const Box3D& anchor) {
    const double diag = std::hypot(anchor.dims[0], anchor.dims[1]);
    return {(target.center[0] - anchor.center[0]) / diag,
            (target.center[1] - anchor.center[1]) / diag,
            (target.center[2] - anchor.center[2]) / anchor.dims[2],
            std::log(target.dims[0] / anchor.dims[0]),
            std::log(target.dims[1] / anchor.dims[1]),
            std::log(target.dims[2] / anchor.dims[2]),
            target.yaw - anchor.yaw};
}

inline Box3D anchor_at_cell(const AnchorGridParams& p, int row, int col, size_t tmpl) {
    Box3D a = p.templates[tmpl];
    a.center[0] = p.geom.origin_x + (col + 0.5) * p.geom.cell_x;
    a.center[1] = p.geom.origin_y + (row + 0.5) * p.geom.cell_y;
    return a;
}

struct DetectionLossResult {
    double cls = 0.0;
    double reg = 0.0;
    size_t positives = 0;
    size_t ignored = 0;
};

// pred_logits: H x W x (templates * num_classes) raw classification logits.
// pred_reg: one 7-vector per anchor, anchor index ((row*W)+col)*A + a.
inline DetectionLossResult detection_loss(const DenseMap& pred_logits,
                                          const RegressionPredictions& pred_reg,
                                          const std::vector<Box3D>& targets,
                                          const AnchorGridParams& params) {
    validate(pred_logits);
    if (params.grid_h < 1 || params.grid_w < 1 || params.templates.empty())
        throw std::invalid_argument("anchor grid must have cells and templates");
    if (pred_logits.height != params.grid_h || pred_logits.width != params.grid_w)
        throw std::invalid_argument("classification map must match the anchor grid");
    const int num_anchors_per_cell = static_cast<int>(params.templates.size());
    if (pred_logits.channels % num_anchors_per_cell != 0)
        throw std::invalid_argument("classification channels must split evenly over templates");
    const int num_classes = pred_logits.channels / num_anchors_per_cell;
    const size_t total_anchors = static_cast<size_t>(params.grid_h) *
                                 static_cast<size_t>(params.grid_w) *
                                 static_cast<size_t>(num_anchors_per_cell);
    if (pred_reg.dim != 7 || pred_reg.rows() != total_anchors)
        throw std::invalid_argument("regression predictions must provide 7 values per anchor");
    for (const Box3D& t : targets)
        if (t.label < 0 || t.label >= num_classes)
            throw std::invalid_argument("target label outside the classification channels");
    for (const Box3D& t : params.templates)
        if (t.label < 0 || t.label >= num_classes)
            throw std::invalid_argument("anchor template label outside the classification channels");

    DetectionLossResult out;
    double cls_acc = 0.0;
    size_t cls_terms = 0;
    double reg_acc = 0.0;
    size_t reg_terms = 0;

    for (int r = 0; r < params.grid_h; ++r) {
        for (int c = 0; c < params.grid_w; ++c) {
            for (int a = 0; a < num_anchors_per_cell; ++a) {
                const Box3D anchor = anchor_at_cell(params, r, c, static_cast<size_t>(a));
                int best_target = -1;
                double best_iou = 0.0;
                for (size_t t = 0; t < targets.size(); ++t) {
                    if (targets[t].label != anchor.label) continue;
                    const double v = bev_iou(anchor, targets[t]);
                    if (v > best_iou) {
                        best_iou = v;
                        best_target = static_cast<int>(t);
                    }
                }
                const bool positive = best_target >= 0 && best_iou >= params.positive_iou;
                const bool ignored = !positive && best_iou >= params.negative_iou;
                if (ignored) {
                    out.ignored += 1;
                    continue;
                }
                for (int k = 0; k < num_classes; ++k) {
                    const double logit = pred_logits.at(r, c, a * num_classes + k);
                    const double target = (positive && k == anchor.label) ? 1.0 : 0.0;
                    cls_acc += focal_loss(logit, target, params.focal_alpha, params.focal_gamma);
                    cls_terms += 1;
                }
                if (positive) {
                    out.positives += 1;
                    const auto encoded =
                        encode_box_to_anchor(targets[static_cast<size_t>(best_target)], anchor);
                    const size_t anchor_index =
                        (static_cast<size_t>(r) * static_cast<size_t>(params.grid_w) +
                         static_cast<size_t>(c)) *
                            static_cast<size_t>(num_anchors_per_cell) +
                        static_cast<size_t>(a);
                    for (int k = 0; k < 7; ++k) {
                        const double pred =
                            pred_reg.values[anchor_index * 7 + static_cast<size_t>(k)];
                        reg_acc += smooth_l1(pred - encoded[static_cast<size_t>(k)],
                                             params.smooth_l1_beta);
                        reg_terms += 1;
                    }
                }
            }
        }
    }
    out.cls = cls_terms > 0 ? cls_acc / static_cast<double>(cls_terms) : 0.0;
    out.reg = reg_terms > 0 ? reg_acc / static_cast<double>(reg_terms) : 0.0;
    return out;
}

// Weights of the joint distillation objective. Defaults are the published
// configuration: label reg/cls 1.0, feature 0.1, logit reg 0.3, logit cls 0.001.
struct LossWeights {
    double reg = 1.0;
    double cls = 1.0;
    double feat = 0.1;
    double logit_reg = 0.3;
    double logit_cls = 0.001;
};

struct LossComponents {
    double reg = 0.0;
    double cls = 0.0;
    double feat = 0.0;
    double logit_reg = 0.0;
    double logit_cls = 0.0;
};

struct LossReport {
    double reg = 0.0;
    double cls = 0.0;
    double feat = 0.0;
    double logit_reg = 0.0;
    double logit_cls = 0.0;
    double joint = 0.0;
};

inline LossReport joint_loss(const LossComponents& c, const LossWeights& w) {
    for (double v : {w.reg, w.cls, w.feat, w.logit_reg, w.logit_cls}) {
        if (!(v >= 0.0) || !std::isfinite(v))
            throw std::invalid_argument("loss weights must be finite and non-negative");
    }
    for (double v : {c.reg, c.cls, c.feat, c.logit_reg, c.logit_cls}) {
        if (!std::isfinite(v)) throw std::invalid_argument("loss components must be finite");
    }
    LossReport r;
    r.reg = c.reg;
    r.cls = c.cls;
    r.feat = c.feat;
    r.logit_reg = c.logit_reg;
    r.logit_cls = c.logit_cls;
    r.joint = w.logit_reg * c.logit_reg + w.logit_cls * c.logit_cls + w.feat * c.feat +
              w.reg * c.reg + w.cls * c.cls;
    return r;
}

}  // namespace l2r
