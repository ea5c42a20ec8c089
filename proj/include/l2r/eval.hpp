#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "l2r/core.hpp"

namespace l2r {

namespace detail {

struct Vec2 {
    double x = 0.0, y = 0.0;
};

inline double cross2(const Vec2& o, const Vec2& a, const Vec2& b) {
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

// Shoelace area of a simple polygon (CCW positive).
inline double polygon_area(const std::vector<Vec2>& poly) {
    if (poly.size() < 3) return 0.0;
    double acc = 0.0;
    for (size_t i = 0; i < poly.size(); ++i) {
        const Vec2& p = poly[i];
        const Vec2& q = poly[(i + 1) % poly.size()];
        acc += p.x * q.y - p.y * q.x;
    }
    return std::abs(acc) * 0.5;
}

// Sutherland-Hodgman: keeps the part of `poly` on or left of edge a->b.
// Points exactly on the edge count as inside so self-intersection is exact.
inline std::vector<Vec2> clip_half_plane(const std::vector<Vec2>& poly, const Vec2& a,
                                         const Vec2& b) {
    std::vector<Vec2> out;
    out.reserve(poly.size() + 1);
    for (size_t i = 0; i < poly.size(); ++i) {
        const Vec2& prev = poly[(i + poly.size() - 1) % poly.size()];
        const Vec2& cur = poly[i];
        const double d_prev = cross2(a, b, prev);
        const double d_cur = cross2(a, b, cur);
        if (d_cur >= 0.0) {
            if (d_prev < 0.0) {
                const double t = d_prev / (d_prev - d_cur);
                out.push_back({prev.x + t * (cur.x - prev.x), prev.y + t * (cur.y - prev.y)});
            }
            out.push_back(cur);
        } else if (d_prev > 0.0) {
            // d_prev == 0 needs no crossing point: prev itself was emitted.
            const double t = d_prev / (d_prev - d_cur);
            out.push_back({prev.x + t * (cur.x - prev.x), prev.y + t * (cur.y - prev.y)});
        }
    }
    return out;
}

// Bottom-face xy outline, counter-clockwise.
inline std::vector<Vec2> bev_rectangle(const Box3D& b) {
    const Corners3 c = box_corners(b);
    return {{c[0][0], c[0][1]}, {c[1][0], c[1][1]}, {c[2][0], c[2][1]}, {c[3][0], c[3][1]}};
}

}  // namespace detail

// Area of the intersection of the two yaw-rotated BEV rectangles.
inline double bev_intersection_area(const Box3D& a, const Box3D& b) {
    std::vector<detail::Vec2> poly = detail::bev_rectangle(a);
    const std::vector<detail::Vec2> clipper = detail::bev_rectangle(b);
    for (size_t i = 0; i < clipper.size() && !poly.empty(); ++i) {
        poly = detail::clip_half_plane(poly, clipper[i], clipper[(i + 1) % clipper.size()]);
    }
    return detail::polygon_area(poly);
}

inline double bev_iou(const Box3D& a, const Box3D& b) {
    const double inter = bev_intersection_area(a, b);
    const double areas = a.dims[0] * a.dims[1] + b.dims[0] * b.dims[1] - inter;
    return areas > 0.0 ? inter / areas : 0.0;
}

// 3D IoU: (BEV intersection * z overlap) / (vol_a + vol_b - intersection).
inline double iou3d(const Box3D& a, const Box3D& b) {
    const double z_lo = std::max(a.center[2] - a.dims[2] * 0.5, b.center[2] - b.dims[2] * 0.5);
    const double z_hi = std::min(a.center[2] + a.dims[2] * 0.5, b.center[2] + b.dims[2] * 0.5);
    const double dz = std::max(0.0, z_hi - z_lo);
    if (dz == 0.0) return 0.0;
    const double inter = bev_intersection_area(a, b) * dz;
    const double uni = box_volume(a) + box_volume(b) - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

enum class ApInterp { ElevenPoint, FortyPoint, AllPoints };

inline const char* to_string(ApInterp m) {
    switch (m) {
        case ApInterp::ElevenPoint: return "11";
        case ApInterp::FortyPoint: return "40";
        case ApInterp::AllPoints: return "all";
    }
    return "?";
}

inline ApInterp ap_interp_from_string(std::string_view s) {
    if (s == "11") return ApInterp::ElevenPoint;
    if (s == "40") return ApInterp::FortyPoint;
    if (s == "all" || s == "all-points") return ApInterp::AllPoints;
    throw std::invalid_argument("unknown AP interpolation mode: " + std::string(s));
}

struct EvalConfig {
    std::vector<std::string> class_names{"car", "pedestrian", "cyclist"};
    std::vector<double> iou_thresholds{0.5, 0.25, 0.25};  // per class
    ApInterp interp = ApInterp::FortyPoint;
    // Half-open [min, max) distance bins, BEV distance from the origin.
    std::vector<std::pair<double, double>> range_bins{{0.0, 30.0}, {30.0, 50.0}};
};

inline void validate(const EvalConfig& cfg) {
    if (cfg.class_names.empty()) throw std::invalid_argument("eval config needs classes");
    if (cfg.iou_thresholds.size() != cfg.class_names.size())
        throw std::invalid_argument("one IoU threshold per class required");
    for (double t : cfg.iou_thresholds)
        if (!(t > 0.0) || t > 1.0) throw std::invalid_argument("IoU thresholds must be in (0, 1]");
    for (size_t i = 0; i < cfg.range_bins.size(); ++i) {
        const auto& [lo, hi] = cfg.range_bins[i];
        if (!(lo < hi)) throw std::invalid_argument("range bin must have min < max");
        if (i > 0 && cfg.range_bins[i - 1].second > lo)
            throw std::invalid_argument("range bins must be ordered and non-overlapping");
    }
}

// Greedy matching for one frame and one class set: detections in descending
// score order each claim the unmatched ground truth with the highest IoU at
// or above the class threshold; IoU ties go to the lower gt index.
struct ClassMatches {
    int label = 0;
    // (index into dets, index into gts or -1) in descending-score order.
    std::vector<std::pair<size_t, int>> det_matches;
    size_t gt_count = 0;
};

inline std::vector<ClassMatches> match_detections(const std::vector<Box3D>& dets,
                                                  const std::vector<Box3D>& gts,
                                                  const EvalConfig& cfg) {
    for (const Box3D& d : dets)
        if (!d.score) throw std::invalid_argument("detections must carry scores");
    std::vector<ClassMatches> out;
    for (size_t cls = 0; cls < cfg.class_names.size(); ++cls) {
        ClassMatches cm;
        cm.label = static_cast<int>(cls);
        std::vector<size_t> det_idx, gt_idx;
        for (size_t i = 0; i < dets.size(); ++i)
            if (dets[i].label == cm.label) det_idx.push_back(i);
        for (size_t i = 0; i < gts.size(); ++i)
            if (gts[i].label == cm.label) gt_idx.push_back(i);
        cm.gt_count = gt_idx.size();
        std::stable_sort(det_idx.begin(), det_idx.end(),
                         [&](size_t a, size_t b) { return *dets[a].score > *dets[b].score; });
        std::vector<uint8_t> gt_taken(gts.size(), 0);
        const double thr = cfg.iou_thresholds[cls];
        for (size_t di : det_idx) {
            int best_gt = -1;
            double best_iou = 0.0;
            for (size_t gi : gt_idx) {
                if (gt_taken[gi]) continue;
                const double v = iou3d(dets[di], gts[gi]);
                if (v >= thr && v > best_iou) {
                    best_iou = v;
                    best_gt = static_cast<int>(gi);
                }
            }
            if (best_gt >= 0) gt_taken[static_cast<size_t>(best_gt)] = 1;
            cm.det_matches.emplace_back(di, best_gt);
        }
        out.push_back(std::move(cm));
    }
    return out;
}

struct PrSample {
    double score = 0.0;
    bool tp = false;
};

// Precision-recall curve from score-ordered matches. `envelope` holds the
// interpolated precision (the running maximum from the right), which is
// monotone non-increasing in recall.
struct PrCurve {
    std::vector<double> recall;
    std::vector<double> precision;
    std::vector<double> envelope;
    size_t gt_count = 0;

    // Interpolated precision at recall level r; 0 past the last sample.
    double precision_at(double r) const {
        for (size_t i = 0; i < recall.size(); ++i)
            if (recall[i] >= r) return envelope[i];
        return 0.0;
    }
};

inline PrCurve pr_curve(std::vector<PrSample> samples, size_t gt_count) {
    if (gt_count == 0) throw std::invalid_argument("a PR curve needs at least one gt");
    std::stable_sort(samples.begin(), samples.end(),
                     [](const PrSample& a, const PrSample& b) { return a.score > b.score; });
    PrCurve out;
    out.gt_count = gt_count;
    out.recall.resize(samples.size());
    out.precision.resize(samples.size());
    out.envelope.resize(samples.size());
    size_t tp = 0, fp = 0;
    for (size_t i = 0; i < samples.size(); ++i) {
        (samples[i].tp ? tp : fp) += 1;
        out.recall[i] = static_cast<double>(tp) / static_cast<double>(gt_count);
        out.precision[i] = static_cast<double>(tp) / static_cast<double>(tp + fp);
    }
    double run_max = 0.0;
    for (size_t i = samples.size(); i-- > 0;) {
        run_max = std::max(run_max, out.precision[i]);
        out.envelope[i] = run_max;
    }
    return out;
}

// AP from score-ordered matches with the monotone precision envelope.
// gt_count must be >= 1 (classes without ground truth are excluded upstream).
inline double average_precision(std::vector<PrSample> samples, size_t gt_count, ApInterp mode) {
    const PrCurve curve = pr_curve(std::move(samples), gt_count);
    switch (mode) {
        case ApInterp::ElevenPoint: {
            double acc = 0.0;
            for (int i = 0; i <= 10; ++i) acc += curve.precision_at(static_cast<double>(i) / 10.0);
            return acc / 11.0;
        }
        case ApInterp::FortyPoint: {
            double acc = 0.0;
            for (int i = 1; i <= 40; ++i) acc += curve.precision_at(static_cast<double>(i) / 40.0);
            return acc / 40.0;
        }
        case ApInterp::AllPoints: {
            double acc = 0.0, prev_recall = 0.0;
            for (size_t i = 0; i < curve.recall.size(); ++i) {
                if (curve.recall[i] > prev_recall) {
                    acc += (curve.recall[i] - prev_recall) * curve.envelope[i];
                    prev_recall = curve.recall[i];
                }
            }
            return acc;
        }
    }
    return 0.0;
}

struct EvalFrame {
    std::string id;
    std::vector<Box3D> dets;
    std::vector<Box3D> gts;
};

struct EvalReport {
    struct Cell {
        size_t gt_count = 0;
        double ap = 0.0;  // meaningful only when gt_count > 0
        long tp = 0, fp = 0, fn = 0;
    };
    std::vector<std::string> class_names;
    std::vector<std::pair<double, double>> bins;
    std::vector<Cell> cells;  // [cls * bins.size() + bin]
    std::vector<std::optional<double>> bin_map;

    const Cell& cell(size_t cls, size_t bin) const { return cells[cls * bins.size() + bin]; }
};

namespace detail {

inline int bin_of_distance(double d, const std::vector<std::pair<double, double>>& bins) {
    for (size_t i = 0; i < bins.size(); ++i)
        if (d >= bins[i].first && d < bins[i].second) return static_cast<int>(i);
    return -1;
}

inline double bev_distance(const Box3D& b) {
    return std::hypot(b.center[0], b.center[1]);
}

}  // namespace detail

// Range-binned evaluation: ground truths are binned by BEV center distance
// from the origin, matched detections inherit the gt's bin, unmatched ones
// are binned by their own center. AP pools detections across frames.
inline EvalReport evaluate(const std::vector<EvalFrame>& frames, const EvalConfig& cfg) {
    validate(cfg);
    const size_t n_cls = cfg.class_names.size();
    const size_t n_bin = cfg.range_bins.size();
    EvalReport report;
    report.class_names = cfg.class_names;
    report.bins = cfg.range_bins;
    report.cells.resize(n_cls * n_bin);
    std::vector<std::vector<PrSample>> samples(n_cls * n_bin);

    for (const EvalFrame& frame : frames) {
        const auto matches = match_detections(frame.dets, frame.gts, cfg);
        for (const ClassMatches& cm : matches) {
            const size_t cls = static_cast<size_t>(cm.label);
            for (size_t gi = 0; gi < frame.gts.size(); ++gi) {
                if (frame.gts[gi].label != cm.label) continue;
                const int bin = detail::bin_of_distance(detail::bev_distance(frame.gts[gi]),
                                                        cfg.range_bins);
                if (bin >= 0) report.cells[cls * n_bin + static_cast<size_t>(bin)].gt_count += 1;
            }
            for (const auto& [di, gi] : cm.det_matches) {
                const bool tp = gi >= 0;
                const Box3D& ref = tp ? frame.gts[static_cast<size_t>(gi)] : frame.dets[di];
                const int bin = detail::bin_of_distance(detail::bev_distance(ref), cfg.range_bins);
                if (bin < 0) continue;
                samples[cls * n_bin + static_cast<size_t>(bin)].push_back(
                    {*frame.dets[di].score, tp});
            }
        }
    }

    report.bin_map.assign(n_bin, std::nullopt);
    for (size_t bin = 0; bin < n_bin; ++bin) {
        double acc = 0.0;
        size_t scored = 0;
        for (size_t cls = 0; cls < n_cls; ++cls) {
            EvalReport::Cell& cell = report.cells[cls * n_bin + bin];
            for (const PrSample& s : samples[cls * n_bin + bin]) (s.tp ? cell.tp : cell.fp) += 1;
            cell.fn = static_cast<long>(cell.gt_count) - cell.tp;
            if (cell.gt_count == 0) continue;  // class absent from this bin's mAP
            cell.ap = average_precision(samples[cls * n_bin + bin], cell.gt_count, cfg.interp);
            acc += cell.ap;
            scored += 1;
        }
        if (scored > 0) report.bin_map[bin] = acc / static_cast<double>(scored);
    }
    return report;
}

}  // namespace l2r
