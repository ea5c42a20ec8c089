#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "l2r/core.hpp"
#include "l2r/eval.hpp"
#include "l2r/rng.hpp"

namespace l2r {

struct ClassPrior {
    std::string name = "car";
    std::array<double, 3> dims_mean{4.0, 1.8, 1.5};  // l, w, h
    std::array<double, 3> dims_sd{0.3, 0.1, 0.1};
};

inline std::vector<ClassPrior> default_class_priors() {
    return {{"car", {4.0, 1.8, 1.5}, {0.3, 0.1, 0.1}},
            {"pedestrian", {0.6, 0.6, 1.75}, {0.05, 0.05, 0.1}},
            {"cyclist", {1.8, 0.6, 1.7}, {0.1, 0.05, 0.1}}};
}

struct SceneSpec {
    uint64_t seed = 0;
    std::vector<int> class_counts{2, 2, 1};  // per prior
    std::vector<ClassPrior> priors = default_class_priors();
    double lidar_density = 50.0;      // surface points per m^2 at the reference range
    double ground_density = 1.5;      // ground points per m^2 at the reference range
    double radar_density = 2.0;       // radar reflections per m^2 of visible surface
    double clutter_rate = 0.002;      // radar clutter points per m^2 of ground
    double rcs_mean = 10.0;           // per-point reflection intensity generator
    double rcs_sd = 5.0;
    double doppler_sd = 3.0;          // per-object radial velocity spread
    double falloff_reference = 10.0;  // range with density factor 1; factor = min(1,(ref/r)^2)
    double ground_z = -2.0;
    Range3D extent = Range3D::detector_default();
    double min_radar_lidar_ratio = 4.0;  // lidar must outnumber radar by this factor
    int max_placement_retries = 200;
};

inline void validate(const SceneSpec& spec) {
    if (spec.class_counts.size() != spec.priors.size())
        throw std::invalid_argument("one count per class prior required");
    if (!(spec.lidar_density > 0.0) || !(spec.radar_density > 0.0))
        throw std::invalid_argument("densities must be positive");
    for (const ClassPrior& p : spec.priors)
        for (double d : p.dims_mean)
            if (!(d > 0.0)) throw std::invalid_argument("class dimensions must be positive");
    validate(spec.extent);
}

namespace detail {

inline double range_falloff(double dist, double reference) {
    if (dist <= reference) return 1.0;
    const double f = reference / dist;
    return f * f;
}

// Outward normals and rectangle frames of the four side faces plus the top.
struct BoxFace {
    std::array<double, 3> center;
    std::array<double, 3> u_axis;  // first in-plane axis, unit
    std::array<double, 3> v_axis;  // second in-plane axis, unit
    std::array<double, 3> normal;
    double u_len, v_len;
    double area() const { return u_len * v_len; }
};

inline std::vector<BoxFace> box_faces(const Box3D& b) {
    const double c = std::cos(b.yaw), s = std::sin(b.yaw);
    const std::array<double, 3> ex{c, s, 0.0};   // box forward (length axis)
    const std::array<double, 3> ey{-s, c, 0.0};  // box left (width axis)
    const std::array<double, 3> ez{0.0, 0.0, 1.0};
    const double hl = b.dims[0] * 0.5, hw = b.dims[1] * 0.5, hh = b.dims[2] * 0.5;
    auto shift = [&](const std::array<double, 3>& d, double f) {
        return std::array<double, 3>{b.center[0] + d[0] * f, b.center[1] + d[1] * f,
                                     b.center[2] + d[2] * f};
    };
    auto neg = [](const std::array<double, 3>& v) {
        return std::array<double, 3>{-v[0], -v[1], -v[2]};
    };
    return {
        {shift(ex, hl), ey, ez, ex, b.dims[1], b.dims[2]},        // front
        {shift(neg(ex), hl), ey, ez, neg(ex), b.dims[1], b.dims[2]},  // rear
        {shift(ey, hw), ex, ez, ey, b.dims[0], b.dims[2]},        // left
        {shift(neg(ey), hw), ex, ez, neg(ey), b.dims[0], b.dims[2]},  // right
        {shift(ez, hh), ex, ey, ez, b.dims[0], b.dims[1]},        // top
    };
}

// A face counts as visible when its outward normal points back toward the
// sensor origin. No occlusion ray-casting.
inline bool face_visible(const BoxFace& f) {
    const double toward = f.center[0] * f.normal[0] + f.center[1] * f.normal[1] +
                          f.center[2] * f.normal[2];
    return toward < 0.0;
}

}  // namespace detail

// Deterministic synthetic frame: non-overlapping ground-truth boxes inside
// the crop extent, lidar points on visible box faces plus the ground plane
// with a range-dependent density falloff, and a sparse radar cloud around the
// boxes plus uniform clutter.
inline Frame generate_scene(const SceneSpec& spec, const std::string& frame_id = "000000") {
    validate(spec);
    Rng rng(spec.seed);
    Frame frame;
    frame.id = frame_id;
    frame.lidar.schema = default_lidar_schema();
    frame.lidar.source = Source::Lidar;
    frame.radar.schema = default_radar_schema();
    frame.radar.source = Source::Radar;

    // Box placement, rejecting overlaps in BEV and boxes poking out of range.
    for (size_t cls = 0; cls < spec.priors.size(); ++cls) {
        const ClassPrior& prior = spec.priors[cls];
        for (int k = 0; k < spec.class_counts[cls]; ++k) {
            bool placed = false;
            for (int attempt = 0; attempt < spec.max_placement_retries && !placed; ++attempt) {
                Box3D box;
                box.label = static_cast<int>(cls);
                for (int a = 0; a < 3; ++a)
                    box.dims[static_cast<size_t>(a)] =
                        std::max(0.2, rng.normal(prior.dims_mean[static_cast<size_t>(a)],
                                                 prior.dims_sd[static_cast<size_t>(a)]));
                box.yaw = normalize_yaw(rng.uniform(-kPi, kPi));
                // Margin covers the surface-noise amplitude of face points.
                const double reach = 0.5 * std::hypot(box.dims[0], box.dims[1]) + 0.02;
                const double lo_x = spec.extent.min[0] + reach, hi_x = spec.extent.max[0] - reach;
                const double lo_y = spec.extent.min[1] + reach, hi_y = spec.extent.max[1] - reach;
                if (!(lo_x < hi_x) || !(lo_y < hi_y)) continue;
                box.center = {rng.uniform(lo_x, hi_x), rng.uniform(lo_y, hi_y),
                              spec.ground_z + box.dims[2] * 0.5};
                if (box.center[2] + box.dims[2] * 0.5 > spec.extent.max[2]) continue;
                bool overlaps = false;
                for (const Box3D& other : frame.gt)
                    if (bev_intersection_area(box, other) > 0.0) {
                        overlaps = true;
                        break;
                    }
                if (overlaps) continue;
                frame.gt.push_back(box);
                placed = true;
            }
            if (!placed)
                throw std::runtime_error("scene generation: box placement failed after retries");
        }
    }

    // Lidar on visible box faces. Point counts are the rounded expectation so
    // they track area * density closely.
    for (const Box3D& box : frame.gt) {
        for (const detail::BoxFace& face : detail::box_faces(box)) {
            if (!detail::face_visible(face)) continue;
            const double dist = std::hypot(face.center[0], face.center[1]);
            const double expected =
                face.area() * spec.lidar_density * detail::range_falloff(dist, spec.falloff_reference);
            const long count = std::lround(expected);
            for (long i = 0; i < count; ++i) {
                const double du = rng.uniform(-0.5, 0.5) * face.u_len;
                const double dv = rng.uniform(-0.5, 0.5) * face.v_len;
                const double dn = rng.uniform(-0.005, 0.005);
                const float px = static_cast<float>(face.center[0] + face.u_axis[0] * du +
                                                    face.v_axis[0] * dv + face.normal[0] * dn);
                const float py = static_cast<float>(face.center[1] + face.u_axis[1] * du +
                                                    face.v_axis[1] * dv + face.normal[1] * dn);
                const float pz = static_cast<float>(face.center[2] + face.u_axis[2] * du +
                                                    face.v_axis[2] * dv + face.normal[2] * dn);
                frame.lidar.append({px, py, pz, static_cast<float>(rng.unit())});
            }
        }
    }

    // Ground plane, one expectation per 1 m cell.
    for (double cx = spec.extent.min[0]; cx < spec.extent.max[0]; cx += 1.0) {
        for (double cy = spec.extent.min[1]; cy < spec.extent.max[1]; cy += 1.0) {
            const double wx = std::min(1.0, spec.extent.max[0] - cx);
            const double wy = std::min(1.0, spec.extent.max[1] - cy);
            const double dist = std::hypot(cx + wx * 0.5, cy + wy * 0.5);
            const double expected = wx * wy * spec.ground_density *
                                    detail::range_falloff(dist, spec.falloff_reference);
            const long count = std::lround(expected);
            for (long i = 0; i < count; ++i) {
                const float px = static_cast<float>(cx + rng.unit() * wx);
                const float py = static_cast<float>(cy + rng.unit() * wy);
                const float pz = static_cast<float>(spec.ground_z + rng.uniform(-0.005, 0.005));
                frame.lidar.append({px, py, pz, static_cast<float>(rng.unit() * 0.3)});
            }
        }
    }

    // Radar: reflections near visible faces, then uniform clutter. Positions
    // are clamped into the extent so the whole scene respects the crop range.
    auto append_radar = [&](double x, double y, double z, double doppler) {
        x = std::clamp(x, spec.extent.min[0], spec.extent.max[0]);
        y = std::clamp(y, spec.extent.min[1], spec.extent.max[1]);
        z = std::clamp(z, spec.extent.min[2], spec.extent.max[2]);
        frame.radar.append({static_cast<float>(x), static_cast<float>(y), static_cast<float>(z),
                            static_cast<float>(rng.normal(spec.rcs_mean, spec.rcs_sd)),
                            static_cast<float>(doppler),
                            static_cast<float>(doppler + rng.normal(0.0, 0.1)), 0.0f});
    };
    for (const Box3D& box : frame.gt) {
        const double doppler = rng.normal(0.0, spec.doppler_sd);  // one bulk velocity per object
        for (const detail::BoxFace& face : detail::box_faces(box)) {
            if (!detail::face_visible(face)) continue;
            const long count = std::lround(face.area() * spec.radar_density);
            for (long i = 0; i < count; ++i) {
                const double du = rng.uniform(-0.5, 0.5) * face.u_len;
                const double dv = rng.uniform(-0.5, 0.5) * face.v_len;
                const double dn = rng.normal(0.0, 0.05);
                append_radar(face.center[0] + face.u_axis[0] * du + face.v_axis[0] * dv +
                                 face.normal[0] * dn,
                             face.center[1] + face.u_axis[1] * du + face.v_axis[1] * dv +
                                 face.normal[1] * dn,
                             face.center[2] + face.u_axis[2] * du + face.v_axis[2] * dv +
                                 face.normal[2] * dn,
                             doppler + rng.normal(0.0, 0.3));
            }
        }
    }
    const double ground_area = (spec.extent.max[0] - spec.extent.min[0]) *
                               (spec.extent.max[1] - spec.extent.min[1]);
    const long clutter = std::lround(ground_area * spec.clutter_rate);
    for (long i = 0; i < clutter; ++i) {
        append_radar(rng.uniform(spec.extent.min[0], spec.extent.max[0]),
                     rng.uniform(spec.extent.min[1], spec.extent.max[1]),
                     spec.ground_z + std::abs(rng.normal(0.0, 0.5)), rng.normal(0.0, 1.0));
    }

    // Keep the radar strictly sparser than the lidar as configured.
    if (spec.min_radar_lidar_ratio > 0.0 &&
        static_cast<double>(frame.radar.size()) * spec.min_radar_lidar_ratio >
            static_cast<double>(frame.lidar.size()))
        throw std::runtime_error("scene spec produces too dense a radar cloud");
    return frame;
}

}  // namespace l2r
