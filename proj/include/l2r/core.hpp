#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace l2r {

enum class Source { Lidar, Radar, Mixed };

inline const char* to_string(Source s) {
    switch (s) {
        case Source::Lidar: return "lidar";
        case Source::Radar: return "radar";
        case Source::Mixed: return "mixed";
    }
    return "?";
}

inline Source source_from_string(std::string_view s) {
    if (s == "lidar") return Source::Lidar;
    if (s == "radar") return Source::Radar;
    if (s == "mixed") return Source::Mixed;
    throw std::invalid_argument("unknown point cloud source: " + std::string(s));
}

// Name of the 0/1 channel appended when radar and lidar clouds are merged.
inline constexpr const char* kRadarIndicatorChannel = "is_radar";

inline std::vector<std::string> default_lidar_schema() {
    return {"x", "y", "z", "intensity"};
}

inline std::vector<std::string> default_radar_schema() {
    return {"x", "y", "z", "rcs", "v_r", "v_r_comp", "time"};
}

// Flat row-major N x C point container. Channels 0..2 are always x,y,z in
// meters; extra channels are named by `schema`.
struct PointCloud {
    std::vector<float> data;
    std::vector<std::string> schema = default_lidar_schema();
    Source source = Source::Lidar;

    size_t channel_count() const { return schema.size(); }
    size_t size() const { return schema.empty() ? 0 : data.size() / schema.size(); }

    std::span<const float> row(size_t i) const {
        const size_t c = channel_count();
        return {data.data() + i * c, c};
    }
    std::span<float> row(size_t i) {
        const size_t c = channel_count();
        return {data.data() + i * c, c};
    }

    float x(size_t i) const { return data[i * channel_count() + 0]; }
    float y(size_t i) const { return data[i * channel_count() + 1]; }
    float z(size_t i) const { return data[i * channel_count() + 2]; }

    void append(std::span<const float> values) {
        if (values.size() != channel_count())
            throw std::invalid_argument("row width does not match schema");
        data.insert(data.end(), values.begin(), values.end());
    }
    void append(std::initializer_list<float> values) {
        append(std::span<const float>(values.begin(), values.size()));
    }

    // Index of a named channel, -1 if absent.
    int channel_index(std::string_view name) const {
        for (size_t i = 0; i < schema.size(); ++i)
            if (schema[i] == name) return static_cast<int>(i);
        return -1;
    }

    // Empty cloud sharing schema and source; used by row filters.
    static PointCloud empty_like(const PointCloud& other) {
        PointCloud out;
        out.schema = other.schema;
        out.source = other.source;
        return out;
    }
};

// Throws std::invalid_argument on any violated PointCloud invariant.
inline void validate(const PointCloud& pc) {
    if (pc.schema.size() < 3)
        throw std::invalid_argument("point cloud needs at least x,y,z channels");
    if (pc.schema[0] != "x" || pc.schema[1] != "y" || pc.schema[2] != "z")
        throw std::invalid_argument("channels 0,1,2 must be x,y,z");
    if (pc.data.size() % pc.schema.size() != 0)
        throw std::invalid_argument("data length is not a multiple of the channel count");
    for (float v : pc.data)
        if (!std::isfinite(v)) throw std::invalid_argument("point cloud contains non-finite values");
    if (pc.source == Source::Mixed) {
        const int ind = pc.channel_index(kRadarIndicatorChannel);
        if (ind < 0)
            throw std::invalid_argument("mixed cloud lacks the is_radar indicator channel");
        for (size_t i = 0; i < pc.size(); ++i) {
            const float v = pc.row(i)[static_cast<size_t>(ind)];
            if (v != 0.0f && v != 1.0f)
                throw std::invalid_argument("is_radar channel must be 0 or 1");
        }
    }
}

inline constexpr double kPi = 3.141592653589793238462643383279502884;

// Normalizes to (-pi, pi].
inline double normalize_yaw(double yaw) {
    double y = std::fmod(yaw, 2.0 * kPi);
    if (y <= -kPi) y += 2.0 * kPi;
    if (y > kPi) y -= 2.0 * kPi;
    return y;
}

// Oriented 3D box: center (x,y,z), dims (l,w,h), yaw counter-clockwise about
// +z with 0 along +x. Ground-truth boxes carry no score.
struct Box3D {
    std::array<double, 3> center{0.0, 0.0, 0.0};
    std::array<double, 3> dims{1.0, 1.0, 1.0};
    double yaw = 0.0;
    int label = 0;
    std::optional<double> score;
};

inline double box_volume(const Box3D& b) { return b.dims[0] * b.dims[1] * b.dims[2]; }

using Corners3 = std::array<std::array<double, 3>, 8>;

// Corners of the yaw-rotated cuboid: bottom face counter-clockwise seen from
// +z, then the top face in the same xy order.
inline Corners3 box_corners(const Box3D& b) {
    const double hl = b.dims[0] * 0.5, hw = b.dims[1] * 0.5, hh = b.dims[2] * 0.5;
    const double c = std::cos(b.yaw), s = std::sin(b.yaw);
    const double lx[4] = {-hl, hl, hl, -hl};
    const double ly[4] = {-hw, -hw, hw, hw};
    Corners3 out{};
    for (int i = 0; i < 4; ++i) {
        const double rx = lx[i] * c - ly[i] * s + b.center[0];
        const double ry = lx[i] * s + ly[i] * c + b.center[1];
        out[static_cast<size_t>(i)] = {rx, ry, b.center[2] - hh};
        out[static_cast<size_t>(i + 4)] = {rx, ry, b.center[2] + hh};
    }
    return out;
}

struct Frame {
    std::string id;
    PointCloud lidar;
    PointCloud radar;
    std::vector<Box3D> gt;
};

// Axis-aligned crop volume, min < max per axis.
struct Range3D {
    std::array<double, 3> min{0.0, 0.0, 0.0};
    std::array<double, 3> max{1.0, 1.0, 1.0};

    bool contains(double x, double y, double z) const {
        return x >= min[0] && x <= max[0] && y >= min[1] && y <= max[1] && z >= min[2] &&
               z <= max[2];
    }

    // The detector crop volume used throughout: x [0, 51.2], y [-25.6, 25.6],
    // z [-3, 2] meters.
    static Range3D detector_default() {
        return {{0.0, -25.6, -3.0}, {51.2, 25.6, 2.0}};
    }
};

inline void validate(const Range3D& r) {
    for (int a = 0; a < 3; ++a)
        if (!(r.min[static_cast<size_t>(a)] < r.max[static_cast<size_t>(a)]))
            throw std::invalid_argument("range min must be < max on every axis");
}

// Keeps exactly the points with min <= coordinate <= max on all three axes,
// original order preserved.
inline PointCloud crop_to_range(const PointCloud& pc, const Range3D& range) {
    PointCloud out = PointCloud::empty_like(pc);
    out.data.reserve(pc.data.size());
    for (size_t i = 0; i < pc.size(); ++i) {
        if (range.contains(pc.x(i), pc.y(i), pc.z(i))) out.append(pc.row(i));
    }
    return out;
}

}  // namespace l2r
