#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <vector>

#include "l2r/core.hpp"
#include "l2r/rng.hpp"

namespace l2r {

// Merges two clouds over the union channel schema: channels of the first
// cloud, then unseen channels of the second, then the is_radar indicator.
// Channels absent for a source are zero-filled; rows of the first argument
// come first. Neither input may already be mixed.
inline PointCloud merge_clouds(const PointCloud& radar, const PointCloud& lidar) {
    if (radar.source == Source::Mixed || lidar.source == Source::Mixed)
        throw std::invalid_argument("merge_clouds inputs must not already be mixed");
    PointCloud out;
    out.source = Source::Mixed;
    out.schema = radar.schema;
    for (const std::string& name : lidar.schema)
        if (std::find(out.schema.begin(), out.schema.end(), name) == out.schema.end())
            out.schema.push_back(name);
    out.schema.push_back(kRadarIndicatorChannel);

    const size_t merged_c = out.schema.size();
    auto append_all = [&](const PointCloud& src) {
        std::vector<int> dst_index(src.schema.size());
        for (size_t i = 0; i < src.schema.size(); ++i) dst_index[i] = out.channel_index(src.schema[i]);
        const float flag = src.source == Source::Radar ? 1.0f : 0.0f;
        std::vector<float> row(merged_c, 0.0f);
        for (size_t i = 0; i < src.size(); ++i) {
            std::fill(row.begin(), row.end(), 0.0f);
            const auto in = src.row(i);
            for (size_t c = 0; c < in.size(); ++c) row[static_cast<size_t>(dst_index[c])] = in[c];
            row[merged_c - 1] = flag;
            out.append(row);
        }
    };
    out.data.reserve((radar.size() + lidar.size()) * merged_c);
    append_all(radar);
    append_all(lidar);
    return out;
}

struct PillarGridParams {
    double pillar_dx = 0.16, pillar_dy = 0.16;  // meters
    int max_points = 32;
    Range3D range = Range3D::detector_default();
};

// Fixed-capacity BEV columns. Cells are kept sorted by (ix, iy).
struct PillarGrid {
    PillarGridParams params;
    std::vector<std::string> schema;
    struct Cell {
        int ix = 0, iy = 0;
        std::vector<float> rows;  // count() x schema.size()
        size_t count(size_t channels) const { return channels ? rows.size() / channels : 0; }
    };
    std::vector<Cell> cells;

    size_t total_points() const {
        size_t n = 0;
        for (const Cell& c : cells) n += c.count(schema.size());
        return n;
    }
};

// Bins a mixed cloud into pillars. When a cell overflows max_points, every
// radar point survives first (a uniform random radar subset if radar alone
// overflows) and lidar points fill the remaining slots uniformly at random.
// Cell fills use seeds derived from (seed, cell index), so the result does
// not depend on processing order.
inline PillarGrid pillarize_prioritized(const PointCloud& mixed, const PillarGridParams& params,
                                        uint64_t seed) {
    if (mixed.source != Source::Mixed)
        throw std::invalid_argument("pillarize expects a mixed cloud");
    const int indicator = mixed.channel_index(kRadarIndicatorChannel);
    if (indicator < 0) throw std::invalid_argument("mixed cloud lacks the is_radar channel");
    if (params.max_points < 1) throw std::invalid_argument("max_points must be >= 1");
    if (!(params.pillar_dx > 0.0) || !(params.pillar_dy > 0.0))
        throw std::invalid_argument("pillar size must be positive");
    validate(params.range);

    const int nx = std::max(1, static_cast<int>(std::ceil(
                                   (params.range.max[0] - params.range.min[0]) / params.pillar_dx)));
    const int ny = std::max(1, static_cast<int>(std::ceil(
                                   (params.range.max[1] - params.range.min[1]) / params.pillar_dy)));

    struct Members {
        std::vector<size_t> radar, lidar;
    };
    std::map<std::pair<int, int>, Members> cells;
    for (size_t i = 0; i < mixed.size(); ++i) {
        const double x = mixed.x(i), y = mixed.y(i), z = mixed.z(i);
        if (!params.range.contains(x, y, z)) continue;
        const int ix = std::min(static_cast<int>((x - params.range.min[0]) / params.pillar_dx),
                                nx - 1);
        const int iy = std::min(static_cast<int>((y - params.range.min[1]) / params.pillar_dy),
                                ny - 1);
        Members& m = cells[{ix, iy}];
        const bool is_radar = mixed.row(i)[static_cast<size_t>(indicator)] != 0.0f;
        (is_radar ? m.radar : m.lidar).push_back(i);
    }

    PillarGrid grid;
    grid.params = params;
    grid.schema = mixed.schema;
    const size_t cap = static_cast<size_t>(params.max_points);
    for (const auto& [key, m] : cells) {
        Rng rng(derive_seed(seed, key.first, key.second));
        std::vector<size_t> keep;
        if (m.radar.size() + m.lidar.size() <= cap) {
            keep = m.radar;
            keep.insert(keep.end(), m.lidar.begin(), m.lidar.end());
        } else if (m.radar.size() >= cap) {
            for (size_t s : sample_indices(m.radar.size(), cap, rng)) keep.push_back(m.radar[s]);
        } else {
            keep = m.radar;
            const size_t lidar_slots = cap - m.radar.size();
            for (size_t s : sample_indices(m.lidar.size(), lidar_slots, rng))
                keep.push_back(m.lidar[s]);
        }
        PillarGrid::Cell cell;
        cell.ix = key.first;
        cell.iy = key.second;
        cell.rows.reserve(keep.size() * mixed.channel_count());
        for (size_t i : keep) {
            const auto row = mixed.row(i);
            cell.rows.insert(cell.rows.end(), row.begin(), row.end());
        }
        grid.cells.push_back(std::move(cell));
    }
    return grid;
}

}  // namespace l2r
