#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <limits>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "l2r/core.hpp"
#include "l2r/rng.hpp"

namespace l2r {

struct ThinOutMethod {
    enum class Kind { Random, Knn, Voxel };
    Kind kind = Kind::Random;
    std::array<double, 3> voxel_size{1.0, 1.0, 1.0};  // Voxel only
};

inline const char* to_string(ThinOutMethod::Kind k) {
    switch (k) {
        case ThinOutMethod::Kind::Random: return "random";
        case ThinOutMethod::Kind::Knn: return "knn";
        case ThinOutMethod::Kind::Voxel: return "voxel";
    }
    return "?";
}

namespace detail {

// Gathers the given rows (ascending indices) into a new cloud.
inline PointCloud gather_rows(const PointCloud& pc, const std::vector<size_t>& indices) {
    PointCloud out = PointCloud::empty_like(pc);
    out.data.reserve(indices.size() * pc.channel_count());
    for (size_t i : indices) out.append(pc.row(i));
    return out;
}

inline uint64_t fnv1a_bytes(const void* p, size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    uint64_t h = 1469598103934665603ull;
    for (size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace detail

// Keeps the first occurrence of each bitwise-identical row, order preserved.
inline PointCloud dedup_points(const PointCloud& pc) {
    const size_t c = pc.channel_count();
    const size_t row_bytes = c * sizeof(float);
    struct RowHash {
        const PointCloud* pc;
        size_t bytes;
        size_t operator()(size_t i) const {
            return static_cast<size_t>(detail::fnv1a_bytes(pc->data.data() + i * pc->channel_count(), bytes));
        }
    };
    struct RowEq {
        const PointCloud* pc;
        size_t bytes;
        bool operator()(size_t a, size_t b) const {
            return std::memcmp(pc->data.data() + a * pc->channel_count(),
                               pc->data.data() + b * pc->channel_count(), bytes) == 0;
        }
    };
    std::unordered_set<size_t, RowHash, RowEq> seen(16, RowHash{&pc, row_bytes}, RowEq{&pc, row_bytes});
    std::vector<size_t> keep;
    keep.reserve(pc.size());
    for (size_t i = 0; i < pc.size(); ++i) {
        if (seen.insert(i).second) keep.push_back(i);
    }
    return detail::gather_rows(pc, keep);
}

// Exactly floor(share*N) points, uniform without replacement, original
// relative order preserved. share must be in (0, 1].
inline PointCloud random_sample(const PointCloud& pc, double share, uint64_t seed) {
    if (!(share > 0.0) || share > 1.0)
        throw std::invalid_argument("share must be in (0, 1]");
    const size_t n = pc.size();
    const size_t k = std::min(n, static_cast<size_t>(std::floor(share * static_cast<double>(n))));
    Rng rng(seed);
    return detail::gather_rows(pc, sample_indices(n, k, rng));
}

namespace detail {

inline double sq_dist3(double ax, double ay, double az, double bx, double by, double bz) {
    const double dx = ax - bx, dy = ay - by, dz = az - bz;
    return dx * dx + dy * dy + dz * dz;
}

// Uniform hash grid over a reference cloud for exact nearest-neighbor
// distance queries. Returns the same value as a brute-force scan: the grid
// only prunes cells that provably cannot hold a closer point.
class NearestPointGrid {
public:
    explicit NearestPointGrid(const PointCloud& pts) : pts_(&pts) {
        const size_t m = pts.size();
        if (m == 0) throw std::invalid_argument("reference cloud is empty");
        double lo[3], hi[3];
        for (int a = 0; a < 3; ++a) {
            lo[a] = std::numeric_limits<double>::infinity();
            hi[a] = -std::numeric_limits<double>::infinity();
        }
        for (size_t i = 0; i < m; ++i) {
            const double p[3] = {pts.x(i), pts.y(i), pts.z(i)};
            for (int a = 0; a < 3; ++a) {
                lo[a] = std::min(lo[a], p[a]);
                hi[a] = std::max(hi[a], p[a]);
            }
        }
        const double vol = std::max(1e-9, (hi[0] - lo[0]) * (hi[1] - lo[1]) * (hi[2] - lo[2]));
        cell_ = std::clamp(std::cbrt(vol / static_cast<double>(m)), 0.25, 16.0);
        for (int a = 0; a < 3; ++a) {
            origin_[a] = lo[a];
            last_cell_[a] = 0;
        }
        for (size_t i = 0; i < m; ++i) {
            const int64_t ci = cell_index(pts.x(i), 0);
            const int64_t cj = cell_index(pts.y(i), 1);
            const int64_t ck = cell_index(pts.z(i), 2);
            last_cell_[0] = std::max(last_cell_[0], ci);
            last_cell_[1] = std::max(last_cell_[1], cj);
            last_cell_[2] = std::max(last_cell_[2], ck);
            cells_[key(ci, cj, ck)].push_back(static_cast<uint32_t>(i));
        }
    }

    double nearest_sq_dist(double x, double y, double z) const {
        const int64_t q[3] = {cell_index(x, 0), cell_index(y, 1), cell_index(z, 2)};
        // Shells below `first` hold no occupied cells; after `last` every
        // occupied cell has been visited, so the running best is exact.
        int64_t first = 0, last = 0;
        for (int a = 0; a < 3; ++a) {
            const int64_t toward = std::clamp<int64_t>(q[a], 0, last_cell_[a]);
            first = std::max(first, std::abs(q[a] - toward));
            last = std::max(last, std::max(std::abs(q[a]), std::abs(q[a] - last_cell_[a])));
        }
        double best = std::numeric_limits<double>::infinity();
        for (int64_t shell = first; shell <= last; ++shell) {
            if (shell >= 2) {
                // Any point in an unvisited cell is at least (shell-1)*cell_ away.
                const double bound = static_cast<double>(shell - 1) * cell_;
                if (best <= bound * bound) return best;
            }
            visit_shell(q[0], q[1], q[2], shell, x, y, z, best);
        }
        return best;
    }

private:
    int64_t cell_index(double v, int axis) const {
        return static_cast<int64_t>(std::floor((v - origin_[axis]) / cell_));
    }
    static uint64_t key(int64_t i, int64_t j, int64_t k) {
        const uint64_t b = 1ull << 20;  // offset so negatives pack cleanly
        return ((static_cast<uint64_t>(i) + b) << 42) | ((static_cast<uint64_t>(j) + b) << 21) |
               (static_cast<uint64_t>(k) + b);
    }

    void scan_cell(int64_t i, int64_t j, int64_t k, double x, double y, double z,
                   double& best) const {
        const auto it = cells_.find(key(i, j, k));
        if (it == cells_.end()) return;
        for (uint32_t idx : it->second) {
            best = std::min(best, sq_dist3(x, y, z, pts_->x(idx), pts_->y(idx), pts_->z(idx)));
        }
    }

    void visit_shell(int64_t ci, int64_t cj, int64_t ck, int64_t r, double x, double y, double z,
                     double& best) const {
        if (r == 0) {
            scan_cell(ci, cj, ck, x, y, z, best);
            return;
        }
        for (int64_t di = -r; di <= r; ++di) {
            for (int64_t dj = -r; dj <= r; ++dj) {
                if (std::max(std::abs(di), std::abs(dj)) == r) {
                    for (int64_t dk = -r; dk <= r; ++dk)
                        scan_cell(ci + di, cj + dj, ck + dk, x, y, z, best);
                } else {
                    scan_cell(ci + di, cj + dj, ck - r, x, y, z, best);
                    scan_cell(ci + di, cj + dj, ck + r, x, y, z, best);
                }
            }
        }
    }

    const PointCloud* pts_;
    double cell_ = 1.0;
    std::array<double, 3> origin_{};
    std::array<int64_t, 3> last_cell_{};
    std::unordered_map<uint64_t, std::vector<uint32_t>> cells_;
};

}  // namespace detail

namespace detail {

// (squared nearest-radar distance, original index) per lidar point.
inline std::vector<std::pair<double, uint32_t>> nearest_radar_distances(const PointCloud& lidar,
                                                                        const PointCloud& radar) {
    NearestPointGrid grid(radar);
    std::vector<std::pair<double, uint32_t>> order(lidar.size());
    for (size_t i = 0; i < lidar.size(); ++i)
        order[i] = {grid.nearest_sq_dist(lidar.x(i), lidar.y(i), lidar.z(i)),
                    static_cast<uint32_t>(i)};
    return order;
}

// Gathers the first k of a (distance, index)-ordered ranking in original order.
inline PointCloud gather_ranked_prefix(const PointCloud& pc,
                                       const std::vector<std::pair<double, uint32_t>>& ranked,
                                       size_t k) {
    std::vector<size_t> keep(k);
    for (size_t i = 0; i < k; ++i) keep[i] = ranked[i].second;
    std::sort(keep.begin(), keep.end());
    return gather_rows(pc, keep);
}

}  // namespace detail

// Per-lidar-point distance to the nearest radar point (xyz only); keeps the
// floor(share*N) lidar points with the smallest distances, ties broken by
// lower original index, output in original order. Grid-accelerated but
// bitwise identical to the O(N*M) brute force.
inline PointCloud knn_sample(const PointCloud& lidar, const PointCloud& radar, double share) {
    if (radar.size() == 0)
        throw std::invalid_argument("knn sampling needs at least one radar point");
    if (!(share > 0.0) || share > 1.0)
        throw std::invalid_argument("share must be in (0, 1]");
    const size_t n = lidar.size();
    const size_t k = std::min(n, static_cast<size_t>(std::floor(share * static_cast<double>(n))));
    auto order = detail::nearest_radar_distances(lidar, radar);
    std::nth_element(order.begin(), order.begin() + static_cast<ptrdiff_t>(k), order.end());
    return detail::gather_ranked_prefix(lidar, order, k);
}

// One voxel-based halving step:
//   1. voxelize (grid index = floor(coord / voxel_size) per axis);
//   2. find the largest per-voxel quota such that voxels holding more than
//      the quota jointly contain at least 0.75*N points;
//   3. in each such voxel keep quota random points, the rest go to an
//      overflow pool;
//   4. remove N - keep_count random points, drawn from the pool first and
//      uniformly from the kept points if the pool runs short.
// Default keep_count is N - floor(N/2). Requires N >= 2.
inline PointCloud voxel_sample_step(const PointCloud& pc, std::array<double, 3> voxel_size,
                                    uint64_t seed,
                                    std::optional<size_t> keep_count = std::nullopt) {
    const size_t n = pc.size();
    if (n < 2) throw std::invalid_argument("voxel sampling step needs at least 2 points");
    for (double v : voxel_size)
        if (!(v > 0.0)) throw std::invalid_argument("voxel size must be positive");
    const size_t keep_n = std::min(n, keep_count.value_or(n - n / 2));
    const size_t remove_n = n - keep_n;

    // Voxels in first-occurrence order so iteration is platform-independent.
    std::unordered_map<uint64_t, size_t> voxel_id;
    std::vector<std::vector<size_t>> members;
    voxel_id.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        const int64_t vx = static_cast<int64_t>(std::floor(pc.x(i) / voxel_size[0]));
        const int64_t vy = static_cast<int64_t>(std::floor(pc.y(i) / voxel_size[1]));
        const int64_t vz = static_cast<int64_t>(std::floor(pc.z(i) / voxel_size[2]));
        const uint64_t b = 1ull << 20;
        const uint64_t key = ((static_cast<uint64_t>(vx) + b) << 42) |
                             ((static_cast<uint64_t>(vy) + b) << 21) |
                             (static_cast<uint64_t>(vz) + b);
        auto [it, fresh] = voxel_id.try_emplace(key, members.size());
        if (fresh) members.emplace_back();
        members[it->second].push_back(i);
    }

    // Largest quota q such that voxels with count > q still hold >= 0.75*N
    // points. q = 0 always qualifies (every occupied voxel has count > 0).
    size_t max_count = 0;
    for (const auto& m : members) max_count = std::max(max_count, m.size());
    std::vector<size_t> voxels_with_count(max_count + 1, 0);
    for (const auto& m : members) voxels_with_count[m.size()] += 1;
    size_t quota = 0;
    size_t points_above = n;  // points in voxels with count > q
    for (size_t q = 1; q <= max_count; ++q) {
        points_above -= q * voxels_with_count[q];
        if (4 * points_above >= 3 * n)
            quota = q;
        else
            break;
    }

    Rng rng(seed);
    std::vector<size_t> pool;  // overflow beyond the per-voxel quota
    std::vector<uint8_t> in_pool(n, 0);
    for (const auto& m : members) {
        if (m.size() <= quota) continue;
        // Random quota-sized keeper subset; the rest overflow into the pool.
        std::vector<size_t> local = m;
        for (size_t i = 0; i < quota; ++i) {
            const size_t j = i + static_cast<size_t>(rng.bounded(local.size() - i));
            std::swap(local[i], local[j]);
        }
        for (size_t i = quota; i < local.size(); ++i) {
            pool.push_back(local[i]);
            in_pool[local[i]] = 1;
        }
    }

    std::vector<uint8_t> removed(n, 0);
    size_t to_remove = remove_n;
    if (pool.size() >= to_remove) {
        for (size_t i = 0; i < to_remove; ++i) {
            const size_t j = i + static_cast<size_t>(rng.bounded(pool.size() - i));
            std::swap(pool[i], pool[j]);
            removed[pool[i]] = 1;
        }
    } else {
        // Pool shortfall: drain it, then remove the remainder uniformly from
        // the kept points so the halving contract still holds.
        for (size_t i : pool) removed[i] = 1;
        to_remove -= pool.size();
        std::vector<size_t> kept;
        kept.reserve(n - pool.size());
        for (size_t i = 0; i < n; ++i)
            if (!in_pool[i]) kept.push_back(i);
        for (size_t i = 0; i < to_remove; ++i) {
            const size_t j = i + static_cast<size_t>(rng.bounded(kept.size() - i));
            std::swap(kept[i], kept[j]);
            removed[kept[i]] = 1;
        }
    }

    std::vector<size_t> keep;
    keep.reserve(keep_n);
    for (size_t i = 0; i < n; ++i)
        if (!removed[i]) keep.push_back(i);
    return detail::gather_rows(pc, keep);
}

// Fractions 1, 1/2, ..., 1/2^depth with the matching thinned clouds. Voxel
// and random chains apply one more halving step per stage; knn reselects
// against the original cloud at share 1/2^k. Stage counts are floor(N/2^k).
struct ThinOutSequence {
    struct Entry {
        unsigned halvings = 0;  // fraction = 1/2^halvings
        PointCloud cloud;
        double fraction() const { return std::ldexp(1.0, -static_cast<int>(halvings)); }
        std::string fraction_string() const {
            return halvings == 0 ? "1" : "1/" + std::to_string(1ull << halvings);
        }
    };
    std::vector<Entry> entries;
};

inline ThinOutSequence thin_out_sequence(const PointCloud& cloud, const ThinOutMethod& method,
                                         unsigned depth, uint64_t seed,
                                         const PointCloud* radar = nullptr) {
    if (depth < 1 || depth > 62) throw std::invalid_argument("thin-out depth must be in [1, 62]");
    if (method.kind == ThinOutMethod::Kind::Knn && (radar == nullptr || radar->size() == 0))
        throw std::invalid_argument("knn thin-out needs a radar cloud");
    ThinOutSequence seq;
    seq.entries.push_back({0, cloud});
    std::vector<std::pair<double, uint32_t>> knn_order;
    if (method.kind == ThinOutMethod::Kind::Knn) {
        knn_order = detail::nearest_radar_distances(cloud, *radar);
        std::sort(knn_order.begin(), knn_order.end());
    }
    for (unsigned k = 1; k <= depth; ++k) {
        const PointCloud& prev = seq.entries.back().cloud;
        const uint64_t step_seed = derive_seed(seed, "thin-out/" + std::to_string(k));
        PointCloud next;
        switch (method.kind) {
            case ThinOutMethod::Kind::Random:
                next = random_sample(prev, 0.5, step_seed);
                break;
            case ThinOutMethod::Kind::Knn:
                next = detail::gather_ranked_prefix(cloud, knn_order, cloud.size() >> k);
                break;
            case ThinOutMethod::Kind::Voxel:
                next = voxel_sample_step(prev, method.voxel_size, step_seed, prev.size() / 2);
                break;
        }
        seq.entries.push_back({k, std::move(next)});
    }
    return seq;
}

}  // namespace l2r
