#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "l2r/core.hpp"
#include "l2r/distill.hpp"
#include "l2r/eval.hpp"
#include "l2r/mixing.hpp"

namespace l2r {

// All binary payloads are headerless little-endian float32.
static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

namespace detail {

inline std::vector<float> read_f32_payload(const std::string& path) {
    std::ifstream is(path, std::ios::binary | std::ios::ate);
    if (!is) throw std::runtime_error("cannot open " + path);
    const std::streamsize bytes = is.tellg();
    if (bytes % 4 != 0)
        throw std::runtime_error(path + ": size is not a multiple of 4 bytes");
    std::vector<float> out(static_cast<size_t>(bytes) / 4);
    is.seekg(0);
    if (!out.empty()) is.read(reinterpret_cast<char*>(out.data()), bytes);
    if (!is) throw std::runtime_error("failed reading " + path);
    return out;
}

inline void write_f32_payload(const std::string& path, const std::vector<float>& values) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path);
    if (!values.empty())
        os.write(reinterpret_cast<const char*>(values.data()),
                 static_cast<std::streamsize>(values.size() * 4));
    if (!os) throw std::runtime_error("failed writing " + path);
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << j.dump(2) << "\n";
    if (!os) throw std::runtime_error("failed writing " + path);
}

inline nlohmann::json read_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
    return j;
}

}  // namespace detail

// --- point clouds (KITTI-style .bin, row-major N x C float32) --------------

inline std::string cloud_sidecar_path(const std::string& path) { return path + ".json"; }

inline void write_cloud_bin(const std::string& path, const PointCloud& pc,
                            bool with_sidecar = true) {
    detail::write_f32_payload(path, pc.data);
    if (with_sidecar) {
        nlohmann::json meta;
        meta["channels"] = pc.channel_count();
        meta["schema"] = pc.schema;
        meta["source"] = to_string(pc.source);
        detail::write_json_file(cloud_sidecar_path(path), meta);
    }
}

// Reads a cloud; channel layout comes from the sidecar when present, then
// from a configured fallback schema, then from a bare channel count.
inline PointCloud read_cloud_bin(const std::string& path,
                                 std::optional<size_t> fallback_channels = std::nullopt,
                                 Source fallback_source = Source::Lidar,
                                 const std::vector<std::string>* fallback_schema = nullptr) {
    PointCloud pc;
    const std::string sidecar = cloud_sidecar_path(path);
    if (std::filesystem::exists(sidecar)) {
        const nlohmann::json meta = detail::read_json_file(sidecar);
        pc.schema = meta.at("schema").get<std::vector<std::string>>();
        pc.source = source_from_string(meta.at("source").get<std::string>());
    } else if (fallback_channels || fallback_schema) {
        if (fallback_schema && (!fallback_channels || fallback_schema->size() == *fallback_channels)) {
            pc.schema = *fallback_schema;
        } else {
            if (*fallback_channels < 3)
                throw std::runtime_error("need at least 3 channels (x,y,z)");
            pc.schema = {"x", "y", "z"};
            for (size_t i = 3; i < *fallback_channels; ++i)
                pc.schema.push_back("c" + std::to_string(i));
        }
        if (pc.schema.size() < 3) throw std::runtime_error("need at least 3 channels (x,y,z)");
        pc.source = fallback_source;
    } else {
        throw std::runtime_error(path + ": no sidecar metadata; pass the channel count");
    }
    pc.data = detail::read_f32_payload(path);
    if (pc.data.size() % pc.schema.size() != 0)
        throw std::runtime_error(path + ": payload does not divide into " +
                                 std::to_string(pc.schema.size()) + " channels");
    return pc;
}

// --- box lists --------------------------------------------------------------

struct BoxRecord {
    std::string frame_id;
    Box3D box;
};

inline nlohmann::json box_to_json(const BoxRecord& rec,
                                  const std::vector<std::string>& class_names) {
    nlohmann::json j;
    j["id"] = rec.frame_id;
    const size_t label = static_cast<size_t>(rec.box.label);
    j["class"] = label < class_names.size() ? nlohmann::json(class_names[label])
                                            : nlohmann::json(rec.box.label);
    j["center"] = {rec.box.center[0], rec.box.center[1], rec.box.center[2]};
    j["dims"] = {rec.box.dims[0], rec.box.dims[1], rec.box.dims[2]};
    j["yaw"] = rec.box.yaw;
    if (rec.box.score) j["score"] = *rec.box.score;
    return j;
}

inline void write_boxes_json(const std::string& path, const std::vector<BoxRecord>& records,
                             const std::vector<std::string>& class_names) {
    nlohmann::json arr = nlohmann::json::array();
    for (const BoxRecord& r : records) arr.push_back(box_to_json(r, class_names));
    detail::write_json_file(path, arr);
}

inline std::vector<BoxRecord> read_boxes_json(const std::string& path,
                                              const std::vector<std::string>& class_names) {
    const nlohmann::json arr = detail::read_json_file(path);
    if (!arr.is_array()) throw std::runtime_error(path + ": expected a JSON array of boxes");
    std::vector<BoxRecord> out;
    for (const nlohmann::json& j : arr) {
        BoxRecord rec;
        rec.frame_id = j.value("id", std::string());
        if (j.at("class").is_string()) {
            const std::string name = j.at("class").get<std::string>();
            const auto it = std::find(class_names.begin(), class_names.end(), name);
            if (it == class_names.end())
                throw std::runtime_error(path + ": unknown class '" + name + "'");
            rec.box.label = static_cast<int>(it - class_names.begin());
        } else {
            rec.box.label = j.at("class").get<int>();
        }
        const auto center = j.at("center");
        const auto dims = j.at("dims");
        for (int a = 0; a < 3; ++a) {
            rec.box.center[static_cast<size_t>(a)] = center.at(static_cast<size_t>(a)).get<double>();
            rec.box.dims[static_cast<size_t>(a)] = dims.at(static_cast<size_t>(a)).get<double>();
        }
        rec.box.yaw = j.at("yaw").get<double>();
        if (j.contains("score")) rec.box.score = j.at("score").get<double>();
        out.push_back(std::move(rec));
    }
    return out;
}

inline void write_boxes_csv(const std::string& path, const std::vector<BoxRecord>& records,
                            const std::vector<std::string>& class_names) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << "id,class,x,y,z,l,w,h,yaw,score\n";
    for (const BoxRecord& r : records) {
        const size_t label = static_cast<size_t>(r.box.label);
        os << r.frame_id << ','
           << (label < class_names.size() ? class_names[label] : std::to_string(r.box.label));
        char buf[256];
        std::snprintf(buf, sizeof(buf), ",%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", r.box.center[0],
                      r.box.center[1], r.box.center[2], r.box.dims[0], r.box.dims[1],
                      r.box.dims[2], r.box.yaw);
        os << buf;
        if (r.box.score) {
            std::snprintf(buf, sizeof(buf), ",%.9g", *r.box.score);
            os << buf;
        }
        os << '\n';
    }
    if (!os) throw std::runtime_error("failed writing " + path);
}

// --- tensors (float32 payload + JSON sidecar with shape/role) ---------------

struct Tensor {
    std::vector<int> shape;
    std::vector<float> values;
    std::string role;  // "cls_map" | "feature_map" | "regression" | free-form
    std::optional<MapGeometry> geom;
};

inline void write_tensor(const std::string& path, const Tensor& t) {
    detail::write_f32_payload(path, t.values);
    nlohmann::json meta;
    meta["shape"] = t.shape;
    meta["role"] = t.role;
    if (t.geom)
        meta["geometry"] = {{"origin", {t.geom->origin_x, t.geom->origin_y}},
                            {"cell", {t.geom->cell_x, t.geom->cell_y}}};
    detail::write_json_file(path + ".json", meta);
}

inline Tensor read_tensor(const std::string& path) {
    Tensor t;
    const nlohmann::json meta = detail::read_json_file(path + ".json");
    t.shape = meta.at("shape").get<std::vector<int>>();
    t.role = meta.value("role", std::string());
    if (meta.contains("geometry")) {
        MapGeometry g;
        g.origin_x = meta["geometry"]["origin"][0].get<double>();
        g.origin_y = meta["geometry"]["origin"][1].get<double>();
        g.cell_x = meta["geometry"]["cell"][0].get<double>();
        g.cell_y = meta["geometry"]["cell"][1].get<double>();
        t.geom = g;
    }
    t.values = detail::read_f32_payload(path);
    size_t expect = 1;
    for (int d : t.shape) {
        if (d < 1) throw std::runtime_error(path + ": tensor dims must be >= 1");
        expect *= static_cast<size_t>(d);
    }
    if (expect != t.values.size())
        throw std::runtime_error(path + ": payload does not match the sidecar shape");
    return t;
}

inline DenseMap tensor_to_dense_map(const Tensor& t) {
    if (t.shape.size() != 3)
        throw std::runtime_error("dense-map tensors must have shape [H, W, C]");
    DenseMap m = DenseMap::zeros(t.shape[0], t.shape[1], t.shape[2]);
    for (size_t i = 0; i < t.values.size(); ++i) m.data[i] = static_cast<double>(t.values[i]);
    m.geom = t.geom;
    return m;
}

// --- pillar files (JSON index + binary payload) ------------------------------

inline void write_pillars(const std::string& path, const PillarGrid& grid) {
    std::vector<float> payload;
    nlohmann::json cells = nlohmann::json::array();
    size_t offset = 0;
    for (const PillarGrid::Cell& c : grid.cells) {
        const size_t count = c.count(grid.schema.size());
        cells.push_back({{"i", c.ix}, {"j", c.iy}, {"count", count}, {"offset", offset}});
        payload.insert(payload.end(), c.rows.begin(), c.rows.end());
        offset += count;
    }
    detail::write_f32_payload(path, payload);
    nlohmann::json meta;
    meta["pillar_size"] = {grid.params.pillar_dx, grid.params.pillar_dy};
    meta["max_points"] = grid.params.max_points;
    meta["range"] = {{"min", grid.params.range.min}, {"max", grid.params.range.max}};
    meta["schema"] = grid.schema;
    meta["cells"] = cells;
    detail::write_json_file(path + ".json", meta);
}

// --- eval config / reports ----------------------------------------------------

inline EvalConfig read_eval_config(const std::string& path) {
    const nlohmann::json j = detail::read_json_file(path);
    EvalConfig cfg;
    if (j.contains("classes")) cfg.class_names = j["classes"].get<std::vector<std::string>>();
    if (j.contains("iou_thresholds"))
        cfg.iou_thresholds = j["iou_thresholds"].get<std::vector<double>>();
    if (j.contains("interpolation"))
        cfg.interp = ap_interp_from_string(j["interpolation"].get<std::string>());
    if (j.contains("range_bins")) {
        cfg.range_bins.clear();
        for (const auto& b : j["range_bins"])
            cfg.range_bins.emplace_back(b.at(0).get<double>(), b.at(1).get<double>());
    }
    validate(cfg);
    return cfg;
}

inline nlohmann::json eval_report_json(const EvalReport& report) {
    nlohmann::json out;
    out["classes"] = report.class_names;
    nlohmann::json bins = nlohmann::json::array();
    for (size_t b = 0; b < report.bins.size(); ++b) {
        nlohmann::json jb;
        jb["range"] = {report.bins[b].first, report.bins[b].second};
        jb["map"] = report.bin_map[b] ? nlohmann::json(*report.bin_map[b]) : nlohmann::json();
        nlohmann::json per_class = nlohmann::json::array();
        for (size_t c = 0; c < report.class_names.size(); ++c) {
            const EvalReport::Cell& cell = report.cell(c, b);
            nlohmann::json jc;
            jc["class"] = report.class_names[c];
            jc["gt"] = cell.gt_count;
            jc["tp"] = cell.tp;
            jc["fp"] = cell.fp;
            jc["fn"] = cell.fn;
            jc["ap"] = cell.gt_count > 0 ? nlohmann::json(cell.ap) : nlohmann::json();
            per_class.push_back(jc);
        }
        jb["per_class"] = per_class;
        bins.push_back(jb);
    }
    out["bins"] = bins;
    return out;
}

inline nlohmann::json loss_report_json(const LossReport& r, const LossWeights& w) {
    nlohmann::json out;
    out["l_reg"] = r.reg;
    out["l_cls"] = r.cls;
    out["l_feat"] = r.feat;
    out["l_l-reg"] = r.logit_reg;
    out["l_l-cls"] = r.logit_cls;
    out["joint"] = r.joint;
    out["weights"] = {{"reg", w.reg},
                      {"cls", w.cls},
                      {"feat", w.feat},
                      {"l-reg", w.logit_reg},
                      {"l-cls", w.logit_cls}};
    return out;
}

inline LossWeights read_loss_weights(const std::string& path) {
    const nlohmann::json j = detail::read_json_file(path);
    LossWeights w;
    w.reg = j.value("reg", w.reg);
    w.cls = j.value("cls", w.cls);
    w.feat = j.value("feat", w.feat);
    w.logit_reg = j.value("l-reg", w.logit_reg);
    w.logit_cls = j.value("l-cls", w.logit_cls);
    return w;
}

}  // namespace l2r
