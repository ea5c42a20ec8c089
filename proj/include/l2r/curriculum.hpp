#pragma once

#include <cctype>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "l2r/rng.hpp"
#include "l2r/sampling.hpp"

namespace l2r {

enum class DataMode { Lidar, Radar, MixedRL };
enum class TrainMethod { SSTM, MSTM };
enum class KdVariant { None, Label, Logit, Feature, Joint };

inline const char* to_string(DataMode d) {
    switch (d) {
        case DataMode::Lidar: return "L";
        case DataMode::Radar: return "R";
        case DataMode::MixedRL: return "RL";
    }
    return "?";
}

inline const char* to_string(TrainMethod m) {
    return m == TrainMethod::SSTM ? "SSTM" : "MSTM";
}

inline const char* to_string(KdVariant k) {
    switch (k) {
        case KdVariant::None: return "none";
        case KdVariant::Label: return "lab";
        case KdVariant::Logit: return "log";
        case KdVariant::Feature: return "feat";
        case KdVariant::Joint: return "joint";
    }
    return "?";
}

// Canonical thin-out tokens of the training notation; the CLI uses the
// longer method names.
inline const char* notation_token(ThinOutMethod::Kind k) {
    switch (k) {
        case ThinOutMethod::Kind::Random: return "rand";
        case ThinOutMethod::Kind::Knn: return "knn";
        case ThinOutMethod::Kind::Voxel: return "vox";
    }
    return "?";
}

// Power-of-two lidar share 1/2^halvings.
struct ShareFraction {
    unsigned halvings = 0;
    double value() const { return std::ldexp(1.0, -static_cast<int>(halvings)); }
    std::string str() const {
        return halvings == 0 ? "1" : "1/" + std::to_string(1ull << halvings);
    }
    friend bool operator==(const ShareFraction&, const ShareFraction&) = default;
};

struct TrainingSpec {
    DataMode data = DataMode::Radar;
    TrainMethod method = TrainMethod::SSTM;
    // SSTM: share_start == share_end (single share); MSTM: start > end.
    std::optional<ShareFraction> share_start, share_end;
    std::optional<ThinOutMethod::Kind> thin_out;
    struct FineTune {
        KdVariant kd = KdVariant::None;  // target data is always radar
        friend bool operator==(const FineTune&, const FineTune&) = default;
    };
    std::optional<FineTune> fine_tune;
    friend bool operator==(const TrainingSpec&, const TrainingSpec&) = default;
};

// Parse error with the offending character position (0-based).
class NotationError : public std::invalid_argument {
public:
    NotationError(size_t pos, const std::string& what)
        : std::invalid_argument("notation error at " + std::to_string(pos) + ": " + what),
          position(pos) {}
    size_t position;
};

namespace detail {

class NotationParser {
public:
    explicit NotationParser(std::string_view text) : text_(text) {}

    TrainingSpec parse() {
        TrainingSpec spec;
        spec.data = parse_data();
        expect('^');
        spec.method = parse_method();
        if (peek() == '_') {
            const size_t share_pos = pos_;
            ++pos_;
            if (spec.data == DataMode::Radar)
                throw NotationError(share_pos, "radar-only data takes no lidar share");
            parse_share_block(spec);
        }
        if (!at_end() && (peek() == '-' || static_cast<unsigned char>(peek()) == 0xE2)) {
            parse_arrow();
            parse_fine_tune(spec);
        }
        if (!at_end()) throw NotationError(pos_, "unexpected trailing input");
        validate(spec);
        return spec;
    }

private:
    char peek() const { return pos_ < text_.size() ? text_[pos_] : '\0'; }
    bool at_end() const { return pos_ >= text_.size(); }
    bool consume(std::string_view token) {
        if (text_.substr(pos_, token.size()) == token) {
            pos_ += token.size();
            return true;
        }
        return false;
    }
    void expect(char c) {
        if (peek() != c)
            throw NotationError(pos_, std::string("expected '") + c + "'");
        ++pos_;
    }

    DataMode parse_data() {
        if (consume("RL")) return DataMode::MixedRL;
        if (consume("L")) return DataMode::Lidar;
        if (consume("R")) return DataMode::Radar;
        throw NotationError(pos_, "expected training data L, R or RL");
    }

    TrainMethod parse_method() {
        if (consume("MSTM")) return TrainMethod::MSTM;
        if (consume("SSTM")) return TrainMethod::SSTM;
        throw NotationError(pos_, "expected training method MSTM or SSTM");
    }

    ShareFraction parse_share() {
        const size_t start = pos_;
        if (!consume("1")) throw NotationError(pos_, "shares are written 1 or 1/2^k");
        if (peek() != '/' || !std::isdigit(static_cast<unsigned char>(
                                 pos_ + 1 < text_.size() ? text_[pos_ + 1] : '\0')))
            return {0};
        ++pos_;  // '/'
        uint64_t den = 0;
        const size_t den_pos = pos_;
        while (std::isdigit(static_cast<unsigned char>(peek()))) {
            den = den * 10 + static_cast<uint64_t>(peek() - '0');
            if (den > (1ull << 62)) throw NotationError(den_pos, "share denominator too large");
            ++pos_;
        }
        if (den < 2 || (den & (den - 1)) != 0)
            throw NotationError(start, "share must be a power of 1/2");
        unsigned halvings = 0;
        while ((1ull << halvings) < den) ++halvings;
        return {halvings};
    }

    void parse_share_block(TrainingSpec& spec) {
        const bool braced = peek() == '{';
        if (braced) ++pos_;
        spec.share_start = parse_share();
        if (peek() == '-' && text_.substr(pos_, 2) != "->") {
            ++pos_;
            spec.share_end = parse_share();
        } else {
            spec.share_end = spec.share_start;
        }
        if (peek() == '/') {
            ++pos_;
            spec.thin_out = parse_thin_out();
        }
        if (braced) expect('}');
    }

    ThinOutMethod::Kind parse_thin_out() {
        if (consume("rand")) return ThinOutMethod::Kind::Random;
        if (consume("knn")) return ThinOutMethod::Kind::Knn;
        if (consume("vox") || consume("v")) return ThinOutMethod::Kind::Voxel;
        throw NotationError(pos_, "expected thin-out method rand, knn or vox");
    }

    void parse_arrow() {
        if (consume("->")) return;
        if (consume("\xE2\x86\x92")) return;  // UTF-8 right arrow
        throw NotationError(pos_, "expected '->'");
    }

    void parse_fine_tune(TrainingSpec& spec) {
        const size_t target_pos = pos_;
        if (!consume("R")) throw NotationError(target_pos, "fine-tune target must be R");
        if (peek() == 'L')
            throw NotationError(target_pos, "fine-tune target must be radar-only");
        TrainingSpec::FineTune ft;
        if (peek() == '^') {
            ++pos_;
            ft.kd = parse_kd();
        }
        spec.fine_tune = ft;
    }

    KdVariant parse_kd() {
        std::string token;
        while (std::isalpha(static_cast<unsigned char>(peek()))) {
            token += static_cast<char>(std::tolower(static_cast<unsigned char>(peek())));
            ++pos_;
        }
        if (token == "lab") return KdVariant::Label;
        if (token == "log") return KdVariant::Logit;
        if (token == "feat") return KdVariant::Feature;
        if (token == "joint") return KdVariant::Joint;
        throw NotationError(pos_ - token.size(), "expected KD method lab, log, feat or joint");
    }

    void validate(const TrainingSpec& spec) {
        if (spec.data == DataMode::Radar) return;
        if (!spec.share_start)
            throw NotationError(text_.size(), "lidar-bearing data needs a lidar share");
        if (spec.method == TrainMethod::MSTM) {
            if (spec.share_start->halvings >= spec.share_end->halvings)
                throw NotationError(text_.size(), "MSTM needs a share range with start > end");
        } else if (spec.share_start != spec.share_end) {
            throw NotationError(text_.size(), "SSTM takes a single share, not a range");
        }
        if (spec.share_end->halvings > 0 && !spec.thin_out)
            throw NotationError(text_.size(), "shares below 1 need a thin-out method");
    }

    std::string_view text_;
    size_t pos_ = 0;
};

}  // namespace detail

inline TrainingSpec parse_notation(std::string_view text) {
    return detail::NotationParser(text).parse();
}

// Canonical form: data^METHOD_{share[/method]}[->R[^kd]].
inline std::string format_notation(const TrainingSpec& spec) {
    std::string out = to_string(spec.data);
    out += '^';
    out += to_string(spec.method);
    if (spec.share_start) {
        out += "_{";
        out += spec.share_start->str();
        if (spec.method == TrainMethod::MSTM) {
            out += '-';
            out += spec.share_end->str();
        }
        if (spec.thin_out) {
            out += '/';
            out += notation_token(*spec.thin_out);
        }
        out += '}';
    }
    if (spec.fine_tune) {
        out += "->R";
        if (spec.fine_tune->kd != KdVariant::None) {
            out += '^';
            out += to_string(spec.fine_tune->kd);
        }
    }
    return out;
}

struct DatasetRecipe {
    DataMode data = DataMode::Radar;
    std::optional<ShareFraction> lidar_share;
    std::optional<ThinOutMethod::Kind> thin_out;
    bool mixed() const { return data == DataMode::MixedRL; }

    std::string name() const {
        std::string out = to_string(data);
        if (lidar_share) {
            out += '_';
            out += lidar_share->str();
            if (thin_out) {
                out += '/';
                out += notation_token(*thin_out);
            }
        }
        return out;
    }
};

struct Stage {
    std::string name;
    DatasetRecipe recipe;
    int epochs = 0;
    bool early_stopping = false;
    KdVariant kd = KdVariant::None;
    int init_from = -1;  // stage index, -1 means fresh initialization
};

struct StagePlan {
    TrainingSpec spec;
    std::vector<Stage> stages;
    DatasetRecipe evaluation;
};

struct EpochsConfig {
    int initial = 125;  // first stage, trained to convergence with early stopping
    int refine = 30;    // every subsequent stage
};

// Expands a parsed spec into its stage chain. MSTM halves the share per
// stage; with a radar fine-tune target the second-to-last stage mixes radar
// with the thinned lidar (lidar-only pre-training switches to mixed data at
// the final fraction) and the last stage is radar-only.
inline StagePlan build_schedule(const TrainingSpec& spec, const EpochsConfig& epochs = {}) {
    StagePlan plan;
    plan.spec = spec;
    auto push = [&](DatasetRecipe recipe, KdVariant kd) {
        Stage st;
        st.recipe = recipe;
        st.name = recipe.name();
        st.kd = kd;
        st.init_from = plan.stages.empty() ? -1 : static_cast<int>(plan.stages.size()) - 1;
        st.epochs = plan.stages.empty() ? epochs.initial : epochs.refine;
        st.early_stopping = plan.stages.empty();
        plan.stages.push_back(std::move(st));
    };

    if (spec.data == DataMode::Radar) {
        push({DataMode::Radar, std::nullopt, std::nullopt}, KdVariant::None);
    } else if (spec.method == TrainMethod::SSTM) {
        push({spec.data, spec.share_start, spec.thin_out}, KdVariant::None);
    } else {
        for (unsigned h = spec.share_start->halvings; h <= spec.share_end->halvings; ++h) {
            DataMode mode = spec.data;
            if (spec.fine_tune && h == spec.share_end->halvings) mode = DataMode::MixedRL;
            push({mode, ShareFraction{h}, spec.thin_out}, KdVariant::None);
        }
    }
    if (spec.fine_tune)
        push({DataMode::Radar, std::nullopt, std::nullopt}, spec.fine_tune->kd);
    plan.evaluation = plan.stages.back().recipe;
    return plan;
}

struct ManifestPaths {
    std::string lidar_dir = "lidar";
    std::string radar_dir = "radar";
    std::string output_dir = "stages";
};

namespace detail {

inline std::string stage_dataset_dir(const ManifestPaths& paths, size_t index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "stage_%02zu", index);
    return paths.output_dir + "/" + buf;
}

}  // namespace detail

// Machine-readable manifest: per stage, the CLI invocations that materialize
// its dataset plus the weight-chaining edges. The thin-out seed is shared
// across stages so the per-stage clouds stay nested.
inline nlohmann::json manifest_json(const StagePlan& plan, const ManifestPaths& paths,
                                    uint64_t seed) {
    nlohmann::json out;
    out["schema_version"] = 1;
    out["notation"] = format_notation(plan.spec);
    out["seed"] = seed;
    const uint64_t thin_seed = derive_seed(seed, "thin-out");
    nlohmann::json stages = nlohmann::json::array();
    nlohmann::json edges = nlohmann::json::array();
    for (size_t i = 0; i < plan.stages.size(); ++i) {
        const Stage& st = plan.stages[i];
        nlohmann::json js;
        js["name"] = st.name;
        js["epochs"] = st.epochs;
        js["early_stopping"] = st.early_stopping;
        js["kd"] = st.kd == KdVariant::None ? nlohmann::json() : nlohmann::json(to_string(st.kd));
        js["init_from"] = st.init_from < 0 ? nlohmann::json() : nlohmann::json(st.init_from);
        if (st.init_from >= 0) edges.push_back({st.init_from, i});
        nlohmann::json recipe;
        recipe["data"] = to_string(st.recipe.data);
        recipe["lidar_share"] =
            st.recipe.lidar_share ? nlohmann::json(st.recipe.lidar_share->str()) : nlohmann::json();
        recipe["thin_out"] = st.recipe.thin_out ? nlohmann::json(notation_token(*st.recipe.thin_out))
                                                : nlohmann::json();
        recipe["mixed"] = st.recipe.mixed();
        js["recipe"] = recipe;

        nlohmann::json commands = nlohmann::json::array();
        std::string dataset_dir;
        const bool needs_thin =
            st.recipe.lidar_share && st.recipe.lidar_share->halvings > 0 && st.recipe.thin_out;
        if (st.recipe.data == DataMode::Radar) {
            dataset_dir = paths.radar_dir;
        } else {
            std::string lidar_src = paths.lidar_dir;
            if (needs_thin) {
                const std::string thinned = st.recipe.mixed()
                                                ? detail::stage_dataset_dir(paths, i) + "_lidar"
                                                : detail::stage_dataset_dir(paths, i);
                nlohmann::json cmd = nlohmann::json::array(
                    {"thin-out", "--method", to_string(*st.recipe.thin_out), "--share",
                     st.recipe.lidar_share->str(), "--seed", std::to_string(thin_seed)});
                if (*st.recipe.thin_out == ThinOutMethod::Kind::Knn) {
                    cmd.push_back("--radar");
                    cmd.push_back(paths.radar_dir);
                }
                cmd.push_back(lidar_src);
                cmd.push_back(thinned);
                commands.push_back(cmd);
                lidar_src = thinned;
            }
            if (st.recipe.mixed()) {
                dataset_dir = detail::stage_dataset_dir(paths, i);
                commands.push_back(
                    nlohmann::json::array({"mix", paths.radar_dir, lidar_src, dataset_dir}));
            } else {
                dataset_dir = lidar_src;
            }
        }
        js["dataset_dir"] = dataset_dir;
        js["commands"] = commands;
        stages.push_back(js);
    }
    out["stages"] = stages;
    out["init_edges"] = edges;
    nlohmann::json eval;
    eval["data"] = to_string(plan.evaluation.data);
    eval["lidar_share"] = plan.evaluation.lidar_share
                              ? nlohmann::json(plan.evaluation.lidar_share->str())
                              : nlohmann::json();
    eval["thin_out"] = plan.evaluation.thin_out
                           ? nlohmann::json(notation_token(*plan.evaluation.thin_out))
                           : nlohmann::json();
    out["evaluation"] = eval;
    return out;
}

inline void emit_manifest(const StagePlan& plan, const ManifestPaths& paths, uint64_t seed,
                          const std::string& out_path) {
    std::ofstream os(out_path);
    if (!os) throw std::runtime_error("cannot write manifest: " + out_path);
    os << manifest_json(plan, paths, seed).dump(2) << "\n";
    if (!os) throw std::runtime_error("failed writing manifest: " + out_path);
}

}  // namespace l2r
