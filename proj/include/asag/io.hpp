#pragma once

// File formats: flat key = value configs, samples/plan/sweep CSVs, JSON-lines
// traces, metric JSON, and checkpoints (manifest.json + one little-endian
// float64 blob per tensor).

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "asag/errors.hpp"
#include "asag/guidance.hpp"
#include "asag/metrics.hpp"
#include "asag/model.hpp"
#include "asag/tensor.hpp"

namespace asag::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr int checkpoint_version = 1;

/// Identity stamped into every output file.
struct Provenance {
    std::string config_hash;
    std::uint64_t seed = 0;
};

// ---- config ----------------------------------------------------------------

using ConfigMap = std::map<std::string, std::string>;

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

/// `key = value` per line; `#` starts a comment; blank lines ignored.
inline ConfigMap parse_config(std::istream& in, const std::string& origin = "<config>") {
    ConfigMap out;
    std::string line;
    for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw InputError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw InputError(origin + ":" + std::to_string(lineno) + ": empty key");
        out[key] = trim(line.substr(eq + 1));
    }
    return out;
}

inline ConfigMap load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open config file " + path.string());
    return parse_config(in, path.string());
}

/// FNV-1a 64 over the canonical `key=value\n` listing, as 16 hex digits.
inline std::string config_hash(const ConfigMap& cfg) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&](const std::string& s) {
        for (unsigned char ch : s) {
            h ^= ch;
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& [k, v] : cfg) {
        mix(k);
        mix("=");
        mix(v);
        mix("\n");
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

// ---- text helpers ------------------------------------------------------------

/// Shortest decimal that round-trips to the same double.
inline std::string fmt(double v) {
    char buf[32];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

inline std::ofstream open_out(const fs::path& path, bool binary = false) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
    if (!out) throw InputError("cannot write " + path.string());
    return out;
}

inline std::string provenance_comment(const Provenance& p) {
    return "# config_hash=" + p.config_hash + " seed=" + std::to_string(p.seed) + "\n";
}

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream is(line);
    while (std::getline(is, cell, ',')) out.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline double parse_double(const std::string& s, const std::string& where) {
    if (s.empty()) throw InputError(where + ": empty field");
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size()) throw InputError(where + ": not a number: '" + s + "'");
    return v;
}

inline std::size_t parse_index(const std::string& s, const std::string& where) {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
        throw InputError(where + ": not a non-negative integer: '" + s + "'");
    return static_cast<std::size_t>(std::stoull(s));
}

// ---- samples CSV -------------------------------------------------------------

inline void write_samples(const fs::path& path, const Tensor& samples, std::size_t tokens, const Provenance& p) {
    auto out = open_out(path);
    out << provenance_comment(p) << "chain_id,token_id,x,y\n";
    for (std::size_t r = 0; r < samples.rows(); ++r)
        out << r / tokens << ',' << r % tokens << ',' << fmt(samples(r, 0)) << ',' << fmt(samples(r, 1)) << '\n';
}

struct SampleTable {
    std::vector<std::size_t> chain, token;
    Tensor points;  // [rows, 2]
};

inline SampleTable read_samples(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open samples file " + path.string());
    SampleTable t;
    std::vector<double> xy;
    std::string line;
    bool header = false;
    for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const std::string where = path.string() + ":" + std::to_string(lineno);
        const auto cells = split_csv(line);
        if (!header) {
            if (cells != std::vector<std::string>{"chain_id", "token_id", "x", "y"})
                throw InputError(where + ": expected header 'chain_id,token_id,x,y'");
            header = true;
            continue;
        }
        if (cells.size() != 4) throw InputError(where + ": expected 4 fields, got " + std::to_string(cells.size()));
        t.chain.push_back(parse_index(cells[0], where));
        t.token.push_back(parse_index(cells[1], where));
        xy.push_back(parse_double(cells[2], where));
        xy.push_back(parse_double(cells[3], where));
    }
    if (!header) throw InputError(path.string() + ": missing header");
    if (xy.empty()) throw InputError(path.string() + ": no sample rows");
    const std::size_t n = xy.size() / 2;
    t.points = Tensor::matrix(n, 2, std::move(xy));
    return t;
}

// ---- numeric matrix CSV (plan inputs/outputs) ---------------------------------

/// Comma-separated rows of reals; `#` lines skipped. All rows equally long.
inline Tensor read_matrix(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open matrix file " + path.string());
    std::vector<double> vals;
    std::size_t cols = 0, rows = 0;
    std::string line;
    for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty() || line[0] == '#') continue;
        const std::string where = path.string() + ":" + std::to_string(lineno);
        const auto cells = split_csv(line);
        if (rows == 0) cols = cells.size();
        if (cells.size() != cols)
            throw InputError(where + ": expected " + std::to_string(cols) + " fields, got " + std::to_string(cells.size()));
        for (std::size_t c = 0; c < cells.size(); ++c)
            vals.push_back(parse_double(cells[c], where + ":" + std::to_string(c + 1)));
        ++rows;
    }
    if (rows == 0) throw InputError(path.string() + ": no data rows");
    return Tensor::matrix(rows, cols, std::move(vals));
}

inline void write_matrix(const fs::path& path, const Tensor& m, const Provenance& p) {
    auto out = open_out(path);
    out << provenance_comment(p);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) out << (j ? "," : "") << fmt(m(i, j));
        out << '\n';
    }
}

inline void write_json(const fs::path& path, const json& j) {
    auto out = open_out(path);
    out << j.dump(2) << '\n';
}

inline json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw InputError(path.string() + ": " + e.what());
    }
}

// ---- trace / metrics / sweep ---------------------------------------------------

inline json trace_record_json(const guidance::TraceRecord& r, guidance::Method m, const Provenance& p) {
    json j;
    j["chain"] = r.chain;
    j["step"] = r.step;
    j["t"] = r.t;
    j["method"] = guidance::to_string(m);
    j["delta_norm"] = r.delta_norm;
    j["plan_entropy"] = r.plan_entropy;
    j["base_entropy"] = r.base_entropy;
    if (m == guidance::Method::asag || m == guidance::Method::sink) j["sinkhorn_iterations"] = r.sinkhorn_iterations;
    j["config_hash"] = p.config_hash;
    j["seed"] = p.seed;
    return j;
}

inline void write_trace(const fs::path& path, const guidance::GuidanceTrace& trace, const Provenance& p) {
    auto out = open_out(path);
    for (const auto& r : trace.records) out << trace_record_json(r, trace.method, p).dump() << '\n';
}

inline json report_json(const metrics::MetricReport& r, const Provenance& p) {
    json j;
    j["energy_distance"] = r.energy_distance;
    j["mode_coverage"] = r.mode_coverage;
    j["mean_plan_entropy"] = r.mean_plan_entropy;
    if (!r.per_scale.empty()) {
        j["per_scale"] = json::array();
        for (const auto& row : r.per_scale)
            j["per_scale"].push_back({{"scale", row.scale},
                                      {"energy_distance", row.energy_distance},
                                      {"mode_coverage", row.mode_coverage},
                                      {"mean_plan_entropy", row.mean_plan_entropy}});
    }
    j["config_hash"] = p.config_hash;
    j["seed"] = p.seed;
    return j;
}

inline void write_sweep(const fs::path& path, const std::vector<metrics::ScaleRow>& rows, const Provenance& p) {
    auto out = open_out(path);
    out << provenance_comment(p) << "scale,energy_distance,mode_coverage,mean_plan_entropy\n";
    for (const auto& r : rows)
        out << fmt(r.scale) << ',' << fmt(r.energy_distance) << ',' << fmt(r.mode_coverage) << ','
            << fmt(r.mean_plan_entropy) << '\n';
}

inline void write_loss_curve(const fs::path& path, const std::vector<double>& loss, const Provenance& p) {
    auto out = open_out(path);
    out << provenance_comment(p) << "step,loss\n";
    for (std::size_t i = 0; i < loss.size(); ++i) out << i << ',' << fmt(loss[i]) << '\n';
}

// ---- checkpoints -------------------------------------------------------------

struct CheckpointMeta {
    std::string dataset;
    std::size_t steps = 0;
    double final_loss = 0.0;
    std::uint64_t seed = 0;
    std::string config_hash;
};

inline json model_config_json(const model::DenoiserConfig& c) {
    return {{"point_dim", c.point_dim}, {"tokens", c.tokens},       {"d_model", c.d_model},
            {"heads", c.heads},         {"layers", c.layers},       {"ff_hidden", c.ff_hidden},
            {"time_dim", c.time_dim},   {"num_classes", c.num_classes}, {"T", c.T},
            {"beta_start", c.beta_start}, {"beta_end", c.beta_end}};
}

inline model::DenoiserConfig model_config_from_json(const json& j) {
    model::DenoiserConfig c;
    c.point_dim = j.at("point_dim").get<std::size_t>();
    c.tokens = j.at("tokens").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.layers = j.at("layers").get<std::size_t>();
    c.ff_hidden = j.at("ff_hidden").get<std::size_t>();
    c.time_dim = j.at("time_dim").get<std::size_t>();
    c.num_classes = j.at("num_classes").get<std::size_t>();
    c.T = j.at("T").get<int>();
    c.beta_start = j.at("beta_start").get<double>();
    c.beta_end = j.at("beta_end").get<double>();
    return c;
}

inline std::string blob_name(const std::string& tensor) { return tensor + ".bin"; }

inline void write_blob(const fs::path& path, const Tensor& t) {
    auto out = open_out(path, true);
    for (double v : t.data()) {
        auto bits = std::bit_cast<std::uint64_t>(v);
        unsigned char bytes[8];
        for (int b = 0; b < 8; ++b) bytes[b] = static_cast<unsigned char>(bits >> (8 * b));
        out.write(reinterpret_cast<const char*>(bytes), 8);
    }
    if (!out) throw InputError("failed writing " + path.string());
}

inline Tensor read_blob(const fs::path& path, const Shape& shape) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open tensor blob " + path.string());
    Tensor t(shape, 0.0);
    for (auto& v : t.storage()) {
        unsigned char bytes[8];
        if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw InputError(path.string() + ": blob shorter than its shape");
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
        v = std::bit_cast<double>(bits);
    }
    if (in.peek() != std::char_traits<char>::eof()) throw InputError(path.string() + ": blob longer than its shape");
    return t;
}

/// Writes `dir/manifest.json` and one blob per tensor.
inline void save_checkpoint(const fs::path& dir, const model::DenoiserParams& params, const CheckpointMeta& meta) {
    fs::create_directories(dir);
    json m;
    m["format_version"] = checkpoint_version;
    m["dtype"] = "float64";
    m["byte_order"] = "little";
    m["model"] = model_config_json(params.config);
    m["metadata"] = {{"dataset", meta.dataset},
                     {"steps", meta.steps},
                     {"final_loss", meta.final_loss},
                     {"seed", meta.seed},
                     {"config_hash", meta.config_hash}};
    m["tensors"] = json::array();
    for (const auto& name : params.order) {
        const Tensor& t = params.at(name);
        m["tensors"].push_back({{"name", name}, {"shape", t.shape()}, {"file", blob_name(name)}});
        write_blob(dir / blob_name(name), t);
    }
    write_json(dir / "manifest.json", m);
}

struct Checkpoint {
    model::DenoiserParams params;
    CheckpointMeta meta;
};

inline Checkpoint load_checkpoint(const fs::path& dir) {
    const json m = read_json(dir / "manifest.json");
    try {
        if (m.at("format_version").get<int>() != checkpoint_version)
            throw InputError("unsupported checkpoint version " + m.at("format_version").dump());
        if (m.at("dtype").get<std::string>() != "float64") throw InputError("unsupported checkpoint dtype");
        Checkpoint ck;
        ck.params.config = model_config_from_json(m.at("model"));
        ck.params.config.validate();
        const auto& md = m.at("metadata");
        ck.meta.dataset = md.at("dataset").get<std::string>();
        ck.meta.steps = md.at("steps").get<std::size_t>();
        ck.meta.final_loss = md.at("final_loss").get<double>();
        ck.meta.seed = md.at("seed").get<std::uint64_t>();
        ck.meta.config_hash = md.at("config_hash").get<std::string>();

        std::map<std::string, Shape> found;
        for (const auto& e : m.at("tensors")) {
            const auto name = e.at("name").get<std::string>();
            const auto shape = e.at("shape").get<Shape>();
            found[name] = shape;
            ck.params.order.push_back(name);
            ck.params.tensors.emplace(name, read_blob(dir / e.at("file").get<std::string>(), shape));
        }
        std::vector<std::string> bad;
        for (const auto& [name, shape] : model::parameter_layout(ck.params.config)) {
            auto it = found.find(name);
            if (it == found.end() || it->second != shape) bad.push_back(name);
        }
        if (!bad.empty() || found.size() != model::parameter_layout(ck.params.config).size()) {
            std::string msg = "checkpoint tensors do not match the model layout:";
            for (const auto& b : bad) msg += " " + b;
            throw InputError(msg);
        }
        return ck;
    } catch (const json::exception& e) {
        throw InputError((dir / "manifest.json").string() + ": " + e.what());
    } catch (const ContractError& e) {
        throw InputError((dir / "manifest.json").string() + ": " + e.what());
    }
}

/// Names of tensors whose shapes differ between a checkpoint and the model
/// a config describes.
inline std::vector<std::string> incompatible_tensors(const model::DenoiserParams& params,
                                                     const model::DenoiserConfig& expected) {
    std::vector<std::string> bad;
    for (const auto& [name, shape] : model::parameter_layout(expected)) {
        auto it = params.tensors.find(name);
        if (it == params.tensors.end() || it->second.shape() != shape) bad.push_back(name);
    }
    return bad;
}

}  // namespace asag::io
