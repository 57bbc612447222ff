#include "kdcode/report.hpp"

#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>

#include "json.hpp"
#include "kdcode/codes.hpp"
#include "kdcode/composer.hpp"

namespace kdc {

using json = nlohmann::ordered_json;

std::optional<std::string> echo_value(const ConfigEcho& echo, const std::string& key) {
    for (const auto& [k, v] : echo) {
        if (k == key) return v;
    }
    return std::nullopt;
}

namespace {

std::string require(const ConfigEcho& echo, const std::string& key) {
    auto v = echo_value(echo, key);
    if (!v) throw Error("report: config echo lacks '" + key + "'");
    return *v;
}

std::uint64_t require_count(const ConfigEcho& echo, const std::string& key) {
    const auto s = require(echo, key);
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
        v = std::stoull(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != s.size() || s.empty() || s[0] == '-') throw Error("report: '" + key + "' is not a count: " + s);
    return v;
}

bool flag(const ConfigEcho& echo, const std::string& key) {
    auto v = echo_value(echo, key);
    return v && (*v == "true" || *v == "1" || *v == "yes");
}

}  // namespace

Accounting account(const ConfigEcho& echo) {
    const auto layer = require(echo, "layer");
    const std::uint64_t n = require_count(echo, "vocab");
    const std::size_t d = require_count(echo, "dim");
    const auto conv = echo_value(echo, "full_bits").value_or("table") == "text" ? FullBitsConvention::Text
                                                                                : FullBitsConvention::Table;
    Accounting a;
    a.full_bits = full_layer_bits(n, d, conv);
    if (layer == "full") {
        a.params = n * d;
        a.bits = a.full_bits;
    } else if (layer == "kd") {
        const std::size_t k = require_count(echo, "K"), dims = require_count(echo, "D"),
                          dc = require_count(echo, "code_dim");
        ComposerSpec spec;
        spec.kind = parse_composer(require(echo, "composer"));
        if (auto h = echo_value(echo, "hidden")) spec.hidden = require_count(echo, "hidden");
        spec.lstm_tied_output_gate = flag(echo, "lstm_tied_gate");
        const auto c = composer_param_count(dc, d, spec);
        a.params = embedding_params_count(k, dims, dc, c);
        a.bits = kd_layer_bits(n, k, dims, dc, c);
    } else if (layer == "pq") {
        const std::size_t m = require_count(echo, "pq.subspaces"), k = require_count(echo, "pq.centroids");
        if (m == 0 || d % m != 0) throw Error("report: pq.subspaces must divide dim");
        a.params = static_cast<std::uint64_t>(k) * d;
        a.bits = kd_layer_bits(n, k, m, d / m, 0);
    } else if (layer == "scalar") {
        const auto b = require_count(echo, "scalar.bits");
        if (b < 1 || b > 32) throw Error("report: scalar.bits must be in [1, 32]");
        a.params = 2;
        a.bits = kd_layer_bits(n, std::size_t{1} << b, d, 0, 2);
    } else if (layer == "low-rank") {
        const std::size_t r = require_count(echo, "lowrank.rank");
        a.params = n * r + static_cast<std::uint64_t>(r) * d;
        a.bits = full_layer_bits(n, r) + full_layer_bits(r, d);
    } else {
        throw Error("report: unknown layer family '" + layer + "'");
    }
    return a;
}

void apply_accounting(RunReport& r) {
    const auto a = account(r.config);
    r.params = a.params;
    r.bits = a.bits;
    r.full_bits = a.full_bits;
    r.compression_ratio = a.bits ? static_cast<double>(a.full_bits) / static_cast<double>(a.bits) : 0.0;
}

void check_accounting(const RunReport& r) {
    const auto a = account(r.config);
    if (a.params != r.params || a.bits != r.bits || a.full_bits != r.full_bits) {
        throw Error("report '" + r.method + "': recorded size (" + std::to_string(r.params) + " params, " +
                    std::to_string(r.bits) + " bits) disagrees with the configuration (" + std::to_string(a.params) +
                    " params, " + std::to_string(a.bits) + " bits)");
    }
}

// ---------------------------------------------------------------------------

namespace {

void put(json& j, const char* key, const std::optional<double>& v) {
    if (v)
        j[key] = *v;
    else
        j[key] = nullptr;
}

std::optional<double> get(const json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    return it->get<double>();
}

}  // namespace

std::string report_line(const RunReport& r) {
    json j;
    j["method"] = r.method;
    json cfg = json::object();
    for (const auto& [k, v] : r.config) cfg[k] = v;
    j["config"] = cfg;
    j["params"] = r.params;
    j["bits"] = r.bits;
    j["full_bits"] = r.full_bits;
    j["compression_ratio"] = r.compression_ratio;
    put(j, "task_loss", r.task_loss);
    put(j, "accuracy", r.accuracy);
    put(j, "reconstruction_error", r.reconstruction_error);
    put(j, "nn_overlap", r.nn_overlap);
    put(j, "wall_seconds", r.wall_seconds);
    return j.dump();
}

RunReport parse_report_line(const std::string& line) {
    json j;
    try {
        j = json::parse(line);
        RunReport r;
        r.method = j.at("method").get<std::string>();
        for (const auto& [k, v] : j.at("config").items()) r.config.emplace_back(k, v.get<std::string>());
        r.params = j.at("params").get<std::uint64_t>();
        r.bits = j.at("bits").get<std::uint64_t>();
        r.full_bits = j.at("full_bits").get<std::uint64_t>();
        r.compression_ratio = j.at("compression_ratio").get<double>();
        r.task_loss = get(j, "task_loss");
        r.accuracy = get(j, "accuracy");
        r.reconstruction_error = get(j, "reconstruction_error");
        r.nn_overlap = get(j, "nn_overlap");
        r.wall_seconds = get(j, "wall_seconds");
        return r;
    } catch (const json::exception& e) {
        throw Error(std::string("report: malformed record: ") + e.what());
    }
}

void write_reports(std::ostream& os, const std::vector<RunReport>& reports) {
    for (const auto& r : reports) os << report_line(r) << '\n';
}

std::vector<RunReport> read_reports(std::istream& is) {
    std::vector<RunReport> out;
    std::string line;
    while (std::getline(is, line)) {
        if (!line.empty()) out.push_back(parse_report_line(line));
    }
    return out;
}

void save_reports(const std::string& path, const std::vector<RunReport>& reports) {
    std::ofstream os(path);
    if (!os) throw Error("cannot write " + path);
    write_reports(os, reports);
}

std::vector<RunReport> load_reports(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot read " + path);
    return read_reports(is);
}

// ---------------------------------------------------------------------------

namespace {

const char* const kMissing = "-";

std::string fixed(std::optional<double> v, int precision) {
    if (!v) return kMissing;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", precision, *v);
    return buf;
}

std::string grouped(std::uint64_t v) {
    std::string s = std::to_string(v);
    for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
    return s;
}

}  // namespace

void write_table(std::ostream& os, const std::vector<RunReport>& reports) {
    const std::vector<std::string> head{"method", "params", "bits", "bits%", "ratio", "loss", "accuracy",
                                        "recon", "nn", "seconds"};
    std::vector<std::vector<std::string>> rows{head};
    for (const auto& r : reports) {
        const double pct = r.full_bits ? 100.0 * static_cast<double>(r.bits) / static_cast<double>(r.full_bits) : 0.0;
        rows.push_back({r.method, grouped(r.params), grouped(r.bits), fixed(pct, 2), fixed(r.compression_ratio, 1),
                        fixed(r.task_loss, 4),
                        r.accuracy ? fixed(*r.accuracy * 100.0, 2) : kMissing, fixed(r.reconstruction_error, 4),
                        fixed(r.nn_overlap, 3), fixed(r.wall_seconds, 1)});
    }
    std::vector<std::size_t> width(head.size(), 0);
    for (const auto& row : rows) {
        for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
    }
    for (const auto& row : rows) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            const std::string pad(width[c] - row[c].size(), ' ');
            if (c == 0)
                os << row[c] << pad;
            else
                os << "  " << pad << row[c];
        }
        os << '\n';
    }
}

}  // namespace kdc
