#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace kdc {

/// Ordered key=value settings of a run, as given.
using ConfigEcho = std::vector<std::pair<std::string, std::string>>;

std::optional<std::string> echo_value(const ConfigEcho& echo, const std::string& key);

struct Accounting {
    std::uint64_t params = 0;
    std::uint64_t bits = 0;
    std::uint64_t full_bits = 0;
};

/// Embedding-layer size derived from the echo alone. The key `layer`
/// selects the family: full, kd, pq, scalar, low-rank. Every family needs
/// `vocab` and `dim`; kd needs K, D, code_dim, composer (and hidden,
/// lstm_tied_gate where relevant); pq needs pq.subspaces and pq.centroids;
/// scalar needs scalar.bits; low-rank needs lowrank.rank. A `full_bits`
/// key of "text" selects the 32 N (1 + d) convention.
Accounting account(const ConfigEcho& echo);

struct RunReport {
    std::string method;
    ConfigEcho config;
    std::uint64_t params = 0;
    std::uint64_t bits = 0;
    std::uint64_t full_bits = 0;
    /// full_bits / bits
    double compression_ratio = 0;
    std::optional<double> task_loss;
    std::optional<double> accuracy;
    std::optional<double> reconstruction_error;
    std::optional<double> nn_overlap;
    std::optional<double> wall_seconds;
};

/// Fills params, bits, full_bits and compression_ratio from the echo.
void apply_accounting(RunReport& report);
/// Throws when the stored figures disagree with those recomputed from the echo.
void check_accounting(const RunReport& report);

std::string report_line(const RunReport& report);
RunReport parse_report_line(const std::string& line);
void write_reports(std::ostream& os, const std::vector<RunReport>& reports);
std::vector<RunReport> read_reports(std::istream& is);
void save_reports(const std::string& path, const std::vector<RunReport>& reports);
std::vector<RunReport> load_reports(const std::string& path);

/// Aligned text table; absent metrics print as `-`.
void write_table(std::ostream& os, const std::vector<RunReport>& reports);

}  // namespace kdc
