#pragma once

// Command implementations shared by the CLI and the acceptance checks. Each
// run directory gets one manifest.json from which the run can be repeated.

#include "hynea/drift.hpp"
#include "hynea/genloop.hpp"
#include "hynea/report.hpp"
#include "hynea/stack.hpp"

#include "json.hpp"

#include <optional>
#include <string>
#include <vector>

namespace hynea::run {

/// Parses a JSON file; syntax errors become ConfigError with line and column.
nlohmann::json read_json(const std::string& path);
void write_json(const std::string& path, const nlohmann::json& j);

// --- train -------------------------------------------------------------------

struct TrainSpec {
    std::vector<stack::Component> components;  // empty: every missing component
    stack::StackConfig stack;
};

TrainSpec parse_train(const nlohmann::json& j, std::optional<std::uint64_t> seed);
std::vector<stack::TrainResult> execute_train(const TrainSpec& spec, const std::string& out, const stack::Log& log = {});

// --- generate ------------------------------------------------------------------

struct GenerateSpec {
    std::string stack_dir;
    std::size_t cases = 20;
    std::uint64_t master_seed = 77;
    gen::GenConfig generation;
    std::optional<gen::NoiseBaselineConfig> baseline;
    nlohmann::json expected_hashes;  // from a manifest; checked before running
};

GenerateSpec parse_generate(const nlohmann::json& j, std::optional<std::uint64_t> seed);
nlohmann::json to_json(const GenerateSpec& s);

struct GenerateOutcome {
    std::vector<gen::TestCaseRecord> records;
    std::vector<gen::TestCaseRecord> baseline;  // paired with records when requested
    report::MetricsReport report;
    std::size_t invalid = 0;
};

/// Writes manifest.json, config.json, records.csv, timings.csv, report.json and
/// images/ (plus baseline_records.csv and baseline_images/ when requested).
GenerateOutcome execute_generate(const GenerateSpec& spec, const std::string& out, std::size_t workers = 1);

// --- drift ---------------------------------------------------------------------

struct DriftSpec {
    std::vector<drift::DriftConfig> configs;  // one per P_s value
};

/// Accepts every DriftConfig field; "p_s" may be a number or a list.
DriftSpec parse_drift(const nlohmann::json& j, std::optional<std::uint64_t> seed);
nlohmann::json to_json(const DriftSpec& s);

/// Writes manifest.json, drift_report.csv and drift_summary.json; returns the
/// reports and fills `table` with a printable P_OOD curve table.
std::vector<drift::DriftReport> execute_drift(const DriftSpec& spec, const std::string& out, std::string* table = nullptr);

// --- sweep ---------------------------------------------------------------------

struct SweepSpec {
    GenerateSpec base;
    std::vector<double> lr_grid;
};

/// Nine lr_min values m * 10^-k, m in {1, 3}, from 1e-8 up to 1e-4.
std::vector<double> default_lr_grid();
SweepSpec parse_sweep(const nlohmann::json& j, std::optional<std::uint64_t> seed);

struct SweepRow {
    double lr_min = 0.0, lr_max = 0.0;
    report::MetricsReport report;
};

/// One generate run per grid value in lr_<value>/ plus sweep.csv; `invalid`
/// counts invalid records across all runs.
std::vector<SweepRow> execute_sweep(const SweepSpec& spec, const std::string& out, std::size_t workers,
                                    std::size_t& invalid, std::string* trend = nullptr);

}  // namespace hynea::run
