#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "odesr/assemble.hpp"
#include "odesr/dataset.hpp"
#include "odesr/evolve.hpp"
#include "odesr/proposer.hpp"

namespace odesr {

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline constexpr std::array<double, 6> nmse_thresholds = {1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6};
inline constexpr double variance_floor = 1e-12;
inline constexpr const char* nmse_definition =
    "mean over state variables of MSE_d / max(Var_d, 1e-12), Var_d the population variance of the observed "
    "test trajectory in dimension d";

/// Mean over dimensions of MSE_d / max(Var_d(obs), 1e-12), with Var_d the
/// population variance of the observed trajectory.
[[nodiscard]] double nmse(const TrajectoryData& pred, const TrajectoryData& obs);
// Divergence maps to +inf.
[[nodiscard]] double nmse(const IntegrateResult& pred, const TrajectoryData& obs);

using SuccessFlags = std::array<bool, nmse_thresholds.size()>;
[[nodiscard]] SuccessFlags success_flags(double test_nmse);

struct Evaluation {
    double test_nmse = 0.0;
    SuccessFlags success{};
};

// Integrates from the test initial values and scores against the test trajectory.
[[nodiscard]] Evaluation evaluate_discovery(const SystemCandidate& selected, const ProblemInstance& inst);

struct ConvergencePoint {
    std::size_t iteration = 0;
    double test_nmse = 0.0;
    std::size_t system_front_size = 0;
};

struct VariableTelemetry {
    std::size_t variable = 0;
    TelemetryRow row;
};

struct FrontEntry {
    std::string expression; // constants inlined
    std::size_t complexity = 0;
    double score = 0.0; // validation score
};

struct RunReport {
    std::string system;
    std::size_t dim = 0;
    bool chaotic = false;
    std::string proposer;
    std::uint64_t seed = 0;
    std::size_t iterations = 0;
    std::size_t islands = 0;
    std::size_t k = 0;
    std::size_t b = 0;
    std::size_t refine_every = 0;
    std::size_t mix = 0;

    std::vector<std::string> equations; // "x_i' = ..."
    std::size_t total_complexity = 0;
    double train_fitness = 0.0;
    double test_nmse = std::numeric_limits<double>::infinity();
    SuccessFlags success{};

    std::size_t pool_size = 0;
    std::size_t system_front_size = 0;
    std::vector<std::vector<FrontEntry>> equation_fronts;
    std::vector<ConvergencePoint> convergence;
    std::vector<VariableTelemetry> telemetry;
    std::size_t proposals = 0;
    std::size_t transport_failures = 0;

    double wall_seconds = 0.0; // not serialized into the report document
    std::optional<std::string> error;
};

// Structured report document. Non-finite numbers are written as the
// strings "inf", "-inf" and "nan".
[[nodiscard]] std::string report_to_json(const RunReport& report);
[[nodiscard]] RunReport report_from_json(std::string_view text);

[[nodiscard]] RunReport make_report(const ProblemInstance& inst, const Discovery& found, const SearchConfig& cfg,
                                    std::string_view proposer_kind);

// Counts per (dimension, threshold); dimensions 1..4 always present.
using DiscoveryTable = std::map<std::size_t, std::array<std::size_t, nmse_thresholds.size()>>;
[[nodiscard]] DiscoveryTable discovery_table(const std::vector<RunReport>& reports);

void write_discovery_table(std::ostream& os, const DiscoveryTable& table);
// iteration, then the fraction of runs whose best-so-far test NMSE is below each threshold.
void write_convergence(std::ostream& os, const std::vector<RunReport>& reports);
// iteration, runs, mean, ci_low, ci_high of the system front size (95% t-interval across runs).
void write_pareto_size(std::ostream& os, const std::vector<RunReport>& reports);
void write_telemetry(std::ostream& os, const std::vector<RunReport>& reports);
void write_timings(std::ostream& os, const std::vector<RunReport>& reports);

using ProposerFactory = std::function<std::unique_ptr<Proposer>(const BenchmarkSystem&)>;

struct BenchmarkConfig {
    SearchConfig search;
    CartesianOptions cartesian;
    ProposerConfig proposer;
    ProposerFactory factory; // overrides `proposer` when set
    std::vector<std::string> names; // exact names; empty selects all
    std::vector<std::size_t> dims;  // empty selects all
    std::size_t workers = 1;
    std::optional<std::filesystem::path> out_dir;
};

[[nodiscard]] std::vector<BenchmarkSystem> select_systems(const std::vector<BenchmarkSystem>& registry,
                                                          const BenchmarkConfig& cfg);

// One system end to end. Failures are recorded in the report.
[[nodiscard]] RunReport run_system(const BenchmarkSystem& sys, const BenchmarkConfig& cfg);

/// Runs every selected system, up to `workers` at a time. With out_dir set,
/// writes the report documents, the aggregate tables and timings.csv.
/// Only timings.csv depends on wall-clock time.
[[nodiscard]] std::vector<RunReport> run_benchmark(const std::vector<BenchmarkSystem>& registry,
                                                   const BenchmarkConfig& cfg);

// reports/<stem>.json per run.
void write_reports(const std::filesystem::path& out_dir, const std::vector<RunReport>& reports);
// discovery_table.csv, convergence.csv, pareto_size.csv and telemetry.csv,
// with runs ordered by system name.
void write_tables(const std::filesystem::path& out_dir, std::vector<RunReport> reports);
// Reads every reports/*.json under out_dir, sorted by file name.
[[nodiscard]] std::vector<RunReport> load_reports(const std::filesystem::path& out_dir);
// File-system-safe stem for a system name.
[[nodiscard]] std::string report_stem(std::string_view name);

} // namespace odesr
