#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "odesr/expr.hpp"
#include "odesr/numeric.hpp"

namespace odesr {

class RegistryError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
// Malformed document; message carries line and column.
class ParseError : public RegistryError {
public:
    using RegistryError::RegistryError;
};
// Well-formed document with a missing or invalid field.
class SchemaError : public RegistryError {
public:
    using RegistryError::RegistryError;
};
// A ground-truth system diverged during simulation.
class SimulationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct BenchmarkSystem {
    std::string name;
    std::size_t dim = 0;
    std::vector<std::string> equations; // simulation grammar, literal constants only
    std::vector<double> train_iv;
    std::vector<double> test_iv;
    std::optional<double> rtol;
    std::optional<double> atol;
    bool chaotic = false;

    [[nodiscard]] std::vector<Expr> parsed_equations() const;
    [[nodiscard]] std::vector<RhsTerm> rhs() const;
    [[nodiscard]] IntegrateOptions integrate_options() const;
};

// Registry document: a JSON array of objects with fields
//   name, dim, equations, train_iv, test_iv, and optional rtol, atol, chaotic.
[[nodiscard]] std::vector<BenchmarkSystem> parse_registry(std::string_view text, std::string_view source = "<registry>");
[[nodiscard]] std::vector<BenchmarkSystem> load_registry(const std::filesystem::path& path);

// Directory holding the shipped registry, from ODESR_DATA_DIR or the build-time default.
[[nodiscard]] std::filesystem::path default_registry_path();

struct SampleProtocol {
    double t_end = 10.0;
    double dt = 0.1;
    double fit_until = 5.0;
};

struct RowRange {
    std::size_t begin = 0;
    std::size_t end = 0; // exclusive
    [[nodiscard]] std::size_t size() const noexcept { return end - begin; }
};

struct ProblemInstance {
    BenchmarkSystem system;
    TrajectoryData train; // derivs populated
    TrajectoryData test;
    RowRange fit_rows;    // t in [0, fit_until]
    RowRange select_rows; // whole training trajectory
};

[[nodiscard]] TrajectoryData simulate(const BenchmarkSystem& sys, std::span<const double> iv,
                                      const SampleProtocol& protocol = {});
[[nodiscard]] ProblemInstance make_instance(const BenchmarkSystem& sys, const SampleProtocol& protocol = {});

// Header t,x_0,...,x_{D-1}; one row per sample at round-trip precision.
void write_csv(std::ostream& os, const TrajectoryData& traj);

} // namespace odesr
