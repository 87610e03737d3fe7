#include "odesr/dataset.hpp"

#include <algorithm>
#include <cstdlib>
#include <cmath>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#ifndef ODESR_DEFAULT_DATA_DIR
#define ODESR_DEFAULT_DATA_DIR "data"
#endif

namespace odesr {

using nlohmann::json;

std::vector<Expr> BenchmarkSystem::parsed_equations() const
{
    std::vector<Expr> out;
    out.reserve(equations.size());
    for (const auto& eq : equations) {
        out.push_back(parse(eq, dim, Grammar::Simulation));
    }
    return out;
}

std::vector<RhsTerm> BenchmarkSystem::rhs() const
{
    std::vector<RhsTerm> out;
    for (auto& e : parsed_equations()) {
        out.push_back({std::move(e), {}});
    }
    return out;
}

IntegrateOptions BenchmarkSystem::integrate_options() const
{
    IntegrateOptions opts;
    if (rtol) {
        opts.rtol = *rtol;
    }
    if (atol) {
        opts.atol = *atol;
    }
    return opts;
}

namespace {

std::pair<std::size_t, std::size_t> line_and_column(std::string_view text, std::size_t byte)
{
    std::size_t line = 1;
    std::size_t col = 1;
    for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return {line, col};
}

std::vector<double> read_vector(const json& rec, const char* field, const std::string& where)
{
    if (!rec.contains(field)) {
        throw SchemaError(fmt::format("{}: missing field '{}'", where, field));
    }
    const json& v = rec.at(field);
    if (!v.is_array()) {
        throw SchemaError(fmt::format("{}: field '{}' must be a list of numbers", where, field));
    }
    std::vector<double> out;
    for (const auto& x : v) {
        if (!x.is_number()) {
            throw SchemaError(fmt::format("{}: field '{}' must be a list of numbers", where, field));
        }
        out.push_back(x.get<double>());
    }
    return out;
}

BenchmarkSystem read_system(const json& rec, std::size_t position, std::string_view source)
{
    std::string where = fmt::format("{}: record {}", source, position);
    if (!rec.is_object()) {
        throw SchemaError(fmt::format("{}: expected an object", where));
    }
    BenchmarkSystem sys;
    if (!rec.contains("name") || !rec.at("name").is_string() || rec.at("name").get<std::string>().empty()) {
        throw SchemaError(fmt::format("{}: missing field 'name'", where));
    }
    sys.name = rec.at("name").get<std::string>();
    where += fmt::format(" ('{}')", sys.name);

    if (!rec.contains("dim")) {
        throw SchemaError(fmt::format("{}: missing field 'dim'", where));
    }
    if (!rec.at("dim").is_number_unsigned() || rec.at("dim").get<std::size_t>() == 0) {
        throw SchemaError(fmt::format("{}: field 'dim' must be a positive integer", where));
    }
    sys.dim = rec.at("dim").get<std::size_t>();

    if (!rec.contains("equations")) {
        throw SchemaError(fmt::format("{}: missing field 'equations'", where));
    }
    const json& eqs = rec.at("equations");
    if (!eqs.is_array() || eqs.size() != sys.dim) {
        throw SchemaError(fmt::format("{}: field 'equations' must list exactly {} strings", where, sys.dim));
    }
    for (std::size_t i = 0; i < eqs.size(); ++i) {
        if (!eqs[i].is_string()) {
            throw SchemaError(fmt::format("{}: equations[{}] must be a string", where, i));
        }
        const auto text = eqs[i].get<std::string>();
        try {
            const Expr e = parse(text, sys.dim, Grammar::Simulation);
            if (constant_count(e) != 0) {
                throw SchemaError(fmt::format("{}: equations[{}] contains a placeholder C", where, i));
            }
        } catch (const ExprError& err) {
            throw SchemaError(fmt::format("{}: equations[{}] '{}': {}", where, i, text, err.what()));
        }
        sys.equations.push_back(text);
    }

    sys.train_iv = read_vector(rec, "train_iv", where);
    sys.test_iv = read_vector(rec, "test_iv", where);
    if (sys.train_iv.size() != sys.dim || sys.test_iv.size() != sys.dim) {
        throw SchemaError(fmt::format("{}: initial values must have {} entries", where, sys.dim));
    }
    for (const char* field : {"rtol", "atol"}) {
        if (rec.contains(field)) {
            if (!rec.at(field).is_number() || !(rec.at(field).get<double>() > 0.0)) {
                throw SchemaError(fmt::format("{}: field '{}' must be a positive number", where, field));
            }
            (std::string_view(field) == "rtol" ? sys.rtol : sys.atol) = rec.at(field).get<double>();
        }
    }
    if (rec.contains("chaotic")) {
        if (!rec.at("chaotic").is_boolean()) {
            throw SchemaError(fmt::format("{}: field 'chaotic' must be true or false", where));
        }
        sys.chaotic = rec.at("chaotic").get<bool>();
    }
    return sys;
}

} // namespace

std::vector<BenchmarkSystem> parse_registry(std::string_view text, std::string_view source)
{
    json doc;
    try {
        doc = json::parse(text.begin(), text.end());
    } catch (const json::parse_error& err) {
        const auto [line, col] = line_and_column(text, err.byte == 0 ? 0 : err.byte - 1);
        throw ParseError(fmt::format("{}:{}:{}: {}", source, line, col, err.what()));
    }
    if (!doc.is_array()) {
        throw SchemaError(fmt::format("{}: top level must be a list of systems", source));
    }
    std::vector<BenchmarkSystem> out;
    std::set<std::string> names;
    for (std::size_t i = 0; i < doc.size(); ++i) {
        auto sys = read_system(doc[i], i, source);
        if (!names.insert(sys.name).second) {
            throw SchemaError(fmt::format("{}: duplicate system name '{}'", source, sys.name));
        }
        out.push_back(std::move(sys));
    }
    return out;
}

std::vector<BenchmarkSystem> load_registry(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw RegistryError(fmt::format("cannot open registry '{}'", path.string()));
    }
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_registry(buf.str(), path.string());
}

std::filesystem::path default_registry_path()
{
    if (const char* dir = std::getenv("ODESR_DATA_DIR"); dir != nullptr && *dir != '\0') {
        return std::filesystem::path(dir) / "systems.json";
    }
    return std::filesystem::path(ODESR_DEFAULT_DATA_DIR) / "systems.json";
}

TrajectoryData simulate(const BenchmarkSystem& sys, std::span<const double> iv, const SampleProtocol& protocol)
{
    const auto terms = sys.rhs();
    auto result = integrate(terms, iv, protocol.t_end, protocol.dt, sys.integrate_options());
    if (const auto* div = std::get_if<Divergence>(&result)) {
        throw SimulationError(
            fmt::format("ground-truth system '{}' diverged ({}) at t={}", sys.name, to_string(div->reason), div->time));
    }
    return std::get<TrajectoryData>(std::move(result));
}

ProblemInstance make_instance(const BenchmarkSystem& sys, const SampleProtocol& protocol)
{
    ProblemInstance inst;
    inst.system = sys;
    inst.train = estimate_derivatives(simulate(sys, sys.train_iv, protocol));
    inst.test = simulate(sys, sys.test_iv, protocol);

    const double tol = 1e-9 * protocol.dt;
    const auto& t = inst.train.times;
    const auto fit_end = static_cast<std::size_t>(
        std::upper_bound(t.begin(), t.end(), protocol.fit_until + tol) - t.begin());
    inst.fit_rows = {0, fit_end};
    inst.select_rows = {0, t.size()};
    return inst;
}

void write_csv(std::ostream& os, const TrajectoryData& traj)
{
    os << 't';
    for (std::size_t j = 0; j < traj.dim(); ++j) {
        os << ",x_" << j;
    }
    os << '\n';
    for (std::size_t i = 0; i < traj.samples(); ++i) {
        os << fmt::format("{}", traj.times[i]);
        for (std::size_t j = 0; j < traj.dim(); ++j) {
            os << ',' << fmt::format("{}", traj.states(i, j));
        }
        os << '\n';
    }
}

} // namespace odesr
