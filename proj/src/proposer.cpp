#include "odesr/proposer.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

namespace odesr {

std::string system_message(std::size_t dim, std::size_t k, std::size_t b)
{
    std::string vars;
    for (std::size_t i = 0; i < dim; ++i) {
        vars += fmt::format("{}x_{}", i == 0 ? "" : ", ", i);
    }
    return fmt::format(
        "You are a scientist whose task is to perform Symbolic Regression. You should search the function space to "
        "find the best simple function that fits the data. You are given {} examples of proposed equations sorted "
        "from worst to best. Your goal is to suggest {} improved equations of varying complexity. Replace all "
        "numerical constants with \"C\" -- they will be optimized with an external optimizer. Write one equation per "
        "line from simplest to most complex with no extra explanation. Available operators: {}. Independent "
        "variables: {}.",
        k, b, prompt_operators, vars);
}

ChatPayload build_prompt(const PromptContext& ctx)
{
    std::string user;
    for (std::size_t i = 0; i < ctx.examples.size(); ++i) {
        if (i > 0) {
            user += '\n';
        }
        user += ctx.examples[i];
    }
    return {{"system", system_message(ctx.dim, ctx.k, ctx.b)}, {"user", std::move(user)}};
}

namespace {

std::string_view trim(std::string_view s)
{
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) {
        s.remove_prefix(1);
    }
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) {
        s.remove_suffix(1);
    }
    return s;
}

// "- ", "* ", "1. ", "2) ", "(3) " and similar list prefixes.
std::string_view strip_list_marker(std::string_view s)
{
    if (s.size() >= 2 && (s[0] == '-' || s[0] == '*' || s[0] == '+') && s[1] == ' ') {
        return trim(s.substr(2));
    }
    if (s.rfind("\xE2\x80\xA2", 0) == 0) { // bullet
        return trim(s.substr(3));
    }
    std::size_t i = 0;
    const bool open = !s.empty() && s[0] == '(';
    if (open) {
        ++i;
    }
    const std::size_t digits_begin = i;
    while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) {
        ++i;
    }
    if (i > digits_begin && i + 1 < s.size() && std::isspace(static_cast<unsigned char>(s[i + 1]))) {
        if ((!open && (s[i] == '.' || s[i] == ')' || s[i] == ':')) || (open && s[i] == ')')) {
            return trim(s.substr(i + 1));
        }
    }
    return s;
}

std::string_view strip_quotes(std::string_view s)
{
    while (!s.empty() && (s.back() == ',' || s.back() == ';')) {
        s = trim(s.substr(0, s.size() - 1));
    }
    while (s.size() >= 2 && s.front() == s.back() && (s.front() == '"' || s.front() == '\'' || s.front() == '`')) {
        s = trim(s.substr(1, s.size() - 2));
    }
    return s;
}

// "dx_0/dt = ...", "f(x) = ..." keep only the right-hand side.
std::string_view strip_lhs(std::string_view s)
{
    const auto eq = s.rfind('=');
    return eq == std::string_view::npos ? s : trim(s.substr(eq + 1));
}

} // namespace

std::vector<ParsedExpr> parse_response(std::string_view text, std::size_t dim, std::size_t b,
                                       std::vector<std::string>* rejected)
{
    std::vector<ParsedExpr> out;
    std::size_t start = 0;
    while (start <= text.size() && out.size() < b) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) {
            end = text.size();
        }
        std::string_view line = trim(text.substr(start, end - start));
        start = end + 1;
        if (line.empty() || line.rfind("```", 0) == 0) {
            continue;
        }
        line = strip_lhs(strip_quotes(strip_list_marker(line)));
        if (line.empty()) {
            continue;
        }
        try {
            out.push_back(parse_with_init(line, dim, Grammar::Discovery));
        } catch (const ExprError&) {
            if (rejected != nullptr) {
                rejected->emplace_back(line);
            }
        }
    }
    return out;
}

// --- scripted ----------------------------------------------------------------

ScriptedProposer::ScriptedProposer(Script shared) : shared_(std::move(shared)) {}

ScriptedProposer::ScriptedProposer(std::map<std::size_t, Script> per_variable)
    : per_variable_(std::move(per_variable))
{
}

const ScriptedProposer::Script& ScriptedProposer::script_for(std::size_t variable) const
{
    const auto it = per_variable_.find(variable);
    return it == per_variable_.end() ? shared_ : it->second;
}

std::vector<ParsedExpr> ScriptedProposer::propose(const PromptContext& ctx, const ProposalSite& site, Rng&)
{
    std::size_t position = 0;
    {
        std::lock_guard lock(mutex_);
        position = cursor_[{site.variable, site.island}]++;
    }
    const Script& script = script_for(site.variable);
    if (position >= script.size()) {
        return {};
    }
    std::string joined;
    for (const auto& line : script[position]) {
        joined += line;
        joined += '\n';
    }
    return parse_response(joined, ctx.dim, ctx.b);
}

namespace {

ScriptedProposer::Script read_batches(const nlohmann::json& doc)
{
    if (!doc.is_array()) {
        throw ConfigError("script must be a list of batches");
    }
    ScriptedProposer::Script out;
    for (const auto& batch : doc) {
        std::vector<std::string> lines;
        if (batch.is_string()) {
            lines.push_back(batch.get<std::string>());
        } else if (batch.is_array()) {
            for (const auto& line : batch) {
                if (!line.is_string()) {
                    throw ConfigError("script batches must contain strings");
                }
                lines.push_back(line.get<std::string>());
            }
        } else {
            throw ConfigError("script batches must be strings or lists of strings");
        }
        out.push_back(std::move(lines));
    }
    return out;
}

} // namespace

std::unique_ptr<ScriptedProposer> parse_script(std::string_view text)
{
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text.begin(), text.end());
    } catch (const nlohmann::json::parse_error& err) {
        throw ConfigError(fmt::format("malformed script: {}", err.what()));
    }
    if (doc.is_array()) {
        return std::make_unique<ScriptedProposer>(read_batches(doc));
    }
    if (!doc.is_object()) {
        throw ConfigError("script must be a list of batches or an object keyed by variable");
    }
    std::map<std::size_t, ScriptedProposer::Script> per_variable;
    for (const auto& [key, value] : doc.items()) {
        std::size_t index = 0;
        if (key.size() < 3 || key.rfind("x_", 0) != 0) {
            throw ConfigError(fmt::format("script key '{}' is not a variable name", key));
        }
        try {
            std::size_t used = 0;
            index = std::stoul(key.substr(2), &used);
            if (used != key.size() - 2) {
                throw std::invalid_argument(key);
            }
        } catch (const std::logic_error&) {
            throw ConfigError(fmt::format("script key '{}' is not a variable name", key));
        }
        per_variable[index] = read_batches(value);
    }
    return std::make_unique<ScriptedProposer>(std::move(per_variable));
}

std::unique_ptr<ScriptedProposer> load_script(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError(fmt::format("cannot open script '{}'", path.string()));
    }
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_script(buf.str());
}

// --- random ------------------------------------------------------------------

namespace {

constexpr UnaryOp random_unaries[] = {UnaryOp::Neg, UnaryOp::Sin, UnaryOp::Log, UnaryOp::Exp, UnaryOp::Abs};
constexpr BinaryOp random_binaries[] = {BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Div, BinaryOp::Pow};

template <typename T, std::size_t N>
T pick(const T (&items)[N], Rng& rng)
{
    return items[std::uniform_int_distribution<std::size_t>(0, N - 1)(rng)];
}

Expr random_leaf(Rng& rng, std::size_t dim)
{
    if (std::bernoulli_distribution(0.6)(rng)) {
        return Expr::variable(std::uniform_int_distribution<std::size_t>(0, dim - 1)(rng));
    }
    return Expr::constant(0);
}

// Index into a list sorted worst first, weighted by rank.
std::size_t pick_ranked(std::size_t n, Rng& rng)
{
    std::vector<double> weights(n);
    for (std::size_t i = 0; i < n; ++i) {
        weights[i] = static_cast<double>(i + 1);
    }
    return std::discrete_distribution<std::size_t>(weights.begin(), weights.end())(rng);
}

} // namespace

Expr random_subtree(Rng& rng, std::size_t dim, std::size_t max_depth)
{
    if (max_depth <= 1 || std::bernoulli_distribution(0.4)(rng)) {
        return random_leaf(rng, dim);
    }
    if (std::bernoulli_distribution(0.3)(rng)) {
        return Expr::unary(pick(random_unaries, rng), random_subtree(rng, dim, max_depth - 1));
    }
    return Expr::binary(pick(random_binaries, rng), random_subtree(rng, dim, max_depth - 1),
                        random_subtree(rng, dim, max_depth - 1));
}

std::vector<ParsedExpr> RandomProposer::propose(const PromptContext& ctx, const ProposalSite&, Rng& rng)
{
    std::vector<Expr> parents;
    for (const auto& text : ctx.examples) {
        try {
            parents.push_back(parse(text, ctx.dim, Grammar::Discovery));
        } catch (const ExprError&) {
        }
    }

    auto finish = [](const Expr& e) {
        Expr r = renumber_constants(e);
        return ParsedExpr{r, ConstVector(constant_count(r), 1.0)};
    };

    std::vector<ParsedExpr> out;
    while (out.size() < ctx.b) {
        std::optional<Expr> child;
        for (int attempt = 0; attempt < opts_.max_attempts && !parents.empty(); ++attempt) {
            const Expr& parent = parents[pick_ranked(parents.size(), rng)];
            const auto sites = subtrees(parent);
            const auto at = std::uniform_int_distribution<std::size_t>(0, sites.size() - 1)(rng);
            Expr graft = [&] {
                if (parents.size() > 1 && std::bernoulli_distribution(opts_.crossover_probability)(rng)) {
                    const auto donor = subtrees(parents[pick_ranked(parents.size(), rng)]);
                    return donor[std::uniform_int_distribution<std::size_t>(0, donor.size() - 1)(rng)];
                }
                return random_subtree(rng, ctx.dim, opts_.max_subtree_depth);
            }();
            Expr candidate = replace_subtree(parent, at, graft);
            if (has_variable(candidate) && complexity(candidate) <= opts_.max_complexity) {
                child = std::move(candidate);
                break;
            }
        }
        out.push_back(finish(child ? *child : random_seed_expr(rng, ctx.dim)));
    }
    return out;
}

// --- configuration -----------------------------------------------------------

void ProposerConfig::apply_environment()
{
    auto fill = [](std::string& field, const char* var) {
        if (field.empty()) {
            if (const char* v = std::getenv(var); v != nullptr) {
                field = v;
            }
        }
    };
    fill(chat.endpoint, "ODESR_ENDPOINT");
    fill(chat.model, "ODESR_MODEL");
    fill(chat.api_key, "ODESR_API_KEY");
}

ProposerConfig::Kind parse_proposer_kind(std::string_view name)
{
    if (name == "chat") return ProposerConfig::Kind::Chat;
    if (name == "scripted") return ProposerConfig::Kind::Scripted;
    if (name == "random") return ProposerConfig::Kind::Random;
    throw ConfigError(fmt::format("unknown proposer kind '{}'", name));
}

std::string_view to_string(ProposerConfig::Kind kind) noexcept
{
    switch (kind) {
    case ProposerConfig::Kind::Chat: return "chat";
    case ProposerConfig::Kind::Scripted: return "scripted";
    case ProposerConfig::Kind::Random: return "random";
    }
    return "unknown";
}

std::unique_ptr<Proposer> make_proposer(const ProposerConfig& cfg)
{
    switch (cfg.kind) {
    case ProposerConfig::Kind::Chat:
        if (cfg.chat.endpoint.empty() || cfg.chat.model.empty()) {
            throw ConfigError("chat proposer requires an endpoint and a model");
        }
        return std::make_unique<ChatProposer>(cfg.chat);
    case ProposerConfig::Kind::Scripted:
        if (!cfg.script_path) {
            throw ConfigError("scripted proposer requires a script file");
        }
        return load_script(*cfg.script_path);
    case ProposerConfig::Kind::Random: return std::make_unique<RandomProposer>(cfg.random);
    }
    throw ConfigError("unknown proposer kind");
}

} // namespace odesr
