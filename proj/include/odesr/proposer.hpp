#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "odesr/expr.hpp"

namespace odesr {

class TransportError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct PromptContext {
    std::size_t dim = 1;
    std::size_t k = 8;
    std::size_t b = 3;
    std::vector<std::string> examples; // masked, worst first
};

struct ChatMessage {
    std::string role;
    std::string content;
};

struct ChatPayload {
    ChatMessage system;
    ChatMessage user;
};

// Operators listed in the prompt; matches the discovery grammar.
inline constexpr std::string_view prompt_operators = "+, -, *, **, /, sin, log, exp, abs";

[[nodiscard]] std::string system_message(std::size_t dim, std::size_t k, std::size_t b);
[[nodiscard]] ChatPayload build_prompt(const PromptContext& ctx);

// Parses up to b equations from free-form model output. Lines that fail to
// parse under the discovery grammar are dropped; `rejected` receives them.
[[nodiscard]] std::vector<ParsedExpr> parse_response(std::string_view text, std::size_t dim, std::size_t b,
                                                     std::vector<std::string>* rejected = nullptr);

// Identifies one proposal request inside a search.
struct ProposalSite {
    std::size_t variable = 0;
    std::size_t island = 0;
    std::size_t iteration = 0;
};

class Proposer {
public:
    virtual ~Proposer() = default;
    [[nodiscard]] virtual std::string_view kind() const noexcept = 0;
    // Throws TransportError when the backend is unreachable.
    [[nodiscard]] virtual std::vector<ParsedExpr> propose(const PromptContext& ctx, const ProposalSite& site,
                                                          Rng& rng) = 0;
};

/// Replays fixed batches. Each (variable, island) pair owns a cursor, so
/// every island sees the same sequence regardless of scheduling. An
/// exhausted script yields empty batches.
class ScriptedProposer final : public Proposer {
public:
    using Script = std::vector<std::vector<std::string>>;

    explicit ScriptedProposer(Script shared);
    explicit ScriptedProposer(std::map<std::size_t, Script> per_variable);

    [[nodiscard]] std::string_view kind() const noexcept override { return "scripted"; }
    [[nodiscard]] std::vector<ParsedExpr> propose(const PromptContext& ctx, const ProposalSite& site,
                                                  Rng& rng) override;

private:
    const Script& script_for(std::size_t variable) const;

    Script shared_;
    std::map<std::size_t, Script> per_variable_;
    std::mutex mutex_;
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> cursor_;
};

// Loads a script document: either a list of batches applied to every
// variable, or an object {"x_0": [...], "x_1": [...]} keyed by variable.
[[nodiscard]] std::unique_ptr<ScriptedProposer> load_script(const std::filesystem::path& path);
[[nodiscard]] std::unique_ptr<ScriptedProposer> parse_script(std::string_view text);

struct RandomProposerOptions {
    double crossover_probability = 0.3;
    std::size_t max_subtree_depth = 2;
    std::size_t max_complexity = 30;
    int max_attempts = 20;
};

/// Uninformed variation: subtree mutation and crossover over the in-context
/// examples. Candidates are picked with weight proportional to their rank.
class RandomProposer final : public Proposer {
public:
    explicit RandomProposer(RandomProposerOptions opts = {}) : opts_(opts) {}

    [[nodiscard]] std::string_view kind() const noexcept override { return "random"; }
    [[nodiscard]] std::vector<ParsedExpr> propose(const PromptContext& ctx, const ProposalSite& site,
                                                  Rng& rng) override;

private:
    RandomProposerOptions opts_;
};

// Random discovery-grammar tree of at most the given depth (a leaf has depth 1).
[[nodiscard]] Expr random_subtree(Rng& rng, std::size_t dim, std::size_t max_depth);

struct ChatOptions {
    std::string endpoint; // e.g. http://localhost:8000/v1
    std::string model;
    std::string api_key;
    double temperature = 0.7;
    std::chrono::milliseconds timeout{60000};
    int max_retries = 3;
    std::chrono::milliseconds backoff{500}; // doubled after each failed attempt
    std::optional<std::filesystem::path> audit_log;
};

/// Chat-completion client. Every request opens its own connection, so
/// concurrent calls from several islands do not share state.
class ChatProposer final : public Proposer {
public:
    explicit ChatProposer(ChatOptions opts);
    ~ChatProposer() override;

    [[nodiscard]] std::string_view kind() const noexcept override { return "chat"; }
    [[nodiscard]] std::vector<ParsedExpr> propose(const PromptContext& ctx, const ProposalSite& site,
                                                  Rng& rng) override;

    // Sends the payload and returns choices[0].message.content.
    [[nodiscard]] std::string complete(const ChatPayload& payload);

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

struct ProposerConfig {
    enum class Kind { Chat, Scripted, Random };
    Kind kind = Kind::Random;
    ChatOptions chat;
    std::optional<std::filesystem::path> script_path;
    RandomProposerOptions random;

    // Fills empty chat fields from ODESR_ENDPOINT, ODESR_MODEL and ODESR_API_KEY.
    void apply_environment();
};

[[nodiscard]] ProposerConfig::Kind parse_proposer_kind(std::string_view name);
[[nodiscard]] std::string_view to_string(ProposerConfig::Kind kind) noexcept;

// Throws ConfigError when a chat config lacks endpoint or model, or a
// scripted config lacks a script.
[[nodiscard]] std::unique_ptr<Proposer> make_proposer(const ProposerConfig& cfg);

} // namespace odesr
