#include <fstream>
#include <mutex>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>
#include <json.hpp>

#include "odesr/proposer.hpp"

namespace odesr {

using nlohmann::json;

struct ChatProposer::Impl {
    ChatOptions opts;
    std::string base;   // scheme://host[:port]
    std::string prefix; // path before /chat/completions, no trailing slash
    std::mutex log_mutex;
    std::ofstream log;

    void audit(const json& entry)
    {
        if (!log.is_open()) {
            return;
        }
        std::lock_guard lock(log_mutex);
        log << entry.dump() << '\n';
        log.flush();
    }
};

namespace {

std::pair<std::string, std::string> split_endpoint(const std::string& endpoint)
{
    const auto scheme = endpoint.find("://");
    if (scheme == std::string::npos) {
        throw ConfigError(fmt::format("endpoint '{}' must start with http:// or https://", endpoint));
    }
    const auto slash = endpoint.find('/', scheme + 3);
    std::string base = endpoint.substr(0, slash);
    std::string prefix = slash == std::string::npos ? "" : endpoint.substr(slash);
    while (!prefix.empty() && prefix.back() == '/') {
        prefix.pop_back();
    }
    return {std::move(base), std::move(prefix)};
}

bool retryable(int status)
{
    return status == 408 || status == 429 || status >= 500;
}

} // namespace

ChatProposer::ChatProposer(ChatOptions opts) : impl_(std::make_unique<Impl>())
{
    impl_->opts = std::move(opts);
    std::tie(impl_->base, impl_->prefix) = split_endpoint(impl_->opts.endpoint);
    if (impl_->opts.audit_log) {
        impl_->log.open(*impl_->opts.audit_log, std::ios::app);
        if (!impl_->log) {
            throw ConfigError(fmt::format("cannot open audit log '{}'", impl_->opts.audit_log->string()));
        }
    }
}

ChatProposer::~ChatProposer() = default;

std::string ChatProposer::complete(const ChatPayload& payload)
{
    const ChatOptions& o = impl_->opts;
    const json body = {
        {"model", o.model},
        {"messages",
         json::array({{{"role", payload.system.role}, {"content", payload.system.content}},
                      {{"role", payload.user.role}, {"content", payload.user.content}}})},
        {"temperature", o.temperature},
    };
    const std::string request = body.dump();
    const std::string path = impl_->prefix + "/chat/completions";

    std::string last_error;
    auto backoff = o.backoff;
    for (int attempt = 0; attempt <= o.max_retries; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(backoff);
            backoff *= 2;
        }
        httplib::Client client(impl_->base);
        if (!client.is_valid()) {
            throw TransportError(fmt::format("unsupported endpoint '{}'", o.endpoint));
        }
        const auto secs = std::chrono::duration_cast<std::chrono::seconds>(o.timeout);
        const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(o.timeout - secs);
        client.set_connection_timeout(secs.count(), usecs.count());
        client.set_read_timeout(secs.count(), usecs.count());
        client.set_write_timeout(secs.count(), usecs.count());
        httplib::Headers headers;
        if (!o.api_key.empty()) {
            headers.emplace("Authorization", "Bearer " + o.api_key);
        }

        json entry = {{"attempt", attempt}, {"request", body}};
        auto res = client.Post(path, headers, request, "application/json");
        if (!res) {
            last_error = fmt::format("request failed: {}", httplib::to_string(res.error()));
            entry["error"] = last_error;
            impl_->audit(entry);
            continue;
        }
        entry["status"] = res->status;
        entry["response"] = res->body;
        impl_->audit(entry);
        if (res->status != 200) {
            last_error = fmt::format("HTTP {}", res->status);
            if (!retryable(res->status)) {
                break;
            }
            continue;
        }
        try {
            const json reply = json::parse(res->body);
            return reply.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const json::exception& err) {
            last_error = fmt::format("malformed completion: {}", err.what());
        }
    }
    throw TransportError(fmt::format("chat completion to {} failed: {}", o.endpoint, last_error));
}

std::vector<ParsedExpr> ChatProposer::propose(const PromptContext& ctx, const ProposalSite&, Rng&)
{
    return parse_response(complete(build_prompt(ctx)), ctx.dim, ctx.b);
}

} // namespace odesr
