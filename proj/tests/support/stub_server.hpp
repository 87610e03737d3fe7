#pragma once

// Local chat-completion endpoint for tests. Serves a fixed assistant reply,
// optionally failing the first few requests with a given status.

#include <atomic>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

namespace oracle {

class StubServer {
public:
    explicit StubServer(std::string reply, int fail_first = 0, int fail_status = 503)
        : reply_(std::move(reply)), fail_first_(fail_first), fail_status_(fail_status)
    {
        server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
            {
                std::lock_guard lock(mutex_);
                bodies_.push_back(req.body);
                auth_.push_back(req.get_header_value("Authorization"));
            }
            if (hits_.fetch_add(1) < fail_first_) {
                res.status = fail_status_;
                res.set_content("{\"error\":\"unavailable\"}", "application/json");
                return;
            }
            nlohmann::json body = {
                {"id", "stub"},
                {"object", "chat.completion"},
                {"choices", {{{"index", 0}, {"message", {{"role", "assistant"}, {"content", reply_}}}}}},
            };
            res.set_content(body.dump(), "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }

    ~StubServer()
    {
        server_.stop();
        if (thread_.joinable()) {
            thread_.join();
        }
    }

    StubServer(const StubServer&) = delete;
    StubServer& operator=(const StubServer&) = delete;

    [[nodiscard]] std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }
    [[nodiscard]] int hits() const { return hits_.load(); }

    [[nodiscard]] std::vector<std::string> bodies() const
    {
        std::lock_guard lock(mutex_);
        return bodies_;
    }

    [[nodiscard]] std::vector<std::string> auth_headers() const
    {
        std::lock_guard lock(mutex_);
        return auth_;
    }

private:
    std::string reply_;
    int fail_first_;
    int fail_status_;
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
    std::atomic<int> hits_{0};
    mutable std::mutex mutex_;
    std::vector<std::string> bodies_;
    std::vector<std::string> auth_;
};

} // namespace oracle
