#include <cstdlib>
#include <regex>
#include <thread>

#include <httplib.h>

#include "stepkd/errors.hpp"
#include "stepkd/gateway.hpp"
#include "stepkd/jsonl.hpp"

namespace stepkd {

using jsonl::json;

struct HttpGateway::Impl {
    std::string scheme_host_port;
    std::string path_prefix;
};

namespace {

struct AttemptFailure {
    std::string message;
    bool timed_out = false;
};

// RAII slot in the shared in-flight cap.
class SlotGuard {
public:
    SlotGuard(std::mutex& mu, std::condition_variable& cv, std::size_t& in_flight, std::size_t cap)
        : mu_(mu), cv_(cv), in_flight_(in_flight) {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return in_flight_ < cap; });
        ++in_flight_;
    }
    ~SlotGuard() {
        {
            std::lock_guard lock(mu_);
            --in_flight_;
        }
        cv_.notify_one();
    }
    SlotGuard(const SlotGuard&) = delete;
    SlotGuard& operator=(const SlotGuard&) = delete;

private:
    std::mutex& mu_;
    std::condition_variable& cv_;
    std::size_t& in_flight_;
};

json build_body(const GenerationRequest& req, ApiStyle api) {
    json body{{"model", req.model},
              {"max_tokens", req.max_new_tokens},
              {"temperature", req.temperature},
              {"stream", false}};
    if (!req.stop_sequences.empty()) body["stop"] = req.stop_sequences;
    if (api == ApiStyle::chat)
        body["messages"] = json::array({json{{"role", "user"}, {"content", req.prompt}}});
    else
        body["prompt"] = req.prompt;
    return body;
}

// Pulls the first choice out of a completions or chat/completions reply.
GenerationResult parse_reply(const std::string& body, ApiStyle api) {
    const json reply = json::parse(body);
    const json& choices = reply.at("choices");
    if (!choices.is_array() || choices.empty()) throw std::runtime_error("reply has no choices");
    const json& first = choices.at(0);
    GenerationResult result;
    if (api == ApiStyle::chat)
        result.text = first.at("message").at("content").get<std::string>();
    else
        result.text = first.at("text").get<std::string>();
    const auto fr = first.find("finish_reason");
    result.finish = (fr != first.end() && fr->is_string() && fr->get<std::string>() == "length")
                        ? FinishReason::length
                        : FinishReason::stop;
    return result;
}

}  // namespace

HttpGateway::HttpGateway(HttpEndpoint endpoint) : endpoint_(std::move(endpoint)), impl_(new Impl) {
    static const std::regex kUrl(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(endpoint_.base_url, m, kUrl))
        throw ConfigError("invalid endpoint URL '" + endpoint_.base_url + "'");
    impl_->scheme_host_port = m[1].str();
    impl_->path_prefix = m[2].matched ? m[2].str() : "";
    while (!impl_->path_prefix.empty() && impl_->path_prefix.back() == '/') impl_->path_prefix.pop_back();
    if (endpoint_.timeout.count() <= 0) throw ConfigError("endpoint timeout must be positive");
    if (endpoint_.max_retries < 0) throw ConfigError("max_retries must be >= 0");
    if (endpoint_.max_in_flight == 0) throw ConfigError("max_in_flight must be >= 1");
}

HttpGateway::~HttpGateway() = default;

GenerationResult HttpGateway::generate(const GenerationRequest& request) {
    request.validate();
    const std::string path =
        impl_->path_prefix + (endpoint_.api == ApiStyle::chat ? "/chat/completions" : "/completions");
    const std::string body = build_body(request, endpoint_.api).dump();

    httplib::Headers headers;
    if (!endpoint_.api_key_env.empty()) {
        if (const char* key = std::getenv(endpoint_.api_key_env.c_str()); key && *key)
            headers.emplace("Authorization", std::string("Bearer ") + key);
    }

    const int attempts_allowed = endpoint_.max_retries + 1;
    AttemptFailure last;
    auto backoff = endpoint_.backoff_initial;
    for (int attempt = 1; attempt <= attempts_allowed; ++attempt) {
        if (attempt > 1) {
            std::this_thread::sleep_for(backoff);
            backoff = std::min(backoff * 2, endpoint_.backoff_max);
        }
        SlotGuard slot(slot_mu_, slot_cv_, in_flight_, endpoint_.max_in_flight);
        httplib::Client client(impl_->scheme_host_port);
        client.set_connection_timeout(endpoint_.timeout);
        client.set_read_timeout(endpoint_.timeout);
        client.set_write_timeout(endpoint_.timeout);

        const auto started = std::chrono::steady_clock::now();
        auto res = client.Post(path, headers, body, "application/json");
        const auto elapsed = std::chrono::steady_clock::now() - started;
        const double latency = std::chrono::duration<double>(elapsed).count();

        if (!res) {
            const auto err = res.error();
            last.message = "request to " + impl_->scheme_host_port + path + " failed: " + httplib::to_string(err);
            last.timed_out = err == httplib::Error::ConnectionTimeout ||
                             (err == httplib::Error::Read && elapsed >= endpoint_.timeout);
            continue;
        }
        if (res->status < 200 || res->status >= 300) {
            last.message = "endpoint returned HTTP " + std::to_string(res->status);
            last.timed_out = res->status == 408 || res->status == 504;
            continue;
        }
        try {
            GenerationResult result = parse_reply(res->body, endpoint_.api);
            // Servers may ignore or only partially honor `stop`.
            if (apply_stop_sequences(result.text, request.stop_sequences))
                result.finish = FinishReason::stop;
            result.latency_s = latency;
            return result;
        } catch (const std::exception& e) {
            last.message = std::string("malformed reply: ") + e.what();
            last.timed_out = false;
        }
    }
    if (last.timed_out) throw TimeoutError(last.message, attempts_allowed);
    throw TransportError(last.message, attempts_allowed);
}

}  // namespace stepkd
