#pragma once

#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace stepkd {

enum class FinishReason { stop, length, error };

std::string_view to_string(FinishReason r);
FinishReason finish_reason_from_string(std::string_view s);

struct GenerationRequest {
    std::string prompt;
    std::vector<std::string> stop_sequences;
    int max_new_tokens = 256;
    double temperature = 0.0;
    std::string model;

    // Throws ValidationError when max_new_tokens < 1, temperature < 0, or a
    // stop sequence is empty.
    void validate() const;
};

struct GenerationResult {
    std::string text;
    FinishReason finish = FinishReason::stop;
    double latency_s = 0.0;
};

// Cuts `text` at the earliest occurrence of any stop sequence. Returns true
// when a cut happened.
bool apply_stop_sequences(std::string& text, std::span<const std::string> stops);

// Hex SHA-256 over a canonical JSON encoding of every request field.
std::string request_hash(const GenerationRequest& request);

class Gateway {
public:
    virtual ~Gateway() = default;
    virtual GenerationResult generate(const GenerationRequest& request) = 0;
};

// Deterministic canned completions for offline runs and tests.
//
// Entries are tried in script order; the first unconsumed entry whose
// matcher accepts the request answers it and is consumed unless `repeat` is
// set. A `contains` matcher accepts prompts containing the substring, a
// `position` matcher accepts the n-th call (0-based) made on this mock, and
// an entry with neither matcher accepts anything. A request no entry accepts
// raises ScriptExhaustedError.
class ScriptedMock : public Gateway {
public:
    struct Entry {
        std::optional<std::string> contains;
        std::optional<std::size_t> position;
        std::string completion;
        FinishReason finish = FinishReason::stop;
        bool repeat = false;
    };

    explicit ScriptedMock(std::vector<Entry> entries);

    // JSON lines: {"match": "...", "position": n, "completion": "...",
    //              "finish": "stop"|"length", "repeat": bool}
    static std::unique_ptr<ScriptedMock> load(const std::filesystem::path& path);
    static void save(const std::filesystem::path& path, std::span<const Entry> entries);

    GenerationResult generate(const GenerationRequest& request) override;

    std::size_t calls() const;
    std::size_t remaining() const;
    std::vector<std::string> captured_prompts() const;
    std::vector<GenerationRequest> captured_requests() const;

private:
    mutable std::mutex mu_;
    std::vector<Entry> entries_;
    std::vector<bool> consumed_;
    std::vector<GenerationRequest> requests_;
};

// Decorator that appends every (request, result) pair to a session file, or
// serves requests from a previously recorded session by request hash.
class RecordReplayGateway : public Gateway {
public:
    enum class Mode { record, replay };

    static std::unique_ptr<RecordReplayGateway> record(const std::filesystem::path& session,
                                                       std::shared_ptr<Gateway> inner);
    static std::unique_ptr<RecordReplayGateway> replay(const std::filesystem::path& session);

    GenerationResult generate(const GenerationRequest& request) override;

    Mode mode() const { return mode_; }
    std::size_t recorded() const;
    std::size_t inner_calls() const;

private:
    RecordReplayGateway(Mode mode, std::shared_ptr<Gateway> inner);

    Mode mode_;
    std::shared_ptr<Gateway> inner_;
    mutable std::mutex mu_;
    std::ofstream out_;
    std::unordered_map<std::string, GenerationResult> table_;
    std::size_t recorded_ = 0;
    std::size_t inner_calls_ = 0;
};

enum class ApiStyle { completions, chat };

struct HttpEndpoint {
    // e.g. "http://127.0.0.1:8000/v1"; the client posts to
    // <base>/completions or <base>/chat/completions.
    std::string base_url;
    ApiStyle api = ApiStyle::completions;
    // Name of the environment variable holding the bearer token. Unset or
    // empty variable means no Authorization header.
    std::string api_key_env = "STEPKD_API_KEY";
    std::chrono::milliseconds timeout{60'000};
    int max_retries = 3;
    std::chrono::milliseconds backoff_initial{500};
    std::chrono::milliseconds backoff_max{8'000};
    std::size_t max_in_flight = 4;
};

// OpenAI-style text generation over HTTP(S) with bounded retries and an
// in-flight request cap shared by all callers.
class HttpGateway : public Gateway {
public:
    explicit HttpGateway(HttpEndpoint endpoint);
    ~HttpGateway() override;

    GenerationResult generate(const GenerationRequest& request) override;

    const HttpEndpoint& endpoint() const { return endpoint_; }

private:
    struct Impl;

    HttpEndpoint endpoint_;
    std::unique_ptr<Impl> impl_;
    std::mutex slot_mu_;
    std::condition_variable slot_cv_;
    std::size_t in_flight_ = 0;
};

}  // namespace stepkd
