#include "stepkd/gateway.hpp"

#include <algorithm>
#include <cstdio>

#include <openssl/evp.h>

#include "stepkd/errors.hpp"
#include "stepkd/jsonl.hpp"

namespace stepkd {

using jsonl::json;

std::string_view to_string(FinishReason r) {
    switch (r) {
        case FinishReason::stop: return "stop";
        case FinishReason::length: return "length";
        case FinishReason::error: return "error";
    }
    return "error";
}

FinishReason finish_reason_from_string(std::string_view s) {
    if (s == "stop") return FinishReason::stop;
    if (s == "length") return FinishReason::length;
    if (s == "error") return FinishReason::error;
    throw ValidationError("unknown finish reason '" + std::string(s) + "'");
}

void GenerationRequest::validate() const {
    if (max_new_tokens < 1) throw ValidationError("max_new_tokens must be >= 1");
    if (!(temperature >= 0.0)) throw ValidationError("temperature must be >= 0");
    for (const auto& s : stop_sequences)
        if (s.empty()) throw ValidationError("stop sequences must be non-empty");
}

bool apply_stop_sequences(std::string& text, std::span<const std::string> stops) {
    std::size_t cut = std::string::npos;
    for (const auto& s : stops) {
        if (s.empty()) continue;
        cut = std::min(cut, text.find(s));
    }
    if (cut == std::string::npos) return false;
    text.resize(cut);
    return true;
}

std::string request_hash(const GenerationRequest& request) {
    const json canonical{{"max_new_tokens", request.max_new_tokens},
                         {"model", request.model},
                         {"prompt", request.prompt},
                         {"stop", request.stop_sequences},
                         {"temperature", request.temperature}};
    const std::string bytes = canonical.dump(-1, ' ', false, json::error_handler_t::replace);
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw Error("SHA-256 digest failed");
    std::string hex;
    hex.reserve(len * 2);
    char buf[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(buf, sizeof buf, "%02x", digest[i]);
        hex.append(buf, 2);
    }
    return hex;
}

// ---------------------------------------------------------------------------
// ScriptedMock

ScriptedMock::ScriptedMock(std::vector<Entry> entries)
    : entries_(std::move(entries)), consumed_(entries_.size(), false) {}

std::unique_ptr<ScriptedMock> ScriptedMock::load(const std::filesystem::path& path) {
    std::vector<Entry> entries;
    jsonl::for_each_object(path, [&](const json& obj, std::size_t line) {
        Entry e;
        e.completion = jsonl::require_string(obj, "completion", line);
        if (obj.contains("match")) e.contains = jsonl::require_string(obj, "match", line);
        if (obj.contains("position")) {
            const auto pos = jsonl::require_int(obj, "position", line);
            if (pos < 0) throw SchemaError(line, "position", "must be >= 0");
            e.position = static_cast<std::size_t>(pos);
        }
        if (obj.contains("finish")) {
            try {
                e.finish = finish_reason_from_string(jsonl::require_string(obj, "finish", line));
            } catch (const ValidationError& err) {
                throw SchemaError(line, "finish", err.what());
            }
        }
        if (obj.contains("repeat")) {
            if (!obj["repeat"].is_boolean()) throw SchemaError(line, "repeat", "expected a boolean");
            e.repeat = obj["repeat"].get<bool>();
        }
        entries.push_back(std::move(e));
    });
    return std::make_unique<ScriptedMock>(std::move(entries));
}

void ScriptedMock::save(const std::filesystem::path& path, std::span<const Entry> entries) {
    auto out = jsonl::open_for_write(path);
    for (const auto& e : entries) {
        json obj{{"completion", e.completion}};
        if (e.contains) obj["match"] = *e.contains;
        if (e.position) obj["position"] = *e.position;
        if (e.finish != FinishReason::stop) obj["finish"] = to_string(e.finish);
        if (e.repeat) obj["repeat"] = true;
        out << jsonl::to_line(obj);
    }
}

GenerationResult ScriptedMock::generate(const GenerationRequest& request) {
    request.validate();
    std::lock_guard lock(mu_);
    const std::size_t call = requests_.size();
    requests_.push_back(request);
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (consumed_[i]) continue;
        const Entry& e = entries_[i];
        if (e.position && *e.position != call) continue;
        if (e.contains && request.prompt.find(*e.contains) == std::string::npos) continue;
        if (!e.repeat) consumed_[i] = true;
        GenerationResult result{e.completion, e.finish, 0.0};
        if (apply_stop_sequences(result.text, request.stop_sequences))
            result.finish = FinishReason::stop;
        return result;
    }
    throw ScriptExhaustedError("scripted mock has no entry for call #" + std::to_string(call) +
                               " (request " + request_hash(request).substr(0, 16) + ")");
}

std::size_t ScriptedMock::calls() const {
    std::lock_guard lock(mu_);
    return requests_.size();
}

std::size_t ScriptedMock::remaining() const {
    std::lock_guard lock(mu_);
    return static_cast<std::size_t>(std::count(consumed_.begin(), consumed_.end(), false));
}

std::vector<std::string> ScriptedMock::captured_prompts() const {
    std::lock_guard lock(mu_);
    std::vector<std::string> out;
    out.reserve(requests_.size());
    for (const auto& r : requests_) out.push_back(r.prompt);
    return out;
}

std::vector<GenerationRequest> ScriptedMock::captured_requests() const {
    std::lock_guard lock(mu_);
    return requests_;
}

// ---------------------------------------------------------------------------
// RecordReplayGateway

namespace {

json request_to_json(const GenerationRequest& r) {
    return json{{"prompt", r.prompt},
                {"stop", r.stop_sequences},
                {"max_new_tokens", r.max_new_tokens},
                {"temperature", r.temperature},
                {"model", r.model}};
}

json result_to_json(const GenerationResult& r) {
    return json{{"text", r.text}, {"finish", to_string(r.finish)}, {"latency", r.latency_s}};
}

}  // namespace

RecordReplayGateway::RecordReplayGateway(Mode mode, std::shared_ptr<Gateway> inner)
    : mode_(mode), inner_(std::move(inner)) {}

std::unique_ptr<RecordReplayGateway> RecordReplayGateway::record(
    const std::filesystem::path& session, std::shared_ptr<Gateway> inner) {
    if (!inner) throw ConfigError("record mode needs an underlying gateway");
    std::unique_ptr<RecordReplayGateway> gw(new RecordReplayGateway(Mode::record, std::move(inner)));
    gw->out_ = jsonl::open_for_write(session, /*append=*/true);
    return gw;
}

std::unique_ptr<RecordReplayGateway> RecordReplayGateway::replay(const std::filesystem::path& session) {
    std::unique_ptr<RecordReplayGateway> gw(new RecordReplayGateway(Mode::replay, nullptr));
    jsonl::for_each_object(session, [&](const json& obj, std::size_t line) {
        std::string hash = jsonl::require_string(obj, "hash", line);
        const json& res = jsonl::require(obj, "result", line);
        if (!res.is_object()) throw SchemaError(line, "result", "expected an object");
        GenerationResult r;
        r.text = jsonl::require_string(res, "text", line);
        try {
            r.finish = finish_reason_from_string(jsonl::require_string(res, "finish", line));
        } catch (const ValidationError& err) {
            throw SchemaError(line, "finish", err.what());
        }
        r.latency_s = jsonl::require_number(res, "latency", line);
        // First recording of a request wins.
        gw->table_.emplace(std::move(hash), std::move(r));
        ++gw->recorded_;
    });
    return gw;
}

GenerationResult RecordReplayGateway::generate(const GenerationRequest& request) {
    request.validate();
    const std::string hash = request_hash(request);
    if (mode_ == Mode::replay) {
        std::lock_guard lock(mu_);
        auto it = table_.find(hash);
        if (it == table_.end()) throw ReplayMissError(hash);
        return it->second;
    }
    GenerationResult result = inner_->generate(request);
    std::lock_guard lock(mu_);
    ++inner_calls_;
    out_ << jsonl::to_line(json{{"hash", hash},
                                {"request", request_to_json(request)},
                                {"result", result_to_json(result)}});
    out_.flush();
    if (!out_) throw IoError("failed appending to record session");
    ++recorded_;
    return result;
}

std::size_t RecordReplayGateway::recorded() const {
    std::lock_guard lock(mu_);
    return recorded_;
}

std::size_t RecordReplayGateway::inner_calls() const {
    std::lock_guard lock(mu_);
    return inner_calls_;
}

}  // namespace stepkd
