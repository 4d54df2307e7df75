#include "stepkd/engine.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>
#include <unordered_set>

#include "stepkd/errors.hpp"
#include "stepkd/text.hpp"

namespace stepkd {

using jsonl::json;

std::string_view to_string(StrategyKind k) {
    return k == StrategyKind::decomposition ? "decomposition" : "rationale_chain";
}

StrategyKind strategy_kind_from_string(std::string_view s) {
    if (s == "rationale_chain") return StrategyKind::rationale_chain;
    if (s == "decomposition") return StrategyKind::decomposition;
    throw ConfigError("unknown strategy '" + std::string(s) +
                      "' (expected rationale_chain or decomposition)");
}

StepStrategy StepStrategy::rationale_chain() { return {}; }

StepStrategy StepStrategy::decomposition() {
    return {StrategyKind::decomposition, std::string(kDecompositionAnswerFlag),
            PromptTemplate::decomposition()};
}

StepStrategy StepStrategy::of(StrategyKind kind) {
    return kind == StrategyKind::decomposition ? decomposition() : rationale_chain();
}

void RunConfig::validate() const {
    if (max_steps < 1) throw ConfigError("max_steps must be >= 1");
    if (top_k < 1) throw ConfigError("top_k must be >= 1");
    if (strategy.answer_flag.empty()) throw ConfigError("answer flag must be non-empty");
    if (max_new_tokens < 1) throw ConfigError("max_new_tokens must be >= 1");
    if (!(temperature >= 0.0)) throw ConfigError("temperature must be >= 0");
}

std::string_view to_string(TerminationCause c) {
    return c == TerminationCause::answer_flag ? "answer_flag" : "max_steps";
}

TerminationCause termination_cause_from_string(std::string_view s) {
    if (s == "answer_flag") return TerminationCause::answer_flag;
    if (s == "max_steps") return TerminationCause::max_steps;
    throw ValidationError("unknown termination cause '" + std::string(s) + "'");
}

std::vector<std::string> ReasoningTrace::passages_up_to(std::size_t s) const {
    std::vector<std::string> out;
    std::unordered_set<std::string> seen;
    for (std::size_t i = 0; i < std::min(s, steps.size()); ++i)
        for (const auto& h : steps[i].hits)
            if (seen.insert(h.id).second) out.push_back(h.id);
    return out;
}

std::vector<std::string> ReasoningTrace::reasoning() const {
    std::vector<std::string> out;
    out.reserve(steps.size());
    for (const auto& st : steps) out.push_back(st.reasoning);
    return out;
}

std::string ReasoningTrace::full_text() const { return join(reasoning(), reasoning_joiner); }

std::optional<std::string> detect_answer(std::string_view text, std::string_view flag) {
    if (flag.empty()) return std::nullopt;
    const auto pos = text.rfind(flag);
    if (pos == std::string_view::npos) return std::nullopt;
    std::string answer = trim(text.substr(pos + flag.size()));
    if (!answer.empty() && answer.back() == '.') answer = trim(answer.substr(0, answer.size() - 1));
    return answer;
}

std::optional<std::string> next_query(const StepStrategy& strategy, const ReasoningTrace& trace) {
    if (trace.steps.empty()) throw ValidationError("next_query needs at least one reasoning step");
    const std::string& last = trace.steps.back().reasoning;
    if (strategy.kind == StrategyKind::rationale_chain) return trim(last);

    static constexpr std::string_view kMarker = "Follow up:";
    std::optional<std::string> found;
    std::istringstream lines(last);
    std::string line;
    while (std::getline(lines, line)) {
        const std::string t = trim(line);
        if (t.starts_with(kMarker)) found = trim(std::string_view(t).substr(kMarker.size()));
    }
    if (found && found->empty()) return std::nullopt;
    return found;
}

namespace {

GenerationRequest make_request(std::string prompt, const std::vector<std::string>& stops,
                               const RunConfig& config) {
    GenerationRequest req;
    req.prompt = std::move(prompt);
    req.stop_sequences = stops;
    req.max_new_tokens = config.max_new_tokens;
    req.temperature = config.temperature;
    req.model = config.model;
    return req;
}

std::vector<const Passage*> resolve(const InvertedIndex& index, std::span<const std::string> ids) {
    std::vector<const Passage*> out;
    out.reserve(ids.size());
    for (const auto& id : ids) out.push_back(&index.passage(id));
    return out;
}

void accumulate(std::vector<std::string>& acc, std::unordered_set<std::string>& seen,
                const std::vector<ScoredHit>& hits) {
    for (const auto& h : hits)
        if (seen.insert(h.id).second) acc.push_back(h.id);
}

ReasoningTrace new_trace(std::string_view sample_id, std::string_view question, const RunConfig& config) {
    ReasoningTrace trace;
    trace.sample_id = sample_id;
    trace.question = question;
    trace.single_step = config.single_step;
    trace.answer_flag = config.strategy.answer_flag;
    trace.reasoning_joiner = config.strategy.prompt.reasoning_joiner;
    return trace;
}

template <typename Fn>
ReasoningTrace with_sample_context(std::string_view sample_id, Fn&& fn) {
    try {
        return fn();
    } catch (const SampleError&) {
        throw;
    } catch (const Error& e) {
        throw SampleError(std::string(sample_id), e.kind(), e.what());
    }
}

}  // namespace

ReasoningTrace run_single_step(std::string_view sample_id, std::string_view question,
                               const InvertedIndex& index, Gateway& gateway, const RunConfig& config) {
    config.validate();
    return with_sample_context(sample_id, [&] {
        ReasoningTrace trace = new_trace(sample_id, question, config);
        trace.single_step = true;
        TraceStep step;
        step.query = std::string(question);
        step.hits = index.search(question, config.top_k);
        for (const auto& h : step.hits) trace.passages.push_back(h.id);
        const auto passages = resolve(index, trace.passages);
        const PromptTemplate& tpl = config.strategy.prompt;
        std::string prompt = render_prompt(tpl, question, passages, {}, false, config.strategy.answer_flag);
        const auto result =
            gateway.generate(make_request(std::move(prompt), tpl.single_step_stop_sequences, config));
        step.reasoning = trim(result.text);
        trace.steps.push_back(std::move(step));
        trace.terminated_at = 1;
        trace.answer = detect_answer(trace.steps.back().reasoning, config.strategy.answer_flag);
        trace.cause = trace.answer ? TerminationCause::answer_flag : TerminationCause::max_steps;
        return trace;
    });
}

ReasoningTrace run_multi_step(std::string_view sample_id, std::string_view question,
                              const InvertedIndex& index, Gateway& gateway, const RunConfig& config) {
    config.validate();
    return with_sample_context(sample_id, [&] {
        ReasoningTrace trace = new_trace(sample_id, question, config);
        const StepStrategy& strategy = config.strategy;
        const PromptTemplate& tpl = strategy.prompt;
        std::unordered_set<std::string> seen;
        std::vector<std::string> reasoning;
        int empty_streak = 0;

        for (std::size_t s = 1; s <= config.max_steps; ++s) {
            TraceStep step;
            bool aggregate = s == config.max_steps;
            bool forced = false;
            if (s == 1) {
                step.query = std::string(question);
            } else if (auto q = next_query(strategy, trace)) {
                step.query = std::move(*q);
            } else {
                // Malformed decomposition step: conclude with what we have.
                aggregate = true;
                forced = true;
            }
            if (!forced) step.hits = index.search(step.query, config.top_k);
            accumulate(trace.passages, seen, step.hits);
            step.aggregation = aggregate;

            const auto passages = resolve(index, trace.passages);
            std::string prompt =
                render_prompt(tpl, question, passages, reasoning, aggregate, strategy.answer_flag);
            const auto result =
                gateway.generate(make_request(std::move(prompt), tpl.step_stop_sequences, config));
            step.reasoning = trim(result.text);

            if (step.reasoning.empty()) {
                if (++empty_streak >= 2)
                    throw DegenerateOutputError("model returned an empty reasoning step twice in a row (step " +
                                                std::to_string(s) + ")");
            } else {
                empty_streak = 0;
            }
            reasoning.push_back(step.reasoning);
            trace.steps.push_back(std::move(step));

            if (auto answer = detect_answer(trace.steps.back().reasoning, strategy.answer_flag)) {
                trace.answer = std::move(answer);
                trace.cause = TerminationCause::answer_flag;
                break;
            }
            if (aggregate) {
                trace.cause = TerminationCause::max_steps;
                break;
            }
        }
        trace.terminated_at = trace.steps.size();
        return trace;
    });
}

ReasoningTrace run_trace(std::string_view sample_id, std::string_view question,
                         const InvertedIndex& index, Gateway& gateway, const RunConfig& config) {
    return config.single_step ? run_single_step(sample_id, question, index, gateway, config)
                              : run_multi_step(sample_id, question, index, gateway, config);
}

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
    workers = std::max<std::size_t>(1, std::min(workers, n));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i; (i = next.fetch_add(1)) < n;) {
                    try {
                        fn(i);
                    } catch (...) {
                        std::lock_guard lock(failure_mu);
                        if (!failure) failure = std::current_exception();
                        next.store(n);
                    }
                }
            });
        }
    }
    if (failure) std::rethrow_exception(failure);
}

std::vector<BatchOutcome> run_batch(std::span<const QASample> samples, const InvertedIndex& index,
                                    Gateway& gateway, const RunConfig& config, std::size_t workers,
                                    const std::function<void(std::size_t)>& progress) {
    config.validate();
    std::vector<BatchOutcome> outcomes(samples.size());
    std::atomic<std::size_t> done{0};
    std::mutex progress_mu;
    parallel_for(samples.size(), workers, [&](std::size_t i) {
        BatchOutcome& out = outcomes[i];
        try {
            out.trace = run_trace(samples[i].id, samples[i].question, index, gateway, config);
        } catch (const SampleError& e) {
            out.error_kind = e.cause();
            out.error_message = e.what();
        } catch (const Error& e) {
            out.error_kind = e.kind();
            out.error_message = "sample '" + samples[i].id + "': " + e.what();
        }
        const std::size_t finished = done.fetch_add(1) + 1;
        if (progress) {
            std::lock_guard lock(progress_mu);
            progress(finished);
        }
    });
    return outcomes;
}

json trace_to_json(const ReasoningTrace& trace) {
    json steps = json::array();
    for (std::size_t i = 0; i < trace.steps.size(); ++i) {
        const TraceStep& st = trace.steps[i];
        json hits = json::array();
        for (const auto& h : st.hits) hits.push_back(json{{"id", h.id}, {"score", h.score}});
        steps.push_back(json{{"step", i + 1},
                             {"query", st.query},
                             {"hits", std::move(hits)},
                             {"reasoning", st.reasoning},
                             {"aggregation", st.aggregation}});
    }
    return json{{"id", trace.sample_id},
                {"question", trace.question},
                {"single_step", trace.single_step},
                {"answer_flag", trace.answer_flag},
                {"reasoning_joiner", trace.reasoning_joiner},
                {"steps", std::move(steps)},
                {"passages", trace.passages},
                {"terminated_at", trace.terminated_at},
                {"cause", to_string(trace.cause)},
                {"answer", trace.answer ? json(*trace.answer) : json(nullptr)},
                {"text", trace.full_text()}};
}

ReasoningTrace trace_from_json(const json& obj, std::size_t line) {
    ReasoningTrace t;
    t.sample_id = jsonl::require_string(obj, "id", line);
    t.question = jsonl::require_string(obj, "question", line);
    if (auto it = obj.find("single_step"); it != obj.end()) {
        if (!it->is_boolean()) throw SchemaError(line, "single_step", "expected a boolean");
        t.single_step = it->get<bool>();
    }
    if (obj.contains("answer_flag")) t.answer_flag = jsonl::require_string(obj, "answer_flag", line);
    if (obj.contains("reasoning_joiner"))
        t.reasoning_joiner = jsonl::require_string(obj, "reasoning_joiner", line);
    const json& steps = jsonl::require(obj, "steps", line);
    if (!steps.is_array() || steps.empty())
        throw SchemaError(line, "steps", "expected a non-empty list");
    for (const auto& st : steps) {
        if (!st.is_object()) throw SchemaError(line, "steps", "expected objects");
        TraceStep step;
        step.query = jsonl::require_string(st, "query", line);
        step.reasoning = jsonl::require_string(st, "reasoning", line);
        if (auto it = st.find("aggregation"); it != st.end() && it->is_boolean())
            step.aggregation = it->get<bool>();
        const json& hits = jsonl::require(st, "hits", line);
        if (!hits.is_array()) throw SchemaError(line, "hits", "expected a list");
        for (const auto& h : hits) {
            if (!h.is_object()) throw SchemaError(line, "hits", "expected objects");
            step.hits.push_back({jsonl::require_string(h, "id", line), jsonl::require_number(h, "score", line)});
        }
        t.steps.push_back(std::move(step));
    }
    t.passages = t.passages_up_to(t.steps.size());
    const auto terminated = jsonl::require_int(obj, "terminated_at", line);
    if (terminated < 1 || static_cast<std::size_t>(terminated) != t.steps.size())
        throw SchemaError(line, "terminated_at", "must equal the number of steps");
    t.terminated_at = static_cast<std::size_t>(terminated);
    try {
        t.cause = termination_cause_from_string(jsonl::require_string(obj, "cause", line));
    } catch (const ValidationError& e) {
        throw SchemaError(line, "cause", e.what());
    }
    if (auto it = obj.find("answer"); it != obj.end() && !it->is_null()) {
        if (!it->is_string()) throw SchemaError(line, "answer", "expected a string or null");
        t.answer = it->get<std::string>();
    }
    return t;
}

void write_traces(const std::filesystem::path& path, std::span<const ReasoningTrace> traces) {
    auto out = jsonl::open_for_write(path);
    for (const auto& t : traces) out << jsonl::to_line(trace_to_json(t));
    if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::vector<ReasoningTrace> read_traces(const std::filesystem::path& path) {
    std::vector<ReasoningTrace> out;
    jsonl::for_each_object(path, [&](const json& obj, std::size_t line) {
        out.push_back(trace_from_json(obj, line));
    });
    return out;
}

}  // namespace stepkd
