#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "stepkd/bm25.hpp"
#include "stepkd/gateway.hpp"
#include "stepkd/jsonl.hpp"
#include "stepkd/prompts.hpp"

namespace stepkd {

enum class StrategyKind { rationale_chain, decomposition };

std::string_view to_string(StrategyKind k);
StrategyKind strategy_kind_from_string(std::string_view s);

// How the step-search query for step s > 1 is derived, plus the answer flag
// and prompt layout that go with it.
struct StepStrategy {
    StrategyKind kind = StrategyKind::rationale_chain;
    std::string answer_flag{kRationaleAnswerFlag};
    PromptTemplate prompt = PromptTemplate::rationale_chain();

    static StepStrategy rationale_chain();
    static StepStrategy decomposition();
    static StepStrategy of(StrategyKind kind);
};

struct RunConfig {
    std::size_t max_steps = 5;
    std::size_t top_k = 4;
    StepStrategy strategy;
    bool single_step = false;
    int max_new_tokens = 256;
    double temperature = 0.0;
    std::string model;

    void validate() const;
};

enum class TerminationCause { answer_flag, max_steps };

std::string_view to_string(TerminationCause c);
TerminationCause termination_cause_from_string(std::string_view s);

struct TraceStep {
    std::string query;
    std::vector<ScoredHit> hits;
    std::string reasoning;
    // True when this step was generated under the conclude-now prompt.
    bool aggregation = false;

    bool operator==(const TraceStep&) const = default;
};

struct ReasoningTrace {
    std::string sample_id;
    std::string question;
    std::vector<TraceStep> steps;
    // Order-preserving union of all step hits (first occurrence kept).
    std::vector<std::string> passages;
    std::size_t terminated_at = 0;
    TerminationCause cause = TerminationCause::max_steps;
    bool single_step = false;
    std::string answer_flag;
    std::string reasoning_joiner = " ";
    std::optional<std::string> answer;

    // Unique passage ids retrieved in steps 1..s, first-retrieval order.
    std::vector<std::string> passages_up_to(std::size_t s) const;
    std::vector<std::string> reasoning() const;
    // All reasoning steps joined by reasoning_joiner.
    std::string full_text() const;

    bool operator==(const ReasoningTrace&) const = default;
};

// Trimmed text after the last occurrence of `flag`, with one trailing period
// removed. nullopt when the flag is absent.
std::optional<std::string> detect_answer(std::string_view text, std::string_view flag);

// Query for the next step: the last reasoning step (rationale chain) or the
// last "Follow up:" question of the last step (decomposition). nullopt
// means the step carried no follow-up and aggregation must be forced.
// Throws ValidationError when the trace has no steps.
std::optional<std::string> next_query(const StepStrategy& strategy, const ReasoningTrace& trace);

// One retrieval with the question, one generation. Gateway failures are
// rethrown as SampleError carrying the sample id.
ReasoningTrace run_single_step(std::string_view sample_id, std::string_view question,
                               const InvertedIndex& index, Gateway& gateway, const RunConfig& config);

// Interleaved retrieve-then-reason loop, at most config.max_steps steps.
ReasoningTrace run_multi_step(std::string_view sample_id, std::string_view question,
                              const InvertedIndex& index, Gateway& gateway, const RunConfig& config);

// Dispatches on config.single_step.
ReasoningTrace run_trace(std::string_view sample_id, std::string_view question,
                         const InvertedIndex& index, Gateway& gateway, const RunConfig& config);

struct BatchOutcome {
    std::optional<ReasoningTrace> trace;
    std::string error_kind;
    std::string error_message;
};

// Runs every sample on a bounded pool of `workers` threads. Outcomes are
// returned in input order; per-sample failures are captured, not thrown.
std::vector<BatchOutcome> run_batch(std::span<const QASample> samples, const InvertedIndex& index,
                                    Gateway& gateway, const RunConfig& config, std::size_t workers,
                                    const std::function<void(std::size_t done)>& progress = {});

jsonl::json trace_to_json(const ReasoningTrace& trace);
ReasoningTrace trace_from_json(const jsonl::json& obj, std::size_t line);

void write_traces(const std::filesystem::path& path, std::span<const ReasoningTrace> traces);
std::vector<ReasoningTrace> read_traces(const std::filesystem::path& path);

// Runs fn(i) for i in [0, n) on up to `workers` threads.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

}  // namespace stepkd
