#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "stepkd/corpus.hpp"
#include "stepkd/engine.hpp"
#include "stepkd/jsonl.hpp"

namespace stepkd {

enum class Stage { init, exp, agg };

std::string_view to_string(Stage s);
std::optional<Stage> stage_from_string(std::string_view s);

// One training example: the input context visible at step `step` and the
// cumulative reasoning the student should produce from it.
struct StepwiseRecord {
    std::string sample_id;
    Stage stage = Stage::init;
    std::size_t step = 1;
    std::string input;
    std::string target;
    std::vector<std::string> passage_ids;
    // Gold answer alias the aggregation target concludes with (agg only).
    std::optional<std::string> answer;

    bool operator==(const StepwiseRecord&) const = default;
};

enum class FilterMode { exact, contain };
FilterMode filter_mode_from_string(std::string_view s);
std::string_view to_string(FilterMode m);

// What follows the answer flag in an aggregation target: the teacher's own
// final step verbatim, or the flag followed by the matched gold alias.
enum class AnswerStyle { teacher, gold_canonical };
AnswerStyle answer_style_from_string(std::string_view s);
std::string_view to_string(AnswerStyle s);

// Index of the first gold alias the extraction matches, if any. exact:
// normalized equality; contain: normalized gold is a substring of the
// normalized extraction.
std::optional<std::size_t> matching_gold(std::optional<std::string_view> extracted,
                                         std::span<const std::string> golds, FilterMode mode);

bool is_correct(std::optional<std::string_view> extracted, std::span<const std::string> golds,
                FilterMode mode);

struct DropEntry {
    std::string sample_id;
    std::string reason;  // "wrong_answer" or "degenerate"
    std::string detail;
};

struct FilterReport {
    std::size_t total = 0;
    std::size_t kept = 0;
    std::size_t dropped_wrong_answer = 0;
    std::size_t dropped_degenerate = 0;
    std::size_t records = 0;
    std::map<std::size_t, std::size_t> kept_by_steps;
    std::vector<DropEntry> drops;

    bool conserved() const { return kept + dropped_wrong_answer + dropped_degenerate == total; }
    jsonl::json to_json() const;
    static FilterReport from_json(const jsonl::json& obj);
};

struct DistillConfig {
    RunConfig run;
    FilterMode filter = FilterMode::exact;
    AnswerStyle answer_style = AnswerStyle::teacher;
    std::size_t workers = 1;
};

// Stage records for one kept trace. A trace of S' steps yields one init
// record, S'-2 expansion records and one aggregation record; S' = 1 yields
// the aggregation record alone. `gold` is the alias the answer matched.
std::vector<StepwiseRecord> records_from_trace(const ReasoningTrace& trace, const InvertedIndex& index,
                                               const DistillConfig& config, const std::string& gold);

using RecordSink = std::function<void(const StepwiseRecord&)>;

// Runs the teacher over every sample, filters by final-answer correctness
// and streams records to `sink` in dataset order. Per-sample gateway or
// degenerate-output failures are counted, never thrown.
FilterReport build_stepwise(const QADataset& dataset, const InvertedIndex& index, Gateway& teacher,
                            const DistillConfig& config, const RecordSink& sink,
                            const std::function<void(std::size_t)>& progress = {});

struct DistillResult {
    std::vector<StepwiseRecord> records;
    FilterReport report;
};

DistillResult build_stepwise(const QADataset& dataset, const InvertedIndex& index, Gateway& teacher,
                             const DistillConfig& config);

jsonl::json record_to_json(const StepwiseRecord& r);
StepwiseRecord record_from_json(const jsonl::json& obj, std::size_t line);

void write_records(const std::filesystem::path& path, std::span<const StepwiseRecord> records);
std::vector<StepwiseRecord> read_records(const std::filesystem::path& path);

}  // namespace stepkd
