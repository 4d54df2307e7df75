#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "stepkd/corpus.hpp"
#include "stepkd/engine.hpp"
#include "stepkd/jsonl.hpp"

namespace stepkd {

// Lowercase, drop punctuation, drop the articles a/an/the as whole words,
// collapse whitespace.
std::string normalize_answer(std::string_view text);

// Empty or missing predictions score 0. Multiple gold aliases score by max.
int exact_match(std::optional<std::string_view> prediction, std::span<const std::string> golds);
double f1_score(std::optional<std::string_view> prediction, std::span<const std::string> golds);
// 1 iff some normalized gold occurs inside the normalized generated text.
int accuracy(std::string_view generated_text, std::span<const std::string> golds);

struct Prediction {
    std::string sample_id;
    std::string text;
    std::optional<std::string> answer;
    std::size_t step_count = 1;
    std::vector<std::vector<std::string>> retrieved;  // one id list per step

    static Prediction from_trace(const ReasoningTrace& trace);
};

std::vector<Prediction> read_predictions(const std::filesystem::path& path);

struct RecallSummary {
    double recall = 0.0;
    std::size_t annotated = 0;  // samples with supporting ids
    std::size_t excluded = 0;   // samples without
    std::size_t relevant = 0;
    std::size_t relevant_retrieved = 0;
};

// Micro-averaged: supporting ids retrieved at any step over all supporting
// ids. Throws ValidationError("recall unavailable ...") when no prediction's
// sample carries supporting ids.
RecallSummary retrieval_recall(std::span<const Prediction> predictions, const QADataset& dataset);

// (retrieved with multiplicity - unique) / retrieved for one run; 0 for a
// run that retrieved nothing.
double run_duplicativeness(const std::vector<std::vector<std::string>>& steps);
// Mean of run_duplicativeness over runs; 0 for no runs.
double duplicativeness(std::span<const Prediction> predictions);

struct StepRow {
    std::size_t steps = 0;
    std::size_t finals = 0;
    std::size_t correct = 0;
    std::optional<double> accuracy;  // percent; nullopt when finals == 0

    bool operator==(const StepRow&) const = default;
};

struct StepTable {
    std::vector<StepRow> rows;  // ascending step count
    std::size_t total = 0;
    std::size_t correct = 0;
    std::optional<double> overall;  // percent; nullopt when total == 0

    bool operator==(const StepTable&) const = default;
};

struct StepOutcome {
    std::size_t steps = 1;
    bool correct = false;
};

// Groups outcomes by exact step count. Rows 1..max_steps are always present
// (possibly empty) when max_steps > 0.
StepTable step_histogram(std::span<const StepOutcome> outcomes, std::size_t max_steps = 0);

struct SampleScore {
    std::string id;
    int em = 0;
    double f1 = 0.0;
    int acc = 0;
    std::size_t steps = 1;

    bool operator==(const SampleScore&) const = default;
};

struct MetricsReport {
    std::size_t n = 0;
    double em = 0.0;   // percent
    double f1 = 0.0;   // percent
    double acc = 0.0;  // percent
    std::optional<double> recall;  // [0, 1]
    std::size_t recall_annotated = 0;
    std::size_t recall_excluded = 0;
    double duplicativeness = 0.0;  // [0, 1]
    StepTable steps;
    std::vector<SampleScore> samples;

    bool operator==(const MetricsReport&) const = default;

    static constexpr std::string_view kSchema = "stepkd.metrics/1";
};

// Throws ValidationError listing prediction ids missing from the dataset,
// or duplicated in the predictions.
MetricsReport score_run(std::span<const Prediction> predictions, const QADataset& dataset,
                        std::size_t max_steps = 0);

// Line-delimited report: a summary object followed by one object per sample.
void write_report(const std::filesystem::path& path, const MetricsReport& report);
MetricsReport read_report(const std::filesystem::path& path);
jsonl::json report_summary_json(const MetricsReport& report);
// Throws SchemaError when the summary object violates the report schema.
void validate_report_summary(const jsonl::json& summary);
std::string format_report(const MetricsReport& report);

}  // namespace stepkd
