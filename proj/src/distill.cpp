#include "stepkd/distill.hpp"

#include "stepkd/errors.hpp"
#include "stepkd/metrics.hpp"
#include "stepkd/text.hpp"

namespace stepkd {

using jsonl::json;

std::string_view to_string(Stage s) {
    switch (s) {
        case Stage::init: return "init";
        case Stage::exp: return "exp";
        case Stage::agg: return "agg";
    }
    return "init";
}

std::optional<Stage> stage_from_string(std::string_view s) {
    if (s == "init") return Stage::init;
    if (s == "exp") return Stage::exp;
    if (s == "agg") return Stage::agg;
    return std::nullopt;
}

FilterMode filter_mode_from_string(std::string_view s) {
    if (s == "exact") return FilterMode::exact;
    if (s == "contain") return FilterMode::contain;
    throw ConfigError("unknown filter mode '" + std::string(s) + "' (expected exact or contain)");
}

std::string_view to_string(FilterMode m) { return m == FilterMode::exact ? "exact" : "contain"; }

AnswerStyle answer_style_from_string(std::string_view s) {
    if (s == "teacher") return AnswerStyle::teacher;
    if (s == "gold") return AnswerStyle::gold_canonical;
    throw ConfigError("unknown answer style '" + std::string(s) + "' (expected teacher or gold)");
}

std::string_view to_string(AnswerStyle s) { return s == AnswerStyle::teacher ? "teacher" : "gold"; }

std::optional<std::size_t> matching_gold(std::optional<std::string_view> extracted,
                                         std::span<const std::string> golds, FilterMode mode) {
    if (!extracted) return std::nullopt;
    const std::string e = normalize_answer(*extracted);
    if (e.empty()) return std::nullopt;
    for (std::size_t i = 0; i < golds.size(); ++i) {
        const std::string g = normalize_answer(golds[i]);
        if (g.empty()) continue;
        if (mode == FilterMode::exact ? e == g : e.find(g) != std::string::npos) return i;
    }
    return std::nullopt;
}

bool is_correct(std::optional<std::string_view> extracted, std::span<const std::string> golds,
                FilterMode mode) {
    return matching_gold(extracted, golds, mode).has_value();
}

std::vector<StepwiseRecord> records_from_trace(const ReasoningTrace& trace, const InvertedIndex& index,
                                               const DistillConfig& config, const std::string& gold) {
    const std::size_t final_step = trace.terminated_at;
    if (final_step == 0 || final_step != trace.steps.size())
        throw ValidationError("trace '" + trace.sample_id + "' has inconsistent step count");

    // Student inputs carry no few-shot demonstrations.
    PromptTemplate tpl = config.run.strategy.prompt;
    tpl.demonstrations.clear();
    const std::string& joiner = tpl.reasoning_joiner;
    const std::string& flag = config.run.strategy.answer_flag;

    auto input_at = [&](std::size_t s) {
        const auto ids = trace.passages_up_to(s);
        std::vector<const Passage*> passages;
        for (const auto& id : ids) passages.push_back(&index.passage(id));
        return std::make_pair(render_prompt(tpl, trace.question, passages, {}, false, flag), ids);
    };

    std::vector<StepwiseRecord> out;
    std::string chain;  // R_{<=s}
    for (std::size_t s = 1; s < final_step; ++s) {
        if (s > 1) chain += joiner;
        chain += trace.steps[s - 1].reasoning;
        auto [input, ids] = input_at(s);
        out.push_back({trace.sample_id, s == 1 ? Stage::init : Stage::exp, s, std::move(input), chain,
                       std::move(ids), std::nullopt});
    }

    std::string statement = trace.steps[final_step - 1].reasoning;
    if (config.answer_style == AnswerStyle::gold_canonical) {
        const auto pos = statement.rfind(flag);
        statement = (pos == std::string::npos ? statement + " " + flag : statement.substr(0, pos + flag.size())) +
                    " " + gold;
        statement = trim(statement);
    }
    std::string target = chain.empty() ? statement : chain + joiner + statement;
    auto [input, ids] = input_at(final_step);
    out.push_back({trace.sample_id, Stage::agg, final_step, std::move(input), std::move(target), std::move(ids),
                   gold});
    return out;
}

FilterReport build_stepwise(const QADataset& dataset, const InvertedIndex& index, Gateway& teacher,
                            const DistillConfig& config, const RecordSink& sink,
                            const std::function<void(std::size_t)>& progress) {
    const auto outcomes = run_batch(dataset.samples(), index, teacher, config.run, config.workers, progress);
    FilterReport report;
    const auto samples = dataset.samples();
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const QASample& sample = samples[i];
        const BatchOutcome& o = outcomes[i];
        ++report.total;
        if (!o.trace) {
            ++report.dropped_degenerate;
            report.drops.push_back({sample.id, "degenerate", o.error_kind + ": " + o.error_message});
            continue;
        }
        const ReasoningTrace& trace = *o.trace;
        const std::optional<std::string_view> extracted =
            trace.answer ? std::optional<std::string_view>(*trace.answer) : std::nullopt;
        const auto match = matching_gold(extracted, sample.answers, config.filter);
        if (!match) {
            ++report.dropped_wrong_answer;
            report.drops.push_back({sample.id, "wrong_answer",
                                    trace.answer ? "teacher answered '" + *trace.answer + "'"
                                                 : std::string("no answer flag in final step")});
            continue;
        }
        const auto records = records_from_trace(trace, index, config, sample.answers[*match]);
        ++report.kept;
        ++report.kept_by_steps[trace.terminated_at];
        report.records += records.size();
        for (const auto& r : records) sink(r);
    }
    return report;
}

DistillResult build_stepwise(const QADataset& dataset, const InvertedIndex& index, Gateway& teacher,
                             const DistillConfig& config) {
    DistillResult result;
    result.report = build_stepwise(dataset, index, teacher, config,
                                   [&](const StepwiseRecord& r) { result.records.push_back(r); });
    return result;
}

json FilterReport::to_json() const {
    json hist = json::object();
    for (const auto& [steps, n] : kept_by_steps) hist[std::to_string(steps)] = n;
    json drop_list = json::array();
    for (const auto& d : drops) drop_list.push_back(json{{"id", d.sample_id}, {"reason", d.reason}, {"detail", d.detail}});
    return json{{"total", total},
                {"kept", kept},
                {"dropped_wrong_answer", dropped_wrong_answer},
                {"dropped_degenerate", dropped_degenerate},
                {"records", records},
                {"kept_by_steps", std::move(hist)},
                {"drops", std::move(drop_list)}};
}

FilterReport FilterReport::from_json(const json& obj) {
    FilterReport r;
    auto count = [&](const char* f) { return static_cast<std::size_t>(jsonl::require_int(obj, f, 1)); };
    r.total = count("total");
    r.kept = count("kept");
    r.dropped_wrong_answer = count("dropped_wrong_answer");
    r.dropped_degenerate = count("dropped_degenerate");
    r.records = count("records");
    for (const auto& [k, v] : jsonl::require(obj, "kept_by_steps", 1).items())
        r.kept_by_steps[std::stoul(k)] = v.get<std::size_t>();
    for (const auto& d : jsonl::require(obj, "drops", 1))
        r.drops.push_back({jsonl::require_string(d, "id", 1), jsonl::require_string(d, "reason", 1),
                           jsonl::require_string(d, "detail", 1)});
    return r;
}

json record_to_json(const StepwiseRecord& r) {
    json obj{{"sample_id", r.sample_id},
             {"stage", to_string(r.stage)},
             {"step", r.step},
             {"input", r.input},
             {"target", r.target},
             {"passage_ids", r.passage_ids}};
    if (r.answer) obj["answer"] = *r.answer;
    return obj;
}

StepwiseRecord record_from_json(const json& obj, std::size_t line) {
    StepwiseRecord r;
    r.sample_id = jsonl::require_string(obj, "sample_id", line);
    const std::string stage = jsonl::require_string(obj, "stage", line);
    const auto parsed = stage_from_string(stage);
    if (!parsed) throw SchemaError(line, "stage", "'" + stage + "' is not one of init, exp, agg");
    r.stage = *parsed;
    const auto step = jsonl::require_int(obj, "step", line);
    if (step < 1) throw SchemaError(line, "step", "must be >= 1");
    r.step = static_cast<std::size_t>(step);
    if (r.stage == Stage::init && r.step != 1) throw SchemaError(line, "step", "init records must have step 1");
    if (r.stage == Stage::exp && r.step < 2) throw SchemaError(line, "step", "exp records must have step >= 2");
    r.input = jsonl::require_string(obj, "input", line);
    r.target = jsonl::require_string(obj, "target", line);
    r.passage_ids = jsonl::require_string_list(obj, "passage_ids", line);
    if (obj.contains("answer")) r.answer = jsonl::require_string(obj, "answer", line);
    if (r.stage == Stage::agg && !r.answer) throw SchemaError(line, "answer", "missing (required for agg)");
    return r;
}

void write_records(const std::filesystem::path& path, std::span<const StepwiseRecord> records) {
    auto out = jsonl::open_for_write(path);
    for (const auto& r : records) out << jsonl::to_line(record_to_json(r));
    if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::vector<StepwiseRecord> read_records(const std::filesystem::path& path) {
    std::vector<StepwiseRecord> out;
    jsonl::for_each_object(path, [&](const json& obj, std::size_t line) {
        out.push_back(record_from_json(obj, line));
    });
    return out;
}

}  // namespace stepkd
