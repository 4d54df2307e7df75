#include "stepkd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "stepkd/errors.hpp"
#include "stepkd/text.hpp"

namespace stepkd {

using jsonl::json;

namespace {

bool is_ascii_punct(char32_t cp) {
    return (cp >= 0x21 && cp <= 0x2F) || (cp >= 0x3A && cp <= 0x40) || (cp >= 0x5B && cp <= 0x60) ||
           (cp >= 0x7B && cp <= 0x7E);
}

bool is_unicode_space(char32_t cp) {
    return cp == 0xA0 || cp == 0x1680 || (cp >= 0x2000 && cp <= 0x200B) || cp == 0x202F ||
           cp == 0x205F || cp == 0x3000;
}

bool is_unicode_punct(char32_t cp) {
    return (cp >= 0xA1 && cp <= 0xBF && cp != 0xAA && cp != 0xB5 && cp != 0xBA) ||
           (cp >= 0x2010 && cp <= 0x205E);
}

std::vector<std::string> split_ws(std::string_view s) {
    std::vector<std::string> out;
    std::istringstream in{std::string(s)};
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
}

// Order-independent sum.
double stable_sum(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    return std::accumulate(values.begin(), values.end(), 0.0);
}

bool has_text(std::optional<std::string_view> p) { return p && !trim(*p).empty(); }

double token_f1(const std::vector<std::string>& pred, const std::vector<std::string>& gold) {
    if (pred.empty() || gold.empty()) return pred.empty() && gold.empty() ? 1.0 : 0.0;
    std::unordered_map<std::string, int> counts;
    for (const auto& t : gold) ++counts[t];
    int same = 0;
    for (const auto& t : pred) {
        auto it = counts.find(t);
        if (it != counts.end() && it->second > 0) {
            --it->second;
            ++same;
        }
    }
    if (same == 0) return 0.0;
    const double precision = static_cast<double>(same) / static_cast<double>(pred.size());
    const double recall = static_cast<double>(same) / static_cast<double>(gold.size());
    return 2.0 * precision * recall / (precision + recall);
}

}  // namespace

std::string normalize_answer(std::string_view text) {
    const std::string lowered = utf8_lower(text);
    std::string cleaned;
    cleaned.reserve(lowered.size());
    std::size_t pos = 0;
    while (pos < lowered.size()) {
        const std::size_t start = pos;
        const char32_t cp = utf8::decode(lowered, pos);
        if (is_ascii_punct(cp) || is_unicode_punct(cp)) continue;
        if (is_unicode_space(cp)) {
            cleaned.push_back(' ');
            continue;
        }
        cleaned.append(lowered, start, pos - start);
    }
    std::vector<std::string> words;
    for (auto& w : split_ws(cleaned))
        if (w != "a" && w != "an" && w != "the") words.push_back(std::move(w));
    return join(words, " ");
}

int exact_match(std::optional<std::string_view> prediction, std::span<const std::string> golds) {
    if (!has_text(prediction)) return 0;
    const std::string p = normalize_answer(*prediction);
    for (const auto& g : golds)
        if (normalize_answer(g) == p) return 1;
    return 0;
}

double f1_score(std::optional<std::string_view> prediction, std::span<const std::string> golds) {
    if (!has_text(prediction)) return 0.0;
    const auto p = split_ws(normalize_answer(*prediction));
    double best = 0.0;
    for (const auto& g : golds) best = std::max(best, token_f1(p, split_ws(normalize_answer(g))));
    return best;
}

int accuracy(std::string_view generated_text, std::span<const std::string> golds) {
    const std::string text = normalize_answer(generated_text);
    for (const auto& g : golds) {
        const std::string ng = normalize_answer(g);
        if (!ng.empty() && text.find(ng) != std::string::npos) return 1;
    }
    return 0;
}

Prediction Prediction::from_trace(const ReasoningTrace& trace) {
    Prediction p;
    p.sample_id = trace.sample_id;
    p.text = trace.full_text();
    p.answer = trace.answer;
    p.step_count = trace.terminated_at;
    for (const auto& st : trace.steps) {
        std::vector<std::string> ids;
        for (const auto& h : st.hits) ids.push_back(h.id);
        p.retrieved.push_back(std::move(ids));
    }
    return p;
}

std::vector<Prediction> read_predictions(const std::filesystem::path& path) {
    std::vector<Prediction> out;
    for (const auto& t : read_traces(path)) out.push_back(Prediction::from_trace(t));
    return out;
}

RecallSummary retrieval_recall(std::span<const Prediction> predictions, const QADataset& dataset) {
    RecallSummary r;
    for (const auto& p : predictions) {
        const QASample& s = dataset.get_sample(p.sample_id);
        if (!s.supporting_ids || s.supporting_ids->empty()) {
            ++r.excluded;
            continue;
        }
        ++r.annotated;
        std::unordered_set<std::string> got;
        for (const auto& step : p.retrieved) got.insert(step.begin(), step.end());
        std::unordered_set<std::string> gold(s.supporting_ids->begin(), s.supporting_ids->end());
        r.relevant += gold.size();
        for (const auto& g : gold) r.relevant_retrieved += got.count(g);
    }
    if (r.annotated == 0)
        throw ValidationError("recall unavailable: no sample carries supporting_ids (" +
                              std::to_string(r.excluded) + " excluded)");
    r.recall = static_cast<double>(r.relevant_retrieved) / static_cast<double>(r.relevant);
    return r;
}

double run_duplicativeness(const std::vector<std::vector<std::string>>& steps) {
    std::size_t total = 0;
    std::unordered_set<std::string> unique;
    for (const auto& ids : steps) {
        total += ids.size();
        unique.insert(ids.begin(), ids.end());
    }
    if (total == 0) return 0.0;
    return static_cast<double>(total - unique.size()) / static_cast<double>(total);
}

double duplicativeness(std::span<const Prediction> predictions) {
    if (predictions.empty()) return 0.0;
    std::vector<double> per_run;
    per_run.reserve(predictions.size());
    for (const auto& p : predictions) per_run.push_back(run_duplicativeness(p.retrieved));
    return stable_sum(std::move(per_run)) / static_cast<double>(predictions.size());
}

StepTable step_histogram(std::span<const StepOutcome> outcomes, std::size_t max_steps) {
    std::map<std::size_t, StepRow> rows;
    for (std::size_t s = 1; s <= max_steps; ++s) rows[s].steps = s;
    StepTable table;
    for (const auto& o : outcomes) {
        StepRow& row = rows[o.steps];
        row.steps = o.steps;
        ++row.finals;
        ++table.total;
        if (o.correct) {
            ++row.correct;
            ++table.correct;
        }
    }
    for (auto& [_, row] : rows) {
        if (row.finals > 0)
            row.accuracy = 100.0 * static_cast<double>(row.correct) / static_cast<double>(row.finals);
        table.rows.push_back(row);
    }
    if (table.total > 0)
        table.overall = 100.0 * static_cast<double>(table.correct) / static_cast<double>(table.total);
    return table;
}

MetricsReport score_run(std::span<const Prediction> predictions, const QADataset& dataset,
                        std::size_t max_steps) {
    std::vector<std::string> missing;
    std::vector<std::string> duplicated;
    std::unordered_set<std::string> seen;
    for (const auto& p : predictions) {
        if (!dataset.find(p.sample_id)) missing.push_back(p.sample_id);
        if (!seen.insert(p.sample_id).second) duplicated.push_back(p.sample_id);
    }
    if (!missing.empty()) throw ValidationError("predictions reference unknown sample ids: " + join(missing, ", "));
    if (!duplicated.empty()) throw ValidationError("duplicate prediction ids: " + join(duplicated, ", "));

    MetricsReport report;
    report.n = predictions.size();
    std::vector<double> f1s;
    std::vector<StepOutcome> outcomes;
    std::size_t em_total = 0;
    std::size_t acc_total = 0;
    for (const auto& p : predictions) {
        const auto& golds = dataset.get_sample(p.sample_id).answers;
        SampleScore s;
        s.id = p.sample_id;
        const std::optional<std::string_view> ans =
            p.answer ? std::optional<std::string_view>(*p.answer) : std::nullopt;
        s.em = exact_match(ans, golds);
        s.f1 = f1_score(ans, golds);
        s.acc = accuracy(p.text, golds);
        s.steps = p.step_count;
        em_total += static_cast<std::size_t>(s.em);
        acc_total += static_cast<std::size_t>(s.acc);
        f1s.push_back(s.f1);
        outcomes.push_back({p.step_count, s.acc == 1});
        report.samples.push_back(std::move(s));
    }
    std::sort(report.samples.begin(), report.samples.end(),
              [](const SampleScore& a, const SampleScore& b) { return a.id < b.id; });
    if (report.n > 0) {
        const double n = static_cast<double>(report.n);
        report.em = 100.0 * static_cast<double>(em_total) / n;
        report.acc = 100.0 * static_cast<double>(acc_total) / n;
        report.f1 = 100.0 * stable_sum(std::move(f1s)) / n;
    }
    try {
        const RecallSummary r = retrieval_recall(predictions, dataset);
        report.recall = r.recall;
        report.recall_annotated = r.annotated;
        report.recall_excluded = r.excluded;
    } catch (const ValidationError&) {
        report.recall_excluded = report.n;
    }
    report.duplicativeness = duplicativeness(predictions);
    report.steps = step_histogram(outcomes, max_steps);
    return report;
}

namespace {

json opt_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> read_opt_number(const json& obj, std::string_view field, std::size_t line) {
    const json& v = jsonl::require(obj, field, line);
    if (v.is_null()) return std::nullopt;
    if (!v.is_number()) throw SchemaError(line, std::string(field), "expected a number or null");
    return v.get<double>();
}

std::size_t read_count(const json& obj, std::string_view field, std::size_t line) {
    const auto v = jsonl::require_int(obj, field, line);
    if (v < 0) throw SchemaError(line, std::string(field), "must be >= 0");
    return static_cast<std::size_t>(v);
}

void check_range(const json& obj, std::string_view field, double lo, double hi, std::size_t line,
                 bool nullable = false) {
    const json& v = jsonl::require(obj, field, line);
    if (nullable && v.is_null()) return;
    if (!v.is_number()) throw SchemaError(line, std::string(field), "expected a number");
    const double d = v.get<double>();
    if (!(d >= lo && d <= hi))
        throw SchemaError(line, std::string(field), "out of range [" + std::to_string(lo) + ", " +
                                                        std::to_string(hi) + "]");
}

}  // namespace

json report_summary_json(const MetricsReport& r) {
    json rows = json::array();
    for (const auto& row : r.steps.rows)
        rows.push_back(json{{"steps", row.steps},
                            {"finals", row.finals},
                            {"correct", row.correct},
                            {"accuracy", opt_number(row.accuracy)}});
    return json{{"schema", MetricsReport::kSchema},
                {"n", r.n},
                {"em", r.em},
                {"f1", r.f1},
                {"acc", r.acc},
                {"acc_normalized", true},
                {"recall", opt_number(r.recall)},
                {"recall_annotated", r.recall_annotated},
                {"recall_excluded", r.recall_excluded},
                {"duplicativeness", r.duplicativeness},
                {"step_table", std::move(rows)},
                {"overall",
                 json{{"finals", r.steps.total}, {"correct", r.steps.correct}, {"accuracy", opt_number(r.steps.overall)}}}};
}

void validate_report_summary(const json& s) {
    constexpr std::size_t line = 1;
    if (jsonl::require_string(s, "schema", line) != MetricsReport::kSchema)
        throw SchemaError(line, "schema", "unexpected schema tag");
    const std::size_t n = read_count(s, "n", line);
    for (const char* f : {"em", "f1", "acc"}) check_range(s, f, 0.0, 100.0, line);
    check_range(s, "recall", 0.0, 1.0, line, true);
    check_range(s, "duplicativeness", 0.0, 1.0, line);
    const json& rows = jsonl::require(s, "step_table", line);
    if (!rows.is_array()) throw SchemaError(line, "step_table", "expected a list");
    std::size_t finals = 0;
    std::size_t correct = 0;
    for (const auto& row : rows) {
        const std::size_t rf = read_count(row, "finals", line);
        const std::size_t rc = read_count(row, "correct", line);
        if (rc > rf) throw SchemaError(line, "step_table", "correct exceeds finals");
        const auto acc = read_opt_number(row, "accuracy", line);
        if (rf == 0 ? acc.has_value()
                    : (!acc || std::abs(*acc - 100.0 * static_cast<double>(rc) / static_cast<double>(rf)) > 1e-9))
            throw SchemaError(line, "step_table", "accuracy inconsistent with counts");
        finals += rf;
        correct += rc;
    }
    const json& overall = jsonl::require(s, "overall", line);
    if (read_count(overall, "finals", line) != finals || read_count(overall, "correct", line) != correct)
        throw SchemaError(line, "overall", "totals disagree with step_table");
    if (finals != n) throw SchemaError(line, "overall", "step_table total differs from n");
}

void write_report(const std::filesystem::path& path, const MetricsReport& report) {
    auto out = jsonl::open_for_write(path);
    out << jsonl::to_line(report_summary_json(report));
    for (const auto& s : report.samples)
        out << jsonl::to_line(json{{"id", s.id}, {"em", s.em}, {"f1", s.f1}, {"acc", s.acc}, {"steps", s.steps}});
    if (!out) throw IoError("failed writing report '" + path.string() + "'");
}

MetricsReport read_report(const std::filesystem::path& path) {
    MetricsReport r;
    bool have_summary = false;
    jsonl::for_each_object(path, [&](const json& obj, std::size_t line) {
        if (!have_summary) {
            try {
                validate_report_summary(obj);
            } catch (const SchemaError& e) {
                throw SchemaError(line, e.field(), e.what());
            }
            r.n = read_count(obj, "n", line);
            r.em = jsonl::require_number(obj, "em", line);
            r.f1 = jsonl::require_number(obj, "f1", line);
            r.acc = jsonl::require_number(obj, "acc", line);
            r.recall = read_opt_number(obj, "recall", line);
            r.recall_annotated = read_count(obj, "recall_annotated", line);
            r.recall_excluded = read_count(obj, "recall_excluded", line);
            r.duplicativeness = jsonl::require_number(obj, "duplicativeness", line);
            for (const auto& row : obj["step_table"])
                r.steps.rows.push_back({read_count(row, "steps", line), read_count(row, "finals", line),
                                        read_count(row, "correct", line), read_opt_number(row, "accuracy", line)});
            const json& overall = obj["overall"];
            r.steps.total = read_count(overall, "finals", line);
            r.steps.correct = read_count(overall, "correct", line);
            r.steps.overall = read_opt_number(overall, "accuracy", line);
            have_summary = true;
            return;
        }
        SampleScore s;
        s.id = jsonl::require_string(obj, "id", line);
        s.em = static_cast<int>(jsonl::require_int(obj, "em", line));
        s.f1 = jsonl::require_number(obj, "f1", line);
        s.acc = static_cast<int>(jsonl::require_int(obj, "acc", line));
        s.steps = read_count(obj, "steps", line);
        r.samples.push_back(std::move(s));
    });
    if (!have_summary) throw ParseError(1, "report is empty");
    if (r.samples.size() != r.n) throw ParseError(1, "report sample count differs from n");
    return r;
}

std::string format_report(const MetricsReport& r) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    os << "# answers and gold aliases are normalized before Acc substring matching\n";
    os << "n = " << r.n << "\n";
    os << "EM  " << r.em << "\nF1  " << r.f1 << "\nAcc " << r.acc << "\n";
    if (r.recall)
        os << "Recall          " << *r.recall << "  (" << r.recall_annotated << " annotated, "
           << r.recall_excluded << " excluded)\n";
    else
        os << "Recall          unavailable (" << r.recall_excluded << " samples without supporting_ids)\n";
    os << "Duplicativeness " << r.duplicativeness << "\n\n";
    os << "steps  finals  correct  accuracy(%)\n";
    for (const auto& row : r.steps.rows) {
        os << std::setw(5) << row.steps << "  " << std::setw(6) << row.finals << "  " << std::setw(7)
           << row.correct << "  ";
        if (row.accuracy)
            os << std::setw(11) << *row.accuracy;
        else
            os << std::setw(11) << "--";
        os << "\n";
    }
    os << "total  " << std::setw(6) << r.steps.total << "  " << std::setw(7) << r.steps.correct << "  ";
    if (r.steps.overall)
        os << std::setw(11) << *r.steps.overall;
    else
        os << std::setw(11) << "--";
    os << "\n";
    return os.str();
}

}  // namespace stepkd
