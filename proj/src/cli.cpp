#include "stepkd/cli.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <sstream>
#include <vector>

#include "CLI11.hpp"
#include "stepkd/bm25.hpp"
#include "stepkd/corpus.hpp"
#include "stepkd/distill.hpp"
#include "stepkd/engine.hpp"
#include "stepkd/errors.hpp"
#include "stepkd/gateway.hpp"
#include "stepkd/jsonl.hpp"
#include "stepkd/metrics.hpp"
#include "stepkd/prompts.hpp"
#include "stepkd/text.hpp"
#include "stepkd/weighting.hpp"

namespace stepkd {

namespace fs = std::filesystem;
using jsonl::json;

ConfigMap read_config_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
    ConfigMap out;
    std::string raw;
    std::size_t line = 0;
    while (std::getline(in, raw)) {
        ++line;
        if (const auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
        const std::string entry = trim(raw);
        if (entry.empty()) continue;
        const auto eq = entry.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path.string() + ":" + std::to_string(line) + ": expected key = value");
        std::string key = trim(entry.substr(0, eq));
        std::string value = trim(entry.substr(eq + 1));
        if (key.rfind("--", 0) == 0) key.erase(0, 2);
        if (key.empty()) throw ConfigError(path.string() + ":" + std::to_string(line) + ": empty key");
        if (!out.emplace(key, value).second)
            throw ConfigError(path.string() + ":" + std::to_string(line) + ": duplicate key '" + key + "'");
    }
    return out;
}

namespace {

class Log {
public:
    explicit Log(std::ostream& os) : os_(os) {}

    void emit(std::string_view level, std::string_view event, json fields = json::object()) {
        fields["level"] = level;
        fields["event"] = event;
        std::lock_guard lock(mu_);
        os_ << jsonl::to_line(fields);
        os_.flush();
    }
    void info(std::string_view event, json fields = json::object()) { emit("info", event, std::move(fields)); }
    void warn(std::string_view event, json fields = json::object()) { emit("warn", event, std::move(fields)); }
    void error(std::string_view event, json fields = json::object()) { emit("error", event, std::move(fields)); }

private:
    std::ostream& os_;
    std::mutex mu_;
};

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Ctx {
    std::ostream& out;
    Log& log;
    bool dry_run = false;
};

void require_file(const std::string& path, std::string_view what) {
    if (!fs::is_regular_file(path))
        throw ValidationError(std::string(what) + " '" + path + "' does not exist or is not a file");
}

std::function<void(std::size_t)> progress_logger(Log& log, std::size_t total) {
    const std::size_t every = std::max<std::size_t>(1, total / 20);
    return [&log, total, every](std::size_t done) {
        if (done % every == 0 || done == total) log.info("progress", {{"done", done}, {"total", total}});
    };
}

// --- gateway ---------------------------------------------------------------

struct GatewayOptions {
    std::string role;
    std::string url;
    std::string script;
    std::string record;
    std::string replay;
    std::string api = "completions";
    std::string model;
    long timeout_ms = 60'000;
    int max_retries = 3;
};

GatewayOptions teacher_options() {
    GatewayOptions g;
    g.role = "teacher";
    return g;
}

GatewayOptions student_options() {
    GatewayOptions g;
    g.role = "student";
    return g;
}

void add_gateway_options(CLI::App* cmd, GatewayOptions& g) {
    cmd->add_option("--" + g.role, g.url, "Base URL of an OpenAI-style " + g.role + " endpoint");
    cmd->add_option("--" + g.role + "-script", g.script, "Scripted " + g.role + " completions (JSON lines)");
    cmd->add_option("--record", g.record, "Append every call to this session file");
    cmd->add_option("--replay", g.replay, "Serve calls from a recorded session");
    cmd->add_option("--api", g.api, "Endpoint flavour")->check(CLI::IsMember({"completions", "chat"}));
    cmd->add_option("--model", g.model, "Model name sent with each request");
    cmd->add_option("--timeout-ms", g.timeout_ms, "Per-request timeout")->check(CLI::PositiveNumber);
    cmd->add_option("--max-retries", g.max_retries, "Retries after a failed request")
        ->check(CLI::NonNegativeNumber);
}

void check_gateway_options(const GatewayOptions& g) {
    const int sources = !g.url.empty() + !g.script.empty() + !g.replay.empty();
    const std::string choices = "--" + g.role + ", --" + g.role + "-script or --replay";
    if (sources == 0) throw UsageError("one of " + choices + " is required");
    if (sources > 1) throw UsageError("only one of " + choices + " may be given");
    if (!g.record.empty() && !g.replay.empty()) throw UsageError("--record and --replay are mutually exclusive");
    if (!g.script.empty()) require_file(g.script, g.role + " script");
    if (!g.replay.empty()) require_file(g.replay, "replay session");
}

json gateway_plan(const GatewayOptions& g) {
    json p{{"model", g.model}};
    if (!g.url.empty()) {
        p["kind"] = "http";
        p["url"] = g.url;
        p["api"] = g.api;
        p["timeout_ms"] = g.timeout_ms;
        p["max_retries"] = g.max_retries;
    } else if (!g.script.empty()) {
        p["kind"] = "script";
        p["script"] = g.script;
    } else {
        p["kind"] = "replay";
        p["session"] = g.replay;
    }
    if (!g.record.empty()) p["record"] = g.record;
    return p;
}

std::shared_ptr<Gateway> make_gateway(const GatewayOptions& g, std::size_t workers) {
    if (!g.replay.empty()) return RecordReplayGateway::replay(g.replay);
    std::shared_ptr<Gateway> inner;
    if (!g.script.empty()) {
        inner = ScriptedMock::load(g.script);
    } else {
        HttpEndpoint ep;
        ep.base_url = g.url;
        ep.api = g.api == "chat" ? ApiStyle::chat : ApiStyle::completions;
        ep.timeout = std::chrono::milliseconds(g.timeout_ms);
        ep.max_retries = g.max_retries;
        ep.max_in_flight = std::max<std::size_t>(1, workers);
        inner = std::make_shared<HttpGateway>(ep);
    }
    if (!g.record.empty()) return RecordReplayGateway::record(g.record, inner);
    return inner;
}

// --- run configuration -----------------------------------------------------

struct RunOptions {
    std::size_t max_steps = 5;
    std::size_t top_k = 4;
    std::size_t workers = 1;
    std::string strategy = "rationale_chain";
    std::string template_path;
    std::string demos_path;
    int max_new_tokens = 256;
    double temperature = 0.0;
};

void add_run_options(CLI::App* cmd, RunOptions& r) {
    cmd->add_option("--max-steps", r.max_steps, "Maximum retrieval steps per question")->check(CLI::PositiveNumber);
    cmd->add_option("--k", r.top_k, "Passages retrieved per step")->check(CLI::PositiveNumber);
    cmd->add_option("--workers", r.workers, "Concurrent per-sample pipelines")->check(CLI::PositiveNumber);
    cmd->add_option("--strategy", r.strategy, "Step-query strategy")
        ->check(CLI::IsMember({"rationale_chain", "decomposition"}));
    cmd->add_option("--template", r.template_path, "Prompt body with {Knowledge} and {Question}");
    cmd->add_option("--demos", r.demos_path, "Few-shot demonstrations prepended to every prompt");
    cmd->add_option("--max-new-tokens", r.max_new_tokens, "Generation budget per call")->check(CLI::PositiveNumber);
    cmd->add_option("--temperature", r.temperature, "Sampling temperature")->check(CLI::NonNegativeNumber);
}

RunConfig make_run_config(const RunOptions& r, const GatewayOptions& g, bool single_step) {
    RunConfig c;
    c.max_steps = r.max_steps;
    c.top_k = r.top_k;
    c.strategy = StepStrategy::of(strategy_kind_from_string(r.strategy));
    if (!r.template_path.empty()) {
        require_file(r.template_path, "template");
        c.strategy.prompt.body = load_template_body(r.template_path);
    }
    if (!r.demos_path.empty()) {
        require_file(r.demos_path, "demonstrations");
        c.strategy.prompt.demonstrations = load_demonstrations(r.demos_path);
    }
    c.single_step = single_step;
    c.max_new_tokens = r.max_new_tokens;
    c.temperature = r.temperature;
    c.model = g.model;
    c.validate();
    return c;
}

json run_plan(const RunConfig& c, const RunOptions& r) {
    return json{{"max_steps", c.max_steps},
                {"k", c.top_k},
                {"strategy", to_string(c.strategy.kind)},
                {"answer_flag", c.strategy.answer_flag},
                {"single_step", c.single_step},
                {"max_new_tokens", c.max_new_tokens},
                {"temperature", c.temperature},
                {"template", r.template_path.empty() ? json(nullptr) : json(r.template_path)},
                {"demos", r.demos_path.empty() ? json(nullptr) : json(r.demos_path)},
                {"workers", r.workers}};
}

void print_plan(Ctx& ctx, json plan) {
    plan["dry_run"] = true;
    ctx.out << plan.dump(2) << "\n";
}

std::string format_triple(const Triple& t) {
    std::ostringstream s;
    s.precision(6);
    s << std::fixed << t[0] << "\t" << t[1] << "\t" << t[2];
    return s.str();
}

Triple to_triple(const std::vector<double>& v, std::string_view what) {
    if (v.size() != 3) throw UsageError(std::string(what) + " needs exactly 3 comma-separated values");
    return {v[0], v[1], v[2]};
}

// --- subcommands -----------------------------------------------------------

struct IndexBuildArgs {
    std::string corpus;
    std::string out;
    double k1 = Bm25Params{}.k1;
    double b = Bm25Params{}.b;
};

int index_build(Ctx& ctx, const IndexBuildArgs& a) {
    require_file(a.corpus, "corpus");
    if (a.k1 < 0.0) throw ConfigError("k1 must be >= 0");
    if (a.b < 0.0 || a.b > 1.0) throw ConfigError("b must be in [0, 1]");
    if (ctx.dry_run) {
        print_plan(ctx, {{"command", "index build"}, {"corpus", a.corpus}, {"out", a.out}, {"k1", a.k1}, {"b", a.b}});
        return kExitOk;
    }
    const CorpusStore corpus = CorpusStore::ingest(a.corpus);
    for (const auto& w : corpus.warnings()) ctx.log.warn("corpus_warning", {{"message", w}});
    Bm25Params params;
    params.k1 = a.k1;
    params.b = a.b;
    const InvertedIndex index = InvertedIndex::build(corpus, params);
    index.save(a.out);
    ctx.log.info("index_built", {{"out", a.out}});
    ctx.out << jsonl::to_line(json{{"documents", index.document_count()},
                                   {"terms", index.term_count()},
                                   {"average_length", index.average_length()},
                                   {"out", a.out}});
    return kExitOk;
}

struct IndexSearchArgs {
    std::string index;
    std::string query;
    std::size_t k = 4;
};

int index_search(Ctx& ctx, const IndexSearchArgs& a) {
    require_file(a.index, "index");
    if (ctx.dry_run) {
        print_plan(ctx, {{"command", "index search"}, {"index", a.index}, {"query", a.query}, {"k", a.k}});
        return kExitOk;
    }
    const InvertedIndex index = InvertedIndex::load(a.index);
    std::size_t rank = 0;
    for (const auto& hit : index.search(a.query, a.k))
        ctx.out << jsonl::to_line(
            json{{"rank", ++rank}, {"id", hit.id}, {"score", hit.score}, {"title", index.passage(hit.id).title}});
    return kExitOk;
}

struct DistillArgs {
    std::string dataset;
    std::string index;
    std::string out;
    std::string filter = "exact";
    std::string answer_style = "teacher";
    RunOptions run;
    GatewayOptions gateway = teacher_options();
};

int distill_run(Ctx& ctx, const DistillArgs& a) {
    require_file(a.dataset, "dataset");
    require_file(a.index, "index");
    check_gateway_options(a.gateway);
    DistillConfig config;
    config.run = make_run_config(a.run, a.gateway, false);
    config.filter = filter_mode_from_string(a.filter);
    config.answer_style = answer_style_from_string(a.answer_style);
    config.workers = a.run.workers;
    const fs::path records_path = fs::path(a.out) / "records.jsonl";
    const fs::path report_path = fs::path(a.out) / "filter_report.json";
    if (ctx.dry_run) {
        print_plan(ctx, {{"command", "distill run"},
                         {"dataset", a.dataset},
                         {"index", a.index},
                         {"teacher", gateway_plan(a.gateway)},
                         {"run", run_plan(config.run, a.run)},
                         {"filter", to_string(config.filter)},
                         {"answer_style", to_string(config.answer_style)},
                         {"records", records_path.string()},
                         {"report", report_path.string()}});
        return kExitOk;
    }
    const QADataset dataset = QADataset::ingest(a.dataset);
    for (const auto& w : dataset.warnings()) ctx.log.warn("dataset_warning", {{"message", w}});
    const InvertedIndex index = InvertedIndex::load(a.index);
    auto teacher = make_gateway(a.gateway, a.run.workers);

    auto records = jsonl::open_for_write(records_path);
    const FilterReport report =
        build_stepwise(dataset, index, *teacher, config,
                       [&](const StepwiseRecord& r) { records << jsonl::to_line(record_to_json(r)); },
                       progress_logger(ctx.log, dataset.size()));
    records.close();
    if (!records) throw IoError("failed writing '" + records_path.string() + "'");
    for (const auto& d : report.drops)
        ctx.log.warn("sample_dropped", {{"id", d.sample_id}, {"reason", d.reason}, {"detail", d.detail}});

    auto report_out = jsonl::open_for_write(report_path);
    report_out << report.to_json().dump(2) << "\n";
    if (!report_out) throw IoError("failed writing '" + report_path.string() + "'");

    json summary = report.to_json();
    summary.erase("drops");
    summary["records_file"] = records_path.string();
    ctx.out << jsonl::to_line(summary);
    return kExitOk;
}

struct InferArgs {
    std::string dataset;
    std::string index;
    std::string out;
    bool single_step = false;
    RunOptions run;
    GatewayOptions gateway = student_options();
};

int infer_run(Ctx& ctx, const InferArgs& a) {
    require_file(a.dataset, "dataset");
    require_file(a.index, "index");
    check_gateway_options(a.gateway);
    const RunConfig config = make_run_config(a.run, a.gateway, a.single_step);
    const fs::path predictions_path = fs::path(a.out) / "predictions.jsonl";
    if (ctx.dry_run) {
        print_plan(ctx, {{"command", "infer run"},
                         {"dataset", a.dataset},
                         {"index", a.index},
                         {"student", gateway_plan(a.gateway)},
                         {"run", run_plan(config, a.run)},
                         {"predictions", predictions_path.string()}});
        return kExitOk;
    }
    const QADataset dataset = QADataset::ingest(a.dataset);
    for (const auto& w : dataset.warnings()) ctx.log.warn("dataset_warning", {{"message", w}});
    const InvertedIndex index = InvertedIndex::load(a.index);
    auto student = make_gateway(a.gateway, a.run.workers);

    const auto outcomes =
        run_batch(dataset.samples(), index, *student, config, a.run.workers, progress_logger(ctx.log, dataset.size()));
    std::vector<ReasoningTrace> traces;
    std::size_t failed = 0;
    for (std::size_t i = 0; i < outcomes.size(); ++i) {
        if (outcomes[i].trace) {
            traces.push_back(*outcomes[i].trace);
            continue;
        }
        ++failed;
        ctx.log.error("sample_failed", {{"id", dataset.samples()[i].id},
                                        {"kind", outcomes[i].error_kind},
                                        {"message", outcomes[i].error_message}});
    }
    write_traces(predictions_path, traces);
    ctx.out << jsonl::to_line(json{{"total", outcomes.size()},
                                   {"written", traces.size()},
                                   {"failed", failed},
                                   {"predictions", predictions_path.string()}});
    return failed == 0 ? kExitOk : kExitFailure;
}

struct EvalArgs {
    std::string predictions;
    std::string dataset;
    std::string out;
    std::size_t max_steps = 5;
};

int eval_score(Ctx& ctx, const EvalArgs& a) {
    require_file(a.predictions, "predictions");
    require_file(a.dataset, "dataset");
    const std::string text_path = a.out + ".txt";
    if (ctx.dry_run) {
        print_plan(ctx, {{"command", "eval score"},
                         {"predictions", a.predictions},
                         {"dataset", a.dataset},
                         {"max_steps", a.max_steps},
                         {"report", a.out},
                         {"text_report", text_path}});
        return kExitOk;
    }
    const QADataset dataset = QADataset::ingest(a.dataset);
    const auto predictions = read_predictions(a.predictions);
    const MetricsReport report = score_run(predictions, dataset, a.max_steps);
    if (!report.recall) ctx.log.warn("recall_unavailable", {{"reason", "no sample carries supporting_ids"}});
    write_report(a.out, report);
    const std::string text = format_report(report);
    auto text_out = jsonl::open_for_write(text_path);
    text_out << text;
    if (!text_out) throw IoError("failed writing '" + text_path + "'");
    ctx.out << text;
    return kExitOk;
}

struct SimulateArgs {
    std::vector<double> losses;
    std::vector<double> sigma0{1.0, 1.0, 1.0};
    double lr = 0.0;
    std::size_t steps = kMaxSimulationSteps;
    std::size_t every = 0;
    bool until_converged = false;
    std::string out;
};

int weights_simulate(Ctx& ctx, const SimulateArgs& a) {
    const Triple l = to_triple(a.losses, "--losses");
    const Triple s0 = to_triple(a.sigma0, "--sigma0");
    for (double v : l)
        if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("losses must be finite and >= 0");
    const SigmaState start = SigmaState::from_sigma(s0);
    if (!(a.lr >= 0.0) || !std::isfinite(a.lr)) throw ConfigError("learning rate must be finite and >= 0");
    if (ctx.dry_run) {
        print_plan(ctx, {{"command", "weights simulate"},
                         {"losses", l},
                         {"sigma0", s0},
                         {"lr", a.lr},
                         {"steps", a.steps},
                         {"until_converged", a.until_converged},
                         {"schedule", a.out.empty() ? json(nullptr) : json(a.out)}});
        return kExitOk;
    }
    const StageLosses losses = StageLosses::from(l);
    const auto result = simulate(losses, start, a.lr, a.steps,
                                 a.until_converged ? std::optional<double>(kConvergenceTolerance) : std::nullopt);
    const std::size_t every = a.every > 0 ? a.every : std::max<std::size_t>(1, a.steps / 10);
    ctx.out << "step\tsigma_init\tsigma_exp\tsigma_agg\n";
    for (std::size_t i = 0; i < result.history.size(); ++i)
        if (i % every == 0 || i + 1 == result.history.size())
            ctx.out << i << "\t" << format_triple(result.history[i].sigmas()) << "\n";
    const Triple final_sigma = result.history.back().sigmas();
    double worst = 0.0;
    for (std::size_t j = 0; j < 3; ++j) worst = std::max(worst, std::abs(final_sigma[j] - std::sqrt(l[j])));
    ctx.out << "target\t" << format_triple({std::sqrt(l[0]), std::sqrt(l[1]), std::sqrt(l[2])}) << "\n";
    ctx.out << "lambda\t" << format_triple(effective_lambda(result.history.back())) << "\n";
    ctx.out << "max_abs_error\t" << worst << "\n";
    if (!a.out.empty()) {
        export_schedule(a.out, result.history);
        ctx.log.info("schedule_written", {{"out", a.out}, {"entries", result.history.size()}});
    }
    return kExitOk;
}

struct GradCheckArgs {
    std::size_t trials = 100;
    std::uint64_t seed = 0;
    double step = 1e-6;
    double tolerance = 1e-6;
};

int weights_grad_check(Ctx& ctx, const GradCheckArgs& a) {
    if (!(a.step > 0.0)) throw ConfigError("step must be > 0");
    if (ctx.dry_run) {
        print_plan(ctx, {{"command", "weights grad-check"},
                         {"trials", a.trials},
                         {"seed", a.seed},
                         {"step", a.step},
                         {"tolerance", a.tolerance}});
        return kExitOk;
    }
    const auto r = grad_check(a.trials, a.seed, a.step, a.tolerance);
    ctx.out << jsonl::to_line(json{{"trials", r.trials},
                                   {"failures", r.failures},
                                   {"max_error", r.max_error},
                                   {"tolerance", a.tolerance},
                                   {"pass", r.failures == 0}});
    return r.failures == 0 ? kExitOk : kExitFailure;
}

struct FixtureArgs {
    std::string out;
    std::size_t points = 100;
    std::uint64_t seed = 0;
};

int weights_fixture(Ctx& ctx, const FixtureArgs& a) {
    if (ctx.dry_run) {
        print_plan(ctx, {{"command", "weights fixture"}, {"out", a.out}, {"points", a.points}, {"seed", a.seed}});
        return kExitOk;
    }
    write_parity_fixture(a.out, a.points, a.seed);
    ctx.out << jsonl::to_line(json{{"out", a.out}, {"points", a.points}});
    return kExitOk;
}

struct FixedArgs {
    std::string scheme;
    std::vector<double> losses;
};

int weights_fixed(Ctx& ctx, const FixedArgs& a) {
    const WeightScheme scheme = weight_scheme_from_string(a.scheme);
    const Triple lambda = fixed_lambdas(scheme);
    const Triple l = to_triple(a.losses, "--losses");
    if (ctx.dry_run) {
        print_plan(ctx, {{"command", "weights fixed"}, {"scheme", a.scheme}, {"losses", l}});
        return kExitOk;
    }
    ctx.out << jsonl::to_line(
        json{{"scheme", a.scheme}, {"lambda", lambda}, {"loss", fixed_loss(StageLosses::from(l), lambda)}});
    return kExitOk;
}

struct InspectArgs {
    std::string dataset;
    std::string corpus;
    std::size_t subsample = 0;
    std::uint64_t seed = 0;
    std::string out;
};

int dataset_inspect(Ctx& ctx, const InspectArgs& a) {
    require_file(a.dataset, "dataset");
    if (!a.corpus.empty()) require_file(a.corpus, "corpus");
    if (a.subsample > 0 && a.out.empty()) throw ConfigError("--subsample needs --out");
    if (ctx.dry_run) {
        print_plan(ctx, {{"command", "dataset inspect"},
                         {"dataset", a.dataset},
                         {"corpus", a.corpus.empty() ? json(nullptr) : json(a.corpus)},
                         {"subsample", a.subsample},
                         {"seed", a.seed},
                         {"out", a.out.empty() ? json(nullptr) : json(a.out)}});
        return kExitOk;
    }
    const QADataset dataset = QADataset::ingest(a.dataset);
    std::size_t supported = 0;
    std::size_t aliases = 0;
    for (const auto& s : dataset.samples()) {
        if (s.supporting_ids && !s.supporting_ids->empty()) ++supported;
        aliases += s.answers.size();
    }
    json summary{{"samples", dataset.size()},
                 {"with_supporting_ids", supported},
                 {"answer_aliases", aliases},
                 {"warnings", dataset.warnings()}};
    int status = kExitOk;
    if (!a.corpus.empty()) {
        const CorpusStore corpus = CorpusStore::ingest(a.corpus);
        const auto unresolved = unresolved_supporting_ids(dataset, corpus);
        json list = json::array();
        for (const auto& u : unresolved) list.push_back({{"sample", u.sample_id}, {"passage", u.passage_id}});
        summary["passages"] = corpus.size();
        summary["unresolved_supporting_ids"] = std::move(list);
        if (!unresolved.empty()) status = kExitFailure;
    }
    if (a.subsample > 0) {
        const QADataset sub = dataset.subsample(a.subsample, a.seed);
        sub.write(a.out);
        summary["subsample"] = {{"n", sub.size()}, {"seed", a.seed}, {"out", a.out}};
    }
    ctx.out << summary.dump(2) << "\n";
    return status;
}

// --- config plumbing -------------------------------------------------------

std::string option_key(const CLI::Option* opt) { return opt->get_single_name(); }

// Fills options not given on the command line from the config file.
void apply_config(const ConfigMap& config, std::initializer_list<CLI::App*> scopes) {
    for (CLI::App* scope : scopes) {
        for (CLI::Option* opt : scope->get_options()) {
            const std::string key = option_key(opt);
            if (key == "help" || key == "config" || opt->count() > 0) continue;
            const auto it = config.find(key);
            if (it == config.end()) continue;
            opt->add_result(it->second);
            opt->run_callback();
        }
    }
}

void collect_keys(CLI::App* app, std::set<std::string>& keys) {
    for (CLI::Option* opt : app->get_options()) keys.insert(option_key(opt));
    for (CLI::App* sub : app->get_subcommands([](CLI::App*) { return true; })) collect_keys(sub, keys);
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& log_stream) {
    Log log(log_stream);
    CLI::App app{"Stepwise retrieval-augmented reasoning distillation toolkit", "stepkd"};
    app.fallthrough();
    app.require_subcommand(1);
    std::string config_path;
    bool dry_run = false;
    app.add_option("--config", config_path, "key = value file; command-line flags take precedence");
    app.add_flag("--dry-run", dry_run, "Validate and print the resolved plan without side effects");

    std::map<CLI::App*, std::function<int(Ctx&)>> handlers;
    std::map<CLI::App*, std::vector<CLI::Option*>> required;
    auto need = [&](CLI::App* cmd, CLI::Option* opt) { required[cmd].push_back(opt); };

    CLI::App* index = app.add_subcommand("index", "Build or query the BM25 index")->require_subcommand(1);
    CLI::App* distill = app.add_subcommand("distill", "Build stepwise training records from a teacher")
                            ->require_subcommand(1);
    CLI::App* infer = app.add_subcommand("infer", "Run a model over a dataset")->require_subcommand(1);
    CLI::App* eval = app.add_subcommand("eval", "Score predictions")->require_subcommand(1);
    CLI::App* weights = app.add_subcommand("weights", "Stage-weighting numerics")->require_subcommand(1);
    CLI::App* data = app.add_subcommand("dataset", "Dataset utilities")->require_subcommand(1);

    IndexBuildArgs build_args;
    {
        CLI::App* cmd = index->add_subcommand("build", "Index a corpus file");
        need(cmd, cmd->add_option("--corpus", build_args.corpus, "Corpus JSON lines"));
        need(cmd, cmd->add_option("--out", build_args.out, "Index file to write"));
        cmd->add_option("--k1", build_args.k1, "Term-frequency saturation");
        cmd->add_option("--b", build_args.b, "Length normalization");
        handlers[cmd] = [&](Ctx& c) { return index_build(c, build_args); };
    }
    IndexSearchArgs search_args;
    {
        CLI::App* cmd = index->add_subcommand("search", "Query an index");
        need(cmd, cmd->add_option("--index", search_args.index, "Index file"));
        need(cmd, cmd->add_option("--query", search_args.query, "Query text"));
        cmd->add_option("--k", search_args.k, "Number of hits")->check(CLI::PositiveNumber);
        handlers[cmd] = [&](Ctx& c) { return index_search(c, search_args); };
    }
    DistillArgs distill_args;
    {
        CLI::App* cmd = distill->add_subcommand("run", "Run the teacher and write stepwise records");
        need(cmd, cmd->add_option("--dataset", distill_args.dataset, "QA dataset JSON lines"));
        need(cmd, cmd->add_option("--index", distill_args.index, "Index file"));
        need(cmd, cmd->add_option("--out", distill_args.out, "Output directory"));
        cmd->add_option("--filter", distill_args.filter, "Answer filter")->check(CLI::IsMember({"exact", "contain"}));
        cmd->add_option("--answer-style", distill_args.answer_style, "Aggregation target ending")
            ->check(CLI::IsMember({"teacher", "gold"}));
        add_run_options(cmd, distill_args.run);
        add_gateway_options(cmd, distill_args.gateway);
        handlers[cmd] = [&](Ctx& c) { return distill_run(c, distill_args); };
    }
    InferArgs infer_args;
    {
        CLI::App* cmd = infer->add_subcommand("run", "Run a student and write predictions");
        need(cmd, cmd->add_option("--dataset", infer_args.dataset, "QA dataset JSON lines"));
        need(cmd, cmd->add_option("--index", infer_args.index, "Index file"));
        need(cmd, cmd->add_option("--out", infer_args.out, "Output directory"));
        cmd->add_flag("--single-step", infer_args.single_step, "One retrieval, one generation");
        add_run_options(cmd, infer_args.run);
        add_gateway_options(cmd, infer_args.gateway);
        handlers[cmd] = [&](Ctx& c) { return infer_run(c, infer_args); };
    }
    EvalArgs eval_args;
    {
        CLI::App* cmd = eval->add_subcommand("score", "Compute EM, F1, Acc and retrieval statistics");
        need(cmd, cmd->add_option("--predictions", eval_args.predictions, "Predictions JSON lines"));
        need(cmd, cmd->add_option("--dataset", eval_args.dataset, "QA dataset JSON lines"));
        need(cmd, cmd->add_option("--out", eval_args.out, "Report file (JSON lines; a .txt copy is added)"));
        cmd->add_option("--max-steps", eval_args.max_steps, "Rows in the step histogram");
        handlers[cmd] = [&](Ctx& c) { return eval_score(c, eval_args); };
    }
    SimulateArgs sim_args;
    {
        CLI::App* cmd = weights->add_subcommand("simulate", "Gradient descent on sigma under constant losses");
        need(cmd, cmd->add_option("--losses", sim_args.losses, "init,exp,agg losses")->delimiter(','));
        need(cmd, cmd->add_option("--lr", sim_args.lr, "Learning rate (log-sigma space)"));
        cmd->add_option("--steps", sim_args.steps, "Iterations");
        cmd->add_option("--sigma0", sim_args.sigma0, "Initial sigma")->delimiter(',');
        cmd->add_option("--every", sim_args.every, "Print interval (default steps/10)");
        cmd->add_flag("--until-converged", sim_args.until_converged, "Stop once within 1e-3 of sqrt(L)");
        cmd->add_option("--out", sim_args.out, "Schedule file to write");
        handlers[cmd] = [&](Ctx& c) { return weights_simulate(c, sim_args); };
    }
    GradCheckArgs grad_args;
    {
        CLI::App* cmd = weights->add_subcommand("grad-check", "Compare the sigma gradient with finite differences");
        cmd->add_option("--trials", grad_args.trials, "Random points");
        cmd->add_option("--seed", grad_args.seed, "RNG seed");
        cmd->add_option("--step", grad_args.step, "Finite-difference step");
        cmd->add_option("--tolerance", grad_args.tolerance, "Allowed error");
        handlers[cmd] = [&](Ctx& c) { return weights_grad_check(c, grad_args); };
    }
    FixtureArgs fixture_args;
    {
        CLI::App* cmd = weights->add_subcommand("fixture", "Write loss/gradient parity vectors");
        need(cmd, cmd->add_option("--out", fixture_args.out, "Fixture file"));
        cmd->add_option("--points", fixture_args.points, "Number of points");
        cmd->add_option("--seed", fixture_args.seed, "RNG seed");
        handlers[cmd] = [&](Ctx& c) { return weights_fixture(c, fixture_args); };
    }
    FixedArgs fixed_args;
    {
        CLI::App* cmd = weights->add_subcommand("fixed", "Evaluate a fixed-lambda scheme");
        need(cmd, cmd->add_option("--scheme", fixed_args.scheme, "uniform, weight_first or weight_last")
                      ->check(CLI::IsMember({"uniform", "weight_first", "weight_last"})));
        need(cmd, cmd->add_option("--losses", fixed_args.losses, "init,exp,agg losses")->delimiter(','));
        handlers[cmd] = [&](Ctx& c) { return weights_fixed(c, fixed_args); };
    }
    InspectArgs inspect_args;
    {
        CLI::App* cmd = data->add_subcommand("inspect", "Validate a dataset and optionally subsample it");
        need(cmd, cmd->add_option("--dataset", inspect_args.dataset, "QA dataset JSON lines"));
        cmd->add_option("--corpus", inspect_args.corpus, "Corpus to resolve supporting ids against");
        cmd->add_option("--subsample", inspect_args.subsample, "Keep n samples");
        cmd->add_option("--seed", inspect_args.seed, "Subsample seed");
        cmd->add_option("--out", inspect_args.out, "Where to write the subsample");
        handlers[cmd] = [&](Ctx& c) { return dataset_inspect(c, inspect_args); };
    }

    CLI::App* leaf = nullptr;
    try {
        app.parse(argc, argv);
        for (CLI::App* group : app.get_subcommands())
            for (CLI::App* sub : group->get_subcommands()) leaf = sub;
        if (!config_path.empty()) {
            const ConfigMap config = read_config_file(config_path);
            std::set<std::string> known;
            collect_keys(&app, known);
            for (const auto& [key, value] : config)
                if (!known.count(key)) throw ConfigError("unknown config key '" + key + "'");
            apply_config(config, {&app, leaf});
        }
        for (CLI::Option* opt : required[leaf])
            if (opt->count() == 0) throw CLI::RequiredError(opt->get_name());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, log_stream);
        return code == 0 ? kExitOk : kExitUsage;
    } catch (const Error& e) {
        log.error("invalid_config", {{"kind", e.kind()}, {"message", e.what()}});
        return kExitFailure;
    }

    Ctx ctx{out, log, dry_run};
    try {
        const int status = handlers.at(leaf)(ctx);
        log.info("finished", {{"command", leaf->get_parent()->get_name() + " " + leaf->get_name()},
                              {"status", status}});
        return status;
    } catch (const UsageError& e) {
        log_stream << "usage error: " << e.what() << "\nRun with --help for more information.\n";
        return kExitUsage;
    } catch (const Error& e) {
        log.error("failed", {{"kind", e.kind()}, {"message", e.what()}});
        return kExitFailure;
    } catch (const std::exception& e) {
        log.error("failed", {{"kind", "internal"}, {"message", e.what()}});
        return kExitFailure;
    }
}

}  // namespace stepkd
