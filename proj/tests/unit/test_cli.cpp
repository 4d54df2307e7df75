#include "doctest.h"

#include <sstream>

#include "fixtures.hpp"
#include "stepkd/cli.hpp"
#include "stepkd/distill.hpp"
#include "stepkd/errors.hpp"
#include "stepkd/metrics.hpp"

using namespace stepkd;
using stepkd::testing::read_text;
using stepkd::testing::TempDir;
using stepkd::testing::write_text;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code = -1;
    std::string out;
    std::string log;
};

Result cli(std::vector<std::string> args) {
    args.insert(args.begin(), "stepkd");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, log;
    Result r;
    r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, log);
    r.out = out.str();
    r.log = log.str();
    return r;
}

std::vector<jsonl::json> json_lines(const std::string& text) {
    std::vector<jsonl::json> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) out.push_back(jsonl::json::parse(line));
    return out;
}

struct Workspace {
    TempDir dir;
    stepkd::testing::PipelineFixture fixture = stepkd::testing::pipeline_fixture(10, 50);
    stepkd::testing::FixtureFiles files = stepkd::testing::write_fixture(fixture, dir.path());
    std::string index = (dir / "index.json").string();

    std::string p(std::string_view name) const { return (dir / name).string(); }
    void build_index() const { REQUIRE(cli({"index", "build", "--corpus", files.corpus, "--out", index}).code == 0); }
};

}  // namespace

TEST_CASE("usage errors exit 2, help exits 0") {
    CHECK(cli({}).code == kExitUsage);
    CHECK(cli({"--help"}).code == kExitOk);
    CHECK(cli({"frobnicate"}).code == kExitUsage);
    CHECK(cli({"index"}).code == kExitUsage);
    CHECK(cli({"index", "build", "--out", "x"}).code == kExitUsage);
    CHECK(cli({"index", "build", "--corpus", "c", "--out", "x", "--bogus"}).code == kExitUsage);
    CHECK(cli({"weights", "fixed", "--scheme", "heavy", "--losses", "1,2,3"}).code == kExitUsage);
    CHECK(cli({"weights", "simulate", "--losses", "1,2", "--lr", "0.1"}).code == kExitUsage);
    CHECK(cli({"infer", "run", "--dataset", "d", "--index", "i", "--out", "o", "--strategy", "react"}).code ==
          kExitUsage);
}

TEST_CASE("runtime failures exit 1") {
    TempDir dir;
    const auto r = cli({"index", "build", "--corpus", (dir / "missing.jsonl").string(), "--out", (dir / "i").string()});
    CHECK(r.code == kExitFailure);
    const auto events = json_lines(r.log);
    REQUIRE_FALSE(events.empty());
    CHECK(events.back()["level"] == "error");
    CHECK(cli({"weights", "simulate", "--losses", "1,-2,3", "--lr", "0.1"}).code == kExitFailure);
    write_text(dir / "bad.jsonl", "{\"id\": \"a\", \"title\": \"t\", \"text\": \"x\"}\nnot json\n");
    CHECK(cli({"index", "build", "--corpus", (dir / "bad.jsonl").string(), "--out", (dir / "i").string()}).code ==
          kExitFailure);
    CHECK_FALSE(fs::exists(dir / "i"));
}

TEST_CASE("index build and search") {
    Workspace w;
    const auto built = cli({"index", "build", "--corpus", w.files.corpus, "--out", w.index});
    REQUIRE(built.code == 0);
    CHECK(json_lines(built.out).at(0)["documents"] == 50);
    const auto found = cli({"index", "search", "--index", w.index, "--query", w.fixture.samples[0].question, "--k", "3"});
    REQUIRE(found.code == 0);
    const auto hits = json_lines(found.out);
    REQUIRE(hits.size() == 3);
    CHECK(hits[0]["rank"] == 1);
    CHECK(hits[0]["id"] == "p00a");
    CHECK(hits[0]["score"].get<double>() >= hits[1]["score"].get<double>());
}

TEST_CASE("config files") {
    TempDir dir;
    write_text(dir / "ok.conf", "# comment\nk = 2\n--query=alpha beta\n\n");
    const auto m = read_config_file(dir / "ok.conf");
    CHECK(m.at("k") == "2");
    CHECK(m.at("query") == "alpha beta");
    write_text(dir / "dup.conf", "k = 1\nk = 2\n");
    CHECK_THROWS_AS(read_config_file(dir / "dup.conf"), ConfigError);
    write_text(dir / "bad.conf", "just words\n");
    CHECK_THROWS_AS(read_config_file(dir / "bad.conf"), ConfigError);
}

TEST_CASE("command-line flags override the config file") {
    Workspace w;
    w.build_index();
    write_text(w.dir / "search.conf", "k = 1\nquery = " + w.fixture.samples[0].question + "\n");
    const auto from_config = cli({"--config", w.p("search.conf"), "index", "search", "--index", w.index});
    REQUIRE(from_config.code == 0);
    CHECK(json_lines(from_config.out).size() == 1);
    const auto overridden = cli({"--config", w.p("search.conf"), "index", "search", "--index", w.index, "--k", "4"});
    REQUIRE(overridden.code == 0);
    CHECK(json_lines(overridden.out).size() == 4);

    write_text(w.dir / "unknown.conf", "kay = 1\n");
    CHECK(cli({"--config", w.p("unknown.conf"), "index", "search", "--index", w.index, "--query", "x"}).code ==
          kExitFailure);
    CHECK(cli({"--config", w.p("nope.conf"), "index", "search", "--index", w.index, "--query", "x"}).code ==
          kExitFailure);
}

TEST_CASE("dry runs print the plan and touch nothing") {
    Workspace w;
    w.build_index();
    std::size_t entries = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(w.dir.path())) ++entries;
    const auto r = cli({"--dry-run", "distill", "run", "--dataset", w.files.dataset, "--index", w.index,
                        "--teacher-script", w.files.teacher, "--out", w.p("out")});
    REQUIRE(r.code == 0);
    const auto plan = jsonl::json::parse(r.out);
    CHECK(plan["dry_run"] == true);
    CHECK(plan["command"] == "distill run");
    CHECK_FALSE(fs::exists(w.dir / "out"));
    const auto sim = cli({"--dry-run", "weights", "simulate", "--losses", "1,4,9", "--lr", "0.05", "--out",
                          w.p("sched.jsonl")});
    CHECK(sim.code == 0);
    CHECK_FALSE(fs::exists(w.dir / "sched.jsonl"));
    std::size_t after = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(w.dir.path())) ++after;
    CHECK(after == entries);
    CHECK(cli({"--dry-run", "distill", "run", "--dataset", w.p("none.jsonl"), "--index", w.index,
               "--teacher-script", w.files.teacher, "--out", w.p("out")})
              .code == kExitFailure);
}

TEST_CASE("gateway source selection") {
    Workspace w;
    w.build_index();
    const std::vector<std::string> base = {"infer", "run", "--dataset", w.files.dataset, "--index", w.index,
                                           "--out", w.p("o")};
    auto with = [&](std::vector<std::string> extra) {
        auto args = base;
        args.insert(args.end(), extra.begin(), extra.end());
        return cli(args).code;
    };
    CHECK(with({}) == kExitUsage);
    CHECK(with({"--student-script", w.files.student, "--replay", w.p("s.jsonl")}) == kExitUsage);
    CHECK(with({"--student", "http://127.0.0.1:9", "--student-script", w.files.student}) == kExitUsage);
    CHECK(with({"--student-script", w.files.student, "--record", w.p("a"), "--replay", w.p("b")}) == kExitUsage);
}

TEST_CASE("full offline pipeline with record and replay") {
    Workspace w;
    w.build_index();

    const auto distilled = cli({"distill", "run", "--dataset", w.files.dataset, "--index", w.index,
                                "--teacher-script", w.files.teacher, "--out", w.p("distill")});
    REQUIRE(distilled.code == 0);
    std::size_t kept = 0, records = 0;
    for (std::size_t i = 0; i < 10; ++i)
        if (w.fixture.teacher_correct[i]) {
            ++kept;
            records += w.fixture.teacher_steps[i];
        }
    const auto report = FilterReport::from_json(jsonl::json::parse(read_text(w.dir / "distill" / "filter_report.json")));
    CHECK(report.kept == kept);
    CHECK(report.conserved());
    CHECK(read_records(w.dir / "distill" / "records.jsonl").size() == records);
    std::size_t dropped_events = 0;
    for (const auto& e : json_lines(distilled.log)) dropped_events += e["event"] == "sample_dropped";
    CHECK(dropped_events == 10 - kept);

    const auto inferred = cli({"infer", "run", "--dataset", w.files.dataset, "--index", w.index, "--student-script",
                               w.files.student, "--record", w.p("session.jsonl"), "--out", w.p("run1"), "--workers",
                               "3"});
    REQUIRE(inferred.code == 0);
    const auto replayed = cli({"infer", "run", "--dataset", w.files.dataset, "--index", w.index, "--replay",
                               w.p("session.jsonl"), "--out", w.p("run2")});
    REQUIRE(replayed.code == 0);
    CHECK(read_text(w.dir / "run1" / "predictions.jsonl") == read_text(w.dir / "run2" / "predictions.jsonl"));

    const auto missed = cli({"infer", "run", "--dataset", w.files.dataset, "--index", w.index, "--replay",
                             w.p("session.jsonl"), "--out", w.p("run3"), "--k", "2"});
    CHECK(missed.code == kExitFailure);
    std::size_t failures = 0;
    for (const auto& e : json_lines(missed.log))
        if (e["event"] == "sample_failed") {
            ++failures;
            CHECK(e["kind"] == "replay_miss");
        }
    CHECK(failures == 10);

    const auto scored = cli({"eval", "score", "--predictions", w.p("run1/predictions.jsonl"), "--dataset",
                             w.files.dataset, "--out", w.p("report.jsonl")});
    REQUIRE(scored.code == 0);
    const auto rep = read_report(w.dir / "report.jsonl");
    validate_report_summary(json_lines(read_text(w.dir / "report.jsonl")).at(0));
    std::size_t correct = 0;
    for (bool ok : w.fixture.student_correct) correct += ok;
    CHECK(rep.n == 10);
    CHECK(rep.em == doctest::Approx(10.0 * static_cast<double>(correct)));
    CHECK(rep.recall.has_value());
    for (const auto& s : rep.samples) {
        const auto i = static_cast<std::size_t>(std::stoul(s.id.substr(1)));
        CHECK(s.steps == w.fixture.student_steps[i]);
    }
    CHECK(read_text(w.dir / "report.jsonl.txt") == scored.out);
}

TEST_CASE("single-step inference") {
    Workspace w;
    w.build_index();
    const auto r = cli({"infer", "run", "--dataset", w.files.dataset, "--index", w.index, "--student-script",
                        w.files.student, "--out", w.p("ss"), "--single-step"});
    REQUIRE(r.code == 0);
    for (const auto& p : read_predictions(w.dir / "ss" / "predictions.jsonl")) {
        CHECK(p.step_count == 1);
        CHECK(p.retrieved.size() == 1);
    }
}

TEST_CASE("weights subcommands") {
    TempDir dir;
    const auto sim = cli({"weights", "simulate", "--losses", "1,4,9", "--lr", "0.05", "--until-converged", "--out",
                          (dir / "s.jsonl").string()});
    REQUIRE(sim.code == 0);
    CHECK(sim.out.starts_with("step\tsigma_init\tsigma_exp\tsigma_agg\n"));
    const auto tail = sim.out.substr(sim.out.rfind("max_abs_error\t") + 14);
    CHECK(std::stod(tail) < 1e-3);
    CHECK(fs::exists(dir / "s.jsonl"));

    const auto grad = cli({"weights", "grad-check"});
    REQUIRE(grad.code == 0);
    CHECK(json_lines(grad.out).at(0)["failures"] == 0);
    CHECK(cli({"weights", "grad-check", "--tolerance", "1e-30"}).code == kExitFailure);

    const auto fixed = cli({"weights", "fixed", "--scheme", "weight_first", "--losses", "2,2,2"});
    REQUIRE(fixed.code == 0);
    CHECK(json_lines(fixed.out).at(0)["loss"] == 6.0);

    CHECK(cli({"weights", "fixture", "--out", (dir / "f.jsonl").string(), "--points", "7"}).code == 0);
    CHECK(json_lines(read_text(dir / "f.jsonl")).size() == 7);
}

TEST_CASE("dataset inspect") {
    Workspace w;
    const auto r = cli({"dataset", "inspect", "--dataset", w.files.dataset, "--corpus", w.files.corpus, "--subsample",
                        "4", "--seed", "3", "--out", w.p("sub.jsonl")});
    REQUIRE(r.code == 0);
    CHECK(QADataset::ingest(w.dir / "sub.jsonl").size() == 4);
    const auto again = cli({"dataset", "inspect", "--dataset", w.files.dataset, "--subsample", "4", "--seed", "3",
                            "--out", w.p("sub2.jsonl")});
    REQUIRE(again.code == 0);
    CHECK(read_text(w.dir / "sub.jsonl") == read_text(w.dir / "sub2.jsonl"));

    write_text(w.dir / "small.jsonl", "{\"id\": \"p00a\", \"title\": \"t\", \"text\": \"x\"}\n");
    CHECK(cli({"dataset", "inspect", "--dataset", w.files.dataset, "--corpus", w.p("small.jsonl")}).code ==
          kExitFailure);
}
