#include "doctest.h"

#include <algorithm>
#include <map>

#include "fixtures.hpp"
#include "stepkd/distill.hpp"
#include "stepkd/errors.hpp"

using namespace stepkd;
using stepkd::testing::TempDir;

namespace {

struct World {
    stepkd::testing::PipelineFixture fixture = stepkd::testing::pipeline_fixture(12, 60);
    InvertedIndex index = InvertedIndex::build(CorpusStore::from_passages(fixture.passages));
    QADataset dataset = QADataset::from_samples(fixture.samples);
};

std::string chain_prefix(const std::vector<std::string>& chain, std::size_t s) {
    std::string out;
    for (std::size_t i = 0; i < s; ++i) out += (i ? " " : "") + chain[i];
    return out;
}

ReasoningTrace toy_trace(std::vector<std::string> reasoning) {
    ReasoningTrace t;
    t.sample_id = "t";
    t.question = "Where?";
    for (auto& r : reasoning) t.steps.push_back({"q", {{"p1", 1.0}}, std::move(r), false});
    t.terminated_at = t.steps.size();
    t.passages = {"p1"};
    return t;
}

InvertedIndex one_passage() { return InvertedIndex::build(CorpusStore::from_passages({{"p1", "T", "body text"}})); }

}  // namespace

TEST_CASE("is_correct") {
    const std::vector<std::string> rome = {"rome"};
    const std::vector<std::string> lacoste = {"Lacoste, France"};
    CHECK(is_correct("Rome.", rome, FilterMode::exact));
    CHECK_FALSE(is_correct("Savannah, Georgia", lacoste, FilterMode::exact));
    CHECK_FALSE(is_correct(std::nullopt, std::vector<std::string>{"x"}, FilterMode::exact));
    CHECK_FALSE(is_correct("ancient Rome", rome, FilterMode::exact));
    CHECK(is_correct("ancient Rome", rome, FilterMode::contain));
    CHECK_FALSE(is_correct("Rom", rome, FilterMode::contain));
    CHECK_FALSE(is_correct("", rome, FilterMode::contain));
    const std::vector<std::string> aliases = {"NYC", "New York City"};
    CHECK(matching_gold("new york city", aliases, FilterMode::exact) == 1u);
    CHECK(filter_mode_from_string("contain") == FilterMode::contain);
    CHECK_THROWS_AS(filter_mode_from_string("fuzzy"), ConfigError);
}

TEST_CASE("record counts follow the trace length") {
    const auto index = one_passage();
    DistillConfig cfg;
    const auto three = records_from_trace(toy_trace({"r1.", "r2.", "So the answer is: Rome."}), index, cfg, "Rome");
    REQUIRE(three.size() == 3);
    CHECK(three[0].stage == Stage::init);
    CHECK(three[0].step == 1);
    CHECK(three[1].stage == Stage::exp);
    CHECK(three[1].step == 2);
    CHECK(three[2].stage == Stage::agg);
    CHECK(three[2].step == 3);
    CHECK(three[0].target == "r1.");
    CHECK(three[1].target == "r1. r2.");
    CHECK(three[2].target == "r1. r2. So the answer is: Rome.");
    CHECK(three[2].answer == "Rome");
    CHECK_FALSE(three[0].answer.has_value());

    const auto one = records_from_trace(toy_trace({"So the answer is: Rome"}), index, cfg, "Rome");
    REQUIRE(one.size() == 1);
    CHECK(one[0].stage == Stage::agg);
    CHECK(one[0].step == 1);
    CHECK(one[0].target == "So the answer is: Rome");

    for (std::size_t n = 2; n <= 8; ++n) {
        std::vector<std::string> r;
        for (std::size_t i = 1; i < n; ++i) r.push_back("step " + std::to_string(i) + ".");
        r.push_back("So the answer is: x");
        const auto recs = records_from_trace(toy_trace(r), index, cfg, "x");
        std::map<Stage, std::size_t> by;
        for (const auto& rec : recs) ++by[rec.stage];
        CHECK(by[Stage::init] == 1);
        CHECK(by[Stage::exp] == n - 2);
        CHECK(by[Stage::agg] == 1);
    }
}

TEST_CASE("gold answer style rewrites the final statement") {
    const auto index = one_passage();
    DistillConfig cfg;
    cfg.answer_style = AnswerStyle::gold_canonical;
    auto recs = records_from_trace(toy_trace({"r1.", "So the answer is: rome."}), index, cfg, "Rome");
    CHECK(recs.back().target == "r1. So the answer is: Rome");
    recs = records_from_trace(toy_trace({"r1.", "The city is Rome."}), index, cfg, "Rome");
    CHECK(recs.back().target == "r1. The city is Rome. So the answer is: Rome");
    CHECK(answer_style_from_string("gold") == AnswerStyle::gold_canonical);
    CHECK(answer_style_from_string("teacher") == AnswerStyle::teacher);
}

TEST_CASE("inconsistent traces are rejected") {
    const auto index = one_passage();
    auto t = toy_trace({"a", "b"});
    t.terminated_at = 3;
    CHECK_THROWS_AS(records_from_trace(t, index, DistillConfig{}, "x"), ValidationError);
}

TEST_CASE("build over the scripted teacher") {
    World w;
    ScriptedMock teacher(w.fixture.teacher);
    DistillConfig cfg;
    const auto result = build_stepwise(w.dataset, w.index, teacher, cfg);
    const auto& rep = result.report;
    CHECK(rep.total == 12);
    CHECK(rep.conserved());
    std::size_t expect_kept = 0;
    std::size_t expect_records = 0;
    for (std::size_t i = 0; i < 12; ++i)
        if (w.fixture.teacher_correct[i]) {
            ++expect_kept;
            expect_records += w.fixture.teacher_steps[i];
        }
    CHECK(rep.kept == expect_kept);
    CHECK(rep.dropped_wrong_answer == 12 - expect_kept);
    CHECK(rep.dropped_degenerate == 0);
    CHECK(rep.records == expect_records);
    CHECK(result.records.size() == expect_records);
    for (const auto& d : rep.drops) CHECK(d.reason == "wrong_answer");

    std::map<std::string, std::vector<const StepwiseRecord*>> by_sample;
    for (const auto& r : result.records) by_sample[r.sample_id].push_back(&r);
    for (std::size_t i = 0; i < 12; ++i) {
        const auto& id = w.fixture.samples[i].id;
        if (!w.fixture.teacher_correct[i]) {
            CHECK(by_sample.count(id) == 0);
            continue;
        }
        const auto& recs = by_sample[id];
        const std::size_t steps = w.fixture.teacher_steps[i];
        REQUIRE(recs.size() == steps);
        const auto& chain = w.fixture.teacher_chains[i];
        for (std::size_t s = 1; s <= steps; ++s) {
            const auto& r = *recs[s - 1];
            CHECK(r.step == s);
            CHECK(r.stage == (s == steps ? Stage::agg : s == 1 ? Stage::init : Stage::exp));
            CHECK(r.target == chain_prefix(chain, s));
            CHECK(r.input.find(w.fixture.samples[i].question) != std::string::npos);
            for (const auto& pid : r.passage_ids)
                CHECK(r.input.find("Wikipedia Title: " + w.index.passage(pid).title + "\n") != std::string::npos);
            if (s > 1) {
                const auto& prev = recs[s - 2]->target;
                CHECK(r.target.size() > prev.size());
                CHECK(r.target.compare(0, prev.size(), prev) == 0);
                CHECK(r.passage_ids.size() >= recs[s - 2]->passage_ids.size());
            }
        }
        const auto& agg = *recs.back();
        const std::string town = w.fixture.samples[i].answers[0];
        CHECK(agg.target.ends_with(std::string(kRationaleAnswerFlag) + " " + town + "."));
        CHECK(agg.answer == town);
    }
}

TEST_CASE("gateway failures count as degenerate drops") {
    World w;
    auto entries = w.fixture.teacher;
    std::erase_if(entries, [&](const ScriptedMock::Entry& e) { return e.contains == w.fixture.samples[0].question; });
    ScriptedMock teacher(entries);
    std::vector<std::string> sunk;
    const auto rep = build_stepwise(w.dataset, w.index, teacher, DistillConfig{},
                                    [&](const StepwiseRecord& r) { sunk.push_back(r.sample_id); });
    CHECK(rep.dropped_degenerate == 1);
    CHECK(rep.conserved());
    CHECK(rep.drops[0].sample_id == "q00");
    CHECK(rep.drops[0].reason == "degenerate");
    CHECK(rep.drops[0].detail.find("script_exhausted") != std::string::npos);
    CHECK(std::find(sunk.begin(), sunk.end(), "q00") == sunk.end());
    CHECK(std::is_sorted(sunk.begin(), sunk.end()));
}

TEST_CASE("conservation holds across filter modes and worker counts") {
    World w;
    for (auto mode : {FilterMode::exact, FilterMode::contain})
        for (std::size_t workers : {1u, 3u}) {
            ScriptedMock teacher(w.fixture.teacher);
            DistillConfig cfg;
            cfg.filter = mode;
            cfg.workers = workers;
            const auto res = build_stepwise(w.dataset, w.index, teacher, cfg);
            CHECK(res.report.conserved());
            std::size_t by_steps = 0;
            for (const auto& [s, n] : res.report.kept_by_steps) by_steps += n;
            CHECK(by_steps == res.report.kept);
        }
}

TEST_CASE("record and report files") {
    TempDir dir;
    World w;
    ScriptedMock teacher(w.fixture.teacher);
    const auto res = build_stepwise(w.dataset, w.index, teacher, DistillConfig{});
    write_records(dir / "r.jsonl", res.records);
    CHECK(read_records(dir / "r.jsonl") == res.records);
    const auto back = FilterReport::from_json(res.report.to_json());
    CHECK(back.to_json() == res.report.to_json());

    auto j = record_to_json(res.records[0]);
    j.erase("stage");
    stepkd::testing::write_text(dir / "bad.jsonl", jsonl::to_line(record_to_json(res.records[0])) + jsonl::to_line(j));
    try {
        read_records(dir / "bad.jsonl");
        FAIL("expected an error");
    } catch (const SchemaError& e) {
        CHECK(e.line() == 2);
        CHECK(e.field() == "stage");
    }
    j = record_to_json(res.records[0]);
    j["stage"] = "middle";
    stepkd::testing::write_text(dir / "bad2.jsonl", jsonl::to_line(j));
    CHECK_THROWS_AS(read_records(dir / "bad2.jsonl"), SchemaError);
    j = record_to_json(res.records.back());
    j.erase("answer");
    CHECK_THROWS_AS(record_from_json(j, 1), SchemaError);
}
