#include "doctest.h"

#include "fixtures.hpp"
#include "stepkd/errors.hpp"
#include "stepkd/prompts.hpp"

using namespace stepkd;
namespace fs = std::filesystem;

namespace {

const fs::path kPrompts = STEPKD_PROMPTS_DIR;

std::size_t count(const std::string& hay, std::string_view needle) {
    std::size_t n = 0;
    for (auto pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + needle.size())) ++n;
    return n;
}

}  // namespace

TEST_CASE("knowledge blocks") {
    const Passage a{"1", "Laughter in Hell", "A 1933 film."};
    const Passage b{"2", "Edward L. Cahn", "An American director."};
    const std::vector<const Passage*> ps{&a, &b};
    CHECK(render_knowledge(ps) ==
          "Wikipedia Title: Laughter in Hell\nA 1933 film.\n\nWikipedia Title: Edward L. Cahn\nAn American director.");
    CHECK(render_knowledge({}) == "");
}

TEST_CASE("rationale-chain prompt layout") {
    const Passage a{"1", "T", "text"};
    const std::vector<const Passage*> ps{&a};
    const auto tpl = PromptTemplate::rationale_chain();
    CHECK(render_prompt(tpl, "Who?", ps, {}, false, kRationaleAnswerFlag) ==
          "Wikipedia Title: T\ntext\nQ: Answer the following question by reasoning step-by-step.\nWho?\nA:");
    const std::vector<std::string> reasoning{"First.", "Second."};
    CHECK(render_prompt(tpl, "Who?", ps, reasoning, false, kRationaleAnswerFlag) ==
          "Wikipedia Title: T\ntext\nQ: Answer the following question by reasoning step-by-step.\nWho?\nA: First. Second.");
    const std::string agg = render_prompt(tpl, "Who?", ps, reasoning, true, kRationaleAnswerFlag);
    CHECK(agg.find("Who?\nUsing all of the reasoning and passages above, conclude with \"So the answer is:\"") !=
          std::string::npos);
    CHECK(agg.ends_with("A: First. Second."));
}

TEST_CASE("decomposition prompt layout") {
    const Passage a{"1", "T", "text"};
    const std::vector<const Passage*> ps{&a};
    const auto tpl = PromptTemplate::decomposition();
    const std::vector<std::string> reasoning{"Yes.\nFollow up: When?", "Intermediate answer: 2003.\nFollow up: Where?"};
    CHECK(render_prompt(tpl, "Which?", ps, reasoning, false, kDecompositionAnswerFlag) ==
          "Passages:\nWikipedia Title: T\ntext\nQuestion: Which?\nAre follow up questions needed here: Yes.\n"
          "Follow up: When?\nIntermediate answer: 2003.\nFollow up: Where?\n");
}

TEST_CASE("demonstrations are prepended with the template separator") {
    auto tpl = PromptTemplate::rationale_chain();
    tpl.demonstrations = "DEMO";
    const Passage a{"1", "T", "x"};
    const std::vector<const Passage*> ps{&a};
    CHECK(render_prompt(tpl, "Q", ps, {}, false, kRationaleAnswerFlag).starts_with("DEMO\n\nWikipedia Title: T"));
}

TEST_CASE("placeholders in the question are left alone") {
    const Passage a{"1", "T", "x"};
    const std::vector<const Passage*> ps{&a};
    const auto out = render_prompt(PromptTemplate::rationale_chain(), "odd {Knowledge} question", ps, {}, false,
                                   kRationaleAnswerFlag);
    CHECK(count(out, "Wikipedia Title:") == 1);
    CHECK(out.find("odd {Knowledge} question") != std::string::npos);
    PromptTemplate broken;
    broken.body = "{Question} only";
    CHECK_THROWS_AS(render_prompt(broken, "q", ps, {}, false, kRationaleAnswerFlag), ConfigError);
}

TEST_CASE("bundled template files match the built-in layouts") {
    CHECK(load_template_body(kPrompts / "ircot_qa.txt") == PromptTemplate::rationale_chain().body);
    CHECK(load_template_body(kPrompts / "selfask_qa.txt") == PromptTemplate::decomposition().body);
    stepkd::testing::TempDir dir;
    stepkd::testing::write_text(dir / "t.txt", "no placeholders\n");
    CHECK_THROWS_AS(load_template_body(dir / "t.txt"), ConfigError);
    CHECK_THROWS_AS(load_template_body(dir / "absent.txt"), IoError);
}

TEST_CASE("bundled demonstrations") {
    for (const char* name : {"ircot_2wiki", "ircot_hotpotqa", "ircot_musique"}) {
        const std::string demos = load_demonstrations(kPrompts / "demos" / (std::string(name) + ".txt"));
        CHECK(count(demos, "So the answer is:") == 7);
        CHECK(count(demos, "Q: Answer the following question by reasoning step-by-step.") == 7);
        CHECK(demos.find("{Knowledge}") == std::string::npos);
        CHECK_FALSE(demos.ends_with("\n"));
    }
    for (const char* name : {"selfask_2wiki", "selfask_hotpotqa", "selfask_musique"}) {
        const std::string demos = load_demonstrations(kPrompts / "demos" / (std::string(name) + ".txt"));
        CHECK(count(demos, "So the final answer is:") == 3);
        CHECK(count(demos, "Are follow up questions needed here: Yes.") == 3);
        CHECK(demos.find("{Knowledge}") == std::string::npos);
    }
    const std::string two_wiki = load_demonstrations(kPrompts / "demos" / "selfask_2wiki.txt");
    CHECK(two_wiki.find("Follow up: When did Blind Shaft come out?") != std::string::npos);
}
