#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "stepkd/corpus.hpp"

namespace stepkd {

inline constexpr std::string_view kRationaleAnswerFlag = "So the answer is:";
inline constexpr std::string_view kDecompositionAnswerFlag = "So the final answer is:";

// A prompt layout. `body` carries the {Knowledge} and {Question}
// placeholders; the reasoning produced so far is appended after it.
struct PromptTemplate {
    std::string body;
    // Inserted between `body` and the first reasoning step.
    std::string reasoning_lead = " ";
    std::string reasoning_joiner = " ";
    // Appended after the last reasoning step (only when there is one).
    std::string reasoning_trailer;
    // Added on its own line after the question when the model must conclude.
    // {Flag} expands to the answer flag.
    std::string aggregation_instruction =
        "Using all of the reasoning and passages above, conclude with \"{Flag}\" followed by the answer.";
    std::string demonstrations;
    std::string demonstration_separator = "\n\n";
    std::vector<std::string> step_stop_sequences;
    std::vector<std::string> single_step_stop_sequences;

    // Chain-of-thought layout: "{Knowledge}\nQ: Answer the following question
    // by reasoning step-by-step.\n{Question}\nA:".
    static PromptTemplate rationale_chain();
    // Self-Ask layout: "Passages:\n{Knowledge}\nQuestion: {Question}\nAre
    // follow up questions needed here:".
    static PromptTemplate decomposition();
};

// "Wikipedia Title: <title>\n<text>" blocks separated by blank lines.
std::string render_knowledge(std::span<const Passage* const> passages);

std::string render_prompt(const PromptTemplate& tpl, std::string_view question,
                          std::span<const Passage* const> passages,
                          std::span<const std::string> reasoning, bool aggregate,
                          std::string_view answer_flag);

// Reads a template body from a text file. The file must contain both
// {Knowledge} and {Question}.
std::string load_template_body(const std::filesystem::path& path);

// Reads a few-shot demonstration file. Lines consisting only of
// "{Knowledge}" are dropped because demonstration passages are not bundled.
std::string load_demonstrations(const std::filesystem::path& path);

}  // namespace stepkd
