#include "stepkd/prompts.hpp"

#include <fstream>
#include <sstream>

#include "stepkd/errors.hpp"
#include "stepkd/text.hpp"

namespace stepkd {

namespace {

void replace_all(std::string& s, std::string_view from, std::string_view to) {
    std::size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
        s.replace(pos, from.size(), to);
        pos += to.size();
    }
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

PromptTemplate PromptTemplate::rationale_chain() {
    PromptTemplate t;
    t.body = "{Knowledge}\nQ: Answer the following question by reasoning step-by-step.\n{Question}\nA:";
    t.step_stop_sequences = {"\n"};
    t.single_step_stop_sequences = {"\n"};
    return t;
}

PromptTemplate PromptTemplate::decomposition() {
    PromptTemplate t;
    t.body = "Passages:\n{Knowledge}\nQuestion: {Question}\nAre follow up questions needed here:";
    t.reasoning_joiner = "\n";
    t.reasoning_trailer = "\n";
    t.demonstration_separator = "\n";
    // One step = the answer to the previous follow-up plus the next follow-up.
    t.step_stop_sequences = {"\nIntermediate answer:", "\n#", "\nQuestion:"};
    t.single_step_stop_sequences = {"\n#", "\nQuestion:"};
    return t;
}

std::string render_knowledge(std::span<const Passage* const> passages) {
    std::string out;
    for (std::size_t i = 0; i < passages.size(); ++i) {
        if (i) out += "\n\n";
        out += "Wikipedia Title: ";
        out += passages[i]->title;
        out += '\n';
        out += passages[i]->text;
    }
    return out;
}

std::string render_prompt(const PromptTemplate& tpl, std::string_view question,
                          std::span<const Passage* const> passages,
                          std::span<const std::string> reasoning, bool aggregate,
                          std::string_view answer_flag) {
    std::string question_block(question);
    if (aggregate && !tpl.aggregation_instruction.empty()) {
        std::string instruction = tpl.aggregation_instruction;
        replace_all(instruction, "{Flag}", answer_flag);
        question_block += "\n" + instruction;
    }
    // Question first so that a question containing "{Knowledge}" is not expanded.
    std::string body = tpl.body;
    const std::string knowledge = render_knowledge(passages);
    const auto kpos = body.find("{Knowledge}");
    const auto qpos = body.find("{Question}");
    if (kpos == std::string::npos || qpos == std::string::npos)
        throw ConfigError("prompt template must contain {Knowledge} and {Question}");
    if (kpos < qpos) {
        body.replace(qpos, 10, question_block);
        body.replace(kpos, 11, knowledge);
    } else {
        body.replace(kpos, 11, knowledge);
        body.replace(qpos, 10, question_block);
    }

    std::string prompt;
    if (!tpl.demonstrations.empty()) {
        prompt = tpl.demonstrations;
        prompt += tpl.demonstration_separator;
    }
    prompt += body;
    if (!reasoning.empty()) {
        prompt += tpl.reasoning_lead;
        for (std::size_t i = 0; i < reasoning.size(); ++i) {
            if (i) prompt += tpl.reasoning_joiner;
            prompt += reasoning[i];
        }
        prompt += tpl.reasoning_trailer;
    }
    return prompt;
}

std::string load_template_body(const std::filesystem::path& path) {
    std::string body = read_file(path);
    while (!body.empty() && (body.back() == '\n' || body.back() == '\r')) body.pop_back();
    if (body.find("{Knowledge}") == std::string::npos || body.find("{Question}") == std::string::npos)
        throw ConfigError("template '" + path.string() + "' must contain {Knowledge} and {Question}");
    return body;
}

std::string load_demonstrations(const std::filesystem::path& path) {
    std::istringstream in(read_file(path));
    std::vector<std::string> kept;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line) == "{Knowledge}") continue;
        kept.push_back(line);
    }
    while (!kept.empty() && trim(kept.back()).empty()) kept.pop_back();
    return join(kept, "\n");
}

}  // namespace stepkd
