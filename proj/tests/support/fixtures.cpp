#include "fixtures.hpp"

#include <atomic>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include <unistd.h>

namespace stepkd::testing {

TempDir::TempDir() {
    static std::atomic<int> counter{0};
    const auto base = fs::temp_directory_path();
    for (int attempt = 0; attempt < 100; ++attempt) {
        auto candidate = base / ("stepkd-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        if (fs::create_directory(candidate)) {
            path_ = candidate;
            return;
        }
    }
    throw std::runtime_error("could not create a temp dir");
}

TempDir::~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
}

void write_text(const fs::path& path, std::string_view content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out << content;
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read failed: " + path.string());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

namespace {

constexpr std::size_t kVocab = 400;

std::string vocab_word(std::size_t i) {
    static const char* extra[] = {"café", "Ωmega", "naïve", "straße", "Москва"};
    if (i < 5) return extra[i];
    return "w" + std::to_string(i);
}

// Skewed pick: low indices are much more frequent.
std::size_t skewed(std::mt19937_64& rng) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return static_cast<std::size_t>(static_cast<double>(kVocab) * u * u * u);
}

std::string random_words(std::mt19937_64& rng, std::size_t count) {
    static const char* punct[] = {"", "", "", ",", ".", ";", "!", "'s"};
    std::string out;
    for (std::size_t i = 0; i < count; ++i) {
        if (i) out += ' ';
        out += vocab_word(skewed(rng));
        out += punct[rng() % 8];
    }
    return out;
}

const char* kSyllables[] = {"al", "bri", "cal", "dun", "el", "far", "glen", "har",
                            "ivy", "jes", "kel", "lor", "mar", "nor", "os", "pel"};

std::string base_name(std::size_t i) {
    std::string s = std::string(kSyllables[i % 16]) + kSyllables[(i / 16 + 5) % 16];
    s[0] = static_cast<char>(s[0] - 'a' + 'A');
    return s;
}

}  // namespace

std::vector<Passage> random_passages(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<Passage> out;
    for (std::size_t i = 0; i < n; ++i) {
        char id[16];
        std::snprintf(id, sizeof id, "d%04zu", i);
        Passage p{id, random_words(rng, 1 + rng() % 4), random_words(rng, 5 + rng() % 56)};
        out.push_back(std::move(p));
    }
    for (std::size_t i = out.size(); i > 1; --i) std::swap(out[i - 1], out[rng() % i]);
    return out;
}

std::vector<std::string> random_queries(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) {
        std::string q = random_words(rng, 1 + rng() % 12);
        if (i % 10 == 9) q += " zzzunseen";
        out.push_back(std::move(q));
    }
    return out;
}

PipelineFixture pipeline_fixture(std::size_t n_samples, std::size_t n_passages) {
    if (n_passages < 4 * n_samples) throw std::invalid_argument("need 4 passages per sample");
    PipelineFixture f;
    std::mt19937_64 rng(7);
    for (std::size_t i = 0; i < n_samples; ++i) {
        const std::string b = base_name(i);
        const std::string works = b + "ford Works";
        const std::string person = "Orin " + b + "son";
        const std::string town = b + "wick";
        const std::string river = b + "brook";
        char prefix[8];
        std::snprintf(prefix, sizeof prefix, "p%02zu", i);
        const std::string pid(prefix);
        f.passages.push_back({pid + "a", works, works + " was founded by " + person + " and made brass clocks."});
        f.passages.push_back({pid + "b", person, person + " retired to the town of " + town + " after selling the firm."});
        f.passages.push_back({pid + "c", town, town + " is a market town on the river " + river + "."});
        f.passages.push_back({pid + "d", river, "The " + river + " flows north into the estuary near " + town + "."});

        QASample s;
        char sid[8];
        std::snprintf(sid, sizeof sid, "q%02zu", i);
        s.id = sid;
        s.question = "In which town did the founder of " + works + " retire?";
        s.answers = {town, town + " town"};
        s.supporting_ids = std::vector<std::string>{pid + "a", pid + "b"};
        f.samples.push_back(s);

        const std::vector<std::string> facts = {
            works + " was founded by " + person + ".",
            person + " retired to " + town + ".",
            town + " lies on the river " + river + ".",
            "The " + river + " reaches the estuary near " + town + ".",
            "The evidence consistently points to " + town + ".",
        };
        const std::string wrong = base_name(i + 1) + "wick";

        const std::size_t t_steps = 2 + i % 4;
        const bool t_ok = i % 5 != 3;
        std::vector<std::string> chain;
        for (std::size_t step = 1; step <= t_steps; ++step) {
            std::string text = facts[step - 1];
            if (step == t_steps) text += " So the answer is: " + (t_ok ? town : wrong) + ".";
            chain.push_back(text);
            f.teacher.push_back({s.question, std::nullopt, text, FinishReason::stop, false});
        }
        f.teacher_steps.push_back(t_steps);
        f.teacher_correct.push_back(t_ok);
        f.teacher_chains.push_back(chain);

        const std::size_t st_steps = 1 + i % 3;
        const bool st_ok = i % 4 != 1;
        for (std::size_t step = 1; step <= st_steps; ++step) {
            std::string text = facts[step - 1];
            if (step == st_steps) text += " So the answer is: " + (st_ok ? town : wrong) + ".";
            f.student.push_back({s.question, std::nullopt, text, FinishReason::stop, false});
        }
        f.student_steps.push_back(st_steps);
        f.student_correct.push_back(st_ok);
    }
    for (std::size_t k = 4 * n_samples; k < n_passages; ++k) {
        char id[8];
        std::snprintf(id, sizeof id, "x%03zu", k);
        f.passages.push_back({id, "Filler " + std::to_string(k), random_words(rng, 20 + rng() % 20)});
    }
    for (std::size_t i = f.passages.size(); i > 1; --i) std::swap(f.passages[i - 1], f.passages[rng() % i]);
    return f;
}

FixtureFiles write_fixture(const PipelineFixture& fixture, const fs::path& dir) {
    fs::create_directories(dir);
    FixtureFiles files{dir / "corpus.jsonl", dir / "dataset.jsonl", dir / "teacher.jsonl", dir / "student.jsonl"};
    CorpusStore::from_passages(fixture.passages).write(files.corpus);
    QADataset::from_samples(fixture.samples).write(files.dataset);
    ScriptedMock::save(files.teacher, fixture.teacher);
    ScriptedMock::save(files.student, fixture.student);
    return files;
}

}  // namespace stepkd::testing
