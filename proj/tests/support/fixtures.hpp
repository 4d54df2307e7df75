#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "stepkd/corpus.hpp"
#include "stepkd/gateway.hpp"

namespace stepkd::testing {

namespace fs = std::filesystem;

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir();
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(std::string_view name) const { return path_ / name; }

private:
    fs::path path_;
};

void write_text(const fs::path& path, std::string_view content);
std::string read_text(const fs::path& path);

// Random passages over a skewed vocabulary (ids "d0000".., shuffled order).
std::vector<Passage> random_passages(std::size_t n, std::uint64_t seed);
std::vector<std::string> random_queries(std::size_t n, std::uint64_t seed);

// A small multi-hop world: every sample has a four-passage chain
// (works -> founder -> town -> river) plus shared filler passages. The
// teacher script answers sample i in teacher_steps[i] steps; samples with
// teacher_correct[i] == false name the wrong town.
struct PipelineFixture {
    std::vector<Passage> passages;
    std::vector<QASample> samples;
    std::vector<std::size_t> teacher_steps;
    std::vector<bool> teacher_correct;
    std::vector<std::vector<std::string>> teacher_chains;
    std::vector<std::size_t> student_steps;
    std::vector<bool> student_correct;
    std::vector<ScriptedMock::Entry> teacher;
    std::vector<ScriptedMock::Entry> student;
};

// Teacher step counts cycle through 2, 3, 4, 5; every fifth sample
// (i % 5 == 3) gets a wrong teacher answer.
PipelineFixture pipeline_fixture(std::size_t samples = 10, std::size_t passages = 50);

struct FixtureFiles {
    fs::path corpus;
    fs::path dataset;
    fs::path teacher;
    fs::path student;
};

FixtureFiles write_fixture(const PipelineFixture& fixture, const fs::path& dir);

}  // namespace stepkd::testing
