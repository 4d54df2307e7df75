#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace stepkd {

struct Passage {
    std::string id;
    std::string title;
    std::string text;

    bool operator==(const Passage&) const = default;
};

struct QASample {
    std::string id;
    std::string question;
    std::vector<std::string> answers;
    std::optional<std::vector<std::string>> supporting_ids;

    bool operator==(const QASample&) const = default;
};

// Immutable passage collection keyed by id. Corpus files are JSON lines with
// required string keys "id", "title" and "text".
class CorpusStore {
public:
    CorpusStore() = default;

    static CorpusStore ingest(const std::filesystem::path& path);
    // Programmatic construction with the same validation as ingest; the
    // "line" reported in errors is the 1-based position in `passages`.
    static CorpusStore from_passages(std::vector<Passage> passages);

    const Passage& get_passage(std::string_view id) const;
    const Passage* find(std::string_view id) const;
    bool contains(std::string_view id) const { return find(id) != nullptr; }

    std::size_t size() const { return passages_.size(); }
    bool empty() const { return passages_.empty(); }
    std::span<const Passage> passages() const { return passages_; }
    const std::vector<std::string>& warnings() const { return warnings_; }

    void write(const std::filesystem::path& path) const;

private:
    void add(Passage p, std::size_t line);

    std::vector<Passage> passages_;
    std::unordered_map<std::string, std::size_t> by_id_;
    std::unordered_map<std::string, std::size_t> line_of_;
    std::vector<std::string> warnings_;
};

// QA dataset: JSON lines with "id", "question", "answers" (non-empty list)
// and optional "supporting_ids" (list of passage ids).
class QADataset {
public:
    QADataset() = default;

    static QADataset ingest(const std::filesystem::path& path);
    static QADataset from_samples(std::vector<QASample> samples);

    const QASample& get_sample(std::string_view id) const;
    const QASample* find(std::string_view id) const;

    std::size_t size() const { return samples_.size(); }
    bool empty() const { return samples_.empty(); }
    std::span<const QASample> samples() const { return samples_; }
    const std::vector<std::string>& warnings() const { return warnings_; }

    void write(const std::filesystem::path& path) const;

    // Uniform sample of `n` records without replacement, original order kept.
    QADataset subsample(std::size_t n, std::uint64_t seed) const;

private:
    void add(QASample s, std::size_t line);

    std::vector<QASample> samples_;
    std::unordered_map<std::string, std::size_t> by_id_;
    std::unordered_map<std::string, std::size_t> line_of_;
    std::vector<std::string> warnings_;
};

struct UnresolvedSupport {
    std::string sample_id;
    std::string passage_id;
};

// Supporting ids that do not resolve in `corpus`; empty when the pair is consistent.
std::vector<UnresolvedSupport> unresolved_supporting_ids(const QADataset& dataset,
                                                         const CorpusStore& corpus);

}  // namespace stepkd
