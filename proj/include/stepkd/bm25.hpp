#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "stepkd/corpus.hpp"

namespace stepkd {

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;
    // Query tokens beyond this cap are dropped before scoring.
    std::size_t max_query_tokens = 512;

    bool operator==(const Bm25Params&) const = default;
};

struct ScoredHit {
    std::string id;
    double score = 0.0;

    bool operator==(const ScoredHit&) const = default;
};

struct Posting {
    std::uint32_t doc = 0;  // position in id-sorted passage order
    std::uint32_t tf = 0;

    bool operator==(const Posting&) const = default;
};

// Distinct query terms in first-occurrence order after truncation to
// `max_tokens` tokens. Repeated query terms are scored once.
std::vector<std::string> query_terms(std::string_view query, std::size_t max_tokens);

// Okapi BM25 with idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5)), which is
// strictly positive, so every passage sharing a term with the query scores > 0.
double bm25_idf(std::size_t n_docs, std::size_t df);
double bm25_term_score(double idf, double tf, double doc_len, double avg_len,
                       const Bm25Params& params);

// Inverted index over an immutable corpus. Passages are numbered in
// ascending id order so ingestion order never changes results.
class InvertedIndex {
public:
    static InvertedIndex build(const CorpusStore& corpus, Bm25Params params = {});

    // Top-k hits ordered by (score desc, id asc). Only passages with a
    // positive score are returned, so the result may be shorter than k.
    std::vector<ScoredHit> search(std::string_view query, std::size_t k) const;

    std::size_t document_count() const { return order_.size(); }
    double average_length() const { return avg_length_; }
    std::size_t term_count() const { return postings_.size(); }
    std::size_t document_frequency(std::string_view term) const { return postings(term).size(); }
    std::span<const Posting> postings(std::string_view term) const;
    std::uint32_t length_of(std::string_view passage_id) const;
    const Bm25Params& params() const { return params_; }

    const Passage& passage(std::string_view id) const { return corpus_.get_passage(id); }
    const CorpusStore& corpus() const { return corpus_; }

    void save(const std::filesystem::path& path) const;
    static InvertedIndex load(const std::filesystem::path& path);

    // Field-level equality of statistics and postings.
    bool same_statistics(const InvertedIndex& other) const;

    static constexpr std::string_view kFormatTag = "stepkd-bm25-index";
    static constexpr int kFormatVersion = 1;

private:
    void finalize();
    const Passage& doc(std::size_t d) const { return corpus_.passages()[order_[d]]; }

    Bm25Params params_;
    CorpusStore corpus_;
    std::vector<std::size_t> order_;  // doc number -> position in corpus_, id-sorted
    std::unordered_map<std::string, std::size_t> doc_of_;
    std::vector<std::uint32_t> lengths_;
    std::unordered_map<std::string, std::vector<Posting>> postings_;
    double avg_length_ = 0.0;
};

}  // namespace stepkd
