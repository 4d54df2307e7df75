#pragma once

// Brute-force Okapi BM25: scores every passage directly from its token list,
// with no inverted index. Used as the reference for the real index.

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "stepkd/corpus.hpp"
#include "stepkd/text.hpp"

namespace stepkd::testing {

struct OracleHit {
    std::string id;
    double score = 0.0;
};

inline std::vector<OracleHit> brute_force_bm25(std::span<const Passage> passages, std::string_view query,
                                               double k1 = 1.2, double b = 0.75, std::size_t max_tokens = 512) {
    const double n = static_cast<double>(passages.size());
    std::vector<std::vector<std::string>> docs;
    double total_len = 0.0;
    for (const auto& p : passages) {
        docs.push_back(tokenize(p.title + "\n" + p.text));
        total_len += static_cast<double>(docs.back().size());
    }
    const double avg = total_len / n;

    std::vector<std::string> q = tokenize(query);
    if (q.size() > max_tokens) q.resize(max_tokens);
    std::vector<std::string> terms;
    std::unordered_set<std::string> seen;
    for (auto& t : q)
        if (seen.insert(t).second) terms.push_back(t);

    std::vector<OracleHit> hits;
    for (std::size_t d = 0; d < docs.size(); ++d) {
        double score = 0.0;
        bool matched = false;
        for (const auto& term : terms) {
            const double tf = static_cast<double>(std::count(docs[d].begin(), docs[d].end(), term));
            if (tf == 0.0) continue;
            double df = 0.0;
            for (const auto& other : docs)
                if (std::find(other.begin(), other.end(), term) != other.end()) df += 1.0;
            const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
            const double len = static_cast<double>(docs[d].size());
            score += idf * (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * len / avg));
            matched = true;
        }
        if (matched && score > 0.0) hits.push_back({passages[d].id, score});
    }
    std::sort(hits.begin(), hits.end(), [](const OracleHit& a, const OracleHit& c) {
        if (a.score != c.score) return a.score > c.score;
        return a.id < c.id;
    });
    return hits;
}

}  // namespace stepkd::testing
