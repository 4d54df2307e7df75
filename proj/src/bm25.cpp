#include "stepkd/bm25.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "stepkd/errors.hpp"
#include "stepkd/jsonl.hpp"
#include "stepkd/text.hpp"

namespace stepkd {

using jsonl::json;

std::vector<std::string> query_terms(std::string_view query, std::size_t max_tokens) {
    TokenStream tokens = tokenize(query);
    if (tokens.size() > max_tokens) tokens.resize(max_tokens);
    std::vector<std::string> terms;
    for (auto& t : tokens)
        if (std::find(terms.begin(), terms.end(), t) == terms.end()) terms.push_back(std::move(t));
    return terms;
}

double bm25_idf(std::size_t n_docs, std::size_t df) {
    const double n = static_cast<double>(n_docs);
    const double d = static_cast<double>(df);
    return std::log(1.0 + (n - d + 0.5) / (d + 0.5));
}

double bm25_term_score(double idf, double tf, double doc_len, double avg_len,
                       const Bm25Params& params) {
    const double norm = params.k1 * (1.0 - params.b + params.b * doc_len / avg_len);
    return idf * (tf * (params.k1 + 1.0)) / (tf + norm);
}

namespace {

std::string indexed_text(const Passage& p) { return p.title + "\n" + p.text; }

}  // namespace

void InvertedIndex::finalize() {
    doc_of_.clear();
    for (std::size_t d = 0; d < order_.size(); ++d) doc_of_.emplace(doc(d).id, d);
    const auto total = std::accumulate(lengths_.begin(), lengths_.end(), std::uint64_t{0});
    avg_length_ = order_.empty() ? 0.0 : static_cast<double>(total) / static_cast<double>(order_.size());
}

InvertedIndex InvertedIndex::build(const CorpusStore& corpus, Bm25Params params) {
    if (corpus.empty()) throw ConfigError("cannot build an index over an empty corpus");
    if (!(params.k1 >= 0.0) || !(params.b >= 0.0 && params.b <= 1.0))
        throw ConfigError("BM25 parameters out of range (need k1 >= 0, 0 <= b <= 1)");
    if (params.max_query_tokens == 0) throw ConfigError("max_query_tokens must be positive");

    InvertedIndex index;
    index.params_ = params;
    index.corpus_ = corpus;
    index.order_.resize(corpus.size());
    std::iota(index.order_.begin(), index.order_.end(), 0);
    const auto all = corpus.passages();
    std::sort(index.order_.begin(), index.order_.end(),
              [&](std::size_t a, std::size_t b) { return all[a].id < all[b].id; });

    index.lengths_.resize(corpus.size());
    for (std::size_t d = 0; d < index.order_.size(); ++d) {
        const TokenStream tokens = tokenize(indexed_text(index.doc(d)));
        index.lengths_[d] = static_cast<std::uint32_t>(tokens.size());
        std::map<std::string_view, std::uint32_t> tf;
        for (const auto& t : tokens) ++tf[t];
        for (const auto& [term, count] : tf)
            index.postings_[std::string(term)].push_back({static_cast<std::uint32_t>(d), count});
    }
    index.finalize();
    return index;
}

std::span<const Posting> InvertedIndex::postings(std::string_view term) const {
    auto it = postings_.find(std::string(term));
    if (it == postings_.end()) return {};
    return it->second;
}

std::uint32_t InvertedIndex::length_of(std::string_view passage_id) const {
    auto it = doc_of_.find(std::string(passage_id));
    if (it == doc_of_.end()) throw NotFoundError(std::string(passage_id));
    return lengths_[it->second];
}

std::vector<ScoredHit> InvertedIndex::search(std::string_view query, std::size_t k) const {
    if (k == 0) throw ConfigError("k must be at least 1");
    const auto terms = query_terms(query, params_.max_query_tokens);
    if (terms.empty()) return {};

    std::vector<double> acc(order_.size(), 0.0);
    std::vector<std::uint32_t> touched;
    for (const auto& term : terms) {
        const auto plist = postings(term);
        if (plist.empty()) continue;
        const double idf = bm25_idf(order_.size(), plist.size());
        for (const Posting& p : plist) {
            if (acc[p.doc] == 0.0) touched.push_back(p.doc);
            acc[p.doc] += bm25_term_score(idf, static_cast<double>(p.tf),
                                          static_cast<double>(lengths_[p.doc]), avg_length_, params_);
        }
    }

    // Doc numbers follow id order, so the numeric tie-break is the id tie-break.
    auto better = [&](std::uint32_t a, std::uint32_t b) {
        if (acc[a] != acc[b]) return acc[a] > acc[b];
        return a < b;
    };
    std::erase_if(touched, [&](std::uint32_t d) { return !(acc[d] > 0.0); });
    const std::size_t n = std::min(k, touched.size());
    std::partial_sort(touched.begin(), touched.begin() + static_cast<std::ptrdiff_t>(n), touched.end(),
                      better);
    std::vector<ScoredHit> hits;
    hits.reserve(n);
    for (std::size_t i = 0; i < n; ++i) hits.push_back({doc(touched[i]).id, acc[touched[i]]});
    return hits;
}

void InvertedIndex::save(const std::filesystem::path& path) const {
    auto out = jsonl::open_for_write(path);
    out << kFormatTag << ' ' << kFormatVersion << '\n';
    out << jsonl::to_line(json{{"k1", params_.k1},
                               {"b", params_.b},
                               {"max_query_tokens", params_.max_query_tokens},
                               {"documents", order_.size()},
                               {"terms", postings_.size()}});
    for (std::size_t d = 0; d < order_.size(); ++d) {
        const Passage& p = doc(d);
        out << jsonl::to_line(
            json{{"id", p.id}, {"title", p.title}, {"text", p.text}, {"length", lengths_[d]}});
    }
    std::vector<const std::string*> terms;
    terms.reserve(postings_.size());
    for (const auto& [term, _] : postings_) terms.push_back(&term);
    std::sort(terms.begin(), terms.end(), [](auto* a, auto* b) { return *a < *b; });
    for (const std::string* term : terms) {
        json plist = json::array();
        for (const Posting& p : postings_.at(*term)) plist.push_back(json::array({p.doc, p.tf}));
        out << jsonl::to_line(json{{"term", *term}, {"postings", std::move(plist)}});
    }
    if (!out) throw IoError("failed writing index '" + path.string() + "'");
}

InvertedIndex InvertedIndex::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open index '" + path.string() + "'");
    std::string line;
    std::size_t lineno = 0;
    auto next_object = [&]() -> json {
        if (!std::getline(in, line)) throw ParseError(lineno + 1, "unexpected end of index file");
        ++lineno;
        try {
            json obj = json::parse(line);
            if (!obj.is_object()) throw ParseError(lineno, "expected a JSON object");
            return obj;
        } catch (const json::parse_error& e) {
            throw ParseError(lineno, std::string("invalid JSON: ") + e.what());
        }
    };

    if (!std::getline(in, line)) throw ParseError(1, "missing index header");
    ++lineno;
    const std::string expected = std::string(kFormatTag) + " " + std::to_string(kFormatVersion);
    if (trim(line) != expected)
        throw ParseError(1, "unsupported index header '" + trim(line) + "', expected '" + expected + "'");

    const json meta = next_object();
    InvertedIndex index;
    index.params_.k1 = jsonl::require_number(meta, "k1", lineno);
    index.params_.b = jsonl::require_number(meta, "b", lineno);
    index.params_.max_query_tokens =
        static_cast<std::size_t>(jsonl::require_int(meta, "max_query_tokens", lineno));
    const auto n_docs = static_cast<std::size_t>(jsonl::require_int(meta, "documents", lineno));
    const auto n_terms = static_cast<std::size_t>(jsonl::require_int(meta, "terms", lineno));
    if (n_docs == 0) throw ConfigError("index '" + path.string() + "' has no documents");

    std::vector<Passage> passages;
    passages.reserve(n_docs);
    index.lengths_.reserve(n_docs);
    for (std::size_t d = 0; d < n_docs; ++d) {
        const json obj = next_object();
        Passage p{jsonl::require_string(obj, "id", lineno), jsonl::require_string(obj, "title", lineno),
                  jsonl::require_string(obj, "text", lineno)};
        if (!passages.empty() && !(passages.back().id < p.id))
            throw ParseError(lineno, "passages must be stored in strictly ascending id order");
        passages.push_back(std::move(p));
        index.lengths_.push_back(static_cast<std::uint32_t>(jsonl::require_int(obj, "length", lineno)));
    }
    index.corpus_ = CorpusStore::from_passages(std::move(passages));
    index.order_.resize(n_docs);
    std::iota(index.order_.begin(), index.order_.end(), 0);

    std::vector<std::uint64_t> tf_sum(n_docs, 0);
    for (std::size_t t = 0; t < n_terms; ++t) {
        const json obj = next_object();
        std::string term = jsonl::require_string(obj, "term", lineno);
        const json& plist = jsonl::require(obj, "postings", lineno);
        if (!plist.is_array() || plist.empty())
            throw SchemaError(lineno, "postings", "expected a non-empty list of [doc, tf] pairs");
        std::vector<Posting> decoded;
        decoded.reserve(plist.size());
        for (const auto& pair : plist) {
            if (!pair.is_array() || pair.size() != 2 || !pair[0].is_number_unsigned() ||
                !pair[1].is_number_unsigned())
                throw SchemaError(lineno, "postings", "expected [doc, tf] pairs of unsigned integers");
            Posting p{pair[0].get<std::uint32_t>(), pair[1].get<std::uint32_t>()};
            if (p.doc >= n_docs || p.tf == 0)
                throw SchemaError(lineno, "postings", "posting references an invalid document");
            if (!decoded.empty() && decoded.back().doc >= p.doc)
                throw SchemaError(lineno, "postings", "postings must be in ascending document order");
            tf_sum[p.doc] += p.tf;
            decoded.push_back(p);
        }
        if (!index.postings_.emplace(std::move(term), std::move(decoded)).second)
            throw ParseError(lineno, "duplicate term");
    }
    for (std::size_t d = 0; d < n_docs; ++d)
        if (tf_sum[d] != index.lengths_[d])
            throw ParseError(lineno, "document length of '" + index.doc(d).id +
                                         "' disagrees with its postings");
    index.finalize();
    return index;
}

bool InvertedIndex::same_statistics(const InvertedIndex& other) const {
    if (!(params_ == other.params_) || order_.size() != other.order_.size() ||
        lengths_ != other.lengths_ || avg_length_ != other.avg_length_ || postings_ != other.postings_)
        return false;
    for (std::size_t d = 0; d < order_.size(); ++d)
        if (!(doc(d) == other.doc(d))) return false;
    return true;
}

}  // namespace stepkd
