#include "stepkd/corpus.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "stepkd/errors.hpp"
#include "stepkd/jsonl.hpp"
#include "stepkd/text.hpp"

namespace stepkd {

using jsonl::json;

namespace {

Passage parse_passage(const json& obj, std::size_t line) {
    Passage p{jsonl::require_string(obj, "id", line), jsonl::require_string(obj, "title", line),
              jsonl::require_string(obj, "text", line)};
    if (p.id.empty()) throw SchemaError(line, "id", "must be non-empty");
    return p;
}

QASample parse_sample(const json& obj, std::size_t line) {
    QASample s;
    s.id = jsonl::require_string(obj, "id", line);
    if (s.id.empty()) throw SchemaError(line, "id", "must be non-empty");
    s.question = jsonl::require_string(obj, "question", line);
    s.answers = jsonl::require_string_list(obj, "answers", line);
    if (s.answers.empty()) throw SchemaError(line, "answers", "must contain at least one answer");
    if (auto it = obj.find("supporting_ids"); it != obj.end() && !it->is_null())
        s.supporting_ids = jsonl::require_string_list(obj, "supporting_ids", line);
    return s;
}

}  // namespace

void CorpusStore::add(Passage p, std::size_t line) {
    if (trim(p.text).empty()) throw SchemaError(line, "text", "must be non-empty after trimming");
    if (auto it = line_of_.find(p.id); it != line_of_.end())
        throw ConflictError(p.id, it->second, line);
    line_of_.emplace(p.id, line);
    by_id_.emplace(p.id, passages_.size());
    passages_.push_back(std::move(p));
}

CorpusStore CorpusStore::ingest(const std::filesystem::path& path) {
    CorpusStore store;
    jsonl::for_each_object(path, [&](const json& obj, std::size_t line) {
        store.add(parse_passage(obj, line), line);
    });
    if (store.empty()) store.warnings_.push_back("corpus '" + path.string() + "' is empty");
    return store;
}

CorpusStore CorpusStore::from_passages(std::vector<Passage> passages) {
    CorpusStore store;
    for (std::size_t i = 0; i < passages.size(); ++i) store.add(std::move(passages[i]), i + 1);
    return store;
}

const Passage* CorpusStore::find(std::string_view id) const {
    auto it = by_id_.find(std::string(id));
    return it == by_id_.end() ? nullptr : &passages_[it->second];
}

const Passage& CorpusStore::get_passage(std::string_view id) const {
    if (const Passage* p = find(id)) return *p;
    throw NotFoundError(std::string(id));
}

void CorpusStore::write(const std::filesystem::path& path) const {
    auto out = jsonl::open_for_write(path);
    for (const auto& p : passages_)
        out << jsonl::to_line(json{{"id", p.id}, {"title", p.title}, {"text", p.text}});
}

void QADataset::add(QASample s, std::size_t line) {
    if (auto it = line_of_.find(s.id); it != line_of_.end())
        throw ConflictError(s.id, it->second, line);
    line_of_.emplace(s.id, line);
    by_id_.emplace(s.id, samples_.size());
    samples_.push_back(std::move(s));
}

QADataset QADataset::ingest(const std::filesystem::path& path) {
    QADataset ds;
    jsonl::for_each_object(path, [&](const json& obj, std::size_t line) {
        ds.add(parse_sample(obj, line), line);
    });
    if (ds.empty()) ds.warnings_.push_back("dataset '" + path.string() + "' is empty");
    return ds;
}

QADataset QADataset::from_samples(std::vector<QASample> samples) {
    QADataset ds;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].answers.empty())
            throw SchemaError(i + 1, "answers", "must contain at least one answer");
        ds.add(std::move(samples[i]), i + 1);
    }
    return ds;
}

const QASample* QADataset::find(std::string_view id) const {
    auto it = by_id_.find(std::string(id));
    return it == by_id_.end() ? nullptr : &samples_[it->second];
}

const QASample& QADataset::get_sample(std::string_view id) const {
    if (const QASample* s = find(id)) return *s;
    throw NotFoundError(std::string(id));
}

void QADataset::write(const std::filesystem::path& path) const {
    auto out = jsonl::open_for_write(path);
    for (const auto& s : samples_) {
        json obj{{"id", s.id}, {"question", s.question}, {"answers", s.answers}};
        if (s.supporting_ids) obj["supporting_ids"] = *s.supporting_ids;
        out << jsonl::to_line(obj);
    }
}

QADataset QADataset::subsample(std::size_t n, std::uint64_t seed) const {
    std::vector<std::size_t> idx(samples_.size());
    std::iota(idx.begin(), idx.end(), 0);
    if (n < idx.size()) {
        // Hand-rolled Fisher-Yates: std::shuffle and the standard distributions
        // are implementation-defined, mt19937_64 output is not.
        std::mt19937_64 rng(seed);
        for (std::size_t i = idx.size() - 1; i > 0; --i)
            std::swap(idx[i], idx[static_cast<std::size_t>(rng() % (i + 1))]);
        idx.resize(n);
        std::sort(idx.begin(), idx.end());
    }
    std::vector<QASample> picked;
    picked.reserve(idx.size());
    for (auto i : idx) picked.push_back(samples_[i]);
    return from_samples(std::move(picked));
}

std::vector<UnresolvedSupport> unresolved_supporting_ids(const QADataset& dataset,
                                                         const CorpusStore& corpus) {
    std::vector<UnresolvedSupport> out;
    for (const auto& s : dataset.samples()) {
        if (!s.supporting_ids) continue;
        for (const auto& pid : *s.supporting_ids)
            if (!corpus.contains(pid)) out.push_back({s.id, pid});
    }
    return out;
}

}  // namespace stepkd
