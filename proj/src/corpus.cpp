// Copyright (c) 2026 The fedtopic authors
// SPDX-License-Identifier: Apache-2.0

#include "fedtopic/corpus.hpp"

#include <algorithm>
#include <map>

#include "fedtopic/errors.hpp"

namespace fedtopic {

Vocabulary Vocabulary::from_pairs(std::vector<std::pair<std::string, double>> pairs) {
    std::sort(pairs.begin(), pairs.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    Vocabulary v;
    v.terms_.reserve(pairs.size());
    v.freqs_.reserve(pairs.size());
    for (auto& [term, freq] : pairs) {
        if (!v.terms_.empty() && v.terms_.back() == term) {
            throw ConfigError("duplicate vocabulary term: " + term);
        }
        if (freq < 0.0) {
            throw ConfigError("negative frequency for term: " + term);
        }
        v.index_.emplace(term, static_cast<std::uint32_t>(v.terms_.size()));
        v.terms_.push_back(std::move(term));
        v.freqs_.push_back(freq);
    }
    return v;
}

std::optional<std::uint32_t> Vocabulary::position(const std::string& term) const {
    auto it = index_.find(term);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

void BowCorpus::validate() const {
    for (const auto& doc : docs) {
        std::int64_t prev = -1;
        for (const auto& [pos, cnt] : doc.entries) {
            if (cnt < 1) throw ConfigError("document " + doc.doc_id + " has a zero count");
            if (pos >= vocab.size()) {
                throw ConfigError("document " + doc.doc_id + " references position " +
                                  std::to_string(pos) + " outside the vocabulary");
            }
            if (static_cast<std::int64_t>(pos) <= prev) {
                throw ConfigError("document " + doc.doc_id + " entries not strictly increasing");
            }
            prev = pos;
        }
    }
    if (embeddings) {
        if (embeddings->dim == 0) throw ConfigError("embeddings dimension must be positive");
        if (embeddings->rows() != docs.size()) {
            throw ConfigError("embedding rows (" + std::to_string(embeddings->rows()) +
                              ") do not match document count (" + std::to_string(docs.size()) + ")");
        }
    }
}

Vocabulary build_vocabulary(const std::vector<std::vector<std::string>>& tokenized_docs,
                            std::size_t min_count) {
    if (min_count < 1) throw ConfigError("min_count must be >= 1");
    std::map<std::string, std::uint64_t> counts;
    for (const auto& doc : tokenized_docs) {
        for (const auto& tok : doc) ++counts[tok];
    }
    std::vector<std::pair<std::string, double>> kept;
    kept.reserve(counts.size());
    for (const auto& [term, count] : counts) {
        if (count >= min_count) kept.emplace_back(term, static_cast<double>(count));
    }
    if (kept.empty()) {
        throw ConfigError("empty vocabulary: every token occurs fewer than " +
                          std::to_string(min_count) + " times");
    }
    return Vocabulary::from_pairs(std::move(kept));
}

Vocabulary merge_vocabularies(const std::vector<Vocabulary>& vocabs) {
    if (vocabs.empty()) throw ConfigError("merge_vocabularies: empty input list");
    std::map<std::string, double> merged;
    for (const auto& v : vocabs) {
        for (std::size_t i = 0; i < v.size(); ++i) {
            merged[v.term(i)] += v.freq(i);
        }
    }
    std::vector<std::pair<std::string, double>> pairs(merged.begin(), merged.end());
    return Vocabulary::from_pairs(std::move(pairs));
}

BowCorpus corpus_from_tokens(const std::vector<std::vector<std::string>>& tokenized_docs,
                             Vocabulary vocab) {
    BowCorpus corpus;
    corpus.vocab = std::move(vocab);
    corpus.docs.reserve(tokenized_docs.size());
    for (std::size_t d = 0; d < tokenized_docs.size(); ++d) {
        std::map<std::uint32_t, std::uint32_t> counts;
        for (const auto& tok : tokenized_docs[d]) {
            auto pos = corpus.vocab.position(tok);
            if (!pos) throw ConfigError("token '" + tok + "' missing from vocabulary");
            ++counts[*pos];
        }
        BowDocument doc;
        doc.doc_id = std::to_string(d);
        doc.entries.assign(counts.begin(), counts.end());
        corpus.docs.push_back(std::move(doc));
    }
    return corpus;
}

BowCorpus remap_corpus(const BowCorpus& corpus, const Vocabulary& target) {
    std::vector<std::uint32_t> mapping(corpus.vocab.size());
    for (std::size_t i = 0; i < corpus.vocab.size(); ++i) {
        auto pos = target.position(corpus.vocab.term(i));
        if (!pos) {
            throw ProtocolError("remap_corpus: term '" + corpus.vocab.term(i) +
                                "' missing from target vocabulary");
        }
        mapping[i] = *pos;
    }
    BowCorpus out;
    out.vocab = target;
    out.docs.reserve(corpus.docs.size());
    for (const auto& doc : corpus.docs) {
        BowDocument mapped;
        mapped.doc_id = doc.doc_id;
        mapped.entries.reserve(doc.entries.size());
        for (const auto& [pos, cnt] : doc.entries) {
            mapped.entries.emplace_back(mapping[pos], cnt);
        }
        // Both vocabularies are lexicographically ordered, so the mapping is
        // monotone and entries stay strictly increasing.
        out.docs.push_back(std::move(mapped));
    }
    out.embeddings = corpus.embeddings;
    return out;
}

BowCorpus subset_corpus(const BowCorpus& corpus, const std::vector<std::uint32_t>& doc_indices) {
    BowCorpus out;
    out.vocab = corpus.vocab;
    out.docs.reserve(doc_indices.size());
    for (auto i : doc_indices) out.docs.push_back(corpus.docs.at(i));
    if (corpus.embeddings) {
        DocEmbeddings emb;
        emb.dim = corpus.embeddings->dim;
        emb.data.reserve(doc_indices.size() * emb.dim);
        for (auto i : doc_indices) {
            const double* row = corpus.embeddings->row(i);
            emb.data.insert(emb.data.end(), row, row + emb.dim);
        }
        out.embeddings = std::move(emb);
    }
    return out;
}

} // namespace fedtopic
