// Copyright (c) 2026 The fedtopic authors
// SPDX-License-Identifier: Apache-2.0
//
// Vocabulary construction and merging plus the sparse bag-of-words corpus
// representation exchanged between nodes.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace fedtopic {

// An ordered term list with per-term weights. Terms are unique and kept in
// byte-lexicographic order so that any two parties building a vocabulary
// from the same term/weight multiset produce identical objects.
class Vocabulary {
public:
    Vocabulary() = default;

    // Takes (term, freq) pairs in any order; canonicalizes. Duplicate terms
    // or negative frequencies are rejected.
    static Vocabulary from_pairs(std::vector<std::pair<std::string, double>> pairs);

    std::size_t size() const { return terms_.size(); }
    bool empty() const { return terms_.empty(); }

    const std::vector<std::string>& terms() const { return terms_; }
    const std::vector<double>& freqs() const { return freqs_; }
    const std::string& term(std::size_t pos) const { return terms_[pos]; }
    double freq(std::size_t pos) const { return freqs_[pos]; }

    std::optional<std::uint32_t> position(const std::string& term) const;

    bool operator==(const Vocabulary& other) const {
        return terms_ == other.terms_ && freqs_ == other.freqs_;
    }

private:
    std::vector<std::string> terms_;
    std::vector<double> freqs_;
    std::unordered_map<std::string, std::uint32_t> index_;
};

// One document as (vocabulary position, count) entries. Positions are
// strictly increasing and counts are >= 1.
struct BowDocument {
    std::vector<std::pair<std::uint32_t, std::uint32_t>> entries;
    std::string doc_id;

    std::uint64_t token_count() const {
        std::uint64_t n = 0;
        for (const auto& [pos, cnt] : entries) n += cnt;
        return n;
    }

    bool operator==(const BowDocument& other) const {
        return entries == other.entries && doc_id == other.doc_id;
    }
};

// Per-document contextual vectors, row-major [docs x dim].
struct DocEmbeddings {
    std::size_t dim = 0;
    std::vector<double> data;

    std::size_t rows() const { return dim == 0 ? 0 : data.size() / dim; }
    const double* row(std::size_t i) const { return data.data() + i * dim; }

    bool operator==(const DocEmbeddings& other) const {
        return dim == other.dim && data == other.data;
    }
};

struct BowCorpus {
    Vocabulary vocab;
    std::vector<BowDocument> docs;
    std::optional<DocEmbeddings> embeddings;

    std::size_t num_docs() const { return docs.size(); }

    // Checks entry bounds and the embedding row count; throws on violation.
    void validate() const;

    bool operator==(const BowCorpus& other) const {
        return vocab == other.vocab && docs == other.docs && embeddings == other.embeddings;
    }
};

// Canonical vocabulary of all tokens occurring at least min_count times;
// freq is the total occurrence count. Throws ConfigError when everything is
// filtered away.
Vocabulary build_vocabulary(const std::vector<std::vector<std::string>>& tokenized_docs,
                            std::size_t min_count = 1);

// Union of the inputs with summed frequencies, canonically ordered. Inputs
// are consumed in list order so frequency sums are reproducible.
Vocabulary merge_vocabularies(const std::vector<Vocabulary>& vocabs);

// Builds a corpus over `vocab` from tokenized documents; doc ids default to
// the 0-based document index.
BowCorpus corpus_from_tokens(const std::vector<std::vector<std::string>>& tokenized_docs,
                             Vocabulary vocab);

// Re-expresses a corpus over a target vocabulary that must contain every
// source term. Counts, document order and embeddings are preserved.
BowCorpus remap_corpus(const BowCorpus& corpus, const Vocabulary& target);

// The sub-corpus given by doc_indices, embeddings sliced accordingly.
BowCorpus subset_corpus(const BowCorpus& corpus, const std::vector<std::uint32_t>& doc_indices);

} // namespace fedtopic
