// Copyright (c) 2026 The fedtopic authors
// SPDX-License-Identifier: Apache-2.0
//
// File formats:
//   corpus      one document per line, whitespace-separated tokens
//   vocabulary  lines "term<TAB>freq"
//   embeddings  header "E <int>", then one line of E reals per document
//   matrix      u64 LE rows, u64 LE cols, then rows*cols f64 LE row-major

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedtopic/corpus.hpp"

namespace fedtopic {

void save_vocabulary(const Vocabulary& vocab, const std::string& path);
Vocabulary load_vocabulary(const std::string& path);

// Writes the documents of `corpus` to `path` (tokens repeated per count),
// the vocabulary to `path + ".vocab"` and, when present, the embeddings to
// `path + ".emb"`.
void save_corpus(const BowCorpus& corpus, const std::string& path);

// Reads a corpus saved by save_corpus. When no ".vocab" sidecar exists the
// vocabulary is built from the tokens themselves (min_count 1); a ".emb"
// sidecar is attached when present.
BowCorpus load_corpus(const std::string& path);

void save_doc_embeddings(const DocEmbeddings& emb, const std::string& path);
DocEmbeddings load_doc_embeddings(const std::string& path, std::size_t expected_rows);

struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data; // row-major

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

void save_matrix(const Matrix& m, const std::string& path);
Matrix load_matrix(const std::string& path);

// Appends rows to a CSV with the fixed schema
// "scenario,metric,K_shared,eta,run,value"; the header is written when the
// file does not yet exist or is empty.
struct ScoreRow {
    std::string scenario;
    std::string metric;
    long k_shared = -1;   // -1 renders as empty
    double eta = -1.0;    // < 0 renders as empty
    long run = 0;
    double value = 0.0;
};

void append_scores_csv(const std::string& path, const std::vector<ScoreRow>& rows);

} // namespace fedtopic
