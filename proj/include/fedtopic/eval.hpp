// Copyright (c) 2026 The fedtopic authors
// SPDX-License-Identifier: Apache-2.0
//
// Scoring: Hellinger similarity between distributions, the document
// similarity-based score (DSS), the topic similarity score (TSS) and its
// sampled prior baseline, topic descriptions, exact Word Mover's Distance,
// and the average-minimum WMD across topic sets.

#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "fedtopic/corpus.hpp"
#include "fedtopic/io.hpp"
#include "fedtopic/rng.hpp"

namespace fedtopic {

// sum_k sqrt(p_k q_k), i.e. 1 - H^2(p, q); in [0, 1].
double hellinger_similarity(const std::vector<double>& p, const std::vector<double>& q);

// Mean absolute deviation of all ordered pairwise document similarities
// from the ground truth: (1/D) sum_i sum_{j != i} |w_ij^true - w_ij^inf|.
// Lower is better. Topic counts may differ between the two matrices.
double dss(const Matrix& true_thetas, const Matrix& inferred_thetas);

// sum_k max_k' similarity(true_k, inferred_k'); in [0, K], K is best.
double tss(const Matrix& true_betas, const Matrix& inferred_betas);

// Monte-Carlo expectation of tss(A, B) for independent K x V symmetric
// Dirichlet(eta) topic models: the minimum any informed model should beat.
double tss_baseline(double eta, std::uint32_t topics, std::uint32_t vocab_size,
                    std::uint32_t runs, Rng& rng);

struct TopicDescription {
    std::vector<std::pair<std::string, double>> words; // weights sum to 1
    std::uint32_t topic_id = 0;
};

// Top-n terms of one topic row by weight (ties broken by canonical term
// order), zero-weight terms excluded, weights renormalized. With
// uniform_weights the kept terms share equal weight instead.
TopicDescription topic_description(const std::vector<double>& beta_row, const Vocabulary& vocab,
                                   std::size_t n_top, std::uint32_t topic_id = 0,
                                   bool uniform_weights = false);

std::vector<TopicDescription> topic_descriptions(const Matrix& betas, const Vocabulary& vocab,
                                                 std::size_t n_top, bool uniform_weights = false);

struct EmbeddingTable {
    std::size_t dim = 0;
    std::unordered_map<std::string, std::vector<double>> vectors;

    const std::vector<double>& at(const std::string& term) const;
};

// Same layout as the per-document sidecar, keyed by term:
// header "E <int>", then lines "term v1 ... vE".
EmbeddingTable load_embedding_table(const std::string& path);
void save_embedding_table(const EmbeddingTable& table, const std::string& path);

// Exact optimum of the transportation problem min sum T_uv c(u,v) with row
// sums a, column sums b, T >= 0; c is the Euclidean distance between word
// embeddings.
double wmd(const TopicDescription& a, const TopicDescription& b, const EmbeddingTable& emb);

// Exact minimum-cost transportation for given marginals and cost matrix
// (cost[i][j] for supply i, demand j). Totals must agree.
double transport_cost(const std::vector<double>& supply, const std::vector<double>& demand,
                      const std::vector<std::vector<double>>& cost);

// sum_k min_k' wmd(node_tds[k], eval_tds[k']); zero when eval covers node.
double amwmd(const std::vector<TopicDescription>& node_tds,
             const std::vector<TopicDescription>& eval_tds, const EmbeddingTable& emb);

} // namespace fedtopic
