// Copyright (c) 2026 The fedtopic authors
// SPDX-License-Identifier: Apache-2.0
//
// Multi-node synthetic corpora drawn from the LDA generative model, with
// K_shared topics common to all nodes and (K - K_shared) / L private topics
// per node. Ground truth is kept for objective scoring.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedtopic/corpus.hpp"
#include "fedtopic/io.hpp"
#include "fedtopic/rng.hpp"

namespace fedtopic {

struct SynthConfig {
    std::uint32_t nodes = 5;          // L
    std::uint32_t topics = 50;        // K
    std::uint32_t shared_topics = 10; // K'
    std::uint32_t vocab_size = 5000;  // V
    std::uint32_t docs_train = 10000;
    std::uint32_t docs_valid = 1000;
    std::uint32_t len_min = 150;
    std::uint32_t len_max = 250;
    double alpha = 0.0; // document Dirichlet; <= 0 means the 50/K default
    double eta = 0.01;  // topic Dirichlet
    std::uint64_t seed = 0;

    double resolved_alpha() const {
        return alpha > 0.0 ? alpha : 50.0 / static_cast<double>(topics);
    }
    std::uint32_t private_per_node() const { return (topics - shared_topics) / nodes; }
    std::uint32_t topics_per_node() const { return shared_topics + private_per_node(); }

    void validate() const;
};

struct TrueModel {
    Matrix beta;                                        // [K x V], rows sum to 1
    std::vector<std::vector<std::uint32_t>> node_topics; // shared block + private block
    double alpha = 0.0;
    double eta = 0.0;
};

struct GroundTruth {
    Matrix thetas;                      // [D x K], zero outside the node's topics
    std::vector<std::uint32_t> node_of_doc;
};

struct SynthDataset {
    std::vector<BowCorpus> train; // one per node
    std::vector<BowCorpus> valid; // one per node
    TrueModel model;
    GroundTruth truth; // covers the validation documents, in node order
};

// The canonical synthetic vocabulary: zero-padded "term0000".."termNNNN"
// so byte-lexicographic order matches numeric order.
Vocabulary synthetic_vocabulary(std::uint32_t vocab_size);

// Draws K topic rows i.i.d. from a symmetric Dirichlet(eta) and assigns the
// first K' topics to every node plus one contiguous private block per node.
TrueModel sample_true_model(const SynthConfig& cfg, Rng& rng);

// Documents for one node: theta ~ Dirichlet(alpha) over the node's topic
// set, length ~ U[len_min, len_max], tokens via topic then word draws. The
// true theta is recorded embedded in the full K-simplex.
std::pair<BowCorpus, GroundTruth> generate_node_corpus(const TrueModel& model,
                                                       std::uint32_t node,
                                                       std::uint32_t num_docs,
                                                       const SynthConfig& cfg, Rng& rng);

// Full dataset, deterministic given cfg.seed. Node streams are seeded
// independently so per-node generation could run in parallel.
SynthDataset generate_dataset(const SynthConfig& cfg);

// Directory layout: manifest.cfg, node<l>/{train.txt,valid.txt} (+sidecars),
// truth/{beta.bin,thetas.bin,vocab.tsv,node_topics.txt}.
void save_dataset(const SynthDataset& dataset, const SynthConfig& cfg, const std::string& dir);

} // namespace fedtopic
