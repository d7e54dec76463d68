// Copyright (c) 2026 The fedtopic authors
// SPDX-License-Identifier: Apache-2.0

#include "fedtopic/synthgen.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "fedtopic/errors.hpp"

namespace fedtopic {

void SynthConfig::validate() const {
    if (nodes == 0) throw ConfigError("synth.L must be positive");
    if (topics == 0) throw ConfigError("synth.K must be positive");
    if (vocab_size == 0) throw ConfigError("synth.V must be positive");
    if (shared_topics > topics) throw ConfigError("synth.K_shared must not exceed synth.K");
    if ((topics - shared_topics) % nodes != 0) {
        throw ConfigError("synth: (K - K_shared) must be divisible by L");
    }
    if (len_min > len_max) throw ConfigError("synth: len_min must not exceed len_max");
    if (len_min == 0) throw ConfigError("synth: len_min must be positive");
    if (resolved_alpha() <= 0.0) throw ConfigError("synth.alpha must be positive");
    if (eta <= 0.0) throw ConfigError("synth.eta must be positive");
}

Vocabulary synthetic_vocabulary(std::uint32_t vocab_size) {
    int width = 1;
    for (std::uint32_t v = vocab_size > 0 ? vocab_size - 1 : 0; v >= 10; v /= 10) ++width;
    std::vector<std::pair<std::string, double>> pairs;
    pairs.reserve(vocab_size);
    char buf[32];
    for (std::uint32_t i = 0; i < vocab_size; ++i) {
        std::snprintf(buf, sizeof(buf), "term%0*u", width, i);
        pairs.emplace_back(buf, 0.0);
    }
    return Vocabulary::from_pairs(std::move(pairs));
}

TrueModel sample_true_model(const SynthConfig& cfg, Rng& rng) {
    cfg.validate();
    TrueModel model;
    model.alpha = cfg.resolved_alpha();
    model.eta = cfg.eta;
    model.beta.rows = cfg.topics;
    model.beta.cols = cfg.vocab_size;
    model.beta.data.resize(static_cast<std::size_t>(cfg.topics) * cfg.vocab_size);
    for (std::uint32_t k = 0; k < cfg.topics; ++k) {
        auto row = rng.dirichlet_symmetric(cfg.eta, cfg.vocab_size);
        std::copy(row.begin(), row.end(), model.beta.data.begin() + static_cast<std::size_t>(k) * cfg.vocab_size);
    }
    std::uint32_t priv = cfg.private_per_node();
    model.node_topics.resize(cfg.nodes);
    for (std::uint32_t node = 0; node < cfg.nodes; ++node) {
        auto& topics = model.node_topics[node];
        topics.reserve(cfg.topics_per_node());
        for (std::uint32_t k = 0; k < cfg.shared_topics; ++k) topics.push_back(k);
        std::uint32_t start = cfg.shared_topics + node * priv;
        for (std::uint32_t k = 0; k < priv; ++k) topics.push_back(start + k);
    }
    return model;
}

std::pair<BowCorpus, GroundTruth> generate_node_corpus(const TrueModel& model,
                                                       std::uint32_t node,
                                                       std::uint32_t num_docs,
                                                       const SynthConfig& cfg, Rng& rng) {
    if (node >= cfg.nodes) throw ConfigError("node index out of range");
    const auto& topics = model.node_topics[node];
    const std::size_t K = model.beta.rows;
    const std::size_t V = model.beta.cols;

    // Per-topic cumulative word distributions, computed once.
    std::vector<std::vector<double>> word_cdfs(topics.size());
    for (std::size_t t = 0; t < topics.size(); ++t) {
        const double* row = model.beta.data.data() + static_cast<std::size_t>(topics[t]) * V;
        word_cdfs[t] = cumulative_sums(std::vector<double>(row, row + V));
    }

    BowCorpus corpus;
    corpus.vocab = synthetic_vocabulary(cfg.vocab_size);
    corpus.docs.reserve(num_docs);

    GroundTruth truth;
    truth.thetas.rows = num_docs;
    truth.thetas.cols = K;
    truth.thetas.data.assign(static_cast<std::size_t>(num_docs) * K, 0.0);
    truth.node_of_doc.assign(num_docs, node);

    for (std::uint32_t d = 0; d < num_docs; ++d) {
        auto theta = rng.dirichlet_symmetric(model.alpha, topics.size());
        for (std::size_t t = 0; t < topics.size(); ++t) {
            truth.thetas.at(d, topics[t]) = theta[t];
        }
        auto theta_cdf = cumulative_sums(theta);
        auto length = static_cast<std::uint32_t>(
            rng.uniform_int(static_cast<std::int64_t>(cfg.len_min), static_cast<std::int64_t>(cfg.len_max)));
        std::map<std::uint32_t, std::uint32_t> counts;
        for (std::uint32_t n = 0; n < length; ++n) {
            std::size_t z = rng.categorical(theta_cdf);
            std::size_t w = rng.categorical(word_cdfs[z]);
            ++counts[static_cast<std::uint32_t>(w)];
        }
        BowDocument doc;
        doc.doc_id = std::to_string(d);
        doc.entries.assign(counts.begin(), counts.end());
        corpus.docs.push_back(std::move(doc));
    }
    return {std::move(corpus), std::move(truth)};
}

SynthDataset generate_dataset(const SynthConfig& cfg) {
    cfg.validate();
    SynthDataset ds;
    Rng model_rng(cfg.seed);
    ds.model = sample_true_model(cfg, model_rng);

    const std::size_t K = cfg.topics;
    ds.truth.thetas.rows = 0;
    ds.truth.thetas.cols = K;
    for (std::uint32_t node = 0; node < cfg.nodes; ++node) {
        // Independent per-node stream; offset by one so node 0 does not share
        // the model stream.
        Rng node_rng(cfg.seed + 1 + node);
        auto [train, train_truth] = generate_node_corpus(ds.model, node, cfg.docs_train, cfg, node_rng);
        auto [valid, valid_truth] = generate_node_corpus(ds.model, node, cfg.docs_valid, cfg, node_rng);
        ds.train.push_back(std::move(train));
        ds.valid.push_back(std::move(valid));
        ds.truth.thetas.rows += valid_truth.thetas.rows;
        ds.truth.thetas.data.insert(ds.truth.thetas.data.end(), valid_truth.thetas.data.begin(),
                                    valid_truth.thetas.data.end());
        ds.truth.node_of_doc.insert(ds.truth.node_of_doc.end(), valid_truth.node_of_doc.begin(),
                                    valid_truth.node_of_doc.end());
    }
    return ds;
}

void save_dataset(const SynthDataset& ds, const SynthConfig& cfg, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    fs::create_directories(dir + "/truth");

    {
        std::ofstream manifest(dir + "/manifest.cfg");
        if (!manifest) throw ConfigError("cannot write manifest in " + dir);
        manifest.precision(17);
        manifest << "synth.L=" << cfg.nodes << '\n'
                 << "synth.K=" << cfg.topics << '\n'
                 << "synth.K_shared=" << cfg.shared_topics << '\n'
                 << "synth.V=" << cfg.vocab_size << '\n'
                 << "synth.docs_train=" << cfg.docs_train << '\n'
                 << "synth.docs_valid=" << cfg.docs_valid << '\n'
                 << "synth.len_min=" << cfg.len_min << '\n'
                 << "synth.len_max=" << cfg.len_max << '\n'
                 << "synth.alpha=" << cfg.resolved_alpha() << '\n'
                 << "synth.eta=" << cfg.eta << '\n'
                 << "synth.seed=" << cfg.seed << '\n';
    }

    for (std::uint32_t node = 0; node < cfg.nodes; ++node) {
        std::string node_dir = dir + "/node" + std::to_string(node);
        fs::create_directories(node_dir);
        save_corpus(ds.train[node], node_dir + "/train.txt");
        save_corpus(ds.valid[node], node_dir + "/valid.txt");
    }

    save_matrix(ds.model.beta, dir + "/truth/beta.bin");
    save_matrix(ds.truth.thetas, dir + "/truth/thetas.bin");
    save_vocabulary(ds.train.front().vocab, dir + "/truth/vocab.tsv");

    std::ofstream topics(dir + "/truth/node_topics.txt");
    for (std::uint32_t node = 0; node < cfg.nodes; ++node) {
        topics << node << ':';
        for (auto k : ds.model.node_topics[node]) topics << ' ' << k;
        topics << '\n';
    }
}

} // namespace fedtopic
