// Copyright (c) 2026 The fedtopic authors
// SPDX-License-Identifier: Apache-2.0
//
// The neural topic model core: an encoder mapping bag-of-words input (plus
// an optional contextual embedding) to a logistic-normal posterior, a
// product-of-experts style decoder, the closed-form KL against a
// Laplace-approximated Dirichlet prior, and exact reverse-mode gradients.
// Everything is f64 and deterministic given explicit noise.

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedtopic/corpus.hpp"
#include "fedtopic/io.hpp"
#include "fedtopic/rng.hpp"

namespace fedtopic {

using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class ModelVariant : std::uint8_t { prodlda = 0, combined = 1 };

struct ModelConfig {
    std::uint32_t topics = 10;    // K
    std::uint32_t vocab_size = 0; // V; set after vocabulary consensus
    ModelVariant variant = ModelVariant::prodlda;
    std::uint32_t embed_dim = 0;  // E, combined variant only
    std::vector<std::uint32_t> hidden_sizes{100, 100};
    double dropout_rate = 0.2;
    double prior_alpha = 0.0;     // <= 0 means the 1/K default
    bool learn_priors = false;
    bool batch_norm = true;
    std::uint64_t seed = 0;

    double resolved_prior_alpha() const {
        return prior_alpha > 0.0 ? prior_alpha : 1.0 / static_cast<double>(topics);
    }
    std::uint32_t input_dim() const {
        return vocab_size + (variant == ModelVariant::combined ? embed_dim : 0);
    }
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

struct ParamBlock {
    std::string name;
    std::size_t offset = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    bool trainable = true;

    std::size_t size() const { return rows * cols; }
};

// Ordered descriptor of the flat parameter array. Identical for any two
// weights built from the same ModelConfig.
struct WeightLayout {
    std::vector<ParamBlock> blocks;
    std::size_t total_size = 0;

    static WeightLayout from_config(const ModelConfig& cfg);
    const ParamBlock& block(const std::string& name) const;
    bool has_block(const std::string& name) const;

    bool operator==(const WeightLayout&) const = default;
};

struct ModelWeights {
    WeightLayout layout;
    std::vector<double> data;

    Eigen::Map<RowMatrixXd> view(const ParamBlock& b) {
        return {data.data() + b.offset, static_cast<Eigen::Index>(b.rows),
                static_cast<Eigen::Index>(b.cols)};
    }
    Eigen::Map<const RowMatrixXd> view(const ParamBlock& b) const {
        return {data.data() + b.offset, static_cast<Eigen::Index>(b.rows),
                static_cast<Eigen::Index>(b.cols)};
    }
    Eigen::Map<RowMatrixXd> view(const std::string& name) { return view(layout.block(name)); }
    Eigen::Map<const RowMatrixXd> view(const std::string& name) const {
        return view(layout.block(name));
    }
};

// Mean-over-batch gradient in the weight layout, plus the mini-batch size
// that produced it (the aggregation weight).
struct GradientVector {
    std::vector<double> data;
    std::uint32_t n_samples = 0;
};

struct MiniBatch {
    RowMatrixXd bow;                    // [n x V] counts
    std::optional<RowMatrixXd> embeds;  // [n x E], combined variant only

    Eigen::Index size() const { return bow.rows(); }
};

// Explicit per-call stochasticity so forward passes can be replayed exactly
// (finite differences) or aligned across the federated and pooled paths.
struct ForwardNoise {
    RowMatrixXd eps;          // [n x K] standard normal, train mode
    RowMatrixXd dropout_keep; // [n x K] 0/1 keep mask, train mode with dropout

    // Draws eps then the keep mask, row-major, from `rng`.
    static ForwardNoise draw(Rng& rng, Eigen::Index n, const ModelConfig& cfg, bool train_mode);

    // Vertical concatenation preserving per-segment draw order.
    static ForwardNoise stack(const std::vector<ForwardNoise>& parts);
};

// Intermediate state of one forward pass, sufficient for backward.
struct ForwardCache {
    bool train_mode = false;
    RowMatrixXd input;                     // [n x input_dim]
    std::vector<RowMatrixXd> activations;  // post-softplus per hidden layer
    std::vector<RowMatrixXd> preacts;      // pre-softplus per hidden layer
    RowMatrixXd mu_raw, mu, lv_raw, logvar, sigma, z, z_dropped, theta;
    RowMatrixXd logits_raw, logits, log_softmax;
    RowMatrixXd mu_xhat, lv_xhat, dec_xhat;            // batch-norm caches
    Eigen::RowVectorXd mu_inv_std, lv_inv_std, dec_inv_std;
    Eigen::RowVectorXd prior_mu, prior_logvar;         // effective prior moments
    ForwardNoise noise;
    // Updated running statistics (train mode with batch_norm); carried by
    // the client into the shared-state channel.
    Eigen::RowVectorXd new_mu_mean, new_mu_var, new_lv_mean, new_lv_var, new_dec_mean, new_dec_var;
    double loss = 0.0;
};

// Laplace-approximation moments of the symmetric Dirichlet(prior_alpha)
// prior in softmax space: (mu0, log sigma0^2).
std::pair<Eigen::RowVectorXd, Eigen::RowVectorXd> dirichlet_prior_moments(const ModelConfig& cfg);

// Closed-form KL between diagonal Gaussians N(mu, e^logvar) and
// N(mu0, e^logvar0), per row.
Eigen::VectorXd kl_diag_gaussian(const RowMatrixXd& mu, const RowMatrixXd& logvar,
                                 const Eigen::RowVectorXd& mu0,
                                 const Eigen::RowVectorXd& logvar0);

// Deterministic fan-in-scaled uniform initialization; shifts and running
// means start at zero, running variances at one.
ModelWeights init_weights(const ModelConfig& cfg);

// Mean ELBO loss over the batch (reconstruction + KL). Throws NumericError
// naming the nearest parameter block when the loss is non-finite.
ForwardCache forward(const ModelWeights& weights, const MiniBatch& batch, const ModelConfig& cfg,
                     const ForwardNoise& noise, bool train_mode);

// Exact gradient of the mean-over-batch loss; requires a train-mode cache.
GradientVector backward(const ModelWeights& weights, const MiniBatch& batch,
                        const ModelConfig& cfg, const ForwardCache& cache);

// Central-difference gradient estimate with the same replayed noise.
GradientVector fd_gradient(const ModelWeights& weights, const MiniBatch& batch,
                           const ModelConfig& cfg, const ForwardNoise& noise, double h);

// Deterministic document-topic inference: softmax(mu(x)), no sampling, no
// dropout, normalization on running statistics.
Matrix infer_theta(const ModelWeights& weights, const BowCorpus& corpus, const ModelConfig& cfg);

// Row-wise softmax of the decoder matrix: the topic-word distributions.
Matrix get_beta(const ModelWeights& weights, const ModelConfig& cfg);

// Dense slice of a corpus; validates dimensions against the config.
MiniBatch make_minibatch(const BowCorpus& corpus, const std::vector<std::uint32_t>& doc_indices,
                         const ModelConfig& cfg);

// Model checkpoint: magic, version, config, layout, f64 data.
void save_checkpoint(const ModelWeights& weights, const ModelConfig& cfg, const std::string& path);
std::pair<ModelWeights, ModelConfig> load_checkpoint(const std::string& path);

// Canonical config codec shared with the wire protocol.
class ByteWriter;
class ByteReader;
void wire_write_model_config(ByteWriter& w, const ModelConfig& cfg);
ModelConfig wire_read_model_config(ByteReader& r);

} // namespace fedtopic
