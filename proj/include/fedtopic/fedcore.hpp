// Copyright (c) 2026 The fedtopic authors
// SPDX-License-Identifier: Apache-2.0
//
// The federation protocol as pure state machines: vocabulary consensus,
// synchronized per-mini-batch gradient rounds, sample-weighted aggregation,
// the global gradient step, and the stopping criterion. All transport
// concerns live elsewhere; these types only map messages to messages.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <variant>
#include <vector>

#include "fedtopic/corpus.hpp"
#include "fedtopic/model.hpp"

namespace fedtopic {

struct MsgRegister {
    std::uint32_t client_id = 0;
    bool operator==(const MsgRegister&) const = default;
};

struct MsgVocabUpload {
    std::uint32_t client_id = 0;
    Vocabulary vocab;
    bool operator==(const MsgVocabUpload&) const = default;
};

struct MsgGlobalInit {
    Vocabulary vocab;
    ModelConfig config;
    std::vector<double> weights;
    bool operator==(const MsgGlobalInit&) const = default;
};

struct MsgGradientUpload {
    std::uint32_t client_id = 0;
    std::uint32_t round = 0;
    std::uint32_t n_samples = 0;
    std::vector<double> gradient;
    bool operator==(const MsgGradientUpload&) const = default;
};

struct MsgGlobalUpdate {
    std::uint32_t round = 0;
    bool continue_flag = true;
    std::vector<double> weights;
    bool operator==(const MsgGlobalUpdate&) const = default;
};

struct MsgDone {
    std::uint32_t round = 0;
    bool operator==(const MsgDone&) const = default;
};

using FedMessage = std::variant<MsgRegister, MsgVocabUpload, MsgGlobalInit, MsgGradientUpload,
                                MsgGlobalUpdate, MsgDone>;

struct Outbound {
    std::uint32_t dest = 0;
    FedMessage msg;
};

struct FedParams {
    double lambda = 0.1;          // gradient step size
    std::uint32_t max_rounds = 100; // I
    double eps_stop = 1e-5;
    std::uint32_t patience = 3;
    std::uint32_t batch_size = 64;
    std::uint64_t run_seed = 0;

    void validate() const;
};

// Sample-weighted average of per-client mean gradients, summed in the order
// given (callers pass ascending client id). The result's n_samples is the
// pooled count.
GradientVector aggregate(const std::vector<GradientVector>& grads);

// W' = W - lambda * G, elementwise over the full layout.
ModelWeights apply_update(const ModelWeights& weights, const GradientVector& grad, double lambda);

// ||next - prev||_2 / max(||prev||_2, 1e-12).
double relative_change(const std::vector<double>& prev, const std::vector<double>& next);

// Stop once e >= max_rounds or the last `patience` relative weight changes
// all fall below eps.
bool check_stopping(const std::vector<double>& history, double eps, std::uint32_t patience,
                    std::uint32_t e, std::uint32_t max_rounds);

// Server side of the protocol. Messages are handled strictly sequentially;
// the machine never blocks, it only returns what must be sent.
class ServerState {
public:
    enum class Phase { awaiting_vocabs, training, done };

    ServerState(std::uint32_t num_clients, ModelConfig cfg_template, FedParams params);

    std::vector<Outbound> handle(const FedMessage& msg);

    Phase phase() const { return phase_; }
    std::uint32_t round() const { return round_; }
    std::uint32_t num_clients() const { return num_clients_; }
    const std::vector<double>& change_history() const { return history_; }
    const Vocabulary& global_vocab() const;
    const ModelConfig& model_config() const;
    const ModelWeights& weights() const;

private:
    std::vector<Outbound> on_register(const MsgRegister& msg);
    std::vector<Outbound> on_vocab(const MsgVocabUpload& msg);
    std::vector<Outbound> on_gradient(const MsgGradientUpload& msg);
    std::vector<Outbound> broadcast(const FedMessage& msg) const;
    std::vector<Outbound> finish();

    std::uint32_t num_clients_;
    ModelConfig cfg_template_;
    FedParams params_;
    Phase phase_ = Phase::awaiting_vocabs;
    std::vector<bool> registered_;
    std::map<std::uint32_t, Vocabulary> vocabs_;
    std::optional<Vocabulary> global_vocab_;
    std::optional<ModelConfig> cfg_;
    std::optional<ModelWeights> weights_;
    std::uint32_t round_ = 0;
    std::map<std::uint32_t, GradientVector> pending_;
    std::vector<double> history_;
};

// Client side. Construction takes the local corpus; start() emits the
// registration and vocabulary upload, handle() drives the training loop.
class ClientState {
public:
    ClientState(std::uint32_t client_id, BowCorpus local_corpus, FedParams params);

    std::vector<FedMessage> start() const;
    std::vector<FedMessage> handle(const FedMessage& msg);

    bool finalized() const { return finalized_; }
    bool terminated() const { return terminated_; }
    std::uint32_t round() const { return round_; }
    const ModelWeights& weights() const;
    const ModelConfig& model_config() const;
    const std::vector<double>& loss_history() const { return losses_; }

private:
    MsgGradientUpload compute_gradient();

    std::uint32_t client_id_;
    BowCorpus corpus_;
    FedParams params_;
    std::optional<ModelConfig> cfg_;
    std::optional<ModelWeights> weights_;
    Rng rng_;
    std::vector<std::uint32_t> perm_;
    std::size_t cursor_ = 0;
    std::int64_t round_ = -1; // -1 before GlobalInit
    bool finalized_ = false;
    bool terminated_ = false;
    std::vector<double> losses_;
};

struct TrainLog {
    std::vector<double> losses;       // per round (pooled) or per epoch
    std::vector<double> rel_changes;  // per round
    std::vector<double> valid_losses; // non-collaborative early stopping
};

// Scenario 2: one model over the concatenated corpora, trained with pooled
// mini-batches that replay the per-client batch and noise streams exactly.
// This is the equivalence oracle for the federated path.
ModelWeights run_centralized(const std::vector<BowCorpus>& corpora, ModelConfig cfg_template,
                             const FedParams& params, TrainLog* log = nullptr);

// Scenario 1: local training on one node's corpus with a 75:25
// train/validation split and early stopping on the validation loss.
ModelWeights run_noncollab(const BowCorpus& corpus, ModelConfig cfg_template,
                           const FedParams& params, TrainLog* log = nullptr);

} // namespace fedtopic
