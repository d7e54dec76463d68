// Copyright (c) 2026 The fedtopic authors
// SPDX-License-Identifier: Apache-2.0

#include "fedtopic/fedcore.hpp"

#include <cmath>

#include "fedtopic/errors.hpp"

namespace fedtopic {

namespace {

// Copies the non-trainable (running statistic) entries of `src` into `dst`.
void copy_stat_blocks(ModelWeights& dst, const std::vector<double>& src) {
    for (const auto& b : dst.layout.blocks) {
        if (b.trainable) continue;
        for (std::size_t i = 0; i < b.size(); ++i) {
            dst.data[b.offset + i] = src[b.offset + i];
        }
    }
}

// Writes the updated running statistics from a train-mode cache into the
// stat blocks of a flat vector with the given layout.
void store_new_stats(const WeightLayout& layout, const ForwardCache& cache,
                     std::vector<double>& out) {
    auto store = [&](const char* name, const Eigen::RowVectorXd& v) {
        const auto& b = layout.block(name);
        for (std::size_t i = 0; i < b.size(); ++i) out[b.offset + i] = v(static_cast<Eigen::Index>(i));
    };
    store("mu_bn.running_mean", cache.new_mu_mean);
    store("mu_bn.running_var", cache.new_mu_var);
    store("logvar_bn.running_mean", cache.new_lv_mean);
    store("logvar_bn.running_var", cache.new_lv_var);
    store("decoder_bn.running_mean", cache.new_dec_mean);
    store("decoder_bn.running_var", cache.new_dec_var);
}

// Shared mini-batch cursor logic so the pooled oracle replays the exact
// per-client batch sequence.
struct BatchStream {
    Rng rng;
    std::vector<std::uint32_t> perm;
    std::size_t cursor = 0;

    BatchStream(std::uint64_t seed, std::size_t num_docs) : rng(seed), perm(num_docs) {
        for (std::size_t i = 0; i < num_docs; ++i) perm[i] = static_cast<std::uint32_t>(i);
    }

    std::vector<std::uint32_t> next(std::size_t batch_size) {
        if (perm.empty()) throw ConfigError("cannot train on an empty corpus");
        if (cursor == 0) rng.shuffle(perm);
        std::size_t end = std::min(cursor + batch_size, perm.size());
        std::vector<std::uint32_t> out(perm.begin() + static_cast<std::ptrdiff_t>(cursor),
                                       perm.begin() + static_cast<std::ptrdiff_t>(end));
        cursor = end == perm.size() ? 0 : end;
        return out;
    }
};

} // namespace

void FedParams::validate() const {
    if (!(lambda > 0.0)) throw ConfigError("opt.lambda must be positive");
    if (!(eps_stop > 0.0)) throw ConfigError("opt.eps_stop must be positive");
    if (patience < 1) throw ConfigError("opt.patience must be >= 1");
    if (batch_size < 1) throw ConfigError("opt.batch_size must be >= 1");
}

GradientVector aggregate(const std::vector<GradientVector>& grads) {
    if (grads.empty()) throw ProtocolError("aggregate: empty gradient list");
    const std::size_t len = grads.front().data.size();
    std::uint64_t total = 0;
    for (const auto& g : grads) {
        if (g.data.size() != len) throw ProtocolError("aggregate: gradient layout mismatch");
        total += g.n_samples;
    }
    if (total == 0) throw ProtocolError("aggregate: total sample count is zero");
    GradientVector out;
    out.data.assign(len, 0.0);
    out.n_samples = static_cast<std::uint32_t>(total);
    for (const auto& g : grads) {
        const double w = static_cast<double>(g.n_samples);
        for (std::size_t i = 0; i < len; ++i) out.data[i] += w * g.data[i];
    }
    const double denom = static_cast<double>(total);
    for (auto& v : out.data) v /= denom;
    return out;
}

ModelWeights apply_update(const ModelWeights& weights, const GradientVector& grad, double lambda) {
    if (!(lambda > 0.0)) throw ConfigError("apply_update: lambda must be positive");
    if (grad.data.size() != weights.data.size()) {
        throw ProtocolError("apply_update: gradient layout mismatch");
    }
    ModelWeights out = weights;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] -= lambda * grad.data[i];
    }
    return out;
}

double relative_change(const std::vector<double>& prev, const std::vector<double>& next) {
    if (prev.size() != next.size()) throw NumericError("relative_change: size mismatch");
    double diff2 = 0.0, base2 = 0.0;
    for (std::size_t i = 0; i < prev.size(); ++i) {
        double d = next[i] - prev[i];
        diff2 += d * d;
        base2 += prev[i] * prev[i];
    }
    return std::sqrt(diff2) / std::max(std::sqrt(base2), 1e-12);
}

bool check_stopping(const std::vector<double>& history, double eps, std::uint32_t patience,
                    std::uint32_t e, std::uint32_t max_rounds) {
    if (!(eps > 0.0)) throw ConfigError("check_stopping: eps must be positive");
    if (patience < 1) throw ConfigError("check_stopping: patience must be >= 1");
    if (e >= max_rounds) return true;
    if (history.size() < patience) return false;
    for (std::size_t i = history.size() - patience; i < history.size(); ++i) {
        if (history[i] >= eps) return false;
    }
    return true;
}

ServerState::ServerState(std::uint32_t num_clients, ModelConfig cfg_template, FedParams params)
    : num_clients_(num_clients), cfg_template_(std::move(cfg_template)), params_(params),
      registered_(num_clients, false) {
    if (num_clients == 0) throw ConfigError("server requires at least one client");
    params_.validate();
}

const Vocabulary& ServerState::global_vocab() const {
    if (!global_vocab_) throw ProtocolError("global vocabulary not established yet");
    return *global_vocab_;
}

const ModelConfig& ServerState::model_config() const {
    if (!cfg_) throw ProtocolError("model config not established yet");
    return *cfg_;
}

const ModelWeights& ServerState::weights() const {
    if (!weights_) throw ProtocolError("global weights not initialized yet");
    return *weights_;
}

std::vector<Outbound> ServerState::broadcast(const FedMessage& msg) const {
    std::vector<Outbound> out;
    out.reserve(num_clients_);
    for (std::uint32_t c = 0; c < num_clients_; ++c) out.push_back({c, msg});
    return out;
}

std::vector<Outbound> ServerState::handle(const FedMessage& msg) {
    return std::visit(
        [this](const auto& m) -> std::vector<Outbound> {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, MsgRegister>) {
                return on_register(m);
            } else if constexpr (std::is_same_v<T, MsgVocabUpload>) {
                return on_vocab(m);
            } else if constexpr (std::is_same_v<T, MsgGradientUpload>) {
                return on_gradient(m);
            } else {
                throw ProtocolError("server received a message type it never accepts");
            }
        },
        msg);
}

std::vector<Outbound> ServerState::on_register(const MsgRegister& msg) {
    if (phase_ != Phase::awaiting_vocabs) {
        throw ProtocolError("registration after training began");
    }
    if (msg.client_id >= num_clients_) {
        throw ProtocolError("unknown client id " + std::to_string(msg.client_id));
    }
    if (registered_[msg.client_id]) {
        throw ProtocolError("duplicate registration from client " + std::to_string(msg.client_id));
    }
    registered_[msg.client_id] = true;
    return {};
}

std::vector<Outbound> ServerState::on_vocab(const MsgVocabUpload& msg) {
    if (phase_ != Phase::awaiting_vocabs) {
        throw ProtocolError("vocabulary upload outside the consensus phase");
    }
    if (msg.client_id >= num_clients_) {
        throw ProtocolError("unknown client id " + std::to_string(msg.client_id));
    }
    if (vocabs_.count(msg.client_id)) {
        throw ProtocolError("duplicate vocabulary from client " + std::to_string(msg.client_id));
    }
    vocabs_.emplace(msg.client_id, msg.vocab);
    if (vocabs_.size() < num_clients_) return {};

    // Consensus complete: merge in ascending client id order, initialize the
    // global model and start round 0.
    std::vector<Vocabulary> ordered;
    ordered.reserve(num_clients_);
    for (const auto& [id, vocab] : vocabs_) ordered.push_back(vocab);
    global_vocab_ = merge_vocabularies(ordered);
    cfg_ = cfg_template_;
    cfg_->vocab_size = static_cast<std::uint32_t>(global_vocab_->size());
    weights_ = init_weights(*cfg_);
    phase_ = Phase::training;
    round_ = 0;
    return broadcast(MsgGlobalInit{*global_vocab_, *cfg_, weights_->data});
}

std::vector<Outbound> ServerState::finish() {
    phase_ = Phase::done;
    auto out = broadcast(MsgGlobalUpdate{round_, false, weights_->data});
    auto done = broadcast(MsgDone{round_});
    out.insert(out.end(), done.begin(), done.end());
    return out;
}

std::vector<Outbound> ServerState::on_gradient(const MsgGradientUpload& msg) {
    if (phase_ != Phase::training) {
        throw ProtocolError("gradient upload outside the training phase");
    }
    if (msg.client_id >= num_clients_) {
        throw ProtocolError("unknown client id " + std::to_string(msg.client_id));
    }
    if (msg.round != round_) {
        throw ProtocolError("gradient for round " + std::to_string(msg.round) +
                            " while the server is at round " + std::to_string(round_));
    }
    if (pending_.count(msg.client_id)) {
        throw ProtocolError("duplicate gradient from client " + std::to_string(msg.client_id) +
                            " in round " + std::to_string(msg.round));
    }
    if (msg.gradient.size() != weights_->data.size()) {
        throw ProtocolError("gradient layout mismatch from client " +
                            std::to_string(msg.client_id));
    }
    if (msg.n_samples == 0) {
        throw ProtocolError("gradient with zero samples from client " +
                            std::to_string(msg.client_id));
    }
    pending_.emplace(msg.client_id, GradientVector{msg.gradient, msg.n_samples});
    if (pending_.size() < num_clients_) return {};

    // Barrier reached: every client contributed to round e.
    if (round_ >= params_.max_rounds) {
        // Only reachable with max_rounds == 0: stop before any update.
        pending_.clear();
        return finish();
    }
    std::vector<GradientVector> ordered;
    ordered.reserve(num_clients_);
    for (auto& [id, grad] : pending_) ordered.push_back(std::move(grad));
    pending_.clear();
    GradientVector global_grad = aggregate(ordered);
    ModelWeights next = apply_update(*weights_, global_grad, params_.lambda);
    if (cfg_->batch_norm) {
        // Running statistics ride the gradient channel as raw values; the
        // aggregated (sample-weighted) statistics replace the stat blocks.
        copy_stat_blocks(next, global_grad.data);
    }
    history_.push_back(relative_change(weights_->data, next.data));
    weights_ = std::move(next);
    ++round_;
    if (check_stopping(history_, params_.eps_stop, params_.patience, round_, params_.max_rounds)) {
        return finish();
    }
    return broadcast(MsgGlobalUpdate{round_, true, weights_->data});
}

ClientState::ClientState(std::uint32_t client_id, BowCorpus local_corpus, FedParams params)
    : client_id_(client_id), corpus_(std::move(local_corpus)), params_(params),
      rng_(params.run_seed + client_id) {
    params_.validate();
    if (corpus_.num_docs() == 0) throw ConfigError("client corpus is empty");
}

std::vector<FedMessage> ClientState::start() const {
    return {MsgRegister{client_id_}, MsgVocabUpload{client_id_, corpus_.vocab}};
}

const ModelWeights& ClientState::weights() const {
    if (!weights_) throw ProtocolError("client has no weights before GlobalInit");
    return *weights_;
}

const ModelConfig& ClientState::model_config() const {
    if (!cfg_) throw ProtocolError("client has no model config before GlobalInit");
    return *cfg_;
}

MsgGradientUpload ClientState::compute_gradient() {
    if (cursor_ == 0) {
        perm_.resize(corpus_.num_docs());
        for (std::size_t i = 0; i < perm_.size(); ++i) perm_[i] = static_cast<std::uint32_t>(i);
        rng_.shuffle(perm_);
    }
    std::size_t end = std::min(cursor_ + params_.batch_size, perm_.size());
    std::vector<std::uint32_t> indices(perm_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                       perm_.begin() + static_cast<std::ptrdiff_t>(end));
    cursor_ = end == perm_.size() ? 0 : end;

    MiniBatch batch = make_minibatch(corpus_, indices, *cfg_);
    ForwardNoise noise = ForwardNoise::draw(rng_, batch.size(), *cfg_, true);
    ForwardCache cache = forward(*weights_, batch, *cfg_, noise, true);
    GradientVector grad = backward(*weights_, batch, *cfg_, cache);
    losses_.push_back(cache.loss);
    if (cfg_->batch_norm) {
        store_new_stats(weights_->layout, cache, grad.data);
    }
    return MsgGradientUpload{client_id_, static_cast<std::uint32_t>(round_), grad.n_samples,
                             std::move(grad.data)};
}

std::vector<FedMessage> ClientState::handle(const FedMessage& msg) {
    if (const auto* init = std::get_if<MsgGlobalInit>(&msg)) {
        if (round_ >= 0) throw ProtocolError("duplicate GlobalInit");
        corpus_ = remap_corpus(corpus_, init->vocab);
        cfg_ = init->config;
        ModelWeights w;
        w.layout = WeightLayout::from_config(*cfg_);
        if (init->weights.size() != w.layout.total_size) {
            throw ProtocolError("GlobalInit weight array does not match the model layout");
        }
        w.data = init->weights;
        weights_ = std::move(w);
        round_ = 0;
        return {compute_gradient()};
    }
    if (const auto* update = std::get_if<MsgGlobalUpdate>(&msg)) {
        if (round_ < 0) throw ProtocolError("GlobalUpdate before GlobalInit");
        if (finalized_) throw ProtocolError("GlobalUpdate after finalization");
        if (update->round != static_cast<std::uint32_t>(round_) + 1) {
            throw ProtocolError("GlobalUpdate for round " + std::to_string(update->round) +
                                " while the client is at round " + std::to_string(round_));
        }
        if (update->weights.size() != weights_->data.size()) {
            throw ProtocolError("GlobalUpdate weight array does not match the model layout");
        }
        weights_->data = update->weights;
        round_ = update->round;
        if (!update->continue_flag) {
            finalized_ = true;
            return {};
        }
        return {compute_gradient()};
    }
    if (const auto* done = std::get_if<MsgDone>(&msg)) {
        if (round_ < 0) throw ProtocolError("Done before GlobalInit");
        if (!finalized_) {
            throw ProtocolError("Done at round " + std::to_string(done->round) +
                                " before the final GlobalUpdate");
        }
        terminated_ = true;
        return {};
    }
    throw ProtocolError("client received a message type it never accepts");
}

ModelWeights run_centralized(const std::vector<BowCorpus>& corpora, ModelConfig cfg_template,
                             const FedParams& params, TrainLog* log) {
    if (corpora.empty()) throw ConfigError("run_centralized: no corpora");
    params.validate();

    std::vector<Vocabulary> vocabs;
    vocabs.reserve(corpora.size());
    for (const auto& c : corpora) vocabs.push_back(c.vocab);
    Vocabulary global_vocab = merge_vocabularies(vocabs);

    std::vector<BowCorpus> remapped;
    remapped.reserve(corpora.size());
    for (const auto& c : corpora) remapped.push_back(remap_corpus(c, global_vocab));

    ModelConfig cfg = std::move(cfg_template);
    cfg.vocab_size = static_cast<std::uint32_t>(global_vocab.size());
    ModelWeights weights = init_weights(cfg);

    std::vector<BatchStream> streams;
    streams.reserve(corpora.size());
    for (std::size_t l = 0; l < corpora.size(); ++l) {
        streams.emplace_back(params.run_seed + l, remapped[l].num_docs());
    }

    std::vector<double> history;
    for (std::uint32_t e = 0; e < params.max_rounds; ++e) {
        // Pooled batch: per-client batches and noise, concatenated in client
        // order so the round is bit-comparable with the federated path.
        std::vector<MiniBatch> parts;
        std::vector<ForwardNoise> noises;
        Eigen::Index total = 0;
        for (std::size_t l = 0; l < remapped.size(); ++l) {
            auto indices = streams[l].next(params.batch_size);
            parts.push_back(make_minibatch(remapped[l], indices, cfg));
            noises.push_back(ForwardNoise::draw(streams[l].rng, parts.back().size(), cfg, true));
            total += parts.back().size();
        }
        MiniBatch pooled;
        pooled.bow.resize(total, parts.front().bow.cols());
        Eigen::Index at = 0;
        for (const auto& p : parts) {
            pooled.bow.middleRows(at, p.bow.rows()) = p.bow;
            at += p.bow.rows();
        }
        if (cfg.variant == ModelVariant::combined) {
            RowMatrixXd emb(total, cfg.embed_dim);
            at = 0;
            for (const auto& p : parts) {
                emb.middleRows(at, p.embeds->rows()) = *p.embeds;
                at += p.embeds->rows();
            }
            pooled.embeds = std::move(emb);
        }
        ForwardNoise noise = ForwardNoise::stack(noises);

        ForwardCache cache = forward(weights, pooled, cfg, noise, true);
        GradientVector grad = backward(weights, pooled, cfg, cache);
        ModelWeights next = apply_update(weights, grad, params.lambda);
        if (cfg.batch_norm) {
            store_new_stats(next.layout, cache, next.data);
        }
        history.push_back(relative_change(weights.data, next.data));
        weights = std::move(next);
        if (log) {
            log->losses.push_back(cache.loss);
            log->rel_changes.push_back(history.back());
        }
        if (check_stopping(history, params.eps_stop, params.patience, e + 1, params.max_rounds)) {
            break;
        }
    }
    return weights;
}

ModelWeights run_noncollab(const BowCorpus& corpus, ModelConfig cfg_template,
                           const FedParams& params, TrainLog* log) {
    params.validate();
    if (corpus.num_docs() == 0) throw ConfigError("run_noncollab: empty corpus");

    ModelConfig cfg = std::move(cfg_template);
    cfg.vocab_size = static_cast<std::uint32_t>(corpus.vocab.size());

    // 75:25 split for early stopping.
    Rng split_rng(params.run_seed);
    std::vector<std::uint32_t> order(corpus.num_docs());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::uint32_t>(i);
    split_rng.shuffle(order);
    std::size_t valid_count = corpus.num_docs() / 4;
    std::vector<std::uint32_t> valid_idx(order.begin(),
                                         order.begin() + static_cast<std::ptrdiff_t>(valid_count));
    std::vector<std::uint32_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(valid_count),
                                         order.end());
    BowCorpus train = subset_corpus(corpus, train_idx);
    std::optional<MiniBatch> valid_batch;
    if (valid_count > 0) {
        valid_batch = make_minibatch(subset_corpus(corpus, valid_idx),
                                     [&] {
                                         std::vector<std::uint32_t> all(valid_count);
                                         for (std::size_t i = 0; i < valid_count; ++i) {
                                             all[i] = static_cast<std::uint32_t>(i);
                                         }
                                         return all;
                                     }(),
                                     cfg);
    }

    ModelWeights weights = init_weights(cfg);
    ModelWeights best = weights;
    double best_valid = std::numeric_limits<double>::infinity();
    std::uint32_t bad_epochs = 0;
    BatchStream stream(params.run_seed, train.num_docs());
    ForwardNoise no_noise;

    for (std::uint32_t e = 0; e < params.max_rounds; ++e) {
        auto indices = stream.next(params.batch_size);
        MiniBatch batch = make_minibatch(train, indices, cfg);
        ForwardNoise noise = ForwardNoise::draw(stream.rng, batch.size(), cfg, true);
        ForwardCache cache = forward(weights, batch, cfg, noise, true);
        GradientVector grad = backward(weights, batch, cfg, cache);
        ModelWeights next = apply_update(weights, grad, params.lambda);
        if (cfg.batch_norm) {
            store_new_stats(next.layout, cache, next.data);
        }
        if (log) {
            log->losses.push_back(cache.loss);
            log->rel_changes.push_back(relative_change(weights.data, next.data));
        }
        weights = std::move(next);

        bool epoch_end = stream.cursor == 0;
        if (epoch_end && valid_batch) {
            double valid_loss = forward(weights, *valid_batch, cfg, no_noise, false).loss;
            if (log) log->valid_losses.push_back(valid_loss);
            if (valid_loss < best_valid) {
                best_valid = valid_loss;
                best = weights;
                bad_epochs = 0;
            } else if (++bad_epochs >= params.patience) {
                return best;
            }
        }
    }
    return valid_batch && best_valid < std::numeric_limits<double>::infinity() ? best : weights;
}

} // namespace fedtopic
