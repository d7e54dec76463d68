// Copyright (c) 2026 The fedtopic authors
// SPDX-License-Identifier: Apache-2.0

#include "fedtopic/model.hpp"

#include <cmath>
#include <fstream>

#include "fedtopic/errors.hpp"
#include "fedtopic/wire.hpp"

namespace fedtopic {

namespace {

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;
constexpr char kCheckpointMagic[4] = {'F', 'T', 'M', 'C'};
constexpr std::uint32_t kCheckpointVersion = 1;

double softplus(double a) {
    if (a > 30.0) return a;
    if (a < -30.0) return std::exp(a);
    return std::log1p(std::exp(a));
}

double sigmoid(double a) {
    if (a >= 0.0) return 1.0 / (1.0 + std::exp(-a));
    double e = std::exp(a);
    return e / (1.0 + e);
}

RowMatrixXd softmax_rows(const RowMatrixXd& x) {
    RowMatrixXd y(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        double m = x.row(i).maxCoeff();
        y.row(i) = (x.row(i).array() - m).exp();
        y.row(i) /= y.row(i).sum();
    }
    return y;
}

RowMatrixXd log_softmax_rows(const RowMatrixXd& x) {
    RowMatrixXd y(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        double m = x.row(i).maxCoeff();
        double lse = m + std::log((x.row(i).array() - m).exp().sum());
        y.row(i) = x.row(i).array() - lse;
    }
    return y;
}

struct BnForward {
    RowMatrixXd y;
    RowMatrixXd xhat;
    Eigen::RowVectorXd inv_std;
    Eigen::RowVectorXd new_mean;
    Eigen::RowVectorXd new_var;
};

BnForward bn_train(const RowMatrixXd& x, const Eigen::RowVectorXd& shift,
                   const Eigen::RowVectorXd& run_mean, const Eigen::RowVectorXd& run_var) {
    const double n = static_cast<double>(x.rows());
    BnForward out;
    Eigen::RowVectorXd mean = x.colwise().mean();
    Eigen::RowVectorXd var =
        ((x.rowwise() - mean).array().square().colwise().sum() / n).matrix();
    out.inv_std = (var.array() + kBnEps).sqrt().inverse().matrix();
    out.xhat = (x.rowwise() - mean) * out.inv_std.asDiagonal();
    out.y = out.xhat.rowwise() + shift;
    out.new_mean = (1.0 - kBnMomentum) * run_mean + kBnMomentum * mean;
    out.new_var = (1.0 - kBnMomentum) * run_var + kBnMomentum * var;
    return out;
}

RowMatrixXd bn_eval(const RowMatrixXd& x, const Eigen::RowVectorXd& shift,
                    const Eigen::RowVectorXd& run_mean, const Eigen::RowVectorXd& run_var) {
    Eigen::RowVectorXd inv_std = (run_var.array() + kBnEps).sqrt().inverse().matrix();
    RowMatrixXd y = (x.rowwise() - run_mean) * inv_std.asDiagonal();
    return y.rowwise() + shift;
}

// Gradient through train-mode batch normalization (unit scale).
RowMatrixXd bn_backward(const RowMatrixXd& dy, const RowMatrixXd& xhat,
                        const Eigen::RowVectorXd& inv_std) {
    Eigen::RowVectorXd mean_dy = dy.colwise().mean();
    Eigen::RowVectorXd mean_dy_xhat = (dy.array() * xhat.array()).colwise().mean();
    RowMatrixXd dx = (dy.rowwise() - mean_dy) - xhat * mean_dy_xhat.asDiagonal();
    return dx * inv_std.asDiagonal();
}

Eigen::RowVectorXd row_view(const ModelWeights& w, const std::string& name) {
    auto v = w.view(name);
    return Eigen::RowVectorXd(v.row(0));
}

// Best-effort blame for a non-finite loss: first stage holding a non-finite
// value, mapped to the parameter block feeding it.
std::string blame_block(const ForwardCache& c, const ModelConfig& cfg) {
    if (!c.input.allFinite()) return "input";
    for (std::size_t l = 0; l < c.preacts.size(); ++l) {
        if (!c.preacts[l].allFinite() || !c.activations[l].allFinite()) {
            return "enc" + std::to_string(l) + ".weight";
        }
    }
    if (!c.mu_raw.allFinite() || !c.mu.allFinite()) return "mu_head.weight";
    if (!c.lv_raw.allFinite() || !c.logvar.allFinite() || !c.sigma.allFinite()) {
        return "logvar_head.weight";
    }
    if (!c.z.allFinite() || !c.theta.allFinite()) return "mu_head.weight";
    if (!c.logits_raw.allFinite() || !c.logits.allFinite() || !c.log_softmax.allFinite()) {
        return "decoder.weight";
    }
    if (cfg.learn_priors &&
        (!c.prior_mu.allFinite() || !c.prior_logvar.allFinite())) {
        return "prior.logvar";
    }
    return "loss";
}

} // namespace

void ModelConfig::validate() const {
    if (topics < 2) throw ConfigError("model.K must be >= 2");
    if (vocab_size == 0) throw ConfigError("model.V must be positive");
    if (hidden_sizes.empty()) throw ConfigError("model.hidden must be nonempty");
    for (auto h : hidden_sizes) {
        if (h == 0) throw ConfigError("model.hidden sizes must be positive");
    }
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
        throw ConfigError("model.dropout must be in [0, 1)");
    }
    if (resolved_prior_alpha() <= 0.0) throw ConfigError("model.prior_alpha must be positive");
    if (variant == ModelVariant::combined && embed_dim == 0) {
        throw ConfigError("model.embed_dim must be positive for the combined variant");
    }
}

WeightLayout WeightLayout::from_config(const ModelConfig& cfg) {
    cfg.validate();
    const std::size_t K = cfg.topics;
    const std::size_t V = cfg.vocab_size;
    WeightLayout layout;
    std::size_t offset = 0;
    auto add = [&](const std::string& name, std::size_t rows, std::size_t cols, bool trainable) {
        layout.blocks.push_back({name, offset, rows, cols, trainable});
        offset += rows * cols;
    };
    std::size_t prev = cfg.input_dim();
    for (std::size_t i = 0; i < cfg.hidden_sizes.size(); ++i) {
        std::size_t h = cfg.hidden_sizes[i];
        add("enc" + std::to_string(i) + ".weight", prev, h, true);
        add("enc" + std::to_string(i) + ".bias", 1, h, true);
        prev = h;
    }
    add("mu_head.weight", prev, K, true);
    add("mu_head.bias", 1, K, true);
    add("logvar_head.weight", prev, K, true);
    add("logvar_head.bias", 1, K, true);
    add("mu_bn.shift", 1, K, true);
    add("logvar_bn.shift", 1, K, true);
    add("decoder.weight", K, V, true);
    add("decoder_bn.shift", 1, V, true);
    if (cfg.learn_priors) {
        add("prior.mu", 1, K, true);
        add("prior.logvar", 1, K, true);
    }
    if (cfg.batch_norm) {
        add("mu_bn.running_mean", 1, K, false);
        add("mu_bn.running_var", 1, K, false);
        add("logvar_bn.running_mean", 1, K, false);
        add("logvar_bn.running_var", 1, K, false);
        add("decoder_bn.running_mean", 1, V, false);
        add("decoder_bn.running_var", 1, V, false);
    }
    layout.total_size = offset;
    return layout;
}

const ParamBlock& WeightLayout::block(const std::string& name) const {
    for (const auto& b : blocks) {
        if (b.name == name) return b;
    }
    throw NumericError("unknown parameter block: " + name);
}

bool WeightLayout::has_block(const std::string& name) const {
    for (const auto& b : blocks) {
        if (b.name == name) return true;
    }
    return false;
}

std::pair<Eigen::RowVectorXd, Eigen::RowVectorXd> dirichlet_prior_moments(const ModelConfig& cfg) {
    const double a = cfg.resolved_prior_alpha();
    const double K = static_cast<double>(cfg.topics);
    // Laplace approximation of a symmetric Dirichlet(a) in softmax space.
    double mu0 = 0.0; // log a - mean log a
    double var0 = (1.0 / a) * (1.0 - 2.0 / K) + (1.0 / (K * K)) * (K / a);
    Eigen::RowVectorXd mu = Eigen::RowVectorXd::Constant(cfg.topics, mu0);
    Eigen::RowVectorXd logvar = Eigen::RowVectorXd::Constant(cfg.topics, std::log(var0));
    return {mu, logvar};
}

Eigen::VectorXd kl_diag_gaussian(const RowMatrixXd& mu, const RowMatrixXd& logvar,
                                 const Eigen::RowVectorXd& mu0,
                                 const Eigen::RowVectorXd& logvar0) {
    if (mu.rows() != logvar.rows() || mu.cols() != logvar.cols() || mu.cols() != mu0.cols() ||
        mu0.cols() != logvar0.cols()) {
        throw NumericError("kl_diag_gaussian: dimension mismatch");
    }
    Eigen::ArrayXXd var = logvar.array().exp();
    Eigen::ArrayXd var0 = logvar0.array().exp().transpose();
    Eigen::VectorXd kl(mu.rows());
    for (Eigen::Index i = 0; i < mu.rows(); ++i) {
        double acc = 0.0;
        for (Eigen::Index k = 0; k < mu.cols(); ++k) {
            double diff = mu(i, k) - mu0(k);
            acc += logvar0(k) - logvar(i, k) + (var(i, k) + diff * diff) / var0(k) - 1.0;
        }
        kl(i) = 0.5 * acc;
    }
    return kl;
}

ModelWeights init_weights(const ModelConfig& cfg) {
    ModelWeights w;
    w.layout = WeightLayout::from_config(cfg);
    w.data.assign(w.layout.total_size, 0.0);
    Rng rng(cfg.seed);
    auto [prior_mu, prior_logvar] = dirichlet_prior_moments(cfg);
    for (const auto& b : w.layout.blocks) {
        double* p = w.data.data() + b.offset;
        if (b.name.ends_with(".weight") || b.name.ends_with(".bias")) {
            // fan-in of the associated linear layer; bias blocks share the
            // bound of their weight matrix.
            std::size_t fan_in =
                b.name.ends_with(".weight") ? b.rows : w.layout.block(b.name.substr(0, b.name.size() - 5) + ".weight").rows;
            double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            for (std::size_t i = 0; i < b.size(); ++i) {
                p[i] = (2.0 * rng.uniform01() - 1.0) * bound;
            }
        } else if (b.name == "prior.mu") {
            for (std::size_t i = 0; i < b.size(); ++i) p[i] = prior_mu(static_cast<Eigen::Index>(i));
        } else if (b.name == "prior.logvar") {
            for (std::size_t i = 0; i < b.size(); ++i) p[i] = prior_logvar(static_cast<Eigen::Index>(i));
        } else if (b.name.ends_with(".running_var")) {
            for (std::size_t i = 0; i < b.size(); ++i) p[i] = 1.0;
        }
        // shifts and running means stay zero
    }
    return w;
}

ForwardNoise ForwardNoise::draw(Rng& rng, Eigen::Index n, const ModelConfig& cfg, bool train_mode) {
    ForwardNoise noise;
    if (!train_mode) return noise;
    const Eigen::Index K = cfg.topics;
    noise.eps.resize(n, K);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index k = 0; k < K; ++k) noise.eps(i, k) = rng.normal();
    }
    if (cfg.dropout_rate > 0.0) {
        noise.dropout_keep.resize(n, K);
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index k = 0; k < K; ++k) {
                noise.dropout_keep(i, k) = rng.uniform01() >= cfg.dropout_rate ? 1.0 : 0.0;
            }
        }
    }
    return noise;
}

ForwardNoise ForwardNoise::stack(const std::vector<ForwardNoise>& parts) {
    ForwardNoise out;
    Eigen::Index rows = 0, eps_cols = 0, keep_cols = 0;
    for (const auto& p : parts) {
        rows += p.eps.rows();
        if (p.eps.cols() > 0) eps_cols = p.eps.cols();
        if (p.dropout_keep.cols() > 0) keep_cols = p.dropout_keep.cols();
    }
    out.eps.resize(eps_cols > 0 ? rows : 0, eps_cols);
    out.dropout_keep.resize(keep_cols > 0 ? rows : 0, keep_cols);
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        if (p.eps.rows() > 0) out.eps.middleRows(at, p.eps.rows()) = p.eps;
        if (p.dropout_keep.rows() > 0) out.dropout_keep.middleRows(at, p.dropout_keep.rows()) = p.dropout_keep;
        at += p.eps.rows();
    }
    return out;
}

MiniBatch make_minibatch(const BowCorpus& corpus, const std::vector<std::uint32_t>& doc_indices,
                         const ModelConfig& cfg) {
    if (corpus.vocab.size() != cfg.vocab_size) {
        throw NumericError("corpus vocabulary size " + std::to_string(corpus.vocab.size()) +
                           " does not match model V " + std::to_string(cfg.vocab_size));
    }
    MiniBatch batch;
    const Eigen::Index n = static_cast<Eigen::Index>(doc_indices.size());
    batch.bow = RowMatrixXd::Zero(n, cfg.vocab_size);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& doc = corpus.docs.at(doc_indices[static_cast<std::size_t>(i)]);
        for (const auto& [pos, cnt] : doc.entries) {
            batch.bow(i, pos) = static_cast<double>(cnt);
        }
    }
    if (cfg.variant == ModelVariant::combined) {
        if (!corpus.embeddings || corpus.embeddings->dim != cfg.embed_dim) {
            throw NumericError("combined variant requires document embeddings of dimension " +
                               std::to_string(cfg.embed_dim));
        }
        RowMatrixXd emb(n, cfg.embed_dim);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double* row = corpus.embeddings->row(doc_indices[static_cast<std::size_t>(i)]);
            for (std::uint32_t c = 0; c < cfg.embed_dim; ++c) emb(i, c) = row[c];
        }
        batch.embeds = std::move(emb);
    }
    return batch;
}

ForwardCache forward(const ModelWeights& weights, const MiniBatch& batch, const ModelConfig& cfg,
                     const ForwardNoise& noise, bool train_mode) {
    const Eigen::Index n = batch.size();
    if (n < 1) throw NumericError("forward: empty mini-batch");
    if (batch.bow.cols() != static_cast<Eigen::Index>(cfg.vocab_size)) {
        throw NumericError("forward: batch width does not match model V");
    }
    const bool combined = cfg.variant == ModelVariant::combined;
    if (combined != batch.embeds.has_value()) {
        throw NumericError("forward: embeddings must be present iff variant is combined");
    }
    if (train_mode) {
        if (noise.eps.rows() != n || noise.eps.cols() != static_cast<Eigen::Index>(cfg.topics)) {
            throw NumericError("forward: eps noise shape mismatch");
        }
        if (cfg.dropout_rate > 0.0 &&
            (noise.dropout_keep.rows() != n ||
             noise.dropout_keep.cols() != static_cast<Eigen::Index>(cfg.topics))) {
            throw NumericError("forward: dropout mask shape mismatch");
        }
    }

    ForwardCache c;
    c.train_mode = train_mode;
    c.noise = noise;
    if (combined) {
        c.input.resize(n, batch.bow.cols() + batch.embeds->cols());
        c.input << batch.bow, *batch.embeds;
    } else {
        c.input = batch.bow;
    }

    // Encoder stack.
    const RowMatrixXd* cur = &c.input;
    for (std::size_t l = 0; l < cfg.hidden_sizes.size(); ++l) {
        auto W = weights.view("enc" + std::to_string(l) + ".weight");
        auto b = weights.view("enc" + std::to_string(l) + ".bias");
        RowMatrixXd a = (*cur * W).rowwise() + b.row(0);
        RowMatrixXd h = a.unaryExpr([](double v) { return softplus(v); });
        c.preacts.push_back(std::move(a));
        c.activations.push_back(std::move(h));
        cur = &c.activations.back();
    }

    c.mu_raw = (*cur * weights.view("mu_head.weight")).rowwise() +
               weights.view("mu_head.bias").row(0);
    c.lv_raw = (*cur * weights.view("logvar_head.weight")).rowwise() +
               weights.view("logvar_head.bias").row(0);

    if (cfg.batch_norm) {
        Eigen::RowVectorXd mu_shift = row_view(weights, "mu_bn.shift");
        Eigen::RowVectorXd lv_shift = row_view(weights, "logvar_bn.shift");
        if (train_mode) {
            auto bn_mu = bn_train(c.mu_raw, mu_shift, row_view(weights, "mu_bn.running_mean"),
                                  row_view(weights, "mu_bn.running_var"));
            c.mu = std::move(bn_mu.y);
            c.mu_xhat = std::move(bn_mu.xhat);
            c.mu_inv_std = std::move(bn_mu.inv_std);
            c.new_mu_mean = std::move(bn_mu.new_mean);
            c.new_mu_var = std::move(bn_mu.new_var);
            auto bn_lv = bn_train(c.lv_raw, lv_shift, row_view(weights, "logvar_bn.running_mean"),
                                  row_view(weights, "logvar_bn.running_var"));
            c.logvar = std::move(bn_lv.y);
            c.lv_xhat = std::move(bn_lv.xhat);
            c.lv_inv_std = std::move(bn_lv.inv_std);
            c.new_lv_mean = std::move(bn_lv.new_mean);
            c.new_lv_var = std::move(bn_lv.new_var);
        } else {
            c.mu = bn_eval(c.mu_raw, mu_shift, row_view(weights, "mu_bn.running_mean"),
                           row_view(weights, "mu_bn.running_var"));
            c.logvar = bn_eval(c.lv_raw, lv_shift, row_view(weights, "logvar_bn.running_mean"),
                               row_view(weights, "logvar_bn.running_var"));
        }
    } else {
        c.mu = c.mu_raw;
        c.logvar = c.lv_raw;
    }

    c.sigma = (0.5 * c.logvar.array()).exp().matrix();
    if (train_mode) {
        c.z = (c.mu.array() + c.sigma.array() * noise.eps.array()).matrix();
    } else {
        c.z = c.mu;
    }
    if (train_mode && cfg.dropout_rate > 0.0) {
        c.z_dropped =
            (c.z.array() * noise.dropout_keep.array() / (1.0 - cfg.dropout_rate)).matrix();
    } else {
        c.z_dropped = c.z;
    }
    c.theta = softmax_rows(c.z_dropped);

    c.logits_raw = c.theta * weights.view("decoder.weight");
    if (cfg.batch_norm) {
        Eigen::RowVectorXd dec_shift = row_view(weights, "decoder_bn.shift");
        if (train_mode) {
            auto bn_dec = bn_train(c.logits_raw, dec_shift,
                                   row_view(weights, "decoder_bn.running_mean"),
                                   row_view(weights, "decoder_bn.running_var"));
            c.logits = std::move(bn_dec.y);
            c.dec_xhat = std::move(bn_dec.xhat);
            c.dec_inv_std = std::move(bn_dec.inv_std);
            c.new_dec_mean = std::move(bn_dec.new_mean);
            c.new_dec_var = std::move(bn_dec.new_var);
        } else {
            c.logits = bn_eval(c.logits_raw, dec_shift,
                               row_view(weights, "decoder_bn.running_mean"),
                               row_view(weights, "decoder_bn.running_var"));
        }
    } else {
        c.logits = c.logits_raw;
    }
    c.log_softmax = log_softmax_rows(c.logits);

    if (cfg.learn_priors) {
        c.prior_mu = row_view(weights, "prior.mu");
        c.prior_logvar = row_view(weights, "prior.logvar");
    } else {
        auto [mu0, logvar0] = dirichlet_prior_moments(cfg);
        c.prior_mu = std::move(mu0);
        c.prior_logvar = std::move(logvar0);
    }

    Eigen::VectorXd recon = -(batch.bow.array() * c.log_softmax.array()).rowwise().sum();
    Eigen::VectorXd kl = kl_diag_gaussian(c.mu, c.logvar, c.prior_mu, c.prior_logvar);
    c.loss = (recon + kl).mean();

    if (!std::isfinite(c.loss)) {
        throw NumericError("non-finite loss (first non-finite values after block '" +
                           blame_block(c, cfg) + "')");
    }
    return c;
}

GradientVector backward(const ModelWeights& weights, const MiniBatch& batch,
                        const ModelConfig& cfg, const ForwardCache& c) {
    if (!c.train_mode) throw NumericError("backward requires a train-mode forward cache");
    const Eigen::Index n = batch.size();
    const double scale = 1.0 / static_cast<double>(n);

    GradientVector grad;
    grad.data.assign(weights.layout.total_size, 0.0);
    grad.n_samples = static_cast<std::uint32_t>(n);
    ModelWeights gview{weights.layout, std::move(grad.data)};

    // Reconstruction: d(-sum_v x_v log softmax_v)/dlogits.
    RowMatrixXd probs = c.log_softmax.array().exp().matrix();
    Eigen::VectorXd doc_totals = batch.bow.rowwise().sum();
    RowMatrixXd dlogits = scale * (doc_totals.asDiagonal() * probs - batch.bow);

    RowMatrixXd dlogits_raw;
    if (cfg.batch_norm) {
        gview.view("decoder_bn.shift").row(0) = dlogits.colwise().sum();
        dlogits_raw = bn_backward(dlogits, c.dec_xhat, c.dec_inv_std);
    } else {
        dlogits_raw = std::move(dlogits);
    }

    auto B = weights.view("decoder.weight");
    gview.view("decoder.weight") = c.theta.transpose() * dlogits_raw;
    RowMatrixXd dtheta = dlogits_raw * B.transpose();

    // Softmax backward on theta.
    Eigen::VectorXd rowdot = (dtheta.array() * c.theta.array()).rowwise().sum();
    RowMatrixXd dzd = (c.theta.array() * (dtheta.colwise() - rowdot).array()).matrix();

    RowMatrixXd dz;
    if (cfg.dropout_rate > 0.0) {
        dz = (dzd.array() * c.noise.dropout_keep.array() / (1.0 - cfg.dropout_rate)).matrix();
    } else {
        dz = std::move(dzd);
    }

    // z = mu + sigma (x) eps, with KL contributions on mu and logvar.
    RowMatrixXd dmu = dz;
    RowMatrixXd dlogvar = 0.5 * (dz.array() * c.noise.eps.array() * c.sigma.array()).matrix();

    Eigen::RowVectorXd var0_inv = (-c.prior_logvar.array()).exp().matrix();
    RowMatrixXd centered = c.mu.rowwise() - c.prior_mu;
    dmu += scale * (centered * var0_inv.asDiagonal());
    RowMatrixXd sigma2 = c.sigma.array().square().matrix();
    dlogvar += (scale * 0.5) * ((sigma2 * var0_inv.asDiagonal()).array() - 1.0).matrix();

    if (cfg.learn_priors) {
        gview.view("prior.mu").row(0) = -scale * centered.colwise().sum();
        RowMatrixXd ratio =
            (sigma2 + centered.array().square().matrix()) * var0_inv.asDiagonal();
        gview.view("prior.logvar").row(0) =
            (scale * 0.5) *
            (Eigen::RowVectorXd::Constant(ratio.cols(), static_cast<double>(n)) -
             ratio.colwise().sum());
    }

    RowMatrixXd dmu_raw, dlv_raw;
    if (cfg.batch_norm) {
        gview.view("mu_bn.shift").row(0) = dmu.colwise().sum();
        gview.view("logvar_bn.shift").row(0) = dlogvar.colwise().sum();
        dmu_raw = bn_backward(dmu, c.mu_xhat, c.mu_inv_std);
        dlv_raw = bn_backward(dlogvar, c.lv_xhat, c.lv_inv_std);
    } else {
        dmu_raw = std::move(dmu);
        dlv_raw = std::move(dlogvar);
    }

    const RowMatrixXd& top = c.activations.back();
    gview.view("mu_head.weight") = top.transpose() * dmu_raw;
    gview.view("mu_head.bias").row(0) = dmu_raw.colwise().sum();
    gview.view("logvar_head.weight") = top.transpose() * dlv_raw;
    gview.view("logvar_head.bias").row(0) = dlv_raw.colwise().sum();

    RowMatrixXd dh = dmu_raw * weights.view("mu_head.weight").transpose() +
                     dlv_raw * weights.view("logvar_head.weight").transpose();

    for (std::size_t l = cfg.hidden_sizes.size(); l-- > 0;) {
        RowMatrixXd da =
            dh.array() * c.preacts[l].unaryExpr([](double v) { return sigmoid(v); }).array();
        const RowMatrixXd& in = (l == 0) ? c.input : c.activations[l - 1];
        std::string prefix = "enc" + std::to_string(l);
        gview.view(prefix + ".weight") = in.transpose() * da;
        gview.view(prefix + ".bias").row(0) = da.colwise().sum();
        if (l > 0) {
            dh = da * weights.view(prefix + ".weight").transpose();
        }
    }

    grad.data = std::move(gview.data);
    return grad;
}

GradientVector fd_gradient(const ModelWeights& weights, const MiniBatch& batch,
                           const ModelConfig& cfg, const ForwardNoise& noise, double h) {
    if (!(h > 0.0)) throw NumericError("fd_gradient: h must be positive");
    ModelWeights probe = weights;
    GradientVector grad;
    grad.data.assign(weights.layout.total_size, 0.0);
    grad.n_samples = static_cast<std::uint32_t>(batch.size());
    for (std::size_t i = 0; i < probe.data.size(); ++i) {
        const double orig = probe.data[i];
        probe.data[i] = orig + h;
        double up = forward(probe, batch, cfg, noise, true).loss;
        probe.data[i] = orig - h;
        double down = forward(probe, batch, cfg, noise, true).loss;
        probe.data[i] = orig;
        grad.data[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

Matrix infer_theta(const ModelWeights& weights, const BowCorpus& corpus, const ModelConfig& cfg) {
    const std::size_t D = corpus.num_docs();
    Matrix out;
    out.rows = D;
    out.cols = cfg.topics;
    out.data.resize(D * cfg.topics);
    const std::size_t chunk = 512;
    ForwardNoise no_noise;
    for (std::size_t start = 0; start < D; start += chunk) {
        std::size_t count = std::min(chunk, D - start);
        std::vector<std::uint32_t> idx(count);
        for (std::size_t i = 0; i < count; ++i) idx[i] = static_cast<std::uint32_t>(start + i);
        MiniBatch batch = make_minibatch(corpus, idx, cfg);
        ForwardCache c = forward(weights, batch, cfg, no_noise, false);
        for (std::size_t i = 0; i < count; ++i) {
            for (std::uint32_t k = 0; k < cfg.topics; ++k) {
                out.at(start + i, k) = c.theta(static_cast<Eigen::Index>(i), k);
            }
        }
    }
    return out;
}

Matrix get_beta(const ModelWeights& weights, const ModelConfig& cfg) {
    RowMatrixXd beta = softmax_rows(weights.view("decoder.weight"));
    Matrix out;
    out.rows = cfg.topics;
    out.cols = cfg.vocab_size;
    out.data.assign(beta.data(), beta.data() + beta.size());
    return out;
}

namespace {

void write_model_config(ByteWriter& w, const ModelConfig& cfg) {
    w.put_u32(cfg.topics);
    w.put_u32(cfg.vocab_size);
    w.put_u8(static_cast<std::uint8_t>(cfg.variant));
    w.put_u32(cfg.embed_dim);
    w.put_u64(cfg.hidden_sizes.size());
    for (auto h : cfg.hidden_sizes) w.put_u32(h);
    w.put_f64(cfg.dropout_rate);
    w.put_f64(cfg.prior_alpha);
    w.put_u8(cfg.learn_priors ? 1 : 0);
    w.put_u8(cfg.batch_norm ? 1 : 0);
    w.put_u64(cfg.seed);
}

ModelConfig read_model_config(ByteReader& r) {
    ModelConfig cfg;
    cfg.topics = r.get_u32();
    cfg.vocab_size = r.get_u32();
    std::uint8_t variant = r.get_u8();
    if (variant > 1) throw TransportError("unknown model variant tag");
    cfg.variant = static_cast<ModelVariant>(variant);
    cfg.embed_dim = r.get_u32();
    std::uint64_t layers = r.get_u64();
    cfg.hidden_sizes.clear();
    for (std::uint64_t i = 0; i < layers; ++i) cfg.hidden_sizes.push_back(r.get_u32());
    cfg.dropout_rate = r.get_f64();
    cfg.prior_alpha = r.get_f64();
    cfg.learn_priors = r.get_u8() != 0;
    cfg.batch_norm = r.get_u8() != 0;
    cfg.seed = r.get_u64();
    return cfg;
}

} // namespace

// Defined here so transport can reuse one canonical config codec.
void wire_write_model_config(ByteWriter& w, const ModelConfig& cfg) { write_model_config(w, cfg); }
ModelConfig wire_read_model_config(ByteReader& r) { return read_model_config(r); }

void save_checkpoint(const ModelWeights& weights, const ModelConfig& cfg, const std::string& path) {
    ByteWriter w;
    for (char ch : kCheckpointMagic) w.put_u8(static_cast<std::uint8_t>(ch));
    w.put_u32(kCheckpointVersion);
    write_model_config(w, cfg);
    w.put_u64(weights.layout.blocks.size());
    for (const auto& b : weights.layout.blocks) {
        w.put_string(b.name);
        w.put_u64(b.rows);
        w.put_u64(b.cols);
        w.put_u64(b.offset);
        w.put_u8(b.trainable ? 1 : 0);
    }
    w.put_f64_array(weights.data);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open checkpoint for writing: " + path);
    const auto& bytes = w.bytes();
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::pair<ModelWeights, ModelConfig> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open checkpoint for reading: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    try {
        ByteReader r(bytes);
        for (char ch : kCheckpointMagic) {
            if (r.get_u8() != static_cast<std::uint8_t>(ch)) {
                throw TransportError("bad checkpoint magic");
            }
        }
        if (r.get_u32() != kCheckpointVersion) throw TransportError("unsupported checkpoint version");
        ModelConfig cfg = read_model_config(r);
        ModelWeights w;
        std::uint64_t nblocks = r.get_u64();
        for (std::uint64_t i = 0; i < nblocks; ++i) {
            ParamBlock b;
            b.name = r.get_string();
            b.rows = static_cast<std::size_t>(r.get_u64());
            b.cols = static_cast<std::size_t>(r.get_u64());
            b.offset = static_cast<std::size_t>(r.get_u64());
            b.trainable = r.get_u8() != 0;
            w.layout.blocks.push_back(std::move(b));
        }
        w.data = r.get_f64_array();
        r.expect_end();
        w.layout.total_size = w.data.size();
        if (!(w.layout == WeightLayout::from_config(cfg))) {
            throw TransportError("checkpoint layout does not match its config");
        }
        return {std::move(w), cfg};
    } catch (const TransportError& e) {
        throw ParseError("corrupt checkpoint " + path + ": " + e.what());
    }
}

} // namespace fedtopic
