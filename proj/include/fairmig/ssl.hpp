#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "fairmig/autodiff.hpp"
#include "fairmig/graph.hpp"
#include "fairmig/migration.hpp"
#include "fairmig/model.hpp"
#include "fairmig/optimizer.hpp"
#include "fairmig/rng.hpp"

namespace fairmig {

// L_con = (1/n) sum_i w_i [ (1 - cos(Z0_i, Z1_i)) + cos(Z0_i, Z1_{perm(i)}) ].
// Gradients flow to both views.
inline ad::Var contrastive_loss(ad::Tape& tape, ad::Var z0, ad::Var z1, const Vec& w,
                                const std::vector<int>& perm) {
    const Mat& Z0 = tape.value(z0);
    const Mat& Z1 = tape.value(z1);
    if (Z0.rows() != Z1.rows() || Z0.cols() != Z1.cols())
        throw ContractError("contrastive views must share shape");
    if (w.size() != Z0.rows()) throw ContractError("contrastive weight length mismatch");
    check_permutation(perm, static_cast<int>(Z0.rows()));
    ad::Var aligned = tape.rowwise_cosine(z0, z1);
    ad::Var shuffled = tape.rowwise_cosine(z0, tape.row_permute(z1, perm));
    ad::Var per_node = tape.add(tape.one_minus(aligned), shuffled);
    return tape.mean_all(tape.cmul(per_node, Mat(w)));
}

// L_rec = (1/n) sum_i w_i [ mean_j (U_ij - Urec_ij)^2 + Srec_i^2 + (Srec_i - 1)^2 ].
// The two-target sensitive term is minimized at Srec = 1/2.
inline ad::Var reconstruction_loss(ad::Tape& tape, const Mat& X, ad::Var x_rec,
                                   int sensitive_index, const Vec& w) {
    const Mat& R = tape.value(x_rec);
    if (R.rows() != X.rows() || R.cols() != X.cols())
        throw ContractError("reconstruction shape mismatch");
    if (sensitive_index < 0 || sensitive_index >= X.cols())
        throw ContractError("sensitive index out of range");
    if (X.cols() < 2) throw ContractError("reconstruction needs at least 2 feature columns");
    if (w.size() != X.rows()) throw ContractError("reconstruction weight length mismatch");

    Mat U(X.rows(), X.cols() - 1);
    U.leftCols(sensitive_index) = X.leftCols(sensitive_index);
    U.rightCols(X.cols() - 1 - sensitive_index) = X.rightCols(X.cols() - 1 - sensitive_index);

    ad::Var u_rec = tape.drop_col(x_rec, sensitive_index);
    ad::Var s_rec = tape.get_col(x_rec, sensitive_index);
    ad::Var u_term = tape.row_mean(tape.square(tape.sub(tape.constant(U), u_rec)));
    ad::Var s_term = tape.add(tape.square(s_rec), tape.square(tape.add_scalar(s_rec, -1.0)));
    return tape.mean_all(tape.cmul(tape.add(u_term, s_term), Mat(w)));
}

// L_ssl = alpha * L_con + (1 - alpha) * L_rec.
inline ad::Var ssl_loss(ad::Tape& tape, ad::Var l_con, ad::Var l_rec, double alpha) {
    if (alpha < 0.0 || alpha > 1.0) throw ConfigError("alpha must lie in [0,1]");
    return tape.add(tape.scale(l_con, alpha), tape.scale(l_rec, 1.0 - alpha));
}

struct SslConfig {
    double alpha = 0.6;
    double gamma = 0.6;
    int epochs = 200;
    int migration_cadence = 1;  // migrate every k-th epoch
    double lr = 1e-3;
    double weight_decay = 1e-5;
    bool enable_migration = true;  // false: no flips and no L_mig term (wo_mig)
    bool reweight_enabled = true;  // false: w = 1 (wo_wei)
    std::uint64_t master_seed = 0;
};

struct SslResult {
    MigrationState state;  // frozen, with full per-epoch history
    double final_loss = 0.0;
};

// Stage 1: per epoch, encode the original graph and both counterfactual
// views, take the contrastive loss on the views and the reconstruction loss
// on the original, refresh prototypes/similarities/outliers from the original
// embedding, add the migration pull on pre-flip groups, step the encoder and
// decoder on L_pre = L_mig + gamma * L_ssl, then apply the flips. Returns the
// frozen pseudo-group assignment.
inline SslResult ssl_stage_train(const Graph& g, ModelBundle& models, const SslConfig& cfg) {
    if (cfg.gamma < 0.0 || cfg.gamma > 1.0) throw ConfigError("gamma must lie in [0,1]");
    if (cfg.epochs < 0) throw ConfigError("epochs must be non-negative");
    if (cfg.migration_cadence < 1) throw ConfigError("migration cadence must be >= 1");

    const Vec S = g.sensitive();
    const Vec w = cfg.reweight_enabled ? reweight(S) : Vec::Ones(g.n);
    const CounterfactualViews views = counterfactual_views(g);
    auto a_norm = std::make_shared<const SpMat>(normalize_adjacency(g.adj));
    auto shuffle_rng = make_stream(cfg.master_seed, "shuffle");

    MigrationState state = init_migration_state(S);
    AdamState opt;
    double last_loss = 0.0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        try {
            ad::Tape tape;
            TapeBinding bind;
            ad::Var z = encode_on_tape(tape, &bind, models.encoder, a_norm, g.X);
            ad::Var z0 = encode_on_tape(tape, &bind, models.encoder, a_norm, views.view0);
            ad::Var z1 = encode_on_tape(tape, &bind, models.encoder, a_norm, views.view1);
            ad::Var x_rec = decode_on_tape(tape, &bind, models.heads, z);

            const std::vector<int> perm = draw_shuffle_perm(g.n, shuffle_rng);
            ad::Var l_con = contrastive_loss(tape, z0, z1, w, perm);
            ad::Var l_rec = reconstruction_loss(tape, g.X, x_rec, g.sensitive_index, w);
            ad::Var l_ssl = ssl_loss(tape, l_con, l_rec, cfg.alpha);

            refresh_similarity(state, tape.value(z));
            ad::Var l_pre = tape.scale(l_ssl, cfg.gamma);
            if (cfg.enable_migration)
                l_pre = tape.add(
                    migration_loss(tape, z, state.T, state.P, state.outliers, w), l_pre);

            tape.backward(l_pre);
            last_loss = tape.value(l_pre)(0, 0);
            std::vector<Mat> grads = bind.grads(tape);
            if (cfg.weight_decay != 0.0)
                for (std::size_t k = 0; k < grads.size(); ++k)
                    grads[k] += cfg.weight_decay * (*bind.slots[k]);
            adam_step(bind.slots, grads, opt, cfg.lr);

            if (cfg.enable_migration && (epoch % cfg.migration_cadence == 0)) {
                state = migrate_groups(state, state.outliers);
                state.history.back().epoch = epoch;
            } else {
                MigrationRecord rec;
                rec.epoch = epoch;
                rec.mu0 = state.group_stats[0].mu;
                rec.sigma0 = state.group_stats[0].sigma;
                rec.mu1 = state.group_stats[1].mu;
                rec.sigma1 = state.group_stats[1].sigma;
                state.history.push_back(rec);
            }
        } catch (const NumericError& e) {
            throw NumericError("ssl stage, epoch " + std::to_string(epoch) + ": " + e.what());
        }
    }
    state.frozen = true;
    return SslResult{std::move(state), last_loss};
}

}  // namespace fairmig
