#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "fairmig/autodiff.hpp"
#include "fairmig/graph.hpp"
#include "fairmig/metrics.hpp"
#include "fairmig/migration.hpp"
#include "fairmig/model.hpp"
#include "fairmig/optimizer.hpp"
#include "fairmig/ssl.hpp"

namespace fairmig {

// Mean binary cross-entropy of predicted probabilities against labels over a
// node mask.
inline ad::Var ce_loss(ad::Tape& tape, ad::Var y_hat, const IVec& labels,
                       const std::vector<int>& mask) {
    if (mask.empty()) throw ContractError("ce_loss mask must be non-empty");
    if (tape.value(y_hat).cols() != 1) throw ContractError("ce_loss expects Nx1 probabilities");
    Mat targets(static_cast<Eigen::Index>(mask.size()), 1);
    for (std::size_t k = 0; k < mask.size(); ++k) {
        const int y = labels(mask[k]);
        if (y != 0 && y != 1) throw ContractError("ce_loss labels must be 0/1 on the mask");
        targets(static_cast<Eigen::Index>(k), 0) = y;
    }
    return ad::bce_mean(tape, tape.gather_rows(y_hat, mask), targets);
}

// L_E: cross-entropy of the estimator output S^p against the adversary output
// S^A taken as a constant target.
inline ad::Var estimator_loss(ad::Tape& tape, ad::Var s_p, const Vec& s_a_target) {
    if (tape.value(s_p).rows() != s_a_target.size())
        throw ContractError("estimator_loss size mismatch");
    Mat t = s_a_target;
    for (Eigen::Index i = 0; i < t.rows(); ++i)
        t(i, 0) = std::min(std::max(t(i, 0), 0.0), 1.0);
    return ad::bce_mean(tape, s_p, t);
}

// The symmetric adversarial objective, written exactly as stated:
//   -(1/2n) sum_i [ S^A log S^p + (1-S^A) log(1-S^p)
//                 + (1-S^A) log S^p + S^A log(1-S^p) ]
// with S^p entering as a constant. The S^A terms cancel algebraically, so the
// value reduces to -(1/2n) sum (log S^p + log(1-S^p)) and the gradient w.r.t.
// S^A vanishes; the acceptance suite pins this down numerically.
inline ad::Var adversarial_loss(ad::Tape& tape, const Vec& s_p_const, ad::Var s_a,
                                double eps = 1e-7) {
    const Mat& SA = tape.value(s_a);
    if (SA.cols() != 1 || SA.rows() != s_p_const.size())
        throw ContractError("adversarial_loss size mismatch");
    const Eigen::Index n = s_p_const.size();
    Mat lp(n, 1), lq(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double p = std::min(std::max(s_p_const(i), eps), 1.0 - eps);
        lp(i, 0) = std::log(p);
        lq(i, 0) = std::log(1.0 - p);
    }
    ad::Var one_minus_sa = tape.one_minus(s_a);
    ad::Var total = tape.add(tape.add(tape.cmul(s_a, lp), tape.cmul(one_minus_sa, lq)),
                             tape.add(tape.cmul(one_minus_sa, lp), tape.cmul(s_a, lq)));
    return tape.scale(tape.sum_all(total), -0.5 / static_cast<double>(n));
}

struct FrozenMigration {
    ad::Var loss;
    std::array<GroupStats, 2> stats;
    std::vector<int> outliers;
};

// The stage-1 migration loss evaluated under a frozen group assignment:
// prototypes, similarities and outliers are refreshed from the current
// embedding but no flip is ever applied.
inline FrozenMigration frozen_migration_loss(ad::Tape& tape, ad::Var z,
                                             const std::vector<int>& frozen_p, const Vec& w) {
    FrozenMigration out;
    const Mat& Z = tape.value(z);
    const Mat T = group_prototypes(Z, frozen_p);
    SimilarityResult sims = group_similarities(Z, T, frozen_p);
    out.stats = sims.stats;
    out.outliers = detect_outliers(sims.Q, sims.stats, frozen_p);
    out.loss = migration_loss(tape, z, T, frozen_p, out.outliers, w);
    return out;
}

enum class AdversaryObjective { Verbatim, Standard };

inline std::string to_string(AdversaryObjective o) {
    return o == AdversaryObjective::Verbatim ? "verbatim" : "standard";
}

inline AdversaryObjective adversary_objective_from_string(const std::string& s) {
    if (s == "verbatim") return AdversaryObjective::Verbatim;
    if (s == "standard") return AdversaryObjective::Standard;
    throw ConfigError("unknown adversary_objective '" + s + "' (expected verbatim|standard)");
}

struct SupConfig {
    double lambda = 10.0;
    double beta = 0.1;
    int epochs = 500;
    int adversary_steps_per_epoch = 1;
    double lr_encoder = 1e-3;
    double lr_classifier = 1e-3;
    double lr_estimator = 1e-3;
    double lr_adversary = 1e-3;
    double weight_decay = 1e-5;
    AdversaryObjective adversary_objective = AdversaryObjective::Verbatim;
    bool adversarial_enabled = true;  // false: phases (a)/(b) skipped, no -beta*L_A term
    bool reweight_enabled = true;
    double threshold = 0.5;
    std::uint64_t master_seed = 0;
    // Test hook: called after each phase with the phase tag ('a','b','c').
    std::function<void(char, int)> phase_observer;
};

struct EpochLog {
    int epoch = 0;
    double loss_ce = 0.0;
    double loss_mig = 0.0;
    double loss_adv = 0.0;
    double val_auc = 0.0;
    double val_delta_sp = 0.0;
    double val_delta_eo = 0.0;
    std::array<GroupStats, 2> stats{};
};

struct SupResult {
    std::vector<EpochLog> logs;
    int best_epoch = -1;
    double best_val_auc = 0.0;
    ModelBundle best_models;  // snapshot at the selected epoch
};

// Stage 2: per epoch, (a) train the estimator toward the adversary's output,
// (b) step the adversary up its objective, (c) step encoder and classifier
// down L_CE + lambda * L_mig - beta * L_A. Selection is highest validation
// AUC, ties broken by lower validation dSP + dEO, then earlier epoch.
inline SupResult sup_stage_train(const Graph& g, ModelBundle& models,
                                 const MigrationState& frozen_state, const SupConfig& cfg) {
    if (cfg.lambda < 0.0) throw ConfigError("lambda must be non-negative");
    if (cfg.beta < 0.0) throw ConfigError("beta must be non-negative");
    if (cfg.epochs < 0) throw ConfigError("epochs must be non-negative");
    if (cfg.adversary_steps_per_epoch < 1)
        throw ConfigError("adversary_steps_per_epoch must be >= 1");
    if (!frozen_state.frozen) throw ContractError("stage 2 requires a frozen migration state");

    const Vec S = g.sensitive();
    const Vec w = cfg.reweight_enabled ? reweight(S) : Vec::Ones(g.n);
    const std::vector<int> train_idx = g.split_indices(Split::Train);
    const std::vector<int> val_idx = g.split_indices(Split::Val);
    if (train_idx.empty() || val_idx.empty())
        throw ContractError("stage 2 requires non-empty train and val splits");
    auto a_norm = std::make_shared<const SpMat>(normalize_adjacency(g.adj));
    Mat x_masked = g.X;
    x_masked.col(g.sensitive_index).setZero();
    Mat s_raw_col = S;

    AdamState opt_encoder, opt_classifier, opt_estimator, opt_adversary;
    SupResult result;
    double best_tie = 0.0;

    auto observe = [&](char phase, int epoch) {
        if (cfg.phase_observer) cfg.phase_observer(phase, epoch);
    };

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Vec s_p_vals;  // estimator output used as the constant side of L_A

        // Phase (a): estimator step toward the adversary's current output.
        if (cfg.adversarial_enabled) {
            try {
                const Mat z_now = [&] {
                    ad::Tape t;
                    return t.value(encode_on_tape(t, nullptr, models.encoder, a_norm, g.X));
                }();
                const Vec s_a_target = adversary_predict(models.heads, z_now);
                ad::Tape tape;
                TapeBinding bind;
                ad::Var s_p = estimator_on_tape(tape, &bind, models.heads, a_norm, x_masked,
                                                g.sensitive_index);
                ad::Var l_e = estimator_loss(tape, s_p, s_a_target);
                tape.backward(l_e);
                std::vector<Mat> grads = bind.grads(tape);
                if (cfg.weight_decay != 0.0)
                    for (std::size_t k = 0; k < grads.size(); ++k)
                        grads[k] += cfg.weight_decay * (*bind.slots[k]);
                adam_step(bind.slots, grads, opt_estimator, cfg.lr_estimator);
            } catch (const NumericError& e) {
                throw NumericError("phase a, epoch " + std::to_string(epoch) + ": " + e.what());
            }
            observe('a', epoch);

            // Phase (b): adversary ascent on its objective.
            try {
                const Mat z_now = [&] {
                    ad::Tape t;
                    return t.value(encode_on_tape(t, nullptr, models.encoder, a_norm, g.X));
                }();
                s_p_vals = estimate_sensitive(models.heads, g.adj, x_masked, g.sensitive_index);
                for (int step = 0; step < cfg.adversary_steps_per_epoch; ++step) {
                    ad::Tape tape;
                    TapeBinding bind;
                    ad::Var s_a =
                        adversary_on_tape(tape, &bind, models.heads, tape.constant(z_now));
                    std::vector<Mat> grads;
                    if (cfg.adversary_objective == AdversaryObjective::Verbatim) {
                        // gradient ascent on the (flat) verbatim objective
                        ad::Var l_a = adversarial_loss(tape, s_p_vals, s_a);
                        tape.backward(l_a);
                        grads = bind.grads(tape);
                        for (Mat& m : grads) m = -m;
                    } else {
                        // adversary learns to recover raw S from Z
                        ad::Var l = ad::bce_mean(tape, s_a, s_raw_col);
                        tape.backward(l);
                        grads = bind.grads(tape);
                    }
                    if (cfg.weight_decay != 0.0)
                        for (std::size_t k = 0; k < grads.size(); ++k)
                            grads[k] += cfg.weight_decay * (*bind.slots[k]);
                    adam_step(bind.slots, grads, opt_adversary, cfg.lr_adversary);
                }
            } catch (const NumericError& e) {
                throw NumericError("phase b, epoch " + std::to_string(epoch) + ": " + e.what());
            }
            observe('b', epoch);
        }

        // Phase (c): encoder + classifier step on L_CE + lambda L_mig - beta L_A.
        EpochLog log;
        log.epoch = epoch;
        try {
            ad::Tape tape;
            TapeBinding bind_enc, bind_cls;
            ad::Var z = encode_on_tape(tape, &bind_enc, models.encoder, a_norm, g.X);
            ad::Var y_hat = classify_on_tape(tape, &bind_cls, models.heads, z);
            ad::Var total = ce_loss(tape, y_hat, g.labels, train_idx);
            log.loss_ce = tape.value(total)(0, 0);
            if (cfg.lambda != 0.0) {
                FrozenMigration fm = frozen_migration_loss(tape, z, frozen_state.P, w);
                log.loss_mig = tape.value(fm.loss)(0, 0);
                total = tape.add(total, tape.scale(fm.loss, cfg.lambda));
            } else {
                const Mat& Z = tape.value(z);
                const Mat T = group_prototypes(Z, frozen_state.P);
                SimilarityResult sims = group_similarities(Z, T, frozen_state.P);
                const std::vector<int> O = detect_outliers(sims.Q, sims.stats, frozen_state.P);
                ad::Tape probe;
                log.loss_mig =
                    probe.value(migration_loss(probe, probe.constant(Z), T, frozen_state.P, O, w))(0, 0);
            }
            if (cfg.adversarial_enabled && cfg.beta != 0.0) {
                ad::Var s_a_live = adversary_on_tape(tape, nullptr, models.heads, z);
                ad::Var l_a = cfg.adversary_objective == AdversaryObjective::Verbatim
                                  ? adversarial_loss(tape, s_p_vals, s_a_live)
                                  : ad::bce_mean(tape, s_a_live, s_raw_col);
                log.loss_adv = tape.value(l_a)(0, 0);
                total = tape.add(total, tape.scale(l_a, -cfg.beta));
            }
            tape.backward(total);
            std::vector<Mat> grads_enc = bind_enc.grads(tape);
            std::vector<Mat> grads_cls = bind_cls.grads(tape);
            if (cfg.weight_decay != 0.0) {
                for (std::size_t k = 0; k < grads_enc.size(); ++k)
                    grads_enc[k] += cfg.weight_decay * (*bind_enc.slots[k]);
                for (std::size_t k = 0; k < grads_cls.size(); ++k)
                    grads_cls[k] += cfg.weight_decay * (*bind_cls.slots[k]);
            }
            adam_step(bind_enc.slots, grads_enc, opt_encoder, cfg.lr_encoder);
            adam_step(bind_cls.slots, grads_cls, opt_classifier, cfg.lr_classifier);
        } catch (const NumericError& e) {
            throw NumericError("phase c, epoch " + std::to_string(epoch) + ": " + e.what());
        }
        observe('c', epoch);

        // Validation metrics of the post-step model.
        try {
            ad::Tape tape;
            ad::Var z = encode_on_tape(tape, nullptr, models.encoder, a_norm, g.X);
            const Vec scores =
                tape.value(classify_on_tape(tape, nullptr, models.heads, z)).col(0);
            const Mat& Z = tape.value(z);  // fetched after the last op is recorded
            log.val_auc = auc(scores, g.labels, val_idx);
            const IVec y_hat = binarize(scores, cfg.threshold);
            log.val_delta_sp = delta_sp(y_hat, S, val_idx);
            log.val_delta_eo = delta_eo(y_hat, g.labels, S, val_idx);
            const Mat T = group_prototypes(Z, frozen_state.P);
            log.stats = group_similarities(Z, T, frozen_state.P).stats;
        } catch (const NumericError& e) {
            throw NumericError("validation, epoch " + std::to_string(epoch) + ": " + e.what());
        }
        result.logs.push_back(log);

        const double tie = log.val_delta_sp + log.val_delta_eo;
        if (result.best_epoch < 0 || log.val_auc > result.best_val_auc ||
            (log.val_auc == result.best_val_auc && tie < best_tie)) {
            result.best_epoch = epoch;
            result.best_val_auc = log.val_auc;
            best_tie = tie;
            result.best_models = models;
        }
    }
    if (result.best_epoch < 0) result.best_models = models;  // zero-epoch run
    return result;
}

}  // namespace fairmig
