#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <random>

#include "fairmig/sup.hpp"
#include "fairmig/synthetic.hpp"
#include "oracle_helpers.hpp"

using namespace fairmig;

namespace {

Graph small_training_graph(std::uint64_t seed = 50, int n = 80) {
    SyntheticSpec spec;
    spec.n_nodes = n;
    spec.seed = seed;
    spec.feature_dim = 6;
    spec.sensitive_feature_leakage = 0.7;
    spec.homophily = 0.7;
    spec.label_skew_per_group = {0.75, 0.35};
    return make_splits(generate_synthetic(spec), 0.5, 0.25, 0.25, seed);
}

MigrationState frozen_raw_state(const Graph& g) {
    MigrationState st = init_migration_state(g.sensitive());
    st.frozen = true;
    return st;
}

}  // namespace

TEST_CASE("ce_loss trivial values, oracle and gradient") {
    std::vector<int> mask{0, 1, 2};
    IVec y(3);
    y << 1, 0, 1;

    // predictions equal to labels, clamped -> loss ~ 0
    Mat exact(3, 1);
    exact << 1.0 - 1e-7, 1e-7, 1.0 - 1e-7;
    ad::Tape tape;
    REQUIRE(tape.value(ce_loss(tape, tape.leaf(exact), y, mask))(0, 0) ==
            Catch::Approx(0.0).margin(1e-6));

    // constant one-half -> ln 2
    Mat half = Mat::Constant(3, 1, 0.5);
    ad::Tape tape2;
    REQUIRE(tape2.value(ce_loss(tape2, tape2.leaf(half), y, mask))(0, 0) ==
            Catch::Approx(std::log(2.0)).epsilon(1e-12));

    // random 6-node case vs oracle, plus FD through a sigmoid
    std::mt19937_64 rng(51);
    Mat logits = oracle::random_matrix(6, 1, rng);
    IVec y6(6);
    std::vector<int> mask6;
    std::uniform_int_distribution<int> bit(0, 1);
    for (int i = 0; i < 6; ++i) {
        y6(i) = bit(rng);
        if (i != 3) mask6.push_back(i);  // a strict subset of rows
    }
    ad::Tape tape3;
    ad::Var x = tape3.leaf(logits);
    ad::Var p = tape3.sigmoid(x);
    ad::Var loss = ce_loss(tape3, p, y6, mask6);
    std::vector<double> targets;
    for (int i : mask6) targets.push_back(y6(i));
    REQUIRE(tape3.value(loss)(0, 0) ==
            Catch::Approx(oracle::bce(tape3.value(p).col(0), targets, mask6)).epsilon(1e-8));
    tape3.backward(loss);
    Mat lm = logits;
    auto f = [&]() {
        ad::Tape t;
        return t.value(ce_loss(t, t.sigmoid(t.constant(lm)), y6, mask6))(0, 0);
    };
    REQUIRE(oracle::max_rel_error(tape3.grad(x), oracle::finite_diff_grad(f, lm)) < 1e-4);

    REQUIRE_THROWS_AS(ce_loss(tape3, p, y6, std::vector<int>{}), ContractError);
}

TEST_CASE("estimator_loss values and gradient") {
    // S^p = S^A = 0.5 -> ln 2
    ad::Tape tape;
    Mat half = Mat::Constant(4, 1, 0.5);
    REQUIRE(tape.value(estimator_loss(tape, tape.leaf(half), Vec::Constant(4, 0.5)))(0, 0) ==
            Catch::Approx(std::log(2.0)).epsilon(1e-12));

    // S^A = 1 and S^p -> 1 drives the loss to 0
    ad::Tape tape2;
    Mat close = Mat::Constant(4, 1, 1.0 - 1e-7);
    REQUIRE(tape2.value(estimator_loss(tape2, tape2.leaf(close), Vec::Ones(4)))(0, 0) ==
            Catch::Approx(0.0).margin(1e-6));

    std::mt19937_64 rng(52);
    Mat logits = oracle::random_matrix(5, 1, rng);
    Vec target(5);
    std::uniform_real_distribution<double> unif(0.05, 0.95);
    for (int i = 0; i < 5; ++i) target(i) = unif(rng);

    ad::Tape tape3;
    ad::Var x = tape3.leaf(logits);
    ad::Var sp = tape3.sigmoid(x);
    ad::Var loss = estimator_loss(tape3, sp, target);
    // oracle: mean BCE with soft targets
    double expect = 0.0;
    Vec spv = tape3.value(sp).col(0);
    for (int i = 0; i < 5; ++i)
        expect += -(target(i) * std::log(spv(i)) + (1.0 - target(i)) * std::log(1.0 - spv(i)));
    expect /= 5.0;
    REQUIRE(tape3.value(loss)(0, 0) == Catch::Approx(expect).epsilon(1e-8));

    tape3.backward(loss);
    Mat lm = logits;
    auto f = [&]() {
        ad::Tape t;
        return t.value(estimator_loss(t, t.sigmoid(t.constant(lm)), target))(0, 0);
    };
    REQUIRE(oracle::max_rel_error(tape3.grad(x), oracle::finite_diff_grad(f, lm)) < 1e-4);
}

TEST_CASE("adversarial_loss: symmetric form is independent of S^A") {
    // S^p = 0.5 -> ln 2 whatever S^A is
    std::mt19937_64 rng(53);
    std::uniform_real_distribution<double> unif(0.01, 0.99);
    Vec sp_half = Vec::Constant(6, 0.5);
    Mat sa(6, 1);
    for (int i = 0; i < 6; ++i) sa(i, 0) = unif(rng);
    ad::Tape tape;
    REQUIRE(tape.value(adversarial_loss(tape, sp_half, tape.leaf(sa)))(0, 0) ==
            Catch::Approx(std::log(2.0)).epsilon(1e-12));

    // S^p = 0.9, n = 1 -> -(log .9 + log .1)/2 ~ 1.2040 for any S^A
    for (double a : {0.01, 0.3, 0.97}) {
        ad::Tape t;
        Vec sp1 = Vec::Constant(1, 0.9);
        const double got = t.value(adversarial_loss(t, sp1, t.leaf(Mat::Constant(1, 1, a))))(0, 0);
        REQUIRE(got == Catch::Approx(-(std::log(0.9) + std::log(0.1)) / 2.0).epsilon(1e-12));
    }

    // matches the oracle and the algebraic reduction on random inputs
    Vec sp(6);
    for (int i = 0; i < 6; ++i) sp(i) = unif(rng);
    ad::Tape t2;
    ad::Var sa_var = t2.leaf(sa);
    ad::Var loss = adversarial_loss(t2, sp, sa_var);
    const double got = t2.value(loss)(0, 0);
    Vec sa_col = sa.col(0);
    REQUIRE(got == Catch::Approx(oracle::adversarial_symmetric(sp, sa_col)).epsilon(1e-10));
    double reduced = 0.0;
    for (int i = 0; i < 6; ++i) reduced += std::log(sp(i)) + std::log(1.0 - sp(i));
    REQUIRE(got == Catch::Approx(-reduced / 12.0).epsilon(1e-10));

    // finite differences confirm a vanishing S^A gradient
    t2.backward(loss);
    REQUIRE(t2.grad(sa_var).cwiseAbs().maxCoeff() < 1e-12);
    Mat sam = sa;
    auto f = [&]() {
        ad::Tape t;
        return t.value(adversarial_loss(t, sp, t.constant(sam)))(0, 0);
    };
    REQUIRE(oracle::finite_diff_grad(f, sam).cwiseAbs().maxCoeff() < 1e-7);
}

TEST_CASE("frozen migration loss recomputes outliers but never flips") {
    std::mt19937_64 rng(54);
    Mat Z0 = oracle::random_matrix(30, 4, rng);
    std::vector<int> P;
    for (int i = 0; i < 30; ++i) P.push_back(i % 2);
    Vec w = Vec::Ones(30);

    ad::Tape tape;
    ad::Var z = tape.leaf(Z0);
    FrozenMigration fm = frozen_migration_loss(tape, z, P, w);
    Mat T = group_prototypes(Z0, P);
    REQUIRE(tape.value(fm.loss)(0, 0) ==
            Catch::Approx(oracle::migration(Z0, T, P, fm.outliers, w)).epsilon(1e-10));

    // all members identical per group -> no outliers -> zero loss
    Mat tight(8, 2);
    for (int i = 0; i < 4; ++i) tight.row(i) << 1, 0;
    for (int i = 4; i < 8; ++i) tight.row(i) << 0, 1;
    std::vector<int> P2{0, 0, 0, 0, 1, 1, 1, 1};
    ad::Tape tape2;
    FrozenMigration fm2 = frozen_migration_loss(tape2, tape2.leaf(tight), P2, Vec::Ones(8));
    REQUIRE(fm2.outliers.empty());
    REQUIRE(tape2.value(fm2.loss)(0, 0) == 0.0);
}

TEST_CASE("phase alternation touches only its own parameter family") {
    Graph g = small_training_graph();
    ModelBundle models = init_models(Backbone::GCN, 6, 8, 6, 2, 0.1, 10, 7);
    MigrationState frozen = frozen_raw_state(g);

    auto enc_hash = [&]() { return hash_params(params_of(models.encoder)); };
    auto cls_hash = [&]() { return hash_params(params_of(models.heads.classifier, "classifier")); };
    auto est_hash = [&]() { return hash_params(params_of(models.heads.estimator)); };
    auto adv_hash = [&]() { return hash_params(params_of(models.heads.adversary, "adversary")); };

    SupConfig cfg;
    cfg.epochs = 3;
    cfg.lambda = 5.0;
    cfg.beta = 0.1;
    cfg.adversary_objective = AdversaryObjective::Standard;  // live gradients everywhere
    cfg.master_seed = 7;
    std::uint64_t enc_h = enc_hash(), cls_h = cls_hash(), est_h = est_hash(), adv_h = adv_hash();
    cfg.phase_observer = [&](char phase, int) {
        const std::uint64_t e = enc_hash(), c = cls_hash(), s = est_hash(), a = adv_hash();
        switch (phase) {
            case 'a':
                REQUIRE(e == enc_h);
                REQUIRE(c == cls_h);
                REQUIRE(a == adv_h);  // estimator may change
                break;
            case 'b':
                REQUIRE(e == enc_h);
                REQUIRE(c == cls_h);
                REQUIRE(s == est_h);  // adversary may change
                break;
            case 'c':
                REQUIRE(s == est_h);
                REQUIRE(a == adv_h);  // encoder/classifier may change
                break;
        }
        enc_h = e;
        cls_h = c;
        est_h = s;
        adv_h = a;
    };
    sup_stage_train(g, models, frozen, cfg);
}

TEST_CASE("lambda=beta=0 reproduces a plain cross-entropy trainer bit for bit") {
    Graph g = small_training_graph(60);
    const std::vector<int> train_idx = g.split_indices(Split::Train);
    auto a_norm = std::make_shared<const SpMat>(normalize_adjacency(g.adj));
    const int epochs = 6;
    const double lr = 1e-3, wd = 1e-5;

    // reference: bare CE loop over encoder + classifier
    ModelBundle ref = init_models(Backbone::GCN, 6, 8, 6, 2, 0.1, 10, 11);
    AdamState ref_enc, ref_cls;
    std::vector<double> ref_losses;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        ad::Tape tape;
        TapeBinding be, bc;
        ad::Var z = encode_on_tape(tape, &be, ref.encoder, a_norm, g.X);
        ad::Var yh = classify_on_tape(tape, &bc, ref.heads, z);
        ad::Var loss = ce_loss(tape, yh, g.labels, train_idx);
        ref_losses.push_back(tape.value(loss)(0, 0));
        tape.backward(loss);
        std::vector<Mat> ge = be.grads(tape), gc = bc.grads(tape);
        for (std::size_t k = 0; k < ge.size(); ++k) ge[k] += wd * (*be.slots[k]);
        for (std::size_t k = 0; k < gc.size(); ++k) gc[k] += wd * (*bc.slots[k]);
        adam_step(be.slots, ge, ref_enc, lr);
        adam_step(bc.slots, gc, ref_cls, lr);
    }

    ModelBundle sup_models = init_models(Backbone::GCN, 6, 8, 6, 2, 0.1, 10, 11);
    SupConfig cfg;
    cfg.lambda = 0.0;
    cfg.beta = 0.0;
    cfg.epochs = epochs;
    cfg.master_seed = 11;
    SupResult res = sup_stage_train(g, sup_models, frozen_raw_state(g), cfg);

    REQUIRE(hash_params(params_of(sup_models.encoder)) ==
            hash_params(params_of(ref.encoder)));
    REQUIRE(hash_params(params_of(sup_models.heads.classifier, "classifier")) ==
            hash_params(params_of(ref.heads.classifier, "classifier")));
    for (int e = 0; e < epochs; ++e)
        REQUIRE(res.logs[static_cast<std::size_t>(e)].loss_ce ==
                ref_losses[static_cast<std::size_t>(e)]);
}

TEST_CASE("beta=0 leaves the adversary untouched by phase (c)") {
    Graph g = small_training_graph(61);
    ModelBundle models = init_models(Backbone::GCN, 6, 8, 6, 2, 0.1, 10, 13);
    const std::uint64_t adv_before =
        hash_params(params_of(models.heads.adversary, "adversary"));
    SupConfig cfg;
    cfg.lambda = 5.0;
    cfg.beta = 0.0;
    cfg.adversarial_enabled = false;  // wo_adv: phases (a)/(b) skipped entirely
    cfg.epochs = 4;
    cfg.master_seed = 13;
    sup_stage_train(g, models, frozen_raw_state(g), cfg);
    REQUIRE(hash_params(params_of(models.heads.adversary, "adversary")) == adv_before);
    REQUIRE(hash_params(params_of(models.heads.estimator)) != 0);  // untouched but present
}

TEST_CASE("frozen P is immutable through training and logs stay finite") {
    Graph g = small_training_graph(62);
    ModelBundle models = init_models(Backbone::GCN, 6, 8, 6, 2, 0.1, 10, 17);
    MigrationState frozen = frozen_raw_state(g);
    const std::uint64_t p_hash = hash_ints(frozen.P);

    SupConfig cfg;
    cfg.epochs = 12;
    cfg.lambda = 10.0;
    cfg.beta = 0.1;
    cfg.master_seed = 17;
    SupResult res = sup_stage_train(g, models, frozen, cfg);
    REQUIRE(hash_ints(frozen.P) == p_hash);
    REQUIRE(res.logs.size() == 12);
    for (const EpochLog& l : res.logs) {
        REQUIRE(std::isfinite(l.loss_ce));
        REQUIRE(std::isfinite(l.loss_mig));
        REQUIRE(std::isfinite(l.loss_adv));
        REQUIRE(std::isfinite(l.val_auc));
        REQUIRE(std::isfinite(l.val_delta_sp));
        REQUIRE(std::isfinite(l.val_delta_eo));
    }
    REQUIRE(res.best_epoch >= 0);
    REQUIRE(res.best_val_auc >= 0.0);
}

TEST_CASE("selection picks the best validation AUC with the fairness tie-break") {
    Graph g = small_training_graph(63);
    ModelBundle models = init_models(Backbone::GCN, 6, 8, 6, 2, 0.1, 10, 19);
    SupConfig cfg;
    cfg.epochs = 10;
    cfg.lambda = 0.0;
    cfg.beta = 0.0;
    cfg.master_seed = 19;
    SupResult res = sup_stage_train(g, models, frozen_raw_state(g), cfg);
    for (const EpochLog& l : res.logs) {
        const EpochLog& best = res.logs[static_cast<std::size_t>(res.best_epoch)];
        REQUIRE(l.val_auc <= best.val_auc + 1e-15);
        if (l.val_auc == best.val_auc)
            REQUIRE(best.val_delta_sp + best.val_delta_eo <=
                    l.val_delta_sp + l.val_delta_eo + 1e-15);
    }
}

TEST_CASE("numeric failures carry the phase tag and epoch") {
    Graph g = small_training_graph(64);
    ModelBundle models = init_models(Backbone::GCN, 6, 8, 6, 2, 0.1, 10, 23);
    models.heads.classifier.layers[0].W.setConstant(
        std::numeric_limits<double>::quiet_NaN());  // poison phase (c)
    SupConfig cfg;
    cfg.epochs = 2;
    cfg.master_seed = 23;
    try {
        sup_stage_train(g, models, frozen_raw_state(g), cfg);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        const std::string what = e.what();
        REQUIRE(what.find("phase c") != std::string::npos);
        REQUIRE(what.find("epoch 0") != std::string::npos);
    }
}

TEST_CASE("stage 2 requires a frozen state and valid config") {
    Graph g = small_training_graph(65);
    ModelBundle models = init_models(Backbone::GCN, 6, 8, 6, 2, 0.1, 10, 29);
    MigrationState raw = init_migration_state(g.sensitive());  // not frozen
    SupConfig cfg;
    cfg.epochs = 1;
    REQUIRE_THROWS_AS(sup_stage_train(g, models, raw, cfg), ContractError);
    raw.frozen = true;
    cfg.lambda = -1.0;
    REQUIRE_THROWS_AS(sup_stage_train(g, models, raw, cfg), ConfigError);
}
