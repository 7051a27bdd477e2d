#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "fairmig/model.hpp"
#include "fairmig/optimizer.hpp"
#include "oracle_helpers.hpp"

using namespace fairmig;

namespace {

ModelBundle tiny_models(Backbone b, int in_dim = 4, std::uint64_t seed = 1) {
    return init_models(b, in_dim, 5, 3, 2, 0.1, 10, seed);
}

SpMat path_adj(int n) {
    std::vector<std::pair<int, int>> e;
    for (int i = 0; i + 1 < n; ++i) e.emplace_back(i, i + 1);
    return edges_to_adjacency(n, e);
}

}  // namespace

TEST_CASE("1-layer GCN on an isolated node is the activated self-loop row") {
    EncoderParams p;
    p.backbone = Backbone::GCN;
    p.in_dim = 3;
    p.hidden_dim = 3;
    p.out_dim = 3;
    p.n_layers = 1;
    Linear ident;
    ident.W = Mat::Identity(3, 3);
    ident.b = Mat::Zero(1, 3);
    p.layers.push_back(ident);
    SpMat adj(1, 1);  // no edges; normalization adds the self-loop
    Mat X(1, 3);
    X << -1.0, 0.5, 2.0;
    Mat Z = encode(p, adj, X);
    REQUIRE(Z(0, 0) == 0.0);  // relu(-1)
    REQUIRE(Z(0, 1) == Catch::Approx(0.5));
    REQUIRE(Z(0, 2) == Catch::Approx(2.0));
}

TEST_CASE("2-layer GCN matches the dense brute-force forward on a path graph") {
    std::mt19937_64 rng(7);
    ModelBundle m = tiny_models(Backbone::GCN);
    SpMat adj = path_adj(3);
    Mat X = oracle::random_matrix(3, 4, rng);
    Mat Z = encode(m.encoder, adj, X);

    Mat dense_adj = Mat(adj);
    Mat h = oracle::dense_gcn_layer(dense_adj, X, m.encoder.layers[0].W, m.encoder.layers[0].b);
    Mat expect = oracle::dense_gcn_layer(dense_adj, h, m.encoder.layers[1].W, m.encoder.layers[1].b);
    REQUIRE(oracle::max_rel_error(Z, expect) < 1e-6);
}

TEST_CASE("encoder forward is bit-deterministic") {
    std::mt19937_64 rng(8);
    Mat X = oracle::random_matrix(6, 4, rng);
    SpMat adj = path_adj(6);
    for (Backbone b : {Backbone::GCN, Backbone::JK, Backbone::APPNP}) {
        ModelBundle m = tiny_models(b);
        Mat z1 = encode(m.encoder, adj, X);
        Mat z2 = encode(m.encoder, adj, X);
        REQUIRE((z1 - z2).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("APPNP with teleport 1 reduces to the transform MLP") {
    std::mt19937_64 rng(9);
    ModelBundle m = tiny_models(Backbone::APPNP);
    m.encoder.appnp_teleport = 1.0;
    SpMat adj = path_adj(5);
    Mat X = oracle::random_matrix(5, 4, rng);
    Mat Z = encode(m.encoder, adj, X);

    // transform = layer1 (relu) then layer0? No: layer0 then relu then layer1
    Mat h = (X * m.encoder.layers[0].W).rowwise() + m.encoder.layers[0].b.row(0);
    h = h.cwiseMax(0.0);
    Mat expect = (h * m.encoder.layers[1].W).rowwise() + m.encoder.layers[1].b.row(0);
    REQUIRE((Z - expect).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("JK concatenates all layer outputs through a linear projection") {
    std::mt19937_64 rng(10);
    ModelBundle m = tiny_models(Backbone::JK);
    SpMat adj = path_adj(4);
    Mat X = oracle::random_matrix(4, 4, rng);
    Mat z_before = encode(m.encoder, adj, X);
    REQUIRE(m.encoder.jk_proj.W.rows() == 2 * 5);  // n_layers * hidden
    REQUIRE(z_before.cols() == 3);

    // sensitivity: perturbing the first conv layer changes the output
    m.encoder.layers[0].W(0, 0) += 0.25;
    Mat z_after = encode(m.encoder, adj, X);
    REQUIRE((z_before - z_after).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("decode/classify are per-row maps: permutation equivariance") {
    std::mt19937_64 rng(11);
    ModelBundle m = tiny_models(Backbone::GCN);
    Mat Z = oracle::random_matrix(5, 3, rng);
    std::vector<int> perm{3, 1, 4, 0, 2};
    Mat Zp(5, 3);
    for (int i = 0; i < 5; ++i) Zp.row(i) = Z.row(perm[static_cast<std::size_t>(i)]);

    Mat rec = decode(m.heads, Z);
    Mat rec_p = decode(m.heads, Zp);
    for (int i = 0; i < 5; ++i)
        REQUIRE((rec_p.row(i) - rec.row(perm[static_cast<std::size_t>(i)])).cwiseAbs().maxCoeff() ==
                0.0);

    Vec cls = classify(m.heads, Z);
    Vec cls_p = classify(m.heads, Zp);
    for (int i = 0; i < 5; ++i) REQUIRE(cls_p(i) == cls(perm[static_cast<std::size_t>(i)]));
}

TEST_CASE("zero-parameter heads give zero reconstruction and 0.5 probabilities") {
    ModelBundle m = tiny_models(Backbone::GCN);
    for (Linear& l : m.heads.decoder.layers) {
        l.W.setZero();
        l.b.setZero();
    }
    for (Linear& l : m.heads.classifier.layers) {
        l.W.setZero();
        l.b.setZero();
    }
    Mat Z = Mat::Random(4, 3);
    REQUIRE(decode(m.heads, Z).cwiseAbs().maxCoeff() == 0.0);
    Vec p = classify(m.heads, Z);
    for (int i = 0; i < 4; ++i) REQUIRE(p(i) == Catch::Approx(0.5));
}

TEST_CASE("decode finite-difference Jacobian on a 2-row input") {
    std::mt19937_64 rng(12);
    ModelBundle m = tiny_models(Backbone::GCN);
    Mat Z0 = oracle::random_matrix(2, 3, rng);

    ad::Tape tape;
    ad::Var z = tape.leaf(Z0);
    ad::Var out = decode_on_tape(tape, nullptr, m.heads, z);
    ad::Var loss = tape.mean_all(tape.square(out));
    tape.backward(loss);
    Mat analytic = tape.grad(z);

    Mat zm = Z0;
    auto f = [&]() {
        ad::Tape t;
        ad::Var o = decode_on_tape(t, nullptr, m.heads, t.constant(zm));
        return t.value(t.mean_all(t.square(o)))(0, 0);
    };
    REQUIRE(oracle::max_rel_error(analytic, oracle::finite_diff_grad(f, zm)) < 1e-4);
}

TEST_CASE("classify finite-difference check") {
    std::mt19937_64 rng(13);
    ModelBundle m = tiny_models(Backbone::GCN);
    Mat Z0 = oracle::random_matrix(3, 3, rng);
    ad::Tape tape;
    ad::Var z = tape.leaf(Z0);
    ad::Var loss = tape.mean_all(classify_on_tape(tape, nullptr, m.heads, z));
    tape.backward(loss);
    Mat zm = Z0;
    auto f = [&]() {
        ad::Tape t;
        return t.value(t.mean_all(classify_on_tape(t, nullptr, m.heads, t.constant(zm))))(0, 0);
    };
    REQUIRE(oracle::max_rel_error(tape.grad(z), oracle::finite_diff_grad(f, zm)) < 1e-4);
}

TEST_CASE("estimator refuses a non-masked sensitive column and stays in (0,1)") {
    std::mt19937_64 rng(14);
    ModelBundle m = tiny_models(Backbone::GCN);
    SpMat adj = path_adj(3);
    Mat X = oracle::random_matrix(3, 4, rng);
    REQUIRE_THROWS_AS(estimate_sensitive(m.heads, adj, X, 0), ContractError);
    Mat masked = X;
    masked.col(0).setZero();
    Vec sp1 = estimate_sensitive(m.heads, adj, masked, 0);
    Vec sp2 = estimate_sensitive(m.heads, adj, masked, 0);
    for (int i = 0; i < 3; ++i) {
        REQUIRE(sp1(i) > 0.0);
        REQUIRE(sp1(i) < 1.0);
        REQUIRE(sp1(i) == sp2(i));
    }
}

TEST_CASE("estimator agrees with a dense one-conv oracle on a 3-node graph") {
    std::mt19937_64 rng(15);
    ModelBundle m = tiny_models(Backbone::GCN);
    SpMat adj = path_adj(3);
    Mat X = oracle::random_matrix(3, 4, rng);
    X.col(0).setZero();
    Vec sp = estimate_sensitive(m.heads, adj, X, 0);

    Mat h = oracle::dense_gcn_layer(Mat(adj), X, m.heads.estimator.conv.W, m.heads.estimator.conv.b);
    Mat a = (h * m.heads.estimator.head.layers[0].W).rowwise() +
            m.heads.estimator.head.layers[0].b.row(0);
    a = a.cwiseMax(0.0);
    Mat logits = (a * m.heads.estimator.head.layers[1].W).rowwise() +
                 m.heads.estimator.head.layers[1].b.row(0);
    for (int i = 0; i < 3; ++i) {
        const double expect = 1.0 / (1.0 + std::exp(-logits(i, 0)));
        REQUIRE(sp(i) == Catch::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("adversary output is per-row and in (0,1)") {
    std::mt19937_64 rng(16);
    ModelBundle m = tiny_models(Backbone::GCN);
    Mat Z = oracle::random_matrix(4, 3, rng);
    Vec sa = adversary_predict(m.heads, Z);
    for (int i = 0; i < 4; ++i) {
        REQUIRE(sa(i) > 0.0);
        REQUIRE(sa(i) < 1.0);
    }
    REQUIRE_THROWS_AS(adversary_predict(m.heads, oracle::random_matrix(4, 7, rng)), ContractError);
}

TEST_CASE("adam_step: zero grads from a fresh state leave params unchanged") {
    Mat a = Mat::Constant(2, 2, 1.5);
    Mat b = Mat::Constant(1, 3, -0.5);
    const Mat a0 = a, b0 = b;
    AdamState st;
    adam_step({&a, &b}, {Mat::Zero(2, 2), Mat::Zero(1, 3)}, st, 1e-3);
    REQUIRE((a - a0).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE((b - b0).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("adam_step is deterministic and rejects bad gradients") {
    Mat x1 = Mat::Constant(1, 1, 2.0), x2 = Mat::Constant(1, 1, 2.0);
    AdamState s1, s2;
    adam_step({&x1}, {Mat::Constant(1, 1, 0.3)}, s1, 1e-2);
    adam_step({&x2}, {Mat::Constant(1, 1, 0.3)}, s2, 1e-2);
    REQUIRE(x1(0, 0) == x2(0, 0));

    Mat bad(1, 1);
    bad(0, 0) = std::numeric_limits<double>::infinity();
    AdamState s3;
    Mat y = Mat::Zero(1, 1);
    REQUIRE_THROWS_AS(adam_step({&y}, {bad}, s3, 1e-2), NumericError);
    REQUIRE_THROWS_AS(adam_step({&y}, {Mat::Zero(2, 2)}, s3, 1e-2), ContractError);
}

TEST_CASE("adam converges on a scalar quadratic within 1e-6 in <= 10k steps") {
    Mat x = Mat::Constant(1, 1, 0.0);
    const double target = 1.37;
    AdamState st;
    for (int step = 0; step < 10000; ++step) {
        Mat grad = Mat::Constant(1, 1, 2.0 * (x(0, 0) - target));  // d/dx (x-c)^2
        adam_step({&x}, {grad}, st, 1e-2);
        if (std::abs(x(0, 0) - target) < 1e-6) break;
    }
    REQUIRE(std::abs(x(0, 0) - target) < 1e-6);
}

TEST_CASE("encoder numeric errors carry the layer index") {
    ModelBundle m = tiny_models(Backbone::GCN);
    m.encoder.layers[1].W.setConstant(1e308);  // overflow in layer 1
    SpMat adj = path_adj(3);
    Mat X = Mat::Constant(3, 4, 1e5);
    try {
        encode(m.encoder, adj, X);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        REQUIRE(std::string(e.what()).find("layer 1") != std::string::npos);
    }
}

TEST_CASE("end-to-end parameter gradients match finite differences per backbone") {
    std::mt19937_64 rng(18);
    SpMat adj = path_adj(6);
    Mat X = oracle::random_matrix(6, 4, rng);
    auto a_norm = std::make_shared<const SpMat>(normalize_adjacency(adj));

    for (Backbone b : {Backbone::GCN, Backbone::JK, Backbone::APPNP}) {
        ModelBundle m = tiny_models(b, 4, 5 + static_cast<std::uint64_t>(b));
        if (b == Backbone::APPNP) m.encoder.appnp_iterations = 3;

        ad::Tape tape;
        TapeBinding bind;
        ad::Var z = encode_on_tape(tape, &bind, m.encoder, a_norm, X);
        ad::Var loss = tape.mean_all(tape.square(z));
        tape.backward(loss);
        std::vector<Mat> analytic = bind.grads(tape);

        for (std::size_t k = 0; k < bind.slots.size(); ++k) {
            Mat& param = *bind.slots[k];
            auto f = [&]() {
                ad::Tape t;
                ad::Var zz = encode_on_tape(t, nullptr, m.encoder, a_norm, X);
                return t.value(t.mean_all(t.square(zz)))(0, 0);
            };
            Mat fd = oracle::finite_diff_grad(f, param);
            INFO("backbone " << to_string(b) << " param " << k);
            REQUIRE(oracle::max_rel_error(analytic[k], fd) < 1e-4);
        }
    }
}
