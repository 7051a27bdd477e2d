#pragma once

#include <cmath>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "fairmig/autodiff.hpp"
#include "fairmig/common.hpp"
#include "fairmig/error.hpp"
#include "fairmig/graph.hpp"
#include "fairmig/rng.hpp"

namespace fairmig {

enum class Backbone { GCN, JK, APPNP };

inline std::string to_string(Backbone b) {
    switch (b) {
        case Backbone::GCN: return "gcn";
        case Backbone::JK: return "jk";
        case Backbone::APPNP: return "appnp";
    }
    throw ContractError("unknown backbone");
}

inline Backbone backbone_from_string(const std::string& s) {
    if (s == "gcn") return Backbone::GCN;
    if (s == "jk") return Backbone::JK;
    if (s == "appnp") return Backbone::APPNP;
    throw ConfigError("unknown backbone '" + s + "' (expected gcn|jk|appnp)");
}

struct Linear {
    Mat W;  // in x out
    Mat b;  // 1 x out
};

// Perceptron stack: ReLU between layers, linear output.
struct MlpParams {
    std::vector<Linear> layers;
    int in_dim() const { return static_cast<int>(layers.front().W.rows()); }
    int out_dim() const { return static_cast<int>(layers.back().W.cols()); }
};

struct EncoderParams {
    Backbone backbone = Backbone::GCN;
    int in_dim = 0;
    int hidden_dim = 16;
    int out_dim = 16;
    int n_layers = 2;
    double appnp_teleport = 0.1;
    int appnp_iterations = 10;
    std::vector<Linear> layers;  // conv weights (GCN/JK) or transform MLP (APPNP)
    Linear jk_proj;              // JK only: (n_layers*hidden) -> out
};

// One graph convolution feeding a perceptron head; reads (A, X), never Z.
struct EstimatorParams {
    Linear conv;  // K -> hidden
    MlpParams head;  // hidden -> 1
};

struct HeadParams {
    MlpParams decoder;     // d -> K
    MlpParams classifier;  // d -> 1, logistic output
    EstimatorParams estimator;
    MlpParams adversary;   // d -> 1, logistic output
};

struct ModelBundle {
    EncoderParams encoder;
    HeadParams heads;
};

// ---------------------------------------------------------------------------
// Parameter traversal

using ParamRefs = std::vector<std::pair<std::string, Mat*>>;

inline void collect_params(Linear& l, const std::string& prefix, ParamRefs& out) {
    out.emplace_back(prefix + ".W", &l.W);
    out.emplace_back(prefix + ".b", &l.b);
}

inline void collect_params(MlpParams& m, const std::string& prefix, ParamRefs& out) {
    for (std::size_t i = 0; i < m.layers.size(); ++i)
        collect_params(m.layers[i], prefix + ".layer" + std::to_string(i), out);
}

inline ParamRefs params_of(EncoderParams& p) {
    ParamRefs out;
    for (std::size_t i = 0; i < p.layers.size(); ++i)
        collect_params(p.layers[i], "encoder.layer" + std::to_string(i), out);
    if (p.backbone == Backbone::JK) collect_params(p.jk_proj, "encoder.jk_proj", out);
    return out;
}

inline ParamRefs params_of(EstimatorParams& p) {
    ParamRefs out;
    collect_params(p.conv, "estimator.conv", out);
    collect_params(p.head, "estimator.head", out);
    return out;
}

inline ParamRefs params_of(MlpParams& p, const std::string& prefix) {
    ParamRefs out;
    collect_params(p, prefix, out);
    return out;
}

inline std::uint64_t hash_params(const ParamRefs& refs) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& [name, mat] : refs) {
        h = hash_bytes(name, h);
        h = hash_matrix(*mat, h);
    }
    return h;
}

// ---------------------------------------------------------------------------
// Initialization

inline Linear glorot_linear(int in, int out, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> unif(-limit, limit);
    Linear l;
    l.W = Mat(in, out);
    for (int i = 0; i < in; ++i)
        for (int j = 0; j < out; ++j) l.W(i, j) = unif(rng);
    l.b = Mat::Zero(1, out);
    return l;
}

inline MlpParams init_mlp(int in, int hidden, int out, int n_layers, std::mt19937_64& rng) {
    if (n_layers < 1) throw ConfigError("mlp needs at least one layer");
    MlpParams m;
    if (n_layers == 1) {
        m.layers.push_back(glorot_linear(in, out, rng));
        return m;
    }
    m.layers.push_back(glorot_linear(in, hidden, rng));
    for (int l = 1; l < n_layers - 1; ++l) m.layers.push_back(glorot_linear(hidden, hidden, rng));
    m.layers.push_back(glorot_linear(hidden, out, rng));
    return m;
}

inline EncoderParams init_encoder(Backbone backbone, int in_dim, int hidden_dim, int out_dim,
                                  int n_layers, double appnp_teleport, int appnp_iterations,
                                  std::mt19937_64& rng) {
    if (n_layers < 1) throw ConfigError("encoder needs at least one layer");
    if (appnp_teleport <= 0.0 || appnp_teleport > 1.0)
        throw ConfigError("appnp teleport must lie in (0,1]");
    if (appnp_iterations < 1) throw ConfigError("appnp iterations must be >= 1");
    EncoderParams p;
    p.backbone = backbone;
    p.in_dim = in_dim;
    p.hidden_dim = hidden_dim;
    p.out_dim = out_dim;
    p.n_layers = n_layers;
    p.appnp_teleport = appnp_teleport;
    p.appnp_iterations = appnp_iterations;
    switch (backbone) {
        case Backbone::GCN: {
            int in = in_dim;
            for (int l = 0; l < n_layers; ++l) {
                const int out = (l == n_layers - 1) ? out_dim : hidden_dim;
                p.layers.push_back(glorot_linear(in, out, rng));
                in = out;
            }
            break;
        }
        case Backbone::JK: {
            int in = in_dim;
            for (int l = 0; l < n_layers; ++l) {
                p.layers.push_back(glorot_linear(in, hidden_dim, rng));
                in = hidden_dim;
            }
            p.jk_proj = glorot_linear(n_layers * hidden_dim, out_dim, rng);
            break;
        }
        case Backbone::APPNP: {
            // transform MLP, ReLU between, linear out; propagation is parameter-free
            int in = in_dim;
            for (int l = 0; l < n_layers; ++l) {
                const int out = (l == n_layers - 1) ? out_dim : hidden_dim;
                p.layers.push_back(glorot_linear(in, out, rng));
                in = out;
            }
            break;
        }
    }
    return p;
}

inline HeadParams init_heads(int embed_dim, int feature_dim, int hidden_dim, std::uint64_t master_seed) {
    HeadParams h;
    auto dec_rng = make_stream(master_seed, "init:decoder");
    h.decoder = init_mlp(embed_dim, hidden_dim, feature_dim, 2, dec_rng);
    auto cls_rng = make_stream(master_seed, "init:classifier");
    h.classifier = init_mlp(embed_dim, hidden_dim, 1, 2, cls_rng);
    auto est_rng = make_stream(master_seed, "init:estimator");
    h.estimator.conv = glorot_linear(feature_dim, hidden_dim, est_rng);
    h.estimator.head = init_mlp(hidden_dim, hidden_dim, 1, 2, est_rng);
    auto adv_rng = make_stream(master_seed, "init:adversary");
    h.adversary = init_mlp(embed_dim, hidden_dim, 1, 2, adv_rng);
    return h;
}

inline ModelBundle init_models(Backbone backbone, int feature_dim, int hidden_dim, int embed_dim,
                               int n_layers, double appnp_teleport, int appnp_iterations,
                               std::uint64_t master_seed) {
    ModelBundle m;
    auto enc_rng = make_stream(master_seed, "init:encoder");
    m.encoder = init_encoder(backbone, feature_dim, hidden_dim, embed_dim, n_layers,
                             appnp_teleport, appnp_iterations, enc_rng);
    m.heads = init_heads(embed_dim, feature_dim, hidden_dim, master_seed);
    return m;
}

// ---------------------------------------------------------------------------
// Tape forwards

// Records which parameter matrices entered a tape and as which leaves, so a
// trainer can read their gradients back off in the same order. A matrix bound
// twice (e.g. encoder weights shared across several forward passes on one
// tape) reuses its leaf, so gradients from all uses accumulate in one place.
struct TapeBinding {
    std::vector<Mat*> slots;
    std::vector<ad::Var> vars;

    ad::Var bind(ad::Tape& tape, Mat& m) {
        for (std::size_t k = 0; k < slots.size(); ++k)
            if (slots[k] == &m) return vars[k];
        ad::Var v = tape.leaf(m);
        slots.push_back(&m);
        vars.push_back(v);
        return v;
    }

    std::vector<Mat> grads(const ad::Tape& tape) const {
        std::vector<Mat> out;
        out.reserve(vars.size());
        for (ad::Var v : vars) out.push_back(tape.grad(v));
        return out;
    }
};

// Enter a parameter matrix as a differentiable leaf when bound, or as a
// constant (frozen) when binding is null.
inline ad::Var enter_param(ad::Tape& tape, TapeBinding* binding, Mat& m) {
    return binding ? binding->bind(tape, m) : tape.constant(m);
}

inline ad::Var linear_on_tape(ad::Tape& tape, TapeBinding* binding, Linear& l, ad::Var x) {
    return tape.add_rowvec(tape.matmul(x, enter_param(tape, binding, l.W)),
                           enter_param(tape, binding, l.b));
}

inline ad::Var mlp_on_tape(ad::Tape& tape, TapeBinding* binding, MlpParams& m, ad::Var x) {
    ad::Var h = x;
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        h = linear_on_tape(tape, binding, m.layers[l], h);
        if (l + 1 < m.layers.size()) h = tape.relu(h);
    }
    return h;
}

// Z = GNN(A, X) on the tape. `a_norm` must already be the normalized form.
inline ad::Var encode_on_tape(ad::Tape& tape, TapeBinding* binding, EncoderParams& p,
                              std::shared_ptr<const SpMat> a_norm, const Mat& X) {
    if (X.cols() != p.in_dim) throw ContractError("encoder input dim mismatch");
    ad::Var x = tape.constant(X);
    auto guarded = [&](int layer, auto&& fn) -> ad::Var {
        try {
            return fn();
        } catch (const NumericError& e) {
            throw NumericError("encoder layer " + std::to_string(layer) + ": " + e.what());
        }
    };
    switch (p.backbone) {
        case Backbone::GCN: {
            ad::Var h = x;
            for (int l = 0; l < p.n_layers; ++l)
                h = guarded(l, [&] {
                    ad::Var conv = tape.spmm(
                        a_norm, linear_on_tape(tape, binding, p.layers[static_cast<std::size_t>(l)], h));
                    return l + 1 < p.n_layers || p.n_layers == 1 ? tape.relu(conv) : conv;
                });
            return h;
        }
        case Backbone::JK: {
            std::vector<ad::Var> outs;
            ad::Var h = x;
            for (int l = 0; l < p.n_layers; ++l) {
                h = guarded(l, [&] {
                    return tape.relu(tape.spmm(
                        a_norm, linear_on_tape(tape, binding, p.layers[static_cast<std::size_t>(l)], h)));
                });
                outs.push_back(h);
            }
            return guarded(p.n_layers, [&] {
                return linear_on_tape(tape, binding, p.jk_proj, tape.concat_cols(outs));
            });
        }
        case Backbone::APPNP: {
            ad::Var h = x;
            for (int l = 0; l < p.n_layers; ++l) {
                h = guarded(l, [&] {
                    ad::Var o = linear_on_tape(tape, binding, p.layers[static_cast<std::size_t>(l)], h);
                    return l + 1 < p.n_layers ? tape.relu(o) : o;
                });
            }
            ad::Var z = h;
            for (int k = 0; k < p.appnp_iterations; ++k)
                z = guarded(p.n_layers + k, [&] {
                    return tape.add(tape.scale(tape.spmm(a_norm, z), 1.0 - p.appnp_teleport),
                                    tape.scale(h, p.appnp_teleport));
                });
            return z;
        }
    }
    throw ContractError("unknown backbone");
}

inline ad::Var decode_on_tape(ad::Tape& tape, TapeBinding* binding, HeadParams& heads, ad::Var z) {
    if (tape.value(z).cols() != heads.decoder.in_dim())
        throw ContractError("decoder input dim mismatch");
    return mlp_on_tape(tape, binding, heads.decoder, z);
}

inline ad::Var classify_on_tape(ad::Tape& tape, TapeBinding* binding, HeadParams& heads, ad::Var z) {
    if (tape.value(z).cols() != heads.classifier.in_dim())
        throw ContractError("classifier input dim mismatch");
    return tape.sigmoid(mlp_on_tape(tape, binding, heads.classifier, z));
}

inline ad::Var adversary_on_tape(ad::Tape& tape, TapeBinding* binding, HeadParams& heads, ad::Var z) {
    if (tape.value(z).cols() != heads.adversary.in_dim())
        throw ContractError("adversary input dim mismatch");
    return tape.sigmoid(mlp_on_tape(tape, binding, heads.adversary, z));
}

inline ad::Var estimator_on_tape(ad::Tape& tape, TapeBinding* binding, HeadParams& heads,
                                 std::shared_ptr<const SpMat> a_norm, const Mat& x_masked,
                                 int sensitive_index) {
    if (x_masked.cols() != heads.estimator.conv.W.rows())
        throw ContractError("estimator input dim mismatch");
    if (sensitive_index < 0 || sensitive_index >= x_masked.cols())
        throw ContractError("estimator sensitive index out of range");
    if (x_masked.col(sensitive_index).cwiseAbs().maxCoeff() != 0.0)
        throw ContractError("estimator input must have the sensitive column zeroed");
    ad::Var x = tape.constant(x_masked);
    ad::Var h = tape.relu(tape.spmm(
        a_norm, tape.add_rowvec(tape.matmul(x, enter_param(tape, binding, heads.estimator.conv.W)),
                                enter_param(tape, binding, heads.estimator.conv.b))));
    return tape.sigmoid(mlp_on_tape(tape, binding, heads.estimator.head, h));
}

// ---------------------------------------------------------------------------
// Plain (value) wrappers; the tape is an implementation detail here.

inline Mat encode(EncoderParams& p, const SpMat& adjacency, const Mat& X) {
    ad::Tape tape;
    auto a_norm = std::make_shared<const SpMat>(normalize_adjacency(adjacency));
    return tape.value(encode_on_tape(tape, nullptr, p, a_norm, X));
}

inline Mat decode(HeadParams& heads, const Mat& Z) {
    ad::Tape tape;
    return tape.value(decode_on_tape(tape, nullptr, heads, tape.constant(Z)));
}

inline Vec classify(HeadParams& heads, const Mat& Z) {
    ad::Tape tape;
    return tape.value(classify_on_tape(tape, nullptr, heads, tape.constant(Z))).col(0);
}

inline Vec adversary_predict(HeadParams& heads, const Mat& Z) {
    ad::Tape tape;
    return tape.value(adversary_on_tape(tape, nullptr, heads, tape.constant(Z))).col(0);
}

inline Vec estimate_sensitive(HeadParams& heads, const SpMat& adjacency, const Mat& x_masked,
                              int sensitive_index) {
    ad::Tape tape;
    auto a_norm = std::make_shared<const SpMat>(normalize_adjacency(adjacency));
    return tape.value(estimator_on_tape(tape, nullptr, heads, a_norm, x_masked, sensitive_index))
        .col(0);
}

}  // namespace fairmig
