#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "fairmig/graph.hpp"

namespace fairmig {

// Controlled testbed: two demographic groups, per-group label skew, tunable
// edge homophily and a feature channel that leaks the sensitive attribute.
struct SyntheticSpec {
    int n_nodes = 2000;
    std::array<double, 2> group_fractions{0.5, 0.5};   // P(s=0), P(s=1)
    std::array<double, 2> label_skew_per_group{0.5, 0.5};  // P(y=1 | s)
    double homophily = 0.5;                            // >0.5 favors within-group edges
    int feature_dim = 8;
    double sensitive_feature_leakage = 0.0;            // in [0,1]
    std::uint64_t seed = 0;
    double mean_degree = 10.0;
};

inline void validate(const SyntheticSpec& spec) {
    if (spec.n_nodes < 10) throw ConfigError("synthetic graph needs at least 10 nodes");
    auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!prob(spec.group_fractions[0]) || !prob(spec.group_fractions[1]) ||
        !prob(spec.label_skew_per_group[0]) || !prob(spec.label_skew_per_group[1]) ||
        !prob(spec.homophily) || !prob(spec.sensitive_feature_leakage))
        throw ConfigError("synthetic probabilities must lie in [0,1]");
    if (std::abs(spec.group_fractions[0] + spec.group_fractions[1] - 1.0) > 1e-9)
        throw ConfigError("group fractions must sum to 1");
    if (spec.feature_dim < 2) throw ConfigError("feature_dim must be >= 2");
    if (spec.mean_degree <= 0.0) throw ConfigError("mean_degree must be positive");
}

// Column layout: 0 = sensitive attribute, 1 = leakage channel
// leak * (2s-1) + sqrt(1-leak^2) * noise, 2..3 = label channels (2y-1) + noise
// when present, remaining columns pure noise.
inline Graph generate_synthetic(const SyntheticSpec& spec) {
    validate(spec);
    auto rng = make_stream(spec.seed, "synth");
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const int n = spec.n_nodes;
    const int K = spec.feature_dim;

    std::vector<int> s(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) s[static_cast<std::size_t>(i)] = unif(rng) < spec.group_fractions[1] ? 1 : 0;
    std::vector<int> y(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        y[static_cast<std::size_t>(i)] =
            unif(rng) < spec.label_skew_per_group[static_cast<std::size_t>(s[static_cast<std::size_t>(i)])] ? 1 : 0;

    Graph g;
    g.n = n;
    g.sensitive_index = 0;
    g.X = Mat(n, K);
    const double rho = spec.sensitive_feature_leakage;
    const double mix = std::sqrt(std::max(0.0, 1.0 - rho * rho));
    for (int i = 0; i < n; ++i) {
        g.X(i, 0) = s[static_cast<std::size_t>(i)];
        g.X(i, 1) = rho * (2.0 * s[static_cast<std::size_t>(i)] - 1.0) + mix * gauss(rng);
        for (int j = 2; j < K; ++j) {
            const double noise = gauss(rng);
            if (j <= 3)
                g.X(i, j) = (2.0 * y[static_cast<std::size_t>(i)] - 1.0) + noise;
            else
                g.X(i, j) = noise;
        }
    }
    g.labels = IVec(n);
    for (int i = 0; i < n; ++i) g.labels(i) = y[static_cast<std::size_t>(i)];
    g.split.assign(static_cast<std::size_t>(n), Split::None);
    g.feature_names.clear();
    for (int j = 0; j < K; ++j) {
        if (j == 0)
            g.feature_names.push_back("sensitive");
        else if (j == 1)
            g.feature_names.push_back("leak");
        else
            g.feature_names.push_back("f" + std::to_string(j));
    }
    g.label_name = "label";

    const double p_base = spec.mean_degree / static_cast<double>(n - 1);
    const double p_within = std::min(1.0, 2.0 * spec.homophily * p_base);
    const double p_cross = std::min(1.0, 2.0 * (1.0 - spec.homophily) * p_base);
    std::vector<std::pair<int, int>> edges;
    edges.reserve(static_cast<std::size_t>(spec.mean_degree * n / 2 * 1.2));
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            const double p =
                s[static_cast<std::size_t>(i)] == s[static_cast<std::size_t>(j)] ? p_within : p_cross;
            if (unif(rng) < p) edges.emplace_back(i, j);
        }
    }
    g.adj = edges_to_adjacency(n, edges);
    validate(g);
    return g;
}

}  // namespace fairmig
