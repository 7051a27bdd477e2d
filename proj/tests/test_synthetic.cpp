#include <catch2/catch_amalgamated.hpp>

#include "fairmig/synthetic.hpp"
#include "oracle_helpers.hpp"

using namespace fairmig;

namespace {

struct EdgeRates {
    double within = 0.0, cross = 0.0;
};

EdgeRates edge_rates(const Graph& g) {
    long within_pairs = 0, cross_pairs = 0, within_edges = 0, cross_edges = 0;
    for (int i = 0; i < g.n; ++i) {
        for (int j = i + 1; j < g.n; ++j) {
            const bool same = g.X(i, 0) == g.X(j, 0);
            (same ? within_pairs : cross_pairs)++;
            if (g.adj.coeff(i, j) != 0.0) (same ? within_edges : cross_edges)++;
        }
    }
    return {static_cast<double>(within_edges) / within_pairs,
            static_cast<double>(cross_edges) / cross_pairs};
}

}  // namespace

TEST_CASE("synthetic generation is deterministic for a fixed spec") {
    SyntheticSpec spec;
    spec.n_nodes = 200;
    spec.seed = 42;
    spec.sensitive_feature_leakage = 0.5;
    Graph a = generate_synthetic(spec);
    Graph b = generate_synthetic(spec);
    REQUIRE((a.X - b.X).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE(SpMat(a.adj - b.adj).norm() == 0.0);
    REQUIRE(a.labels == b.labels);
}

TEST_CASE("label skew per group lands near the spec at n >= 2000") {
    SyntheticSpec spec;
    spec.n_nodes = 2000;
    spec.seed = 9;
    spec.label_skew_per_group = {0.8, 0.3};
    Graph g = generate_synthetic(spec);
    std::array<long, 2> n{0, 0}, pos{0, 0};
    for (int i = 0; i < g.n; ++i) {
        const auto s = static_cast<std::size_t>(g.X(i, 0));
        n[s]++;
        if (g.labels(i) == 1) pos[s]++;
    }
    REQUIRE(std::abs(static_cast<double>(pos[0]) / n[0] - 0.8) < 0.05);
    REQUIRE(std::abs(static_cast<double>(pos[1]) / n[1] - 0.3) < 0.05);
}

TEST_CASE("homophily controls the within/cross edge rate ordering") {
    SyntheticSpec spec;
    spec.n_nodes = 1500;
    spec.seed = 21;

    spec.homophily = 0.8;
    EdgeRates high = edge_rates(generate_synthetic(spec));
    REQUIRE(high.within > high.cross);

    spec.homophily = 0.2;
    EdgeRates low = edge_rates(generate_synthetic(spec));
    REQUIRE(low.within < low.cross);
}

TEST_CASE("homophily 0.5 gives equal rates within 10 percent") {
    SyntheticSpec spec;
    spec.n_nodes = 5000;
    spec.seed = 33;
    spec.homophily = 0.5;
    EdgeRates r = edge_rates(generate_synthetic(spec));
    REQUIRE(std::abs(r.within - r.cross) / std::max(r.within, r.cross) < 0.10);
}

TEST_CASE("leakage zero means no feature-sensitive correlation at n=5000") {
    SyntheticSpec spec;
    spec.n_nodes = 5000;
    spec.seed = 77;
    spec.sensitive_feature_leakage = 0.0;
    Graph g = generate_synthetic(spec);
    REQUIRE(std::abs(oracle::sample_correlation(g.X.col(1), g.X.col(0))) < 0.05);

    spec.sensitive_feature_leakage = 0.9;
    Graph biased = generate_synthetic(spec);
    REQUIRE(oracle::sample_correlation(biased.X.col(1), biased.X.col(0)) > 0.5);
}

TEST_CASE("spec validation") {
    SyntheticSpec spec;
    spec.n_nodes = 5;
    REQUIRE_THROWS_AS(generate_synthetic(spec), ConfigError);
    spec.n_nodes = 100;
    spec.group_fractions = {0.6, 0.6};
    REQUIRE_THROWS_AS(generate_synthetic(spec), ConfigError);
    spec.group_fractions = {0.5, 0.5};
    spec.feature_dim = 1;
    REQUIRE_THROWS_AS(generate_synthetic(spec), ConfigError);
    spec.feature_dim = 2;
    spec.homophily = 1.5;
    REQUIRE_THROWS_AS(generate_synthetic(spec), ConfigError);
}
