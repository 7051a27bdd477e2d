#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "fairmig/autodiff.hpp"
#include "fairmig/common.hpp"
#include "fairmig/error.hpp"

namespace fairmig {

struct GroupStats {
    int count = 0;
    double mu = 0.0;
    double sigma = 0.0;  // population standard deviation
};

struct MigrationRecord {
    int epoch = 0;
    double mu0 = 0.0, sigma0 = 0.0, mu1 = 0.0, sigma1 = 0.0;
    int flips_0to1 = 0;
    int flips_1to0 = 0;
    int n_skipped = 0;
};

// Pseudo-demographic group assignment and its per-epoch bookkeeping. P starts
// as the raw sensitive vector and is only ever changed by migrate_groups;
// once frozen it is immutable.
struct MigrationState {
    std::vector<int> P;
    Mat T;  // 2 x d prototypes as of the last refresh
    Vec Q;
    std::array<GroupStats, 2> group_stats;
    std::vector<int> outliers;
    bool frozen = false;
    int min_group_size = 2;
    std::vector<MigrationRecord> history;

    std::array<int, 2> group_counts() const {
        std::array<int, 2> c{0, 0};
        for (int p : P) c[static_cast<std::size_t>(p)]++;
        return c;
    }
};

inline MigrationState init_migration_state(const Vec& sensitive) {
    MigrationState st;
    const int n = static_cast<int>(sensitive.size());
    st.P.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double s = sensitive(i);
        if (s != 0.0 && s != 1.0) throw ContractError("pseudo groups must start from binary S");
        st.P[static_cast<std::size_t>(i)] = static_cast<int>(s);
    }
    st.min_group_size = std::max(2, n / 100);
    return st;
}

// w_i = max(|S=0|, |S=1|) / |group of i|, computed once from the raw
// sensitive vector; min(w) == 1 on the majority group.
inline Vec reweight(const Vec& sensitive) {
    const int n = static_cast<int>(sensitive.size());
    int c0 = 0, c1 = 0;
    for (int i = 0; i < n; ++i) {
        const double s = sensitive(i);
        if (s != 0.0 && s != 1.0) throw ContractError("reweight expects binary S");
        (s == 0.0 ? c0 : c1)++;
    }
    if (c0 == 0 || c1 == 0) throw ConfigError("reweight requires both raw groups non-empty");
    const double top = static_cast<double>(std::max(c0, c1));
    Vec w(n);
    for (int i = 0; i < n; ++i)
        w(i) = top / static_cast<double>(sensitive(i) == 0.0 ? c0 : c1);
    return w;
}

// T_j = sum of embedding rows of group j (a sum, not a mean; downstream
// cosines are scale invariant).
inline Mat group_prototypes(const Mat& Z, const std::vector<int>& P) {
    if (static_cast<Eigen::Index>(P.size()) != Z.rows())
        throw ContractError("group_prototypes size mismatch");
    Mat T = Mat::Zero(2, Z.cols());
    std::array<int, 2> counts{0, 0};
    for (std::size_t i = 0; i < P.size(); ++i) {
        if (P[i] != 0 && P[i] != 1) throw ContractError("pseudo group labels must be 0/1");
        T.row(P[i]) += Z.row(static_cast<Eigen::Index>(i));
        counts[static_cast<std::size_t>(P[i])]++;
    }
    if (counts[0] == 0 || counts[1] == 0)
        throw MigrationDegeneracyError("a pseudo group is empty; prototypes undefined");
    return T;
}

inline double cosine_guarded(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b,
                             double eps = 1e-12) {
    const double na = std::max(a.norm(), eps);
    const double nb = std::max(b.norm(), eps);
    return a.dot(b) / (na * nb);
}

struct SimilarityResult {
    Vec Q;
    std::array<GroupStats, 2> stats;
};

// Q_i = cos(T_{P_i}, Z_i); per-group mean and population std of Q.
inline SimilarityResult group_similarities(const Mat& Z, const Mat& T, const std::vector<int>& P) {
    if (static_cast<Eigen::Index>(P.size()) != Z.rows())
        throw ContractError("group_similarities size mismatch");
    if (T.rows() != 2 || T.cols() != Z.cols()) throw ContractError("prototype shape mismatch");
    SimilarityResult r;
    const int n = static_cast<int>(Z.rows());
    r.Q = Vec(n);
    std::array<double, 2> sum{0.0, 0.0};
    std::array<int, 2> cnt{0, 0};
    for (int i = 0; i < n; ++i) {
        const int p = P[static_cast<std::size_t>(i)];
        r.Q(i) = cosine_guarded(T.row(p), Z.row(i));
        sum[static_cast<std::size_t>(p)] += r.Q(i);
        cnt[static_cast<std::size_t>(p)]++;
    }
    std::array<double, 2> sq{0.0, 0.0};
    std::array<double, 2> mu{0.0, 0.0};
    for (int k = 0; k < 2; ++k)
        if (cnt[static_cast<std::size_t>(k)] > 0)
            mu[static_cast<std::size_t>(k)] =
                sum[static_cast<std::size_t>(k)] / cnt[static_cast<std::size_t>(k)];
    for (int i = 0; i < n; ++i) {
        const int p = P[static_cast<std::size_t>(i)];
        const double d = r.Q(i) - mu[static_cast<std::size_t>(p)];
        sq[static_cast<std::size_t>(p)] += d * d;
    }
    for (int k = 0; k < 2; ++k) {
        auto& gs = r.stats[static_cast<std::size_t>(k)];
        gs.count = cnt[static_cast<std::size_t>(k)];
        gs.mu = mu[static_cast<std::size_t>(k)];
        gs.sigma = gs.count > 0 ? std::sqrt(sq[static_cast<std::size_t>(k)] / gs.count) : 0.0;
    }
    return r;
}

// O = { i : Q_i < mu_{P_i} - 2 sigma_{P_i} }, strict; ascending index order.
inline std::vector<int> detect_outliers(const Vec& Q, const std::array<GroupStats, 2>& stats,
                                        const std::vector<int>& P) {
    if (static_cast<Eigen::Index>(P.size()) != Q.size())
        throw ContractError("detect_outliers size mismatch");
    std::vector<int> O;
    for (int i = 0; i < static_cast<int>(P.size()); ++i) {
        const auto& gs = stats[static_cast<std::size_t>(P[static_cast<std::size_t>(i)])];
        if (Q(i) < gs.mu - 2.0 * gs.sigma) O.push_back(i);
    }
    return O;
}

// Refresh T/Q/stats/outliers from the current embedding under the current P.
inline void refresh_similarity(MigrationState& st, const Mat& Z) {
    st.T = group_prototypes(Z, st.P);
    SimilarityResult r = group_similarities(Z, st.T, st.P);
    st.Q = std::move(r.Q);
    st.group_stats = r.stats;
    st.outliers = detect_outliers(st.Q, st.group_stats, st.P);
}

// Flip P on the outlier set, in ascending index order, skipping any flip that
// would leave the source group below min_group_size. Appends a history record
// built from the state's current stats.
inline MigrationState migrate_groups(const MigrationState& state, const std::vector<int>& O) {
    if (state.frozen) throw ContractError("migrate_groups on frozen state");
    MigrationState next = state;
    auto counts = next.group_counts();
    MigrationRecord rec;
    rec.epoch = static_cast<int>(next.history.size());
    rec.mu0 = state.group_stats[0].mu;
    rec.sigma0 = state.group_stats[0].sigma;
    rec.mu1 = state.group_stats[1].mu;
    rec.sigma1 = state.group_stats[1].sigma;
    for (int i : O) {
        if (i < 0 || i >= static_cast<int>(next.P.size()))
            throw ContractError("outlier index out of range");
        const int from = next.P[static_cast<std::size_t>(i)];
        if (counts[static_cast<std::size_t>(from)] - 1 < next.min_group_size) {
            rec.n_skipped++;
            continue;
        }
        next.P[static_cast<std::size_t>(i)] = 1 - from;
        counts[static_cast<std::size_t>(from)]--;
        counts[static_cast<std::size_t>(1 - from)]++;
        (from == 0 ? rec.flips_0to1 : rec.flips_1to0)++;
    }
    next.history.push_back(rec);
    return next;
}

// L_mig = (1/|O|) sum_{i in O} w_i (1 - cos(Z_i, T_{1-P_i})). Gradients reach
// Z only; prototypes enter as constants. Empty O yields the constant 0.
inline ad::Var migration_loss(ad::Tape& tape, ad::Var z, const Mat& T, const std::vector<int>& P,
                              const std::vector<int>& O, const Vec& w) {
    if (O.empty()) return tape.constant(Mat::Zero(1, 1));
    const Mat& Z = tape.value(z);
    if (static_cast<Eigen::Index>(P.size()) != Z.rows() || w.size() != Z.rows())
        throw ContractError("migration_loss size mismatch");
    Mat opposite(static_cast<Eigen::Index>(O.size()), T.cols());
    Mat weights(static_cast<Eigen::Index>(O.size()), 1);
    for (std::size_t k = 0; k < O.size(); ++k) {
        const int i = O[k];
        opposite.row(static_cast<Eigen::Index>(k)) = T.row(1 - P[static_cast<std::size_t>(i)]);
        weights(static_cast<Eigen::Index>(k), 0) = w(i);
    }
    ad::Var sel = tape.gather_rows(z, O);
    ad::Var cos = tape.rowwise_cosine(sel, tape.constant(opposite));
    return tape.mean_all(tape.cmul(tape.one_minus(cos), weights));
}

enum class MigrationRoundsOutcome { FixedPoint, Cycle, BoundReached };

inline std::string to_string(MigrationRoundsOutcome o) {
    switch (o) {
        case MigrationRoundsOutcome::FixedPoint: return "fixed_point";
        case MigrationRoundsOutcome::Cycle: return "cycle";
        case MigrationRoundsOutcome::BoundReached: return "bound_reached";
    }
    return "?";
}

struct MigrationRoundsResult {
    MigrationRoundsOutcome outcome = MigrationRoundsOutcome::BoundReached;
    int rounds = 0;
    MigrationState state;
};

// Repeated detect/migrate rounds against a fixed embedding: stops at a fixed
// point (a round applying no flips), a revisited assignment (cycle), or the
// round bound.
inline MigrationRoundsResult run_migration_rounds(const Mat& Z, MigrationState state,
                                                  int max_rounds = 50) {
    std::set<std::uint64_t> seen;
    seen.insert(hash_ints(state.P));
    MigrationRoundsResult res;
    for (int r = 0; r < max_rounds; ++r) {
        refresh_similarity(state, Z);
        MigrationState next = migrate_groups(state, state.outliers);
        const MigrationRecord& rec = next.history.back();
        res.rounds = r + 1;
        if (rec.flips_0to1 + rec.flips_1to0 == 0) {
            res.outcome = MigrationRoundsOutcome::FixedPoint;
            res.state = std::move(next);
            return res;
        }
        state = std::move(next);
        if (!seen.insert(hash_ints(state.P)).second) {
            res.outcome = MigrationRoundsOutcome::Cycle;
            res.state = std::move(state);
            return res;
        }
    }
    res.outcome = MigrationRoundsOutcome::BoundReached;
    res.state = std::move(state);
    return res;
}

}  // namespace fairmig
