#pragma once

#include <algorithm>
#include <array>
#include <string>
#include <vector>

#include "fairmig/common.hpp"
#include "fairmig/error.hpp"
#include "fairmig/migration.hpp"

namespace fairmig {

// Probability that a random positive outranks a random negative; ties count
// one half (Mann-Whitney convention), computed via average ranks.
inline double auc(const Vec& scores, const IVec& labels, const std::vector<int>& mask) {
    std::vector<std::pair<double, int>> pts;
    pts.reserve(mask.size());
    int n_pos = 0, n_neg = 0;
    for (int i : mask) {
        const int y = labels(i);
        if (y != 0 && y != 1) throw ContractError("auc labels must be binary on the mask");
        pts.emplace_back(scores(i), y);
        (y == 1 ? n_pos : n_neg)++;
    }
    if (n_pos == 0 || n_neg == 0)
        throw MetricUndefinedError("auc needs both classes in the mask");
    std::sort(pts.begin(), pts.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < pts.size()) {
        std::size_t j = i;
        while (j < pts.size() && pts[j].first == pts[i].first) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks are 1-based
        for (std::size_t k = i; k < j; ++k)
            if (pts[k].second == 1) rank_sum_pos += avg_rank;
        i = j;
    }
    const double u = rank_sum_pos - static_cast<double>(n_pos) * (n_pos + 1) / 2.0;
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// y_hat_i = 1 iff score_i >= threshold.
inline IVec binarize(const Vec& scores, double threshold = 0.5) {
    if (!(threshold > 0.0 && threshold < 1.0))
        throw ConfigError("decision threshold must lie strictly inside (0,1)");
    IVec out(scores.size());
    for (Eigen::Index i = 0; i < scores.size(); ++i) out(i) = scores(i) >= threshold ? 1 : 0;
    return out;
}

// | P(yhat=1 | s=0) - P(yhat=1 | s=1) | over the mask.
inline double delta_sp(const IVec& y_hat, const Vec& sensitive, const std::vector<int>& mask) {
    std::array<long, 2> total{0, 0};
    std::array<long, 2> positive{0, 0};
    for (int i : mask) {
        const double s = sensitive(i);
        if (s != 0.0 && s != 1.0) throw ContractError("delta_sp expects binary S");
        const auto k = static_cast<std::size_t>(s);
        total[k]++;
        if (y_hat(i) == 1) positive[k]++;
    }
    if (total[0] == 0 || total[1] == 0)
        throw MetricUndefinedError("delta_sp needs both groups in the mask");
    const double r0 = static_cast<double>(positive[0]) / static_cast<double>(total[0]);
    const double r1 = static_cast<double>(positive[1]) / static_cast<double>(total[1]);
    return std::abs(r0 - r1);
}

// | P(yhat=1 | y=1, s=0) - P(yhat=1 | y=1, s=1) | over the mask.
inline double delta_eo(const IVec& y_hat, const IVec& labels, const Vec& sensitive,
                       const std::vector<int>& mask) {
    std::array<long, 2> total{0, 0};
    std::array<long, 2> hit{0, 0};
    for (int i : mask) {
        if (labels(i) != 1) continue;
        const double s = sensitive(i);
        if (s != 0.0 && s != 1.0) throw ContractError("delta_eo expects binary S");
        const auto k = static_cast<std::size_t>(s);
        total[k]++;
        if (y_hat(i) == 1) hit[k]++;
    }
    if (total[0] == 0 || total[1] == 0)
        throw MetricUndefinedError("delta_eo needs both (y=1, s) cells non-empty");
    const double t0 = static_cast<double>(hit[0]) / static_cast<double>(total[0]);
    const double t1 = static_cast<double>(hit[1]) / static_cast<double>(total[1]);
    return std::abs(t0 - t1);
}

// Per-group similarity distribution stats for any binary grouping vector;
// shares the prototype/similarity code with the migration module.
inline std::array<GroupStats, 2> group_similarity_stats(const Mat& Z, const std::vector<int>& grouping) {
    std::array<int, 2> counts{0, 0};
    for (int p : grouping) {
        if (p != 0 && p != 1) throw ContractError("grouping labels must be 0/1");
        counts[static_cast<std::size_t>(p)]++;
    }
    if (counts[0] == 0 || counts[1] == 0)
        throw MetricUndefinedError("group similarity stats need both groups non-empty");
    const Mat T = group_prototypes(Z, grouping);
    return group_similarities(Z, T, grouping).stats;
}

inline std::vector<int> grouping_from(const Vec& sensitive) {
    std::vector<int> out(static_cast<std::size_t>(sensitive.size()));
    for (Eigen::Index i = 0; i < sensitive.size(); ++i) {
        const double s = sensitive(i);
        if (s != 0.0 && s != 1.0) throw ContractError("grouping vector must be binary");
        out[static_cast<std::size_t>(i)] = static_cast<int>(s);
    }
    return out;
}

struct FairnessReport {
    double auc = 0.0;
    double delta_sp = 0.0;
    double delta_eo = 0.0;
    std::array<GroupStats, 2> group_stats{};
    double threshold = 0.5;
    std::string split = "test";
};

// Metrics of thresholded scores on one split, plus the group similarity
// distribution of the full embedding under the given grouping.
inline FairnessReport make_report(const Vec& scores, const IVec& labels, const Vec& sensitive,
                                  const std::vector<int>& mask, const Mat& Z,
                                  const std::vector<int>& grouping, double threshold,
                                  const std::string& split_name) {
    FairnessReport r;
    r.threshold = threshold;
    r.split = split_name;
    r.auc = auc(scores, labels, mask);
    const IVec y_hat = binarize(scores, threshold);
    r.delta_sp = delta_sp(y_hat, sensitive, mask);
    r.delta_eo = delta_eo(y_hat, labels, sensitive, mask);
    const Mat T = group_prototypes(Z, grouping);
    r.group_stats = group_similarities(Z, T, grouping).stats;
    return r;
}

}  // namespace fairmig
