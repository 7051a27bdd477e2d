#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fairmig/common.hpp"
#include "fairmig/error.hpp"
#include "fairmig/rng.hpp"

namespace fairmig {

enum class Split : std::int8_t { None = -1, Train = 0, Val = 1, Test = 2 };

// Node-attributed undirected graph with a binary sensitive column inside X,
// binary (possibly partial) labels and per-node split tags.
struct Graph {
    int n = 0;
    SpMat adj;                               // n x n, {0,1}, symmetric, zero diagonal
    Mat X;                                   // n x K
    int sensitive_index = -1;                // column q of S within X
    IVec labels;                             // n entries in {-1, 0, 1}; -1 = unlabeled
    std::vector<Split> split;                // n entries
    std::vector<std::string> feature_names;  // size K
    std::string label_name = "label";

    int feature_dim() const { return static_cast<int>(X.cols()); }

    Vec sensitive() const { return X.col(sensitive_index); }

    bool is_labeled(int i) const { return labels(i) >= 0; }

    std::vector<int> labeled_indices() const {
        std::vector<int> out;
        for (int i = 0; i < n; ++i)
            if (is_labeled(i)) out.push_back(i);
        return out;
    }

    std::vector<int> split_indices(Split s) const {
        std::vector<int> out;
        for (int i = 0; i < n; ++i)
            if (split[static_cast<std::size_t>(i)] == s) out.push_back(i);
        return out;
    }
};

struct CounterfactualViews {
    Mat view0;  // sensitive column forced to all zeros
    Mat view1;  // sensitive column forced to all ones
};

struct DatasetSchema {
    std::string sensitive_column;
    std::string label_column;
    double sensitive_threshold = 0.5;  // raw > threshold maps to 1
};

inline void validate(const Graph& g) {
    if (g.n <= 0) throw ValidationError("graph has no nodes");
    if (g.adj.rows() != g.n || g.adj.cols() != g.n) throw ValidationError("adjacency shape");
    if (g.X.rows() != g.n) throw ValidationError("feature matrix row count");
    if (g.sensitive_index < 0 || g.sensitive_index >= g.X.cols())
        throw ValidationError("sensitive index out of range");
    if (g.labels.size() != g.n || static_cast<int>(g.split.size()) != g.n)
        throw ValidationError("label/split length");
    for (int k = 0; k < g.adj.outerSize(); ++k) {
        for (SpMat::InnerIterator it(g.adj, k); it; ++it) {
            if (it.row() == it.col()) throw ValidationError("adjacency has a self-loop");
            if (it.value() != 1.0) throw ValidationError("adjacency entries must be binary");
            if (g.adj.coeff(it.col(), it.row()) != 1.0)
                throw ValidationError("adjacency not symmetric");
        }
    }
    for (int i = 0; i < g.n; ++i) {
        const double s = g.X(i, g.sensitive_index);
        if (s != 0.0 && s != 1.0) throw ValidationError("sensitive column not binary");
        if (g.labels(i) != -1 && g.labels(i) != 0 && g.labels(i) != 1)
            throw ValidationError("labels must be in {-1,0,1}");
    }
    bool any_split = false;
    for (Split s : g.split) any_split = any_split || (s != Split::None);
    if (any_split) {
        std::array<int, 3> counts{0, 0, 0};
        for (int i = 0; i < g.n; ++i) {
            const Split s = g.split[static_cast<std::size_t>(i)];
            if (g.is_labeled(i)) {
                if (s == Split::None) throw ValidationError("labeled node missing a split tag");
                counts[static_cast<std::size_t>(s)]++;
            }
        }
        if (counts[0] == 0 || counts[1] == 0 || counts[2] == 0)
            throw ValidationError("every split must be non-empty");
    }
}

// D^{-1/2} (A + I) D^{-1/2} with D the degree of A + I.
inline SpMat normalize_adjacency(const SpMat& A) {
    const int n = static_cast<int>(A.rows());
    SpMat a = A;
    SpMat eye(n, n);
    eye.setIdentity();
    a = a + eye;
    Vec deg = Vec::Zero(n);
    for (int k = 0; k < a.outerSize(); ++k)
        for (SpMat::InnerIterator it(a, k); it; ++it) deg(it.row()) += it.value();
    Vec dinv = deg.array().sqrt().inverse();
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<std::size_t>(a.nonZeros()));
    for (int k = 0; k < a.outerSize(); ++k)
        for (SpMat::InnerIterator it(a, k); it; ++it)
            trips.emplace_back(it.row(), it.col(), it.value() * dinv(it.row()) * dinv(it.col()));
    SpMat out(n, n);
    out.setFromTriplets(trips.begin(), trips.end());
    return out;
}

inline SpMat edges_to_adjacency(int n, const std::vector<std::pair<int, int>>& edges) {
    std::set<std::pair<int, int>> uniq;
    for (auto [u, v] : edges) {
        if (u < 0 || u >= n || v < 0 || v >= n)
            throw ValidationError("edge endpoint " + std::to_string(u < 0 || u >= n ? u : v) +
                                  " out of range for n=" + std::to_string(n));
        if (u == v) continue;  // input self-loops dropped; normalization adds its own
        uniq.insert({std::min(u, v), std::max(u, v)});
    }
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(uniq.size() * 2);
    for (auto [u, v] : uniq) {
        trips.emplace_back(u, v, 1.0);
        trips.emplace_back(v, u, 1.0);
    }
    SpMat adj(n, n);
    adj.setFromTriplets(trips.begin(), trips.end());
    return adj;
}

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    std::stringstream ss(line);
    while (std::getline(ss, cur, ',')) out.push_back(trim(cur));
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

inline bool is_unlabeled_token(const std::string& t) {
    if (t.empty() || t == "-1") return true;
    std::string low;
    for (char c : t) low.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    return low == "na" || low == "nan";
}

inline double parse_double(const std::string& t, const std::string& what) {
    try {
        std::size_t pos = 0;
        double v = std::stod(t, &pos);
        if (pos != t.size()) throw std::invalid_argument(t);
        return v;
    } catch (const std::exception&) {
        throw SchemaError("cannot parse '" + t + "' as number in " + what);
    }
}

}  // namespace detail

// Key-value text: "key = value" per line, '#' comments.
inline std::map<std::string, std::string> read_kv_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot open " + path.string());
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(in, line)) {
        std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        std::size_t eq = t.find('=');
        if (eq == std::string::npos) throw SchemaError("expected key=value in " + path.string() + ": " + t);
        kv[detail::trim(t.substr(0, eq))] = detail::trim(t.substr(eq + 1));
    }
    return kv;
}

inline DatasetSchema read_dataset_schema(const std::filesystem::path& path) {
    auto kv = read_kv_file(path);
    DatasetSchema schema;
    if (!kv.count("sensitive")) throw SchemaError("dataset config missing 'sensitive'");
    if (!kv.count("label")) throw SchemaError("dataset config missing 'label'");
    schema.sensitive_column = kv["sensitive"];
    schema.label_column = kv["label"];
    if (kv.count("sensitive_threshold"))
        schema.sensitive_threshold = detail::parse_double(kv["sensitive_threshold"], "sensitive_threshold");
    return schema;
}

inline std::vector<std::pair<int, int>> read_edge_list(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot open " + path.string());
    std::vector<std::pair<int, int>> edges;
    std::string line;
    while (std::getline(in, line)) {
        std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        std::istringstream ss(t);
        long u, v;
        if (!(ss >> u >> v)) throw SchemaError("bad edge line: " + t);
        edges.emplace_back(static_cast<int>(u), static_cast<int>(v));
    }
    return edges;
}

// Node file: CSV with header; rows are node ids 0..n-1; columns are feature
// names plus the label column. The sensitive column stays inside X and is
// binarized in place by the schema threshold rule.
inline Graph load_dataset(const std::filesystem::path& nodes_csv,
                          const std::filesystem::path& edges_file, const DatasetSchema& schema) {
    std::ifstream in(nodes_csv);
    if (!in) throw SchemaError("cannot open " + nodes_csv.string());
    std::string line;
    if (!std::getline(in, line)) throw SchemaError("empty node file " + nodes_csv.string());
    const std::vector<std::string> header = detail::split_csv_line(line);
    {
        std::set<std::string> uniq(header.begin(), header.end());
        if (uniq.size() != header.size()) throw SchemaError("duplicate column names in node file");
    }
    int label_col = -1, sensitive_col = -1;
    std::vector<int> feature_cols;
    std::vector<std::string> feature_names;
    for (int c = 0; c < static_cast<int>(header.size()); ++c) {
        if (header[static_cast<std::size_t>(c)] == schema.label_column) {
            label_col = c;
        } else {
            if (header[static_cast<std::size_t>(c)] == schema.sensitive_column)
                sensitive_col = static_cast<int>(feature_cols.size());
            feature_cols.push_back(c);
            feature_names.push_back(header[static_cast<std::size_t>(c)]);
        }
    }
    if (label_col < 0) throw SchemaError("label column '" + schema.label_column + "' not found");
    if (sensitive_col < 0)
        throw SchemaError("sensitive column '" + schema.sensitive_column + "' not found");

    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
    while (std::getline(in, line)) {
        if (detail::trim(line).empty()) continue;
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size())
            throw SchemaError("row " + std::to_string(rows.size()) + " has " +
                              std::to_string(cells.size()) + " cells, expected " +
                              std::to_string(header.size()));
        std::vector<double> feats;
        feats.reserve(feature_cols.size());
        for (int c : feature_cols) {
            const double v = detail::parse_double(cells[static_cast<std::size_t>(c)],
                                                  header[static_cast<std::size_t>(c)]);
            if (!std::isfinite(v))
                throw ValidationError("non-finite feature value in column " +
                                      header[static_cast<std::size_t>(c)]);
            feats.push_back(v);
        }
        const std::string& lab = cells[static_cast<std::size_t>(label_col)];
        if (detail::is_unlabeled_token(lab)) {
            labels.push_back(-1);
        } else {
            const double y = detail::parse_double(lab, "label");
            if (y != 0.0 && y != 1.0)
                throw ValidationError("label must be 0/1 or unlabeled, got " + lab);
            labels.push_back(static_cast<int>(y));
        }
        rows.push_back(std::move(feats));
    }
    if (rows.empty()) throw SchemaError("node file has no data rows");

    Graph g;
    g.n = static_cast<int>(rows.size());
    g.X = Mat(g.n, static_cast<Eigen::Index>(feature_cols.size()));
    for (int i = 0; i < g.n; ++i)
        for (std::size_t j = 0; j < feature_cols.size(); ++j)
            g.X(i, static_cast<Eigen::Index>(j)) = rows[static_cast<std::size_t>(i)][j];
    g.sensitive_index = sensitive_col;
    for (int i = 0; i < g.n; ++i) {
        const double raw = g.X(i, g.sensitive_index);
        if (!std::isfinite(raw)) throw ValidationError("non-finite sensitive value at node " + std::to_string(i));
        g.X(i, g.sensitive_index) = raw > schema.sensitive_threshold ? 1.0 : 0.0;
    }
    g.labels = IVec(g.n);
    for (int i = 0; i < g.n; ++i) g.labels(i) = labels[static_cast<std::size_t>(i)];
    g.split.assign(static_cast<std::size_t>(g.n), Split::None);
    g.feature_names = std::move(feature_names);
    g.label_name = schema.label_column;
    g.adj = edges_to_adjacency(g.n, read_edge_list(edges_file));
    validate(g);
    return g;
}

// Directory layout: nodes.csv + edges.txt + dataset.cfg.
inline Graph load_dataset(const std::filesystem::path& dir) {
    return load_dataset(dir / "nodes.csv", dir / "edges.txt", read_dataset_schema(dir / "dataset.cfg"));
}

inline void save_dataset(const Graph& g, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "nodes.csv");
        for (std::size_t j = 0; j < g.feature_names.size(); ++j) out << g.feature_names[j] << ",";
        out << g.label_name << "\n";
        out.precision(17);
        for (int i = 0; i < g.n; ++i) {
            for (int j = 0; j < g.feature_dim(); ++j) out << g.X(i, j) << ",";
            if (g.labels(i) < 0)
                out << "\n";
            else
                out << g.labels(i) << "\n";
        }
    }
    {
        std::ofstream out(dir / "edges.txt");
        for (int k = 0; k < g.adj.outerSize(); ++k)
            for (SpMat::InnerIterator it(g.adj, k); it; ++it)
                if (it.row() < it.col()) out << it.row() << " " << it.col() << "\n";
    }
    {
        std::ofstream out(dir / "dataset.cfg");
        out << "sensitive = " << g.feature_names[static_cast<std::size_t>(g.sensitive_index)] << "\n";
        out << "label = " << g.label_name << "\n";
        out << "sensitive_threshold = 0.5\n";
    }
}

// Deterministic split stratified by (S, Y) cells over labeled nodes. Every
// non-empty cell contributes to train; cells with >= 4 members contribute to
// all three splits.
inline Graph make_splits(Graph g, double f_train, double f_val, double f_test, std::uint64_t seed) {
    if (f_train <= 0.0 || f_val <= 0.0 || f_test <= 0.0)
        throw ConfigError("split fractions must be positive");
    if (std::abs(f_train + f_val + f_test - 1.0) > 1e-9)
        throw ConfigError("split fractions must sum to 1");
    auto rng = make_stream(seed, "splits");
    g.split.assign(static_cast<std::size_t>(g.n), Split::None);

    const std::array<double, 3> frac{f_train, f_val, f_test};
    for (int s = 0; s <= 1; ++s) {
        for (int y = 0; y <= 1; ++y) {
            std::vector<int> cell;
            for (int i = 0; i < g.n; ++i)
                if (g.is_labeled(i) && g.labels(i) == y && g.X(i, g.sensitive_index) == s)
                    cell.push_back(i);
            if (cell.empty()) continue;
            std::shuffle(cell.begin(), cell.end(), rng);
            const int m = static_cast<int>(cell.size());
            std::array<int, 3> count{};
            std::array<double, 3> rem{};
            int assigned = 0;
            for (int k = 0; k < 3; ++k) {
                const double target = frac[static_cast<std::size_t>(k)] * m;
                count[static_cast<std::size_t>(k)] = static_cast<int>(std::floor(target));
                rem[static_cast<std::size_t>(k)] = target - std::floor(target);
                assigned += count[static_cast<std::size_t>(k)];
            }
            for (int left = m - assigned; left > 0; --left) {
                int best = 0;
                for (int k = 1; k < 3; ++k)
                    if (rem[static_cast<std::size_t>(k)] > rem[static_cast<std::size_t>(best)]) best = k;
                count[static_cast<std::size_t>(best)]++;
                rem[static_cast<std::size_t>(best)] = -1.0;
            }
            auto steal_for = [&](int needy, int donor_floor) {
                int donor = -1;
                for (int k = 0; k < 3; ++k)
                    if (k != needy && (donor < 0 || count[static_cast<std::size_t>(k)] >
                                                        count[static_cast<std::size_t>(donor)]))
                        donor = k;
                if (count[static_cast<std::size_t>(donor)] > donor_floor) {
                    count[static_cast<std::size_t>(donor)]--;
                    count[static_cast<std::size_t>(needy)]++;
                }
            };
            if (count[0] == 0) steal_for(0, 0);
            if (m >= 4) {
                for (int k = 1; k < 3; ++k)
                    if (count[static_cast<std::size_t>(k)] == 0) steal_for(k, 1);
            }
            int pos = 0;
            for (int k = 0; k < 3; ++k)
                for (int c = 0; c < count[static_cast<std::size_t>(k)]; ++c)
                    g.split[static_cast<std::size_t>(cell[static_cast<std::size_t>(pos++)])] =
                        static_cast<Split>(k);
        }
    }
    validate(g);
    return g;
}

inline CounterfactualViews counterfactual_views(const Graph& g) {
    CounterfactualViews v;
    v.view0 = g.X;
    v.view1 = g.X;
    v.view0.col(g.sensitive_index).setZero();
    v.view1.col(g.sensitive_index).setOnes();
    return v;
}

}  // namespace fairmig
