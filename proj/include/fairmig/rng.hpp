#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <string_view>
#include <vector>

#include "fairmig/common.hpp"
#include "fairmig/error.hpp"

namespace fairmig {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// One master seed fans out into independent labeled streams ("init:encoder",
// "shuffle", "splits", ...) so ablation variants sharing a seed also share
// data, splits and initialization.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view label) {
    return splitmix64(master ^ splitmix64(hash_bytes(label)));
}

inline std::mt19937_64 make_stream(std::uint64_t master, std::string_view label) {
    return std::mt19937_64(derive_seed(master, label));
}

inline std::vector<int> shuffled_indices(int n, std::mt19937_64& rng) {
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    return idx;
}

inline bool is_identity_perm(const std::vector<int>& p) {
    for (std::size_t i = 0; i < p.size(); ++i)
        if (p[i] != static_cast<int>(i)) return false;
    return true;
}

inline bool is_derangement(const std::vector<int>& p) {
    for (std::size_t i = 0; i < p.size(); ++i)
        if (p[i] == static_cast<int>(i)) return false;
    return true;
}

// Row permutation for the contrastive shuffle term. Tries for a derangement,
// settles for any non-identity permutation; identity is only possible (and
// allowed) at n == 1.
inline std::vector<int> draw_shuffle_perm(int n, std::mt19937_64& rng) {
    if (n < 1) throw ContractError("shuffle permutation needs n >= 1");
    if (n == 1) return {0};
    std::vector<int> perm;
    for (int attempt = 0; attempt < 16; ++attempt) {
        perm = shuffled_indices(n, rng);
        if (is_derangement(perm)) return perm;
    }
    while (is_identity_perm(perm)) perm = shuffled_indices(n, rng);
    return perm;
}

inline void check_permutation(const std::vector<int>& p, int n) {
    if (static_cast<int>(p.size()) != n) throw ContractError("permutation size mismatch");
    std::vector<char> seen(static_cast<std::size_t>(n), 0);
    for (int v : p) {
        if (v < 0 || v >= n || seen[static_cast<std::size_t>(v)])
            throw ContractError("not a permutation");
        seen[static_cast<std::size_t>(v)] = 1;
    }
}

}  // namespace fairmig
