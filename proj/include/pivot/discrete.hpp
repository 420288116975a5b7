#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace pivot {

// A finite tabular instance of the refinement algebra: user prompts U,
// pivots V, system prompts S, images I, with
//   f_tab[i][u]  user satisfaction in [0, 1]
//   g_tab[i][s]  generation likelihood, columns (fixed s) sum to 1
//   e_tab[v][u]  source-pivot translation, columns sum to 1
//   d_tab[s][v]  pivot-target translation, columns sum to 1
// Tables are stored row-major with the first index as the row.
struct DiscreteInstance {
    int n_u = 0, n_v = 0, n_s = 0, n_i = 0;
    std::vector<double> f_tab; // n_i x n_u
    std::vector<double> g_tab; // n_i x n_s
    std::vector<double> e_tab; // n_v x n_u
    std::vector<double> d_tab; // n_s x n_v

    double f(int i, int u) const { return f_tab[static_cast<std::size_t>(i) * n_u + u]; }
    double g(int i, int s) const { return g_tab[static_cast<std::size_t>(i) * n_s + s]; }
    double e(int v, int u) const { return e_tab[static_cast<std::size_t>(v) * n_u + u]; }
    double d(int s, int v) const { return d_tab[static_cast<std::size_t>(s) * n_v + v]; }

    // Throws ValidationError unless all entries are nonnegative, f is within
    // [0, 1], and every stochastic column sums to 1 within 1e-12.
    void validate() const;

    std::string to_json_string() const;
    static DiscreteInstance from_json_string(const std::string& text);
};

// Random valid instance with dimensions in [2, max_dim] and V = I.
DiscreteInstance random_instance(std::uint64_t seed, int max_dim = 6);

// Composed refinement distribution R(s|u) = sum_v d(s|v) e(v|u).
std::vector<double> pivot_marginal(const DiscreteInstance& inst, int u);

// Two-stage argmax: v* = argmax_v e(v|u), s* = argmax_s d(s|v*), lowest index
// on ties.
std::pair<int, int> argmax_chain(const DiscreteInstance& inst, int u);

// All five quantities of the objective decomposition, computed by exact
// summation under the uniform measure over U x S x I:
//   objective     = E[f(i,u) g(i|s) R(s|u)]
//   lower_bound   = E[f(i,u) g(i|s) d(s|i) e(i|u)]   (pivot pinned to the image)
//   ex            = E[f(i,u) e(i|u)]
//   ey            = E[g(i|s) d(s|i)]
//   cov           = lower_bound - ex * ey
// Requires V = I so the pinned bound is well formed.
struct ObjectiveValue {
    double objective = 0.0;
    double lower_bound = 0.0;
    double ex = 0.0;
    double ey = 0.0;
    double cov = 0.0;
};
ObjectiveValue objective_value(const DiscreteInstance& inst);

} // namespace pivot
