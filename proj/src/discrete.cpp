#include "pivot/discrete.hpp"

#include "pivot/errors.hpp"
#include "pivot/rng.hpp"

#include <json.hpp>

#include <cmath>

namespace pivot {

namespace {

using nlohmann::json;

void check_stochastic(const std::vector<double>& tab, int rows, int cols,
                      const std::string& name) {
    if (static_cast<std::size_t>(rows) * cols != tab.size())
        throw ValidationError("instance table " + name + " has wrong size");
    for (int c = 0; c < cols; ++c) {
        double s = 0.0;
        for (int r = 0; r < rows; ++r) {
            double v = tab[static_cast<std::size_t>(r) * cols + c];
            if (!(v >= 0.0)) throw ValidationError("instance table " + name + " has a negative entry");
            s += v;
        }
        if (std::abs(s - 1.0) > 1e-12)
            throw ValidationError("instance table " + name + " column " + std::to_string(c) +
                                  " sums to " + std::to_string(s) + ", expected 1");
    }
}

std::vector<double> random_stochastic(int rows, int cols, RandomStream& rs) {
    std::vector<double> tab(static_cast<std::size_t>(rows) * cols);
    for (int c = 0; c < cols; ++c) {
        double s = 0.0;
        for (int r = 0; r < rows; ++r) {
            double v = 0.05 + rs.uniform(); // bounded away from zero
            tab[static_cast<std::size_t>(r) * cols + c] = v;
            s += v;
        }
        for (int r = 0; r < rows; ++r) tab[static_cast<std::size_t>(r) * cols + c] /= s;
    }
    return tab;
}

} // namespace

void DiscreteInstance::validate() const {
    if (n_u < 1 || n_v < 1 || n_s < 1 || n_i < 1)
        throw ValidationError("instance dimensions must be positive");
    if (static_cast<std::size_t>(n_i) * n_u != f_tab.size())
        throw ValidationError("instance table f has wrong size");
    for (double v : f_tab)
        if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("f entries must lie in [0, 1]");
    check_stochastic(g_tab, n_i, n_s, "g");
    check_stochastic(e_tab, n_v, n_u, "e");
    check_stochastic(d_tab, n_s, n_v, "d");
}

std::string DiscreteInstance::to_json_string() const {
    json j;
    j["n_u"] = n_u;
    j["n_v"] = n_v;
    j["n_s"] = n_s;
    j["n_i"] = n_i;
    j["f"] = f_tab;
    j["g"] = g_tab;
    j["e"] = e_tab;
    j["d"] = d_tab;
    return j.dump();
}

DiscreteInstance DiscreteInstance::from_json_string(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("instance JSON: ") + e.what());
    }
    DiscreteInstance inst;
    inst.n_u = j.at("n_u").get<int>();
    inst.n_v = j.at("n_v").get<int>();
    inst.n_s = j.at("n_s").get<int>();
    inst.n_i = j.at("n_i").get<int>();
    inst.f_tab = j.at("f").get<std::vector<double>>();
    inst.g_tab = j.at("g").get<std::vector<double>>();
    inst.e_tab = j.at("e").get<std::vector<double>>();
    inst.d_tab = j.at("d").get<std::vector<double>>();
    inst.validate();
    return inst;
}

DiscreteInstance random_instance(std::uint64_t seed, int max_dim) {
    RandomStream rs(seed);
    auto dim = [&] { return 2 + static_cast<int>(rs.uniform_index(max_dim - 1)); };
    DiscreteInstance inst;
    inst.n_u = dim();
    inst.n_s = dim();
    inst.n_i = dim();
    inst.n_v = inst.n_i; // pivots identified with images so the bound exists
    inst.f_tab.resize(static_cast<std::size_t>(inst.n_i) * inst.n_u);
    for (double& v : inst.f_tab) v = rs.uniform();
    inst.g_tab = random_stochastic(inst.n_i, inst.n_s, rs);
    inst.e_tab = random_stochastic(inst.n_v, inst.n_u, rs);
    inst.d_tab = random_stochastic(inst.n_s, inst.n_v, rs);
    return inst;
}

std::vector<double> pivot_marginal(const DiscreteInstance& inst, int u) {
    inst.validate();
    if (u < 0 || u >= inst.n_u) throw InvalidInput("pivot_marginal: user index out of range");
    std::vector<double> r(inst.n_s, 0.0);
    for (int s = 0; s < inst.n_s; ++s)
        for (int v = 0; v < inst.n_v; ++v) r[s] += inst.d(s, v) * inst.e(v, u);
    return r;
}

std::pair<int, int> argmax_chain(const DiscreteInstance& inst, int u) {
    inst.validate();
    if (u < 0 || u >= inst.n_u) throw InvalidInput("argmax_chain: user index out of range");
    int v_star = 0;
    for (int v = 1; v < inst.n_v; ++v)
        if (inst.e(v, u) > inst.e(v_star, u)) v_star = v;
    int s_star = 0;
    for (int s = 1; s < inst.n_s; ++s)
        if (inst.d(s, v_star) > inst.d(s_star, v_star)) s_star = s;
    return {v_star, s_star};
}

ObjectiveValue objective_value(const DiscreteInstance& inst) {
    inst.validate();
    if (inst.n_v != inst.n_i)
        throw InvalidInput("objective_value: requires V = I (pivot set identified with images)");

    const double w_usi = 1.0 / (static_cast<double>(inst.n_u) * inst.n_s * inst.n_i);
    const double w_ui = 1.0 / (static_cast<double>(inst.n_u) * inst.n_i);
    const double w_si = 1.0 / (static_cast<double>(inst.n_s) * inst.n_i);

    ObjectiveValue out;
    for (int u = 0; u < inst.n_u; ++u)
        for (int s = 0; s < inst.n_s; ++s) {
            double r_su = 0.0;
            for (int v = 0; v < inst.n_v; ++v) r_su += inst.d(s, v) * inst.e(v, u);
            for (int i = 0; i < inst.n_i; ++i) {
                out.objective += w_usi * inst.f(i, u) * inst.g(i, s) * r_su;
                out.lower_bound +=
                    w_usi * inst.f(i, u) * inst.g(i, s) * inst.d(s, i) * inst.e(i, u);
            }
        }
    for (int u = 0; u < inst.n_u; ++u)
        for (int i = 0; i < inst.n_i; ++i) out.ex += w_ui * inst.f(i, u) * inst.e(i, u);
    for (int s = 0; s < inst.n_s; ++s)
        for (int i = 0; i < inst.n_i; ++i) out.ey += w_si * inst.g(i, s) * inst.d(s, i);
    out.cov = out.lower_bound - out.ex * out.ey;
    return out;
}

} // namespace pivot
