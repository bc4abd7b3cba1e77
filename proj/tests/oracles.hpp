#pragma once

// Independent reference implementations used only by the tests.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include <hypothetica.hpp>

namespace oracle {

using Matrix = std::vector<std::vector<long double>>;
using Vector = std::vector<long double>;

// Solves A x = b by Gaussian elimination with partial pivoting.
inline Vector solve(Matrix a, Vector b) {
    const std::size_t n = b.size();
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < n; ++r)
            if (std::fabs(a[r][c]) > std::fabs(a[piv][c])) piv = r;
        if (a[piv][c] == 0.0L) throw std::runtime_error("oracle: singular system");
        std::swap(a[c], a[piv]);
        std::swap(b[c], b[piv]);
        for (std::size_t r = c + 1; r < n; ++r) {
            const long double f = a[r][c] / a[c][c];
            for (std::size_t k = c; k < n; ++k) a[r][k] -= f * a[c][k];
            b[r] -= f * b[c];
        }
    }
    Vector x(n);
    for (std::size_t i = n; i-- > 0;) {
        long double s = b[i];
        for (std::size_t k = i + 1; k < n; ++k) s -= a[i][k] * x[k];
        x[i] = s / a[i][i];
    }
    return x;
}

// Least squares through the normal equations; rows exclude the intercept.
inline Vector ols(const std::vector<std::vector<double>>& rows, const std::vector<double>& y) {
    const std::size_t p = rows.empty() ? 1 : rows[0].size() + 1;
    Matrix xtx(p, Vector(p, 0.0L));
    Vector xty(p, 0.0L);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        Vector x{1.0L};
        for (double v : rows[i]) x.push_back(v);
        for (std::size_t a = 0; a < p; ++a) {
            xty[a] += x[a] * y[i];
            for (std::size_t b = 0; b < p; ++b) xtx[a][b] += x[a] * x[b];
        }
    }
    return solve(xtx, xty);
}

inline long double predict(const Vector& beta, const std::vector<long double>& x) {
    long double v = beta[0];
    for (std::size_t j = 0; j < x.size(); ++j) v += beta[j + 1] * x[j];
    return v;
}

// Logistic MLE by plain gradient ascent with backtracking.
inline std::vector<double> logistic(const std::vector<std::vector<double>>& rows, const std::vector<double>& y,
                                    int max_iter = 200000, double tol = 1e-10) {
    const std::size_t p = rows[0].size() + 1;
    std::vector<double> beta(p, 0.0);
    auto loglik = [&](const std::vector<double>& b) {
        long double ll = 0.0L;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            long double eta = b[0];
            for (std::size_t j = 1; j < p; ++j) eta += b[j] * rows[i][j - 1];
            ll += y[i] * eta - std::log1p(std::exp(eta));
        }
        return ll;
    };
    double step = 1.0;
    long double ll = loglik(beta);
    for (int it = 0; it < max_iter; ++it) {
        std::vector<double> grad(p, 0.0);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            double eta = beta[0];
            for (std::size_t j = 1; j < p; ++j) eta += beta[j] * rows[i][j - 1];
            const double r = y[i] - 1.0 / (1.0 + std::exp(-eta));
            grad[0] += r;
            for (std::size_t j = 1; j < p; ++j) grad[j] += r * rows[i][j - 1];
        }
        double norm = 0.0;
        for (double g : grad) norm = std::max(norm, std::fabs(g));
        if (norm < tol) break;
        step = std::min(step * 2.0, 1.0);
        for (;;) {
            std::vector<double> next = beta;
            for (std::size_t j = 0; j < p; ++j) next[j] += step * grad[j] / static_cast<double>(rows.size());
            const long double nll = loglik(next);
            if (nll >= ll || step < 1e-12) {
                beta = next;
                ll = nll;
                break;
            }
            step *= 0.5;
        }
    }
    return beta;
}

// All simple paths between u and v in the skeleton of g.
inline std::vector<hypothetica::NodeSet> simple_paths(const hypothetica::CausalGraph& g, std::size_t u, std::size_t v) {
    std::vector<hypothetica::NodeSet> out;
    hypothetica::NodeSet path{u};
    std::vector<bool> on(g.size(), false);
    on[u] = true;
    auto rec = [&](auto&& self) -> void {
        const auto x = path.back();
        if (x == v) {
            out.push_back(path);
            return;
        }
        std::vector<std::size_t> nbrs(g.parents(x).begin(), g.parents(x).end());
        nbrs.insert(nbrs.end(), g.children(x).begin(), g.children(x).end());
        for (auto w : nbrs) {
            if (on[w]) continue;
            on[w] = true;
            path.push_back(w);
            self(self);
            path.pop_back();
            on[w] = false;
        }
    };
    rec(rec);
    return out;
}

inline std::vector<bool> descendants_or_self(const hypothetica::CausalGraph& g, std::size_t v) {
    std::vector<bool> d(g.size(), false);
    for (std::size_t w = 0; w < g.size(); ++w) d[w] = g.reaches(v, w);
    return d;
}

// Textbook blocking rule on an explicit path.
inline bool blocked(const hypothetica::CausalGraph& g, const hypothetica::NodeSet& path, const std::vector<bool>& in_z) {
    for (std::size_t i = 1; i + 1 < path.size(); ++i) {
        const auto v = path[i];
        const bool collider = g.has_edge(path[i - 1], v) && g.has_edge(path[i + 1], v);
        if (collider) {
            const auto desc = descendants_or_self(g, v);
            bool opened = false;
            for (std::size_t w = 0; w < g.size(); ++w) opened = opened || (desc[w] && in_z[w]);
            if (!opened) return true;
        } else if (in_z[v] || g.node(v).fixed) {
            return true;
        }
    }
    return false;
}

inline bool d_separated(const hypothetica::CausalGraph& g, const hypothetica::NodeSet& x, const hypothetica::NodeSet& y,
                        const hypothetica::NodeSet& z) {
    std::vector<bool> in_z(g.size(), false);
    for (auto v : z) in_z[v] = true;
    for (auto a : x)
        for (auto b : y)
            for (const auto& p : simple_paths(g, a, b))
                if (!blocked(g, p, in_z)) return false;
    return true;
}

// Per-arm sequential regression MLE of E(Y^{a0, no ICE}) for K = 1: L1 on L0
// over the whole arm, Y on (L0, L1) among the ICE-free, composed at mean L0.
inline long double mle_k1(const hypothetica::TrialDataset& d, int arm) {
    std::vector<std::vector<double>> l1_rows, y_rows;
    std::vector<double> l1, y;
    long double sum_l0 = 0.0L;
    std::size_t n = 0;
    for (const auto& s : d) {
        if (s.arm() != arm) continue;
        const double l0 = (*s.l[0])[0];
        sum_l0 += l0;
        ++n;
        l1_rows.push_back({l0});
        l1.push_back((*s.l[1])[0]);
        if (*s.a[1] == 0) {
            y_rows.push_back({l0, (*s.l[1])[0]});
            y.push_back(*s.y);
        }
    }
    const long double m0 = sum_l0 / static_cast<long double>(n);
    const auto b1 = ols(l1_rows, l1);
    const auto b2 = ols(y_rows, y);
    return b2[0] + b2[1] * m0 + b2[2] * (b1[0] + b1[1] * m0);
}

// Same construction for K = 2 with the trivariate factorisation
// L1 | L0 (arm), L2 | L0, L1 (A1 = 0), Y | L0, L1, L2 (A1 = A2 = 0).
inline long double mle_k2(const hypothetica::TrialDataset& d, int arm) {
    std::vector<std::vector<double>> r1, r2, r3;
    std::vector<double> v1, v2, v3;
    long double sum_l0 = 0.0L;
    std::size_t n = 0;
    for (const auto& s : d) {
        if (s.arm() != arm) continue;
        const double l0 = (*s.l[0])[0], l1 = (*s.l[1])[0];
        sum_l0 += l0;
        ++n;
        r1.push_back({l0});
        v1.push_back(l1);
        if (*s.a[1] == 0) {
            r2.push_back({l0, l1});
            v2.push_back((*s.l[2])[0]);
            if (*s.a[2] == 0) {
                r3.push_back({l0, l1, (*s.l[2])[0]});
                v3.push_back(*s.y);
            }
        }
    }
    const long double m0 = sum_l0 / static_cast<long double>(n);
    const auto b1 = ols(r1, v1);
    const auto b2 = ols(r2, v2);
    const auto b3 = ols(r3, v3);
    const long double m1 = b1[0] + b1[1] * m0;
    const long double m2 = b2[0] + b2[1] * m0 + b2[2] * m1;
    return b3[0] + b3[1] * m0 + b3[2] * m1 + b3[3] * m2;
}

// Type-7 quantile as interpolation of the points ((k - 1) / (n - 1), x_(k)).
inline double quantile(std::vector<double> v, double p) {
    std::sort(v.begin(), v.end());
    if (v.size() == 1) return v[0];
    const double step = 1.0 / static_cast<double>(v.size() - 1);
    for (std::size_t k = 0; k + 1 < v.size(); ++k) {
        const double lo = static_cast<double>(k) * step, hi = static_cast<double>(k + 1) * step;
        if (p <= hi || k + 2 == v.size()) return v[k] + (p - lo) / (hi - lo) * (v[k + 1] - v[k]);
    }
    return v.back();
}

}  // namespace oracle

// Graph fixtures drawn from the figures.
namespace fixtures {

using hypothetica::CausalGraph;
using hypothetica::NodeRole;

inline CausalGraph confounding() {
    return CausalGraph::build({{"L", NodeRole::covariate}, {"A", NodeRole::treatment}, {"Y", NodeRole::outcome}},
                              {{"L", "A"}, {"L", "Y"}, {"A", "Y"}});
}

inline CausalGraph three_treatments() {
    return CausalGraph::build(
        {{"L0", NodeRole::covariate}, {"A0", NodeRole::treatment}, {"L1", NodeRole::covariate}, {"A1", NodeRole::treatment},
         {"L2", NodeRole::covariate}, {"A2", NodeRole::treatment}, {"Y", NodeRole::outcome}},
        {{"L0", "L1"}, {"L0", "A0"}, {"L0", "A1"}, {"L0", "A2"}, {"L0", "L2"}, {"L0", "Y"}, {"A0", "A1"}, {"A0", "A2"},
         {"A0", "Y"}, {"A0", "L1"}, {"A0", "L2"}, {"A1", "A2"}, {"A1", "Y"}, {"A1", "L2"}, {"A2", "Y"}, {"L1", "L2"},
         {"L1", "A1"}, {"L1", "A2"}, {"L1", "Y"}, {"L2", "A2"}, {"L2", "Y"}});
}

inline CausalGraph one_ice() {
    return CausalGraph::build({{"L0", NodeRole::covariate}, {"A0", NodeRole::treatment}, {"L1", NodeRole::covariate},
                               {"A1", NodeRole::ice}, {"Y", NodeRole::outcome}},
                              {{"L0", "L1"}, {"L0", "A1"}, {"L0", "Y"}, {"A0", "A1"}, {"A0", "Y"}, {"A0", "L1"},
                               {"A1", "Y"}, {"L1", "A1"}, {"L1", "Y"}});
}

inline CausalGraph two_ice() {
    return CausalGraph::build(
        {{"L0", NodeRole::covariate}, {"A0", NodeRole::treatment}, {"L1", NodeRole::covariate}, {"A1", NodeRole::ice},
         {"L2", NodeRole::covariate}, {"A2", NodeRole::ice}, {"Y", NodeRole::outcome}},
        {{"L0", "L1"}, {"L0", "A1"}, {"L0", "L2"}, {"L0", "A2"}, {"L0", "Y"}, {"A0", "A1"}, {"A0", "A2"}, {"A0", "Y"},
         {"A0", "L1"}, {"A0", "L2"}, {"A1", "A2"}, {"A1", "Y"}, {"A1", "L2"}, {"A2", "Y"}, {"L1", "L2"}, {"L1", "A1"},
         {"L1", "A2"}, {"L1", "Y"}, {"L2", "A2"}, {"L2", "Y"}});
}

// Random DAG on n nodes: edge i -> j (i < j in a shuffled order) with prob p.
inline CausalGraph random_dag(std::size_t n, double p, std::uint64_t seed) {
    hypothetica::CounterRng rng(seed);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[static_cast<std::size_t>(rng() % i)]);
    CausalGraph g;
    for (std::size_t i = 0; i < n; ++i) g.add_node("V" + std::to_string(i));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (rng.uniform() < p) g.add_edge(order[i], order[j]);
    return g;
}

}  // namespace fixtures
