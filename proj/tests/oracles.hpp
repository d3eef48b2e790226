#pragma once

// Independent reference computations for tests. Nothing here calls the
// library's recursions: tree expectations are sums over enumerated paths,
// closed forms are evaluated from their own formulas or by quadrature.

#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

#include "bubblelab/priors.hpp"
#include "bubblelab/tree_oracle.hpp"

namespace oracle {

using bubblelab::NodeValues;
using bubblelab::TreeMarket;
using bubblelab::TreePrior;

struct Path {
    std::vector<std::size_t> nodes;
    double probability = 1.0;
};

// Every path from `start` down to `to_level` under the selection, with its
// probability as the product of edge weights.
inline std::vector<Path> paths_from(const TreeMarket& t, const TreePrior& q, std::size_t start, int to_level)
{
    std::vector<Path> done;
    std::vector<Path> stack{{{start}, 1.0}};
    while (!stack.empty()) {
        Path p = stack.back();
        stack.pop_back();
        const std::size_t last = p.nodes.back();
        if (t.node(last).level == to_level) {
            done.push_back(p);
            continue;
        }
        const auto& law = t.node(last).laws[static_cast<std::size_t>(q.selection[last])];
        for (const auto& e : law) {
            Path next = p;
            next.nodes.push_back(e.child);
            next.probability *= e.probability;
            stack.push_back(std::move(next));
        }
    }
    return done;
}

// E_q[Y | node] with Y given on the terminal level.
inline double path_expectation(const TreeMarket& t, const TreePrior& q, const NodeValues& y, std::size_t node)
{
    double sum = 0.0;
    for (const auto& p : paths_from(t, q, node, t.depth())) {
        sum += p.probability * y[p.nodes.back()];
    }
    return sum;
}

// Odometer over law indices of non-terminal nodes.
inline std::vector<TreePrior> all_selections(const TreeMarket& t)
{
    TreePrior cur;
    cur.selection.assign(t.size(), -1);
    std::vector<std::size_t> inner;
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (!t.is_terminal(i)) {
            inner.push_back(i);
            cur.selection[i] = 0;
        }
    }
    std::vector<TreePrior> out;
    while (true) {
        out.push_back(cur);
        std::size_t k = 0;
        while (k < inner.size()) {
            const std::size_t n = inner[k];
            if (++cur.selection[n] < static_cast<int>(t.node(n).laws.size())) break;
            cur.selection[n] = 0;
            ++k;
        }
        if (k == inner.size()) break;
    }
    return out;
}

// sup over every selection of E[Y | node], node by node.
inline NodeValues brute_force_sup(const TreeMarket& t, const NodeValues& y)
{
    NodeValues best(t.size(), -INFINITY);
    for (const auto& q : all_selections(t)) {
        for (std::size_t i = 0; i < t.size(); ++i) {
            best[i] = std::max(best[i], path_expectation(t, q, y, i));
        }
    }
    return best;
}

// Selection built directly from the pasting rule: base strictly above the
// split level; below the split node v, branch one if v is in lambda and
// branch two otherwise. Needs a tree (single parents).
inline TreePrior pasted(const TreeMarket& t, const TreePrior& base, const TreePrior& one, const TreePrior& two,
                        int split, const std::vector<bool>& lambda)
{
    TreePrior out = base;
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (t.is_terminal(i) || t.node(i).level < split) continue;
        std::size_t v = i;
        while (t.node(v).level > split) v = t.parent(v);
        out.selection[i] = lambda[v] ? one.selection[i] : two.selection[i];
    }
    return out;
}

inline double normal_cdf(double x)
{
    return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

// E[(x + sqrt(v) Z - k)^+].
inline double bachelier_call(double x, double k, double v)
{
    const double s = std::sqrt(v);
    const double d = (x - k) / s;
    return (x - k) * normal_cdf(d) + s * std::exp(-0.5 * d * d) / std::sqrt(2.0 * std::numbers::pi);
}

// E[(x exp(sqrt(v) Z - v/2) - k)^+].
inline double black_scholes_call(double x, double k, double v)
{
    const double s = std::sqrt(v);
    const double d1 = (std::log(x / k) + 0.5 * v) / s;
    return x * normal_cdf(d1) - k * normal_cdf(d1 - s);
}

inline double simpson(const std::function<double(double)>& f, double a, double b, int n)
{
    if (n % 2) ++n;
    const double h = (b - a) / n;
    double s = f(a) + f(b);
    for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f(a + i * h);
    return s * h / 3.0;
}

// E[1/|X|] for X ~ N((r0,0,0), v I_3) by quadrature over radius and polar angle.
inline double inverse_radius_mean_quadrature(double r0, double v)
{
    const double norm = std::pow(2.0 * std::numbers::pi * v, -1.5);
    const double rmax = r0 + 12.0 * std::sqrt(v);
    auto radial = [&](double rho) {
        auto angular = [&](double c) {
            return std::exp(-(rho * rho + r0 * r0 - 2.0 * rho * r0 * c) / (2.0 * v));
        };
        // dV = 2 pi rho^2 d rho dc, integrand 1/rho
        return 2.0 * std::numbers::pi * rho * simpson(angular, -1.0, 1.0, 200);
    };
    return norm * simpson(radial, 0.0, rmax, 4000);
}

// E[1/X] for X chi-squared with k degrees of freedom (k > 2), by quadrature
// after x = u^2.
inline double chi_squared_inverse_mean(int k)
{
    const double c = 1.0 / (std::pow(2.0, 0.5 * k) * std::tgamma(0.5 * k));
    auto f = [&](double u) {
        if (u == 0.0) return k == 3 ? 2.0 * c : 0.0;
        const double x = u * u;
        return std::pow(x, 0.5 * k - 2.0) * std::exp(-0.5 * x) * 2.0 * u * c;
    };
    return simpson(f, 0.0, 60.0, 200000);
}

} // namespace oracle
