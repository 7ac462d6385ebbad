#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "napt/density.hpp"
#include "napt/rng.hpp"

namespace napt::test {

// Network with every parameter perturbed, so no slice is trivially zero.
inline ConditionalDensity random_density(std::size_t input_dim, std::size_t theta_dim, std::size_t K,
                                         std::vector<std::size_t> widths, std::uint64_t seed,
                                         Activation act = Activation::tanh, double spread = 0.3) {
    MdnArchitecture a;
    a.input_dim = input_dim;
    a.theta_dim = theta_dim;
    a.hidden_widths = std::move(widths);
    a.n_components = K;
    a.activation = act;
    ParamVector p = init_params(a, seed);
    Rng rng = make_stream(seed, 99);
    std::normal_distribution<double> nd(0.0, spread);
    for (double& v : p.values) v += nd(rng);
    return ConditionalDensity(a, std::move(p));
}

inline std::vector<double> normal_vector(std::size_t n, Rng& rng, double sd = 1.0) {
    std::normal_distribution<double> nd(0.0, sd);
    std::vector<double> v(n);
    for (double& x : v) x = nd(rng);
    return v;
}

// |a - b| / max(|b|, floor) over the whole vector.
inline double rel_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-8) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - b[i]) * (a[i] - b[i]);
        den += b[i] * b[i];
    }
    return std::sqrt(num) / std::max(std::sqrt(den), floor);
}

// Central differences of f over the parameters of cd.
template <class F>
std::vector<double> fd_gradient(ConditionalDensity& cd, F&& f, double h = 1e-5) {
    auto& v = cd.params().values;
    std::vector<double> g(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double keep = v[i];
        v[i] = keep + h;
        const double up = f();
        v[i] = keep - h;
        const double dn = f();
        v[i] = keep;
        g[i] = (up - dn) / (2.0 * h);
    }
    return g;
}

struct MeanSe {
    double mean = 0.0;
    double se = 0.0;
};

inline MeanSe mean_se(const std::vector<double>& v) {
    MeanSe r;
    for (double x : v) r.mean += x;
    r.mean /= static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - r.mean) * (x - r.mean);
    r.se = std::sqrt(s / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
    return r;
}

}  // namespace napt::test
