#include "napt/lab.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <functional>
#include <limits>
#include <random>

namespace napt {

namespace {

constexpr std::size_t kReferenceM = std::size_t{1} << 16;

// Runs fn(i, rng, out) for i < n with its own stream and k outputs per
// replication; returns the n x k table in replication order.
std::vector<double> replicate(std::size_t n, std::size_t k,
                              const std::function<void(std::size_t, Rng&, double*)>& fn, std::uint64_t seed,
                              Exec exec) {
    std::vector<double> out(n * k);
    const auto run = [&](std::size_t i) {
        Rng rng = make_stream(seed, i);
        fn(i, rng, out.data() + i * k);
    };
    if (exec == Exec::parallel) {
        std::exception_ptr err;
#pragma omp parallel for schedule(dynamic, 64)
        for (std::size_t i = 0; i < n; ++i) {
            try {
                run(i);
            } catch (...) {
#pragma omp critical
                if (!err) err = std::current_exception();
            }
        }
        if (err) std::rethrow_exception(err);
    } else {
        for (std::size_t i = 0; i < n; ++i) run(i);
    }
    return out;
}

struct Moments {
    double mean = 0.0;
    double var = 0.0;  // sample variance
    double se() const { return n > 1 ? std::sqrt(var / static_cast<double>(n)) : 0.0; }
    std::size_t n = 0;
};

// Moments of column c of an n x k table (two-pass).
Moments column_moments(const std::vector<double>& t, std::size_t k, std::size_t c,
                       const std::function<double(double)>& f = {}) {
    Moments m;
    m.n = t.size() / k;
    const auto val = [&](std::size_t i) { return f ? f(t[i * k + c]) : t[i * k + c]; };
    for (std::size_t i = 0; i < m.n; ++i) m.mean += val(i);
    m.mean /= static_cast<double>(m.n);
    for (std::size_t i = 0; i < m.n; ++i) {
        const double e = val(i) - m.mean;
        m.var += e * e;
    }
    if (m.n > 1) m.var /= static_cast<double>(m.n - 1);
    return m;
}

// log Z_M with the control variate Z_M / Z - 1, and the gradient of log Z_M
// with its first-order control variate; both keep their expectations.
void log_Z_sample(const ToyModel& model, std::size_t M, Rng& rng, double* out) {
    std::normal_distribution<double> nd;
    const double a = model.a(), Z = model.Z();
    std::vector<double> lg(M), th(M);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < M; ++j) {
        th[j] = nd(rng);
        lg[j] = a * th[j] + model.b();
        mx = std::max(mx, lg[j]);
    }
    double s = 0.0, sg = 0.0;
    for (std::size_t j = 0; j < M; ++j) {
        const double w = std::exp(lg[j] - mx);
        s += w;
        sg += w * th[j];
    }
    const double Mf = static_cast<double>(M);
    const double log_Z = mx + std::log(s) - std::log(Mf);
    const double Zh = std::exp(log_Z);
    const double S = std::exp(mx) * sg / Mf;  // mean of g * theta, E = a Z
    out[0] = log_Z - (Zh / Z - 1.0);
    out[1] = sg / s - ((S - a * Z) / Z - a * (Zh - Z) / Z);
}

}  // namespace

double ToyModel::Z() const { return std::exp(0.5 * a_ * a_ + b_); }

void StdNormalSampler::draw(Rng& rng, std::span<double> theta) const {
    std::normal_distribution<double> nd;
    theta[0] = nd(rng);
}

std::string to_string(RateKind k) {
    switch (k) {
        case RateKind::delta_psi: return "delta_psi";
        case RateKind::delta_rho: return "delta_rho";
        case RateKind::rho_variance: return "rho_variance";
        case RateKind::psi_bias: return "psi_bias";
    }
    return "?";
}

RateKind rate_kind_from_string(std::string_view s) {
    for (RateKind k : {RateKind::delta_psi, RateKind::delta_rho, RateKind::rho_variance, RateKind::psi_bias})
        if (s == to_string(k)) return k;
    throw ConfigError("unknown rate kind: " + std::string(s));
}

LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("fit_line: need two or more points");
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i] / n;
        my += y[i] / n;
    }
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    LineFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    f.r_squared = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
    return f;
}

ReferenceMoments reference_moments(const ToyModel& model, std::size_t M, std::size_t reps, std::uint64_t seed,
                                   Exec exec) {
    if (M == 0 || reps < 2) throw std::invalid_argument("reference_moments: need M >= 1 and reps >= 2");
    const auto t = replicate(
        reps, 2, [&](std::size_t, Rng& rng, double* out) { log_Z_sample(model, M, rng, out); }, seed, exec);
    const Moments lz = column_moments(t, 2, 0), gz = column_moments(t, 2, 1);
    ReferenceMoments r;
    r.M = M;
    r.reps = reps;
    // E[-log g(theta)] = -b and E[-d log g / da] = -E[theta] = 0.
    r.loss = lz.mean - model.b();
    r.loss_se = lz.se();
    r.grad = gz.mean;
    r.grad_se = gz.se();
    return r;
}

RateReport estimate_rate(RateKind kind, const ToyModel& model, const std::vector<std::size_t>& levels,
                         std::size_t reps, std::size_t M0, std::uint64_t seed, Exec exec) {
    if (levels.size() < 4) throw std::invalid_argument("estimate_rate: need at least 4 levels");
    if (reps < 10'000) throw std::invalid_argument("estimate_rate: need at least 10^4 replications");
    if (M0 == 0) throw std::invalid_argument("estimate_rate: M0 must be positive");

    RateReport rep;
    rep.kind = kind;
    rep.levels = levels;
    rep.reps = reps;
    const StdNormalSampler sampler;
    const MlmcConfig cfg{M0, 1.8, 1.8, AtomMode::fresh, Coupling::independent};

    ReferenceMoments ref;
    if (kind == RateKind::psi_bias) ref = reference_moments(model, kReferenceM, 64, make_stream(seed, 0xb1a5)(), exec);

    for (std::size_t li = 0; li < levels.size(); ++li) {
        const std::size_t l = levels[li];
        if (l > 20) throw std::invalid_argument("estimate_rate: level too large");
        const std::uint64_t s = make_stream(seed, l + 1)();
        double value = 0.0, se = 0.0;
        switch (kind) {
            case RateKind::delta_psi:
            case RateKind::delta_rho: {
                const auto t = replicate(
                    reps, 2,
                    [&](std::size_t, Rng& rng, double* out) {
                        std::normal_distribution<double> nd;
                        const double th = nd(rng);
                        const DeltaQuery d = delta_query(model, {&th, 1}, sampler, l, cfg, rng, true);
                        out[0] = d.dpsi;
                        out[1] = d.drho[0];
                    },
                    s, exec);
                const Moments m = column_moments(t, 2, kind == RateKind::delta_psi ? 0 : 1,
                                                 [](double v) { return v * v; });
                value = m.mean;
                se = m.se();
                break;
            }
            case RateKind::rho_variance: {
                const double th = 0.0;
                const auto t = replicate(
                    reps, 1,
                    [&](std::size_t, Rng& rng, double* out) {
                        out[0] = nested_query(model, {&th, 1}, sampler, cfg.inner_size(l), AtomMode::fresh, rng, true)
                                     .grad[0];
                    },
                    s, exec);
                const Moments m = column_moments(t, 1, 0);
                const Moments sq = column_moments(t, 1, 0, [&](double v) { return (v - m.mean) * (v - m.mean); });
                value = m.var;
                se = sq.se();
                break;
            }
            case RateKind::psi_bias: {
                const std::size_t M = cfg.inner_size(l);
                const auto t = replicate(
                    reps, 2, [&](std::size_t, Rng& rng, double* out) { log_Z_sample(model, M, rng, out); }, s,
                    exec);
                const Moments m = column_moments(t, 2, 0);
                value = std::abs(m.mean - model.b() - ref.loss);
                se = std::hypot(m.se(), ref.loss_se);
                break;
            }
        }
        if (!std::isfinite(value) || !std::isfinite(se) || value <= 0.0)
            throw NumericalError("estimate_rate: non-finite or non-positive statistic at level " + std::to_string(l));
        rep.value.push_back(value);
        rep.se.push_back(se);
    }

    std::vector<double> x, y;
    for (std::size_t i = 0; i < levels.size(); ++i) {
        x.push_back(static_cast<double>(levels[i]));
        y.push_back(std::log2(rep.value[i]));
    }
    const LineFit f = fit_line(x, y);
    rep.slope = f.slope;
    rep.intercept = f.intercept;
    rep.r_squared = f.r_squared;
    if (!std::isfinite(rep.slope)) throw NumericalError("estimate_rate: non-finite slope");
    return rep;
}

UnbiasednessReport verify_unbiasedness(const ToyModel& model, const LevelDistribution& dist, const MlmcConfig& cfg,
                                       std::size_t reps, std::uint64_t seed, Exec exec, std::size_t reference_reps) {
    dist.validate();
    if (reps < 2) throw std::invalid_argument("verify_unbiasedness: need at least 2 replications");
    const StdNormalSampler sampler;
    const auto t = replicate(
        reps, 3,
        [&](std::size_t, Rng& rng, double* out) {
            std::normal_distribution<double> nd;
            const double th = nd(rng);
            const Query q = mlmc_query(model, {&th, 1}, sampler, dist, cfg, rng, true);
            out[0] = q.loss;
            out[1] = q.grad[0];
            out[2] = static_cast<double>(q.cost);
        },
        make_stream(seed, 1)(), exec);

    UnbiasednessReport r;
    r.kind = dist.kind;
    r.reps = reps;
    const Moments l = column_moments(t, 3, 0), g = column_moments(t, 3, 1), c = column_moments(t, 3, 2);
    r.loss_mean = l.mean;
    r.loss_se = l.se();
    r.grad_mean = g.mean;
    r.grad_se = g.se();
    r.mean_cost = c.mean;
    r.reference = reference_moments(model, kReferenceM, reference_reps, make_stream(seed, 2)(), exec);

    const double sl = std::hypot(r.loss_se, r.reference.loss_se);
    const double sg = std::hypot(r.grad_se, r.reference.grad_se);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    r.zero_variance = sl == 0.0 || sg == 0.0;
    r.loss_z = sl > 0.0 ? (r.loss_mean - r.reference.loss) / sl : nan;
    r.grad_z = sg > 0.0 ? (r.grad_mean - r.reference.grad) / sg : nan;
    return r;
}

CostReport realized_cost(const LevelDistribution& dist, std::size_t M0, std::size_t n, std::uint64_t seed) {
    dist.validate();
    if (n < 2) throw std::invalid_argument("realized_cost: need at least 2 draws");
    Rng rng = make_stream(seed, 0xc057);
    double s = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double c = static_cast<double>(level_cost(dist, dist.sample(rng), M0));
        s += c;
        s2 += c * c;
    }
    CostReport r;
    r.n = n;
    r.mean = s / static_cast<double>(n);
    r.se = std::sqrt(std::max(0.0, s2 / static_cast<double>(n) - r.mean * r.mean) / static_cast<double>(n - 1));
    r.expected = expected_cost(dist, M0);
    return r;
}

SgdReport sgd_bound_check(const SgdSetup& s, std::uint64_t seed) {
    if (!(s.mu > 0.0) || !(s.K >= s.mu)) throw ConfigError("sgd_bound_check: need 0 < mu <= K");
    if (!(s.gamma > 0.0) || s.gamma > std::min(1.0 / s.K, 1.0 / s.mu))
        throw ConfigError("sgd_bound_check: step size must satisfy 0 < gamma <= min(1/K, 1/mu)");
    if (s.U_b < 0.0 || s.U_eta < 0.0 || s.dim == 0 || s.seeds == 0)
        throw ConfigError("sgd_bound_check: invalid bias, noise, dimension or seed count");

    const std::size_t d = s.dim, T = s.T;
    const double sd = std::sqrt(s.U_eta / static_cast<double>(d));
    const double bias = std::sqrt(s.U_b);  // along the first axis
    const auto loss = [&](const std::vector<double>& phi) {
        double q = 0.0;
        for (double v : phi) q += v * v;
        return 0.5 * s.mu * q;
    };

    // gaps[r * (T+1) + t]
    std::vector<double> gaps(s.seeds * (T + 1));
    for (std::size_t r = 0; r < s.seeds; ++r) {
        Rng rng = make_stream(seed, r);
        std::normal_distribution<double> nd(0.0, 1.0);
        std::vector<double> phi(d, s.phi0);
        gaps[r * (T + 1)] = loss(phi);
        for (std::size_t t = 1; t <= T; ++t) {
            for (std::size_t k = 0; k < d; ++k) {
                double g = s.mu * phi[k] + (k == 0 ? bias : 0.0);
                if (sd > 0.0) g += sd * nd(rng);
                phi[k] -= s.gamma * g;
            }
            gaps[r * (T + 1) + t] = loss(phi);
        }
    }

    SgdReport rep;
    rep.G0 = gaps[0];
    rep.worst_excess = -std::numeric_limits<double>::infinity();
    const double floor = (s.U_b + s.U_eta) / (2.0 * s.mu);
    const double n = static_cast<double>(s.seeds);
    for (std::size_t t = 0; t <= T; ++t) {
        double m = 0.0;
        for (std::size_t r = 0; r < s.seeds; ++r) m += gaps[r * (T + 1) + t];
        m /= n;
        double v = 0.0;
        for (std::size_t r = 0; r < s.seeds; ++r) v += (gaps[r * (T + 1) + t] - m) * (gaps[r * (T + 1) + t] - m);
        const double se = s.seeds > 1 ? std::sqrt(v / (n - 1.0) / n) : 0.0;
        const double bound = std::pow(1.0 - s.gamma * s.mu, static_cast<double>(t)) * rep.G0 + floor;
        rep.mean_gap.push_back(m);
        rep.se.push_back(se);
        rep.bound.push_back(bound);
        const double excess = se > 0.0 ? (m - bound) / se : (m - bound);
        if (excess > rep.worst_excess) {
            rep.worst_excess = excess;
            rep.worst_t = t;
        }
        if (m > bound + 3.0 * se) rep.bound_ok = false;
    }
    return rep;
}

}  // namespace napt
