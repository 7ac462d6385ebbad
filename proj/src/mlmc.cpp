#include "napt/mlmc.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace napt {

std::string to_string(EstimatorKind k) {
    switch (k) {
        case EstimatorKind::nested: return "nested";
        case EstimatorKind::atomic: return "atomic";
        case EstimatorKind::ru: return "ru";
        case EstimatorKind::rr: return "rr";
        case EstimatorKind::grr: return "grr";
        case EstimatorKind::tgrr: return "tgrr";
    }
    return "?";
}

EstimatorKind estimator_from_string(std::string_view s) {
    for (auto k : {EstimatorKind::nested, EstimatorKind::atomic, EstimatorKind::ru, EstimatorKind::rr,
                   EstimatorKind::grr, EstimatorKind::tgrr})
        if (s == to_string(k)) return k;
    throw ConfigError("unknown estimator kind '" + std::string(s) + "'");
}

bool is_multilevel(EstimatorKind k) {
    return k == EstimatorKind::ru || k == EstimatorKind::rr || k == EstimatorKind::grr || k == EstimatorKind::tgrr;
}

std::string to_string(Coupling c) { return c == Coupling::independent ? "independent" : "nested"; }

Coupling coupling_from_string(std::string_view s) {
    if (s == "independent") return Coupling::independent;
    if (s == "nested") return Coupling::nested;
    throw ConfigError("unknown coupling '" + std::string(s) + "'");
}

std::string to_string(AtomMode m) { return m == AtomMode::fresh ? "fresh" : "include_outer"; }

AtomMode atom_mode_from_string(std::string_view s) {
    if (s == "fresh") return AtomMode::fresh;
    if (s == "include_outer") return AtomMode::include_outer;
    throw ConfigError("unknown atom mode '" + std::string(s) + "'");
}

std::size_t MlmcConfig::inner_size(std::size_t level) const {
    if (level > kMaxLevel) throw NumericalError("level too large");
    return M0 << level;
}

// --- level laws -------------------------------------------------------------------

LevelDistribution LevelDistribution::ru(double alpha) { return {EstimatorKind::ru, alpha, 0, kNoTruncation}; }
LevelDistribution LevelDistribution::rr(double alpha) { return {EstimatorKind::rr, alpha, 0, kNoTruncation}; }
LevelDistribution LevelDistribution::grr(double alpha, std::size_t m_lo) {
    return {EstimatorKind::grr, alpha, m_lo, kNoTruncation};
}
LevelDistribution LevelDistribution::tgrr(double alpha, std::size_t m_lo, std::size_t m_hi) {
    return {EstimatorKind::tgrr, alpha, m_lo, m_hi};
}

void LevelDistribution::validate() const {
    if (!is_multilevel(kind)) throw ConfigError("level distribution needs a multilevel estimator kind");
    if (!(alpha > 1.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be > 1");
    if (kind == EstimatorKind::rr && m_lo != 0) throw ConfigError("RR has base level 0");
    if (kind == EstimatorKind::tgrr) {
        if (m_hi == kNoTruncation) throw ConfigError("TGRR needs a truncation level");
        if (m_lo > m_hi) throw ConfigError("TGRR needs m_lo <= m_hi");
        if (m_hi > kMaxLevel) throw ConfigError("truncation level too large");
    } else if (m_hi != kNoTruncation) {
        throw ConfigError("only TGRR takes a truncation level");
    }
    if (m_lo > kMaxLevel) throw ConfigError("base level too large");
}

double LevelDistribution::p() const { return 1.0 - std::exp2(-alpha); }

double LevelDistribution::w(std::size_t l) const { return std::exp2(-alpha * static_cast<double>(l)) * p(); }

namespace {
double q_pow(double alpha, std::size_t j) { return std::exp2(-alpha * static_cast<double>(j)); }
}  // namespace

double LevelDistribution::pmf(std::size_t l) const {
    switch (kind) {
        case EstimatorKind::ru: return w(l);
        case EstimatorKind::rr:
        case EstimatorKind::grr:
            if (l < m_lo) return 0.0;
            if (l == m_lo) return 1.0 - q_pow(alpha, m_lo + 1);
            return w(l);
        case EstimatorKind::tgrr: {
            if (l < m_lo || l > m_hi) return 0.0;
            const double c = 1.0 - q_pow(alpha, m_hi + 1);
            if (l > m_lo) return w(l) / c;
            return 1.0 - (q_pow(alpha, m_lo + 1) - q_pow(alpha, m_hi + 1)) / c;
        }
        default: break;
    }
    throw ConfigError("pmf: not a multilevel kind");
}

double LevelDistribution::tail(std::size_t j) const {
    switch (kind) {
        case EstimatorKind::ru: return q_pow(alpha, j);
        case EstimatorKind::rr:
        case EstimatorKind::grr: return j <= m_lo ? 1.0 : q_pow(alpha, j);
        case EstimatorKind::tgrr: {
            if (j <= m_lo) return 1.0;
            if (j > m_hi) return 0.0;
            return (q_pow(alpha, j) - q_pow(alpha, m_hi + 1)) / (1.0 - q_pow(alpha, m_hi + 1));
        }
        default: break;
    }
    throw ConfigError("tail: not a multilevel kind");
}

std::size_t LevelDistribution::lowest() const { return kind == EstimatorKind::ru ? 0 : m_lo; }

std::size_t LevelDistribution::highest() const { return kind == EstimatorKind::tgrr ? m_hi : kNoTruncation; }

std::vector<double> LevelDistribution::level_pmf() const {
    validate();
    std::size_t n = 0;
    if (kind == EstimatorKind::tgrr) {
        n = m_hi + 1;
    } else {
        n = m_lo + 1;
        while (tail(n) >= 1e-17) ++n;
    }
    std::vector<double> out(n);
    for (std::size_t l = 0; l < n; ++l) out[l] = pmf(l);
    return out;
}

std::vector<double> LevelDistribution::tail_probs(std::size_t n) const {
    std::vector<double> out(n);
    for (std::size_t j = 0; j < n; ++j) out[j] = tail(j);
    return out;
}

std::size_t LevelDistribution::sample(Rng& rng) const {
    validate();
    if (degenerate()) return lowest();
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::size_t L = 0;
    if (kind == EstimatorKind::tgrr) {
        const double u = unif(rng);
        double cum = 0.0;
        L = m_lo;
        for (; L < m_hi; ++L) {
            cum += pmf(L);
            if (u < cum) break;
        }
    } else {
        const double u = 1.0 - unif(rng);  // (0, 1]
        const double g = std::floor(std::log(u) / std::log(q_pow(alpha, 1)));
        if (g > static_cast<double>(kMaxLevel)) throw NumericalError("sampled level exceeds the level cap");
        L = static_cast<std::size_t>(g);
        if (kind != EstimatorKind::ru) L = std::max(L, m_lo);
    }
    return L;
}

// --- queries ------------------------------------------------------------------------

namespace {

// Accumulates c * psi and c * rho over atom sets sharing one outer theta.
struct QueryBuilder {
    const RatioModel& m;
    std::span<const double> theta;
    const InnerSampler& sampler;
    const MlmcConfig& cfg;
    Rng& rng;
    bool want_grad;
    bool outer;
    double lg0 = 0.0;
    std::vector<double> h0;
    std::vector<double> head;
    double loss = 0.0;
    std::size_t cost = 0;

    QueryBuilder(const RatioModel& m_, std::span<const double> theta_, const InnerSampler& s, const MlmcConfig& c,
                 Rng& r, bool g)
        : m(m_), theta(theta_), sampler(s), cfg(c), rng(r), want_grad(g), outer(c.atoms == AtomMode::include_outer) {
        if (cfg.M0 == 0) throw ConfigError("M0 must be >= 1");
        if (want_grad) {
            h0.resize(m.head_dim());
            head.assign(m.head_dim(), 0.0);
            lg0 = m.log_g_head_grad(theta, h0);
        } else {
            lg0 = m.log_g(theta);
        }
    }

    std::size_t n_fresh(std::size_t M) const { return outer ? M - 1 : M; }

    std::span<double> acc() { return want_grad ? std::span<double>(head) : std::span<double>(); }

    void grow(AtomPool& pool, std::size_t n) {
        const std::size_t before = pool.size();
        pool.grow(sampler, rng, n);
        cost += pool.size() - before;
    }

    // c * (psi at M_level) over the first M_level atoms of pool.
    double add_base(AtomPool& pool, std::size_t level, double c) {
        const std::size_t n = n_fresh(cfg.inner_size(level));
        grow(pool, n);
        const double psi = range_log_Z(pool, {outer, 0, n}, lg0, h0, c, acc()) - lg0;
        if (want_grad)
            for (std::size_t h = 0; h < head.size(); ++h) head[h] -= c * h0[h];
        loss += c * psi;
        return psi;
    }

    // c * (level difference) over the first M_level atoms of pool.
    double add_delta(AtomPool& pool, std::size_t level, double c) {
        if (level == 0) return add_base(pool, 0, c);
        const std::size_t nf = n_fresh(cfg.inner_size(level));
        const std::size_t nh = n_fresh(cfg.inner_size(level - 1));
        grow(pool, nf);
        const double full = range_log_Z(pool, {outer, 0, nf}, lg0, h0, c, acc());
        const double a = range_log_Z(pool, {outer, 0, nh}, lg0, h0, -0.5 * c, acc());
        const double b = range_log_Z(pool, {false, nh, nf}, lg0, h0, -0.5 * c, acc());
        const double d = full - 0.5 * (a + b);
        loss += c * d;
        return d;
    }

    Query finish(std::size_t level) {
        Query q;
        q.loss = loss;
        q.level = level;
        q.cost = cost;
        if (want_grad) {
            q.grad.resize(m.param_dim());
            m.pullback(head, q.grad);
        }
        return q;
    }
};

void check_theta(const RatioModel& m, std::span<const double> theta) { require_dim(theta, m.theta_dim(), "theta"); }

}  // namespace

DeltaQuery delta_query(const RatioModel& m, std::span<const double> theta, const InnerSampler& sampler,
                       std::size_t level, const MlmcConfig& cfg, Rng& rng, bool want_grad) {
    check_theta(m, theta);
    QueryBuilder b(m, theta, sampler, cfg, rng, want_grad);
    AtomPool pool(m, want_grad);
    b.add_delta(pool, level, 1.0);
    Query q = b.finish(level);
    return {q.loss, std::move(q.grad), level, q.cost};
}

Query mlmc_query_at(const RatioModel& m, std::span<const double> theta, const InnerSampler& sampler,
                    const LevelDistribution& dist, std::size_t level, const MlmcConfig& cfg, Rng& rng,
                    bool want_grad) {
    dist.validate();
    check_theta(m, theta);
    if (level < dist.lowest() || (dist.highest() != kNoTruncation && level > dist.highest()) || level > kMaxLevel)
        throw std::invalid_argument("level outside the support of the level distribution");
    QueryBuilder b(m, theta, sampler, cfg, rng, want_grad);

    if (dist.kind == EstimatorKind::ru) {
        AtomPool pool(m, want_grad);
        b.add_delta(pool, level, 1.0 / dist.pmf(level));
        return b.finish(level);
    }

    const bool nested = cfg.coupling == Coupling::nested;
    AtomPool base(m, want_grad);
    b.add_base(base, dist.m_lo, 1.0);
    for (std::size_t j = dist.m_lo + 1; j <= level; ++j) {
        const double c = 1.0 / dist.tail(j);
        if (nested) {
            b.add_delta(base, j, c);
        } else {
            AtomPool pool(m, want_grad);
            b.add_delta(pool, j, c);
        }
    }
    return b.finish(level);
}

Query mlmc_query(const RatioModel& m, std::span<const double> theta, const InnerSampler& sampler,
                 const LevelDistribution& dist, const MlmcConfig& cfg, Rng& rng, bool want_grad) {
    const std::size_t L = dist.sample(rng);
    return mlmc_query_at(m, theta, sampler, dist, L, cfg, rng, want_grad);
}

Query ru_query(const RatioModel& m, std::span<const double> theta, const InnerSampler& sampler,
               const LevelDistribution& dist, const MlmcConfig& cfg, Rng& rng, bool want_grad) {
    if (dist.kind != EstimatorKind::ru) throw ConfigError("ru_query needs an RU level distribution");
    return mlmc_query(m, theta, sampler, dist, cfg, rng, want_grad);
}

Query grr_query(const RatioModel& m, std::span<const double> theta, const InnerSampler& sampler,
                const LevelDistribution& dist, const MlmcConfig& cfg, Rng& rng, bool want_grad) {
    if (dist.kind != EstimatorKind::grr && dist.kind != EstimatorKind::rr)
        throw ConfigError("grr_query needs a GRR or RR level distribution");
    return mlmc_query(m, theta, sampler, dist, cfg, rng, want_grad);
}

Query tgrr_query(const RatioModel& m, std::span<const double> theta, const InnerSampler& sampler,
                 const LevelDistribution& dist, const MlmcConfig& cfg, Rng& rng, bool want_grad) {
    if (dist.kind != EstimatorKind::tgrr) throw ConfigError("tgrr_query needs a TGRR level distribution");
    return mlmc_query(m, theta, sampler, dist, cfg, rng, want_grad);
}

// --- cost and inefficiency -------------------------------------------------------

std::size_t level_cost(const LevelDistribution& dist, std::size_t level, std::size_t M0) {
    if (dist.kind == EstimatorKind::ru) return M0 << level;
    std::size_t c = M0 << dist.m_lo;
    for (std::size_t j = dist.m_lo + 1; j <= level; ++j) c += M0 << j;
    return c;
}

double expected_cost(const LevelDistribution& dist, std::size_t M0) {
    dist.validate();
    const double a = dist.alpha, m0 = static_cast<double>(M0);
    switch (dist.kind) {
        case EstimatorKind::ru: return m0 * (std::exp2(a) - 1.0) / (std::exp2(a) - 2.0);
        case EstimatorKind::rr:
        case EstimatorKind::grr: {
            const double ml = static_cast<double>(dist.m_lo);
            return m0 * std::exp2(ml) + m0 * std::exp2((1.0 - a) * (ml + 1.0)) / (1.0 - std::exp2(1.0 - a));
        }
        case EstimatorKind::tgrr: {
            double c = 0.0;
            for (std::size_t l = dist.m_lo; l <= dist.m_hi; ++l)
                c += dist.pmf(l) * static_cast<double>(level_cost(dist, l, M0));
            return c;
        }
        default: break;
    }
    throw ConfigError("expected_cost: not a multilevel kind");
}

double variance_bound(const LevelDistribution& dist, double r2) {
    dist.validate();
    const double a = dist.alpha;
    if (dist.kind != EstimatorKind::tgrr && a >= r2) return std::numeric_limits<double>::infinity();
    switch (dist.kind) {
        case EstimatorKind::ru: return 1.0 / (dist.p() * (1.0 - std::exp2(a - r2)));
        case EstimatorKind::rr:
        case EstimatorKind::grr: {
            const double ml = static_cast<double>(dist.m_lo);
            return std::exp2(-ml) + std::exp2((a - r2) * (ml + 1.0)) / (1.0 - std::exp2(a - r2));
        }
        case EstimatorKind::tgrr: {
            double v = std::exp2(-static_cast<double>(dist.m_lo));
            for (std::size_t j = dist.m_lo + 1; j <= dist.m_hi; ++j)
                v += std::exp2(-r2 * static_cast<double>(j)) / dist.tail(j);
            return v;
        }
        default: break;
    }
    throw ConfigError("variance_bound: not a multilevel kind");
}

namespace {

LevelDistribution make_dist(EstimatorKind kind, double alpha, std::size_t m_lo, std::size_t m_hi) {
    switch (kind) {
        case EstimatorKind::ru: return LevelDistribution::ru(alpha);
        case EstimatorKind::rr: return LevelDistribution::rr(alpha);
        case EstimatorKind::grr: return LevelDistribution::grr(alpha, m_lo);
        case EstimatorKind::tgrr: return LevelDistribution::tgrr(alpha, m_lo, m_hi);
        default: break;
    }
    throw ConfigError("not a multilevel estimator kind: " + to_string(kind));
}

double product(EstimatorKind kind, double r2, std::size_t m_lo, std::size_t m_hi, double alpha) {
    const auto d = make_dist(kind, alpha, m_lo, m_hi);
    return variance_bound(d, r2) * expected_cost(d, 1);
}

}  // namespace

double optimal_alpha(EstimatorKind kind, double r2, std::size_t m_lo, std::size_t m_hi) {
    if (!(r2 > 1.0)) throw ConfigError("r2 must be > 1");
    if (kind == EstimatorKind::ru || kind == EstimatorKind::rr) return 0.5 * (r2 + 1.0);
    make_dist(kind, 0.5 * (r2 + 1.0), m_lo, m_hi).validate();

    const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
    double lo = 1.0 + 1e-3, hi = r2 - 1e-3;
    double x1 = hi - invphi * (hi - lo), x2 = lo + invphi * (hi - lo);
    double f1 = product(kind, r2, m_lo, m_hi, x1), f2 = product(kind, r2, m_lo, m_hi, x2);
    while (hi - lo > 1e-4) {
        if (f1 <= f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - invphi * (hi - lo);
            f1 = product(kind, r2, m_lo, m_hi, x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + invphi * (hi - lo);
            f2 = product(kind, r2, m_lo, m_hi, x2);
        }
    }
    return 0.5 * (lo + hi);
}

std::vector<InefficiencyRow> inefficiency_curve(EstimatorKind kind, double r2, std::size_t m_lo, std::size_t m_hi,
                                                const std::vector<double>& alphas, std::size_t M0) {
    if (alphas.empty()) throw std::invalid_argument("inefficiency_curve: empty alpha grid");
    std::vector<InefficiencyRow> rows;
    for (double a : alphas) {
        const auto d = make_dist(kind, a, m_lo, m_hi);
        InefficiencyRow r;
        r.alpha = a;
        r.variance = variance_bound(d, r2);
        r.cost = expected_cost(d, M0);
        r.product = r.variance * r.cost;
        rows.push_back(r);
    }
    return rows;
}

const InefficiencyRow& argmin_row(const std::vector<InefficiencyRow>& rows) {
    if (rows.empty()) throw std::invalid_argument("argmin_row: empty table");
    return *std::min_element(rows.begin(), rows.end(),
                             [](const auto& a, const auto& b) { return a.product < b.product; });
}

}  // namespace napt
