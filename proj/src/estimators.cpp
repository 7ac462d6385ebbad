#include "napt/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace napt {

ProposalSampler::ProposalSampler(const ConditionalDensity& cd, const TaskSpec& spec, std::span<const double> x_o)
    : cd_(cd), spec_(spec), mix_(cd.mixture(cd.forward(x_o))) {}

void ProposalSampler::draw(Rng& rng, std::span<double> theta) const {
    for (std::size_t t = 0; t < kMaxRejectionTries; ++t) {
        cd_.sample_at(mix_, rng, theta);
        if (in_support(spec_, theta)) return;
    }
    throw NumericalError("proposal: no draw inside the prior support after 10000 attempts");
}

MdnRatio::MdnRatio(const ConditionalDensity& cd, const TaskSpec& prior, std::span<const double> x)
    : cd_(cd), prior_(prior), fp_(cd.forward(x)), mix_(cd.mixture(fp_)) {
    if (prior.theta_dim != cd.arch().theta_dim) throw std::invalid_argument("MdnRatio: prior/density dim mismatch");
}

double MdnRatio::log_prior(std::span<const double> theta) const {
    const double lp = prior_log_density(prior_, theta);
    if (!std::isfinite(lp)) throw std::domain_error("log_g: theta outside the prior support");
    return lp;
}

double MdnRatio::log_g(std::span<const double> theta) const {
    const double lp = log_prior(theta);
    return cd_.log_density_at(mix_, theta) - lp;
}

double MdnRatio::log_g_head_grad(std::span<const double> theta, std::span<double> head_grad) const {
    const double lp = log_prior(theta);
    return cd_.log_density_grad_at(mix_, theta, head_grad) - lp;
}

void MdnRatio::pullback(std::span<const double> head_grad, std::span<double> param_grad) const {
    cd_.pullback(fp_, head_grad, param_grad);
}

double log_g(const ConditionalDensity& cd, const TaskSpec& prior, std::span<const double> x,
             std::span<const double> theta) {
    return MdnRatio(cd, prior, x).log_g(theta);
}

// --- atom pool ------------------------------------------------------------------

AtomPool::AtomPool(const RatioModel& m, bool with_grad)
    : m_(m), with_grad_(with_grad), H_(m.head_dim()), scratch_(m.theta_dim()) {}

void AtomPool::add(std::span<const double> theta) {
    if (with_grad_) {
        const std::size_t j = log_g_.size();
        head_.resize((j + 1) * H_);
        log_g_.push_back(m_.log_g_head_grad(theta, {head_.data() + j * H_, H_}));
    } else {
        log_g_.push_back(m_.log_g(theta));
    }
}

void AtomPool::grow(const InnerSampler& sampler, Rng& rng, std::size_t n) {
    while (log_g_.size() < n) {
        sampler.draw(rng, scratch_);
        add(scratch_);
    }
}

double range_log_Z(const AtomPool& pool, const AtomRange& r, double outer_log_g, std::span<const double> outer_head,
                   double coef, std::span<double> head_acc) {
    const std::size_t n = r.count();
    if (n == 0) throw std::invalid_argument("log_Z_hat: empty inner set");
    const auto lg = pool.log_g();
    double mx = r.with_outer ? outer_log_g : -std::numeric_limits<double>::infinity();
    for (std::size_t j = r.begin; j < r.end; ++j) mx = std::max(mx, lg[j]);
    if (!std::isfinite(mx)) throw NumericalError("log_Z_hat: non-finite log g");
    double s = r.with_outer ? std::exp(outer_log_g - mx) : 0.0;
    for (std::size_t j = r.begin; j < r.end; ++j) s += std::exp(lg[j] - mx);
    const double lse = mx + std::log(s);

    if (!head_acc.empty() && coef != 0.0) {
        if (r.with_outer) {
            const double w = coef * std::exp(outer_log_g - lse);
            for (std::size_t h = 0; h < head_acc.size(); ++h) head_acc[h] += w * outer_head[h];
        }
        for (std::size_t j = r.begin; j < r.end; ++j) {
            const double w = coef * std::exp(lg[j] - lse);
            const auto hg = pool.head_grad(j);
            for (std::size_t h = 0; h < head_acc.size(); ++h) head_acc[h] += w * hg[h];
        }
    }
    return lse - std::log(static_cast<double>(n));
}

// --- queries on a given inner set ------------------------------------------------

namespace {

AtomPool pool_of(const RatioModel& m, const ThetaBatch& inner, bool with_grad) {
    if (inner.empty()) throw std::invalid_argument("inner set must contain at least one atom");
    require_dim(inner.row(0), m.theta_dim(), "inner atom");
    AtomPool pool(m, with_grad);
    for (std::size_t j = 0; j < inner.size(); ++j) pool.add(inner.row(j));
    return pool;
}

}  // namespace

double log_Z_hat(const RatioModel& m, const ThetaBatch& inner) {
    const AtomPool pool = pool_of(m, inner, false);
    return range_log_Z(pool, {false, 0, pool.size()}, 0.0, {}, 0.0, {});
}

LossQuery loss_query(const RatioModel& m, std::span<const double> theta, const ThetaBatch& inner) {
    const double lz = log_Z_hat(m, inner);
    return {lz - m.log_g(theta), inner.size(), inner.size()};
}

GradQuery grad_query(const RatioModel& m, std::span<const double> theta, const ThetaBatch& inner) {
    const AtomPool pool = pool_of(m, inner, true);
    std::vector<double> head(m.head_dim(), 0.0), outer(m.head_dim());
    m.log_g_head_grad(theta, outer);
    range_log_Z(pool, {false, 0, pool.size()}, 0.0, {}, 1.0, head);
    for (std::size_t h = 0; h < head.size(); ++h) head[h] -= outer[h];
    GradQuery q;
    q.g.resize(m.param_dim());
    m.pullback(head, q.g);
    q.inner_count = q.cost = inner.size();
    return q;
}

namespace {

void check_atoms(const ThetaBatch& atoms, std::size_t paired) {
    if (atoms.size() < 2) throw std::invalid_argument("atomic APT needs at least two atoms");
    if (paired >= atoms.size()) throw std::invalid_argument("atomic APT: paired index out of range");
    for (std::size_t i = 0; i < atoms.size(); ++i)
        for (std::size_t j = i + 1; j < atoms.size(); ++j) {
            const auto a = atoms.row(i), b = atoms.row(j);
            if (std::equal(a.begin(), a.end(), b.begin())) throw std::invalid_argument("atomic APT: duplicate atoms");
        }
}

}  // namespace

double atomic_apt_loss(const RatioModel& m, const ThetaBatch& atoms, std::size_t paired) {
    check_atoms(atoms, paired);
    const AtomPool pool = pool_of(m, atoms, false);
    const double lz = range_log_Z(pool, {false, 0, pool.size()}, 0.0, {}, 0.0, {});
    return lz + std::log(static_cast<double>(pool.size())) - pool.log_g()[paired];
}

double atomic_apt_loss_grad(const RatioModel& m, const ThetaBatch& atoms, std::size_t paired,
                            std::span<double> grad) {
    check_atoms(atoms, paired);
    require_dim(grad, m.param_dim(), "atomic_apt_loss_grad");
    const AtomPool pool = pool_of(m, atoms, true);
    std::vector<double> head(m.head_dim(), 0.0);
    const double lz = range_log_Z(pool, {false, 0, pool.size()}, 0.0, {}, 1.0, head);
    const auto hp = pool.head_grad(paired);
    for (std::size_t h = 0; h < head.size(); ++h) head[h] -= hp[h];
    m.pullback(head, grad);
    return lz + std::log(static_cast<double>(pool.size())) - pool.log_g()[paired];
}

// --- sampled queries ------------------------------------------------------------------

Query nested_query(const RatioModel& m, std::span<const double> theta, const InnerSampler& sampler, std::size_t M,
                   AtomMode mode, Rng& rng, bool want_grad) {
    if (M == 0) throw std::invalid_argument("nested query: M must be >= 1");
    const bool outer = mode == AtomMode::include_outer;
    const std::size_t n_fresh = outer ? M - 1 : M;
    const std::size_t H = m.head_dim();

    std::vector<double> outer_head(want_grad ? H : 0);
    const double lg0 = want_grad ? m.log_g_head_grad(theta, outer_head) : m.log_g(theta);

    AtomPool pool(m, want_grad);
    pool.grow(sampler, rng, n_fresh);
    std::vector<double> head(want_grad ? H : 0, 0.0);
    Query q;
    q.loss = range_log_Z(pool, {outer, 0, n_fresh}, lg0, outer_head, 1.0, head) - lg0;
    q.cost = n_fresh;
    if (want_grad) {
        for (std::size_t h = 0; h < H; ++h) head[h] -= outer_head[h];
        q.grad.resize(m.param_dim());
        m.pullback(head, q.grad);
    }
    return q;
}

BatchResult mean_queries(std::size_t n, std::size_t param_dim, bool want_grad, const QueryFn& q, std::uint64_t seed,
                         Exec exec) {
    if (n == 0) throw std::invalid_argument("batch must contain at least one pair");
    std::vector<Query> res(n);
    const auto run = [&](std::size_t i) {
        Rng rng = make_stream(seed, i);
        res[i] = q(i, rng);
    };
    if (exec == Exec::parallel) {
        // Exceptions cannot cross the parallel region; keep the first one.
        std::exception_ptr err;
#pragma omp parallel for schedule(dynamic)
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

    BatchResult out;
    out.n = n;
    if (want_grad) out.grad.assign(param_dim, 0.0);
    for (const Query& r : res) {
        out.loss += r.loss;
        out.cost += r.cost;
        if (want_grad)
            for (std::size_t k = 0; k < param_dim; ++k) out.grad[k] += r.grad[k];
    }
    const double inv = 1.0 / static_cast<double>(n);
    out.loss *= inv;
    for (double& g : out.grad) g *= inv;
    return out;
}

namespace {

BatchResult nested_batch(const ConditionalDensity& cd, const TaskSpec& prior, const ThetaBatch& thetas,
                         const ThetaBatch& xs, const InnerSampler& sampler, std::size_t M, AtomMode mode,
                         std::uint64_t seed, Exec exec, bool want_grad) {
    if (thetas.size() != xs.size()) throw std::invalid_argument("nested batch: theta/x count mismatch");
    return mean_queries(
        thetas.size(), cd.params().size(), want_grad,
        [&](std::size_t i, Rng& rng) {
            MdnRatio m(cd, prior, xs.row(i));
            return nested_query(m, thetas.row(i), sampler, M, mode, rng, want_grad);
        },
        seed, exec);
}

}  // namespace

BatchResult nested_loss_batch(const ConditionalDensity& cd, const TaskSpec& prior, const ThetaBatch& thetas,
                              const ThetaBatch& xs, const InnerSampler& sampler, std::size_t M, AtomMode mode,
                              std::uint64_t seed, Exec exec) {
    return nested_batch(cd, prior, thetas, xs, sampler, M, mode, seed, exec, false);
}

BatchResult nested_grad_batch(const ConditionalDensity& cd, const TaskSpec& prior, const ThetaBatch& thetas,
                              const ThetaBatch& xs, const InnerSampler& sampler, std::size_t M, AtomMode mode,
                              std::uint64_t seed, Exec exec) {
    return nested_batch(cd, prior, thetas, xs, sampler, M, mode, seed, exec, true);
}

}  // namespace napt
