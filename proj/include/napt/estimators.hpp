#pragma once

// Nested APT quantities: log g, log Z_M, the loss query psi and gradient
// query rho, batched nested estimators and the atomic APT loss.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "napt/common.hpp"
#include "napt/density.hpp"
#include "napt/rng.hpp"
#include "napt/simulators.hpp"

namespace napt {

// log g(theta) = log q(theta | x) - log p(theta) for one fixed x, plus its
// parameter gradient. The gradient is split into a "head" gradient and a
// linear pullback so that a weighted sum over many atoms needs one pullback.
class RatioModel {
public:
    virtual ~RatioModel() = default;
    virtual std::size_t theta_dim() const = 0;
    virtual std::size_t head_dim() const = 0;
    virtual std::size_t param_dim() const = 0;
    virtual double log_g(std::span<const double> theta) const = 0;
    // Returns log g and overwrites head_grad with d log g / d head.
    virtual double log_g_head_grad(std::span<const double> theta, std::span<double> head_grad) const = 0;
    // Maps a head gradient to a parameter gradient (overwrites param_grad).
    virtual void pullback(std::span<const double> head_grad, std::span<double> param_grad) const = 0;
};

// Source of inner atoms theta'.
class InnerSampler {
public:
    virtual ~InnerSampler() = default;
    virtual std::size_t dim() const = 0;
    virtual void draw(Rng& rng, std::span<double> theta) const = 0;
};

class PriorSampler final : public InnerSampler {
public:
    explicit PriorSampler(const TaskSpec& spec) : spec_(spec) {}
    std::size_t dim() const override { return spec_.theta_dim; }
    void draw(Rng& rng, std::span<double> theta) const override { prior_sample(spec_, rng, theta); }

private:
    const TaskSpec& spec_;
};

inline constexpr std::size_t kMaxRejectionTries = 10'000;

// q(theta | x_o) restricted to the prior support by rejection.
class ProposalSampler final : public InnerSampler {
public:
    ProposalSampler(const ConditionalDensity& cd, const TaskSpec& spec, std::span<const double> x_o);
    std::size_t dim() const override { return spec_.theta_dim; }
    // Throws NumericalError after kMaxRejectionTries consecutive rejections.
    void draw(Rng& rng, std::span<double> theta) const override;

private:
    const ConditionalDensity& cd_;
    const TaskSpec& spec_;
    MixtureHead mix_;
};

// The MDN ratio at a fixed x.
class MdnRatio final : public RatioModel {
public:
    MdnRatio(const ConditionalDensity& cd, const TaskSpec& prior, std::span<const double> x);
    std::size_t theta_dim() const override { return cd_.arch().theta_dim; }
    std::size_t head_dim() const override { return cd_.arch().head_dim(); }
    std::size_t param_dim() const override { return cd_.params().size(); }
    // Throw std::domain_error outside the prior support.
    double log_g(std::span<const double> theta) const override;
    double log_g_head_grad(std::span<const double> theta, std::span<double> head_grad) const override;
    void pullback(std::span<const double> head_grad, std::span<double> param_grad) const override;

private:
    double log_prior(std::span<const double> theta) const;

    const ConditionalDensity& cd_;
    const TaskSpec& prior_;
    ForwardPass fp_;
    MixtureHead mix_;
};

double log_g(const ConditionalDensity& cd, const TaskSpec& prior, std::span<const double> x,
             std::span<const double> theta);

struct LossQuery {
    double value = 0.0;
    std::size_t inner_count = 0;
    std::size_t cost = 0;
};

struct GradQuery {
    std::vector<double> g;
    std::size_t inner_count = 0;
    std::size_t cost = 0;
};

// Queries on a given inner set. cost is reported as the inner count; the
// sampling variants below count only fresh draws.
double log_Z_hat(const RatioModel& m, const ThetaBatch& inner);
LossQuery loss_query(const RatioModel& m, std::span<const double> theta, const ThetaBatch& inner);
GradQuery grad_query(const RatioModel& m, std::span<const double> theta, const ThetaBatch& inner);

// -log of the atom-normalized ratio at atoms.row(paired). Throws
// std::invalid_argument for fewer than two atoms or duplicate atoms.
double atomic_apt_loss(const RatioModel& m, const ThetaBatch& atoms, std::size_t paired);
// Same loss and its parameter gradient.
double atomic_apt_loss_grad(const RatioModel& m, const ThetaBatch& atoms, std::size_t paired,
                            std::span<double> grad);

// How inner atoms of a query are formed. fresh: all M atoms are new draws.
// include_outer: the outer theta is one of the atoms and M - 1 are drawn.
enum class AtomMode { fresh, include_outer };

// Result of one sampled query: loss, optional gradient, level and the number
// of fresh inner draws.
struct Query {
    double loss = 0.0;
    std::vector<double> grad;
    std::size_t level = 0;
    std::size_t cost = 0;
};

// Nested query at inner size M with atoms drawn from the sampler.
Query nested_query(const RatioModel& m, std::span<const double> theta, const InnerSampler& sampler,
                   std::size_t M, AtomMode mode, Rng& rng, bool want_grad);

// Mean of n independent queries q(i, rng_i) with rng_i = make_stream(seed, i).
// Serial and parallel execution give bit-identical results.
struct BatchResult {
    double loss = 0.0;
    std::vector<double> grad;
    std::size_t cost = 0;
    std::size_t n = 0;
};
using QueryFn = std::function<Query(std::size_t i, Rng& rng)>;
BatchResult mean_queries(std::size_t n, std::size_t param_dim, bool want_grad, const QueryFn& q,
                         std::uint64_t seed, Exec exec = Exec::parallel);

// Mean nested loss / gradient over pairs (theta_i, x_i) with fresh inner draws.
BatchResult nested_loss_batch(const ConditionalDensity& cd, const TaskSpec& prior, const ThetaBatch& thetas,
                              const ThetaBatch& xs, const InnerSampler& sampler, std::size_t M, AtomMode mode,
                              std::uint64_t seed, Exec exec = Exec::parallel);
BatchResult nested_grad_batch(const ConditionalDensity& cd, const TaskSpec& prior, const ThetaBatch& thetas,
                              const ThetaBatch& xs, const InnerSampler& sampler, std::size_t M, AtomMode mode,
                              std::uint64_t seed, Exec exec = Exec::parallel);

// --- building blocks shared with the multilevel estimators -----------------

// log g and head gradients for a growing pool of inner atoms.
class AtomPool {
public:
    AtomPool(const RatioModel& m, bool with_grad);

    std::size_t size() const { return log_g_.size(); }
    // Draws atoms until size() >= n.
    void grow(const InnerSampler& sampler, Rng& rng, std::size_t n);
    // Appends given atoms.
    void add(std::span<const double> theta);

    std::span<const double> log_g() const { return log_g_; }
    std::span<const double> head_grad(std::size_t j) const { return {head_.data() + j * H_, H_}; }

private:
    const RatioModel& m_;
    bool with_grad_;
    std::size_t H_;
    std::vector<double> log_g_;
    std::vector<double> head_;
    std::vector<double> scratch_;
};

// Inner set {outer theta if with_outer} U pool[begin, end).
struct AtomRange {
    bool with_outer = false;
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t count() const { return (end - begin) + (with_outer ? 1 : 0); }
};

// log Z over an atom range. If head_acc is non-empty, adds
// coef * sum_j softmax_j * head_grad_j to it.
double range_log_Z(const AtomPool& pool, const AtomRange& r, double outer_log_g,
                   std::span<const double> outer_head, double coef, std::span<double> head_acc);

}  // namespace napt
