#pragma once

// Numerical experiments on a toy ratio model with closed-form answers:
// decay rates of level differences, bias and variance, unbiasedness of the
// randomized estimators and the SGD optimal-gap bound.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "napt/estimators.hpp"
#include "napt/mlmc.hpp"

namespace napt {

// Standard normal prior in one dimension and g(theta) = exp(a theta + b).
// The single parameter is a, so d log g / da = theta. With a = 0.5 and
// b = -0.125, Z = E[g] = exp(a^2/2 + b) = 1.
class ToyModel final : public RatioModel {
public:
    explicit ToyModel(double a = 0.5, double b = -0.125) : a_(a), b_(b) {}

    double a() const { return a_; }
    double b() const { return b_; }
    double Z() const;
    // Limits as M -> infinity, averaged over theta ~ N(0, 1).
    double psi_limit_mean() const { return 0.5 * a_ * a_; }  // log Z - E[log g]
    double rho_limit_mean() const { return a_; }             // d log Z / da - E[theta]

    std::size_t theta_dim() const override { return 1; }
    std::size_t head_dim() const override { return 1; }
    std::size_t param_dim() const override { return 1; }
    double log_g(std::span<const double> theta) const override { return a_ * theta[0] + b_; }
    double log_g_head_grad(std::span<const double> theta, std::span<double> head_grad) const override {
        head_grad[0] = theta[0];
        return log_g(theta);
    }
    void pullback(std::span<const double> head_grad, std::span<double> param_grad) const override {
        param_grad[0] = head_grad[0];
    }

private:
    double a_, b_;
};

class StdNormalSampler final : public InnerSampler {
public:
    std::size_t dim() const override { return 1; }
    void draw(Rng& rng, std::span<double> theta) const override;
};

enum class RateKind { delta_psi, delta_rho, rho_variance, psi_bias };

std::string to_string(RateKind k);
RateKind rate_kind_from_string(std::string_view s);  // throws ConfigError

struct RateReport {
    RateKind kind = RateKind::delta_psi;
    std::vector<std::size_t> levels;
    std::vector<double> value;  // statistic per level
    std::vector<double> se;
    std::size_t reps = 0;
    double slope = 0.0;  // least squares of log2(value) on level
    double intercept = 0.0;
    double r_squared = 0.0;
};

// Per-level statistic:
//   delta_psi, delta_rho: E[|Delta_l|^2] of the antithetic level difference,
//   rho_variance: Var[rho_{M_l}] at a fixed outer theta = 0,
//   psi_bias: |E[psi_{M_l}] - E[psi_{M_ref}]| with M_ref = 2^16.
// Needs at least 4 levels and 10^4 replications (std::invalid_argument);
// throws NumericalError on non-finite statistics.
RateReport estimate_rate(RateKind kind, const ToyModel& model, const std::vector<std::size_t>& levels,
                         std::size_t reps, std::size_t M0, std::uint64_t seed, Exec exec = Exec::parallel);

// Least-squares line through (x, y); returns {slope, intercept, r^2}.
struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
};
LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y);

struct ReferenceMoments {
    std::size_t M = 0;
    std::size_t reps = 0;
    double loss = 0.0, loss_se = 0.0;
    double grad = 0.0, grad_se = 0.0;
};

// E[psi_M] and E[rho_M] for fresh atoms: exact outer parts plus a Monte
// Carlo estimate of E[log Z_M] (control variate Z_M - Z) and E[d log Z_M].
ReferenceMoments reference_moments(const ToyModel& model, std::size_t M, std::size_t reps, std::uint64_t seed,
                                   Exec exec = Exec::parallel);

struct UnbiasednessReport {
    EstimatorKind kind = EstimatorKind::ru;
    std::size_t reps = 0;
    double loss_mean = 0.0, loss_se = 0.0;
    double grad_mean = 0.0, grad_se = 0.0;
    ReferenceMoments reference;
    double loss_z = 0.0;  // NaN when the combined SE is zero
    double grad_z = 0.0;
    bool zero_variance = false;
    double mean_cost = 0.0;
};

// Mean of reps randomized queries against the M = 2^16 reference.
UnbiasednessReport verify_unbiasedness(const ToyModel& model, const LevelDistribution& dist, const MlmcConfig& cfg,
                                       std::size_t reps, std::uint64_t seed, Exec exec = Exec::parallel,
                                       std::size_t reference_reps = 64);

// Mean realized cost (fresh inner draws) over n sampled levels.
struct CostReport {
    double mean = 0.0;
    double se = 0.0;
    double expected = 0.0;
    std::size_t n = 0;
};
CostReport realized_cost(const LevelDistribution& dist, std::size_t M0, std::size_t n, std::uint64_t seed);

// SGD with step gamma on L(phi) = mu/2 |phi|^2 in `dim` dimensions, where the
// gradient oracle adds a fixed bias b (|b|^2 = U_b) and Gaussian noise with
// E|eta|^2 = U_eta.
struct SgdSetup {
    double mu = 1.0;
    double K = 1.0;
    double gamma = 0.5;
    double U_b = 0.0;
    double U_eta = 0.0;
    std::size_t T = 1000;
    std::size_t seeds = 100;
    std::size_t dim = 2;
    double phi0 = 1.0;  // every coordinate of the start point
};

struct SgdReport {
    std::vector<double> mean_gap;  // t = 0..T
    std::vector<double> se;
    std::vector<double> bound;
    double G0 = 0.0;
    bool bound_ok = true;            // no t with gap > bound + 3 SE
    std::size_t worst_t = 0;         // t of the largest (gap - bound) / SE
    double worst_excess = 0.0;       // that largest excess in SE units (or raw if SE = 0)
};

// Throws ConfigError unless 0 < gamma <= min(1/K, 1/mu) and mu <= K.
SgdReport sgd_bound_check(const SgdSetup& s, std::uint64_t seed);

}  // namespace napt
