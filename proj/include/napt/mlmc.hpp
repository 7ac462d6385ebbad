#pragma once

// Randomized multilevel estimators for the nested APT loss and gradient:
// level laws, antithetic level differences, RU/RR/GRR/TGRR queries, cost
// formulas and the choice of alpha by asymptotic inefficiency.

#include <cstddef>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "napt/estimators.hpp"

namespace napt {

enum class EstimatorKind { nested, atomic, ru, rr, grr, tgrr };

std::string to_string(EstimatorKind k);
EstimatorKind estimator_from_string(std::string_view s);  // throws ConfigError
bool is_multilevel(EstimatorKind k);

inline constexpr std::size_t kNoTruncation = std::numeric_limits<std::size_t>::max();
// Levels above this are never realized (P(L > 40) < 2^-40 for alpha > 1).
inline constexpr std::size_t kMaxLevel = 40;

struct LevelDistribution {
    EstimatorKind kind = EstimatorKind::ru;
    double alpha = 1.4;
    std::size_t m_lo = 0;
    std::size_t m_hi = kNoTruncation;

    static LevelDistribution ru(double alpha);
    static LevelDistribution rr(double alpha);
    static LevelDistribution grr(double alpha, std::size_t m_lo);
    static LevelDistribution tgrr(double alpha, std::size_t m_lo, std::size_t m_hi);

    // Throws ConfigError (alpha <= 1, m_lo > m_hi, non-multilevel kind).
    void validate() const;

    double p() const;                    // 1 - 2^-alpha
    double w(std::size_t l) const;       // (1-p)^l p
    double pmf(std::size_t l) const;     // P(L = l)
    double tail(std::size_t j) const;    // P(L >= j)
    std::size_t lowest() const;          // smallest level with positive mass
    std::size_t highest() const;         // m_hi or kNoTruncation
    bool degenerate() const { return lowest() == highest(); }

    // Masses for levels 0..n-1 where n = highest()+1 for truncated laws and
    // otherwise the first level whose tail drops below 1e-17.
    std::vector<double> level_pmf() const;
    std::vector<double> tail_probs(std::size_t n) const;  // p_0 .. p_{n-1}

    // Inverse-CDF draw. Consumes no randomness for a degenerate law.
    std::size_t sample(Rng& rng) const;
};

// Pairing of inner atom sets across the levels of one GRR/TGRR query.
// independent: every level difference uses its own fresh draw of M_l atoms.
// nested: one growing set; level l uses its first M_l atoms and its (a)
// half is the previous level's set.
enum class Coupling { independent, nested };

std::string to_string(Coupling c);
Coupling coupling_from_string(std::string_view s);
std::string to_string(AtomMode m);
AtomMode atom_mode_from_string(std::string_view s);

struct MlmcConfig {
    std::size_t M0 = 8;
    double r1 = 1.8;
    double r2 = 1.8;
    AtomMode atoms = AtomMode::fresh;
    Coupling coupling = Coupling::independent;

    std::size_t inner_size(std::size_t level) const;  // M0 * 2^level
};

struct DeltaQuery {
    double dpsi = 0.0;
    std::vector<double> drho;
    std::size_t level = 0;
    std::size_t cost = 0;
};

// Antithetic level difference with one fresh set of M_l atoms (M_0 at l = 0).
DeltaQuery delta_query(const RatioModel& m, std::span<const double> theta, const InnerSampler& sampler,
                       std::size_t level, const MlmcConfig& cfg, Rng& rng, bool want_grad);

// Samples L from dist, then evaluates the matching estimator.
Query mlmc_query(const RatioModel& m, std::span<const double> theta, const InnerSampler& sampler,
                 const LevelDistribution& dist, const MlmcConfig& cfg, Rng& rng, bool want_grad);
// Same with a given level (levels stored with the training data).
Query mlmc_query_at(const RatioModel& m, std::span<const double> theta, const InnerSampler& sampler,
                    const LevelDistribution& dist, std::size_t level, const MlmcConfig& cfg, Rng& rng,
                    bool want_grad);

// Kind-checked entry points; throw ConfigError when dist.kind does not match.
Query ru_query(const RatioModel& m, std::span<const double> theta, const InnerSampler& sampler,
               const LevelDistribution& dist, const MlmcConfig& cfg, Rng& rng, bool want_grad);
Query grr_query(const RatioModel& m, std::span<const double> theta, const InnerSampler& sampler,
                const LevelDistribution& dist, const MlmcConfig& cfg, Rng& rng, bool want_grad);
Query tgrr_query(const RatioModel& m, std::span<const double> theta, const InnerSampler& sampler,
                 const LevelDistribution& dist, const MlmcConfig& cfg, Rng& rng, bool want_grad);

// Fresh inner draws consumed by a query at a given level with independent
// coupling and fresh atoms.
std::size_t level_cost(const LevelDistribution& dist, std::size_t level, std::size_t M0);
// Expected simulations per query; throws ConfigError for alpha <= 1.
double expected_cost(const LevelDistribution& dist, std::size_t M0);

// Variance bound with constants dropped, as a function of alpha.
double variance_bound(const LevelDistribution& dist, double r2);

// alpha minimizing variance_bound * expected_cost. Closed form (r2 + 1) / 2
// for RU and RR, golden-section search on (1.001, r2 - 0.001) otherwise.
double optimal_alpha(EstimatorKind kind, double r2, std::size_t m_lo = 0, std::size_t m_hi = kNoTruncation);

struct InefficiencyRow {
    double alpha = 0.0;
    double variance = 0.0;
    double cost = 0.0;
    double product = 0.0;
};

std::vector<InefficiencyRow> inefficiency_curve(EstimatorKind kind, double r2, std::size_t m_lo, std::size_t m_hi,
                                                const std::vector<double>& alphas, std::size_t M0 = 1);
// Row with the smallest product; throws std::invalid_argument for an empty table.
const InefficiencyRow& argmin_row(const std::vector<InefficiencyRow>& rows);

}  // namespace napt
