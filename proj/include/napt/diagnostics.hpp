#pragma once

// Posterior quality metrics (MMD, C2ST, LMD, NLOG) and a rejection-ABC
// reference sampler.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "napt/common.hpp"
#include "napt/density.hpp"
#include "napt/simulators.hpp"

namespace napt {

// Median of pairwise Euclidean distances over the pooled samples. At most
// max_points points are used: an even share of the leading rows of each set.
double median_bandwidth(const ThetaBatch& A, const ThetaBatch& B, std::size_t max_points = 2000);

// Unbiased U-statistic estimate of MMD^2 with the Gaussian kernel
// exp(-|a-b|^2 / (2 sigma^2)). sigma <= 0 selects the median heuristic.
double mmd(const ThetaBatch& A, const ThetaBatch& B, double sigma = 0.0, Exec exec = Exec::parallel);

// k(a,a) + k(b,b) - 2 k(a,b) for single points.
double mmd_singleton(std::span<const double> a, std::span<const double> b, double sigma);

struct MmdTest {
    double statistic = 0.0;
    double sigma = 0.0;
    double null_mean = 0.0;
    double null_sd = 0.0;
    double p_value = 1.0;
};

// Permutation null for the unbiased MMD^2, from one pooled Gram matrix.
MmdTest mmd_permutation_test(const ThetaBatch& A, const ThetaBatch& B, std::size_t permutations, std::uint64_t seed,
                             double sigma = 0.0);

struct C2stOptions {
    std::size_t folds = 5;
    std::size_t hidden = 32;
    std::size_t max_epochs = 200;
    std::size_t patience = 10;
    std::size_t batch_size = 64;
    double learning_rate = 1e-3;
    double validation_fraction = 0.1;
};

struct C2stResult {
    double accuracy = 0.5;
    std::vector<double> fold_accuracy;
    std::vector<std::size_t> dropped_features;  // constant columns
};

// Cross-validated held-out accuracy of a one-hidden-layer classifier telling
// A from B. Requires |A| == |B| >= folds.
C2stResult c2st(const ThetaBatch& A, const ThetaBatch& B, std::uint64_t seed, const C2stOptions& opt = {});

// log of the median |x - x_o| with one simulation per posterior sample.
double lmd(const ThetaBatch& posterior, std::span<const double> x_o, const TaskSpec& task, std::uint64_t seed,
           Exec exec = Exec::parallel);

// log of the median distance, with the log clamped at 1e-12.
double log_median(std::vector<double> distances);

double nlog(const ConditionalDensity& cd, std::span<const double> x_o, std::span<const double> theta_star);

struct AbcResult {
    ThetaBatch samples;
    std::size_t simulations = 0;
    double acceptance_rate = 0.0;
};

// Prior draws whose simulated x satisfy |x - x_o| <= eps, from `budget`
// simulations. Work is split into fixed chunks with their own streams, so
// serial and parallel runs agree. Throws NumericalError on zero acceptances.
AbcResult rejection_abc(const TaskSpec& task, std::span<const double> x_o, double eps, std::size_t budget,
                        std::uint64_t seed, Exec exec = Exec::parallel);

// Two-component Gaussian mixture fitted by EM.
struct Gmm2 {
    std::vector<double> mean[2];
    double weight[2] = {0.5, 0.5};
    double log_likelihood = 0.0;
    double mean_separation() const;
};
Gmm2 fit_gmm2(const ThetaBatch& data, std::size_t iterations = 200);

// Draws n samples from q(theta | x_o) restricted to the prior support.
ThetaBatch posterior_samples(const ConditionalDensity& cd, const TaskSpec& task, std::span<const double> x_o,
                             std::size_t n, std::uint64_t seed, Exec exec = Exec::parallel);

struct MetricReport {
    std::optional<double> mmd;
    std::optional<double> c2st;
    double lmd = 0.0;
    std::optional<double> nlog;
    std::size_t n_posterior = 0;
    std::size_t n_reference = 0;
};

}  // namespace napt
