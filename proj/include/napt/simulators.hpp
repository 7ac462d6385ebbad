#pragma once

// Benchmark simulators: Two-moon, Lotka-Volterra (Gillespie) and the M/G/1
// queue, each with a box-uniform prior.

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "napt/common.hpp"
#include "napt/rng.hpp"

namespace napt {

enum class Task { two_moon, lotka_volterra, mg1 };

std::string to_string(Task t);
Task task_from_string(std::string_view s);  // throws ConfigError

struct TaskSpec {
    Task task = Task::two_moon;
    std::string name;
    std::size_t theta_dim = 0;
    std::size_t summary_dim = 0;
    std::vector<double> lower;
    std::vector<double> upper;
    std::optional<std::vector<double>> theta_star;
    // Observation used when none is given: a fixed point for Two-moon, a
    // simulation at theta_star otherwise.
    std::optional<std::vector<double>> default_x_o;

    std::vector<std::string> theta_names() const;
    std::vector<std::string> summary_names() const;
};

const TaskSpec& task_spec(Task t);

struct SimOutput {
    std::vector<double> x;
    bool flagged = false;  // simulator hit a guard (LV caps); x still finite
    std::size_t cost = 1;
};

bool in_support(const TaskSpec& spec, std::span<const double> theta);
void prior_sample(const TaskSpec& spec, Rng& rng, std::span<double> theta);
// -inf outside the support.
double prior_log_density(const TaskSpec& spec, std::span<const double> theta);

SimOutput simulate(const TaskSpec& spec, std::span<const double> theta, Rng& rng);

// Two-moon observation for given latent draws (angle a, radius r).
std::array<double, 2> two_moon_map(std::span<const double> theta, double a, double r);
SimOutput two_moon_simulate(std::span<const double> theta, Rng& rng);

struct LvOptions {
    double t_end = 30.0;
    double dt = 0.2;
    std::size_t max_events = 1'000'000;
    double max_population = 1e5;
};

struct LvTrace {
    std::vector<double> predators;  // X on the sampling grid
    std::vector<double> prey;       // Y on the sampling grid
    std::size_t events = 0;
    bool capped = false;
};

// Event rates (pred birth, pred death, prey birth, predation) at state (X, Y).
std::array<double, 4> lv_rates(std::span<const double> theta, double X, double Y);
LvTrace lv_gillespie(std::span<const double> theta, Rng& rng, const LvOptions& opt = {});
std::vector<double> lv_summary(std::span<const double> X, std::span<const double> Y);
SimOutput lv_simulate(std::span<const double> theta, Rng& rng, const LvOptions& opt = {});

inline constexpr std::size_t kMg1Jobs = 50;

// Departure times for service times s_i and arrival times v_i (d_0 = v_0 = 0).
std::vector<double> mg1_departures(std::span<const double> service, std::span<const double> arrivals);
std::vector<double> mg1_summary(std::span<const double> departures);
SimOutput mg1_simulate(std::span<const double> theta, Rng& rng);

// Linear interpolation between order statistics of a sorted sample, q in [0,1].
double percentile_sorted(std::span<const double> sorted, double q);

inline constexpr double kLogFloor = 1e-12;
inline double safe_log(double v) { return std::log(v < kLogFloor ? kLogFloor : v); }

}  // namespace napt
