#include "napt/simulators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

namespace napt {

std::string to_string(Task t) {
    switch (t) {
        case Task::two_moon: return "two_moon";
        case Task::lotka_volterra: return "lotka_volterra";
        case Task::mg1: return "mg1";
    }
    return "?";
}

Task task_from_string(std::string_view s) {
    if (s == "two_moon" || s == "twomoon") return Task::two_moon;
    if (s == "lotka_volterra" || s == "lv") return Task::lotka_volterra;
    if (s == "mg1" || s == "m/g/1") return Task::mg1;
    throw ConfigError("unknown task '" + std::string(s) + "'");
}

const TaskSpec& task_spec(Task t) {
    static const TaskSpec two_moon = [] {
        TaskSpec s;
        s.task = Task::two_moon;
        s.name = "two_moon";
        s.theta_dim = 2;
        s.summary_dim = 2;
        s.lower = {-1.0, -1.0};
        s.upper = {1.0, 1.0};
        s.default_x_o = std::vector<double>{0.0, 0.0};
        return s;
    }();
    static const TaskSpec lv = [] {
        TaskSpec s;
        s.task = Task::lotka_volterra;
        s.name = "lotka_volterra";
        s.theta_dim = 4;
        s.summary_dim = 9;
        s.lower.assign(4, -5.0);
        s.upper.assign(4, 2.0);
        return s;
    }();
    static const TaskSpec mg1 = [] {
        TaskSpec s;
        s.task = Task::mg1;
        s.name = "mg1";
        s.theta_dim = 3;
        s.summary_dim = 5;
        s.lower = {0.0, 0.0, 0.0};
        s.upper = {10.0, 10.0, 1.0 / 3.0};
        s.theta_star = std::vector<double>{1.0, 4.0, 0.2};
        return s;
    }();
    switch (t) {
        case Task::two_moon: return two_moon;
        case Task::lotka_volterra: return lv;
        case Task::mg1: return mg1;
    }
    return two_moon;
}

std::vector<std::string> TaskSpec::theta_names() const {
    std::vector<std::string> n;
    for (std::size_t i = 0; i < theta_dim; ++i) n.push_back("theta" + std::to_string(i + 1));
    return n;
}

std::vector<std::string> TaskSpec::summary_names() const {
    switch (task) {
        case Task::lotka_volterra:
            return {"log_mean_x", "log_mean_y", "log_var_x", "log_var_y", "acf1_x",
                    "acf2_x",     "acf1_y",     "acf2_y",    "xcorr"};
        case Task::mg1: return {"log_q0", "log_q25", "log_q50", "log_q75", "log_q100"};
        case Task::two_moon: break;
    }
    return {"x1", "x2"};
}

bool in_support(const TaskSpec& spec, std::span<const double> theta) {
    require_dim(theta, spec.theta_dim, "prior");
    for (std::size_t i = 0; i < spec.theta_dim; ++i)
        if (!(theta[i] >= spec.lower[i] && theta[i] <= spec.upper[i])) return false;
    return true;
}

void prior_sample(const TaskSpec& spec, Rng& rng, std::span<double> theta) {
    require_dim(theta, spec.theta_dim, "prior_sample");
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i < spec.theta_dim; ++i)
        theta[i] = spec.lower[i] + (spec.upper[i] - spec.lower[i]) * u(rng);
}

double prior_log_density(const TaskSpec& spec, std::span<const double> theta) {
    if (!in_support(spec, theta)) return -std::numeric_limits<double>::infinity();
    double lp = 0.0;
    for (std::size_t i = 0; i < spec.theta_dim; ++i) lp -= std::log(spec.upper[i] - spec.lower[i]);
    return lp;
}

SimOutput simulate(const TaskSpec& spec, std::span<const double> theta, Rng& rng) {
    switch (spec.task) {
        case Task::two_moon: return two_moon_simulate(theta, rng);
        case Task::lotka_volterra: return lv_simulate(theta, rng);
        case Task::mg1: return mg1_simulate(theta, rng);
    }
    throw std::logic_error("simulate: bad task");
}

// --- Two-moon ---------------------------------------------------------------

std::array<double, 2> two_moon_map(std::span<const double> theta, double a, double r) {
    require_dim(theta, 2, "two_moon");
    const double s = std::numbers::sqrt2;
    return {r * std::cos(a) + 0.25 - std::abs(theta[0] + theta[1]) / s,
            r * std::sin(a) + (-theta[0] + theta[1]) / s};
}

SimOutput two_moon_simulate(std::span<const double> theta, Rng& rng) {
    std::uniform_real_distribution<double> ua(-std::numbers::pi / 2, std::numbers::pi / 2);
    std::normal_distribution<double> nr(0.1, 0.01);
    const double a = ua(rng);
    const double r = nr(rng);
    const auto x = two_moon_map(theta, a, r);
    return {{x[0], x[1]}, false, 1};
}

// --- Lotka-Volterra -----------------------------------------------------------

std::array<double, 4> lv_rates(std::span<const double> theta, double X, double Y) {
    require_dim(theta, 4, "lotka_volterra");
    return {std::exp(theta[0]) * X * Y, std::exp(theta[1]) * X, std::exp(theta[2]) * Y,
            std::exp(theta[3]) * X * Y};
}

LvTrace lv_gillespie(std::span<const double> theta, Rng& rng, const LvOptions& opt) {
    const std::size_t n_grid = static_cast<std::size_t>(std::llround(opt.t_end / opt.dt)) + 1;
    LvTrace tr;
    tr.predators.reserve(n_grid);
    tr.prey.reserve(n_grid);
    double X = 50, Y = 100, t = 0.0;
    std::uniform_real_distribution<double> u(0.0, 1.0);

    auto fill_until = [&](double t_next) {
        while (tr.predators.size() < n_grid && static_cast<double>(tr.predators.size()) * opt.dt < t_next) {
            tr.predators.push_back(X);
            tr.prey.push_back(Y);
        }
    };

    while (tr.predators.size() < n_grid) {
        const auto rates = lv_rates(theta, X, Y);
        const double total = rates[0] + rates[1] + rates[2] + rates[3];
        if (total <= 0.0) break;
        if (tr.events >= opt.max_events || X + Y > opt.max_population) {
            tr.capped = true;
            break;
        }
        // 1 - u lies in (0, 1] so the waiting time is finite and positive.
        const double dt = -std::log(1.0 - u(rng)) / total;
        fill_until(t + dt);
        t += dt;
        const double pick = u(rng) * total;
        if (pick < rates[0])
            X += 1;
        else if (pick < rates[0] + rates[1])
            X -= 1;
        else if (pick < rates[0] + rates[1] + rates[2])
            Y += 1;
        else
            Y -= 1;
        ++tr.events;
    }
    fill_until(std::numeric_limits<double>::infinity());
    return tr;
}

namespace {

double mean_of(std::span<const double> v) {
    double s = 0.0;
    for (double e : v) s += e;
    return s / static_cast<double>(v.size());
}

double autocorr(std::span<const double> v, double m, std::size_t lag) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) den += (v[i] - m) * (v[i] - m);
    if (den <= 0.0) return 0.0;
    for (std::size_t i = 0; i + lag < v.size(); ++i) num += (v[i] - m) * (v[i + lag] - m);
    return num / den;
}

}  // namespace

std::vector<double> lv_summary(std::span<const double> X, std::span<const double> Y) {
    if (X.size() != Y.size() || X.size() < 3) throw std::invalid_argument("lv_summary: bad series");
    const double n = static_cast<double>(X.size());
    const double mx = mean_of(X), my = mean_of(Y);
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < X.size(); ++i) {
        sxx += (X[i] - mx) * (X[i] - mx);
        syy += (Y[i] - my) * (Y[i] - my);
        sxy += (X[i] - mx) * (Y[i] - my);
    }
    const double cross = (sxx > 0.0 && syy > 0.0) ? sxy / std::sqrt(sxx * syy) : 0.0;
    return {safe_log(mx),          safe_log(my),          safe_log(sxx / (n - 1)), safe_log(syy / (n - 1)),
            autocorr(X, mx, 1),    autocorr(X, mx, 2),    autocorr(Y, my, 1),      autocorr(Y, my, 2),
            cross};
}

SimOutput lv_simulate(std::span<const double> theta, Rng& rng, const LvOptions& opt) {
    const LvTrace tr = lv_gillespie(theta, rng, opt);
    return {lv_summary(tr.predators, tr.prey), tr.capped, 1};
}

// --- M/G/1 --------------------------------------------------------------------

std::vector<double> mg1_departures(std::span<const double> service, std::span<const double> arrivals) {
    if (service.size() != arrivals.size()) throw std::invalid_argument("mg1_departures: size mismatch");
    std::vector<double> d(service.size());
    double prev = 0.0;
    for (std::size_t i = 0; i < service.size(); ++i) {
        prev = prev + service[i] + std::max(0.0, arrivals[i] - prev);
        d[i] = prev;
    }
    return d;
}

double percentile_sorted(std::span<const double> sorted, double q) {
    if (sorted.empty()) throw std::invalid_argument("percentile of empty sample");
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

std::vector<double> mg1_summary(std::span<const double> departures) {
    std::vector<double> inter(departures.size());
    double prev = 0.0;
    for (std::size_t i = 0; i < departures.size(); ++i) {
        inter[i] = departures[i] - prev;
        prev = departures[i];
    }
    std::sort(inter.begin(), inter.end());
    std::vector<double> out;
    for (double q : {0.0, 0.25, 0.5, 0.75, 1.0}) out.push_back(safe_log(percentile_sorted(inter, q)));
    return out;
}

SimOutput mg1_simulate(std::span<const double> theta, Rng& rng) {
    require_dim(theta, 3, "mg1");
    if (!(theta[0] >= 0.0 && theta[1] >= 0.0 && theta[2] > 0.0))
        throw std::invalid_argument("mg1: need theta1 >= 0, theta2 >= 0, theta3 > 0");
    std::uniform_real_distribution<double> us(theta[0], theta[0] + theta[1]);
    std::exponential_distribution<double> ev(theta[2]);
    std::vector<double> s(kMg1Jobs), v(kMg1Jobs);
    double t = 0.0;
    for (std::size_t i = 0; i < kMg1Jobs; ++i) {
        s[i] = theta[1] > 0.0 ? us(rng) : theta[0];
        t += ev(rng);
        v[i] = t;
    }
    return {mg1_summary(mg1_departures(s, v)), false, 1};
}

}  // namespace napt
