#include <doctest.h>

#include <cmath>
#include <numbers>

#include "napt/simulators.hpp"

using namespace napt;

TEST_CASE("task specs") {
    CHECK(task_spec(Task::two_moon).summary_dim == 2);
    CHECK(task_spec(Task::lotka_volterra).summary_dim == 9);
    CHECK(task_spec(Task::mg1).summary_dim == 5);
    CHECK(task_spec(Task::mg1).theta_star == std::vector<double>{1.0, 4.0, 0.2});
    CHECK_FALSE(task_spec(Task::lotka_volterra).theta_star.has_value());
    CHECK(task_from_string("mg1") == Task::mg1);
    CHECK_THROWS_AS(task_from_string("gauss"), ConfigError);
}

TEST_CASE("prior log densities") {
    const double zero2[2] = {0, 0}, zero4[4] = {0, 0, 0, 0}, mg_out[3] = {11, 1, 0.1};
    CHECK(prior_log_density(task_spec(Task::two_moon), zero2) == doctest::Approx(-std::log(4.0)));
    CHECK(prior_log_density(task_spec(Task::lotka_volterra), zero4) == doctest::Approx(-4.0 * std::log(7.0)));
    CHECK(std::isinf(prior_log_density(task_spec(Task::mg1), mg_out)));
    CHECK_FALSE(in_support(task_spec(Task::mg1), mg_out));

    Rng rng = make_stream(1, 0);
    for (Task t : {Task::two_moon, Task::lotka_volterra, Task::mg1}) {
        const TaskSpec& s = task_spec(t);
        std::vector<double> th(s.theta_dim);
        for (int i = 0; i < 1000; ++i) {
            prior_sample(s, rng, th);
            CHECK(in_support(s, th));
        }
    }
}

TEST_CASE("two-moon map") {
    const double th0[2] = {0, 0};
    const auto x = two_moon_map(th0, 0.0, 0.1);
    CHECK(x[0] == doctest::Approx(0.35));
    CHECK(x[1] == doctest::Approx(0.0));

    const double th1[2] = {0.5, -0.5};
    const auto y = two_moon_map(th1, 0.0, 0.1);
    CHECK(y[0] == doctest::Approx(0.35));  // |t1 + t2| = 0
    CHECK(y[1] == doctest::Approx(-1.0 / std::numbers::sqrt2));

    // (t1, t2) -> (-t2, -t1) keeps both offsets
    const double a[2] = {0.3, 0.1}, b[2] = {-0.1, -0.3};
    for (double ang : {-1.0, 0.2, 1.3}) {
        const auto xa = two_moon_map(a, ang, 0.1), xb = two_moon_map(b, ang, 0.1);
        CHECK(xa[0] == doctest::Approx(xb[0]));
        CHECK(xa[1] == doctest::Approx(xb[1]));
    }
}

TEST_CASE("Lotka-Volterra") {
    const double zero[4] = {0, 0, 0, 0};
    const auto r = lv_rates(zero, 50, 100);
    CHECK(r[0] + r[1] + r[2] + r[3] == doctest::Approx(10150.0));
    const auto dead = lv_rates(zero, 0, 0);
    CHECK(dead[0] + dead[1] + dead[2] + dead[3] == 0.0);

    SUBCASE("extinction repeats (0, 0) on the rest of the grid") {
        // fast predator death and fast predation
        const double th[4] = {-5, 2, -5, 2};
        Rng rng = make_stream(3, 0);
        const LvTrace tr = lv_gillespie(th, rng);
        REQUIRE(tr.predators.size() == 151);
        REQUIRE(tr.prey.size() == 151);
        CHECK(tr.predators.back() == 0.0);
        CHECK(tr.prey.back() == 0.0);
        CHECK(tr.predators[120] == 0.0);
        CHECK(tr.prey[120] == 0.0);
    }
    SUBCASE("summaries are 9-dimensional and finite") {
        Rng rng = make_stream(4, 0);
        std::vector<double> th(4);
        for (int i = 0; i < 20; ++i) {
            prior_sample(task_spec(Task::lotka_volterra), rng, th);
            const SimOutput o = lv_simulate(th, rng);
            REQUIRE(o.x.size() == 9);
            for (double v : o.x) CHECK(std::isfinite(v));
        }
    }
    SUBCASE("caps flag the run") {
        const double th[4] = {2, -5, 2, -5};  // explosive growth
        Rng rng = make_stream(5, 0);
        LvOptions opt;
        opt.max_events = 1000;
        const LvTrace tr = lv_gillespie(th, rng, opt);
        CHECK(tr.capped);
        CHECK(tr.predators.size() == 151);
    }
    SUBCASE("summary conventions") {
        // alternating series: lag-1 autocorrelation -1, lag-2 +1
        std::vector<double> X(151), Y(151);
        for (std::size_t i = 0; i < 151; ++i) {
            X[i] = i % 2 ? 3.0 : 1.0;
            Y[i] = i % 2 ? 1.0 : 3.0;
        }
        const auto s = lv_summary(X, Y);
        CHECK(s[0] == doctest::Approx(std::log((76.0 * 1 + 75.0 * 3) / 151.0)));
        CHECK(s[4] == doctest::Approx(-1.0).epsilon(0.02));
        CHECK(s[5] == doctest::Approx(1.0).epsilon(0.02));
        CHECK(s[8] == doctest::Approx(-1.0));
        // constant series: zero variance is clamped before the log
        std::vector<double> C(151, 5.0);
        const auto sc = lv_summary(C, C);
        CHECK(sc[2] == doctest::Approx(std::log(1e-12)));
        CHECK(std::isfinite(sc[4]));
    }
}

TEST_CASE("M/G/1") {
    std::vector<double> s(kMg1Jobs, 1.0), v(kMg1Jobs, 0.0);
    const auto d = mg1_departures(s, v);
    for (std::size_t i = 0; i < kMg1Jobs; ++i) CHECK(d[i] == doctest::Approx(static_cast<double>(i + 1)));
    for (double q : mg1_summary(d)) CHECK(q == doctest::Approx(0.0));

    const double s1[1] = {0.7}, v1[1] = {2.5};
    CHECK(mg1_departures(s1, v1)[0] == doctest::Approx(3.2));

    Rng rng = make_stream(6, 0);
    const double th[3] = {1.0, 4.0, 0.2};
    for (int r = 0; r < 10; ++r) {
        const SimOutput o = mg1_simulate(th, rng);
        CHECK(o.x.size() == 5);
        for (std::size_t i = 1; i < 5; ++i) CHECK(o.x[i] >= o.x[i - 1]);
    }
    std::vector<double> ss(kMg1Jobs), vv(kMg1Jobs);
    std::uniform_real_distribution<double> u(0.1, 2.0);
    double t = 0.0;
    for (std::size_t i = 0; i < kMg1Jobs; ++i) {
        ss[i] = u(rng);
        t += u(rng);
        vv[i] = t;
    }
    const auto dd = mg1_departures(ss, vv);
    for (std::size_t i = 1; i < kMg1Jobs; ++i) CHECK(dd[i] > dd[i - 1]);

    const double sorted[4] = {1, 2, 3, 4};
    CHECK(percentile_sorted(sorted, 0.5) == doctest::Approx(2.5));
    CHECK(percentile_sorted(sorted, 0.0) == 1.0);
    CHECK(percentile_sorted(sorted, 1.0) == 4.0);
    CHECK(percentile_sorted(sorted, 0.25) == doctest::Approx(1.75));
}

TEST_CASE("simulation is deterministic per seed") {
    for (Task t : {Task::two_moon, Task::lotka_volterra, Task::mg1}) {
        const TaskSpec& s = task_spec(t);
        Rng p = make_stream(8, 0);
        std::vector<double> th(s.theta_dim);
        prior_sample(s, p, th);
        Rng a = make_stream(9, 1), b = make_stream(9, 1);
        const SimOutput oa = simulate(s, th, a), ob = simulate(s, th, b);
        CHECK(oa.x == ob.x);
        CHECK(oa.x.size() == s.summary_dim);
        CHECK(oa.cost == 1);
    }
}
