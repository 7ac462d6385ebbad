#include <doctest.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "helpers.hpp"
#include "napt/diagnostics.hpp"
#include "napt/training.hpp"

using namespace napt;

namespace {

ThetaBatch gaussian(std::size_t n, std::size_t d, double shift, std::uint64_t seed) {
    Rng rng = make_stream(seed, 0);
    std::normal_distribution<double> nd(shift, 1.0);
    ThetaBatch b(d);
    std::vector<double> row(d);
    for (std::size_t i = 0; i < n; ++i) {
        for (double& v : row) v = nd(rng);
        b.push_back(row);
    }
    return b;
}

}  // namespace

TEST_CASE("MMD") {
    SUBCASE("same distribution sits inside the permutation null") {
        const ThetaBatch a = gaussian(1000, 2, 0.0, 1), b = gaussian(1000, 2, 0.0, 2);
        const MmdTest t = mmd_permutation_test(a, b, 200, 3);
        CHECK(t.p_value > 0.01);
        CHECK(std::abs(t.statistic - t.null_mean) < 4.0 * t.null_sd);
        CHECK(t.statistic == doctest::Approx(mmd(a, b, t.sigma)).epsilon(1e-10));
    }
    SUBCASE("shifted distribution is detected") {
        const ThetaBatch a = gaussian(500, 2, 0.0, 4), b = gaussian(500, 2, 0.5, 5);
        const MmdTest t = mmd_permutation_test(a, b, 200, 6);
        CHECK(t.p_value < 0.01);
        CHECK(mmd(a, b) > 0.0);
    }
    SUBCASE("singletons") {
        const std::vector<double> a = {0.0, 1.0}, b = {3.0, -1.0};
        const double s = 1.5;
        CHECK(mmd_singleton(a, b, s) == doctest::Approx(2.0 - 2.0 * std::exp(-13.0 / (2.0 * s * s))));
        CHECK(mmd_singleton(a, a, s) == 0.0);
    }
    SUBCASE("input checks") {
        ThetaBatch one(2);
        one.push_back(std::vector<double>{0.0, 0.0});
        const ThetaBatch many = gaussian(10, 2, 0.0, 7);
        CHECK_THROWS_AS(mmd(one, many, 1.0), std::invalid_argument);
        CHECK_THROWS_AS(mmd(many, gaussian(10, 3, 0.0, 8), 1.0), std::invalid_argument);
    }
    SUBCASE("serial and parallel agree") {
        const ThetaBatch a = gaussian(300, 3, 0.0, 9), b = gaussian(200, 3, 0.2, 10);
        CHECK(mmd(a, b, 0.0, Exec::serial) == mmd(a, b, 0.0, Exec::parallel));
    }
}

TEST_CASE("C2ST") {
    SUBCASE("identical distributions give chance accuracy") {
        const ThetaBatch a = gaussian(2000, 2, 0.0, 11), b = gaussian(2000, 2, 0.0, 12);
        const C2stResult r = c2st(a, b, 13);
        CHECK(r.accuracy >= 0.45);
        CHECK(r.accuracy <= 0.55);
        CHECK(r.fold_accuracy.size() == 5);
    }
    SUBCASE("disjoint supports are separated") {
        const ThetaBatch a = gaussian(500, 2, 0.0, 14), b = gaussian(500, 2, 10.0, 15);
        CHECK(c2st(a, b, 16).accuracy > 0.99);
    }
    SUBCASE("roughly symmetric in its arguments") {
        const ThetaBatch a = gaussian(500, 2, 0.0, 17), b = gaussian(500, 2, 0.7, 18);
        CHECK(std::abs(c2st(a, b, 19).accuracy - c2st(b, a, 19).accuracy) < 0.05);
    }
    SUBCASE("constant features are dropped") {
        ThetaBatch a = gaussian(200, 3, 0.0, 20), b = gaussian(200, 3, 0.0, 21);
        for (std::size_t i = 0; i < a.size(); ++i) a.row(i)[1] = b.row(i)[1] = 4.0;
        const C2stResult r = c2st(a, b, 22);
        REQUIRE(r.dropped_features.size() == 1);
        CHECK(r.dropped_features[0] == 1);
    }
    SUBCASE("input checks") {
        CHECK_THROWS_AS(c2st(gaussian(10, 2, 0, 1), gaussian(11, 2, 0, 2), 1), std::invalid_argument);
        CHECK_THROWS_AS(c2st(gaussian(3, 2, 0, 1), gaussian(3, 2, 0, 2), 1), std::invalid_argument);
    }
}

TEST_CASE("log median distance") {
    CHECK(log_median({2.0}) == doctest::Approx(std::log(2.0)));
    CHECK(log_median({1.0, 4.0, 9.0}) == doctest::Approx(std::log(4.0)));
    CHECK(log_median({1.0, 3.0}) == doctest::Approx(std::log(2.0)));
    CHECK(log_median({0.0, 0.0, 0.0}) == doctest::Approx(std::log(1e-12)));
    CHECK_THROWS_AS(log_median({}), std::invalid_argument);

    // two-moon samples at theta = 0 produce x within the noise of (0.35, 0)
    const TaskSpec& tm = task_spec(Task::two_moon);
    ThetaBatch post(2);
    for (int i = 0; i < 500; ++i) post.push_back(std::vector<double>{0.0, 0.0});
    const std::vector<double> x_o = {0.35, 0.0};
    const double v = lmd(post, x_o, tm, 23, Exec::serial);
    CHECK(v == lmd(post, x_o, tm, 23, Exec::parallel));
    CHECK(v < std::log(0.2));
}

TEST_CASE("NLOG") {
    MdnArchitecture a;
    a.input_dim = 1;
    a.theta_dim = 1;
    a.hidden_widths = {3};
    a.n_components = 1;
    ParamVector p = init_params(a, 1);
    for (double& v : p.slice("W_out")) v = 0.0;
    for (double& v : p.slice("b_out")) v = 0.0;
    const ConditionalDensity cd(a, std::move(p));
    const double x = 0.0;
    for (double th : {0.0, 1.0, -2.5}) {
        CHECK(nlog(cd, {&x, 1}, {&th, 1}) == doctest::Approx(0.5 * std::log(2.0 * std::numbers::pi) + 0.5 * th * th));
    }
}

TEST_CASE("rejection ABC") {
    const TaskSpec& tm = task_spec(Task::two_moon);
    const std::vector<double> x_o = {0.0, 0.0};
    SUBCASE("infinite tolerance returns prior draws") {
        const AbcResult r = rejection_abc(tm, x_o, std::numeric_limits<double>::infinity(), 20'000, 24);
        CHECK(r.samples.size() == 20'000);
        CHECK(r.acceptance_rate == 1.0);
        std::vector<double> t0(r.samples.size());
        for (std::size_t i = 0; i < t0.size(); ++i) t0[i] = r.samples.row(i)[0];
        const auto ms = test::mean_se(t0);
        CHECK(std::abs(ms.mean) < 3.0 * ms.se);
        CHECK(ms.se * std::sqrt(20'000.0) == doctest::Approx(std::sqrt(1.0 / 3.0)).epsilon(0.03));
    }
    SUBCASE("zero tolerance is rejected") {
        CHECK_THROWS_AS(rejection_abc(tm, x_o, 0.0, 100, 1), std::invalid_argument);
    }
    SUBCASE("an unreachable observation has no acceptances") {
        const std::vector<double> far = {50.0, 50.0};
        CHECK_THROWS_AS(rejection_abc(tm, far, 0.01, 1000, 1), NumericalError);
    }
    SUBCASE("serial and parallel agree") {
        const AbcResult s = rejection_abc(tm, x_o, 0.1, 200'000, 25, Exec::serial);
        const AbcResult p = rejection_abc(tm, x_o, 0.1, 200'000, 25, Exec::parallel);
        CHECK(s.samples.values() == p.samples.values());
    }
    SUBCASE("two-moon posterior at the origin is bimodal") {
        const AbcResult r = rejection_abc(tm, x_o, 0.01, 10'000'000, 26);
        REQUIRE(r.samples.size() >= 100);
        const Gmm2 g = fit_gmm2(r.samples);
        CHECK(g.mean_separation() > 0.5);
        CHECK(std::min(g.weight[0], g.weight[1]) > 0.2);
    }
}

TEST_CASE("posterior samples stay in the prior support") {
    const TaskSpec& tm = task_spec(Task::two_moon);
    const ConditionalDensity cd = test::random_density(2, 2, 3, {6}, 27, Activation::tanh, 0.8);
    const std::vector<double> x_o = {0.0, 0.0};
    const ThetaBatch s = posterior_samples(cd, tm, x_o, 2000, 28);
    CHECK(s.size() == 2000);
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(in_support(tm, s.row(i)));
    CHECK(s.values() == posterior_samples(cd, tm, x_o, 2000, 28, Exec::serial).values());
}
