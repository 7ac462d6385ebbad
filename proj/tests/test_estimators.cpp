#include <doctest.h>

#include <cmath>
#include <numbers>

#include "helpers.hpp"
#include "napt/estimators.hpp"
#include "napt/lab.hpp"

using namespace napt;

namespace {

ThetaBatch normal_atoms(std::size_t M, Rng& rng) {
    ThetaBatch b(1, M);
    std::normal_distribution<double> nd;
    for (double& v : b.values()) v = nd(rng);
    return b;
}

}  // namespace

TEST_CASE("log_g composes log density and prior") {
    const TaskSpec& tm = task_spec(Task::two_moon);
    const ConditionalDensity cd = test::random_density(2, 2, 3, {6}, 1);
    const std::vector<double> x = {0.1, 0.2}, th = {0.0, 0.0}, out = {1.5, 0.0};
    CHECK(log_g(cd, tm, x, th) == doctest::Approx(cd.log_density(x, th) + std::log(4.0)));
    CHECK_THROWS_AS(log_g(cd, tm, x, out), std::domain_error);
}

TEST_CASE("mean of g over prior draws equals the mass of q on the support") {
    const TaskSpec& tm = task_spec(Task::two_moon);
    const ConditionalDensity cd = test::random_density(2, 2, 2, {6}, 2, Activation::tanh, 0.2);
    const std::vector<double> x = {0.0, 0.5};
    Rng rng = make_stream(3, 0);
    std::vector<double> v(1 << 16), th(2);
    for (double& g : v) {
        prior_sample(tm, rng, th);
        g = std::exp(log_g(cd, tm, x, th));
    }
    const auto ms = test::mean_se(v);
    const double h = 0.005;
    double mass = 0.0;
    for (int i = 0; i <= 400; ++i)
        for (int j = 0; j <= 400; ++j) {
            const double t[2] = {-1.0 + i * h, -1.0 + j * h};
            const double w = (i == 0 || i == 400 ? 0.5 : 1.0) * (j == 0 || j == 400 ? 0.5 : 1.0);
            mass += w * std::exp(cd.log_density(x, t)) * h * h;
        }
    CHECK(std::abs(ms.mean - mass) < 3.0 * ms.se + 1e-5);
}

TEST_CASE("log Z hat") {
    const ToyModel flat(0.0, std::log(2.5));
    Rng rng = make_stream(4, 0);
    CHECK(log_Z_hat(flat, normal_atoms(17, rng)) == doctest::Approx(std::log(2.5)).epsilon(1e-14));
    const ToyModel toy;
    const ThetaBatch one = normal_atoms(1, rng);
    CHECK(log_Z_hat(toy, one) == doctest::Approx(toy.log_g(one.row(0))).epsilon(1e-14));
    CHECK_THROWS_AS(log_Z_hat(toy, ThetaBatch(1)), std::invalid_argument);

    // E[Z_M] = 1 for the toy model at every M
    for (std::size_t M : {1u, 4u, 32u}) {
        std::vector<double> z(100'000);
        for (double& v : z) v = std::exp(log_Z_hat(toy, normal_atoms(M, rng)));
        const auto ms = test::mean_se(z);
        CHECK(std::abs(ms.mean - 1.0) < 3.0 * ms.se);
    }
}

TEST_CASE("loss and gradient queries") {
    const ToyModel toy;
    Rng rng = make_stream(5, 0);
    SUBCASE("constant g") {
        const ToyModel flat(0.0, 0.0);
        const double th = 0.7;
        CHECK(loss_query(flat, {&th, 1}, normal_atoms(9, rng)).value == 0.0);
    }
    SUBCASE("single atom") {
        const double th = 0.4;
        const ThetaBatch a = normal_atoms(1, rng);
        const LossQuery q = loss_query(toy, {&th, 1}, a);
        CHECK(q.value == doctest::Approx(toy.log_g(a.row(0)) - toy.log_g({&th, 1})));
        CHECK(q.inner_count == 1);
        ThetaBatch same(1);
        same.push_back(std::vector<double>{th});
        CHECK(grad_query(toy, {&th, 1}, same).g[0] == 0.0);
    }
    SUBCASE("equal atoms give a zero gradient") {
        const double th = -0.3;
        ThetaBatch a(1);
        for (int i = 0; i < 5; ++i) a.push_back(std::vector<double>{th});
        CHECK(std::abs(grad_query(toy, {&th, 1}, a).g[0]) < 1e-15);
    }
    SUBCASE("outer expectation of psi at large M is 0.125") {
        std::vector<double> v(4000);
        std::normal_distribution<double> nd;
        for (double& l : v) {
            const double th = nd(rng);
            l = loss_query(toy, {&th, 1}, normal_atoms(4096, rng)).value;
        }
        const auto ms = test::mean_se(v);
        CHECK(std::abs(ms.mean - 0.125) < 3.0 * ms.se);
    }
}

TEST_CASE("grad_query matches finite differences of loss_query on MDN ratios") {
    const TaskSpec& tm = task_spec(Task::two_moon);
    Rng rng = make_stream(6, 0);
    double worst = 0.0;
    for (int c = 0; c < 100; ++c) {
        ConditionalDensity cd = test::random_density(2, 2, 1 + c % 3, {4 + c % 3}, 700 + c);
        const std::vector<double> x = test::normal_vector(2, rng);
        std::vector<double> th(2);
        prior_sample(tm, rng, th);
        ThetaBatch inner(2);
        for (int j = 0; j < 6; ++j) {
            std::vector<double> t(2);
            prior_sample(tm, rng, t);
            inner.push_back(t);
        }
        const GradQuery g = [&] {
            MdnRatio m(cd, tm, x);
            return grad_query(m, th, inner);
        }();
        const auto fd = test::fd_gradient(cd, [&] {
            MdnRatio m(cd, tm, x);
            return loss_query(m, th, inner).value;
        });
        worst = std::max(worst, test::rel_error(g.g, fd));
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("nested query costs and modes") {
    const ToyModel toy;
    const StdNormalSampler s;
    const double th = 0.2;
    Rng rng = make_stream(7, 0);
    const Query f = nested_query(toy, {&th, 1}, s, 10, AtomMode::fresh, rng, true);
    CHECK(f.cost == 10);
    const Query o = nested_query(toy, {&th, 1}, s, 10, AtomMode::include_outer, rng, true);
    CHECK(o.cost == 9);
    // with the outer atom included the loss is the atomic loss minus log M
    Rng a = make_stream(8, 0), b = make_stream(8, 0);
    const Query q = nested_query(toy, {&th, 1}, s, 6, AtomMode::include_outer, a, false);
    ThetaBatch atoms(1);
    atoms.push_back(std::vector<double>{th});
    std::vector<double> t(1);
    for (int j = 0; j < 5; ++j) {
        s.draw(b, t);
        atoms.push_back(t);
    }
    CHECK(q.loss == doctest::Approx(atomic_apt_loss(toy, atoms, 0) - std::log(6.0)).epsilon(1e-13));
}

TEST_CASE("batch of one equals a single query; variance falls as 1/N") {
    const ToyModel toy;
    const StdNormalSampler s;
    const auto fn = [&](std::size_t, Rng& rng) {
        std::normal_distribution<double> nd;
        const double th = nd(rng);
        return nested_query(toy, {&th, 1}, s, 8, AtomMode::fresh, rng, true);
    };
    const BatchResult one = mean_queries(1, 1, true, fn, 99, Exec::serial);
    Rng rng = make_stream(99, 0);
    const Query q = fn(0, rng);
    CHECK(one.loss == q.loss);
    CHECK(one.grad == q.grad);

    std::vector<double> lx, ly;
    for (std::size_t N : {1u, 2u, 4u, 8u, 16u, 32u}) {
        std::vector<double> m(2000);
        for (std::size_t r = 0; r < m.size(); ++r) m[r] = mean_queries(N, 1, false, fn, 1000 * N + r, Exec::serial).loss;
        const auto ms = test::mean_se(m);
        const double var = ms.se * ms.se * static_cast<double>(m.size());
        lx.push_back(std::log2(static_cast<double>(N)));
        ly.push_back(std::log2(var));
    }
    const LineFit f = fit_line(lx, ly);
    CHECK(f.slope == doctest::Approx(-1.0).epsilon(0.3));
    CHECK_THROWS_AS(mean_queries(0, 1, false, fn, 1), std::invalid_argument);
}

TEST_CASE("E[psi_M] approaches the limit from below as M grows") {
    // E[log Z_M] rises toward log Z = 0, so the gap to psi_inf shrinks with M
    const ToyModel toy;
    double prev_gap = std::numeric_limits<double>::infinity();
    double prev_se = 0.0;
    for (std::size_t M = 1; M <= 256; M *= 2) {
        const ReferenceMoments r = reference_moments(toy, M, 100'000, 500 + M, Exec::parallel);
        const double gap = toy.psi_limit_mean() - r.loss;
        CHECK(gap > -3.0 * r.loss_se);
        if (std::isfinite(prev_gap)) CHECK(gap <= prev_gap + 3.0 * std::hypot(r.loss_se, prev_se));
        prev_gap = gap;
        prev_se = r.loss_se;
    }
}

TEST_CASE("atomic APT loss") {
    const ToyModel flat(0.0, 0.3);
    ThetaBatch two(1);
    two.push_back(std::vector<double>{0.1});
    two.push_back(std::vector<double>{0.9});
    CHECK(atomic_apt_loss(flat, two, 0) == doctest::Approx(std::log(2.0)));

    const ToyModel steep(60.0, 0.0);
    CHECK(atomic_apt_loss(steep, two, 1) < 1e-15);

    ThetaBatch dup(1);
    dup.push_back(std::vector<double>{0.1});
    dup.push_back(std::vector<double>{0.1});
    CHECK_THROWS_AS(atomic_apt_loss(flat, dup, 0), std::invalid_argument);
    ThetaBatch single(1);
    single.push_back(std::vector<double>{0.1});
    CHECK_THROWS_AS(atomic_apt_loss(flat, single, 0), std::invalid_argument);

    // equals the nested loss on the same set plus log M
    const ToyModel toy;
    Rng rng = make_stream(10, 0);
    const ThetaBatch atoms = normal_atoms(7, rng);
    const double l = atomic_apt_loss(toy, atoms, 3);
    CHECK(l == doctest::Approx(loss_query(toy, atoms.row(3), atoms).value + std::log(7.0)).epsilon(1e-13));
    std::vector<double> g(1);
    CHECK(atomic_apt_loss_grad(toy, atoms, 3, g) == doctest::Approx(l));
    CHECK(g[0] == doctest::Approx(grad_query(toy, atoms.row(3), atoms).g[0]).epsilon(1e-13));
}

TEST_CASE("proposal sampler stays in the support") {
    const TaskSpec& tm = task_spec(Task::two_moon);
    const ConditionalDensity cd = test::random_density(2, 2, 3, {6}, 12, Activation::tanh, 1.0);
    const std::vector<double> x = {0.0, 0.0};
    const ProposalSampler ps(cd, tm, x);
    Rng rng = make_stream(13, 0);
    std::vector<double> th(2);
    for (int i = 0; i < 2000; ++i) {
        ps.draw(rng, th);
        CHECK(in_support(tm, th));
    }
}
