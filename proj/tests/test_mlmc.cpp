#include <doctest.h>

#include <cmath>
#include <numeric>

#include "helpers.hpp"
#include "napt/lab.hpp"
#include "napt/mlmc.hpp"

using namespace napt;

namespace {

std::vector<LevelDistribution> table_laws() {
    return {LevelDistribution::ru(1.4), LevelDistribution::rr(1.4), LevelDistribution::grr(1.209, 2),
            LevelDistribution::tgrr(1.673, 2, 4)};
}

}  // namespace

TEST_CASE("level laws") {
    SUBCASE("RU at alpha = 1 by formula, rejected by validation") {
        const LevelDistribution d = LevelDistribution::ru(1.0);
        CHECK(d.p() == 0.5);
        CHECK(d.pmf(0) == 0.5);
        CHECK(d.pmf(1) == 0.25);
        CHECK_THROWS_AS(d.validate(), ConfigError);
        CHECK_THROWS_AS(d.level_pmf(), ConfigError);
        Rng rng = make_stream(1, 0);
        CHECK_THROWS_AS(d.sample(rng), ConfigError);
    }
    SUBCASE("pmfs sum to one and match the tails") {
        for (const auto& d : table_laws()) {
            const auto pmf = d.level_pmf();
            const double s = std::accumulate(pmf.begin(), pmf.end(), 0.0);
            CHECK(std::abs(s - 1.0) < 1e-12);
            for (std::size_t j = 0; j + 1 < pmf.size(); ++j)
                CHECK(d.tail(j) - d.tail(j + 1) == doctest::Approx(d.pmf(j)).epsilon(1e-12));
            CHECK(d.p() > 0.5);
            CHECK(d.p() < 1.0);
        }
    }
    SUBCASE("tail probabilities") {
        const auto ru = LevelDistribution::ru(1.4);
        for (std::size_t j = 0; j < 6; ++j) CHECK(ru.tail(j) == doctest::Approx(std::pow(1.0 - ru.p(), j)));
        const auto grr = LevelDistribution::grr(1.3, 2);
        CHECK(grr.tail(2) == 1.0);
        CHECK(grr.tail(0) == 1.0);
        const auto t = LevelDistribution::tgrr(1.673, 2, 4);
        CHECK(t.tail(5) == 0.0);
        const auto tp = t.tail_probs(6);
        for (std::size_t j = 1; j < tp.size(); ++j) CHECK(tp[j] <= tp[j - 1]);
    }
    SUBCASE("degenerate TGRR") {
        const auto d = LevelDistribution::tgrr(1.5, 3, 3);
        CHECK(d.degenerate());
        CHECK(d.pmf(3) == 1.0);
        Rng a = make_stream(2, 0), b = make_stream(2, 0);
        CHECK(d.sample(a) == 3);
        CHECK(a() == b());  // no randomness consumed
    }
    SUBCASE("invalid configurations") {
        CHECK_THROWS_AS(LevelDistribution::tgrr(1.5, 4, 2).validate(), ConfigError);
        CHECK_THROWS_AS(LevelDistribution::tgrr(0.9, 1, 2).validate(), ConfigError);
        LevelDistribution rr = LevelDistribution::rr(1.5);
        rr.m_lo = 1;
        CHECK_THROWS_AS(rr.validate(), ConfigError);
    }
}

TEST_CASE("empirical level frequencies pass a chi-square test") {
    for (const auto& d : table_laws()) {
        const auto pmf = d.level_pmf();
        const std::size_t n = 100'000;
        // one bin per level from the lowest; levels with expected count below 5 pool into the last
        const std::size_t lo = d.lowest();
        std::size_t bins = 0;
        while (lo + bins < pmf.size() && n * pmf[lo + bins] >= 5.0) ++bins;
        std::vector<double> count(bins + 1, 0.0), expect(bins + 1, 0.0);
        for (std::size_t l = lo; l < pmf.size(); ++l) expect[std::min(l - lo, bins)] += n * pmf[l];
        Rng rng = make_stream(3, static_cast<std::uint64_t>(d.kind));
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t L = d.sample(rng);
            REQUIRE(L >= lo);
            ++count[std::min(L - lo, bins)];
        }
        double chi2 = 0.0;
        std::size_t used = 0;
        for (std::size_t b = 0; b <= bins; ++b) {
            if (expect[b] <= 0.0) continue;
            chi2 += (count[b] - expect[b]) * (count[b] - expect[b]) / expect[b];
            ++used;
        }
        REQUIRE(used >= 2);
        const double df = static_cast<double>(used - 1);
        CHECK(chi2 < df + 3.0 * std::sqrt(2.0 * df));
    }
}

TEST_CASE("delta queries") {
    const StdNormalSampler s;
    const MlmcConfig cfg{4, 1.8, 1.8, AtomMode::fresh, Coupling::independent};
    SUBCASE("constant g gives zero differences") {
        const ToyModel flat(0.0, 0.0);
        Rng rng = make_stream(4, 0);
        const double th = 0.5;
        for (std::size_t l = 0; l < 5; ++l) {
            const DeltaQuery d = delta_query(flat, {&th, 1}, s, l, cfg, rng, true);
            if (l > 0) CHECK(d.dpsi == 0.0);
            CHECK(d.cost == cfg.inner_size(l));
        }
    }
    SUBCASE("telescoping: E[dpsi_l] = E[psi_Ml] - E[psi_Ml-1]") {
        const ToyModel toy;
        const std::size_t l = 2, n = 100'000;
        std::vector<double> d(n), hi(n), lo(n);
        for (std::size_t i = 0; i < n; ++i) {
            Rng rng = make_stream(5, i);
            std::normal_distribution<double> nd;
            const double th = nd(rng);
            d[i] = delta_query(toy, {&th, 1}, s, l, cfg, rng, false).dpsi;
            const double t2 = nd(rng);
            hi[i] = nested_query(toy, {&t2, 1}, s, cfg.inner_size(l), AtomMode::fresh, rng, false).loss;
            const double t3 = nd(rng);
            lo[i] = nested_query(toy, {&t3, 1}, s, cfg.inner_size(l - 1), AtomMode::fresh, rng, false).loss;
        }
        const auto md = test::mean_se(d), mh = test::mean_se(hi), ml = test::mean_se(lo);
        const double se = std::sqrt(md.se * md.se + mh.se * mh.se + ml.se * ml.se);
        CHECK(std::abs(md.mean - (mh.mean - ml.mean)) < 3.0 * se);
    }
}

TEST_CASE("constant ratio: every delta of psi and rho vanishes for a theta-free gradient") {
    // g = exp(b) with gradient head equal to theta, but all atoms equal the outer theta
    struct Same final : InnerSampler {
        double v;
        explicit Same(double x) : v(x) {}
        std::size_t dim() const override { return 1; }
        void draw(Rng&, std::span<double> t) const override { t[0] = v; }
    };
    const ToyModel flat(0.0, 0.0);
    const Same s(0.25);
    const MlmcConfig cfg{2, 1.8, 1.8, AtomMode::fresh, Coupling::independent};
    Rng rng = make_stream(6, 0);
    const double th = 0.25;
    for (std::size_t l = 1; l < 5; ++l) {
        const DeltaQuery d = delta_query(flat, {&th, 1}, s, l, cfg, rng, true);
        CHECK(d.dpsi == 0.0);
        CHECK(std::abs(d.drho[0]) < 1e-15);
    }
}

TEST_CASE("degenerate TGRR and GRR base level reproduce the nested query") {
    const ToyModel toy;
    const StdNormalSampler s;
    for (AtomMode mode : {AtomMode::fresh, AtomMode::include_outer}) {
        for (Coupling c : {Coupling::independent, Coupling::nested}) {
            const MlmcConfig cfg{8, 1.8, 1.8, mode, c};
            for (std::size_t m : {0u, 2u, 3u}) {
                const double th = 0.37;
                Rng a = make_stream(7, m), b = make_stream(7, m);
                const Query t = tgrr_query(toy, {&th, 1}, s, LevelDistribution::tgrr(1.673, m, m), cfg, a, true);
                const Query n = nested_query(toy, {&th, 1}, s, cfg.inner_size(m), mode, b, true);
                CHECK(t.loss == n.loss);
                CHECK(t.grad == n.grad);
                CHECK(t.cost == n.cost);

                Rng c1 = make_stream(8, m), c2 = make_stream(8, m);
                const auto grr = LevelDistribution::grr(1.3, m);
                const Query g = mlmc_query_at(toy, {&th, 1}, s, grr, m, cfg, c1, true);
                const Query n2 = nested_query(toy, {&th, 1}, s, cfg.inner_size(m), mode, c2, true);
                CHECK(g.loss == n2.loss);
                CHECK(g.grad == n2.grad);
            }
        }
    }
}

TEST_CASE("kind-checked entry points") {
    const ToyModel toy;
    const StdNormalSampler s;
    const MlmcConfig cfg;
    Rng rng = make_stream(9, 0);
    const double th = 0.0;
    CHECK_THROWS_AS(ru_query(toy, {&th, 1}, s, LevelDistribution::grr(1.3, 1), cfg, rng, false), ConfigError);
    CHECK_THROWS_AS(grr_query(toy, {&th, 1}, s, LevelDistribution::ru(1.3), cfg, rng, false), ConfigError);
    CHECK_THROWS_AS(tgrr_query(toy, {&th, 1}, s, LevelDistribution::rr(1.3), cfg, rng, false), ConfigError);
}

TEST_CASE("query cost equals the level cost for fresh independent atoms") {
    const ToyModel toy;
    const StdNormalSampler s;
    const MlmcConfig cfg{8, 1.8, 1.8, AtomMode::fresh, Coupling::independent};
    for (const auto& d : table_laws()) {
        for (std::size_t i = 0; i < 200; ++i) {
            Rng rng = make_stream(10, i);
            const double th = 0.1;
            const Query q = mlmc_query(toy, {&th, 1}, s, d, cfg, rng, false);
            CHECK(q.cost == level_cost(d, q.level, cfg.M0));
        }
    }
}

TEST_CASE("RU and GRR queries are unbiased on the toy model") {
    const ToyModel toy;
    const MlmcConfig cfg{8, 1.8, 1.8, AtomMode::fresh, Coupling::independent};
    for (const auto& d : {LevelDistribution::ru(1.4), LevelDistribution::grr(1.4, 2)}) {
        const auto r = verify_unbiasedness(toy, d, cfg, 20'000, 11);
        CHECK(std::abs(r.loss_z) < 3.0);
        CHECK(std::abs(r.grad_z) < 3.0);
    }
}

TEST_CASE("TGRR targets the truncated nested estimator") {
    const ToyModel toy;
    const MlmcConfig cfg{8, 1.8, 1.8, AtomMode::fresh, Coupling::independent};
    const auto d = LevelDistribution::tgrr(1.673, 2, 4);
    const StdNormalSampler s;
    std::vector<double> l(100'000), g(l.size());
    for (std::size_t i = 0; i < l.size(); ++i) {
        Rng rng = make_stream(12, i);
        std::normal_distribution<double> nd;
        const double th = nd(rng);
        const Query q = mlmc_query(toy, {&th, 1}, s, d, cfg, rng, true);
        l[i] = q.loss;
        g[i] = q.grad[0];
    }
    const ReferenceMoments ref = reference_moments(toy, cfg.inner_size(4), 100'000, 13);
    const auto ml = test::mean_se(l), mg = test::mean_se(g);
    CHECK(std::abs(ml.mean - ref.loss) < 3.0 * std::hypot(ml.se, ref.loss_se));
    CHECK(std::abs(mg.mean - ref.grad) < 3.0 * std::hypot(mg.se, ref.grad_se));
}

TEST_CASE("expected cost") {
    const double c = expected_cost(LevelDistribution::ru(1.4), 8);
    CHECK(c == doctest::Approx(8.0 * (std::exp2(1.4) - 1.0) / (std::exp2(1.4) - 2.0)));
    CHECK(c == doctest::Approx(20.52).epsilon(1e-3));
    CHECK(expected_cost(LevelDistribution::ru(60.0), 8) == doctest::Approx(8.0));
    CHECK_THROWS_AS(expected_cost(LevelDistribution::ru(1.0), 8), ConfigError);

    // TGRR finite sum against a direct enumeration
    const auto t = LevelDistribution::tgrr(1.673, 2, 4);
    double direct = 0.0;
    for (std::size_t l = 2; l <= 4; ++l) {
        double cost = 8.0 * 4.0;
        for (std::size_t j = 3; j <= l; ++j) cost += 8.0 * std::exp2(static_cast<double>(j));
        direct += t.pmf(l) * cost;
    }
    CHECK(expected_cost(t, 8) == doctest::Approx(direct));

    // GRR closed form against the truncated series
    const auto g = LevelDistribution::grr(1.3, 2);
    double series = 0.0, cost = 4.0;
    for (std::size_t l = 2; l < 1000; ++l) {
        if (l > 2) cost += std::exp2(static_cast<double>(l));
        series += g.pmf(l) * cost;
    }
    CHECK(expected_cost(g, 1) == doctest::Approx(series).epsilon(1e-6));

    const CostReport r = realized_cost(LevelDistribution::grr(1.6, 1), 8, 200'000, 14);
    CHECK(std::abs(r.mean - r.expected) < 0.02 * r.expected);
}

TEST_CASE("alpha selection") {
    CHECK(optimal_alpha(EstimatorKind::ru, 1.8) == 1.4);
    CHECK(optimal_alpha(EstimatorKind::rr, 1.6) == doctest::Approx(1.3));
    CHECK_THROWS_AS(optimal_alpha(EstimatorKind::ru, 1.0), ConfigError);

    std::vector<double> grid;
    for (double a = 1.005; a < 1.8; a += 0.001) grid.push_back(a);
    const auto ru = inefficiency_curve(EstimatorKind::ru, 1.8, 0, kNoTruncation, grid);
    CHECK(argmin_row(ru).alpha == doctest::Approx(1.4).epsilon(0.001));
    const auto grr = inefficiency_curve(EstimatorKind::grr, 1.8, 2, kNoTruncation, grid);
    CHECK(std::abs(argmin_row(grr).alpha - optimal_alpha(EstimatorKind::grr, 1.8, 2)) < 0.002);
    // product diverges as alpha -> 1
    const auto near_one = inefficiency_curve(EstimatorKind::ru, 1.8, 0, kNoTruncation, {1.0001, 1.001, 1.01});
    CHECK(near_one[0].product > near_one[1].product);
    CHECK(near_one[1].product > near_one[2].product);
    CHECK(near_one[0].product > 1e4);
    CHECK_THROWS_AS(argmin_row({}), std::invalid_argument);
}
