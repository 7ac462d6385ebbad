#include "napt/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>

#include "napt/estimators.hpp"

namespace napt {

namespace {

double sqdist(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

template <class F>
void for_each_index(std::size_t n, Exec exec, F&& f) {
    if (exec == Exec::serial) {
        for (std::size_t i = 0; i < n; ++i) f(i);
        return;
    }
    std::exception_ptr err;
#pragma omp parallel for schedule(dynamic, 16)
    for (std::size_t i = 0; i < n; ++i) {
        try {
            f(i);
        } catch (...) {
#pragma omp critical
            if (!err) err = std::current_exception();
        }
    }
    if (err) std::rethrow_exception(err);
}

void check_pair(const ThetaBatch& A, const ThetaBatch& B, std::size_t min_n, const char* what) {
    if (A.size() < min_n || B.size() < min_n)
        throw std::invalid_argument(std::string(what) + ": need at least " + std::to_string(min_n) +
                                    " samples per set");
    if (A.dim() != B.dim()) throw std::invalid_argument(std::string(what) + ": dimension mismatch");
}

double median_of(std::vector<double> v) {
    const std::size_t n = v.size();
    std::nth_element(v.begin(), v.begin() + n / 2, v.end());
    const double hi = v[n / 2];
    if (n % 2 == 1) return hi;
    const double lo = *std::max_element(v.begin(), v.begin() + n / 2);
    return 0.5 * (lo + hi);
}

}  // namespace

double median_bandwidth(const ThetaBatch& A, const ThetaBatch& B, std::size_t max_points) {
    check_pair(A, B, 1, "median_bandwidth");
    const std::size_t na = std::min(A.size(), std::max<std::size_t>(1, max_points / 2));
    const std::size_t nb = std::min(B.size(), std::max<std::size_t>(1, max_points / 2));
    std::vector<std::span<const double>> pts;
    for (std::size_t i = 0; i < na; ++i) pts.push_back(A.row(i));
    for (std::size_t i = 0; i < nb; ++i) pts.push_back(B.row(i));
    std::vector<double> d;
    d.reserve(pts.size() * (pts.size() - 1) / 2);
    for (std::size_t i = 0; i < pts.size(); ++i)
        for (std::size_t j = i + 1; j < pts.size(); ++j) d.push_back(std::sqrt(sqdist(pts[i], pts[j])));
    if (d.empty()) return 1.0;
    const double m = median_of(std::move(d));
    return m > 0.0 ? m : 1.0;
}

double mmd(const ThetaBatch& A, const ThetaBatch& B, double sigma, Exec exec) {
    check_pair(A, B, 2, "mmd");
    if (!(sigma > 0.0)) sigma = median_bandwidth(A, B);
    const double g = 1.0 / (2.0 * sigma * sigma);
    const std::size_t n = A.size(), m = B.size();
    std::vector<double> aa(n, 0.0), ab(n, 0.0), bb(m, 0.0);
    for_each_index(n, exec, [&](std::size_t i) {
        double s = 0.0, t = 0.0;
        for (std::size_t j = i + 1; j < n; ++j) s += std::exp(-g * sqdist(A.row(i), A.row(j)));
        for (std::size_t j = 0; j < m; ++j) t += std::exp(-g * sqdist(A.row(i), B.row(j)));
        aa[i] = s;
        ab[i] = t;
    });
    for_each_index(m, exec, [&](std::size_t i) {
        double s = 0.0;
        for (std::size_t j = i + 1; j < m; ++j) s += std::exp(-g * sqdist(B.row(i), B.row(j)));
        bb[i] = s;
    });
    const double kaa = 2.0 * std::accumulate(aa.begin(), aa.end(), 0.0) / (static_cast<double>(n) * (n - 1));
    const double kbb = 2.0 * std::accumulate(bb.begin(), bb.end(), 0.0) / (static_cast<double>(m) * (m - 1));
    const double kab = std::accumulate(ab.begin(), ab.end(), 0.0) / (static_cast<double>(n) * m);
    return kaa + kbb - 2.0 * kab;
}

double mmd_singleton(std::span<const double> a, std::span<const double> b, double sigma) {
    if (a.size() != b.size()) throw std::invalid_argument("mmd_singleton: dimension mismatch");
    return 2.0 - 2.0 * std::exp(-sqdist(a, b) / (2.0 * sigma * sigma));
}

MmdTest mmd_permutation_test(const ThetaBatch& A, const ThetaBatch& B, std::size_t permutations, std::uint64_t seed,
                             double sigma) {
    check_pair(A, B, 2, "mmd_permutation_test");
    if (permutations == 0) throw std::invalid_argument("mmd_permutation_test: need permutations >= 1");
    if (!(sigma > 0.0)) sigma = median_bandwidth(A, B);
    const double g = 1.0 / (2.0 * sigma * sigma);
    const std::size_t n = A.size(), m = B.size(), N = n + m;
    auto pt = [&](std::size_t i) { return i < n ? A.row(i) : B.row(i - n); };
    std::vector<double> G(N * N);
#pragma omp parallel for schedule(dynamic, 16)
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = i + 1; j < N; ++j) G[i * N + j] = std::exp(-g * sqdist(pt(i), pt(j)));

    auto stat = [&](const std::vector<unsigned char>& in_a) {
        double saa = 0.0, sbb = 0.0, sab = 0.0;
        for (std::size_t i = 0; i < N; ++i)
            for (std::size_t j = i + 1; j < N; ++j) {
                const double k = G[i * N + j];
                if (in_a[i] && in_a[j])
                    saa += k;
                else if (!in_a[i] && !in_a[j])
                    sbb += k;
                else
                    sab += k;
            }
        return 2.0 * saa / (static_cast<double>(n) * (n - 1)) + 2.0 * sbb / (static_cast<double>(m) * (m - 1)) -
               2.0 * sab / (static_cast<double>(n) * m);
    };

    std::vector<unsigned char> labels(N, 0);
    std::fill(labels.begin(), labels.begin() + n, 1);
    MmdTest t;
    t.sigma = sigma;
    t.statistic = stat(labels);

    std::vector<double> null(permutations);
    std::vector<std::vector<unsigned char>> perms(permutations, labels);
    for (std::size_t p = 0; p < permutations; ++p) {
        Rng rng = make_stream(seed, p);
        std::shuffle(perms[p].begin(), perms[p].end(), rng);
    }
#pragma omp parallel for schedule(dynamic)
    for (std::size_t p = 0; p < permutations; ++p) null[p] = stat(perms[p]);

    double mean = 0.0;
    for (double v : null) mean += v;
    mean /= static_cast<double>(permutations);
    double var = 0.0;
    for (double v : null) var += (v - mean) * (v - mean);
    t.null_mean = mean;
    t.null_sd = permutations > 1 ? std::sqrt(var / static_cast<double>(permutations - 1)) : 0.0;
    std::size_t ge = 0;
    for (double v : null) ge += v >= t.statistic ? 1 : 0;
    t.p_value = static_cast<double>(ge + 1) / static_cast<double>(permutations + 1);
    return t;
}

double lmd(const ThetaBatch& posterior, std::span<const double> x_o, const TaskSpec& task, std::uint64_t seed,
           Exec exec) {
    if (posterior.empty()) throw std::invalid_argument("lmd: no posterior samples");
    require_dim(x_o, task.summary_dim, "lmd: x_o");
    const std::size_t n = posterior.size();
    std::vector<double> dist(n, 0.0);
    std::vector<unsigned char> ok(n, 0);
    for_each_index(n, exec, [&](std::size_t i) {
        Rng rng = make_stream(seed, i);
        const SimOutput out = simulate(task, posterior.row(i), rng);
        if (out.flagged) return;
        ok[i] = 1;
        dist[i] = std::sqrt(sqdist(out.x, x_o));
    });
    std::vector<double> kept;
    for (std::size_t i = 0; i < n; ++i)
        if (ok[i]) kept.push_back(dist[i]);
    if (kept.empty()) throw NumericalError("lmd: every simulation was flagged");
    return log_median(std::move(kept));
}

double log_median(std::vector<double> distances) {
    if (distances.empty()) throw std::invalid_argument("log_median: no distances");
    return safe_log(median_of(std::move(distances)));
}

double nlog(const ConditionalDensity& cd, std::span<const double> x_o, std::span<const double> theta_star) {
    return -cd.log_density(x_o, theta_star);
}

AbcResult rejection_abc(const TaskSpec& task, std::span<const double> x_o, double eps, std::size_t budget,
                        std::uint64_t seed, Exec exec) {
    if (!(eps > 0.0)) throw std::invalid_argument("rejection_abc: eps must be > 0");
    if (budget == 0) throw std::invalid_argument("rejection_abc: budget must be >= 1");
    require_dim(x_o, task.summary_dim, "rejection_abc: x_o");
    constexpr std::size_t kChunk = 1 << 16;
    const std::size_t n_chunks = (budget + kChunk - 1) / kChunk;
    const double eps2 = std::isinf(eps) ? std::numeric_limits<double>::infinity() : eps * eps;
    std::vector<std::vector<double>> acc(n_chunks);
    for_each_index(n_chunks, exec, [&](std::size_t c) {
        Rng rng = make_stream(seed, c);
        std::vector<double> theta(task.theta_dim);
        const std::size_t end = std::min(budget, (c + 1) * kChunk);
        for (std::size_t s = c * kChunk; s < end; ++s) {
            prior_sample(task, rng, theta);
            const SimOutput out = simulate(task, theta, rng);
            if (out.flagged) continue;
            if (sqdist(out.x, x_o) <= eps2) acc[c].insert(acc[c].end(), theta.begin(), theta.end());
        }
    });
    AbcResult r;
    r.samples = ThetaBatch(task.theta_dim);
    for (const auto& a : acc) r.samples.values().insert(r.samples.values().end(), a.begin(), a.end());
    r.simulations = budget;
    r.acceptance_rate = static_cast<double>(r.samples.size()) / static_cast<double>(budget);
    if (r.samples.empty())
        throw NumericalError("rejection_abc: no acceptances in " + std::to_string(budget) +
                             " simulations (acceptance rate 0)");
    return r;
}

ThetaBatch posterior_samples(const ConditionalDensity& cd, const TaskSpec& task, std::span<const double> x_o,
                             std::size_t n, std::uint64_t seed, Exec exec) {
    const ProposalSampler sampler(cd, task, x_o);
    ThetaBatch out(task.theta_dim, n);
    for_each_index(n, exec, [&](std::size_t i) {
        Rng rng = make_stream(seed, i);
        sampler.draw(rng, out.row(i));
    });
    return out;
}

// --- two-component mixture -----------------------------------------------------

namespace {

// In-place Cholesky of a small SPD matrix (row-major, lower factor).
bool cholesky(std::vector<double>& a, std::size_t d) {
    for (std::size_t j = 0; j < d; ++j) {
        double s = a[j * d + j];
        for (std::size_t k = 0; k < j; ++k) s -= a[j * d + k] * a[j * d + k];
        if (!(s > 0.0)) return false;
        a[j * d + j] = std::sqrt(s);
        for (std::size_t i = j + 1; i < d; ++i) {
            double t = a[i * d + j];
            for (std::size_t k = 0; k < j; ++k) t -= a[i * d + k] * a[j * d + k];
            a[i * d + j] = t / a[j * d + j];
        }
        for (std::size_t k = j + 1; k < d; ++k) a[j * d + k] = 0.0;
    }
    return true;
}

double gauss_logpdf(std::span<const double> x, const std::vector<double>& mu, const std::vector<double>& L,
                    std::size_t d) {
    std::vector<double> z(d);
    double logdet = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        double s = x[i] - mu[i];
        for (std::size_t k = 0; k < i; ++k) s -= L[i * d + k] * z[k];
        z[i] = s / L[i * d + i];
        logdet += std::log(L[i * d + i]);
    }
    double q = 0.0;
    for (double v : z) q += v * v;
    return -0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi) - logdet - 0.5 * q;
}

}  // namespace

double Gmm2::mean_separation() const { return std::sqrt(sqdist(mean[0], mean[1])); }

Gmm2 fit_gmm2(const ThetaBatch& data, std::size_t iterations) {
    const std::size_t n = data.size(), d = data.dim();
    if (n < 4) throw std::invalid_argument("fit_gmm2: need at least 4 points");
    std::vector<double> mu(d, 0.0), cov(d * d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t a = 0; a < d; ++a) mu[a] += data.row(i)[a] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t b = 0; b < d; ++b)
                cov[a * d + b] += (data.row(i)[a] - mu[a]) * (data.row(i)[b] - mu[b]) / static_cast<double>(n);
    // Leading principal axis by power iteration.
    std::vector<double> v(d, 1.0), w(d);
    for (int it = 0; it < 100; ++it) {
        double norm = 0.0;
        for (std::size_t a = 0; a < d; ++a) {
            w[a] = 0.0;
            for (std::size_t b = 0; b < d; ++b) w[a] += cov[a * d + b] * v[b];
            norm += w[a] * w[a];
        }
        norm = std::sqrt(norm);
        if (norm == 0.0) break;
        for (std::size_t a = 0; a < d; ++a) v[a] = w[a] / norm;
    }
    double lam = 0.0;
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < d; ++b) lam += v[a] * cov[a * d + b] * v[b];
    const double sd = std::sqrt(std::max(lam, 1e-12));

    Gmm2 g;
    std::vector<double> covs[2] = {cov, cov};
    for (int c = 0; c < 2; ++c) {
        g.mean[c].resize(d);
        for (std::size_t a = 0; a < d; ++a) g.mean[c][a] = mu[a] + (c == 0 ? -sd : sd) * v[a];
    }
    std::vector<double> resp(n * 2);
    for (std::size_t it = 0; it < iterations; ++it) {
        std::vector<double> L[2] = {covs[0], covs[1]};
        for (int c = 0; c < 2; ++c) {
            for (std::size_t a = 0; a < d; ++a) L[c][a * d + a] += 1e-9;
            if (!cholesky(L[c], d)) throw NumericalError("fit_gmm2: singular covariance");
        }
        double ll = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double l0 = std::log(g.weight[0]) + gauss_logpdf(data.row(i), g.mean[0], L[0], d);
            const double l1 = std::log(g.weight[1]) + gauss_logpdf(data.row(i), g.mean[1], L[1], d);
            const double m = std::max(l0, l1);
            const double lse = m + std::log(std::exp(l0 - m) + std::exp(l1 - m));
            resp[2 * i] = std::exp(l0 - lse);
            resp[2 * i + 1] = std::exp(l1 - lse);
            ll += lse;
        }
        g.log_likelihood = ll;
        for (int c = 0; c < 2; ++c) {
            double nk = 0.0;
            for (std::size_t i = 0; i < n; ++i) nk += resp[2 * i + c];
            nk = std::max(nk, 1e-12);
            g.weight[c] = nk / static_cast<double>(n);
            std::fill(g.mean[c].begin(), g.mean[c].end(), 0.0);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t a = 0; a < d; ++a) g.mean[c][a] += resp[2 * i + c] * data.row(i)[a] / nk;
            std::fill(covs[c].begin(), covs[c].end(), 0.0);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t a = 0; a < d; ++a)
                    for (std::size_t b = 0; b < d; ++b)
                        covs[c][a * d + b] += resp[2 * i + c] * (data.row(i)[a] - g.mean[c][a]) *
                                              (data.row(i)[b] - g.mean[c][b]) / nk;
            for (std::size_t a = 0; a < d; ++a) covs[c][a * d + a] += 1e-6;
        }
    }
    return g;
}

}  // namespace napt
