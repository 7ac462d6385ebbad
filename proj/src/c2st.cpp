#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "napt/diagnostics.hpp"

namespace napt {

namespace {

// One hidden tanh layer, sigmoid output.
struct Classifier {
    std::size_t d = 0, h = 0;
    std::vector<double> w;  // W1 (h x d), b1 (h), w2 (h), b2 (1)

    Classifier(std::size_t d_, std::size_t h_, Rng& rng) : d(d_), h(h_), w(h_ * d_ + 2 * h_ + 1, 0.0) {
        const double lim1 = std::sqrt(6.0 / static_cast<double>(d + h));
        const double lim2 = std::sqrt(6.0 / static_cast<double>(h + 1));
        std::uniform_real_distribution<double> u1(-lim1, lim1), u2(-lim2, lim2);
        for (std::size_t i = 0; i < h * d; ++i) w[i] = u1(rng);
        for (std::size_t i = 0; i < h; ++i) w[h * d + h + i] = u2(rng);
    }

    double logit(const double* x, double* hid) const {
        const double* b1 = w.data() + h * d;
        const double* w2 = b1 + h;
        double z = w2[h];
        for (std::size_t j = 0; j < h; ++j) {
            double s = b1[j];
            for (std::size_t k = 0; k < d; ++k) s += w[j * d + k] * x[k];
            hid[j] = std::tanh(s);
            z += w2[j] * hid[j];
        }
        return z;
    }

    // Binary cross-entropy from a logit.
    static double bce(double z, double y) {
        return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    }

    // Adds the loss gradient for one example to g; returns the loss.
    double accumulate(const double* x, double y, std::vector<double>& g, std::vector<double>& hid) const {
        const double z = logit(x, hid.data());
        const double dz = 1.0 / (1.0 + std::exp(-z)) - y;
        const double* w2 = w.data() + h * d + h;
        double* gW1 = g.data();
        double* gb1 = gW1 + h * d;
        double* gw2 = gb1 + h;
        gw2[h] += dz;
        for (std::size_t j = 0; j < h; ++j) {
            gw2[j] += dz * hid[j];
            const double dh = dz * w2[j] * (1.0 - hid[j] * hid[j]);
            gb1[j] += dh;
            for (std::size_t k = 0; k < d; ++k) gW1[j * d + k] += dh * x[k];
        }
        return bce(z, y);
    }
};

struct Data {
    std::size_t d = 0;
    std::vector<double> x;
    std::vector<double> y;
    const double* row(std::size_t i) const { return x.data() + i * d; }
};

double mean_loss(const Classifier& c, const Data& data, std::span<const std::size_t> idx) {
    std::vector<double> hid(c.h);
    double s = 0.0;
    for (std::size_t i : idx) s += Classifier::bce(c.logit(data.row(i), hid.data()), data.y[i]);
    return s / static_cast<double>(idx.size());
}

double accuracy(const Classifier& c, const Data& data, std::span<const std::size_t> idx) {
    std::vector<double> hid(c.h);
    std::size_t hit = 0;
    for (std::size_t i : idx) {
        const double z = c.logit(data.row(i), hid.data());
        hit += ((z > 0.0) == (data.y[i] > 0.5)) ? 1 : 0;
    }
    return static_cast<double>(hit) / static_cast<double>(idx.size());
}

Classifier fit(const Data& data, std::vector<std::size_t> train, const C2stOptions& opt, Rng& rng) {
    std::shuffle(train.begin(), train.end(), rng);
    const auto n_val = std::max<std::size_t>(
        1, static_cast<std::size_t>(opt.validation_fraction * static_cast<double>(train.size())));
    const std::vector<std::size_t> val(train.end() - static_cast<std::ptrdiff_t>(n_val), train.end());
    train.resize(train.size() - n_val);

    Classifier c(data.d, opt.hidden, rng);
    std::vector<double> m(c.w.size(), 0.0), v(c.w.size(), 0.0), g(c.w.size()), hid(opt.hidden);
    std::vector<double> best = c.w;
    double best_loss = std::numeric_limits<double>::infinity();
    std::size_t since = 0, t = 0;
    for (std::size_t epoch = 0; epoch < opt.max_epochs && since < opt.patience; ++epoch) {
        std::shuffle(train.begin(), train.end(), rng);
        for (std::size_t b = 0; b < train.size(); b += opt.batch_size) {
            const std::size_t e = std::min(train.size(), b + opt.batch_size);
            std::fill(g.begin(), g.end(), 0.0);
            for (std::size_t i = b; i < e; ++i) c.accumulate(data.row(train[i]), data.y[train[i]], g, hid);
            ++t;
            const double inv = 1.0 / static_cast<double>(e - b);
            const double c1 = 1.0 - std::pow(0.9, static_cast<double>(t));
            const double c2 = 1.0 - std::pow(0.999, static_cast<double>(t));
            for (std::size_t k = 0; k < c.w.size(); ++k) {
                const double gk = g[k] * inv;
                m[k] = 0.9 * m[k] + 0.1 * gk;
                v[k] = 0.999 * v[k] + 0.001 * gk * gk;
                c.w[k] -= opt.learning_rate * (m[k] / c1) / (std::sqrt(v[k] / c2) + 1e-8);
            }
        }
        const double vl = mean_loss(c, data, val);
        if (vl < best_loss) {
            best_loss = vl;
            best = c.w;
            since = 0;
        } else {
            ++since;
        }
    }
    c.w = best;
    return c;
}

}  // namespace

C2stResult c2st(const ThetaBatch& A, const ThetaBatch& B, std::uint64_t seed, const C2stOptions& opt) {
    if (A.size() != B.size()) throw std::invalid_argument("c2st: sample counts must be balanced");
    if (A.dim() != B.dim()) throw std::invalid_argument("c2st: dimension mismatch");
    if (opt.folds < 2 || A.size() < opt.folds) throw std::invalid_argument("c2st: too few samples for the folds");

    const std::size_t n = A.size(), N = 2 * n, D = A.dim();
    C2stResult res;
    std::vector<double> mean(D, 0.0), sd(D, 0.0);
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t k = 0; k < D; ++k) mean[k] += (i < n ? A.row(i)[k] : B.row(i - n)[k]) / static_cast<double>(N);
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t k = 0; k < D; ++k) {
            const double e = (i < n ? A.row(i)[k] : B.row(i - n)[k]) - mean[k];
            sd[k] += e * e / static_cast<double>(N);
        }
    std::vector<std::size_t> cols;
    for (std::size_t k = 0; k < D; ++k) {
        sd[k] = std::sqrt(sd[k]);
        if (sd[k] > 1e-12 * std::max(1.0, std::abs(mean[k])))
            cols.push_back(k);
        else
            res.dropped_features.push_back(k);
    }
    if (cols.empty()) {
        // Nothing to learn from: both sets are the same constant point.
        res.accuracy = 0.5;
        res.fold_accuracy.assign(opt.folds, 0.5);
        return res;
    }

    Data data;
    data.d = cols.size();
    data.x.resize(N * data.d);
    data.y.resize(N);
    for (std::size_t i = 0; i < N; ++i) {
        const auto r = i < n ? A.row(i) : B.row(i - n);
        for (std::size_t c = 0; c < cols.size(); ++c) data.x[i * data.d + c] = (r[cols[c]] - mean[cols[c]]) / sd[cols[c]];
        data.y[i] = i < n ? 0.0 : 1.0;
    }

    std::vector<std::size_t> perm(N);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng = make_stream(seed, 0xc257);
    std::shuffle(perm.begin(), perm.end(), rng);

    res.fold_accuracy.resize(opt.folds);
#pragma omp parallel for schedule(dynamic)
    for (std::size_t f = 0; f < opt.folds; ++f) {
        const std::size_t lo = f * N / opt.folds, hi = (f + 1) * N / opt.folds;
        std::vector<std::size_t> train, test(perm.begin() + lo, perm.begin() + hi);
        train.insert(train.end(), perm.begin(), perm.begin() + lo);
        train.insert(train.end(), perm.begin() + hi, perm.end());
        Rng frng = make_stream(seed, 0xc257, f + 1);
        const Classifier c = fit(data, train, opt, frng);
        res.fold_accuracy[f] = accuracy(c, data, test);
    }
    res.accuracy = std::accumulate(res.fold_accuracy.begin(), res.fold_accuracy.end(), 0.0) /
                   static_cast<double>(opt.folds);
    return res;
}

}  // namespace napt
