#include "napt/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <memory>
#include <random>

#include "napt/estimators.hpp"
#include "napt/report.hpp"

namespace napt {

void TrainConfig::validate() const {
    if (rounds == 0) throw ConfigError("rounds must be >= 1");
    if (n_per_round == 0) throw ConfigError("n_per_round must be >= 1");
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
    if (patience == 0) throw ConfigError("patience must be >= 1");
    if (max_epochs == 0) throw ConfigError("max_epochs must be >= 1");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
        throw ConfigError("validation_fraction must lie in (0, 1)");
    if (mlmc.M0 == 0) throw ConfigError("M0 must be >= 1");
    if (estimator == EstimatorKind::nested && nested_M == 0) throw ConfigError("nested_M must be >= 1");
    if (estimator == EstimatorKind::atomic && atomic_M < 2) throw ConfigError("atomic_M must be >= 2");
    if (is_multilevel(estimator)) level_distribution().validate();
    const auto& spec = task_spec(task);
    if (!x_o.empty() && x_o.size() != spec.summary_dim)
        throw ConfigError("x_o has " + std::to_string(x_o.size()) + " entries, task needs " +
                          std::to_string(spec.summary_dim));
    MdnArchitecture a = arch;
    a.input_dim = spec.summary_dim;
    a.theta_dim = spec.theta_dim;
    try {
        a.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

LevelDistribution TrainConfig::level_distribution() const {
    switch (estimator) {
        case EstimatorKind::ru: return LevelDistribution::ru(alpha);
        case EstimatorKind::rr: return LevelDistribution::rr(alpha);
        case EstimatorKind::grr: return LevelDistribution::grr(alpha, m_lo);
        case EstimatorKind::tgrr: return LevelDistribution::tgrr(alpha, m_lo, m_hi);
        default: break;
    }
    throw ConfigError("estimator '" + to_string(estimator) + "' has no level distribution");
}

std::size_t TrainConfig::validation_M() const {
    switch (estimator) {
        case EstimatorKind::nested: return nested_M;
        case EstimatorKind::atomic: return atomic_M;
        case EstimatorKind::tgrr: return mlmc.inner_size(m_hi);
        default: return 128;
    }
}

void RoundDataset::add(std::span<const double> th, std::span<const double> xx, std::size_t lvl, std::size_t rnd,
                       bool val) {
    if (theta.dim() == 0 && size() == 0) {
        theta = ThetaBatch(th.size());
        x = ThetaBatch(xx.size());
    }
    theta.push_back(th);
    x.push_back(xx);
    level.push_back(lvl);
    round.push_back(rnd);
    is_validation.push_back(val ? 1 : 0);
}

std::vector<std::size_t> RoundDataset::indices(bool validation) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < size(); ++i)
        if (static_cast<bool>(is_validation[i]) == validation) out.push_back(i);
    return out;
}

std::vector<double> default_observation(const TaskSpec& spec, std::uint64_t seed) {
    if (spec.default_x_o) return *spec.default_x_o;
    if (spec.theta_star) {
        Rng rng = make_stream(seed, 0x0b5e);
        return simulate(spec, *spec.theta_star, rng).x;
    }
    throw ConfigError("task '" + spec.name + "' has no default observation; give x_o explicitly");
}

namespace {

ConditionalDensity make_density(const TrainConfig& cfg, const TaskSpec& spec) {
    MdnArchitecture a = cfg.arch;
    a.input_dim = spec.summary_dim;
    a.theta_dim = spec.theta_dim;
    Standardizer th;
    for (std::size_t i = 0; i < spec.theta_dim; ++i) {
        th.shift.push_back(0.5 * (spec.lower[i] + spec.upper[i]));
        th.scale.push_back(0.5 * (spec.upper[i] - spec.lower[i]));
    }
    return ConditionalDensity(a, init_params(a, splitmix64(cfg.seed ^ 0x1a17)), Standardizer::identity(a.input_dim),
                              th);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    return splitmix64(seed ^ splitmix64(a ^ splitmix64(b ^ splitmix64(c))));
}

// Stream tags.
constexpr std::uint64_t kSimTag = 0x51;
constexpr std::uint64_t kSplitTag = 0x52;
constexpr std::uint64_t kShuffleTag = 0x53;
constexpr std::uint64_t kStepTag = 0x54;
constexpr std::uint64_t kValTag = 0x55;

template <class F>
void parallel_for(std::size_t n, Exec exec, F&& f) {
    if (exec == Exec::serial) {
        for (std::size_t i = 0; i < n; ++i) f(i);
        return;
    }
    std::exception_ptr err;
#pragma omp parallel for schedule(dynamic)
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

}  // namespace

Trainer::Trainer(TrainConfig cfg)
    : cfg_(std::move(cfg)), spec_(task_spec(cfg_.task)), cd_((cfg_.validate(), make_density(cfg_, spec_))) {
    x_o_ = cfg_.x_o.empty() ? default_observation(spec_, cfg_.seed) : cfg_.x_o;
}

void Trainer::set_run_dir(std::filesystem::path dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create run directory '" + dir.string() + "': " + ec.message());
    run_dir_ = std::move(dir);
}

void Trainer::simulate_round(std::size_t k, RoundSummary& rs) {
    const std::size_t N = cfg_.n_per_round;
    const bool multilevel = is_multilevel(cfg_.estimator);
    const LevelDistribution dist = multilevel ? cfg_.level_distribution() : LevelDistribution{};

    std::unique_ptr<InnerSampler> sampler;
    if (k == 1)
        sampler = std::make_unique<PriorSampler>(spec_);
    else
        sampler = std::make_unique<ProposalSampler>(*proposal_, spec_, x_o_);

    ThetaBatch th(spec_.theta_dim, N), xs(spec_.summary_dim, N);
    std::vector<std::size_t> lv(N, 0);
    std::vector<unsigned char> ok(N, 0);
    parallel_for(N, cfg_.exec, [&](std::size_t i) {
        Rng rng = make_stream(cfg_.seed, mix_seed(kSimTag, k, 0, 0), i);
        sampler->draw(rng, th.row(i));
        const SimOutput out = simulate(spec_, th.row(i), rng);
        const bool finite = std::all_of(out.x.begin(), out.x.end(), [](double v) { return std::isfinite(v); });
        ok[i] = (!out.flagged && finite) ? 1 : 0;
        std::copy(out.x.begin(), out.x.end(), xs.row(i).begin());
        if (multilevel) lv[i] = dist.sample(rng);
    });
    sims_ += N;

    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < N; ++i)
        if (ok[i]) keep.push_back(i);
    rs.flagged = N - keep.size();
    rs.accepted = keep.size();

    std::vector<std::size_t> order = keep;
    Rng split_rng = make_stream(cfg_.seed, mix_seed(kSplitTag, k, 0, 0));
    std::shuffle(order.begin(), order.end(), split_rng);
    std::size_t n_val = 0;
    if (keep.size() >= 2)
        n_val = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::llround(cfg_.validation_fraction * static_cast<double>(keep.size()))));
    std::vector<unsigned char> val(N, 0);
    for (std::size_t j = 0; j < n_val; ++j) val[order[j]] = 1;
    for (std::size_t i : keep) data_.add(th.row(i), xs.row(i), lv[i], k, val[i] != 0);
}

Query Trainer::pair_query(std::size_t k, std::size_t i, const InnerSampler& inner,
                          std::span<const std::size_t> batch, std::size_t pos, Rng& rng) const {
    const auto theta = data_.theta.row(i);
    const auto x = data_.x.row(i);
    if (k == 1) {
        const ForwardPass fp = cd_.forward(x);
        const MixtureHead mix = cd_.mixture(fp);
        std::vector<double> hg(cd_.arch().head_dim());
        Query q;
        q.loss = -cd_.log_density_grad_at(mix, theta, hg);
        for (double& h : hg) h = -h;
        q.grad.resize(cd_.params().size());
        cd_.pullback(fp, hg, q.grad);
        return q;
    }
    const MdnRatio m(cd_, spec_, x);
    switch (cfg_.estimator) {
        case EstimatorKind::nested:
            return nested_query(m, theta, inner, cfg_.nested_M, cfg_.mlmc.atoms, rng, true);
        case EstimatorKind::atomic: {
            const std::size_t n = std::min(cfg_.atomic_M, batch.size());
            ThetaBatch atoms(spec_.theta_dim);
            for (std::size_t j = 0; j < n; ++j) atoms.push_back(data_.theta.row(batch[(pos + j) % batch.size()]));
            Query q;
            q.grad.resize(m.param_dim());
            q.loss = atomic_apt_loss_grad(m, atoms, 0, q.grad);
            return q;
        }
        default:
            return mlmc_query_at(m, theta, inner, cfg_.level_distribution(), data_.level[i], cfg_.mlmc, rng, true);
    }
}

double Trainer::epoch_step(std::size_t k, std::size_t epoch, const InnerSampler& inner,
                           std::span<const std::size_t> train, std::size_t& draws) {
    std::vector<std::size_t> order(train.begin(), train.end());
    Rng shuffle_rng = make_stream(cfg_.seed, mix_seed(kShuffleTag, k, epoch, 0));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    const AdamHyper hyper{cfg_.learning_rate, 0.9, 0.999, 1e-8, cfg_.weight_decay};
    double loss_sum = 0.0;
    std::size_t loss_n = 0;
    for (std::size_t b = 0, step = 0; b < order.size(); b += cfg_.batch_size, ++step) {
        const std::span<const std::size_t> batch(order.data() + b, std::min(cfg_.batch_size, order.size() - b));
        if (k > 1 && cfg_.estimator == EstimatorKind::atomic && batch.size() < 2) continue;
        const BatchResult r = mean_queries(
            batch.size(), cd_.params().size(), true,
            [&](std::size_t j, Rng& rng) { return pair_query(k, batch[j], inner, batch, j, rng); },
            mix_seed(kStepTag, k, epoch, step) ^ cfg_.seed, cfg_.exec);
        draws += r.cost;
        bool applied = false;
        auto& phi = cd_.params().values;
        if (cfg_.optimizer == OptimizerKind::adam)
            applied = adam_step(phi, r.grad, adam_, hyper);
        else
            applied = sgd_step(phi, r.grad, cfg_.learning_rate);
        if (!applied && cfg_.optimizer == OptimizerKind::sgd) ++adam_.skipped;
        if (std::isfinite(r.loss)) {
            loss_sum += r.loss * static_cast<double>(batch.size());
            loss_n += batch.size();
        }
    }
    return loss_n ? loss_sum / static_cast<double>(loss_n) : std::numeric_limits<double>::quiet_NaN();
}

double Trainer::validation_loss(std::size_t k, const InnerSampler& inner, std::span<const std::size_t> val) {
    if (val.empty()) return std::numeric_limits<double>::quiet_NaN();
    const std::size_t M = cfg_.validation_M();
    const BatchResult r = mean_queries(
        val.size(), cd_.params().size(), false,
        [&](std::size_t j, Rng& rng) {
            const std::size_t i = val[j];
            if (k == 1) {
                Query q;
                q.loss = -cd_.log_density(data_.x.row(i), data_.theta.row(i));
                return q;
            }
            const MdnRatio m(cd_, spec_, data_.x.row(i));
            return nested_query(m, data_.theta.row(i), inner, M, cfg_.mlmc.atoms, rng, false);
        },
        mix_seed(kValTag, k, 0, 0) ^ cfg_.seed, cfg_.exec);
    return r.loss;
}

RoundSummary Trainer::run_round() {
    if (round_ >= cfg_.rounds) throw std::logic_error("all rounds already done");
    const std::size_t k = ++round_;
    RoundSummary rs;
    rs.round = k;
    const auto t_start = std::chrono::steady_clock::now();

    simulate_round(k, rs);
    if (data_.size() == 0) throw NumericalError("no usable simulations in round " + std::to_string(k));

    if (k == 1) {
        // Input standardization from the first round's training data.
        const auto train = data_.indices(false);
        const std::size_t D = spec_.summary_dim;
        Standardizer s{std::vector<double>(D, 0.0), std::vector<double>(D, 1.0)};
        if (!train.empty()) {
            for (std::size_t d = 0; d < D; ++d) {
                double m = 0.0, v = 0.0;
                for (std::size_t i : train) m += data_.x.row(i)[d];
                m /= static_cast<double>(train.size());
                for (std::size_t i : train) v += (data_.x.row(i)[d] - m) * (data_.x.row(i)[d] - m);
                v /= static_cast<double>(train.size());
                s.shift[d] = m;
                s.scale[d] = v > 1e-16 ? std::sqrt(v) : 1.0;
            }
        }
        cd_.set_input_norm(std::move(s));
    }

    std::unique_ptr<InnerSampler> inner;
    if (k == 1)
        inner = std::make_unique<PriorSampler>(spec_);
    else
        inner = std::make_unique<ProposalSampler>(*proposal_, spec_, x_o_);

    const auto train = data_.indices(false);
    const auto val = data_.indices(true);
    adam_ = AdamState{};
    std::vector<double> vals;
    std::vector<double> best_params = cd_.params().values;
    double best = std::numeric_limits<double>::infinity();

    for (std::size_t epoch = 1; epoch <= cfg_.max_epochs; ++epoch) {
        const double tl = epoch_step(k, epoch, *inner, train, draws_);
        double vl = validation_loss(k, *inner, val);
        if (val.empty()) vl = tl;
        const double score = std::isfinite(vl) ? vl : std::numeric_limits<double>::infinity();
        vals.push_back(score);
        if (score < best) {
            best = score;
            best_params = cd_.params().values;
        }
        const double wall =
            wall_ + std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
        history_.push_back({k, epoch, tl, vl, sims_, draws_, wall});
        rs.epochs = epoch;
        if (early_stop(vals, cfg_.patience)) break;
    }
    cd_.params().values = best_params;
    if (!cd_.params().all_finite()) throw NumericalError("parameters became non-finite in round " + std::to_string(k));
    rs.best_val_loss = best;
    rs.skipped_steps = adam_.skipped;
    proposal_.emplace(cd_);
    wall_ += std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();

    if (run_dir_) {
        char name[32];
        std::snprintf(name, sizeof name, "round_%02zu.ckpt", k);
        save_checkpoint((*run_dir_ / name).string(), cd_);
        std::ofstream os(*run_dir_ / "training.csv", std::ios::binary);
        if (!os) throw IoError("cannot write training.csv");
        CsvWriter w(os, {"round", "epoch", "train_loss", "val_loss", "simulations", "inner_draws", "wall_seconds"});
        for (const auto& r : history_)
            w.row({std::to_string(r.round), std::to_string(r.epoch), format_double(r.train_loss),
                   format_double(r.val_loss), std::to_string(r.simulations), std::to_string(r.inner_draws),
                   format_double(r.wall_seconds)});
    }
    return rs;
}

void Trainer::run(const std::function<void(const RoundSummary&, const Trainer&)>& on_round) {
    while (round_ < cfg_.rounds) {
        const RoundSummary rs = run_round();
        if (on_round) on_round(rs, *this);
    }
}

}  // namespace napt
