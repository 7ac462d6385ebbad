#include "napt/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "napt/report.hpp"

namespace napt {

namespace fs = std::filesystem;

namespace {

std::ofstream open_out(const fs::path& p) {
    if (p.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(p.parent_path(), ec);
        if (ec) throw IoError("cannot create directory '" + p.parent_path().string() + "': " + ec.message());
    }
    std::ofstream os(p, std::ios::binary);
    if (!os) throw IoError("cannot write '" + p.string() + "'");
    return os;
}

void finish(std::ofstream& os, const fs::path& p) {
    os.flush();
    if (!os) throw IoError("write failed: " + p.string());
}

void make_dir(const fs::path& p) {
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec) throw IoError("cannot create directory '" + p.string() + "': " + ec.message());
}

std::vector<double> parse_list(const std::string& s) {
    std::vector<double> v;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            v.push_back(std::stod(item, &used));
            if (item.find_first_not_of(' ', used) != std::string::npos) throw std::invalid_argument(item);
        } catch (const std::logic_error&) {
            throw ConfigError("not a number list: '" + s + "'");
        }
    }
    return v;
}

std::vector<std::string> split_csv_line(std::string line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(item);
    return out;
}

ThetaBatch take(const ThetaBatch& b, std::size_t n) {
    ThetaBatch out(b.dim(), n);
    std::copy_n(b.values().begin(), n * b.dim(), out.values().begin());
    return out;
}

}  // namespace

int exit_code_for_current_exception(std::ostream& err) {
    try {
        throw;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        err << "invalid argument: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        err << "i/o error: " << e.what() << "\n";
        return 4;
    } catch (const fs::filesystem_error& e) {
        err << "i/o error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        err << "numerical failure: " << e.what() << "\n";
        return 3;
    }
}

// --- simulate ----------------------------------------------------------------

void cmd_simulate(Task task, std::size_t n, std::uint64_t seed, const fs::path& out, Exec exec) {
    const TaskSpec& spec = task_spec(task);
    const std::size_t D = spec.theta_dim, S = spec.summary_dim;
    std::vector<double> rows(n * (D + S));
#pragma omp parallel for schedule(dynamic) if (exec == Exec::parallel)
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng = make_stream(seed, i);
        double* r = rows.data() + i * (D + S);
        prior_sample(spec, rng, {r, D});
        const SimOutput o = simulate(spec, {r, D}, rng);
        std::copy(o.x.begin(), o.x.end(), r + D);
    }
    std::vector<std::string> header = spec.theta_names();
    for (auto& s : spec.summary_names()) header.push_back(s);
    auto os = open_out(out);
    CsvWriter w(os, header);
    for (std::size_t i = 0; i < n; ++i)
        w.row(std::vector<double>(rows.begin() + static_cast<std::ptrdiff_t>(i * (D + S)),
                                  rows.begin() + static_cast<std::ptrdiff_t>((i + 1) * (D + S))));
    finish(os, out);
}

// --- train -------------------------------------------------------------------

fs::path cmd_train(const RunConfig& cfg, std::ostream& log) {
    cfg.train.validate();
    const fs::path dir(cfg.output);
    make_dir(dir);
    save_config((dir / "config.ini").string(), cfg);

    Trainer tr(cfg.train);
    tr.set_run_dir(dir);
    std::vector<RoundSummary> rounds;
    tr.run([&](const RoundSummary& rs, const Trainer& t) {
        rounds.push_back(rs);
        log << "round " << rs.round << ": " << rs.epochs << " epochs, best validation loss "
            << format_double(rs.best_val_loss) << ", " << t.simulations() << " simulations\n";
        const fs::path p = dir / "rounds.csv";
        auto os = open_out(p);
        CsvWriter w(os, {"round", "epochs", "accepted", "flagged", "skipped_steps", "best_val_loss"});
        for (const auto& r : rounds)
            w.row({std::to_string(r.round), std::to_string(r.epochs), std::to_string(r.accepted),
                   std::to_string(r.flagged), std::to_string(r.skipped_steps), format_double(r.best_val_loss)});
        finish(os, p);
    });
    return dir;
}

// --- evaluate ----------------------------------------------------------------

MetricReport evaluate_metrics(const ConditionalDensity& cd, const TaskSpec& task, std::span<const double> x_o,
                              const ThetaBatch& reference, std::span<const double> theta_star,
                              const MetricSettings& m, std::uint64_t seed, Exec exec) {
    if (m.posterior_samples < 2) throw ConfigError("metrics.posterior_samples must be >= 2");
    MetricReport r;
    const ThetaBatch post = posterior_samples(cd, task, x_o, m.posterior_samples, make_stream(seed, 1)(), exec);
    r.n_posterior = post.size();
    r.lmd = lmd(post, x_o, task, make_stream(seed, 2)(), exec);
    if (!theta_star.empty()) r.nlog = nlog(cd, x_o, theta_star);
    if ((m.mmd || m.c2st) && !reference.empty()) {
        const std::size_t n = std::min(post.size(), reference.size());
        r.n_reference = n;
        const ThetaBatch A = take(post, n), B = take(reference, n);
        if (m.mmd && n >= 2) r.mmd = mmd(A, B, 0.0, exec);
        if (m.c2st && n >= m.c2st_folds) {
            C2stOptions o;
            o.folds = m.c2st_folds;
            r.c2st = c2st(A, B, make_stream(seed, 3)(), o).accuracy;
        }
    }
    return r;
}

void write_metrics_csv(std::ostream& os, const MetricReport& r) {
    CsvWriter w(os, {"metric", "value"});
    if (r.mmd) w.row({"mmd", format_double(*r.mmd)});
    if (r.c2st) w.row({"c2st", format_double(*r.c2st)});
    w.row({"lmd", format_double(r.lmd)});
    if (r.nlog) w.row({"nlog", format_double(*r.nlog)});
    w.row({"n_posterior", std::to_string(r.n_posterior)});
    w.row({"n_reference", std::to_string(r.n_reference)});
}

ThetaBatch read_theta_csv(const fs::path& path, const TaskSpec& task) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read '" + path.string() + "'");
    std::string line;
    if (!std::getline(is, line)) throw IoError("empty reference file '" + path.string() + "'");
    const auto header = split_csv_line(line);
    std::vector<std::size_t> col;
    for (const auto& name : task.theta_names()) {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw IoError("reference file lacks column '" + name + "'");
        col.push_back(static_cast<std::size_t>(it - header.begin()));
    }
    ThetaBatch out(task.theta_dim);
    std::vector<double> th(task.theta_dim);
    while (std::getline(is, line)) {
        if (line.empty() || line == "\r") continue;
        const auto f = split_csv_line(line);
        for (std::size_t k = 0; k < col.size(); ++k) {
            if (col[k] >= f.size()) throw IoError("short row in '" + path.string() + "'");
            try {
                th[k] = std::stod(f[col[k]]);
            } catch (const std::logic_error&) {
                throw IoError("bad number '" + f[col[k]] + "' in '" + path.string() + "'");
            }
        }
        out.push_back(th);
    }
    return out;
}

MetricReport cmd_evaluate(const EvaluateOptions& opt, const fs::path& out) {
    if (!fs::exists(opt.checkpoint)) throw IoError("checkpoint not found: " + opt.checkpoint.string());
    const ConditionalDensity cd = load_checkpoint(opt.checkpoint.string());
    const TaskSpec& spec = task_spec(opt.task);
    if (cd.arch().theta_dim != spec.theta_dim || cd.arch().input_dim != spec.summary_dim)
        throw ConfigError("checkpoint dimensions do not match task '" + spec.name + "'");
    const std::vector<double> x_o = opt.x_o.empty() ? default_observation(spec, opt.seed) : opt.x_o;
    require_dim(x_o, spec.summary_dim, "x_o");
    std::vector<double> theta_star = opt.theta_star;
    if (theta_star.empty() && spec.theta_star) theta_star = *spec.theta_star;
    if (!theta_star.empty()) require_dim(theta_star, spec.theta_dim, "theta_star");

    ThetaBatch ref(spec.theta_dim);
    if (opt.metrics.mmd || opt.metrics.c2st) {
        if (opt.reference)
            ref = read_theta_csv(*opt.reference, spec);
        else
            ref = rejection_abc(spec, x_o, opt.metrics.abc_epsilon, opt.metrics.abc_budget,
                                make_stream(opt.seed, 0xabc)(), opt.exec)
                      .samples;
    }
    const MetricReport r = evaluate_metrics(cd, spec, x_o, ref, theta_star, opt.metrics, opt.seed, opt.exec);
    auto os = open_out(out);
    write_metrics_csv(os, r);
    finish(os, out);
    return r;
}

// --- lab -----------------------------------------------------------------------

void write_rate_csv(std::ostream& os, const RateReport& r) {
    CsvWriter w(os, {"kind", "level", "value", "se", "log2_value", "reps"});
    for (std::size_t i = 0; i < r.levels.size(); ++i)
        w.row({to_string(r.kind), std::to_string(r.levels[i]), format_double(r.value[i]), format_double(r.se[i]),
               format_double(std::log2(r.value[i])), std::to_string(r.reps)});
}

void write_rate_summary_csv(std::ostream& os, const RateReport& r) {
    CsvWriter w(os, {"kind", "slope", "intercept", "r_squared", "first_level", "last_level"});
    w.row({to_string(r.kind), format_double(r.slope), format_double(r.intercept), format_double(r.r_squared),
           std::to_string(r.levels.front()), std::to_string(r.levels.back())});
}

void write_inefficiency_csv(std::ostream& os, const std::vector<InefficiencyRow>& rows) {
    CsvWriter w(os, {"alpha", "variance_bound", "cost", "product"});
    for (const auto& r : rows) w.row(std::vector<double>{r.alpha, r.variance, r.cost, r.product});
}

RateReport lab_rate(RateKind kind, const std::vector<std::size_t>& levels, std::size_t reps, std::size_t M0,
                    std::uint64_t seed, const fs::path& out_dir, Exec exec) {
    const RateReport r = estimate_rate(kind, ToyModel(), levels, reps, M0, seed, exec);
    make_dir(out_dir);
    const std::string stem = "rate_" + to_string(kind);
    {
        const fs::path p = out_dir / (stem + ".csv");
        auto os = open_out(p);
        write_rate_csv(os, r);
        finish(os, p);
    }
    {
        const fs::path p = out_dir / (stem + "_fit.csv");
        auto os = open_out(p);
        write_rate_summary_csv(os, r);
        finish(os, p);
    }
    RatePlot plot;
    plot.title = to_string(kind) + " on the toy model";
    plot.y_label = "log2 statistic";
    for (std::size_t i = 0; i < r.levels.size(); ++i) {
        plot.levels.push_back(static_cast<double>(r.levels[i]));
        plot.log2_values.push_back(std::log2(r.value[i]));
        plot.log2_se.push_back(r.se[i] / (r.value[i] * std::log(2.0)));
    }
    plot.slope = r.slope;
    plot.intercept = r.intercept;
    const fs::path p = out_dir / (stem + ".svg");
    auto os = open_out(p);
    write_rate_svg(os, plot);
    finish(os, p);
    return r;
}

UnbiasednessReport lab_unbiased(const LevelDistribution& dist, std::size_t M0, std::size_t reps, std::uint64_t seed,
                                const fs::path& out_dir, Exec exec) {
    const MlmcConfig cfg{M0, 1.8, 1.8, AtomMode::fresh, Coupling::independent};
    const UnbiasednessReport r = verify_unbiasedness(ToyModel(), dist, cfg, reps, seed, exec);
    make_dir(out_dir);
    const fs::path p = out_dir / ("unbiased_" + to_string(dist.kind) + ".csv");
    auto os = open_out(p);
    CsvWriter w(os, {"quantity", "mean", "se", "reference", "reference_se", "z", "reps", "zero_variance"});
    const std::string zv = r.zero_variance ? "true" : "false";
    w.row({"loss", format_double(r.loss_mean), format_double(r.loss_se), format_double(r.reference.loss),
           format_double(r.reference.loss_se), format_double(r.loss_z), std::to_string(r.reps), zv});
    w.row({"grad", format_double(r.grad_mean), format_double(r.grad_se), format_double(r.reference.grad),
           format_double(r.reference.grad_se), format_double(r.grad_z), std::to_string(r.reps), zv});
    finish(os, p);
    return r;
}

std::vector<InefficiencyRow> lab_inefficiency(EstimatorKind kind, double r2, std::size_t m_lo, std::size_t m_hi,
                                              const std::vector<double>& alphas, const fs::path& out_dir) {
    const auto rows = inefficiency_curve(kind, r2, m_lo, m_hi, alphas);
    const InefficiencyRow& best = argmin_row(rows);
    make_dir(out_dir);
    {
        const fs::path p = out_dir / ("inefficiency_" + to_string(kind) + ".csv");
        auto os = open_out(p);
        write_inefficiency_csv(os, rows);
        finish(os, p);
    }
    const fs::path p = out_dir / ("inefficiency_" + to_string(kind) + "_argmin.csv");
    auto os = open_out(p);
    CsvWriter w(os, {"kind", "r2", "m_lo", "m_hi", "grid_argmin", "optimal_alpha"});
    w.row({to_string(kind), format_double(r2), std::to_string(m_lo),
           m_hi == kNoTruncation ? std::string("none") : std::to_string(m_hi), format_double(best.alpha),
           format_double(optimal_alpha(kind, r2, m_lo, m_hi))});
    finish(os, p);
    return rows;
}

SgdReport lab_sgd(const SgdSetup& s, std::uint64_t seed, const fs::path& out_dir) {
    const SgdReport r = sgd_bound_check(s, seed);
    make_dir(out_dir);
    const fs::path p = out_dir / "sgd_gap.csv";
    auto os = open_out(p);
    CsvWriter w(os, {"t", "mean_gap", "se", "bound"});
    for (std::size_t t = 0; t < r.mean_gap.size(); ++t)
        w.row({std::to_string(t), format_double(r.mean_gap[t]), format_double(r.se[t]), format_double(r.bound[t])});
    finish(os, p);
    return r;
}

// --- command line ------------------------------------------------------------

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"Nested APT with multilevel Monte Carlo: simulation, training, evaluation and lab runs"};
    app.require_subcommand(1);
    bool serial = false;
    app.add_flag("--serial", serial, "Use the serial reference kernels");

    // simulate
    auto* sim = app.add_subcommand("simulate", "Write simulated (theta, x) rows as CSV");
    std::string sim_task = "two_moon", sim_out;
    std::size_t sim_n = 0;
    std::uint64_t sim_seed = 0;
    sim->add_option("--task", sim_task, "two_moon, lotka_volterra or mg1")->capture_default_str();
    sim->add_option("-n,--n", sim_n, "Number of rows")->required();
    sim->add_option("--seed", sim_seed, "Seed")->required();
    sim->add_option("-o,--out", sim_out, "Output CSV")->required();

    // train
    auto* train = app.add_subcommand("train", "Run sequential training into a run directory");
    std::string train_cfg, train_out;
    std::uint64_t train_seed = 0;
    std::vector<std::string> train_set;
    train->add_option("-c,--config", train_cfg, "INI config file");
    train->add_option("--seed", train_seed, "Master seed")->required();
    train->add_option("-o,--out", train_out, "Run directory (overrides run.output)");
    train->add_option("--set", train_set, "Override as section.key=value");

    // evaluate
    auto* eval = app.add_subcommand("evaluate", "Compute posterior metrics for a checkpoint");
    std::string ev_ckpt, ev_task = "two_moon", ev_xo, ev_ts, ev_ref, ev_cfg, ev_out = "metrics.csv";
    std::uint64_t ev_seed = 0;
    std::vector<std::string> ev_set;
    eval->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required();
    eval->add_option("--task", ev_task, "Task")->capture_default_str();
    eval->add_option("--x-o", ev_xo, "Observation, comma separated");
    eval->add_option("--theta-star", ev_ts, "True parameters, comma separated");
    eval->add_option("--reference", ev_ref, "CSV of reference posterior draws");
    eval->add_option("-c,--config", ev_cfg, "INI config file for [metrics]");
    eval->add_option("--set", ev_set, "Override as section.key=value");
    eval->add_option("--seed", ev_seed, "Seed")->capture_default_str();
    eval->add_option("-o,--out", ev_out, "Output CSV")->capture_default_str();

    // lab
    auto* lab = app.add_subcommand("lab", "Toy-model experiments");
    lab->require_subcommand(1);
    std::string lab_out = "lab";
    std::uint64_t lab_seed = 0;
    lab->add_option("-o,--out", lab_out, "Output directory")->capture_default_str();
    lab->add_option("--seed", lab_seed, "Seed")->capture_default_str();

    auto* rate = lab->add_subcommand("rate", "Decay rate of a level statistic");
    std::string rate_kind = "delta_rho";
    std::size_t rate_lo = 0, rate_hi = 6, rate_reps = 10'000, rate_M0 = 8;
    rate->add_option("--kind", rate_kind, "delta_psi, delta_rho, rho_variance or psi_bias")->capture_default_str();
    rate->add_option("--first-level", rate_lo)->capture_default_str();
    rate->add_option("--last-level", rate_hi)->capture_default_str();
    rate->add_option("--reps", rate_reps)->capture_default_str();
    rate->add_option("--M0", rate_M0)->capture_default_str();

    auto* unb = lab->add_subcommand("unbiased", "Mean of randomized queries against the reference");
    std::string unb_kind = "ru";
    double unb_alpha = 1.4;
    std::size_t unb_lo = 0, unb_hi = 4, unb_M0 = 8, unb_reps = 100'000;
    unb->add_option("--estimator", unb_kind, "ru, rr, grr or tgrr")->capture_default_str();
    unb->add_option("--alpha", unb_alpha)->capture_default_str();
    unb->add_option("--m-lo", unb_lo)->capture_default_str();
    unb->add_option("--m-hi", unb_hi, "Truncation level (tgrr)")->capture_default_str();
    unb->add_option("--M0", unb_M0)->capture_default_str();
    unb->add_option("--reps", unb_reps)->capture_default_str();

    auto* ineff = lab->add_subcommand("inefficiency", "Variance bound times cost over an alpha grid");
    std::string in_kind = "ru";
    double in_r2 = 1.8, in_a0 = 1.01, in_a1 = 1.79, in_step = 0.001;
    std::size_t in_lo = 0, in_hi = 4;
    ineff->add_option("--estimator", in_kind)->capture_default_str();
    ineff->add_option("--r2", in_r2)->capture_default_str();
    ineff->add_option("--m-lo", in_lo)->capture_default_str();
    ineff->add_option("--m-hi", in_hi, "Truncation level (tgrr)")->capture_default_str();
    ineff->add_option("--alpha-min", in_a0)->capture_default_str();
    ineff->add_option("--alpha-max", in_a1)->capture_default_str();
    ineff->add_option("--alpha-step", in_step)->capture_default_str();

    auto* sgd = lab->add_subcommand("sgd", "SGD optimal gap against its bound");
    SgdSetup ss;
    sgd->add_option("--mu", ss.mu)->capture_default_str();
    sgd->add_option("--K", ss.K)->capture_default_str();
    sgd->add_option("--gamma", ss.gamma)->capture_default_str();
    sgd->add_option("--ub", ss.U_b, "Squared bias norm")->capture_default_str();
    sgd->add_option("--ueta", ss.U_eta, "Noise second moment")->capture_default_str();
    sgd->add_option("--T", ss.T)->capture_default_str();
    sgd->add_option("--seeds", ss.seeds)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    const Exec exec = serial ? Exec::serial : Exec::parallel;
    try {
        if (*sim) {
            cmd_simulate(task_from_string(sim_task), sim_n, sim_seed, sim_out, exec);
        } else if (*train) {
            RunConfig cfg = train_cfg.empty() ? RunConfig{} : load_config(train_cfg);
            for (const auto& s : train_set) apply_override(cfg, s);
            cfg.train.seed = train_seed;
            if (!train_out.empty()) cfg.output = train_out;
            if (serial) cfg.train.exec = Exec::serial;
            const fs::path dir = cmd_train(cfg, std::cout);
            std::cout << "run directory: " << dir.string() << "\n";
        } else if (*eval) {
            RunConfig cfg = ev_cfg.empty() ? RunConfig{} : load_config(ev_cfg);
            for (const auto& s : ev_set) apply_override(cfg, s);
            EvaluateOptions o;
            o.checkpoint = ev_ckpt;
            o.task = task_from_string(ev_task);
            o.x_o = parse_list(ev_xo);
            o.theta_star = parse_list(ev_ts);
            if (!ev_ref.empty()) o.reference = ev_ref;
            o.metrics = cfg.metrics;
            o.seed = ev_seed;
            o.exec = exec;
            const MetricReport r = cmd_evaluate(o, ev_out);
            write_metrics_csv(std::cout, r);
        } else if (*rate) {
            if (rate_hi < rate_lo) throw ConfigError("last level below first level");
            std::vector<std::size_t> levels;
            for (std::size_t l = rate_lo; l <= rate_hi; ++l) levels.push_back(l);
            const RateReport r = lab_rate(rate_kind_from_string(rate_kind), levels, rate_reps, rate_M0, lab_seed,
                                          lab_out, exec);
            write_rate_summary_csv(std::cout, r);
        } else if (*unb) {
            const EstimatorKind k = estimator_from_string(unb_kind);
            LevelDistribution d;
            switch (k) {
                case EstimatorKind::ru: d = LevelDistribution::ru(unb_alpha); break;
                case EstimatorKind::rr: d = LevelDistribution::rr(unb_alpha); break;
                case EstimatorKind::grr: d = LevelDistribution::grr(unb_alpha, unb_lo); break;
                case EstimatorKind::tgrr: d = LevelDistribution::tgrr(unb_alpha, unb_lo, unb_hi); break;
                default: throw ConfigError("unbiased: estimator must be ru, rr, grr or tgrr");
            }
            const UnbiasednessReport r = lab_unbiased(d, unb_M0, unb_reps, lab_seed, lab_out, exec);
            std::cout << "loss z " << format_double(r.loss_z) << ", grad z " << format_double(r.grad_z)
                      << (r.zero_variance ? " (zero variance)" : "") << "\n";
        } else if (*ineff) {
            if (!(in_step > 0.0) || in_a1 < in_a0) throw ConfigError("bad alpha grid");
            std::vector<double> alphas;
            for (std::size_t i = 0;; ++i) {
                const double a = in_a0 + static_cast<double>(i) * in_step;
                if (a > in_a1 + 1e-12) break;
                alphas.push_back(a);
            }
            const EstimatorKind k = estimator_from_string(in_kind);
            const std::size_t hi = k == EstimatorKind::tgrr ? in_hi : kNoTruncation;
            const std::size_t lo = k == EstimatorKind::ru || k == EstimatorKind::rr ? 0 : in_lo;
            const auto rows = lab_inefficiency(k, in_r2, lo, hi, alphas, lab_out);
            std::cout << "argmin alpha " << format_double(argmin_row(rows).alpha) << "\n";
        } else if (*sgd) {
            const SgdReport r = lab_sgd(ss, lab_seed, lab_out);
            std::cout << (r.bound_ok ? "bound holds" : "bound exceeded") << " (worst t = " << r.worst_t << ")\n";
        }
    } catch (...) {
        return exit_code_for_current_exception(std::cerr);
    }
    return 0;
}

}  // namespace napt
