#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "napt/cli.hpp"
#include "napt/config.hpp"

using namespace napt;
namespace fs = std::filesystem;

namespace {

int run(std::vector<std::string> args) {
    args.insert(args.begin(), "napt");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::vector<std::string> lines(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    for (std::string l; std::getline(is, l);) {
        if (!l.empty() && l.back() == '\r') l.pop_back();  // CSV rows end in CRLF
        if (!l.empty()) out.push_back(l);
    }
    return out;
}

std::size_t columns(const std::string& line) { return static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1; }

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("config round trip and validation") {
    RunConfig c;
    c.output = "runs/x";
    c.train.task = Task::mg1;
    c.train.estimator = EstimatorKind::grr;
    c.train.alpha = 1.209;
    c.train.m_hi = kNoTruncation;
    c.train.x_o = {0.5, 1.0, 2.0, 3.0, 4.5};
    c.train.arch.hidden_widths = {32, 16};
    c.metrics.c2st = false;
    c.train.seed = 99;
    const RunConfig back = parse_ini(to_ini(c));
    CHECK(back == c);
    CHECK(to_ini(back) == to_ini(c));
    CHECK(back.train.x_o == c.train.x_o);
    CHECK(back.train.m_hi == kNoTruncation);

    CHECK_THROWS_AS(parse_ini("[train]\nlearning_rat = 0.1\n"), ConfigError);
    CHECK_THROWS_AS(parse_ini("[trains]\n"), ConfigError);
    CHECK_THROWS_AS(parse_ini("[train]\nrounds = ten\n"), ConfigError);

    RunConfig o;
    apply_override(o, "train.rounds=3");
    apply_override(o, "mlmc.M0=16");
    CHECK(o.train.rounds == 3);
    CHECK(o.train.mlmc.M0 == 16);
    CHECK_THROWS_AS(apply_override(o, "train.unknown=1"), ConfigError);
    CHECK_THROWS_AS(apply_override(o, "rounds=3"), ConfigError);
    CHECK(config_keys().size() > 20);
}

TEST_CASE("exit codes") {
    TempDir d("napt_cli_exit");
    CHECK(run({}) == 2);
    CHECK(run({"simulate", "--task", "gauss", "-n", "3", "--seed", "1", "-o", (d.path / "a.csv").string()}) == 2);
    CHECK(run({"train", "-o", (d.path / "r").string()}) == 2);  // --seed is mandatory
    CHECK(run({"train", "--seed", "1", "-c", (d.path / "missing.ini").string()}) == 4);
    CHECK(run({"evaluate", "--checkpoint", (d.path / "missing.ckpt").string()}) == 4);
    CHECK(run({"simulate", "--task", "mg1", "-n", "2", "--seed", "1", "-o", "/proc/forbidden/x.csv"}) == 4);
    CHECK(run({"lab", "-o", d.path.string(), "unbiased", "--alpha", "0.9"}) == 2);
    CHECK(run({"lab", "-o", d.path.string(), "sgd", "--gamma", "2"}) == 2);
}

TEST_CASE("simulate") {
    TempDir d("napt_cli_sim");
    const fs::path a = d.path / "a.csv", b = d.path / "b.csv", e = d.path / "e.csv", lv = d.path / "lv.csv";
    REQUIRE(run({"simulate", "--task", "two_moon", "-n", "0", "--seed", "1", "-o", e.string()}) == 0);
    CHECK(lines(slurp(e)) == std::vector<std::string>{"theta1,theta2,x1,x2"});

    REQUIRE(run({"simulate", "--task", "mg1", "-n", "50", "--seed", "4", "-o", a.string()}) == 0);
    REQUIRE(run({"--serial", "simulate", "--task", "mg1", "-n", "50", "--seed", "4", "-o", b.string()}) == 0);
    CHECK(slurp(a) == slurp(b));
    CHECK(lines(slurp(a)).size() == 51);

    REQUIRE(run({"simulate", "--task", "lotka_volterra", "-n", "5", "--seed", "2", "-o", lv.string()}) == 0);
    const auto l = lines(slurp(lv));
    REQUIRE(l.size() == 6);
    for (const auto& row : l) CHECK(columns(row) == 13);
}

TEST_CASE("train and evaluate") {
    TempDir d("napt_cli_train");
    const fs::path run_dir = d.path / "run";
    const std::vector<std::string> small = {"--set", "train.rounds=1", "--set", "train.n_per_round=60", "--set",
                                            "train.max_epochs=2", "--set", "model.hidden=8", "--set",
                                            "model.components=2"};
    std::vector<std::string> args = {"train", "--seed", "5", "-o", run_dir.string()};
    args.insert(args.end(), small.begin(), small.end());
    REQUIRE(run(args) == 0);
    CHECK(fs::exists(run_dir / "config.ini"));
    CHECK(fs::exists(run_dir / "round_01.ckpt"));
    CHECK_FALSE(fs::exists(run_dir / "round_02.ckpt"));
    CHECK(fs::exists(run_dir / "training.csv"));
    CHECK(fs::exists(run_dir / "rounds.csv"));
    const RunConfig saved = load_config((run_dir / "config.ini").string());
    CHECK(saved.train.rounds == 1);
    CHECK(saved.train.seed == 5);

    const fs::path ref = d.path / "ref.csv";
    REQUIRE(run({"simulate", "--task", "two_moon", "-n", "300", "--seed", "6", "-o", ref.string()}) == 0);
    const std::string ckpt = (run_dir / "round_01.ckpt").string();
    const std::string before = slurp(ckpt);
    const std::vector<std::string> metric_opts = {"--reference", ref.string(), "--set", "metrics.posterior_samples=300",
                                                  "--set", "metrics.c2st_folds=3"};
    auto metric_names = [](const fs::path& p) {
        std::vector<std::string> names;
        for (const auto& l : lines(slurp(p))) {
            const std::string n = l.substr(0, l.find(','));
            if (n == "mmd" || n == "c2st" || n == "lmd" || n == "nlog") names.push_back(n);
        }
        return names;
    };

    const fs::path m3 = d.path / "m3.csv", m4 = d.path / "m4.csv";
    args = {"evaluate", "--checkpoint", ckpt, "--task", "two_moon", "-o", m3.string()};
    args.insert(args.end(), metric_opts.begin(), metric_opts.end());
    REQUIRE(run(args) == 0);
    CHECK(metric_names(m3) == std::vector<std::string>{"mmd", "c2st", "lmd"});

    args = {"evaluate", "--checkpoint", ckpt, "--task", "two_moon", "--theta-star", "0.1,-0.2", "-o", m4.string()};
    args.insert(args.end(), metric_opts.begin(), metric_opts.end());
    REQUIRE(run(args) == 0);
    CHECK(metric_names(m4) == std::vector<std::string>{"mmd", "c2st", "lmd", "nlog"});
    CHECK(slurp(ckpt) == before);  // checkpoint untouched
}

TEST_CASE("lab subcommands") {
    TempDir d("napt_cli_lab");
    const std::string out = d.path.string();
    REQUIRE(run({"lab", "-o", out, "inefficiency", "--estimator", "ru", "--r2", "1.8"}) == 0);
    const auto argmin = lines(slurp(d.path / "inefficiency_ru_argmin.csv"));
    REQUIRE(argmin.size() == 2);
    CHECK(argmin[1].find("1.4") != std::string::npos);
    CHECK(lines(slurp(d.path / "inefficiency_ru.csv")).size() > 700);

    REQUIRE(run({"lab", "-o", out, "--seed", "3", "rate", "--kind", "rho_variance", "--first-level", "0",
                 "--last-level", "3", "--reps", "10000", "--M0", "1"}) == 0);
    CHECK(lines(slurp(d.path / "rate_rho_variance.csv")).size() == 5);
    CHECK(fs::exists(d.path / "rate_rho_variance_fit.csv"));
    CHECK(slurp(d.path / "rate_rho_variance.svg").find("<svg") != std::string::npos);

    REQUIRE(run({"lab", "-o", out, "sgd", "--T", "50", "--seeds", "4"}) == 0);
    CHECK(lines(slurp(d.path / "sgd_gap.csv")).size() == 52);

    REQUIRE(run({"lab", "-o", out, "unbiased", "--estimator", "ru", "--reps", "2000"}) == 0);
    CHECK(fs::exists(d.path / "unbiased_ru.csv"));
}
