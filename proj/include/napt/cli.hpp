#pragma once

// Subcommands of the napt tool. Each one can be called directly; run_cli
// parses the command line and maps error classes onto exit codes
// (0 ok, 2 config, 3 numerical, 4 I/O).

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "napt/config.hpp"
#include "napt/diagnostics.hpp"
#include "napt/lab.hpp"

namespace napt {

int run_cli(int argc, const char* const* argv);

// Exit code for the exception currently being handled.
int exit_code_for_current_exception(std::ostream& err);

// n rows of (theta, x) with one column per coordinate.
void cmd_simulate(Task task, std::size_t n, std::uint64_t seed, const std::filesystem::path& out,
                  Exec exec = Exec::parallel);

// Trains into cfg.output: config.ini, round_XX.ckpt, training.csv and
// rounds.csv. Returns the run directory.
std::filesystem::path cmd_train(const RunConfig& cfg, std::ostream& log);

struct EvaluateOptions {
    std::filesystem::path checkpoint;
    Task task = Task::two_moon;
    std::vector<double> x_o;         // empty: task default
    std::vector<double> theta_star;  // empty: task default, if any
    std::optional<std::filesystem::path> reference;  // CSV of reference draws; default rejection ABC
    MetricSettings metrics;
    std::uint64_t seed = 0;
    Exec exec = Exec::parallel;
};

// Metrics for q(theta | x_o) against reference draws. MMD and C2ST use
// min(|posterior|, |reference|) samples from each side.
MetricReport evaluate_metrics(const ConditionalDensity& cd, const TaskSpec& task, std::span<const double> x_o,
                              const ThetaBatch& reference, std::span<const double> theta_star,
                              const MetricSettings& m, std::uint64_t seed, Exec exec = Exec::parallel);

// Reads the checkpoint (never writes it) and writes a metric,value CSV.
MetricReport cmd_evaluate(const EvaluateOptions& opt, const std::filesystem::path& out);

void write_metrics_csv(std::ostream& os, const MetricReport& r);
void write_rate_csv(std::ostream& os, const RateReport& r);
void write_rate_summary_csv(std::ostream& os, const RateReport& r);
void write_inefficiency_csv(std::ostream& os, const std::vector<InefficiencyRow>& rows);

// Lab runs; each writes CSV (and SVG for rates) into out_dir.
RateReport lab_rate(RateKind kind, const std::vector<std::size_t>& levels, std::size_t reps, std::size_t M0,
                    std::uint64_t seed, const std::filesystem::path& out_dir, Exec exec = Exec::parallel);
UnbiasednessReport lab_unbiased(const LevelDistribution& dist, std::size_t M0, std::size_t reps, std::uint64_t seed,
                                const std::filesystem::path& out_dir, Exec exec = Exec::parallel);
std::vector<InefficiencyRow> lab_inefficiency(EstimatorKind kind, double r2, std::size_t m_lo, std::size_t m_hi,
                                              const std::vector<double>& alphas,
                                              const std::filesystem::path& out_dir);
SgdReport lab_sgd(const SgdSetup& s, std::uint64_t seed, const std::filesystem::path& out_dir);

// Theta rows of a CSV whose header names the task's parameters (extra
// columns are ignored).
ThetaBatch read_theta_csv(const std::filesystem::path& path, const TaskSpec& task);

}  // namespace napt
