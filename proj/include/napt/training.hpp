#pragma once

// Sequential neural posterior estimation: round-based simulation from the
// current proposal, minibatch optimization of the chosen loss estimator with
// early stopping, and proposal updates at the observation x_o.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "napt/density.hpp"
#include "napt/mlmc.hpp"
#include "napt/optim.hpp"
#include "napt/simulators.hpp"

namespace napt {

struct TrainConfig {
    Task task = Task::two_moon;
    std::size_t rounds = 10;
    std::size_t n_per_round = 500;
    std::size_t batch_size = 100;
    double learning_rate = 1e-4;
    double weight_decay = 1e-4;
    OptimizerKind optimizer = OptimizerKind::adam;
    std::size_t patience = 20;
    std::size_t max_epochs = 1000;
    double validation_fraction = 0.05;

    EstimatorKind estimator = EstimatorKind::tgrr;
    std::size_t nested_M = 100;  // inner size for the nested kind
    std::size_t atomic_M = 10;   // atoms per sample for the atomic kind
    MlmcConfig mlmc{8, 1.8, 1.8, AtomMode::include_outer, Coupling::nested};
    double alpha = 1.673;
    std::size_t m_lo = 2;
    std::size_t m_hi = 4;  // kNoTruncation for untruncated kinds

    MdnArchitecture arch;  // input_dim / theta_dim are taken from the task
    std::vector<double> x_o;  // empty: task default
    std::uint64_t seed = 0;
    Exec exec = Exec::parallel;

    // Throws ConfigError on invalid combinations.
    void validate() const;
    LevelDistribution level_distribution() const;
    // Inner size of the deterministic nested loss used for validation.
    std::size_t validation_M() const;
};

// Accumulated (theta_i, x_i, level_i) with the round of origin and split.
struct RoundDataset {
    ThetaBatch theta;
    ThetaBatch x;
    std::vector<std::size_t> level;
    std::vector<std::size_t> round;
    std::vector<unsigned char> is_validation;

    std::size_t size() const { return level.size(); }
    void add(std::span<const double> th, std::span<const double> xx, std::size_t lvl, std::size_t rnd, bool val);
    std::vector<std::size_t> indices(bool validation) const;
};

struct EpochRecord {
    std::size_t round = 0;
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    std::size_t simulations = 0;  // cumulative simulator calls
    std::size_t inner_draws = 0;  // cumulative proposal draws for inner atoms
    double wall_seconds = 0.0;
};

struct RoundSummary {
    std::size_t round = 0;
    std::size_t epochs = 0;
    std::size_t accepted = 0;  // new pairs kept
    std::size_t flagged = 0;   // simulator runs excluded
    std::size_t skipped_steps = 0;
    double best_val_loss = 0.0;
};

class Trainer {
public:
    explicit Trainer(TrainConfig cfg);

    const TrainConfig& config() const { return cfg_; }
    const TaskSpec& spec() const { return spec_; }
    const std::vector<double>& x_o() const { return x_o_; }
    const ConditionalDensity& density() const { return cd_; }
    const RoundDataset& dataset() const { return data_; }
    const std::vector<EpochRecord>& history() const { return history_; }
    std::size_t rounds_done() const { return round_; }
    std::size_t simulations() const { return sims_; }

    // Runs the next round (1-based rounds).
    RoundSummary run_round();
    // Runs all remaining rounds; calls on_round after each.
    void run(const std::function<void(const RoundSummary&, const Trainer&)>& on_round = {});

    // Per-round checkpoints and a training CSV are written here when set.
    void set_run_dir(std::filesystem::path dir);

private:
    void simulate_round(std::size_t k, RoundSummary& rs);
    double epoch_step(std::size_t k, std::size_t epoch, const InnerSampler& inner, std::span<const std::size_t> train,
                      std::size_t& draws);
    double validation_loss(std::size_t k, const InnerSampler& inner, std::span<const std::size_t> val);
    Query pair_query(std::size_t k, std::size_t i, const InnerSampler& inner, std::span<const std::size_t> batch,
                     std::size_t pos, Rng& rng) const;

    TrainConfig cfg_;
    const TaskSpec& spec_;
    std::vector<double> x_o_;
    ConditionalDensity cd_;
    std::optional<ConditionalDensity> proposal_;
    AdamState adam_;
    RoundDataset data_;
    std::vector<EpochRecord> history_;
    std::size_t round_ = 0;
    std::size_t sims_ = 0;
    std::size_t draws_ = 0;
    double wall_ = 0.0;
    std::optional<std::filesystem::path> run_dir_;
};

// Default observation for a task: the fixed Two-moon point, or one
// simulation at theta* drawn from a seed-derived stream.
std::vector<double> default_observation(const TaskSpec& spec, std::uint64_t seed);

}  // namespace napt
