#pragma once

// Run configuration stored as an INI file with [run], [train], [mlmc],
// [model] and [metrics] sections. Unknown sections or keys are rejected and
// serialization is canonical, so parse(to_ini(c)) reproduces c exactly.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "napt/training.hpp"

namespace napt {

struct MetricSettings {
    std::size_t posterior_samples = 10'000;
    double abc_epsilon = 0.01;
    std::size_t abc_budget = 10'000'000;
    std::size_t c2st_folds = 5;
    bool mmd = true;
    bool c2st = true;
};

struct RunConfig {
    std::string output = "runs/default";
    TrainConfig train;  // holds the task, estimator, MLMC settings and master seed
    MetricSettings metrics;
};

std::string to_ini(const RunConfig& c);
// Throws ConfigError on syntax errors, unknown keys or bad values.
RunConfig parse_ini(std::string_view text);
RunConfig load_config(const std::string& path);  // IoError if unreadable
void save_config(const std::string& path, const RunConfig& c);

// Applies "section.key=value".
void apply_override(RunConfig& c, std::string_view assignment);
void set_value(RunConfig& c, std::string_view section, std::string_view key, std::string_view value);

// All "section.key" names in canonical order.
std::vector<std::string> config_keys();

bool operator==(const RunConfig& a, const RunConfig& b);

}  // namespace napt
