#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace napt {

enum class OptimizerKind { sgd, adam };

std::string to_string(OptimizerKind k);
OptimizerKind optimizer_from_string(std::string_view s);

// phi <- phi - gamma * grad. Returns false (phi untouched) if grad has a
// non-finite entry.
bool sgd_step(std::span<double> phi, std::span<const double> grad, double gamma);

struct AdamHyper {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;  // decoupled
};

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::size_t t = 0;
    std::size_t skipped = 0;
};

// Adam with bias correction and decoupled weight decay. A non-finite gradient
// skips the step (state untouched apart from the skip counter) and returns false.
bool adam_step(std::span<double> phi, std::span<const double> grad, AdamState& state, const AdamHyper& hyper);

// True iff the best loss so far is at least `patience` epochs old.
bool early_stop(std::span<const double> val_losses, std::size_t patience);

}  // namespace napt
