#include "napt/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "napt/common.hpp"

namespace napt {

std::string to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

OptimizerKind optimizer_from_string(std::string_view s) {
    if (s == "sgd") return OptimizerKind::sgd;
    if (s == "adam") return OptimizerKind::adam;
    throw ConfigError("unknown optimizer '" + std::string(s) + "'");
}

namespace {
bool finite(std::span<const double> g) {
    return std::all_of(g.begin(), g.end(), [](double v) { return std::isfinite(v); });
}
}  // namespace

bool sgd_step(std::span<double> phi, std::span<const double> grad, double gamma) {
    require_dim(grad, phi.size(), "sgd_step");
    if (!finite(grad)) return false;
    for (std::size_t i = 0; i < phi.size(); ++i) phi[i] -= gamma * grad[i];
    return true;
}

bool adam_step(std::span<double> phi, std::span<const double> grad, AdamState& s, const AdamHyper& h) {
    require_dim(grad, phi.size(), "adam_step");
    if (!finite(grad)) {
        ++s.skipped;
        return false;
    }
    if (s.m.size() != phi.size()) {
        s.m.assign(phi.size(), 0.0);
        s.v.assign(phi.size(), 0.0);
        s.t = 0;
    }
    ++s.t;
    const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(s.t));
    const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(s.t));
    for (std::size_t i = 0; i < phi.size(); ++i) {
        s.m[i] = h.beta1 * s.m[i] + (1.0 - h.beta1) * grad[i];
        s.v[i] = h.beta2 * s.v[i] + (1.0 - h.beta2) * grad[i] * grad[i];
        const double mh = s.m[i] / c1, vh = s.v[i] / c2;
        phi[i] -= h.lr * (mh / (std::sqrt(vh) + h.eps) + h.weight_decay * phi[i]);
    }
    return true;
}

bool early_stop(std::span<const double> val_losses, std::size_t patience) {
    if (val_losses.empty()) throw std::invalid_argument("early_stop: no epochs recorded");
    const auto best = std::min_element(val_losses.begin(), val_losses.end());
    const auto age = static_cast<std::size_t>(val_losses.end() - best) - 1;
    return age >= patience;
}

}  // namespace napt
