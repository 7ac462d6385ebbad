#include "napt/density.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>

namespace napt {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

double logsumexp(std::span<const double> v) {
    double m = -std::numeric_limits<double>::infinity();
    for (double e : v) m = std::max(m, e);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double e : v) s += std::exp(e - m);
    return m + std::log(s);
}

std::string layer_name(const char* prefix, std::size_t l) { return prefix + std::to_string(l); }

}  // namespace

std::string to_string(Activation a) { return a == Activation::tanh ? "tanh" : "relu"; }

Activation activation_from_string(std::string_view s) {
    if (s == "tanh") return Activation::tanh;
    if (s == "relu") return Activation::relu;
    throw std::invalid_argument("unknown activation '" + std::string(s) + "'");
}

void MdnArchitecture::validate() const {
    if (input_dim == 0) throw std::invalid_argument("MdnArchitecture: input_dim must be >= 1");
    if (theta_dim == 0) throw std::invalid_argument("MdnArchitecture: theta_dim must be >= 1");
    if (theta_dim > kMaxThetaDim) throw std::invalid_argument("MdnArchitecture: theta_dim too large");
    if (n_components == 0) throw std::invalid_argument("MdnArchitecture: need at least one component");
    if (n_components > kMaxComponents) throw std::invalid_argument("MdnArchitecture: too many components");
    if (hidden_widths.empty()) throw std::invalid_argument("MdnArchitecture: need at least one hidden layer");
    for (std::size_t w : hidden_widths)
        if (w == 0) throw std::invalid_argument("MdnArchitecture: hidden widths must be >= 1");
}

std::size_t MdnArchitecture::head_dim() const { return HeadLayout{n_components, theta_dim}.size(); }

std::size_t MdnArchitecture::param_count() const {
    std::size_t n = 0, in = input_dim;
    for (std::size_t w : hidden_widths) {
        n += w * in + w;
        in = w;
    }
    return n + head_dim() * in + head_dim();
}

ParamLayout ParamLayout::for_architecture(const MdnArchitecture& arch) {
    arch.validate();
    ParamLayout layout;
    std::size_t in = arch.input_dim;
    auto add = [&](std::string name, std::size_t rows, std::size_t cols) {
        layout.slices.push_back({std::move(name), layout.total, rows, cols});
        layout.total += rows * cols;
    };
    for (std::size_t l = 0; l < arch.hidden_widths.size(); ++l) {
        const std::size_t w = arch.hidden_widths[l];
        add(layer_name("W", l), w, in);
        add(layer_name("b", l), w, 1);
        in = w;
    }
    add("W_out", arch.head_dim(), in);
    add("b_out", arch.head_dim(), 1);
    return layout;
}

const ParamSlice& ParamLayout::find(std::string_view name) const {
    for (const auto& s : slices)
        if (s.name == name) return s;
    throw std::invalid_argument("ParamLayout: no slice named '" + std::string(name) + "'");
}

std::span<double> ParamVector::slice(std::string_view name) {
    const auto& s = layout.find(name);
    return {values.data() + s.offset, s.size()};
}

std::span<const double> ParamVector::slice(std::string_view name) const {
    const auto& s = layout.find(name);
    return {values.data() + s.offset, s.size()};
}

bool ParamVector::all_finite() const {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

ParamVector init_params(const MdnArchitecture& arch, std::uint64_t seed) {
    ParamVector p;
    p.layout = ParamLayout::for_architecture(arch);
    p.values.assign(p.layout.total, 0.0);
    Rng rng = make_stream(seed, 0x1417);

    std::size_t in = arch.input_dim;
    for (std::size_t l = 0; l < arch.hidden_widths.size(); ++l) {
        const std::size_t w = arch.hidden_widths[l];
        const double lim = std::sqrt(6.0 / static_cast<double>(in + w));
        std::uniform_real_distribution<double> u(-lim, lim);
        for (double& v : p.slice(layer_name("W", l))) v = u(rng);
        in = w;
    }

    const HeadLayout head{arch.n_components, arch.theta_dim};
    const double lim = 0.1 * std::sqrt(6.0 / static_cast<double>(in + head.size()));
    std::uniform_real_distribution<double> u(-lim, lim);
    std::uniform_real_distribution<double> offset(-0.5, 0.5);
    auto w_out = p.slice("W_out");
    auto b_out = p.slice("b_out");
    for (std::size_t k = 0; k < head.K; ++k) {
        for (std::size_t i = 0; i < head.D; ++i) {
            const std::size_t row = head.mean(k) + i;
            for (std::size_t c = 0; c < in; ++c) w_out[row * in + c] = u(rng);
            b_out[row] = offset(rng);
        }
    }
    return p;
}

// ---------------------------------------------------------------------------

MixtureHead::MixtureHead(HeadLayout layout, std::span<const double> head)
    : layout_(layout),
      log_weights_(layout.K),
      means_(layout.K * layout.D),
      chol_(layout.K * layout.D * layout.D, 0.0),
      log_det_(layout.K, 0.0),
      clamped_(layout.K * layout.D, 0) {
    require_dim(head, layout.size(), "MixtureHead");
    const std::size_t K = layout.K, D = layout.D;
    for (std::size_t k = 0; k < K; ++k) log_weights_[k] = head[layout.logit(k)];
    const double lse = logsumexp(log_weights_);
    for (double& w : log_weights_) w -= lse;

    for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t i = 0; i < D; ++i) means_[k * D + i] = head[layout.mean(k) + i];
        double* U = chol_.data() + k * D * D;
        for (std::size_t i = 0; i < D; ++i) {
            double raw = head[layout.raw_scale(k) + i];
            if (raw < -kRawScaleClamp || raw > kRawScaleClamp) {
                clamped_[k * D + i] = 1;
                raw = std::clamp(raw, -kRawScaleClamp, kRawScaleClamp);
            }
            U[i * D + i] = std::exp(-raw);
            log_det_[k] -= raw;
        }
        std::size_t o = layout.off_diag(k);
        for (std::size_t i = 0; i < D; ++i)
            for (std::size_t j = i + 1; j < D; ++j) U[i * D + j] = head[o++];
    }
}

double MixtureHead::component_log_density(std::size_t k, std::span<const double> theta) const {
    const std::size_t D = layout_.D;
    const double* U = chol_.data() + k * D * D;
    const double* mu = means_.data() + k * D;
    double q = 0.0;
    for (std::size_t i = 0; i < D; ++i) {
        double z = 0.0;
        for (std::size_t j = i; j < D; ++j) z += U[i * D + j] * (theta[j] - mu[j]);
        q += z * z;
    }
    return -0.5 * static_cast<double>(D) * kLog2Pi + log_det_[k] - 0.5 * q;
}

double MixtureHead::log_density(std::span<const double> theta) const {
    require_dim(theta, layout_.D, "MixtureHead::log_density");
    std::array<double, kMaxComponents> terms;
    const std::size_t K = layout_.K;
    for (std::size_t k = 0; k < K; ++k) terms[k] = log_weights_[k] + component_log_density(k, theta);
    return logsumexp({terms.data(), K});
}

double MixtureHead::log_density_grad(std::span<const double> theta, std::span<double> head_grad) const {
    require_dim(theta, layout_.D, "MixtureHead::log_density_grad");
    require_dim(head_grad, layout_.size(), "MixtureHead::log_density_grad");
    const std::size_t K = layout_.K, D = layout_.D;
    std::array<double, kMaxComponents> terms;
    for (std::size_t k = 0; k < K; ++k) terms[k] = log_weights_[k] + component_log_density(k, theta);
    const double lse = logsumexp({terms.data(), K});

    std::array<double, kMaxThetaDim> d, z;
    for (std::size_t k = 0; k < K; ++k) {
        const double resp = std::exp(terms[k] - lse);
        head_grad[layout_.logit(k)] = resp - std::exp(log_weights_[k]);

        const double* U = chol_.data() + k * D * D;
        const double* mu = means_.data() + k * D;
        for (std::size_t i = 0; i < D; ++i) d[i] = theta[i] - mu[i];
        for (std::size_t i = 0; i < D; ++i) {
            double s = 0.0;
            for (std::size_t j = i; j < D; ++j) s += U[i * D + j] * d[j];
            z[i] = s;
        }
        // d/d mu = U^T z
        for (std::size_t j = 0; j < D; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i <= j; ++i) s += U[i * D + j] * z[i];
            head_grad[layout_.mean(k) + j] = resp * s;
        }
        for (std::size_t i = 0; i < D; ++i) {
            head_grad[layout_.raw_scale(k) + i] =
                clamped_[k * D + i] ? 0.0 : resp * (-1.0 + z[i] * d[i] * U[i * D + i]);
        }
        std::size_t o = layout_.off_diag(k);
        for (std::size_t i = 0; i < D; ++i)
            for (std::size_t j = i + 1; j < D; ++j) head_grad[o++] = -resp * z[i] * d[j];
    }
    return lse;
}

void MixtureHead::sample(Rng& rng, std::span<double> theta) const {
    require_dim(theta, layout_.D, "MixtureHead::sample");
    const std::size_t K = layout_.K, D = layout_.D;
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double u = unif(rng);
    std::size_t k = 0;
    double cum = 0.0;
    for (; k + 1 < K; ++k) {
        cum += std::exp(log_weights_[k]);
        if (u < cum) break;
    }
    std::normal_distribution<double> normal(0.0, 1.0);
    std::array<double, kMaxThetaDim> eps, delta;
    for (std::size_t i = 0; i < D; ++i) eps[i] = normal(rng);
    const double* U = chol_.data() + k * D * D;
    for (std::size_t ii = D; ii-- > 0;) {
        double s = eps[ii];
        for (std::size_t j = ii + 1; j < D; ++j) s -= U[ii * D + j] * delta[j];
        delta[ii] = s / U[ii * D + ii];
    }
    for (std::size_t i = 0; i < D; ++i) theta[i] = means_[k * D + i] + delta[i];
}

// ---------------------------------------------------------------------------

Standardizer Standardizer::identity(std::size_t dim) {
    return {std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0)};
}

void Standardizer::apply(std::span<const double> v, std::span<double> out) const {
    for (std::size_t i = 0; i < shift.size(); ++i) out[i] = (v[i] - shift[i]) / scale[i];
}

void Standardizer::invert(std::span<const double> u, std::span<double> out) const {
    for (std::size_t i = 0; i < shift.size(); ++i) out[i] = u[i] * scale[i] + shift[i];
}

double Standardizer::log_abs_det() const {
    double s = 0.0;
    for (double c : scale) s += std::log(c);
    return s;
}

ConditionalDensity::ConditionalDensity(MdnArchitecture arch, ParamVector params)
    : ConditionalDensity(arch, std::move(params), Standardizer::identity(arch.input_dim),
                         Standardizer::identity(arch.theta_dim)) {}

ConditionalDensity::ConditionalDensity(MdnArchitecture arch, ParamVector params, Standardizer input_norm,
                                       Standardizer theta_norm)
    : arch_(std::move(arch)), params_(std::move(params)) {
    arch_.validate();
    if (params_.layout.slices.empty()) params_.layout = ParamLayout::for_architecture(arch_);
    if (params_.values.size() != arch_.param_count() || params_.layout.total != arch_.param_count())
        throw std::invalid_argument("ConditionalDensity: parameter vector does not match architecture");
    set_input_norm(std::move(input_norm));
    set_theta_norm(std::move(theta_norm));
}

void ConditionalDensity::set_input_norm(Standardizer s) {
    if (s.dim() != arch_.input_dim || s.scale.size() != arch_.input_dim)
        throw std::invalid_argument("input standardizer dimension mismatch");
    for (double c : s.scale)
        if (!(c > 0.0)) throw std::invalid_argument("input standardizer scale must be positive");
    input_norm_ = std::move(s);
}

void ConditionalDensity::set_theta_norm(Standardizer s) {
    if (s.dim() != arch_.theta_dim || s.scale.size() != arch_.theta_dim)
        throw std::invalid_argument("theta standardizer dimension mismatch");
    for (double c : s.scale)
        if (!(c > 0.0)) throw std::invalid_argument("theta standardizer scale must be positive");
    theta_norm_ = std::move(s);
}

ForwardPass ConditionalDensity::forward(std::span<const double> x) const {
    require_dim(x, arch_.input_dim, "ConditionalDensity: x");
    ForwardPass fp;
    fp.input.resize(arch_.input_dim);
    input_norm_.apply(x, fp.input);

    const double* p = params_.values.data();
    const std::vector<double>* prev = &fp.input;
    fp.hidden.resize(arch_.hidden_widths.size());
    std::size_t offset = 0;
    for (std::size_t l = 0; l < arch_.hidden_widths.size(); ++l) {
        const std::size_t w = arch_.hidden_widths[l], in = prev->size();
        const double* W = p + offset;
        const double* b = W + w * in;
        offset += w * in + w;
        auto& h = fp.hidden[l];
        h.resize(w);
        for (std::size_t r = 0; r < w; ++r) {
            double s = b[r];
            const double* row = W + r * in;
            for (std::size_t c = 0; c < in; ++c) s += row[c] * (*prev)[c];
            h[r] = arch_.activation == Activation::tanh ? std::tanh(s) : std::max(0.0, s);
        }
        prev = &h;
    }
    const std::size_t H = arch_.head_dim(), in = prev->size();
    const double* W = p + offset;
    const double* b = W + H * in;
    fp.head.resize(H);
    for (std::size_t r = 0; r < H; ++r) {
        double s = b[r];
        const double* row = W + r * in;
        for (std::size_t c = 0; c < in; ++c) s += row[c] * (*prev)[c];
        fp.head[r] = s;
    }
    return fp;
}

void ConditionalDensity::pullback(const ForwardPass& fp, std::span<const double> head_grad,
                                  std::span<double> param_grad) const {
    require_dim(head_grad, arch_.head_dim(), "pullback: head gradient");
    require_dim(param_grad, params_.size(), "pullback: parameter gradient");
    const double* p = params_.values.data();
    const std::size_t L = arch_.hidden_widths.size();

    std::vector<std::size_t> offsets(L + 1);
    {
        std::size_t off = 0, in = arch_.input_dim;
        for (std::size_t l = 0; l < L; ++l) {
            offsets[l] = off;
            off += arch_.hidden_widths[l] * in + arch_.hidden_widths[l];
            in = arch_.hidden_widths[l];
        }
        offsets[L] = off;
    }

    // Output layer.
    const std::vector<double>& last = fp.hidden[L - 1];
    const std::size_t H = arch_.head_dim(), in_out = last.size();
    {
        double* gW = param_grad.data() + offsets[L];
        double* gb = gW + H * in_out;
        for (std::size_t r = 0; r < H; ++r) {
            const double g = head_grad[r];
            double* row = gW + r * in_out;
            for (std::size_t c = 0; c < in_out; ++c) row[c] = g * last[c];
            gb[r] = g;
        }
    }
    std::vector<double> delta(in_out, 0.0);
    {
        const double* W = p + offsets[L];
        for (std::size_t r = 0; r < H; ++r) {
            const double g = head_grad[r];
            if (g == 0.0) continue;
            const double* row = W + r * in_out;
            for (std::size_t c = 0; c < in_out; ++c) delta[c] += g * row[c];
        }
    }

    for (std::size_t l = L; l-- > 0;) {
        const std::vector<double>& h = fp.hidden[l];
        const std::vector<double>& a = l == 0 ? fp.input : fp.hidden[l - 1];
        const std::size_t w = h.size(), in = a.size();
        for (std::size_t r = 0; r < w; ++r) {
            if (arch_.activation == Activation::tanh)
                delta[r] *= 1.0 - h[r] * h[r];
            else if (h[r] <= 0.0)
                delta[r] = 0.0;
        }
        double* gW = param_grad.data() + offsets[l];
        double* gb = gW + w * in;
        for (std::size_t r = 0; r < w; ++r) {
            double* row = gW + r * in;
            for (std::size_t c = 0; c < in; ++c) row[c] = delta[r] * a[c];
            gb[r] = delta[r];
        }
        if (l == 0) break;
        std::vector<double> next(in, 0.0);
        const double* W = p + offsets[l];
        for (std::size_t r = 0; r < w; ++r) {
            if (delta[r] == 0.0) continue;
            const double* row = W + r * in;
            for (std::size_t c = 0; c < in; ++c) next[c] += delta[r] * row[c];
        }
        delta = std::move(next);
    }
}

MixtureHead ConditionalDensity::mixture(const ForwardPass& fp) const {
    return MixtureHead(HeadLayout{arch_.n_components, arch_.theta_dim}, fp.head);
}

double ConditionalDensity::log_density_at(const MixtureHead& mix, std::span<const double> theta) const {
    require_dim(theta, arch_.theta_dim, "ConditionalDensity: theta");
    std::array<double, kMaxThetaDim> u;
    theta_norm_.apply(theta, {u.data(), arch_.theta_dim});
    return mix.log_density({u.data(), arch_.theta_dim}) - theta_norm_.log_abs_det();
}

double ConditionalDensity::log_density_grad_at(const MixtureHead& mix, std::span<const double> theta,
                                               std::span<double> head_grad) const {
    require_dim(theta, arch_.theta_dim, "ConditionalDensity: theta");
    std::array<double, kMaxThetaDim> u;
    theta_norm_.apply(theta, {u.data(), arch_.theta_dim});
    return mix.log_density_grad({u.data(), arch_.theta_dim}, head_grad) - theta_norm_.log_abs_det();
}

void ConditionalDensity::sample_at(const MixtureHead& mix, Rng& rng, std::span<double> theta) const {
    require_dim(theta, arch_.theta_dim, "ConditionalDensity: theta");
    std::array<double, kMaxThetaDim> u;
    mix.sample(rng, {u.data(), arch_.theta_dim});
    theta_norm_.invert({u.data(), arch_.theta_dim}, theta);
}

double ConditionalDensity::log_density(std::span<const double> x, std::span<const double> theta) const {
    const ForwardPass fp = forward(x);
    return log_density_at(mixture(fp), theta);
}

std::vector<double> ConditionalDensity::grad_log_density(std::span<const double> x,
                                                         std::span<const double> theta) const {
    const ForwardPass fp = forward(x);
    const MixtureHead mix = mixture(fp);
    std::vector<double> hg(arch_.head_dim());
    log_density_grad_at(mix, theta, hg);
    std::vector<double> g(params_.size());
    pullback(fp, hg, g);
    return g;
}

void ConditionalDensity::sample(std::span<const double> x, Rng& rng, std::span<double> theta) const {
    const ForwardPass fp = forward(x);
    sample_at(mixture(fp), rng, theta);
}

}  // namespace napt
