#pragma once

// Conditional density estimator q(theta | x): a mixture density network whose
// mixture weights, component means and precision Cholesky factors are the
// outputs of a small fully connected network evaluated at x.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "napt/common.hpp"
#include "napt/rng.hpp"

namespace napt {

enum class Activation { tanh, relu };

std::string to_string(Activation a);
Activation activation_from_string(std::string_view s);

struct MdnArchitecture {
    std::size_t input_dim = 0;
    std::size_t theta_dim = 0;
    std::vector<std::size_t> hidden_widths{64, 64};
    std::size_t n_components = 8;
    Activation activation = Activation::tanh;

    // Throws std::invalid_argument for an unusable architecture.
    void validate() const;

    std::size_t head_dim() const;
    std::size_t param_count() const;

    bool operator==(const MdnArchitecture&) const = default;
};

// Bounds on what the fixed-size scratch buffers in the mixture code handle.
inline constexpr std::size_t kMaxComponents = 256;
inline constexpr std::size_t kMaxThetaDim = 16;

// Location of one weight matrix or bias inside the flat parameter vector.
struct ParamSlice {
    std::string name;
    std::size_t offset = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t size() const { return rows * cols; }
};

struct ParamLayout {
    std::vector<ParamSlice> slices;
    std::size_t total = 0;

    static ParamLayout for_architecture(const MdnArchitecture& arch);
    const ParamSlice& find(std::string_view name) const;
};

struct ParamVector {
    std::vector<double> values;
    ParamLayout layout;

    std::size_t size() const { return values.size(); }
    std::span<double> slice(std::string_view name);
    std::span<const double> slice(std::string_view name) const;
    bool all_finite() const;
};

// Deterministic for a fixed seed. Mixture logits start at zero (uniform
// weights), log-scales at zero, and component means get small random offsets.
ParamVector init_params(const MdnArchitecture& arch, std::uint64_t seed);

// Offsets of the mixture quantities inside the network output ("head").
struct HeadLayout {
    std::size_t K = 0;
    std::size_t D = 0;

    std::size_t logit(std::size_t k) const { return k; }
    std::size_t mean(std::size_t k) const { return K + k * D; }
    std::size_t raw_scale(std::size_t k) const { return K + K * D + k * D; }
    std::size_t off_diag(std::size_t k) const { return K + 2 * K * D + k * n_off(); }
    std::size_t n_off() const { return D * (D - 1) / 2; }
    std::size_t size() const { return K * (1 + 2 * D + n_off()); }
};

inline constexpr double kRawScaleClamp = 7.0;

// Gaussian mixture in standardized theta coordinates. Component k has mean
// mu_k and precision U_k^T U_k with U_k upper triangular, diag(U_k) =
// exp(-clamp(raw_k)) so raw_k is a log-scale.
class MixtureHead {
public:
    MixtureHead(HeadLayout layout, std::span<const double> head);

    std::size_t n_components() const { return layout_.K; }
    std::size_t dim() const { return layout_.D; }
    const HeadLayout& layout() const { return layout_; }

    double log_density(std::span<const double> theta) const;
    // Returns log q and writes d log q / d head into head_grad (overwrites).
    double log_density_grad(std::span<const double> theta, std::span<double> head_grad) const;
    void sample(Rng& rng, std::span<double> theta) const;

    std::span<const double> log_weights() const { return log_weights_; }
    std::span<const double> mean(std::size_t k) const { return {means_.data() + k * layout_.D, layout_.D}; }

private:
    double component_log_density(std::size_t k, std::span<const double> theta) const;

    HeadLayout layout_;
    std::vector<double> log_weights_;
    std::vector<double> means_;
    std::vector<double> chol_;        // K upper triangular D x D matrices, row-major
    std::vector<double> log_det_;     // sum_i log U_ii per component
    std::vector<unsigned char> clamped_;  // raw scale hit the clamp (zero gradient)
};

// Per-coordinate affine standardization u = (v - shift) / scale.
struct Standardizer {
    std::vector<double> shift;
    std::vector<double> scale;

    static Standardizer identity(std::size_t dim);
    std::size_t dim() const { return shift.size(); }
    void apply(std::span<const double> v, std::span<double> out) const;
    void invert(std::span<const double> u, std::span<double> out) const;
    double log_abs_det() const;  // sum log scale

    bool operator==(const Standardizer&) const = default;
};

// Activations of one network evaluation, kept for the backward pass.
struct ForwardPass {
    std::vector<double> input;                // standardized x
    std::vector<std::vector<double>> hidden;  // post-activation per hidden layer
    std::vector<double> head;
};

class ConditionalDensity {
public:
    ConditionalDensity(MdnArchitecture arch, ParamVector params);
    ConditionalDensity(MdnArchitecture arch, ParamVector params, Standardizer input_norm,
                       Standardizer theta_norm);

    const MdnArchitecture& arch() const { return arch_; }
    const ParamVector& params() const { return params_; }
    ParamVector& params() { return params_; }
    const Standardizer& input_norm() const { return input_norm_; }
    const Standardizer& theta_norm() const { return theta_norm_; }
    void set_input_norm(Standardizer s);
    void set_theta_norm(Standardizer s);

    double log_density(std::span<const double> x, std::span<const double> theta) const;
    std::vector<double> grad_log_density(std::span<const double> x, std::span<const double> theta) const;
    void sample(std::span<const double> x, Rng& rng, std::span<double> theta) const;

    ForwardPass forward(std::span<const double> x) const;
    // Backpropagates a gradient w.r.t. the head into the parameter gradient
    // (overwrites param_grad). Linear in head_grad.
    void pullback(const ForwardPass& fp, std::span<const double> head_grad, std::span<double> param_grad) const;

    // Mixture at x plus helpers that work in original theta coordinates.
    MixtureHead mixture(const ForwardPass& fp) const;
    double log_density_at(const MixtureHead& mix, std::span<const double> theta) const;
    double log_density_grad_at(const MixtureHead& mix, std::span<const double> theta,
                               std::span<double> head_grad) const;
    void sample_at(const MixtureHead& mix, Rng& rng, std::span<double> theta) const;

private:
    MdnArchitecture arch_;
    ParamVector params_;
    Standardizer input_norm_;
    Standardizer theta_norm_;
};

// Text checkpoint: architecture, standardizers and parameters as hex floats,
// so a reload reproduces log_density bit for bit.
void write_checkpoint(std::ostream& os, const ConditionalDensity& cd);
ConditionalDensity read_checkpoint(std::istream& is);
void save_checkpoint(const std::string& path, const ConditionalDensity& cd);
ConditionalDensity load_checkpoint(const std::string& path);

}  // namespace napt
