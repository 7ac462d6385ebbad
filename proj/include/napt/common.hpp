#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace napt {

// Error classes map onto the CLI exit codes (2, 3, 4).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Selects between the OpenMP kernels and their serial reference versions.
// Both produce bit-identical results: work is split into fixed chunks with
// their own rng streams and reduced in chunk order.
enum class Exec { serial, parallel };

// Row-major set of parameter vectors, all of the same dimension.
class ThetaBatch {
public:
    ThetaBatch() = default;
    explicit ThetaBatch(std::size_t dim, std::size_t count = 0)
        : dim_(dim), values_(dim * count) {}

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return dim_ == 0 ? 0 : values_.size() / dim_; }
    bool empty() const { return values_.empty(); }

    std::span<double> row(std::size_t i) { return {values_.data() + i * dim_, dim_}; }
    std::span<const double> row(std::size_t i) const { return {values_.data() + i * dim_, dim_}; }

    void push_back(std::span<const double> theta) {
        if (theta.size() != dim_) throw std::invalid_argument("ThetaBatch: dimension mismatch");
        values_.insert(values_.end(), theta.begin(), theta.end());
    }
    void resize(std::size_t count) { values_.resize(dim_ * count); }
    void clear() { values_.clear(); }

    std::vector<double>& values() { return values_; }
    const std::vector<double>& values() const { return values_; }

private:
    std::size_t dim_ = 0;
    std::vector<double> values_;
};

inline void require_dim(std::span<const double> v, std::size_t dim, const char* what) {
    if (v.size() != dim)
        throw std::invalid_argument(std::string(what) + ": expected dimension " + std::to_string(dim) +
                                    ", got " + std::to_string(v.size()));
}

}  // namespace napt
