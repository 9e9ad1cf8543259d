#pragma once

// Magnetization axis and volume factors V_m (number of bath microstates with
// collective magnetization m). Volumes are kept in log space; neighbouring
// ratios use the exact rational form.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "mare/error.hpp"

namespace mare {

// Number of spin-1/2 constituents that reproduce the magnetization spectrum
// of `n` spin-`s` nuclei, N' = (4/3) n s (s+1), rounded to the nearest even
// integer so that m stays integer-valued.
inline long effective_size(double s, long n) {
    if (n <= 0) {
        throw ContractViolation(fmt::format("effective_size: spin count must be positive, got {}", n));
    }
    const double twice_s = 2.0 * s;
    const long k = std::lround(twice_s);
    if (!(s > 0.0) || std::abs(twice_s - static_cast<double>(k)) > 1e-12) {
        throw ContractViolation(fmt::format("effective_size: s must be a positive half-integer, got {}", s));
    }
    // (4/3) n s (s+1) with s = k/2 equals n k (k+2) / 3; nearest even integer
    // is 2 * round(n k (k+2) / 6), ties rounded up.
    const long numerator = n * k * (k + 2);
    const long half = (numerator + 3) / 6;
    const long rounded = 2 * half;
    if (numerator % 6 != 0) {
        spdlog::warn("effective_size: N' = {}/3 for s={}, n={} is not an even integer; rounded to {}",
                     numerator, s, n, rounded);
    }
    return rounded;
}

class MagnetizationGrid {
public:
    // Full grid m in [-N'/2, N'/2], optionally truncated to |m| <= cutoff.
    explicit MagnetizationGrid(long n_effective, std::optional<int> cutoff = std::nullopt)
        : n_effective_(n_effective) {
        if (n_effective <= 0 || n_effective % 2 != 0) {
            throw ContractViolation(
                fmt::format("MagnetizationGrid: effective size must be positive and even, got {}", n_effective));
        }
        const long half = n_effective / 2;
        long bound = half;
        if (cutoff) {
            if (*cutoff < 0) {
                throw ContractViolation(fmt::format("MagnetizationGrid: negative cutoff {}", *cutoff));
            }
            if (*cutoff < half) {
                bound = *cutoff;
                cutoff_ = cutoff;
            }
        }
        m_max_ = static_cast<int>(bound);
        log_volumes_.resize(static_cast<std::size_t>(2 * bound + 1));
        const double log_total = std::lgamma(static_cast<double>(n_effective) + 1.0);
        for (int m = -m_max_; m <= m_max_; ++m) {
            log_volumes_[index(m)] = log_total - std::lgamma(static_cast<double>(half + m) + 1.0) -
                                     std::lgamma(static_cast<double>(half - m) + 1.0);
        }
        if (!cutoff_) {
            // Fully polarized edges hold exactly one microstate.
            log_volumes_.front() = 0.0;
            log_volumes_.back() = 0.0;
        }
    }

    long n_effective() const noexcept { return n_effective_; }
    int m_min() const noexcept { return -m_max_; }
    int m_max() const noexcept { return m_max_; }
    std::optional<int> cutoff() const noexcept { return cutoff_; }
    std::size_t size() const noexcept { return log_volumes_.size(); }

    bool contains(long m) const noexcept { return m >= m_min() && m <= m_max(); }
    std::size_t index(int m) const noexcept { return static_cast<std::size_t>(m + m_max_); }
    int m_at(std::size_t i) const noexcept { return static_cast<int>(i) - m_max_; }

    double log_volume(int m) const {
        if (!contains(m)) {
            throw ContractViolation(
                fmt::format("log_volume: m={} outside [{}, {}]", m, m_min(), m_max()));
        }
        return log_volumes_[index(m)];
    }

    // V_{m+1} / V_m = (N'/2 - m) / (N'/2 + m + 1).
    double volume_ratio(int m) const {
        if (!contains(m) || !contains(static_cast<long>(m) + 1)) {
            throw ContractViolation(
                fmt::format("volume_ratio: pair ({}, {}) outside [{}, {}]", m, m + 1, m_min(), m_max()));
        }
        return ratio_unchecked(m);
    }

    double ratio_unchecked(int m) const noexcept {
        const double half = 0.5 * static_cast<double>(n_effective_);
        return (half - m) / (half + m + 1.0);
    }

    std::span<const double> log_volumes() const noexcept { return log_volumes_; }

    friend bool operator==(const MagnetizationGrid& a, const MagnetizationGrid& b) noexcept {
        return a.n_effective_ == b.n_effective_ && a.m_max_ == b.m_max_;
    }

private:
    long n_effective_;
    int m_max_ = 0;
    std::optional<int> cutoff_;
    std::vector<double> log_volumes_;
};

inline double log_volume(const MagnetizationGrid& grid, int m) { return grid.log_volume(m); }
inline double volume_ratio(const MagnetizationGrid& grid, int m) { return grid.volume_ratio(m); }

// log(sum_i exp(x_i)), stable for large arguments.
inline double log_sum_exp(std::span<const double> values) {
    if (values.empty()) return -INFINITY;
    double peak = -INFINITY;
    for (double v : values) peak = std::max(peak, v);
    if (!std::isfinite(peak)) return peak;
    double acc = 0.0;
    for (double v : values) acc += std::exp(v - peak);
    return peak + std::log(acc);
}

}  // namespace mare
