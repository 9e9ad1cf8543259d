#pragma once

// Scenario physics: the effective field B_m seen by the qubit, its
// m-dependent eigenbasis, the flip-flop rates Gamma_m and the validity
// diagnostics of the Markov/secular approximations.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <fmt/format.h>

#include "mare/error.hpp"
#include "mare/grid.hpp"

namespace mare {

using cplx = std::complex<double>;
using Spinor = std::array<cplx, 2>;

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    double dot(const Vec3& o) const noexcept { return x * o.x + y * o.y + z * o.z; }
    double norm() const noexcept { return std::sqrt(dot(*this)); }
    Vec3 operator*(double k) const noexcept { return {x * k, y * k, z * k}; }
    Vec3 operator-() const noexcept { return {-x, -y, -z}; }
    friend bool operator==(const Vec3&, const Vec3&) = default;
};

enum class ScenarioKind { superconducting, quantum_dot };

inline std::string_view to_string(ScenarioKind kind) {
    return kind == ScenarioKind::superconducting ? "superconducting" : "quantum_dot";
}

// Physical constants of one scenario. Frequencies are angular (rad/s),
// beta is in 1/(rad/s) so that beta * omega_S is dimensionless.
struct ScenarioParams {
    ScenarioKind kind = ScenarioKind::superconducting;
    // superconducting qubit + TLS bath
    double omega_S = 0.0;
    double A = 0.0;
    double kappa = 0.0;
    double beta = 0.0;
    // quantum dot + nuclear bath
    double omega_B = 0.0;
    double A_c = 0.0;
    double A_nc = 0.0;
    double gamma = 0.0;
    double Omega = 0.0;
    double Delta = 0.0;
    // bath
    long N = 0;
    double s = 0.5;
    double gamma_deph = 0.0;

    static ScenarioParams superconducting(double omega_S, double A, double kappa, double beta, long N) {
        ScenarioParams p;
        p.kind = ScenarioKind::superconducting;
        p.omega_S = omega_S;
        p.A = A;
        p.kappa = kappa;
        p.beta = beta;
        p.N = N;
        p.s = 0.5;
        return p;
    }

    // GaAs reference values: 75As nuclei, drive at Hartmann-Hahn resonance.
    static ScenarioParams gaas_quantum_dot() {
        constexpr double two_pi = 2.0 * std::numbers::pi;
        ScenarioParams p;
        p.kind = ScenarioKind::quantum_dot;
        p.omega_S = two_pi * 4.2e9;
        p.omega_B = two_pi * 18.96e6;
        p.A_c = -two_pi * 0.13e6;
        p.A_nc = two_pi * 3e-3 * 1e6;
        p.gamma = p.omega_B / 5.0;
        p.Omega = p.omega_B;
        p.Delta = 0.0;
        p.N = 69000;
        p.s = 1.5;
        return p;
    }

    long n_effective() const { return effective_size(s, N); }

    void validate() const {
        auto require = [](bool ok, std::string_view what) {
            if (!ok) throw ContractViolation(fmt::format("ScenarioParams: {}", what));
        };
        require(N >= 1, "N must be >= 1");
        require(s > 0.0, "s must be positive");
        require(gamma_deph >= 0.0, "gamma_deph must be non-negative");
        if (kind == ScenarioKind::superconducting) {
            require(s == 0.5, "superconducting bath is spin-1/2");
            require(omega_S > 0.0, "omega_S must be positive");
            require(kappa >= 0.0, "kappa must be non-negative");
            require(beta >= 0.0, "beta must be non-negative");
            require(std::isfinite(A), "A must be finite");
        } else {
            require(omega_B >= 0.0, "omega_B must be non-negative");
            require(A_nc >= 0.0, "A_nc must be non-negative");
            require(gamma > 0.0, "gamma must be positive");
            require(Omega >= 0.0, "Omega must be non-negative");
            require(std::isfinite(A_c) && std::isfinite(Delta), "A_c and Delta must be finite");
        }
    }
};

// Effective field B_m (angular frequency).
inline Vec3 field(const ScenarioParams& p, int m) {
    if (p.kind == ScenarioKind::superconducting) return {0.0, 0.0, p.omega_S + p.A * m};
    return {p.Omega, 0.0, p.Delta + p.A_c * m};
}

// Local eigenbasis of B_m . S. |up_m> points along B_m:
//   |up_m>   = cos(chi) |up_z> + e^{i phi} sin(chi) |down_z>
//   |down_m> = -e^{-i phi} sin(chi) |up_z> + cos(chi) |down_z>
// with chi = theta/2, theta the polar angle of B_m and phi its azimuth.
struct EigenFrame {
    int m = 0;
    double xi = 0.0;  // |B_m| / 2
    Vec3 b_hat{0.0, 0.0, 1.0};
    double chi = 0.0;
    double phi = 0.0;

    Spinor up() const {
        return {cplx(std::cos(chi), 0.0), std::polar(std::sin(chi), phi)};
    }
    Spinor down() const {
        return {-std::polar(std::sin(chi), -phi), cplx(std::cos(chi), 0.0)};
    }
};

inline EigenFrame eigenbasis(const ScenarioParams& p, int m) {
    const Vec3 b = field(p, m);
    const double magnitude = b.norm();
    if (!(magnitude > 0.0)) {
        throw DegenerateField(m, fmt::format("eigenbasis: |B_m| = 0 at m={}", m));
    }
    EigenFrame f;
    f.m = m;
    f.xi = 0.5 * magnitude;
    f.b_hat = b * (1.0 / magnitude);
    f.chi = 0.5 * std::atan2(std::hypot(b.x, b.y), b.z);
    f.phi = (b.x == 0.0 && b.y == 0.0) ? 0.0 : std::atan2(b.y, b.x);
    return f;
}

// Lorentzian nuclear spectral density, peaked at omega_B with HWHM gamma.
inline double spectral_density(const ScenarioParams& p, double omega) {
    const double detuning = p.omega_B - omega;
    return 4.0 * p.A_nc * p.A_nc * p.gamma / (detuning * detuning + p.gamma * p.gamma);
}

inline cplx braket(const Spinor& bra, const Spinor& ket) {
    return std::conj(bra[0]) * ket[0] + std::conj(bra[1]) * ket[1];
}

// |<down_m| S_z |up_{m-1}>|^2 for the flip-flop that raises m by one.
inline double flip_matrix_element_sq(const EigenFrame& upper, const EigenFrame& lower) {
    const Spinor d = upper.down();
    const Spinor u = lower.up();
    const Spinor sz_u{0.5 * u[0], -0.5 * u[1]};
    return std::norm(braket(d, sz_u));
}

// Gamma_m in overflow-safe form: the quotient Gamma_m / V_m plus log V_m.
struct JumpRate {
    double scaled = 0.0;
    double log_volume = -std::numeric_limits<double>::infinity();
};

namespace detail {

inline double scaled_rate_unchecked(const ScenarioParams& p, const MagnetizationGrid& grid, int m) {
    if (p.kind == ScenarioKind::superconducting) {
        return std::max(0.0, p.kappa * (0.5 + static_cast<double>(m) / static_cast<double>(p.N)));
    }
    if (p.Omega == 0.0 || p.A_nc == 0.0) return 0.0;
    const EigenFrame upper = eigenbasis(p, m);
    const EigenFrame lower = eigenbasis(p, m - 1);
    const double kappa_mm1 = 2.0 * std::numbers::pi * spectral_density(p, upper.xi + lower.xi);
    // r_m uses the physical spin count N, as in the rate derivation.
    const double r = std::max(0.0, (2.0 / 3.0) * p.s * (p.s + 1.0) + static_cast<double>(m) / static_cast<double>(p.N));
    (void)grid;
    return kappa_mm1 * r * flip_matrix_element_sq(upper, lower);
}

}  // namespace detail

// Gamma_m couples (up, m-1) with (down, m). It is zero whenever m-1 or m
// leaves the grid (physical edge or cutoff).
inline JumpRate jump_rate(const ScenarioParams& p, const MagnetizationGrid& grid, int m) {
    JumpRate out;
    if (grid.contains(m)) out.log_volume = grid.log_volume(m);
    if (!grid.contains(m) || !grid.contains(static_cast<long>(m) - 1)) return out;
    out.scaled = detail::scaled_rate_unchecked(p, grid, m);
    return out;
}

// Gamma_m / V_m for m in [m_min, m_max + 1], plus xi_m for every bin.
class RateTable {
public:
    RateTable() = default;

    RateTable(const ScenarioParams& p, const MagnetizationGrid& grid)
        : m_min_(grid.m_min()), scaled_(grid.size() + 1, 0.0), xi_(grid.size(), 0.0) {
        for (int m = grid.m_min(); m <= grid.m_max() + 1; ++m) {
            scaled_[static_cast<std::size_t>(m - m_min_)] = jump_rate(p, grid, m).scaled;
        }
        for (int m = grid.m_min(); m <= grid.m_max(); ++m) {
            xi_[grid.index(m)] = 0.5 * field(p, m).norm();
        }
    }

    // Gamma_m / V_m; zero outside [m_min, m_max + 1].
    double scaled(int m) const noexcept {
        const long i = static_cast<long>(m) - m_min_;
        if (i < 0 || i >= static_cast<long>(scaled_.size())) return 0.0;
        return scaled_[static_cast<std::size_t>(i)];
    }
    double xi(int m) const noexcept { return xi_[static_cast<std::size_t>(m - m_min_)]; }

    std::span<const double> scaled_rates() const noexcept { return scaled_; }

    // Test hook for fault injection: multiplies Gamma_m by `factor`.
    void scale_rate(int m, double factor) {
        scaled_.at(static_cast<std::size_t>(m - m_min_)) *= factor;
    }

private:
    int m_min_ = 0;
    std::vector<double> scaled_;
    std::vector<double> xi_;
};

struct ValidityReport {
    bool applicable = false;
    double markov_number = 0.0;   // N A_nc^2 / gamma^2
    bool markov_ok = true;
    double secular_number = 0.0;  // A_nc^2 N / (4 gamma Omega)
    bool secular_ok = true;
    // Infinite-temperature average of the per-state flip rate,
    // sum_m Gamma_m / sum_m V_m.
    double gamma_avg = 0.0;
    // Plain mean of Gamma_m / V_m over the bins of the grid.
    double gamma_avg_per_bin = 0.0;

    bool passes() const noexcept { return markov_ok && secular_ok; }
};

inline ValidityReport validity_report(const ScenarioParams& p, const MagnetizationGrid& grid) {
    ValidityReport r;
    const RateTable rates(p, grid);
    std::vector<double> log_terms;
    log_terms.reserve(grid.size());
    double per_bin = 0.0;
    for (int m = grid.m_min(); m <= grid.m_max(); ++m) {
        const double g = rates.scaled(m);
        per_bin += g;
        if (g > 0.0) log_terms.push_back(std::log(g) + grid.log_volume(m));
    }
    const double log_norm = log_sum_exp(grid.log_volumes());
    r.gamma_avg = log_terms.empty() ? 0.0 : std::exp(log_sum_exp(log_terms) - log_norm);
    r.gamma_avg_per_bin = per_bin / static_cast<double>(grid.size());

    if (p.kind == ScenarioKind::superconducting) return r;

    r.applicable = true;
    const double n = static_cast<double>(p.N);
    r.markov_number = n * p.A_nc * p.A_nc / (p.gamma * p.gamma);
    r.markov_ok = r.markov_number < 1.0;
    r.secular_number = p.Omega > 0.0 ? p.A_nc * p.A_nc * n / (4.0 * p.gamma * p.Omega)
                                     : std::numeric_limits<double>::infinity();
    r.secular_ok = r.secular_number < 1.0;
    return r;
}

// Default |m| truncation: N/50 for the quantum dot, none for the TLS bath.
inline std::optional<int> default_cutoff(const ScenarioParams& p) {
    if (p.kind == ScenarioKind::quantum_dot) return static_cast<int>(p.N / 50);
    return std::nullopt;
}

// Parameters plus everything precomputed from them: grid, eigenframes and
// rate table. Immutable once built; share it by const reference.
class Scenario {
public:
    explicit Scenario(ScenarioParams params) : Scenario(params, default_cutoff(params)) {}

    Scenario(ScenarioParams params, std::optional<int> cutoff)
        : Scenario(params, std::make_shared<const MagnetizationGrid>(params.n_effective(), cutoff)) {}

    Scenario(ScenarioParams params, std::shared_ptr<const MagnetizationGrid> grid)
        : params_(params), grid_(std::move(grid)) {
        params_.validate();
        if (params_.kind == ScenarioKind::superconducting) {
            for (int m : {grid_->m_min(), grid_->m_max()}) {
                if (!(params_.omega_S + params_.A * m > 0.0)) {
                    throw ContractViolation(fmt::format(
                        "Scenario: omega_S + A m must stay positive on the grid (fails at m={})", m));
                }
            }
        }
        frames_.resize(grid_->size());
        degenerate_.assign(grid_->size(), 0);
        for (int m = grid_->m_min(); m <= grid_->m_max(); ++m) {
            const auto i = grid_->index(m);
            if (field(params_, m).norm() > 0.0) {
                frames_[i] = eigenbasis(params_, m);
            } else {
                frames_[i].m = m;
                degenerate_[i] = 1;
            }
        }
        rates_ = RateTable(params_, *grid_);
    }

    const ScenarioParams& params() const noexcept { return params_; }
    const MagnetizationGrid& grid() const noexcept { return *grid_; }
    const std::shared_ptr<const MagnetizationGrid>& grid_ptr() const noexcept { return grid_; }
    const RateTable& rates() const noexcept { return rates_; }

    const EigenFrame& frame(int m) const {
        const auto i = grid_->index(m);
        if (degenerate_[i]) throw DegenerateField(m, fmt::format("Scenario: |B_m| = 0 at m={}", m));
        return frames_[i];
    }

    ValidityReport validity() const { return validity_report(params_, *grid_); }

private:
    ScenarioParams params_;
    std::shared_ptr<const MagnetizationGrid> grid_;
    std::vector<EigenFrame> frames_;
    std::vector<char> degenerate_;
    RateTable rates_;
};

}  // namespace mare
