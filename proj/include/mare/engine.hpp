#pragma once

// Joint qubit/magnetization state and its exact time evolution.
//
// The dissipator only couples (up, m) with (down, m+1), so the population
// sector splits into independent 2x2 blocks labelled by the conserved
// M = m + 1/2. Each block is exponentiated in closed form; coherences decay
// and precess independently.

#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <memory>
#include <span>
#include <tuple>
#include <utility>
#include <vector>

#include <fmt/format.h>

#include "mare/error.hpp"
#include "mare/grid.hpp"
#include "mare/scenario.hpp"

namespace mare {

// Populations are interleaved as [p_down(m0), p_up(m0), p_down(m1), p_up(m1), ...]
// so that block i = (p_up(m_i), p_down(m_{i+1})) is the contiguous pair
// pop[2i+1], pop[2i+2].
class JointState {
public:
    JointState() = default;

    explicit JointState(std::shared_ptr<const MagnetizationGrid> grid)
        : grid_(std::move(grid)), pop_(2 * grid_->size(), 0.0), q_(grid_->size(), cplx{}) {}

    const MagnetizationGrid& grid() const noexcept { return *grid_; }
    const std::shared_ptr<const MagnetizationGrid>& grid_ptr() const noexcept { return grid_; }
    std::size_t size() const noexcept { return q_.size(); }

    double p_up(int m) const { return pop_[2 * grid_->index(m) + 1]; }
    double p_down(int m) const { return pop_[2 * grid_->index(m)]; }
    cplx q(int m) const { return q_[grid_->index(m)]; }

    void set(int m, double up, double down, cplx coherence = {}) {
        const auto i = grid_->index(m);
        pop_[2 * i] = down;
        pop_[2 * i + 1] = up;
        q_[i] = coherence;
    }

    std::span<double> populations() noexcept { return pop_; }
    std::span<const double> populations() const noexcept { return pop_; }
    std::span<cplx> coherences() noexcept { return q_; }
    std::span<const cplx> coherences() const noexcept { return q_; }

    double trace() const noexcept {
        // Neumaier summation: the trace is checked at the 1e-12 level.
        double sum = 0.0;
        double c = 0.0;
        for (double v : pop_) {
            const double t = sum + v;
            c += std::abs(sum) >= std::abs(v) ? (sum - t) + v : (v - t) + sum;
            sum = t;
        }
        return sum + c;
    }

private:
    std::shared_ptr<const MagnetizationGrid> grid_;
    std::vector<double> pop_;
    std::vector<cplx> q_;
};

inline void require_same_grid(const MagnetizationGrid& a, const MagnetizationGrid& b, const char* where) {
    if (!(a == b)) {
        throw GridMismatch(fmt::format("{}: grids differ (N'={}, |m|<={} vs N'={}, |m|<={})", where,
                                       a.n_effective(), a.m_max(), b.n_effective(), b.m_max()));
    }
}

// Evolution time in seconds, or the steady-state limit.
class Duration {
public:
    static Duration finite(double seconds) {
        if (!(seconds >= 0.0) || !std::isfinite(seconds)) {
            throw ContractViolation(fmt::format("Duration: time must be finite and >= 0, got {}", seconds));
        }
        return Duration(seconds, false);
    }
    static Duration infinite() { return Duration(std::numeric_limits<double>::infinity(), true); }

    bool is_infinite() const noexcept { return infinite_; }
    double seconds() const noexcept { return seconds_; }

private:
    Duration(double s, bool inf) : seconds_(s), infinite_(inf) {}
    double seconds_;
    bool infinite_;
};

// Pure-dephasing rate gamma_m / V_m for a rate scale gamma_deph.
inline double dephasing_rate(double gamma_deph, long n_effective, int m) {
    if (gamma_deph == 0.0) return 0.0;
    const double n = static_cast<double>(n_effective);
    return gamma_deph * (n * n - 4.0 * m * static_cast<double>(m)) / (4.0 * n * (n - 1.0));
}

// 1 - exp(-rate * t), with the infinite-time limit taken symbolically.
inline double relaxed_fraction(double rate, const Duration& t) {
    if (t.is_infinite()) return rate > 0.0 ? 1.0 : 0.0;
    return -std::expm1(-rate * t.seconds());
}

class Propagator {
public:
    Propagator() = default;

    Propagator(const Scenario& sc, const RateTable& rates, Duration t)
        : grid_(sc.grid_ptr()), duration_(t) {
        const auto& g = *grid_;
        const std::size_t n = g.size();
        up_to_down_.assign(n > 0 ? n - 1 : 0, 0.0);
        down_to_up_.assign(n > 0 ? n - 1 : 0, 0.0);
        for (std::size_t i = 0; i + 1 < n; ++i) {
            const int m = g.m_at(i);
            const double ratio = g.ratio_unchecked(m);  // V_{m+1} / V_m
            const double scaled = rates.scaled(m + 1);  // Gamma_{m+1} / V_{m+1}
            const double total = scaled * (1.0 + ratio);
            const double e = relaxed_fraction(total, t);
            up_to_down_[i] = e * ratio / (1.0 + ratio);
            down_to_up_[i] = e / (1.0 + ratio);
        }
        coherence_.resize(n);
        const double gamma_deph = sc.params().gamma_deph;
        for (std::size_t i = 0; i < n; ++i) {
            const int m = g.m_at(i);
            const double out_down = rates.scaled(m);
            const double out_up = rates.scaled(m + 1) * g.ratio_unchecked(m);
            const double decay = 0.5 * (out_down + out_up) + dephasing_rate(gamma_deph, g.n_effective(), m);
            if (t.is_infinite()) {
                coherence_[i] = decay > 0.0 ? cplx{} : cplx{1.0, 0.0};
            } else {
                const double ts = t.seconds();
                coherence_[i] = std::exp(cplx(-decay * ts, -2.0 * rates.xi(m) * ts));
            }
        }
    }

    const MagnetizationGrid& grid() const noexcept { return *grid_; }
    const Duration& duration() const noexcept { return duration_; }
    std::size_t block_count() const noexcept { return up_to_down_.size(); }

    // Column-stochastic 2x2 matrix acting on (p_up(m_i), p_down(m_{i+1})).
    std::array<std::array<double, 2>, 2> block(std::size_t i) const {
        const double a = up_to_down_.at(i);
        const double b = down_to_up_.at(i);
        return {{{1.0 - a, b}, {a, 1.0 - b}}};
    }

    double up_to_down(std::size_t i) const noexcept { return up_to_down_[i]; }
    double down_to_up(std::size_t i) const noexcept { return down_to_up_[i]; }
    std::span<const cplx> coherence_multipliers() const noexcept { return coherence_; }

private:
    std::shared_ptr<const MagnetizationGrid> grid_;
    Duration duration_ = Duration::finite(0.0);
    std::vector<double> up_to_down_;
    std::vector<double> down_to_up_;
    std::vector<cplx> coherence_;
};

inline Propagator build_propagator(const Scenario& sc, Duration t) { return Propagator(sc, sc.rates(), t); }

// Same, but with an explicit rate table (used to inject faults in tests).
inline Propagator build_propagator(const Scenario& sc, const RateTable& rates, Duration t) {
    return Propagator(sc, rates, t);
}

inline void evolve_inplace(JointState& state, const Propagator& prop) {
    require_same_grid(state.grid(), prop.grid(), "evolve");
    auto pop = state.populations();
    const std::size_t blocks = prop.block_count();
    for (std::size_t i = 0; i < blocks; ++i) {
        const double up = pop[2 * i + 1];
        const double down = pop[2 * i + 2];
        const double flux = prop.up_to_down(i) * up - prop.down_to_up(i) * down;
        pop[2 * i + 1] = up - flux;
        pop[2 * i + 2] = down + flux;
    }
    auto q = state.coherences();
    const auto mult = prop.coherence_multipliers();
    for (std::size_t i = 0; i < q.size(); ++i) q[i] *= mult[i];
}

inline JointState evolve(const JointState& state, const Propagator& prop) {
    JointState out = state;
    evolve_inplace(out, prop);
    return out;
}

namespace detail {

using Mat2 = std::array<std::array<cplx, 2>, 2>;

inline Mat2 outer(const Spinor& a, const Spinor& b) {
    Mat2 r{};
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) r[i][j] = a[i] * std::conj(b[j]);
    return r;
}

inline Mat2 mul(const Mat2& a, const Mat2& b) {
    Mat2 r{};
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) r[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
    return r;
}

inline cplx sandwich(const Spinor& bra, const Mat2& rho, const Spinor& ket) {
    cplx acc{};
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) acc += std::conj(bra[i]) * rho[i][j] * ket[j];
    return acc;
}

// Eigenvectors of B . sigma from the unnormalized form (B_z + |B|, B_x + i B_y).
inline std::pair<Spinor, Spinor> oracle_eigenvectors(const Vec3& b) {
    const double mag = b.norm();
    Spinor up;
    if (mag + b.z > 1e-300 * (mag + 1.0)) {
        up = {cplx(b.z + mag, 0.0), cplx(b.x, b.y)};
        const double norm = std::sqrt(std::norm(up[0]) + std::norm(up[1]));
        up[0] /= norm;
        up[1] /= norm;
    } else {
        up = {cplx{}, cplx{1.0, 0.0}};
    }
    const Spinor down{-std::conj(up[1]), std::conj(up[0])};
    return {up, down};
}

}  // namespace detail

// Brute-force reference: integrates the full MARE for the 2x2 blocks rho_m
// in the fixed z-basis with classical RK4. Deliberately shares nothing with
// the block propagator except the rate function.
inline JointState ode_oracle(const Scenario& sc, const JointState& state, double t, int n_steps) {
    using detail::Mat2;
    const auto& g = sc.grid();
    require_same_grid(state.grid(), g, "ode_oracle");
    if (g.size() > 200) {
        throw ContractViolation(fmt::format("ode_oracle: grid has {} bins, limit is 200", g.size()));
    }
    if (n_steps < 1000) throw ContractViolation(fmt::format("ode_oracle: n_steps={} < 1000", n_steps));
    if (!(t >= 0.0)) throw ContractViolation("ode_oracle: negative time");

    const std::size_t n = g.size();
    const auto& p = sc.params();
    std::vector<Mat2> ham(n);
    std::vector<Spinor> up(n);
    std::vector<Spinor> down(n);
    std::vector<double> deph(n);
    for (std::size_t i = 0; i < n; ++i) {
        const int m = g.m_at(i);
        const Vec3 b = field(p, m);
        ham[i] = {{{cplx(0.5 * b.z, 0.0), cplx(0.5 * b.x, -0.5 * b.y)},
                   {cplx(0.5 * b.x, 0.5 * b.y), cplx(-0.5 * b.z, 0.0)}}};
        std::tie(up[i], down[i]) = detail::oracle_eigenvectors(b);
        deph[i] = dephasing_rate(p.gamma_deph, g.n_effective(), m);
    }
    // gain_down[i]: rate (up, m_i - 1) -> (down, m_i) = Gamma_m / V_{m-1}
    // gain_up[i]:   rate (down, m_i + 1) -> (up, m_i) = Gamma_{m+1} / V_{m+1}
    // loss_down[i] = Gamma_m / V_m, loss_up[i] = Gamma_{m+1} / V_m
    std::vector<double> gain_down(n, 0.0), gain_up(n, 0.0), loss_down(n, 0.0), loss_up(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const int m = g.m_at(i);
        const double lv = g.log_volume(m);
        const JumpRate here = jump_rate(p, g, m);
        const JumpRate above = jump_rate(p, g, m + 1);
        loss_down[i] = here.scaled;
        if (i > 0) gain_down[i] = here.scaled * std::exp(lv - g.log_volume(m - 1));
        gain_up[i] = above.scaled;
        if (i + 1 < n) loss_up[i] = above.scaled * std::exp(above.log_volume - lv);
    }

    std::vector<Mat2> rho(n);
    for (std::size_t i = 0; i < n; ++i) {
        const int m = g.m_at(i);
        const Mat2 pu = detail::outer(up[i], up[i]);
        const Mat2 pd = detail::outer(down[i], down[i]);
        const Mat2 ud = detail::outer(up[i], down[i]);
        for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b)
                rho[i][a][b] = state.p_up(m) * pu[a][b] + state.p_down(m) * pd[a][b] + state.q(m) * ud[a][b] +
                               std::conj(state.q(m)) * std::conj(ud[b][a]);
    }

    auto rhs = [&](const std::vector<Mat2>& r, std::vector<Mat2>& out) {
        for (std::size_t i = 0; i < n; ++i) {
            Mat2 d{};
            const Mat2 hr = detail::mul(ham[i], r[i]);
            const Mat2 rh = detail::mul(r[i], ham[i]);
            for (int a = 0; a < 2; ++a)
                for (int b = 0; b < 2; ++b) d[a][b] = cplx(0.0, -1.0) * (hr[a][b] - rh[a][b]);
            // Loss: -(1/2){L^dag L, rho} with projectors onto the local eigenstates.
            const Mat2 pu = detail::outer(up[i], up[i]);
            const Mat2 pd = detail::outer(down[i], down[i]);
            Mat2 proj{};
            for (int a = 0; a < 2; ++a)
                for (int b = 0; b < 2; ++b) proj[a][b] = loss_up[i] * pu[a][b] + loss_down[i] * pd[a][b];
            const Mat2 pr = detail::mul(proj, r[i]);
            const Mat2 rp = detail::mul(r[i], proj);
            for (int a = 0; a < 2; ++a)
                for (int b = 0; b < 2; ++b) d[a][b] -= 0.5 * (pr[a][b] + rp[a][b]);
            // Gain from neighbouring blocks.
            if (i > 0) {
                const double w = gain_down[i] * detail::sandwich(up[i - 1], r[i - 1], up[i - 1]).real();
                for (int a = 0; a < 2; ++a)
                    for (int b = 0; b < 2; ++b) d[a][b] += w * pd[a][b];
            }
            if (i + 1 < n) {
                const double w = gain_up[i] * detail::sandwich(down[i + 1], r[i + 1], down[i + 1]).real();
                for (int a = 0; a < 2; ++a)
                    for (int b = 0; b < 2; ++b) d[a][b] += w * pu[a][b];
            }
            // Pure dephasing in the local basis: (g/2)(s rho s - rho), s = b.sigma.
            if (deph[i] > 0.0) {
                Mat2 s{};
                for (int a = 0; a < 2; ++a)
                    for (int b = 0; b < 2; ++b) s[a][b] = pu[a][b] - pd[a][b];
                const Mat2 srs = detail::mul(detail::mul(s, r[i]), s);
                for (int a = 0; a < 2; ++a)
                    for (int b = 0; b < 2; ++b) d[a][b] += 0.5 * deph[i] * (srs[a][b] - r[i][a][b]);
            }
            out[i] = d;
        }
    };

    const double h = t / n_steps;
    std::vector<Mat2> k1(n), k2(n), k3(n), k4(n), tmp(n);
    auto axpy = [&](const std::vector<Mat2>& base, const std::vector<Mat2>& k, double f, std::vector<Mat2>& out) {
        for (std::size_t i = 0; i < n; ++i)
            for (int a = 0; a < 2; ++a)
                for (int b = 0; b < 2; ++b) out[i][a][b] = base[i][a][b] + f * k[i][a][b];
    };
    for (int step = 0; step < n_steps && t > 0.0; ++step) {
        rhs(rho, k1);
        axpy(rho, k1, 0.5 * h, tmp);
        rhs(tmp, k2);
        axpy(rho, k2, 0.5 * h, tmp);
        rhs(tmp, k3);
        axpy(rho, k3, h, tmp);
        rhs(tmp, k4);
        for (std::size_t i = 0; i < n; ++i)
            for (int a = 0; a < 2; ++a)
                for (int b = 0; b < 2; ++b)
                    rho[i][a][b] += (h / 6.0) * (k1[i][a][b] + 2.0 * k2[i][a][b] + 2.0 * k3[i][a][b] + k4[i][a][b]);
    }

    JointState out(state.grid_ptr());
    for (std::size_t i = 0; i < n; ++i) {
        const int m = g.m_at(i);
        out.set(m, detail::sandwich(up[i], rho[i], up[i]).real(), detail::sandwich(down[i], rho[i], down[i]).real(),
                detail::sandwich(up[i], rho[i], down[i]));
    }
    return out;
}

}  // namespace mare
