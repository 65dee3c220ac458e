#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "core.hpp"

namespace ubiquity {

/// Shrinking exponents tau_1 <= ... <= tau_d, all >= 1.
class ShrinkProfile {
public:
    ShrinkProfile() = default;

    explicit ShrinkProfile(std::vector<double> exponents) : tau_(std::move(exponents))
    {
        require(!tau_.empty(), "shrink profile must have at least one exponent");
        for (std::size_t i = 0; i < tau_.size(); ++i) {
            require(std::isfinite(tau_[i]), "shrink exponents must be finite");
            require(tau_[i] >= 1.0, "shrink exponents must be >= 1");
            if (i > 0) require(tau_[i - 1] <= tau_[i], "shrink exponents must be sorted non-decreasing");
        }
    }

    static ShrinkProfile isotropic(int d, double tau) { return ShrinkProfile(std::vector<double>(d, tau)); }

    int dim() const { return static_cast<int>(tau_.size()); }
    double operator[](int i) const { return tau_[i]; }
    double front() const { return tau_.front(); }
    double back() const { return tau_.back(); }
    const std::vector<double>& exponents() const { return tau_; }

    friend bool operator==(const ShrinkProfile&, const ShrinkProfile&) = default;

private:
    std::vector<double> tau_;
};

struct SValue {
    double s;
    int argmin_k;  // 1-based index of the smallest minimizing k
};

/// s = min_k (alpha + sum_{j<=k} (tau_k - tau_j)) / tau_k.
inline SValue s_value(double alpha, const ShrinkProfile& profile)
{
    require(alpha >= 0.0 && std::isfinite(alpha), "alpha must be finite and >= 0");
    SValue best{std::numeric_limits<double>::infinity(), 0};
    for (int k = 0; k < profile.dim(); ++k) {
        const double tk = profile[k];
        // summed termwise so that equal exponents contribute exactly zero
        double excess = 0.0;
        for (int j = 0; j < k; ++j) excess += tk - profile[j];
        const double value = (alpha + excess) / tk;
        if (value < best.s) best = {value, k + 1};
    }
    return best;
}

/// f(v) = (alpha + sum_{i : tau_i < v} (v - tau_i)) / v on [1, tau_d].
inline double f_of_v(double alpha, const ShrinkProfile& profile, double v)
{
    require(v >= 1.0 && v <= profile.back(), "v must lie in [1, tau_d]");
    double excess = 0.0;
    for (double t : profile.exponents())
        if (t < v) excess += v - t;
    return (alpha + excess) / v;
}

/// Brute-force minimum of f over {1, 1+step, ..., tau_d} together with every tau_i.
inline double s_by_grid(double alpha, const ShrinkProfile& profile, double step)
{
    require(step > 0.0, "grid step must be positive");
    double best = std::numeric_limits<double>::infinity();
    const double hi = profile.back();
    const auto& tau = profile.exponents();
    const auto count = static_cast<long long>(std::floor((hi - 1.0) / step));
    // sweep the grid in increasing v, tracking how many tau_i lie strictly below v
    std::size_t below = 0;
    double below_sum = 0.0;
    for (long long i = 0; i <= count; ++i) {
        const double v = 1.0 + step * static_cast<double>(i);
        if (v > hi) break;
        while (below < tau.size() && tau[below] < v) below_sum += tau[below++];
        best = std::min(best, (alpha + static_cast<double>(below) * v - below_sum) / v);
    }
    best = std::min(best, f_of_v(alpha, profile, hi));
    for (double t : profile.exponents()) best = std::min(best, f_of_v(alpha, profile, t));
    return best;
}

/// One-dimensional Lebesgue case: the Jarnik-Besicovitch exponent 1/tau.
inline double jarnik_case(double tau)
{
    require(tau >= 1.0, "tau must be >= 1");
    return s_value(1.0, ShrinkProfile({tau})).s;
}

}  // namespace ubiquity
