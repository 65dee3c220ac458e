#pragma once

#include <algorithm>
#include <array>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>

namespace ubiquity {

/// Largest ambient dimension supported by the geometric types.
inline constexpr int kMaxDim = 8;

/// Raised on violated preconditions (bad profile ordering, dimension mismatch, ...).
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when an operation would exceed its configured cell or node budget.
class BudgetExceeded : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require(bool ok, const std::string& what)
{
    if (!ok) throw InvalidArgument(what);
}

/// Fixed-capacity vector for per-coordinate data; value semantics, no allocation.
template<typename T>
class SmallVec {
public:
    SmallVec() = default;

    explicit SmallVec(int n, T fill = T{}) : size_(n)
    {
        require(n >= 0 && n <= kMaxDim, "dimension must be in [0, " + std::to_string(kMaxDim) + "]");
        std::fill(data_.begin(), data_.begin() + n, fill);
    }

    SmallVec(std::initializer_list<T> values) : SmallVec(static_cast<int>(values.size()))
    {
        std::copy(values.begin(), values.end(), data_.begin());
    }

    template<typename U>
    static SmallVec from(std::span<const U> values)
    {
        SmallVec v(static_cast<int>(values.size()));
        for (int i = 0; i < v.size(); ++i) v[i] = static_cast<T>(values[i]);
        return v;
    }

    int size() const { return size_; }
    T& operator[](int i) { return data_[i]; }
    const T& operator[](int i) const { return data_[i]; }
    T* begin() { return data_.data(); }
    T* end() { return data_.data() + size_; }
    const T* begin() const { return data_.data(); }
    const T* end() const { return data_.data() + size_; }
    std::span<const T> span() const { return {data_.data(), static_cast<std::size_t>(size_)}; }

    friend bool operator==(const SmallVec& a, const SmallVec& b)
    {
        return a.size_ == b.size_ && std::equal(a.begin(), a.end(), b.begin());
    }

private:
    int size_ = 0;
    std::array<T, kMaxDim> data_{};
};

/// Neumaier-compensated accumulator.
class CompensatedSum {
public:
    void add(double x)
    {
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x)) comp_ += (sum_ - t) + x;
        else comp_ += (x - t) + sum_;
        sum_ = t;
    }
    double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

inline std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt)
{
    return splitmix64(seed ^ splitmix64(salt + 0x632be59bd9b4e019ULL));
}

/// Seeded generator with portable draws (the std distributions are not
/// specified bit-for-bit across standard libraries).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform in (0, 1].
    double uniform_open0() { return (static_cast<double>(engine_() >> 11) + 1.0) * 0x1.0p-53; }

    double exponential() { return -std::log(uniform_open0()); }

    double normal()
    {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u = uniform_open0();
        const double v = uniform();
        const double rad = std::sqrt(-2.0 * std::log(u));
        const double ang = 2.0 * M_PI * v;
        spare_ = rad * std::sin(ang);
        has_spare_ = true;
        return rad * std::cos(ang);
    }

    /// Index drawn from unnormalized nonnegative weights.
    int categorical(std::span<const double> weights)
    {
        double total = 0.0;
        for (double w : weights) total += w;
        double u = uniform() * total;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            if (u < weights[i]) return static_cast<int>(i);
            u -= weights[i];
        }
        for (std::size_t i = weights.size(); i-- > 0;)
            if (weights[i] > 0.0) return static_cast<int>(i);
        return 0;
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

inline unsigned default_threads()
{
    const unsigned n = std::thread::hardware_concurrency();
    return n == 0 ? 1 : n;
}

inline constexpr double kLog2Inf = std::numeric_limits<double>::infinity();

}  // namespace ubiquity
