#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace cgm {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Points = std::vector<Vector>;

// Error taxonomy. The CLI maps these onto exit codes (input/config -> 2, numeric -> 3).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Caller supplied data that violates an operation's precondition.
class InputError : public Error {
public:
    using Error::Error;
};

/// A configuration document or value is invalid.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A linear-algebra step failed (factorization, PSD check).
class NumericError : public Error {
public:
    using Error::Error;
};

/// A file could not be parsed; carries the 1-based row and column when known.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t row, std::size_t col)
        : Error(what), row_(row), col_(col) {}
    [[nodiscard]] std::size_t row() const noexcept { return row_; }
    [[nodiscard]] std::size_t col() const noexcept { return col_; }

private:
    std::size_t row_;
    std::size_t col_;
};

/// File contents are well-formed but do not match the expected schema.
class SchemaError : public Error {
public:
    using Error::Error;
};

/// SplitMix64 finalizer; used to derive independent per-stream seeds from a base seed and a counter.
[[nodiscard]] constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t counter) noexcept {
    std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (counter + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Neumaier-compensated running sum.
class CompensatedSum {
public:
    void add(double v) noexcept {
        const double t = sum_ + v;
        if (std::abs(sum_) >= std::abs(v)) {
            comp_ += (sum_ - t) + v;
        } else {
            comp_ += (v - t) + sum_;
        }
        sum_ = t;
    }
    [[nodiscard]] double value() const noexcept { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

}  // namespace cgm
