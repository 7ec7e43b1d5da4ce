#pragma once

#include "cgm/common.hpp"

#include <cstdint>
#include <memory>
#include <string>

namespace cgm {

/// Positive-definite kernel on dense real vectors.
///
/// Kernels are immutable after construction and every member is safe to call
/// concurrently. `dim()` is the point dimension the kernel was built for, or 0
/// when any (matching) dimension is accepted.
class Kernel {
public:
    explicit Kernel(Eigen::Index dim = 0) : dim_(dim) {}
    virtual ~Kernel() = default;

    Kernel(const Kernel&) = default;
    Kernel& operator=(const Kernel&) = delete;

    /// k(a, b). Throws InputError on dimension mismatch.
    [[nodiscard]] double eval(const Vector& a, const Vector& b) const {
        check_dims(a, b);
        return value(a, b);
    }

    /// Gradient of k(a, b) with respect to the second argument.
    [[nodiscard]] Vector grad_second(const Vector& a, const Vector& b) const {
        check_dims(a, b);
        return gradient_second(a, b);
    }

    /// Gradient of b -> k(b, b). Zero for translation-invariant kernels.
    [[nodiscard]] virtual Vector grad_diagonal(const Vector& b) const = 0;

    [[nodiscard]] virtual std::string name() const = 0;
    [[nodiscard]] Eigen::Index dim() const noexcept { return dim_; }

protected:
    [[nodiscard]] virtual double value(const Vector& a, const Vector& b) const = 0;
    [[nodiscard]] virtual Vector gradient_second(const Vector& a, const Vector& b) const = 0;

    void check_dims(const Vector& a, const Vector& b) const;

private:
    Eigen::Index dim_;
};

using KernelPtr = std::shared_ptr<const Kernel>;

/// exp(-|a-b|^2 / (2 * bandwidth_sq)).
class GaussianKernel final : public Kernel {
public:
    explicit GaussianKernel(double bandwidth_sq = 1.0, Eigen::Index dim = 0);

    [[nodiscard]] double bandwidth_sq() const noexcept { return bandwidth_sq_; }
    [[nodiscard]] Vector grad_diagonal(const Vector& b) const override;
    [[nodiscard]] std::string name() const override { return "gaussian"; }

protected:
    [[nodiscard]] double value(const Vector& a, const Vector& b) const override;
    [[nodiscard]] Vector gradient_second(const Vector& a, const Vector& b) const override;

private:
    double bandwidth_sq_;
};

/// <a, b>. Its feature map is the identity, which makes operator-level
/// computations (conditional embeddings) literal finite matrices.
class LinearKernel final : public Kernel {
public:
    explicit LinearKernel(Eigen::Index dim = 0) : Kernel(dim) {}

    [[nodiscard]] Vector grad_diagonal(const Vector& b) const override { return 2.0 * b; }
    [[nodiscard]] std::string name() const override { return "linear"; }

protected:
    [[nodiscard]] double value(const Vector& a, const Vector& b) const override { return a.dot(b); }
    [[nodiscard]] Vector gradient_second(const Vector& a, const Vector& /*b*/) const override { return a; }
};

/// Product kernel on X x Y. Points are the concatenation [x; y] with
/// `x_dim` leading coordinates; kx and ky must not be dimension-agnostic
/// about the split, so the split is fixed at construction.
class TensorKernel final : public Kernel {
public:
    TensorKernel(KernelPtr kx, KernelPtr ky, Eigen::Index x_dim, Eigen::Index y_dim);

    [[nodiscard]] double eval_pair(const Vector& x1, const Vector& y1, const Vector& x2, const Vector& y2) const;

    [[nodiscard]] const Kernel& kx() const noexcept { return *kx_; }
    [[nodiscard]] const Kernel& ky() const noexcept { return *ky_; }
    [[nodiscard]] Eigen::Index x_dim() const noexcept { return x_dim_; }
    [[nodiscard]] Vector grad_diagonal(const Vector& b) const override;
    [[nodiscard]] std::string name() const override { return "tensor"; }

    [[nodiscard]] static Vector join(const Vector& x, const Vector& y);

protected:
    [[nodiscard]] double value(const Vector& a, const Vector& b) const override;
    [[nodiscard]] Vector gradient_second(const Vector& a, const Vector& b) const override;

private:
    KernelPtr kx_;
    KernelPtr ky_;
    Eigen::Index x_dim_;
};

/// Deterministic feature map Y -> code space used by DeepKernel.
class Encoder {
public:
    virtual ~Encoder() = default;
    [[nodiscard]] virtual Vector encode(const Vector& y) const = 0;
    /// d encode / d y, shape (code_dim x input_dim).
    [[nodiscard]] virtual Matrix jacobian(const Vector& y) const = 0;
    [[nodiscard]] virtual Eigen::Index input_dim() const = 0;
    [[nodiscard]] virtual Eigen::Index code_dim() const = 0;
};

using EncoderPtr = std::shared_ptr<const Encoder>;

/// y -> tanh(W y + c) with W, c fixed from a seed. Stand-in for a trained encoder.
class TanhProjectionEncoder final : public Encoder {
public:
    TanhProjectionEncoder(Eigen::Index input_dim, Eigen::Index code_dim, std::uint64_t seed);
    TanhProjectionEncoder(Matrix weights, Vector offset);

    [[nodiscard]] Vector encode(const Vector& y) const override;
    [[nodiscard]] Matrix jacobian(const Vector& y) const override;
    [[nodiscard]] Eigen::Index input_dim() const override { return weights_.cols(); }
    [[nodiscard]] Eigen::Index code_dim() const override { return weights_.rows(); }

private:
    Matrix weights_;
    Vector offset_;
};

/// ((1 - eps0) * kappa1(A(y1), A(y2)) + eps0) * kappa2(y1, y2).
///
/// The eps0 floor keeps the product characteristic whatever the encoder does.
class DeepKernel final : public Kernel {
public:
    DeepKernel(EncoderPtr encoder, GaussianKernel kappa1, GaussianKernel kappa2, double epsilon0 = 0.1);

    [[nodiscard]] double epsilon0() const noexcept { return epsilon0_; }
    [[nodiscard]] const GaussianKernel& kappa1() const noexcept { return kappa1_; }
    [[nodiscard]] const GaussianKernel& kappa2() const noexcept { return kappa2_; }
    [[nodiscard]] Vector grad_diagonal(const Vector& b) const override;
    [[nodiscard]] std::string name() const override { return "deep"; }

protected:
    [[nodiscard]] double value(const Vector& a, const Vector& b) const override;
    [[nodiscard]] Vector gradient_second(const Vector& a, const Vector& b) const override;

private:
    EncoderPtr encoder_;
    GaussianKernel kappa1_;
    GaussianKernel kappa2_;
    double epsilon0_;
};

/// Gram matrix G(i, j) = k(A[i], B[j]).
[[nodiscard]] Matrix gram(const Kernel& kernel, const Points& a, const Points& b);

/// Median of squared pairwise distances over distinct index pairs.
/// Throws InputError for fewer than two samples or when every pair coincides.
[[nodiscard]] double median_heuristic(const Points& samples);

/// Kernel selection as it appears in run configurations.
struct KernelConfig {
    enum class Type { Gaussian, Deep, Linear };

    Type type = Type::Gaussian;
    /// Used when `median_bandwidth` is false. For Deep, this is kappa2's bandwidth.
    double bandwidth_sq = 1.0;
    bool median_bandwidth = false;
    double epsilon0 = 0.1;
    /// Deep only: kappa1 bandwidth, code dimension, encoder seed.
    double code_bandwidth_sq = 1.0;
    Eigen::Index code_dim = 4;
    std::uint64_t encoder_seed = 0;
};

/// Builds a kernel on points of dimension `dim`. `samples` feeds the median
/// heuristic when requested and is otherwise ignored.
[[nodiscard]] KernelPtr make_kernel(const KernelConfig& config, Eigen::Index dim, const Points& samples = {});

}  // namespace cgm
