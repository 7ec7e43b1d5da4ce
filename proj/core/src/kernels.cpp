#include "cgm/kernels.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <random>

namespace cgm {

void Kernel::check_dims(const Vector& a, const Vector& b) const {
    if (a.size() != b.size()) {
        throw InputError(fmt::format("{} kernel: point dimensions differ ({} vs {})", name(), a.size(), b.size()));
    }
    if (dim_ != 0 && a.size() != dim_) {
        throw InputError(fmt::format("{} kernel built for dimension {}, got {}", name(), dim_, a.size()));
    }
}

// ---------------------------------------------------------------------------
// Gaussian

GaussianKernel::GaussianKernel(double bandwidth_sq, Eigen::Index dim) : Kernel(dim), bandwidth_sq_(bandwidth_sq) {
    if (!(bandwidth_sq > 0.0) || !std::isfinite(bandwidth_sq)) {
        throw ConfigError(fmt::format("gaussian kernel: bandwidth_sq must be positive and finite, got {}", bandwidth_sq));
    }
}

double GaussianKernel::value(const Vector& a, const Vector& b) const {
    return std::exp(-(a - b).squaredNorm() / (2.0 * bandwidth_sq_));
}

Vector GaussianKernel::gradient_second(const Vector& a, const Vector& b) const {
    return value(a, b) / bandwidth_sq_ * (a - b);
}

Vector GaussianKernel::grad_diagonal(const Vector& b) const { return Vector::Zero(b.size()); }

// ---------------------------------------------------------------------------
// Tensor

TensorKernel::TensorKernel(KernelPtr kx, KernelPtr ky, Eigen::Index x_dim, Eigen::Index y_dim)
    : Kernel(x_dim + y_dim), kx_(std::move(kx)), ky_(std::move(ky)), x_dim_(x_dim) {
    if (!kx_ || !ky_) {
        throw ConfigError("tensor kernel: both factor kernels are required");
    }
    if (x_dim < 1 || y_dim < 1) {
        throw ConfigError("tensor kernel: factor dimensions must be positive");
    }
}

Vector TensorKernel::join(const Vector& x, const Vector& y) {
    Vector z(x.size() + y.size());
    z << x, y;
    return z;
}

double TensorKernel::eval_pair(const Vector& x1, const Vector& y1, const Vector& x2, const Vector& y2) const {
    return kx_->eval(x1, x2) * ky_->eval(y1, y2);
}

double TensorKernel::value(const Vector& a, const Vector& b) const {
    const Eigen::Index dy = a.size() - x_dim_;
    return kx_->eval(a.head(x_dim_), b.head(x_dim_)) * ky_->eval(a.tail(dy), b.tail(dy));
}

Vector TensorKernel::gradient_second(const Vector& a, const Vector& b) const {
    const Eigen::Index dy = a.size() - x_dim_;
    const Vector ax = a.head(x_dim_), bx = b.head(x_dim_);
    const Vector ay = a.tail(dy), by = b.tail(dy);
    Vector g(a.size());
    g.head(x_dim_) = kx_->grad_second(ax, bx) * ky_->eval(ay, by);
    g.tail(dy) = kx_->eval(ax, bx) * ky_->grad_second(ay, by);
    return g;
}

Vector TensorKernel::grad_diagonal(const Vector& b) const {
    const Eigen::Index dy = b.size() - x_dim_;
    const Vector bx = b.head(x_dim_), by = b.tail(dy);
    Vector g(b.size());
    g.head(x_dim_) = kx_->grad_diagonal(bx) * ky_->eval(by, by);
    g.tail(dy) = kx_->eval(bx, bx) * ky_->grad_diagonal(by);
    return g;
}

// ---------------------------------------------------------------------------
// Encoder

TanhProjectionEncoder::TanhProjectionEncoder(Eigen::Index input_dim, Eigen::Index code_dim, std::uint64_t seed) {
    if (input_dim < 1 || code_dim < 1) {
        throw ConfigError("tanh encoder: dimensions must be positive");
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(input_dim)));
    weights_.resize(code_dim, input_dim);
    for (Eigen::Index i = 0; i < code_dim; ++i) {
        for (Eigen::Index j = 0; j < input_dim; ++j) {
            weights_(i, j) = normal(rng);
        }
    }
    offset_ = Vector::Zero(code_dim);
}

TanhProjectionEncoder::TanhProjectionEncoder(Matrix weights, Vector offset)
    : weights_(std::move(weights)), offset_(std::move(offset)) {
    if (offset_.size() != weights_.rows()) {
        throw ConfigError("tanh encoder: offset length must equal code dimension");
    }
}

Vector TanhProjectionEncoder::encode(const Vector& y) const {
    if (y.size() != input_dim()) {
        throw InputError(fmt::format("encoder expects dimension {}, got {}", input_dim(), y.size()));
    }
    return (weights_ * y + offset_).array().tanh().matrix();
}

Matrix TanhProjectionEncoder::jacobian(const Vector& y) const {
    const Vector code = encode(y);
    const Vector slope = (1.0 - code.array().square()).matrix();
    return slope.asDiagonal() * weights_;
}

// ---------------------------------------------------------------------------
// Deep

DeepKernel::DeepKernel(EncoderPtr encoder, GaussianKernel kappa1, GaussianKernel kappa2, double epsilon0)
    : Kernel(encoder ? encoder->input_dim() : 0),
      encoder_(std::move(encoder)),
      kappa1_(std::move(kappa1)),
      kappa2_(std::move(kappa2)),
      epsilon0_(epsilon0) {
    if (!encoder_) {
        throw ConfigError("deep kernel: encoder is required");
    }
    if (!(epsilon0 > 0.0 && epsilon0 < 1.0)) {
        throw ConfigError(fmt::format("deep kernel: epsilon0 must lie in (0, 1), got {}", epsilon0));
    }
}

double DeepKernel::value(const Vector& a, const Vector& b) const {
    const double code_sim = kappa1_.eval(encoder_->encode(a), encoder_->encode(b));
    return ((1.0 - epsilon0_) * code_sim + epsilon0_) * kappa2_.eval(a, b);
}

Vector DeepKernel::gradient_second(const Vector& a, const Vector& b) const {
    const Vector code_a = encoder_->encode(a);
    const Vector code_b = encoder_->encode(b);
    const double code_sim = kappa1_.eval(code_a, code_b);
    const double raw_sim = kappa2_.eval(a, b);
    const Vector d_code = encoder_->jacobian(b).transpose() * kappa1_.grad_second(code_a, code_b);
    return (1.0 - epsilon0_) * raw_sim * d_code + ((1.0 - epsilon0_) * code_sim + epsilon0_) * kappa2_.grad_second(a, b);
}

Vector DeepKernel::grad_diagonal(const Vector& b) const { return Vector::Zero(b.size()); }

// ---------------------------------------------------------------------------

Matrix gram(const Kernel& kernel, const Points& a, const Points& b) {
    Matrix g(static_cast<Eigen::Index>(a.size()), static_cast<Eigen::Index>(b.size()));
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t j = 0; j < b.size(); ++j) {
            g(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = kernel.eval(a[i], b[j]);
        }
    }
    return g;
}

double median_heuristic(const Points& samples) {
    if (samples.size() < 2) {
        throw InputError("median heuristic needs at least two samples");
    }
    std::vector<double> sq;
    sq.reserve(samples.size() * (samples.size() - 1) / 2);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        for (std::size_t j = i + 1; j < samples.size(); ++j) {
            if (samples[i].size() != samples[j].size()) {
                throw InputError("median heuristic: samples have inconsistent dimensions");
            }
            sq.push_back((samples[i] - samples[j]).squaredNorm());
        }
    }
    std::sort(sq.begin(), sq.end());
    const std::size_t k = sq.size();
    const double median = (k % 2 == 1) ? sq[k / 2] : 0.5 * (sq[k / 2 - 1] + sq[k / 2]);
    if (!(median > 0.0)) {
        throw InputError("median heuristic: median pairwise distance is zero (samples identical)");
    }
    return median;
}

KernelPtr make_kernel(const KernelConfig& config, Eigen::Index dim, const Points& samples) {
    const double bw = config.median_bandwidth ? median_heuristic(samples) : config.bandwidth_sq;
    switch (config.type) {
        case KernelConfig::Type::Gaussian:
            return std::make_shared<GaussianKernel>(bw, dim);
        case KernelConfig::Type::Linear:
            return std::make_shared<LinearKernel>(dim);
        case KernelConfig::Type::Deep: {
            auto encoder = std::make_shared<TanhProjectionEncoder>(dim, config.code_dim, config.encoder_seed);
            return std::make_shared<DeepKernel>(std::move(encoder), GaussianKernel(config.code_bandwidth_sq),
                                                GaussianKernel(bw, dim), config.epsilon0);
        }
    }
    throw ConfigError("unknown kernel type");
}

}  // namespace cgm
