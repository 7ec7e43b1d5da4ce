#pragma once

#include "cgm/common.hpp"
#include "cgm/estimators.hpp"
#include "cgm/kernels.hpp"

#include <cstdint>
#include <functional>
#include <random>

namespace cgm::oracle {

// Exact computations on finitely supported distributions. Everything here is a
// reference for tests and the `verify` command, not a training path.

struct Atom {
    Vector point;
    double prob = 0.0;
};

/// One support point x with its data-side and generator-side conditionals.
struct Condition {
    Vector x;
    double px = 0.0;
    std::vector<Atom> p_cond;
    std::vector<Atom> q_cond;
};

/// Joint laws P and Q over (X, Y) sharing the marginal P_X.
struct DiscreteInstance {
    std::vector<Condition> conditions;

    /// Throws InputError unless probabilities are nonnegative, each law sums to
    /// 1 within 1e-12, and dimensions agree.
    void validate() const;
    /// Number of joint atoms of P plus those of Q.
    [[nodiscard]] std::size_t total_support() const noexcept;
};

struct ExactMetrics {
    double mmd2_marginal_y = 0.0;
    double jmmd2 = 0.0;
    double ammd2 = 0.0;
    double c0 = 0.0;
    double c1 = 0.0;
    double e_k1xx = 0.0;
    /// E k2(Y1, Y2) with Y1, Y2 drawn independently from the marginal P_Y.
    /// Differs from c0 in general because c0 draws both outputs at one x.
    double e_k2_marginal = 0.0;
};

inline constexpr std::size_t kMaxExactSupport = 64;
inline constexpr double kMaxEnumeration = 1e7;

[[nodiscard]] ExactMetrics exact_metrics(const DiscreteInstance& inst, const Kernel& kx, const Kernel& ky);

enum class EstimatorKind { Jmmd, Ammd, Mmd };

struct SampleSizes {
    std::size_t n = 1;  // groups (AMMD) or data sample size (MMD)
    std::size_t m = 2;  // generated samples (per group for AMMD)
    std::size_t r = 2;  // observed samples (per group for AMMD)
};

/// Estimators evaluated during enumeration. Defaults call the library; tests
/// swap in deliberately broken versions to check that the oracle notices.
struct EstimatorFns {
    std::function<double(const Kernel&, const Kernel&, const Batch&, const GenBatch&)> jmmd;
    std::function<double(const Kernel&, const GroupedBatch&)> ammd;
    std::function<double(const Kernel&, const Points&, const Points&)> mmd;

    [[nodiscard]] static EstimatorFns library();
};

struct Moments {
    double mean = 0.0;
    double variance = 0.0;
    std::size_t outcomes = 0;
};

/// Exact mean and variance of an estimator over every sample tuple, weighted by
/// the product law. AMMD groups draw x from P_X and then r outputs and m
/// generated outputs conditionally i.i.d. at that x.
[[nodiscard]] Moments estimator_moments(const DiscreteInstance& inst, EstimatorKind kind, SampleSizes sizes,
                                        const Kernel& kx, const Kernel& ky,
                                        const EstimatorFns& fns = EstimatorFns::library());

/// Closed-form Var of the joint estimator with m generated and r observed samples.
[[nodiscard]] double closed_form_variance_jmmd(const DiscreteInstance& inst, std::size_t m, std::size_t r,
                                               const Kernel& kx, const Kernel& ky);

struct AmmdVariance {
    double variance = 0.0;
    /// Variance across x of the conditional mean of the per-group estimator.
    double k0 = 0.0;
};

/// Closed-form Var of the grouped estimator via the law of total variance.
[[nodiscard]] AmmdVariance closed_form_variance_ammd(const DiscreteInstance& inst, std::size_t n, std::size_t m,
                                                     std::size_t r, const Kernel& ky);

/// Squared Frobenius distance between explicit matrices Y (K_X + lambda s I)^-1 X^T
/// built for each side. Linear kernels only, so features are the raw coordinates.
[[nodiscard]] double finite_feature_cmmd(const Batch& data, const GenBatch& gen, double lambda);

struct InequalityCheck {
    bool thm7_holds = false;
    /// E[k1(x,x)] * AMMD^2 - JMMD^2.
    double slack = 0.0;
};

/// JMMD^2 <= E[k1(x,x)] AMMD^2 within 1e-12.
[[nodiscard]] InequalityCheck check_metric_inequalities(const DiscreteInstance& inst, const Kernel& kx,
                                                        const Kernel& ky);

struct RandomInstanceOptions {
    std::size_t max_x = 3;
    /// Upper bound on support size of each conditional.
    std::size_t max_support = 4;
    Eigen::Index x_dim = 1;
    Eigen::Index y_dim = 1;
    double coord_range = 2.0;
};

/// Random instance with uniform-random points and normalized random weights.
[[nodiscard]] DiscreteInstance random_instance(std::mt19937_64& rng, const RandomInstanceOptions& options = {});

/// The instance X = 0, Y ~ uniform{-1, +1} under P, Y = 0 under Q.
[[nodiscard]] DiscreteInstance pm_one_instance();

}  // namespace cgm::oracle
