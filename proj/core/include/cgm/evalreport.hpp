#pragma once

#include "cgm/common.hpp"
#include "cgm/data.hpp"
#include "cgm/kernels.hpp"
#include "cgm/training.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <functional>
#include <optional>

namespace cgm {

struct GaussianMoments {
    Vector mean;
    Matrix cov;

    /// Sample mean and unbiased covariance; needs at least two points.
    [[nodiscard]] static GaussianMoments from_samples(const Points& samples);
};

/// ||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2).
/// Eigenvalues down to -1e-8 are clamped to zero; below that NumericError.
[[nodiscard]] double frechet_gaussian(const GaussianMoments& a, const GaussianMoments& b);

/// One conditional draw per entry of `xs`; the same seed gives the same draws.
using ConditionalSampler = std::function<Points(const Points& xs, std::uint64_t seed)>;

/// Samples G(xi, x) with xi ~ Uniform([-1, 1]^xi_dim). Holds a copy of the generator.
[[nodiscard]] ConditionalSampler make_sampler(const ConditionalGenerator& gen);

struct MonteCarloValue {
    double mean = 0.0;
    /// Standard error of the mean across repetitions (0 for one repetition).
    double se = 0.0;
};

struct EvalSettings {
    std::size_t m_draws = 16;
    std::size_t n_reps = 4;
    std::uint64_t seed = 0;
};

struct MetricReport {
    MonteCarloValue jmmd_shifted;
    std::optional<MonteCarloValue> jmmd_with_c1;
    MonteCarloValue ammd_shifted;
    std::optional<MonteCarloValue> ammd_with_c0;
    MonteCarloValue fid;

    EvalSettings settings;
    std::size_t test_records = 0;
    std::size_t test_pairs = 0;
    /// Observed outputs per x used by the grouped metric.
    std::size_t r = 0;
    std::string kx_name;
    std::string ky_name;
    /// Empty for kernels without a Gaussian bandwidth.
    std::optional<double> kx_bandwidth_sq;
    std::optional<double> ky_bandwidth_sq;

    [[nodiscard]] nlohmann::json to_json() const;
};

/// Grouped metric: m_draws generated outputs per test x against the first r
/// observed outputs (r = smallest group). Joint metric: each repetition splits
/// the test pairs at random into a data half and a generator half, and draws one
/// output at every x of the generator half, so jmmd_with_c1 is unbiased for
/// JMMD^2. FID compares joint moments of all test (x, y) with (x, yhat).
/// Each repetition uses fresh noise and splits derived from settings.seed.
/// Needs at least four test pairs.
[[nodiscard]] MetricReport evaluate_model(const ConditionalSampler& sampler, const Dataset& test, const Kernel& kx,
                                          const Kernel& ky, const EvalSettings& settings);
[[nodiscard]] MetricReport evaluate_model(const ConditionalGenerator& gen, const Dataset& test, const Kernel& kx,
                                          const Kernel& ky, const EvalSettings& settings);

struct ConditionalSummary {
    Vector mean;
    /// Per-coordinate sample standard deviation (n - 1 denominator).
    Vector std;
    /// quantiles[i] is the per-coordinate quantile at levels[i].
    std::vector<double> levels;
    Points quantiles;
};

/// Linear-interpolation order-statistic quantile of sorted data.
[[nodiscard]] double quantile_sorted(const std::vector<double>& sorted, double q);

[[nodiscard]] ConditionalSummary conditional_summaries(const ConditionalSampler& sampler, const Vector& x,
                                                       std::size_t draws, std::uint64_t seed,
                                                       const std::vector<double>& levels = {0.1, 0.5, 0.9});

}  // namespace cgm
