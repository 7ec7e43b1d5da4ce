#pragma once

#include "cgm/common.hpp"
#include "cgm/kernels.hpp"

#include <cstddef>

namespace cgm {

/// Joint observations (x_l, y_l), l = 1..r.
struct Batch {
    Points xs;
    Points ys;

    [[nodiscard]] std::size_t size() const noexcept { return xs.size(); }
};

/// Generated joint samples (x_j, G(xi_j, x_j)). `xis` records the noise used
/// and may be empty when the generator is not noise driven (e.g. replays).
struct GenBatch {
    Points xs;
    Points xis;
    Points yhats;

    [[nodiscard]] std::size_t size() const noexcept { return xs.size(); }
};

/// One conditioning point with its observed outputs and generated outputs.
struct Group {
    Vector x;
    Points ys;
    Points yhats;
};

/// Groups share the same r and m.
struct GroupedBatch {
    std::vector<Group> groups;

    [[nodiscard]] std::size_t size() const noexcept { return groups.size(); }
    /// Number of generated samples across all groups.
    [[nodiscard]] std::size_t generated_count() const noexcept;
};

struct EstimateWithGrad {
    double value = 0.0;
    /// d value / d yhat, one entry per generated output. Grouped estimators
    /// flatten in group-major order.
    Points grads_wrt_generated;
};

enum class Gradient { Skip, Compute };

/// Unbiased MMD^2 between the laws of `ys` and `yhats`.
[[nodiscard]] double mmd2_unbiased(const Kernel& ky, const Points& ys, const Points& yhats);

/// Joint estimator: -2/(m r) sum k3(z_l, zhat_j) + 1/(m(m-1)) sum_{j != j'} k3(zhat_j, zhat_j').
/// Its expectation is JMMD^2 - C1.
[[nodiscard]] EstimateWithGrad jmmd_hat(const Kernel& kx, const Kernel& ky, const Batch& data, const GenBatch& gen,
                                        Gradient gradient = Gradient::Compute);

/// Average of per-group conditional estimators; expectation AMMD^2 - C0.
[[nodiscard]] EstimateWithGrad ammd_hat(const Kernel& ky, const GroupedBatch& grouped,
                                        Gradient gradient = Gradient::Compute);

/// Unbiased estimate of C0 = E_x E[k2(Y1^x, Y2^x) | x]. Needs r >= 2.
[[nodiscard]] double c0_hat(const Kernel& ky, const GroupedBatch& grouped);

/// Unbiased estimate of C1 = E k3((X1,Y1), (X2,Y2)). Needs r >= 2.
[[nodiscard]] double c1_hat(const Kernel& kx, const Kernel& ky, const Batch& data);

/// Squared Hilbert-Schmidt distance between the ridge-regularized conditional
/// embedding operators of the data and the generated sample.
///
/// With A_P = (K1_DD + lambda n I)^-1 and A_Q = (K1_GG + lambda m I)^-1:
///   tr(A_P K2_DD A_P K1_DD) - 2 tr(A_P K2_DG A_Q K1_GD) + tr(A_Q K2_GG A_Q K1_GG).
[[nodiscard]] double cmmd_hat(const Kernel& kx, const Kernel& ky, const Batch& data, const GenBatch& gen,
                              double lambda);

/// cmmd_hat plus its gradient with respect to the generated outputs.
[[nodiscard]] EstimateWithGrad cmmd_hat_with_grad(const Kernel& kx, const Kernel& ky, const Batch& data,
                                                  const GenBatch& gen, double lambda);

enum class Metric { Jmmd, Ammd };

struct EstimatorSettings {
    std::size_t n = 1;
    std::size_t m = 2;
    std::size_t r = 1;
};

/// Sample sizes for a total budget of drawn samples. AMMD spends the budget on
/// more conditioning points at m = 2, r = 1; JMMD balances m = r = floor(sqrt(budget)).
[[nodiscard]] EstimatorSettings recommend_settings(Metric metric, std::size_t budget);

}  // namespace cgm
