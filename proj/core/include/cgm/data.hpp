#pragma once

#include "cgm/common.hpp"
#include "cgm/estimators.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <string>

namespace cgm {

enum class TaskKind { Single, Multi };

/// One conditioning point and every output observed at it.
struct Record {
    Vector x;
    Points ys;
};

/// Z-score statistics fitted on a training split.
///
/// Constant x features are dropped (`kept_x`); constant y features keep
/// std = 1 so that outputs remain defined.
struct Normalization {
    Vector x_mean;
    Vector x_std;
    Vector y_mean;
    Vector y_std;
    std::vector<Eigen::Index> kept_x;
    Eigen::Index raw_x_dim = 0;

    [[nodiscard]] Vector normalize_x(const Vector& raw) const;
    [[nodiscard]] Vector denormalize_x(const Vector& normalized) const;
    [[nodiscard]] Vector normalize_y(const Vector& raw) const;
    [[nodiscard]] Vector denormalize_y(const Vector& normalized) const;
};

struct Dataset {
    std::vector<Record> records;
    TaskKind kind = TaskKind::Single;
    /// Present once normalize_split has been applied.
    std::optional<Normalization> normalization;

    [[nodiscard]] Eigen::Index x_dim() const;
    [[nodiscard]] Eigen::Index y_dim() const;
    [[nodiscard]] std::size_t output_count() const noexcept;
    /// Smallest number of outputs over records.
    [[nodiscard]] std::size_t min_outputs() const noexcept;
    /// Every (x, y) pair, record order then output order.
    [[nodiscard]] Batch joint_pairs() const;
};

/// Target columns are given by header name when `has_header`, otherwise by
/// zero-based index. Records with bitwise-identical x are merged in order of
/// first appearance.
[[nodiscard]] Dataset load_csv(const std::filesystem::path& path, const std::vector<std::string>& target_columns,
                               bool has_header);

struct Split {
    Dataset train;
    Dataset test;
};

/// Z-score statistics of a raw dataset (x over records, y over all outputs).
/// Constant x features are dropped and reported on stderr.
[[nodiscard]] Normalization fit_normalization(const Dataset& ds);
/// Applies `norm` to every record; the result carries `norm`.
[[nodiscard]] Dataset apply_normalization(const Dataset& ds, const Normalization& norm);

/// Seeded random split of records followed by z-scoring with train statistics.
[[nodiscard]] Split normalize_split(const Dataset& ds, double test_fraction, std::uint64_t seed);

/// Closed-form conditional law of a synthetic task.
class GroundTruth {
public:
    virtual ~GroundTruth() = default;
    [[nodiscard]] virtual Vector sample_x(std::mt19937_64& rng) const = 0;
    [[nodiscard]] virtual Vector sample_y(const Vector& x, std::mt19937_64& rng) const = 0;
    [[nodiscard]] virtual Vector cond_mean(const Vector& x) const = 0;
    [[nodiscard]] virtual Vector cond_std(const Vector& x) const = 0;
    /// Per-coordinate conditional quantile.
    [[nodiscard]] virtual Vector cond_quantile(const Vector& x, double q) const = 0;
    [[nodiscard]] virtual Eigen::Index x_dim() const = 0;
    [[nodiscard]] virtual Eigen::Index y_dim() const = 0;
};

struct SyntheticSpec {
    enum class Kind { Heteroscedastic, Bimodal, LabelMixture };

    Kind kind = Kind::Heteroscedastic;
    std::size_t count = 1000;
    /// Outputs drawn per x; > 1 yields a multi-output dataset.
    std::size_t outputs_per_x = 1;
    std::uint64_t seed = 0;

    // heteroscedastic: x ~ U[x_low, x_high],
    //   y = mean_amp * sin(mean_freq * x) + mean_slope * x + (noise_base + noise_slope * |x|) * N(0, 1)
    // bimodal: y ~ 0.5 N(c(x) - g(x), mode_std^2) + 0.5 N(c(x) + g(x), mode_std^2),
    //   c(x) = mean_slope * x, g(x) = gap_base + gap_slope * |x|
    double x_low = -2.0;
    double x_high = 2.0;
    double mean_amp = 1.0;
    double mean_freq = 1.0;
    double mean_slope = 0.0;
    double noise_base = 0.2;
    double noise_slope = 0.2;
    double gap_base = 1.0;
    double gap_slope = 0.0;
    double mode_std = 0.2;

    // label_mixture: x one-hot in {1..labels}; y in R^2 from an equal-weight
    // two-component isotropic mixture per label with centers radius * u_k and
    // 0.5 * radius * u_k, u_k the k-th of `labels` equally spaced unit vectors.
    std::size_t labels = 3;
    double radius = 2.0;
};

struct SyntheticData {
    Dataset dataset;
    std::shared_ptr<const GroundTruth> truth;
};

/// Throws ConfigError for invalid parameters.
[[nodiscard]] std::shared_ptr<const GroundTruth> make_ground_truth(const SyntheticSpec& spec);
[[nodiscard]] SyntheticData gen_synthetic(const SyntheticSpec& spec);

/// Draws i.i.d. Uniform([-1, 1]^xi_dim) vectors from a seeded stream.
class NoiseSource {
public:
    NoiseSource(Eigen::Index xi_dim, std::uint64_t seed);

    [[nodiscard]] Vector draw();
    [[nodiscard]] Eigen::Index dim() const noexcept { return dim_; }

private:
    Eigen::Index dim_;
    std::mt19937_64 rng_;
    std::uniform_real_distribution<double> unit_{-1.0, 1.0};
};

[[nodiscard]] Points sample_noise(Eigen::Index xi_dim, std::size_t count, std::uint64_t seed);

/// Writes one row per (x, y) pair with header x0..,y0...
void write_csv(const std::filesystem::path& path, const Dataset& ds);

}  // namespace cgm
