#pragma once

#include "cgm/common.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <functional>
#include <random>

namespace cgm {

class Mlp;

/// Activations recorded by Mlp::forward for a later backward pass.
struct ForwardCache {
    std::uint64_t net_id = 0;
    std::uint64_t net_version = 0;
    /// inputs[l] is the input to layer l (inputs[0] is the batch itself).
    std::vector<Matrix> inputs;
    /// Hidden pre-activations (before ReLU), one per hidden layer.
    std::vector<Matrix> pre_activations;
    Matrix output;

    /// Smallest |pre-activation| across hidden units and samples; +inf without hidden layers.
    [[nodiscard]] double min_abs_preactivation() const;
};

/// Fully connected network: ReLU on hidden layers, identity output.
/// Samples are columns of the input matrix.
class Mlp {
public:
    /// All weights and biases zero.
    explicit Mlp(std::vector<Eigen::Index> layer_dims);

    /// Uniform(-sqrt(6/fan_in), sqrt(6/fan_in)) weights, zero biases.
    [[nodiscard]] static Mlp he_uniform(std::vector<Eigen::Index> layer_dims, std::uint64_t seed);

    Mlp(const Mlp& other);
    Mlp& operator=(const Mlp& other);
    Mlp(Mlp&&) noexcept = default;
    Mlp& operator=(Mlp&&) noexcept = default;

    [[nodiscard]] const std::vector<Eigen::Index>& layer_dims() const noexcept { return dims_; }
    [[nodiscard]] Eigen::Index input_dim() const noexcept { return dims_.front(); }
    [[nodiscard]] Eigen::Index output_dim() const noexcept { return dims_.back(); }
    [[nodiscard]] std::size_t layer_count() const noexcept { return weights_.size(); }
    [[nodiscard]] Eigen::Index parameter_count() const noexcept;

    [[nodiscard]] const Matrix& weights(std::size_t layer) const { return weights_.at(layer); }
    [[nodiscard]] const Vector& bias(std::size_t layer) const { return biases_.at(layer); }
    void set_layer(std::size_t layer, Matrix weights, Vector bias);

    /// Flat parameters: per layer, weights in column-major order then bias.
    [[nodiscard]] Vector parameters() const;
    void set_parameters(const Vector& flat);

    [[nodiscard]] ForwardCache forward(const Matrix& inputs) const;
    [[nodiscard]] Vector forward(const Vector& input) const;

    /// Flat gradient of sum(output_grads .* output) with respect to every parameter.
    /// Throws InputError if the cache came from another network or stale parameters.
    [[nodiscard]] Vector backward(const ForwardCache& cache, const Matrix& output_grads) const;

    [[nodiscard]] std::uint64_t version() const noexcept { return version_; }

private:
    void touch() noexcept { ++version_; }

    std::vector<Eigen::Index> dims_;
    std::vector<Matrix> weights_;  // (d_out x d_in)
    std::vector<Vector> biases_;
    std::uint64_t id_;
    std::uint64_t version_ = 0;
};

struct AdamConfig {
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    AdamState(Eigen::Index parameter_count, AdamConfig config = {});

    AdamConfig config;
    std::uint64_t step = 0;
    Vector first_moment;
    Vector second_moment;
};

/// One bias-corrected Adam update of `params` in place.
void adam_step(AdamState& state, Vector& params, const Vector& grads);

/// A scalar loss of the network parameters with its analytic gradient.
struct DifferentiableLoss {
    std::function<double(const Mlp&)> value;
    std::function<Vector(const Mlp&)> gradient;
    /// Optional: distance of the closest hidden pre-activation to the ReLU kink.
    std::function<double(const Mlp&)> min_abs_preactivation;
};

struct GradCheckReport {
    std::size_t parameters_checked = 0;
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    /// Some hidden pre-activation is within 1e-6 of zero; finite differences may straddle the kink.
    bool near_kink = false;
    bool passed = true;
};

/// Compares the analytic gradient against central differences for every parameter.
/// Relative error is |a - f| / max(|a|, |f|, 1e-6).
[[nodiscard]] GradCheckReport grad_check(const Mlp& net, const DifferentiableLoss& loss, double tolerance,
                                         double step = 1e-5);

/// Versioned JSON: {"format": "cgm-mlp", "version": 1, "layer_dims": [...], "layers": [{"weights": [[...]], "bias": [...]}]}.
/// Weight rows are output units.
[[nodiscard]] nlohmann::json mlp_to_json(const Mlp& net);
/// Throws SchemaError when the document is malformed or inconsistent.
[[nodiscard]] Mlp mlp_from_json(const nlohmann::json& doc);

}  // namespace cgm
