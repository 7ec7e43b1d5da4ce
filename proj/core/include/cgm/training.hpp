#pragma once

#include "cgm/common.hpp"
#include "cgm/data.hpp"
#include "cgm/estimators.hpp"
#include "cgm/kernels.hpp"
#include "cgm/nn.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>

namespace cgm {

/// G(xi, x): an MLP on the stacked input [x; xi].
class ConditionalGenerator {
public:
    ConditionalGenerator(Mlp net, Eigen::Index x_dim, Eigen::Index xi_dim);

    /// He-uniform MLP with layer sizes x_dim + xi_dim, hidden..., y_dim.
    [[nodiscard]] static ConditionalGenerator init(Eigen::Index x_dim, Eigen::Index xi_dim, Eigen::Index y_dim,
                                                   const std::vector<Eigen::Index>& hidden, std::uint64_t seed);

    /// Column j is [xs[j]; xis[j]].
    [[nodiscard]] Matrix stack_inputs(const Points& xs, const Points& xis) const;
    [[nodiscard]] Points generate(const Points& xs, const Points& xis) const;
    [[nodiscard]] Vector generate(const Vector& x, const Vector& xi) const;

    [[nodiscard]] Mlp& net() noexcept { return net_; }
    [[nodiscard]] const Mlp& net() const noexcept { return net_; }
    [[nodiscard]] Eigen::Index x_dim() const noexcept { return x_dim_; }
    [[nodiscard]] Eigen::Index xi_dim() const noexcept { return xi_dim_; }
    [[nodiscard]] Eigen::Index y_dim() const noexcept { return net_.output_dim(); }

private:
    Mlp net_;
    Eigen::Index x_dim_;
    Eigen::Index xi_dim_;
};

/// {"format": "cgm-generator", "version": 1, "x_dim", "xi_dim", "mlp": {...}}
[[nodiscard]] nlohmann::json generator_to_json(const ConditionalGenerator& gen);
/// Throws SchemaError on malformed documents.
[[nodiscard]] ConditionalGenerator generator_from_json(const nlohmann::json& doc);
void save_generator(const std::filesystem::path& path, const ConditionalGenerator& gen);
[[nodiscard]] ConditionalGenerator load_generator(const std::filesystem::path& path);

enum class LossKind { Ammd, Jmmd, Cmmd };

[[nodiscard]] std::string to_string(LossKind kind);
[[nodiscard]] LossKind parse_loss_kind(const std::string& name);

/// Everything assembled for one optimisation step, handed to TrainConfig::on_step.
/// For Ammd only `grouped` is set; otherwise `data` and `gen` are.
struct StepRecord {
    std::size_t epoch = 0;
    std::size_t batch = 0;
    double loss = 0.0;
    const GroupedBatch* grouped = nullptr;
    const Batch* data = nullptr;
    const GenBatch* gen = nullptr;
};

struct TrainConfig {
    std::size_t epochs = 500;
    std::size_t batch_size = 128;
    /// Generated samples per x (Ammd).
    std::size_t m = 2;
    /// Observed outputs used per x (Ammd); 0 means the dataset's smallest group.
    std::size_t r = 0;
    Eigen::Index xi_dim = 10;
    double lr = 5e-4;
    std::uint64_t seed = 0;
    LossKind loss = LossKind::Jmmd;
    /// Ridge parameter for Cmmd.
    double lambda = 0.01;
    std::vector<Eigen::Index> hidden{32, 32};
    KernelConfig kx;
    KernelConfig ky;

    std::function<void(const StepRecord&)> on_step;
    /// Optional held-out metric recorded after each epoch.
    std::function<std::optional<double>(const ConditionalGenerator&, std::size_t epoch)> on_epoch;

    /// Throws ConfigError.
    void validate() const;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double mean_loss = 0.0;
    double wall_ms = 0.0;
    std::optional<double> heldout;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;

    /// Columns epoch,loss,wall_ms,heldout (heldout empty when absent).
    void write_csv(const std::filesystem::path& path) const;
};

struct TrainResult {
    ConditionalGenerator generator;
    TrainHistory history;
};

/// Seeded random partition of 0..count-1 into consecutive chunks of `batch_size`
/// (the last chunk may be shorter).
[[nodiscard]] std::vector<std::vector<std::size_t>> make_minibatches(std::size_t count, std::size_t batch_size,
                                                                   std::uint64_t seed);

struct TrainingKernels {
    KernelPtr kx;
    KernelPtr ky;
};

/// Builds kx and ky for a dataset; median-heuristic bandwidths use at most the
/// first 1000 points.
[[nodiscard]] TrainingKernels make_training_kernels(const TrainConfig& config, const Dataset& dataset);

/// Grouped minibatches over records, m fresh noise draws per x, steps on ammd_hat.
[[nodiscard]] TrainResult train_acgm(const TrainConfig& config, const Dataset& dataset);
/// Minibatches over joint (x, y) pairs, one noise draw per x, steps on jmmd_hat.
/// A trailing minibatch with fewer than two pairs is skipped.
[[nodiscard]] TrainResult train_jcgm(const TrainConfig& config, const Dataset& dataset);
/// As train_jcgm with cmmd_hat as the loss; each step solves two B x B systems.
[[nodiscard]] TrainResult train_cmmd(const TrainConfig& config, const Dataset& dataset);
/// Dispatches on config.loss.
[[nodiscard]] TrainResult train(const TrainConfig& config, const Dataset& dataset);

/// Continues training an existing generator (used by the entry points above).
[[nodiscard]] TrainResult train_from(ConditionalGenerator generator, const TrainConfig& config, const Dataset& dataset);

/// Ĵ² of the generator on fixed (x, xi) as a function of the parameters.
[[nodiscard]] DifferentiableLoss jmmd_loss(KernelPtr kx, KernelPtr ky, Batch data, Points gen_xs, Points xis,
                                           Eigen::Index x_dim);
/// Â² of the generator on fixed groups; xis[g] holds the noise for group g.
[[nodiscard]] DifferentiableLoss ammd_loss(KernelPtr ky, std::vector<Record> groups, std::vector<Points> xis,
                                           Eigen::Index x_dim);

}  // namespace cgm
