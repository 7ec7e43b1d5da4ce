#pragma once

#include "cgm/data.hpp"
#include "cgm/kernels.hpp"
#include "cgm/training.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>

namespace cgm::cli {

/// Name of the environment variable that overrides the top-level "seed".
inline constexpr const char* kSeedEnv = "CGM_SEED";

struct DatasetConfig {
    enum class Source { Synthetic, Csv };

    Source source = Source::Synthetic;
    SyntheticSpec synthetic;
    std::filesystem::path csv_path;
    std::vector<std::string> targets;
    bool has_header = true;
    double test_fraction = 0.1;
};

struct EvalConfig {
    std::size_t m_draws = 16;
    std::size_t n_reps = 4;
    std::vector<double> quantiles{0.1, 0.5, 0.9};
    /// Normalized x values at which conditional summaries are reported.
    Points probes;
    std::size_t summary_draws = 1000;
};

struct VarbenchConfig {
    /// Generator-side law: the data conditional shifted by q_shift in every y coordinate.
    double q_shift = 0.5;
    std::vector<std::size_t> jmmd_sizes{2, 4, 8};
    std::vector<std::size_t> ammd_ns{8, 32, 128};
    std::size_t ammd_m = 2;
    std::size_t ammd_r = 1;
    std::size_t reps = 500;
    double ratio_low = 0.15;
    double ratio_high = 0.4;
};

struct RunConfig {
    std::uint64_t seed = 0;
    std::filesystem::path out_dir = "out";
    DatasetConfig dataset;
    /// Carries the kernel configuration in kx / ky.
    TrainConfig train;
    EvalConfig eval;
    VarbenchConfig varbench;
};

/// Strict parse: unknown keys and wrong types raise SchemaError, invalid values
/// ConfigError. Relative CSV paths resolve against `base_dir`.
[[nodiscard]] RunConfig parse_run_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {},
                                         std::optional<std::uint64_t> seed_override = std::nullopt);

/// Reads a JSON file and applies the seed override from kSeedEnv when set.
[[nodiscard]] RunConfig load_run_config(const std::filesystem::path& path);

/// Seed streams derived from the top-level seed.
[[nodiscard]] std::uint64_t split_seed(const RunConfig& config);
[[nodiscard]] std::uint64_t eval_seed(const RunConfig& config);

}  // namespace cgm::cli
