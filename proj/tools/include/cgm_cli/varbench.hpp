#pragma once

#include "cgm/data.hpp"
#include "cgm/kernels.hpp"
#include "cgm_cli/config.hpp"
#include "cgm_cli/verify.hpp"

#include <filesystem>

namespace cgm::cli {

struct VarbenchRow {
    std::string estimator;
    std::size_t n = 0;
    std::size_t m = 0;
    std::size_t r = 0;
    double emp_var = 0.0;
    std::size_t reps = 0;
};

struct VarbenchResult {
    std::vector<VarbenchRow> rows;
    std::vector<CheckResult> assertions;

    [[nodiscard]] bool passed() const;
    /// Columns estimator,n,m,r,emp_var,reps.
    void write_csv(const std::filesystem::path& path) const;
};

/// Repeats Ĵ² (n = 1, m = r = s for s in jmmd_sizes) and Â² (n in ammd_ns) on
/// fresh samples from `truth` against the same law shifted by q_shift, and
/// records the empirical variance of each configuration.
[[nodiscard]] VarbenchResult run_varbench(const GroundTruth& truth, const Kernel& kx, const Kernel& ky,
                                          const VarbenchConfig& config, std::uint64_t seed);

}  // namespace cgm::cli
