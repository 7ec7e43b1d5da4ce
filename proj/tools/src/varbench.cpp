#include "cgm_cli/varbench.hpp"

#include "cgm/estimators.hpp"

#include <fmt/format.h>

#include <fstream>
#include <random>

namespace cgm::cli {

namespace {

double sample_variance(const std::vector<double>& values) {
    CompensatedSum sum;
    for (double v : values) {
        sum.add(v);
    }
    const double mean = sum.value() / static_cast<double>(values.size());
    CompensatedSum ss;
    for (double v : values) {
        ss.add((v - mean) * (v - mean));
    }
    return ss.value() / static_cast<double>(values.size() - 1);
}

struct Sampler {
    const GroundTruth& truth;
    double shift;
    std::mt19937_64 rng;

    Vector x() { return truth.sample_x(rng); }
    Vector y(const Vector& at) { return truth.sample_y(at, rng); }
    Vector yhat(const Vector& at) { return (truth.sample_y(at, rng).array() + shift).matrix(); }
};

}  // namespace

bool VarbenchResult::passed() const {
    for (const auto& a : assertions) {
        if (!a.passed) {
            return false;
        }
    }
    return true;
}

void VarbenchResult::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) {
        throw InputError(fmt::format("cannot write {}", path.string()));
    }
    out << "estimator,n,m,r,emp_var,reps\n";
    for (const auto& row : rows) {
        out << fmt::format("{},{},{},{},{},{}\n", row.estimator, row.n, row.m, row.r, row.emp_var, row.reps);
    }
}

VarbenchResult run_varbench(const GroundTruth& truth, const Kernel& kx, const Kernel& ky, const VarbenchConfig& config,
                            std::uint64_t seed) {
    VarbenchResult result;
    std::uint64_t stream = 0;

    std::vector<double> jmmd_vars;
    for (std::size_t s : config.jmmd_sizes) {
        std::vector<double> values;
        values.reserve(config.reps);
        for (std::size_t rep = 0; rep < config.reps; ++rep) {
            Sampler draw{truth, config.q_shift, std::mt19937_64(derive_seed(seed, stream++))};
            Batch data;
            GenBatch gen;
            for (std::size_t l = 0; l < s; ++l) {
                data.xs.push_back(draw.x());
                data.ys.push_back(draw.y(data.xs.back()));
            }
            for (std::size_t j = 0; j < s; ++j) {
                gen.xs.push_back(draw.x());
                gen.yhats.push_back(draw.yhat(gen.xs.back()));
            }
            values.push_back(jmmd_hat(kx, ky, data, gen, Gradient::Skip).value);
        }
        jmmd_vars.push_back(sample_variance(values));
        result.rows.push_back({"jmmd", 1, s, s, jmmd_vars.back(), config.reps});
    }

    std::vector<double> ammd_vars;
    for (std::size_t n : config.ammd_ns) {
        std::vector<double> values;
        values.reserve(config.reps);
        for (std::size_t rep = 0; rep < config.reps; ++rep) {
            Sampler draw{truth, config.q_shift, std::mt19937_64(derive_seed(seed, stream++))};
            GroupedBatch grouped;
            for (std::size_t i = 0; i < n; ++i) {
                Group g{draw.x(), {}, {}};
                for (std::size_t l = 0; l < config.ammd_r; ++l) {
                    g.ys.push_back(draw.y(g.x));
                }
                for (std::size_t j = 0; j < config.ammd_m; ++j) {
                    g.yhats.push_back(draw.yhat(g.x));
                }
                grouped.groups.push_back(std::move(g));
            }
            values.push_back(ammd_hat(ky, grouped, Gradient::Skip).value);
        }
        ammd_vars.push_back(sample_variance(values));
        result.rows.push_back({"ammd", n, config.ammd_m, config.ammd_r, ammd_vars.back(), config.reps});
    }

    // Degenerate laws give zero variance everywhere; there is no trend to test.
    double largest = 0.0;
    for (const auto& row : result.rows) {
        largest = std::max(largest, row.emp_var);
    }
    if (largest < 1e-20) {
        result.assertions.push_back({"degenerate", true, fmt::format("all variances below 1e-20 (max {:.1e})", largest)});
        return result;
    }

    for (std::size_t i = 1; i < jmmd_vars.size(); ++i) {
        const bool ok = jmmd_vars[i] < jmmd_vars[i - 1];
        result.assertions.push_back({fmt::format("jmmd-decreasing m=r={}->{}", config.jmmd_sizes[i - 1],
                                                 config.jmmd_sizes[i]),
                                     ok, fmt::format("{:.4e} -> {:.4e}", jmmd_vars[i - 1], jmmd_vars[i])});
    }
    for (std::size_t i = 1; i < ammd_vars.size(); ++i) {
        const double ratio = ammd_vars[i] / ammd_vars[i - 1];
        const bool ok = ratio >= config.ratio_low && ratio <= config.ratio_high;
        result.assertions.push_back({fmt::format("ammd-ratio n={}->{}", config.ammd_ns[i - 1], config.ammd_ns[i]), ok,
                                     fmt::format("ratio {:.3f} (allowed [{}, {}])", ratio, config.ratio_low,
                                                 config.ratio_high)});
    }
    return result;
}

}  // namespace cgm::cli
