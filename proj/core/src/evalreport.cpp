#include "cgm/evalreport.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace cgm {

namespace {

constexpr double kEigenFloor = -1e-8;

// Symmetric PSD square root with clamping of tiny negative eigenvalues.
Matrix psd_sqrt(const Matrix& s, const char* what) {
    const Matrix sym = 0.5 * (s + s.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
    if (eig.info() != Eigen::Success) {
        throw NumericError(fmt::format("frechet: eigendecomposition of {} failed", what));
    }
    Vector vals = eig.eigenvalues();
    for (Eigen::Index i = 0; i < vals.size(); ++i) {
        if (vals(i) < kEigenFloor) {
            throw NumericError(fmt::format("frechet: {} has eigenvalue {} below tolerance", what, vals(i)));
        }
        vals(i) = std::sqrt(std::max(vals(i), 0.0));
    }
    return eig.eigenvectors() * vals.asDiagonal() * eig.eigenvectors().transpose();
}

struct RunningStats {
    std::vector<double> values;

    void add(double v) { values.push_back(v); }
    [[nodiscard]] MonteCarloValue summary() const {
        MonteCarloValue out;
        const double n = static_cast<double>(values.size());
        for (double v : values) {
            out.mean += v;
        }
        out.mean /= n;
        if (values.size() > 1) {
            double ss = 0.0;
            for (double v : values) {
                ss += (v - out.mean) * (v - out.mean);
            }
            out.se = std::sqrt(ss / (n - 1.0) / n);
        }
        return out;
    }
};

nlohmann::json to_json(const MonteCarloValue& v) { return {{"mean", v.mean}, {"stderr", v.se}}; }

Points join_all(const Points& xs, const Points& ys) {
    Points out;
    out.reserve(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        out.push_back(TensorKernel::join(xs[i], ys[i]));
    }
    return out;
}

// The Gaussian bandwidth, or the outer Gaussian's bandwidth for a deep kernel.
std::optional<double> bandwidth_of(const Kernel& k) {
    if (const auto* g = dynamic_cast<const GaussianKernel*>(&k)) {
        return g->bandwidth_sq();
    }
    if (const auto* d = dynamic_cast<const DeepKernel*>(&k)) {
        return d->kappa2().bandwidth_sq();
    }
    return std::nullopt;
}

}  // namespace

GaussianMoments GaussianMoments::from_samples(const Points& samples) {
    if (samples.size() < 2) {
        throw InputError("moments: need at least two samples");
    }
    const Eigen::Index d = samples.front().size();
    Matrix data(d, static_cast<Eigen::Index>(samples.size()));
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].size() != d) {
            throw InputError("moments: inconsistent sample dimensions");
        }
        data.col(static_cast<Eigen::Index>(i)) = samples[i];
    }
    GaussianMoments out;
    out.mean = data.rowwise().mean();
    const Matrix centered = data.colwise() - out.mean;
    out.cov = centered * centered.transpose() / static_cast<double>(samples.size() - 1);
    return out;
}

double frechet_gaussian(const GaussianMoments& a, const GaussianMoments& b) {
    const Eigen::Index d = a.mean.size();
    if (b.mean.size() != d || a.cov.rows() != d || a.cov.cols() != d || b.cov.rows() != d || b.cov.cols() != d) {
        throw InputError("frechet: dimension mismatch");
    }
    for (const Matrix* c : {&a.cov, &b.cov}) {
        if (((*c) - c->transpose()).cwiseAbs().maxCoeff() > 1e-10) {
            throw NumericError("frechet: covariance is not symmetric");
        }
    }
    const Matrix sa = psd_sqrt(a.cov, "first covariance");
    const Matrix cross = psd_sqrt(sa * b.cov * sa, "cross product");
    const double value = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * cross.trace();
    if (value < kEigenFloor) {
        throw NumericError(fmt::format("frechet: negative distance {}", value));
    }
    return std::max(value, 0.0);
}

ConditionalSampler make_sampler(const ConditionalGenerator& gen) {
    auto shared = std::make_shared<const ConditionalGenerator>(gen);
    return [shared](const Points& xs, std::uint64_t seed) {
        return shared->generate(xs, sample_noise(shared->xi_dim(), xs.size(), seed));
    };
}

nlohmann::json MetricReport::to_json() const {
    nlohmann::json doc;
    doc["jmmd_shifted"] = cgm::to_json(jmmd_shifted);
    doc["jmmd_with_c1"] = jmmd_with_c1 ? cgm::to_json(*jmmd_with_c1) : nlohmann::json(nullptr);
    doc["ammd_shifted"] = cgm::to_json(ammd_shifted);
    doc["ammd_with_c0"] = ammd_with_c0 ? cgm::to_json(*ammd_with_c0) : nlohmann::json(nullptr);
    doc["fid"] = cgm::to_json(fid);
    doc["settings"] = {{"m_draws", settings.m_draws},
                       {"n_reps", settings.n_reps},
                       {"seed", settings.seed},
                       {"test_records", test_records},
                       {"test_pairs", test_pairs},
                       {"r", r},
                       {"kx", kx_name},
                       {"ky", ky_name},
                       {"kx_bandwidth_sq", kx_bandwidth_sq ? nlohmann::json(*kx_bandwidth_sq) : nlohmann::json(nullptr)},
                       {"ky_bandwidth_sq", ky_bandwidth_sq ? nlohmann::json(*ky_bandwidth_sq) : nlohmann::json(nullptr)}};
    return doc;
}

MetricReport evaluate_model(const ConditionalSampler& sampler, const Dataset& test, const Kernel& kx,
                            const Kernel& ky, const EvalSettings& settings) {
    if (settings.m_draws < 2) {
        throw InputError("evaluate: m_draws must be at least 2");
    }
    if (settings.n_reps < 1) {
        throw InputError("evaluate: n_reps must be at least 1");
    }
    const Batch pairs = test.joint_pairs();
    if (pairs.size() < 4) {
        throw InputError("evaluate: test set needs at least four (x, y) pairs");
    }
    const std::size_t r = test.min_outputs();

    GroupedBatch grouped;
    Points grouped_xs;
    for (const auto& rec : test.records) {
        grouped.groups.push_back({rec.x, Points(rec.ys.begin(), rec.ys.begin() + static_cast<long>(r)), {}});
        for (std::size_t j = 0; j < settings.m_draws; ++j) {
            grouped_xs.push_back(rec.x);
        }
    }
    const double c1 = c1_hat(kx, ky, pairs);
    const bool has_c0 = r >= 2;
    const double c0 = has_c0 ? c0_hat(ky, grouped) : 0.0;
    const GaussianMoments data_moments = GaussianMoments::from_samples(join_all(pairs.xs, pairs.ys));

    RunningStats jmmd, ammd, jmmd_full, ammd_full, fid;
    for (std::size_t rep = 0; rep < settings.n_reps; ++rep) {
        const std::uint64_t rep_seed = derive_seed(settings.seed, rep);

        // Joint metric: a fresh half split so that generated pairs never share a row with the data half.
        std::vector<std::size_t> order(pairs.size());
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 split_rng(derive_seed(rep_seed, 2));
        std::shuffle(order.begin(), order.end(), split_rng);
        const std::size_t n_data = pairs.size() - pairs.size() / 2;
        Batch data_half;
        GenBatch gen_half;
        for (std::size_t i = 0; i < order.size(); ++i) {
            if (i < n_data) {
                data_half.xs.push_back(pairs.xs[order[i]]);
                data_half.ys.push_back(pairs.ys[order[i]]);
            } else {
                gen_half.xs.push_back(pairs.xs[order[i]]);
            }
        }
        gen_half.yhats = sampler(gen_half.xs, derive_seed(rep_seed, 0));
        const double j = jmmd_hat(kx, ky, data_half, gen_half, Gradient::Skip).value;
        jmmd.add(j);
        jmmd_full.add(j + c1);

        const Points fid_draws = sampler(pairs.xs, derive_seed(rep_seed, 3));
        fid.add(frechet_gaussian(data_moments, GaussianMoments::from_samples(join_all(pairs.xs, fid_draws))));

        const Points draws = sampler(grouped_xs, derive_seed(rep_seed, 1));
        std::size_t k = 0;
        for (auto& g : grouped.groups) {
            g.yhats.assign(draws.begin() + static_cast<long>(k),
                           draws.begin() + static_cast<long>(k + settings.m_draws));
            k += settings.m_draws;
        }
        const double a = ammd_hat(ky, grouped, Gradient::Skip).value;
        ammd.add(a);
        if (has_c0) {
            ammd_full.add(a + c0);
        }
    }

    MetricReport report;
    report.jmmd_shifted = jmmd.summary();
    report.jmmd_with_c1 = jmmd_full.summary();
    report.ammd_shifted = ammd.summary();
    if (has_c0) {
        report.ammd_with_c0 = ammd_full.summary();
    }
    report.fid = fid.summary();
    report.settings = settings;
    report.test_records = test.records.size();
    report.test_pairs = pairs.size();
    report.r = r;
    report.kx_name = kx.name();
    report.ky_name = ky.name();
    report.kx_bandwidth_sq = bandwidth_of(kx);
    report.ky_bandwidth_sq = bandwidth_of(ky);
    return report;
}

MetricReport evaluate_model(const ConditionalGenerator& gen, const Dataset& test, const Kernel& kx, const Kernel& ky,
                            const EvalSettings& settings) {
    return evaluate_model(make_sampler(gen), test, kx, ky, settings);
}

double quantile_sorted(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) {
        throw InputError("quantile: no data");
    }
    if (!(q >= 0.0 && q <= 1.0)) {
        throw InputError("quantile: level must lie in [0, 1]");
    }
    const double h = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

ConditionalSummary conditional_summaries(const ConditionalSampler& sampler, const Vector& x, std::size_t draws,
                                         std::uint64_t seed, const std::vector<double>& levels) {
    if (draws < 2) {
        throw InputError("conditional_summaries: draws must be at least 2");
    }
    const Points ys = sampler(Points(draws, x), seed);
    const Eigen::Index d = ys.front().size();
    ConditionalSummary out;
    // Shifting by the first draw keeps a constant sample exactly constant.
    const Vector shift = ys.front();
    Vector offset = Vector::Zero(d);
    for (const auto& y : ys) {
        offset += y - shift;
    }
    offset /= static_cast<double>(draws);
    out.mean = shift + offset;
    out.std = Vector::Zero(d);
    for (const auto& y : ys) {
        out.std += (y - shift - offset).cwiseAbs2();
    }
    out.std = (out.std / static_cast<double>(draws - 1)).cwiseSqrt();
    out.levels = levels;
    out.quantiles.assign(levels.size(), Vector(d));
    for (Eigen::Index c = 0; c < d; ++c) {
        std::vector<double> column;
        column.reserve(draws);
        for (const auto& y : ys) {
            column.push_back(y(c));
        }
        std::sort(column.begin(), column.end());
        for (std::size_t i = 0; i < levels.size(); ++i) {
            out.quantiles[i](c) = quantile_sorted(column, levels[i]);
        }
    }
    return out;
}

}  // namespace cgm
