#include "cgm_cli/verify.hpp"

#include "cgm/estimators.hpp"
#include "cgm/kernels.hpp"
#include "cgm/nn.hpp"
#include "cgm/oracle.hpp"
#include "cgm/training.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <random>

namespace cgm::cli {

namespace {

using namespace cgm::oracle;

constexpr double kExactTol = 1e-12;
constexpr double kCmmdTol = 1e-8;
constexpr double kGradTol = 1e-4;
constexpr std::uint64_t kSeed = 20240611;

struct SizeCase {
    std::size_t n, m, r;
};

std::vector<DiscreteInstance> instances() {
    std::vector<DiscreteInstance> out{pm_one_instance()};
    std::mt19937_64 rng(kSeed);
    for (int i = 0; i < 6; ++i) {
        out.push_back(random_instance(rng));
    }
    RandomInstanceOptions two_d;
    two_d.x_dim = 2;
    two_d.y_dim = 2;
    two_d.max_support = 3;
    out.push_back(random_instance(rng, two_d));
    return out;
}

EstimatorFns estimator_fns(Mutation mutation) {
    EstimatorFns fns = EstimatorFns::library();
    if (mutation == Mutation::JmmdSign) {
        fns.jmmd = [](const Kernel& kx, const Kernel& ky, const Batch& d, const GenBatch& g) {
            return -jmmd_hat(kx, ky, d, g, Gradient::Skip).value;
        };
    }
    return fns;
}

// Tracks the worst absolute error of a family of comparisons.
struct Worst {
    double error = 0.0;
    std::string where;

    void update(double e, std::string label) {
        if (!(e <= error)) {
            error = e;
            where = std::move(label);
        }
    }
    [[nodiscard]] CheckResult result(std::string name, double tol) const {
        const bool ok = error <= tol;
        return {std::move(name), ok,
                fmt::format("max abs error {:.3e} (tol {:.0e}){}", error, tol, ok ? "" : " at " + where)};
    }
};

CheckResult check_unbiased(const std::vector<DiscreteInstance>& insts, EstimatorKind kind, const EstimatorFns& fns) {
    const GaussianKernel kx(1.0), ky(1.0);
    const std::vector<SizeCase> sizes = kind == EstimatorKind::Jmmd
                                            ? std::vector<SizeCase>{{1, 2, 1}, {1, 2, 2}, {1, 3, 2}}
                                        : kind == EstimatorKind::Ammd
                                            ? std::vector<SizeCase>{{1, 2, 1}, {1, 2, 2}, {2, 2, 1}, {1, 3, 1}}
                                            : std::vector<SizeCase>{{2, 2, 0}, {3, 2, 0}};
    Worst worst;
    for (std::size_t i = 0; i < insts.size(); ++i) {
        const ExactMetrics exact = exact_metrics(insts[i], kx, ky);
        const double target = kind == EstimatorKind::Jmmd   ? exact.jmmd2 - exact.c1
                              : kind == EstimatorKind::Ammd ? exact.ammd2 - exact.c0
                                                            : exact.mmd2_marginal_y;
        for (const auto& s : sizes) {
            const Moments mom = estimator_moments(insts[i], kind, {s.n, s.m, s.r}, kx, ky, fns);
            worst.update(std::abs(mom.mean - target), fmt::format("instance {} (n={}, m={}, r={})", i, s.n, s.m, s.r));
        }
    }
    const char* name = kind == EstimatorKind::Jmmd   ? "unbiased-jmmd"
                       : kind == EstimatorKind::Ammd ? "unbiased-ammd"
                                                     : "unbiased-mmd";
    return worst.result(name, kExactTol);
}

CheckResult check_variance(const std::vector<DiscreteInstance>& insts, EstimatorKind kind, const EstimatorFns& fns) {
    const GaussianKernel kx(1.0), ky(1.0);
    Worst worst;
    for (std::size_t i = 0; i < insts.size(); ++i) {
        if (kind == EstimatorKind::Jmmd) {
            for (const SizeCase s : {SizeCase{1, 2, 1}, SizeCase{1, 2, 2}, SizeCase{1, 3, 2}}) {
                const Moments mom = estimator_moments(insts[i], kind, {1, s.m, s.r}, kx, ky, fns);
                const double closed = closed_form_variance_jmmd(insts[i], s.m, s.r, kx, ky);
                worst.update(std::abs(mom.variance - closed), fmt::format("instance {} (m={}, r={})", i, s.m, s.r));
            }
        } else {
            for (const SizeCase s : {SizeCase{1, 2, 1}, SizeCase{1, 2, 2}, SizeCase{2, 2, 1}, SizeCase{1, 3, 1}}) {
                const Moments mom = estimator_moments(insts[i], kind, {s.n, s.m, s.r}, kx, ky, fns);
                const double closed = closed_form_variance_ammd(insts[i], s.n, s.m, s.r, ky).variance;
                worst.update(std::abs(mom.variance - closed),
                             fmt::format("instance {} (n={}, m={}, r={})", i, s.n, s.m, s.r));
            }
        }
    }
    return worst.result(kind == EstimatorKind::Jmmd ? "variance-jmmd" : "variance-ammd", kExactTol);
}

CheckResult check_metric_zero_and_positive(const std::vector<DiscreteInstance>& insts) {
    const GaussianKernel kx(1.0), ky(1.0);
    double worst_zero = 0.0;
    double smallest_gap = std::numeric_limits<double>::infinity();
    for (const auto& base : insts) {
        DiscreteInstance matched = base;
        for (auto& c : matched.conditions) {
            c.q_cond = c.p_cond;
        }
        const ExactMetrics zero = exact_metrics(matched, kx, ky);
        worst_zero = std::max({worst_zero, std::abs(zero.jmmd2), std::abs(zero.ammd2)});
        for (std::size_t i = 0; i < matched.conditions.size(); ++i) {
            DiscreteInstance shifted = matched;
            for (auto& atom : shifted.conditions[i].q_cond) {
                atom.point.array() += 1.5;
            }
            const ExactMetrics diff = exact_metrics(shifted, kx, ky);
            smallest_gap = std::min({smallest_gap, diff.jmmd2, diff.ammd2});
        }
    }
    const bool ok = worst_zero <= 1e-14 && smallest_gap > 1e-4;
    return {"metric-identity", ok,
            fmt::format("matched max |value| {:.1e}, differing min value {:.3e}", worst_zero, smallest_gap)};
}

CheckResult check_inequality() {
    std::mt19937_64 rng(derive_seed(kSeed, 7));
    std::uniform_real_distribution<double> bw(0.3, 3.0);
    std::size_t violations = 0;
    double min_slack = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 200; ++i) {
        RandomInstanceOptions opt;
        opt.max_x = 4;
        const DiscreteInstance inst = random_instance(rng, opt);
        const GaussianKernel kx(bw(rng)), ky(bw(rng));
        const InequalityCheck chk = check_metric_inequalities(inst, kx, ky);
        violations += chk.thm7_holds ? 0 : 1;
        min_slack = std::min(min_slack, chk.slack);
    }
    double worst_equality = 0.0;
    for (int i = 0; i < 20; ++i) {
        RandomInstanceOptions opt;
        opt.max_x = 1;
        const DiscreteInstance inst = random_instance(rng, opt);
        const GaussianKernel kx(bw(rng)), ky(bw(rng));
        worst_equality = std::max(worst_equality, std::abs(check_metric_inequalities(inst, kx, ky).slack));
    }
    const bool ok = violations == 0 && worst_equality < 1e-12;
    return {"jmmd-ammd-inequality", ok,
            fmt::format("{} violations in 200, min slack {:.3e}; single-x max |slack| {:.1e}", violations, min_slack,
                        worst_equality)};
}

CheckResult check_cmmd() {
    std::mt19937_64 rng(derive_seed(kSeed, 8));
    std::uniform_int_distribution<int> size(3, 6), dim(1, 2);
    std::uniform_real_distribution<double> coord(-1.5, 1.5), lam(0.01, 1.0);
    auto point = [&](Eigen::Index d) {
        Vector v(d);
        for (Eigen::Index i = 0; i < d; ++i) {
            v(i) = coord(rng);
        }
        return v;
    };
    Worst worst;
    for (int trial = 0; trial < 50; ++trial) {
        const Eigen::Index dx = dim(rng), dy = dim(rng);
        const int n = size(rng), m = size(rng);
        Batch data;
        GenBatch gen;
        for (int i = 0; i < n; ++i) {
            data.xs.push_back(point(dx));
            data.ys.push_back(point(dy));
        }
        for (int j = 0; j < m; ++j) {
            gen.xs.push_back(point(dx));
            gen.yhats.push_back(point(dy));
        }
        const double lambda = lam(rng);
        const LinearKernel kx, ky;
        worst.update(std::abs(cmmd_hat(kx, ky, data, gen, lambda) - finite_feature_cmmd(data, gen, lambda)),
                     fmt::format("trial {}", trial));
    }
    return worst.result("cmmd-finite-feature", kCmmdTol);
}

// Random small networks and data. Draws with a hidden pre-activation within
// 1e-3 of the ReLU kink are discarded, since central differences straddle it.
CheckResult check_gradients(bool joint) {
    std::mt19937_64 rng(derive_seed(kSeed, joint ? 9 : 10));
    std::uniform_int_distribution<int> small(1, 2), xi_dim(1, 3), width(3, 6), count(2, 5), depth(1, 2);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> bw(0.5, 2.0);
    auto point = [&](Eigen::Index d) {
        Vector v(d);
        for (Eigen::Index i = 0; i < d; ++i) {
            v(i) = normal(rng);
        }
        return v;
    };
    double worst = 0.0;
    int accepted = 0, skipped = 0;
    for (int attempt = 0; accepted < 20 && attempt < 200; ++attempt) {
        const Eigen::Index dx = small(rng), dxi = xi_dim(rng), dy = small(rng);
        std::vector<Eigen::Index> hidden(static_cast<std::size_t>(depth(rng)));
        for (auto& h : hidden) {
            h = width(rng);
        }
        auto gen = ConditionalGenerator::init(dx, dxi, dy, hidden, rng());
        Vector params = gen.net().parameters();
        for (Eigen::Index i = 0; i < params.size(); ++i) {
            params(i) += 0.1 * normal(rng);
        }
        gen.net().set_parameters(params);

        KernelPtr kx = std::make_shared<GaussianKernel>(bw(rng));
        KernelPtr ky;
        if (attempt % 3 == 2) {
            ky = std::make_shared<DeepKernel>(std::make_shared<TanhProjectionEncoder>(dy, 3, rng()),
                                              GaussianKernel(bw(rng)), GaussianKernel(bw(rng)), 0.2);
        } else {
            ky = std::make_shared<GaussianKernel>(bw(rng));
        }

        DifferentiableLoss loss;
        if (joint) {
            Batch data;
            Points gxs, xis;
            const int r = count(rng), m = count(rng);
            for (int l = 0; l < r; ++l) {
                data.xs.push_back(point(dx));
                data.ys.push_back(point(dy));
            }
            for (int j = 0; j < m; ++j) {
                gxs.push_back(point(dx));
                xis.push_back(point(dxi));
            }
            loss = jmmd_loss(kx, ky, data, gxs, xis, dx);
        } else {
            const int n = count(rng), r = count(rng), m = count(rng);
            std::vector<Record> groups;
            std::vector<Points> xis;
            for (int g = 0; g < n; ++g) {
                Record rec{point(dx), {}};
                for (int l = 0; l < r; ++l) {
                    rec.ys.push_back(point(dy));
                }
                groups.push_back(std::move(rec));
                Points noise;
                for (int j = 0; j < m; ++j) {
                    noise.push_back(point(dxi));
                }
                xis.push_back(std::move(noise));
            }
            loss = ammd_loss(ky, groups, xis, dx);
        }
        if (loss.min_abs_preactivation(gen.net()) < 1e-3) {
            ++skipped;
            continue;
        }
        const GradCheckReport rep = grad_check(gen.net(), loss, kGradTol);
        worst = std::max(worst, rep.max_rel_error);
        ++accepted;
    }
    const bool ok = accepted == 20 && worst < kGradTol;
    return {joint ? "gradient-jmmd" : "gradient-ammd", ok,
            fmt::format("{} configurations ({} skipped near kink), max rel error {:.2e} (tol {:.0e})", accepted,
                        skipped, worst, kGradTol)};
}

}  // namespace

Mutation parse_mutation(const std::string& name) {
    if (name.empty() || name == "none") {
        return Mutation::None;
    }
    if (name == "jmmd-sign") {
        return Mutation::JmmdSign;
    }
    throw ConfigError(fmt::format("unknown mutation '{}' (expected jmmd-sign)", name));
}

std::vector<CheckResult> run_verification(Mutation mutation) {
    const auto insts = instances();
    const EstimatorFns fns = estimator_fns(mutation);
    std::vector<CheckResult> out;
    out.push_back(check_unbiased(insts, EstimatorKind::Jmmd, fns));
    out.push_back(check_unbiased(insts, EstimatorKind::Ammd, fns));
    out.push_back(check_unbiased(insts, EstimatorKind::Mmd, fns));
    out.push_back(check_variance(insts, EstimatorKind::Jmmd, fns));
    out.push_back(check_variance(insts, EstimatorKind::Ammd, fns));
    out.push_back(check_metric_zero_and_positive(insts));
    out.push_back(check_inequality());
    out.push_back(check_cmmd());
    out.push_back(check_gradients(true));
    out.push_back(check_gradients(false));
    return out;
}

}  // namespace cgm::cli
