#include "cgm/oracle.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace cgm::oracle {
namespace {

Vector scalar(double v) { return Vector::Constant(1, v); }

const double kPmC = 0.5 * (1.0 + std::exp(-2.0));
const double kPmMetric = kPmC - 2.0 * std::exp(-0.5) + 1.0;

DiscreteInstance matched_instance() {
    DiscreteInstance inst;
    inst.conditions.push_back({scalar(0.0), 0.4, {{scalar(-1.0), 0.5}, {scalar(1.0), 0.5}},
                               {{scalar(-1.0), 0.5}, {scalar(1.0), 0.5}}});
    inst.conditions.push_back({scalar(1.0), 0.6, {{scalar(0.5), 1.0}}, {{scalar(0.5), 1.0}}});
    return inst;
}

// Conditionals agree at x = a and differ at x = b.
DiscreteInstance two_x_instance() {
    DiscreteInstance inst = matched_instance();
    inst.conditions[1].q_cond = {{scalar(0.0), 0.3}, {scalar(1.5), 0.7}};
    return inst;
}

DiscreteInstance point_mass() {
    DiscreteInstance inst;
    inst.conditions.push_back({scalar(0.7), 1.0, {{scalar(2.0), 1.0}}, {{scalar(2.0), 1.0}}});
    return inst;
}

TEST(Oracle, PmOneExactMetrics) {
    GaussianKernel k;
    const ExactMetrics e = exact_metrics(pm_one_instance(), k, k);
    EXPECT_NEAR(e.jmmd2, kPmMetric, 1e-14);
    EXPECT_NEAR(e.ammd2, kPmMetric, 1e-14);
    EXPECT_NEAR(e.mmd2_marginal_y, kPmMetric, 1e-14);
    EXPECT_NEAR(e.c0, kPmC, 1e-14);
    EXPECT_NEAR(e.c1, kPmC, 1e-14);
    EXPECT_DOUBLE_EQ(e.e_k1xx, 1.0);
}

TEST(Oracle, MatchedInstanceIsZero) {
    GaussianKernel k;
    const ExactMetrics e = exact_metrics(matched_instance(), k, k);
    EXPECT_EQ(e.jmmd2, 0.0);
    EXPECT_EQ(e.ammd2, 0.0);
    EXPECT_GT(e.c0, 0.0);
}

TEST(Oracle, AmmdDecomposesOverX) {
    GaussianKernel k;
    const DiscreteInstance inst = two_x_instance();
    const ExactMetrics e = exact_metrics(inst, k, k);

    // MMD^2 between the two conditionals at x = b, summed by hand.
    const auto& cond = inst.conditions[1];
    auto cross = [&](const std::vector<Atom>& a, const std::vector<Atom>& b) {
        double s = 0.0;
        for (const auto& u : a) {
            for (const auto& v : b) {
                s += u.prob * v.prob * k.eval(u.point, v.point);
            }
        }
        return s;
    };
    const double mmd_b = cross(cond.p_cond, cond.p_cond) - 2 * cross(cond.p_cond, cond.q_cond) +
                         cross(cond.q_cond, cond.q_cond);
    EXPECT_NEAR(e.ammd2, cond.px * mmd_b, 1e-14);
    EXPECT_GT(e.jmmd2, 1e-4);
}

TEST(Oracle, PointMassMoments) {
    GaussianKernel k;
    const DiscreteInstance inst = point_mass();
    const ExactMetrics e = exact_metrics(inst, k, k);
    const Moments j = estimator_moments(inst, EstimatorKind::Jmmd, {1, 2, 2}, k, k);
    EXPECT_NEAR(j.mean, -e.c1, 1e-15);
    EXPECT_EQ(j.variance, 0.0);
    EXPECT_EQ(closed_form_variance_jmmd(inst, 2, 2, k, k), 0.0);
    EXPECT_EQ(closed_form_variance_ammd(inst, 1, 2, 2, k).variance, 0.0);
}

TEST(Oracle, PmOneJointMoments) {
    GaussianKernel k;
    const DiscreteInstance inst = pm_one_instance();
    const Moments j = estimator_moments(inst, EstimatorKind::Jmmd, {1, 2, 2}, k, k);
    EXPECT_NEAR(j.mean, kPmMetric - kPmC, 1e-14);
    EXPECT_NEAR(j.variance, closed_form_variance_jmmd(inst, 2, 2, k, k), 1e-12);

    // Every data point sits at distance 1 from the point mass, so the estimator is constant here.
    EXPECT_NEAR(j.variance, 0.0, 1e-15);
    const Moments j4 = estimator_moments(inst, EstimatorKind::Jmmd, {1, 4, 4}, k, k);
    EXPECT_NEAR(j4.mean, kPmMetric - kPmC, 1e-14);
}

TEST(Oracle, JointVarianceShrinksOnEnumeratedInstance) {
    GaussianKernel k;
    const DiscreteInstance inst = two_x_instance();
    const Moments j2 = estimator_moments(inst, EstimatorKind::Jmmd, {1, 2, 2}, k, k);
    const Moments j4 = estimator_moments(inst, EstimatorKind::Jmmd, {1, 4, 4}, k, k);
    EXPECT_GT(j2.variance, 0.0);
    EXPECT_LT(j4.variance, j2.variance);
    EXPECT_NEAR(j4.variance, closed_form_variance_jmmd(inst, 4, 4, k, k), 1e-12);
}

TEST(Oracle, PmOneGroupedMoments) {
    GaussianKernel k;
    const DiscreteInstance inst = pm_one_instance();
    const Moments a = estimator_moments(inst, EstimatorKind::Ammd, {1, 2, 2}, k, k);
    EXPECT_NEAR(a.mean, kPmMetric - kPmC, 1e-14);
    const AmmdVariance cf = closed_form_variance_ammd(inst, 1, 2, 2, k);
    EXPECT_NEAR(a.variance, cf.variance, 1e-12);
    EXPECT_EQ(cf.k0, 0.0);
}

TEST(Oracle, SingleXHasNoK0) {
    GaussianKernel k;
    std::mt19937_64 rng(2);
    RandomInstanceOptions opt;
    opt.max_x = 1;
    for (int t = 0; t < 5; ++t) {
        const DiscreteInstance inst = random_instance(rng, opt);
        EXPECT_EQ(closed_form_variance_ammd(inst, 1, 2, 1, k).k0, 0.0);
    }
}

TEST(Oracle, GroupedVarianceHalvesWithDoubleGroups) {
    GaussianKernel k;
    const DiscreteInstance inst = two_x_instance();
    const double v1 = closed_form_variance_ammd(inst, 1, 2, 2, k).variance;
    const double v2 = closed_form_variance_ammd(inst, 2, 2, 2, k).variance;
    const double v4 = closed_form_variance_ammd(inst, 4, 2, 2, k).variance;
    EXPECT_GT(v1, 0.0);
    EXPECT_NEAR(v2, 0.5 * v1, 1e-15);
    EXPECT_NEAR(v4, 0.5 * v2, 1e-15);
    const Moments a2 = estimator_moments(inst, EstimatorKind::Ammd, {2, 2, 2}, k, k);
    EXPECT_NEAR(a2.variance, v2, 1e-12);
}

TEST(Oracle, RandomInstancesUnbiasedWithExactVariance) {
    std::mt19937_64 rng(99);
    GaussianKernel kx(0.8), ky(1.2);
    RandomInstanceOptions opt;
    opt.max_x = 2;
    opt.max_support = 2;
    for (int t = 0; t < 5; ++t) {
        const DiscreteInstance inst = random_instance(rng, opt);
        const ExactMetrics e = exact_metrics(inst, kx, ky);
        const Moments j = estimator_moments(inst, EstimatorKind::Jmmd, {1, 2, 2}, kx, ky);
        EXPECT_NEAR(j.mean, e.jmmd2 - e.c1, 1e-12);
        EXPECT_NEAR(j.variance, closed_form_variance_jmmd(inst, 2, 2, kx, ky), 1e-12);
        const Moments a = estimator_moments(inst, EstimatorKind::Ammd, {1, 2, 2}, kx, ky);
        EXPECT_NEAR(a.mean, e.ammd2 - e.c0, 1e-12);
        EXPECT_NEAR(a.variance, closed_form_variance_ammd(inst, 1, 2, 2, ky).variance, 1e-12);
        const Moments m = estimator_moments(inst, EstimatorKind::Mmd, {2, 2, 2}, kx, ky);
        EXPECT_NEAR(m.mean, e.mmd2_marginal_y, 1e-12);
        EXPECT_GE(e.jmmd2, -1e-14);
        EXPECT_GE(e.ammd2, -1e-14);
    }
}

TEST(Oracle, JointVarianceShrinksWithSampleSize) {
    std::mt19937_64 rng(5);
    GaussianKernel k;
    for (int t = 0; t < 10; ++t) {
        const DiscreteInstance inst = random_instance(rng);
        EXPECT_LE(closed_form_variance_jmmd(inst, 4, 4, k, k), closed_form_variance_jmmd(inst, 2, 2, k, k) + 1e-15);
        EXPECT_LE(closed_form_variance_jmmd(inst, 8, 8, k, k), closed_form_variance_jmmd(inst, 4, 4, k, k) + 1e-15);
    }
}

TEST(Oracle, BrokenEstimatorIsNoticed) {
    GaussianKernel k;
    EstimatorFns fns = EstimatorFns::library();
    auto good = fns.jmmd;
    fns.jmmd = [good](const Kernel& kx, const Kernel& ky, const Batch& d, const GenBatch& g) {
        return -good(kx, ky, d, g);
    };
    const Moments j = estimator_moments(pm_one_instance(), EstimatorKind::Jmmd, {1, 2, 2}, k, k, fns);
    EXPECT_GT(std::abs(j.mean - (kPmMetric - kPmC)), 0.1);
}

TEST(Oracle, FiniteFeatureIdenticalSamplesIsZero) {
    const Batch data{{scalar(0.5), scalar(-1.0)}, {scalar(2.0), scalar(0.1)}};
    const GenBatch gen{data.xs, {}, data.ys};
    EXPECT_NEAR(finite_feature_cmmd(data, gen, 0.1), 0.0, 1e-14);
}

TEST(Oracle, FiniteFeatureScalarCase) {
    const double x = 0.8, y = 1.3, yh = -0.4, lambda = 0.2;
    const Batch data{{scalar(x)}, {scalar(y)}};
    const GenBatch gen{{scalar(x)}, {}, {scalar(yh)}};
    const double expected = std::pow((y - yh) * x / (x * x + lambda), 2);
    EXPECT_NEAR(finite_feature_cmmd(data, gen, lambda), expected, 1e-14);
}

TEST(Oracle, InequalityOnRandomInstances) {
    std::mt19937_64 rng(7);
    GaussianKernel kx(0.5), ky(1.0);
    for (int t = 0; t < 200; ++t) {
        const DiscreteInstance inst = random_instance(rng);
        const InequalityCheck c = check_metric_inequalities(inst, kx, ky);
        EXPECT_TRUE(c.thm7_holds) << "instance " << t << " slack " << c.slack;
        EXPECT_GE(c.slack, -1e-12);
    }
}

TEST(Oracle, InequalityIsTightForSingleX) {
    std::mt19937_64 rng(8);
    GaussianKernel kx, ky(0.6);
    RandomInstanceOptions opt;
    opt.max_x = 1;
    for (int t = 0; t < 10; ++t) {
        const InequalityCheck c = check_metric_inequalities(random_instance(rng, opt), kx, ky);
        EXPECT_TRUE(c.thm7_holds);
        EXPECT_LT(std::abs(c.slack), 1e-12);
    }
    const InequalityCheck same = check_metric_inequalities(matched_instance(), kx, ky);
    EXPECT_TRUE(same.thm7_holds);
    EXPECT_EQ(same.slack, 0.0);
}

TEST(Oracle, ValidateRejectsBadLaws) {
    DiscreteInstance inst = matched_instance();
    inst.conditions[0].px = 0.5;
    EXPECT_THROW(inst.validate(), InputError);
    inst = matched_instance();
    inst.conditions[1].q_cond[0].prob = -1.0;
    EXPECT_THROW(inst.validate(), InputError);
}

}  // namespace
}  // namespace cgm::oracle
