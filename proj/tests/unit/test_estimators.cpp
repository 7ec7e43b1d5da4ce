#include "cgm/estimators.hpp"
#include "cgm/oracle.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

namespace cgm {
namespace {

Vector vec(std::initializer_list<double> v) {
    Vector out(static_cast<Eigen::Index>(v.size()));
    std::copy(v.begin(), v.end(), out.begin());
    return out;
}

Vector scalar(double v) { return vec({v}); }

// X = 0, P: Y uniform on {-1, +1}, Q: Y = 0, Gaussian kernels with unit bandwidth.
// Hand expansion: E k(Y,Y') = (1 + e^-2)/2, E k(Y,0) = e^-1/2, k(0,0) = 1.
const double kPmC = 0.5 * (1.0 + std::exp(-2.0));
const double kPmMetric = kPmC - 2.0 * std::exp(-0.5) + 1.0;

// Averages f over the four equally likely output pairs drawn from {-1, +1}.
template <typename F>
double average_over_pm_pairs(F f) {
    double total = 0.0;
    for (double a : {-1.0, 1.0}) {
        for (double b : {-1.0, 1.0}) {
            total += 0.25 * f(a, b);
        }
    }
    return total;
}

TEST(Estimators, PmOneConstants) {
    EXPECT_NEAR(kPmC, 0.567668, 1e-6);
    EXPECT_NEAR(kPmMetric, 0.3546063, 1e-7);
    EXPECT_NEAR(kPmMetric - kPmC, -0.2130613, 1e-7);
}

TEST(Estimators, MmdIdenticalSamplesIsZero) {
    GaussianKernel k;
    const Vector a = vec({0.5, 1.0});
    EXPECT_DOUBLE_EQ(mmd2_unbiased(k, {a, a}, {a, a}), 0.0);
}

TEST(Estimators, MmdTwoPointsDistanceTwo) {
    GaussianKernel k;
    const Vector a = vec({0.0, 0.0});
    const Vector b = vec({1.0, 1.0});
    EXPECT_NEAR(mmd2_unbiased(k, {a, a}, {b, b}), 2.0 - 2.0 * std::exp(-1.0), 1e-15);
    EXPECT_NEAR(2.0 - 2.0 * std::exp(-1.0), 1.264241, 1e-6);
}

TEST(Estimators, MmdPmOneEnumeration) {
    GaussianKernel k;
    const double mean = average_over_pm_pairs(
        [&](double a, double b) { return mmd2_unbiased(k, {scalar(a), scalar(b)}, {scalar(0.0), scalar(0.0)}); });
    EXPECT_NEAR(mean, kPmMetric, 1e-14);
}

TEST(Estimators, MmdRejectsSingleSample) {
    GaussianKernel k;
    EXPECT_THROW((void)mmd2_unbiased(k, {scalar(0.0)}, {scalar(0.0), scalar(1.0)}), InputError);
}

TEST(Estimators, JmmdAllAtOnePoint) {
    GaussianKernel kx, ky;
    const Vector x = scalar(0.3);
    const Vector y = vec({1.0, 2.0});
    const Batch data{{x, x}, {y, y}};
    const GenBatch gen{{x, x}, {}, {y, y}};
    EXPECT_DOUBLE_EQ(jmmd_hat(kx, ky, data, gen).value, -1.0);
    EXPECT_DOUBLE_EQ(c1_hat(kx, ky, data), 1.0);
}

TEST(Estimators, JmmdSingleDataPoint) {
    GaussianKernel kx, ky;
    const Vector x = scalar(0.0);
    const Batch data{{x}, {scalar(0.0)}};
    const GenBatch gen{{scalar(1.0), scalar(1.0)}, {}, {scalar(0.5), scalar(0.5)}};
    const double c = kx.eval(x, scalar(1.0)) * ky.eval(scalar(0.0), scalar(0.5));
    EXPECT_NEAR(jmmd_hat(kx, ky, data, gen).value, -2.0 * c + 1.0, 1e-15);
}

TEST(Estimators, JmmdPmOneEnumeration) {
    GaussianKernel kx, ky;
    const Vector x = scalar(0.0);
    const GenBatch gen{{x, x}, {}, {scalar(0.0), scalar(0.0)}};
    const double mean = average_over_pm_pairs([&](double a, double b) {
        return jmmd_hat(kx, ky, Batch{{x, x}, {scalar(a), scalar(b)}}, gen, Gradient::Skip).value;
    });
    EXPECT_NEAR(mean, kPmMetric - kPmC, 1e-14);
    const double c1 = average_over_pm_pairs(
        [&](double a, double b) { return c1_hat(kx, ky, Batch{{x, x}, {scalar(a), scalar(b)}}); });
    EXPECT_NEAR(c1, kPmC, 1e-14);
}

TEST(Estimators, AmmdSingleGroupAtOnePoint) {
    GaussianKernel ky;
    const Vector y = scalar(2.0);
    GroupedBatch g{{Group{scalar(0.0), {y, y}, {y, y}}}};
    EXPECT_DOUBLE_EQ(ammd_hat(ky, g).value, -1.0);
    EXPECT_DOUBLE_EQ(c0_hat(ky, g), 1.0);
}

TEST(Estimators, AmmdAveragesGroups) {
    GaussianKernel ky;
    const Group g1{scalar(0.0), {scalar(0.1), scalar(-0.4)}, {scalar(0.3), scalar(0.9), scalar(-1.0)}};
    const Group g2{scalar(1.0), {scalar(1.5), scalar(0.2)}, {scalar(0.0), scalar(2.0), scalar(0.7)}};
    const double v1 = ammd_hat(ky, GroupedBatch{{g1}}).value;
    const double v2 = ammd_hat(ky, GroupedBatch{{g2}}).value;
    EXPECT_NEAR(ammd_hat(ky, GroupedBatch{{g1, g2}}).value, 0.5 * (v1 + v2), 1e-15);
}

TEST(Estimators, AmmdGroupFormula) {
    GaussianKernel ky;
    const Points ys{scalar(0.1), scalar(-0.4)};
    const Points yh{scalar(0.3), scalar(0.9), scalar(-1.0)};
    double cross = 0.0;
    for (const auto& y : ys) {
        for (const auto& h : yh) {
            cross += ky.eval(y, h);
        }
    }
    double within = 0.0;
    for (std::size_t j = 0; j < yh.size(); ++j) {
        for (std::size_t k = 0; k < yh.size(); ++k) {
            within += j == k ? 0.0 : ky.eval(yh[j], yh[k]);
        }
    }
    const double expected = -2.0 * cross / 6.0 + within / 6.0;
    EXPECT_NEAR(ammd_hat(ky, GroupedBatch{{Group{scalar(0.0), ys, yh}}}).value, expected, 1e-15);
}

TEST(Estimators, AmmdPmOneEnumeration) {
    GaussianKernel ky;
    const Vector x = scalar(0.0);
    const double mean = average_over_pm_pairs([&](double a, double b) {
        GroupedBatch g{{Group{x, {scalar(a), scalar(b)}, {scalar(0.0), scalar(0.0)}}}};
        return ammd_hat(ky, g, Gradient::Skip).value;
    });
    EXPECT_NEAR(mean, kPmMetric - kPmC, 1e-14);
    const double c0 = average_over_pm_pairs([&](double a, double b) {
        return c0_hat(ky, GroupedBatch{{Group{x, {scalar(a), scalar(b)}, {scalar(0.0), scalar(0.0)}}}});
    });
    EXPECT_NEAR(c0, kPmC, 1e-14);
}

TEST(Estimators, C0OffDiagonalPair) {
    GaussianKernel ky;
    GroupedBatch g{{Group{scalar(0.0), {scalar(-1.0), scalar(1.0)}, {scalar(0.0), scalar(0.0)}}}};
    EXPECT_NEAR(c0_hat(ky, g), std::exp(-2.0), 1e-15);
    EXPECT_NEAR(std::exp(-2.0), 0.135335, 1e-6);
}

TEST(Estimators, C1TwoJointPoints) {
    GaussianKernel kx, ky;
    const Batch data{{scalar(0.0), scalar(0.5)}, {scalar(1.0), scalar(-0.2)}};
    const double c = kx.eval(scalar(0.0), scalar(0.5)) * ky.eval(scalar(1.0), scalar(-0.2));
    EXPECT_NEAR(c1_hat(kx, ky, data), c, 1e-15);
}

TEST(Estimators, DegenerateMatchIsExactlyZero) {
    GaussianKernel kx(0.5), ky(2.0);
    const Vector x = vec({0.2, -1.0});
    const Vector y = scalar(3.0);
    const Batch data{{x, x, x}, {y, y, y}};
    const GenBatch gen{{x, x}, {}, {y, y}};
    EXPECT_EQ(jmmd_hat(kx, ky, data, gen).value + c1_hat(kx, ky, data), 0.0);
    GroupedBatch g{{Group{x, {y, y, y}, {y, y}}, Group{x, {y, y, y}, {y, y}}}};
    EXPECT_EQ(ammd_hat(ky, g).value + c0_hat(ky, g), 0.0);
}

TEST(Estimators, PermutationInvariance) {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> normal;
    GaussianKernel kx, ky(0.7);
    Batch data;
    GenBatch gen;
    for (int i = 0; i < 6; ++i) {
        data.xs.push_back(scalar(normal(rng)));
        data.ys.push_back(vec({normal(rng), normal(rng)}));
        gen.xs.push_back(scalar(normal(rng)));
        gen.yhats.push_back(vec({normal(rng), normal(rng)}));
    }
    const double j = jmmd_hat(kx, ky, data, gen, Gradient::Skip).value;
    const double c = cmmd_hat(kx, ky, data, gen, 0.1);
    std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
    Batch pdata;
    GenBatch pgen;
    for (auto p : perm) {
        pdata.xs.push_back(data.xs[p]);
        pdata.ys.push_back(data.ys[p]);
    }
    std::reverse(perm.begin(), perm.end());
    for (auto p : perm) {
        pgen.xs.push_back(gen.xs[p]);
        pgen.yhats.push_back(gen.yhats[p]);
    }
    EXPECT_NEAR(jmmd_hat(kx, ky, pdata, pgen, Gradient::Skip).value, j, 1e-13);
    EXPECT_NEAR(cmmd_hat(kx, ky, pdata, pgen, 0.1), c, 1e-10);

    Group g{scalar(0.0), data.ys, gen.yhats};
    const double a = ammd_hat(ky, GroupedBatch{{g}}).value;
    std::reverse(g.ys.begin(), g.ys.end());
    std::rotate(g.yhats.begin(), g.yhats.begin() + 2, g.yhats.end());
    EXPECT_NEAR(ammd_hat(ky, GroupedBatch{{g}}).value, a, 1e-13);
}

TEST(Estimators, CmmdIdenticalSamplesIsZero) {
    GaussianKernel kx, ky;
    const Batch data{{scalar(0.0), scalar(1.0), scalar(-0.5)}, {scalar(0.3), scalar(2.0), scalar(-1.0)}};
    const GenBatch gen{data.xs, {}, data.ys};
    EXPECT_NEAR(cmmd_hat(kx, ky, data, gen, 0.01), 0.0, 1e-10);
}

TEST(Estimators, CmmdSinglePair) {
    GaussianKernel kx, ky;
    const double lambda = 0.3;
    const Batch data{{scalar(0.4)}, {scalar(1.0)}};
    const GenBatch gen{{scalar(0.4)}, {}, {scalar(-0.5)}};
    const double expected = 2.0 * (1.0 - ky.eval(scalar(1.0), scalar(-0.5))) / ((1.0 + lambda) * (1.0 + lambda));
    EXPECT_NEAR(cmmd_hat(kx, ky, data, gen, lambda), expected, 1e-14);
}

TEST(Estimators, CmmdLinearMatchesFiniteFeatures) {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    LinearKernel kx, ky;
    Batch data;
    GenBatch gen;
    for (int i = 0; i < 3; ++i) {
        data.xs.push_back(vec({u(rng), u(rng)}));
        data.ys.push_back(scalar(u(rng)));
        gen.xs.push_back(vec({u(rng), u(rng)}));
        gen.yhats.push_back(scalar(u(rng)));
    }
    EXPECT_NEAR(cmmd_hat(kx, ky, data, gen, 0.05), oracle::finite_feature_cmmd(data, gen, 0.05), 1e-8);
}

double fd_check(const std::function<double(const Points&)>& f, const Points& yhats, const Points& grads) {
    const double h = 1e-5;
    double worst = 0.0;
    for (std::size_t j = 0; j < yhats.size(); ++j) {
        for (Eigen::Index c = 0; c < yhats[j].size(); ++c) {
            Points up = yhats, down = yhats;
            up[j](c) += h;
            down[j](c) -= h;
            const double fd = (f(up) - f(down)) / (2 * h);
            const double a = grads[j](c);
            worst = std::max(worst, std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-6}));
        }
    }
    return worst;
}

TEST(Estimators, GradientsMatchFiniteDifferences) {
    std::mt19937_64 rng(31);
    std::normal_distribution<double> normal;
    GaussianKernel kx(0.8), ky(0.6);
    Batch data;
    GenBatch gen;
    for (int i = 0; i < 5; ++i) {
        data.xs.push_back(scalar(normal(rng)));
        data.ys.push_back(vec({normal(rng), normal(rng)}));
    }
    for (int i = 0; i < 4; ++i) {
        gen.xs.push_back(scalar(normal(rng)));
        gen.yhats.push_back(vec({normal(rng), normal(rng)}));
    }
    auto jfun = [&](const Points& y) { return jmmd_hat(kx, ky, data, GenBatch{gen.xs, {}, y}, Gradient::Skip).value; };
    EXPECT_LT(fd_check(jfun, gen.yhats, jmmd_hat(kx, ky, data, gen).grads_wrt_generated), 1e-4);

    auto cfun = [&](const Points& y) { return cmmd_hat(kx, ky, data, GenBatch{gen.xs, {}, y}, 0.1); };
    EXPECT_LT(fd_check(cfun, gen.yhats, cmmd_hat_with_grad(kx, ky, data, gen, 0.1).grads_wrt_generated), 1e-4);

    GroupedBatch g{{Group{scalar(0.0), {data.ys[0], data.ys[1]}, {gen.yhats[0], gen.yhats[1]}},
                    Group{scalar(1.0), {data.ys[2], data.ys[3]}, {gen.yhats[2], gen.yhats[3]}}}};
    auto afun = [&](const Points& y) {
        GroupedBatch h = g;
        h.groups[0].yhats = {y[0], y[1]};
        h.groups[1].yhats = {y[2], y[3]};
        return ammd_hat(ky, h, Gradient::Skip).value;
    };
    EXPECT_LT(fd_check(afun, gen.yhats, ammd_hat(ky, g).grads_wrt_generated), 1e-4);
}

TEST(Estimators, RecommendedSettings) {
    const auto j = recommend_settings(Metric::Jmmd, 4);
    EXPECT_EQ(j.m, 2U);
    EXPECT_EQ(j.r, 2U);
    const auto a = recommend_settings(Metric::Ammd, 64);
    EXPECT_EQ(a.m, 2U);
    EXPECT_EQ(a.r, 1U);
    EXPECT_GE(a.n, 2U);
}

}  // namespace
}  // namespace cgm
