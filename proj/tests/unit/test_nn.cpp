#include "cgm/nn.hpp"
#include "cgm/training.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <cmath>
#include <random>

namespace cgm {
namespace {

Matrix random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
    std::normal_distribution<double> normal;
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = normal(rng);
    }
    return m;
}

// 0.5 * sum of squared outputs on a fixed batch.
DifferentiableLoss quadratic_loss(Matrix inputs) {
    DifferentiableLoss loss;
    loss.value = [inputs](const Mlp& net) { return 0.5 * net.forward(inputs).output.squaredNorm(); };
    loss.gradient = [inputs](const Mlp& net) {
        const ForwardCache cache = net.forward(inputs);
        return net.backward(cache, cache.output);
    };
    return loss;
}

TEST(Nn, ZeroNetworkGivesZeroOutput) {
    Mlp net({3, 5, 2});
    EXPECT_EQ(net.forward(Vector(Vector::Ones(3))), Vector::Zero(2));
}

TEST(Nn, IdentityLayerPassesInputThrough) {
    Mlp net({3, 3});
    net.set_layer(0, Matrix::Identity(3, 3), Vector::Zero(3));
    const Vector x = Vector::LinSpaced(3, -1.0, 2.0);
    EXPECT_EQ(net.forward(x), x);
}

TEST(Nn, ForwardIsDeterministic) {
    const Mlp net = Mlp::he_uniform({4, 8, 8, 2}, 3);
    std::mt19937_64 rng(1);
    const Matrix x = random_matrix(rng, 4, 6);
    EXPECT_EQ(net.forward(x).output, net.forward(x).output);
    EXPECT_EQ(Mlp::he_uniform({4, 8, 8, 2}, 3).parameters(), net.parameters());
}

TEST(Nn, HeUniformRange) {
    const Mlp net = Mlp::he_uniform({10, 32, 1}, 9);
    EXPECT_LE(net.weights(0).cwiseAbs().maxCoeff(), std::sqrt(6.0 / 10.0));
    EXPECT_LE(net.weights(1).cwiseAbs().maxCoeff(), std::sqrt(6.0 / 32.0));
    EXPECT_EQ(net.bias(0), Vector::Zero(32));
}

TEST(Nn, ZeroOutputGradientGivesZeroParameterGradient) {
    const Mlp net = Mlp::he_uniform({3, 6, 2}, 4);
    std::mt19937_64 rng(2);
    const ForwardCache cache = net.forward(random_matrix(rng, 3, 5));
    EXPECT_EQ(net.backward(cache, Matrix::Zero(2, 5)), Vector::Zero(net.parameter_count()));
}

TEST(Nn, LinearLayerWeightGradientIsInput) {
    Mlp net({3, 1});
    net.set_layer(0, Matrix::Constant(1, 3, 0.7), Vector::Constant(1, -0.2));
    Matrix x(3, 1);
    x << 1.5, -2.0, 0.25;
    const Vector g = net.backward(net.forward(x), Matrix::Ones(1, 1));
    ASSERT_EQ(g.size(), 4);
    EXPECT_EQ(g.head(3), x.col(0));
    EXPECT_EQ(g(3), 1.0);
}

TEST(Nn, StaleCacheIsRejected) {
    Mlp net = Mlp::he_uniform({2, 3, 1}, 1);
    const ForwardCache cache = net.forward(Matrix(Matrix::Ones(2, 1)));
    net.set_parameters(net.parameters());
    EXPECT_THROW((void)net.backward(cache, Matrix::Ones(1, 1)), InputError);
    const Mlp other = net;
    EXPECT_THROW((void)other.backward(net.forward(Matrix(Matrix::Ones(2, 1))), Matrix::Ones(1, 1)), InputError);
}

TEST(Nn, BackwardMatchesFiniteDifferences) {
    const Mlp net = Mlp::he_uniform({3, 7, 2}, 5);
    std::mt19937_64 rng(6);
    const GradCheckReport r = grad_check(net, quadratic_loss(random_matrix(rng, 3, 4)), 1e-4);
    EXPECT_TRUE(r.passed) << r.max_rel_error;
    EXPECT_LT(r.max_rel_error, 1e-4);
    EXPECT_EQ(r.parameters_checked, static_cast<std::size_t>(net.parameter_count()));
}

TEST(Nn, LinearQuadraticGradientIsExact) {
    const Mlp net = Mlp::he_uniform({4, 3}, 8);
    std::mt19937_64 rng(7);
    const GradCheckReport r = grad_check(net, quadratic_loss(random_matrix(rng, 4, 5)), 1e-9);
    EXPECT_TRUE(r.passed);
    EXPECT_LT(r.max_rel_error, 1e-9);
}

TEST(Nn, JointLossThroughReluNetwork) {
    std::mt19937_64 rng(12);
    std::normal_distribution<double> normal;
    const ConditionalGenerator gen = ConditionalGenerator::init(1, 3, 1, {32, 32}, 21);
    Batch data;
    Points gen_xs, xis;
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int i = 0; i < 6; ++i) {
        data.xs.push_back(Vector::Constant(1, normal(rng)));
        data.ys.push_back(Vector::Constant(1, normal(rng)));
        gen_xs.push_back(data.xs.back());
        xis.push_back(Vector::NullaryExpr(3, [&](Eigen::Index) { return u(rng); }));
    }
    const DifferentiableLoss loss = jmmd_loss(std::make_shared<GaussianKernel>(), std::make_shared<GaussianKernel>(),
                                              data, gen_xs, xis, 1);
    const GradCheckReport r = grad_check(gen.net(), loss, 1e-4);
    EXPECT_FALSE(r.near_kink);
    EXPECT_TRUE(r.passed) << r.max_rel_error;
}

TEST(Nn, EmptyNetworkIsRejected) {
    EXPECT_THROW(Mlp({3}), ConfigError);
    EXPECT_THROW(Mlp({3, 0, 1}), ConfigError);
}

TEST(Nn, AdamZeroGradientLeavesParameters) {
    Vector p = Vector::LinSpaced(5, -1.0, 1.0);
    const Vector before = p;
    AdamState s(5);
    adam_step(s, p, Vector::Zero(5));
    EXPECT_EQ(p, before);
}

TEST(Nn, AdamFirstStepIsLrTimesSign) {
    Vector p = Vector::Zero(4);
    Vector g(4);
    g << 3.0, -0.01, 250.0, -7.5;
    AdamState s(4, AdamConfig{0.01});
    adam_step(s, p, g);
    for (Eigen::Index i = 0; i < 4; ++i) {
        EXPECT_LE(std::abs(p(i)), 0.01 * (1.0 + 1e-6));
        EXPECT_NEAR(p(i), -0.01 * (g(i) > 0 ? 1.0 : -1.0), 1e-7);
    }
}

TEST(Nn, AdamConstantGradientDecreasesMonotonically) {
    Vector p = Vector::Constant(1, 2.0);
    AdamState s(1);
    double last = p(0);
    for (int t = 0; t < 100; ++t) {
        adam_step(s, p, Vector::Constant(1, 0.3));
        EXPECT_LT(p(0), last);
        last = p(0);
    }
}

TEST(Nn, AdamFirstStepIgnoresLossScale) {
    const Mlp net = Mlp::he_uniform({3, 5, 1}, 2);
    std::mt19937_64 rng(3);
    const Matrix x = random_matrix(rng, 3, 4);
    const Vector g = quadratic_loss(x).gradient(net);
    Vector p1 = net.parameters(), p2 = net.parameters();
    AdamState s1(net.parameter_count()), s2(net.parameter_count());
    adam_step(s1, p1, g);
    adam_step(s2, p2, 40.0 * g);
    const Vector d1 = p1 - net.parameters();
    const Vector d2 = p2 - net.parameters();
    EXPECT_EQ(d1.cwiseSign(), d2.cwiseSign());
}

TEST(Nn, JsonRoundTrip) {
    const Mlp net = Mlp::he_uniform({2, 4, 3}, 11);
    const Mlp back = mlp_from_json(mlp_to_json(net));
    EXPECT_EQ(back.layer_dims(), net.layer_dims());
    EXPECT_EQ(back.parameters(), net.parameters());
    nlohmann::json bad = mlp_to_json(net);
    bad["layers"][0]["bias"] = std::vector<double>{1.0};
    EXPECT_THROW((void)mlp_from_json(bad), SchemaError);
    EXPECT_THROW((void)mlp_from_json(nlohmann::json::object()), SchemaError);
}

}  // namespace
}  // namespace cgm
