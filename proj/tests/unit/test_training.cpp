#include "cgm/evalreport.hpp"
#include "cgm/training.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

namespace cgm {
namespace {

namespace fs = std::filesystem;

Dataset gaussian_x_dataset(std::size_t n, std::uint64_t seed, const std::function<double(double)>& y_of_x) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    Dataset ds;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = normal(rng);
        ds.records.push_back({Vector::Constant(1, x), {Vector::Constant(1, y_of_x(x))}});
    }
    return ds;
}

Dataset normalized_synthetic(SyntheticSpec spec) {
    const SyntheticData syn = gen_synthetic(spec);
    return apply_normalization(syn.dataset, fit_normalization(syn.dataset));
}

TrainConfig small_config(LossKind loss, std::size_t epochs) {
    TrainConfig cfg;
    cfg.loss = loss;
    cfg.epochs = epochs;
    cfg.batch_size = 64;
    cfg.hidden = {16, 16};
    cfg.seed = 42;
    return cfg;
}

double window_mean(const TrainHistory& h, std::size_t begin, std::size_t len) {
    double s = 0.0;
    for (std::size_t i = begin; i < begin + len; ++i) {
        s += h.epochs[i].mean_loss;
    }
    return s / static_cast<double>(len);
}

TEST(Training, MinibatchesOfFullDataset) {
    const auto b = make_minibatches(8, 8, 1);
    ASSERT_EQ(b.size(), 1U);
    EXPECT_EQ(std::set<std::size_t>(b[0].begin(), b[0].end()).size(), 8U);
}

TEST(Training, MinibatchesPartition) {
    const auto b = make_minibatches(10, 4, 3);
    ASSERT_EQ(b.size(), 3U);
    EXPECT_EQ(b[0].size(), 4U);
    EXPECT_EQ(b[1].size(), 4U);
    EXPECT_EQ(b[2].size(), 2U);
    std::set<std::size_t> all;
    for (const auto& chunk : b) {
        all.insert(chunk.begin(), chunk.end());
    }
    EXPECT_EQ(all.size(), 10U);
    EXPECT_EQ(*all.rbegin(), 9U);
    EXPECT_EQ(make_minibatches(10, 4, 3), b);
    EXPECT_NE(make_minibatches(10, 4, 4), b);
}

TEST(Training, ConfigValidation) {
    TrainConfig cfg;
    EXPECT_NO_THROW(cfg.validate());
    cfg.loss = LossKind::Ammd;
    cfg.m = 1;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = {};
    cfg.epochs = 0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = {};
    cfg.lr = -1.0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    EXPECT_EQ(parse_loss_kind("ammd"), LossKind::Ammd);
    EXPECT_EQ(to_string(LossKind::Cmmd), "cmmd");
    EXPECT_THROW((void)parse_loss_kind("mse"), ConfigError);
}

TEST(Training, ZeroLearningRateKeepsParameters) {
    SyntheticSpec spec;
    spec.count = 100;
    spec.outputs_per_x = 2;
    const Dataset ds = normalized_synthetic(spec);
    for (LossKind loss : {LossKind::Ammd, LossKind::Jmmd, LossKind::Cmmd}) {
        TrainConfig cfg = small_config(loss, 3);
        cfg.lr = 0.0;
        const TrainResult res = train(cfg, ds);
        const ConditionalGenerator init = ConditionalGenerator::init(1, cfg.xi_dim, 1, cfg.hidden, derive_seed(cfg.seed, 0));
        EXPECT_EQ(res.generator.net().parameters(), init.net().parameters()) << to_string(loss);
        EXPECT_EQ(res.history.epochs.size(), 3U);
    }
}

TEST(Training, GroupedLoopEvaluatesTheLibraryEstimator) {
    SyntheticSpec spec;
    spec.count = 70;
    spec.outputs_per_x = 3;
    const Dataset ds = normalized_synthetic(spec);
    TrainConfig cfg = small_config(LossKind::Ammd, 2);
    cfg.m = 4;
    cfg.batch_size = 32;
    const TrainingKernels k = make_training_kernels(cfg, ds);
    std::size_t steps = 0;
    std::vector<double> per_step;
    cfg.on_step = [&](const StepRecord& rec) {
        ASSERT_NE(rec.grouped, nullptr);
        EXPECT_EQ(rec.loss, ammd_hat(*k.ky, *rec.grouped, Gradient::Skip).value);
        std::set<double> xs;
        for (const auto& g : rec.grouped->groups) {
            EXPECT_EQ(g.yhats.size(), 4U);
            EXPECT_EQ(g.ys.size(), 3U);
            xs.insert(g.x(0));
        }
        EXPECT_EQ(xs.size(), rec.grouped->size());
        per_step.push_back(rec.loss);
        ++steps;
    };
    const TrainResult res = train(cfg, ds);
    EXPECT_EQ(steps, 2U * 3U);
    EXPECT_NEAR(res.history.epochs[0].mean_loss, (per_step[0] + per_step[1] + per_step[2]) / 3.0, 1e-15);
}

TEST(Training, JointLoopEvaluatesTheLibraryEstimator) {
    SyntheticSpec spec;
    spec.count = 65;
    const Dataset ds = normalized_synthetic(spec);
    TrainConfig cfg = small_config(LossKind::Jmmd, 1);
    cfg.batch_size = 32;
    const TrainingKernels k = make_training_kernels(cfg, ds);
    std::size_t steps = 0;
    cfg.on_step = [&](const StepRecord& rec) {
        ASSERT_NE(rec.data, nullptr);
        ASSERT_NE(rec.gen, nullptr);
        EXPECT_EQ(rec.loss, jmmd_hat(*k.kx, *k.ky, *rec.data, *rec.gen, Gradient::Skip).value);
        EXPECT_EQ(rec.gen->xs, rec.data->xs);
        EXPECT_EQ(rec.gen->xis.size(), rec.gen->size());
        ++steps;
    };
    (void)train(cfg, ds);
    // 65 pairs at B = 32: the trailing single pair is skipped.
    EXPECT_EQ(steps, 2U);
}

TEST(Training, NoiseIsFreshEveryStep) {
    SyntheticSpec spec;
    spec.count = 64;
    const Dataset ds = normalized_synthetic(spec);
    TrainConfig cfg = small_config(LossKind::Jmmd, 3);
    std::vector<Points> seen;
    cfg.on_step = [&](const StepRecord& rec) { seen.push_back(rec.gen->xis); };
    (void)train(cfg, ds);
    ASSERT_EQ(seen.size(), 3U);
    EXPECT_NE(seen[0][0], seen[1][0]);
    EXPECT_NE(seen[1][0], seen[2][0]);
}

TEST(Training, DeterministicGivenSeed) {
    SyntheticSpec spec;
    spec.count = 200;
    const Dataset ds = normalized_synthetic(spec);
    for (LossKind loss : {LossKind::Jmmd, LossKind::Ammd}) {
        const TrainConfig cfg = small_config(loss, 5);
        const TrainResult a = train(cfg, ds);
        const TrainResult b = train(cfg, ds);
        EXPECT_EQ(a.generator.net().parameters(), b.generator.net().parameters());
        ASSERT_EQ(a.history.epochs.size(), b.history.epochs.size());
        for (std::size_t i = 0; i < a.history.epochs.size(); ++i) {
            EXPECT_EQ(a.history.epochs[i].mean_loss, b.history.epochs[i].mean_loss);
        }
        TrainConfig other = cfg;
        other.seed = 43;
        EXPECT_NE(train(other, ds).generator.net().parameters(), a.generator.net().parameters());
    }
}

TEST(Training, DeterministicTargetCollapses) {
    const Dataset ds = gaussian_x_dataset(256, 7, [](double) { return 0.0; });
    for (LossKind loss : {LossKind::Ammd, LossKind::Jmmd}) {
        TrainConfig cfg = small_config(loss, 1000);
        cfg.batch_size = 32;
        cfg.hidden = {32, 32};
        cfg.ky.bandwidth_sq = 0.01;
        const TrainResult res = train(cfg, ds);
        const ConditionalSampler sampler = make_sampler(res.generator);
        double worst = 0.0;
        for (double x : {-1.5, -0.5, 0.0, 0.5, 1.5}) {
            const ConditionalSummary s = conditional_summaries(sampler, Vector::Constant(1, x), 500, 3);
            worst = std::max(worst, s.std(0));
        }
        EXPECT_LT(worst, 0.05) << to_string(loss);
    }
}

TEST(Training, BimodalModesAreBothOccupied) {
    SyntheticSpec spec;
    spec.kind = SyntheticSpec::Kind::Bimodal;
    spec.count = 2048;
    spec.seed = 3;
    const SyntheticData syn = gen_synthetic(spec);
    const Normalization norm = fit_normalization(syn.dataset);
    const Dataset ds = apply_normalization(syn.dataset, norm);
    TrainConfig cfg = small_config(LossKind::Jmmd, 300);
    cfg.batch_size = 128;
    cfg.hidden = {32, 32};
    cfg.ky.bandwidth_sq = 0.25;
    cfg.kx.bandwidth_sq = 0.25;
    const TrainResult res = train(cfg, ds);
    const ConditionalSampler sampler = make_sampler(res.generator);
    for (double raw_x : {-1.0, 0.5}) {
        const Vector x = norm.normalize_x(Vector::Constant(1, raw_x));
        const Points draws = sampler(Points(1000, x), 17);
        std::size_t upper = 0;
        for (const auto& y : draws) {
            upper += norm.denormalize_y(y)(0) > 0.0 ? 1 : 0;
        }
        EXPECT_GE(upper, 200U) << "x = " << raw_x;
        EXPECT_LE(upper, 800U) << "x = " << raw_x;
    }
}

TEST(Training, SmoothedLossDecreasesOnSyntheticTasks) {
    SyntheticSpec het;
    het.count = 512;
    SyntheticSpec bim = het;
    bim.kind = SyntheticSpec::Kind::Bimodal;
    SyntheticSpec lab;
    lab.kind = SyntheticSpec::Kind::LabelMixture;
    lab.outputs_per_x = 100;
    struct Case {
        SyntheticSpec spec;
        LossKind loss;
    };
    for (const Case& c : {Case{het, LossKind::Jmmd}, Case{het, LossKind::Ammd}, Case{bim, LossKind::Jmmd},
                          Case{lab, LossKind::Ammd}, Case{lab, LossKind::Jmmd}}) {
        TrainConfig cfg = small_config(c.loss, 60);
        const TrainResult res = train(cfg, normalized_synthetic(c.spec));
        EXPECT_LT(window_mean(res.history, 50, 10), window_mean(res.history, 0, 10)) << to_string(c.loss);
    }
}

TEST(Training, CmmdTrainingRuns) {
    SyntheticSpec spec;
    spec.count = 256;
    TrainConfig cfg = small_config(LossKind::Cmmd, 40);
    const TrainResult res = train(cfg, normalized_synthetic(spec));
    EXPECT_LT(window_mean(res.history, 30, 10), window_mean(res.history, 0, 10));
}

TEST(Training, GeneratorMatchingTheDataHasZeroHeldOutMetric) {
    const ConditionalGenerator truth = ConditionalGenerator::init(1, 4, 1, {16, 16}, 77);
    auto draw = [&](std::size_t n, std::uint64_t seed) {
        Dataset ds;
        const Points xs = sample_noise(1, n, seed);
        const Points xis = sample_noise(4, n, seed + 1);
        const Points ys = truth.generate(xs, xis);
        for (std::size_t i = 0; i < n; ++i) {
            ds.records.push_back({xs[i], {ys[i]}});
        }
        return ds;
    };
    const Dataset train_set = draw(512, 1);
    const Dataset test = draw(400, 2);
    TrainConfig cfg;
    cfg.xi_dim = 4;
    cfg.hidden = {16, 16};
    cfg.epochs = 20;
    cfg.lr = 1e-4;
    cfg.seed = 5;
    const TrainResult res = train_from(truth, cfg, train_set);
    const TrainingKernels k = make_training_kernels(cfg, train_set);
    const EvalSettings es{16, 16, 9};
    for (const ConditionalGenerator* g : {&truth, &res.generator}) {
        const MetricReport r = evaluate_model(*g, test, *k.kx, *k.ky, es);
        ASSERT_TRUE(r.jmmd_with_c1.has_value());
        EXPECT_LT(std::abs(r.jmmd_with_c1->mean), 3.0 * r.jmmd_with_c1->se)
            << r.jmmd_with_c1->mean << " +- " << r.jmmd_with_c1->se;
    }
}

TEST(Training, GeneratorSerializationRoundTrip) {
    const ConditionalGenerator gen = ConditionalGenerator::init(2, 3, 1, {5}, 1);
    const ConditionalGenerator back = generator_from_json(generator_to_json(gen));
    EXPECT_EQ(back.x_dim(), 2);
    EXPECT_EQ(back.xi_dim(), 3);
    EXPECT_EQ(back.net().parameters(), gen.net().parameters());

    nlohmann::json doc = generator_to_json(gen);
    doc["x_dim"] = 4;
    EXPECT_THROW((void)generator_from_json(doc), SchemaError);
    doc = generator_to_json(gen);
    doc["format"] = "other";
    EXPECT_THROW((void)generator_from_json(doc), SchemaError);

    const fs::path p = fs::temp_directory_path() / "cgm_gen_roundtrip.json";
    save_generator(p, gen);
    EXPECT_EQ(load_generator(p).net().parameters(), gen.net().parameters());
    std::ofstream(p) << "{ not json";
    EXPECT_THROW((void)load_generator(p), SchemaError);
    fs::remove(p);
}

TEST(Training, GeneratorInputIsStackedXThenNoise) {
    const ConditionalGenerator gen = ConditionalGenerator::init(2, 3, 1, {4}, 6);
    const Vector x = Eigen::Vector2d(0.5, -1.0);
    const Vector xi = Eigen::Vector3d(0.1, 0.2, -0.3);
    const Matrix in = gen.stack_inputs({x}, {xi});
    ASSERT_EQ(in.rows(), 5);
    EXPECT_EQ(in.col(0).head(2), x);
    EXPECT_EQ(in.col(0).tail(3), xi);
    Vector stacked(5);
    stacked << x, xi;
    EXPECT_EQ(gen.generate(x, xi), gen.net().forward(stacked));
}

TEST(Training, LossGradientsThroughTheGenerator) {
    const ConditionalGenerator gen = ConditionalGenerator::init(1, 3, 1, {32, 32}, 14);
    std::vector<Record> groups;
    std::vector<Points> xis;
    for (int i = 0; i < 3; ++i) {
        groups.push_back({Vector::Constant(1, 0.4 * i - 0.5), {Vector::Constant(1, 0.3 * i), Vector::Constant(1, -0.2)}});
        xis.push_back(sample_noise(3, 2, 10 + i));
    }
    const DifferentiableLoss loss = ammd_loss(std::make_shared<GaussianKernel>(), groups, xis, 1);
    const GradCheckReport r = grad_check(gen.net(), loss, 1e-4);
    EXPECT_FALSE(r.near_kink);
    EXPECT_TRUE(r.passed) << r.max_rel_error;
}

TEST(Training, HistoryCsvColumns) {
    TrainHistory h;
    h.epochs.push_back({1, 0.5, 2.0, std::nullopt});
    h.epochs.push_back({2, 0.25, 2.0, 0.1});
    const fs::path p = fs::temp_directory_path() / "cgm_history.csv";
    h.write_csv(p);
    std::ifstream in(p);
    std::string header, first, second;
    std::getline(in, header);
    std::getline(in, first);
    std::getline(in, second);
    EXPECT_EQ(header, "epoch,loss,wall_ms,heldout");
    EXPECT_EQ(first, "1,0.5,2.000,");
    EXPECT_EQ(second, "2,0.25,2.000,0.1");
    fs::remove(p);
}

}  // namespace
}  // namespace cgm
