#include "cgm/training.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <tuple>

namespace cgm {

namespace {

Matrix stack_columns(const Points& xs, const Points& xis, Eigen::Index x_dim, Eigen::Index xi_dim) {
    if (xs.size() != xis.size()) {
        throw InputError("generator: xs and xis differ in length");
    }
    Matrix in(x_dim + xi_dim, static_cast<Eigen::Index>(xs.size()));
    for (std::size_t j = 0; j < xs.size(); ++j) {
        if (xs[j].size() != x_dim || xis[j].size() != xi_dim) {
            throw InputError(fmt::format("generator: expected x of dimension {} and xi of dimension {}", x_dim, xi_dim));
        }
        const auto c = static_cast<Eigen::Index>(j);
        in.col(c).head(x_dim) = xs[j];
        in.col(c).tail(xi_dim) = xis[j];
    }
    return in;
}

Points columns(const Matrix& m) {
    Points out;
    out.reserve(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
        out.emplace_back(m.col(c));
    }
    return out;
}

Matrix stack_grads(const Points& grads, Eigen::Index rows) {
    Matrix g(rows, static_cast<Eigen::Index>(grads.size()));
    for (std::size_t j = 0; j < grads.size(); ++j) {
        g.col(static_cast<Eigen::Index>(j)) = grads[j];
    }
    return g;
}

void check_finite(double loss, std::size_t epoch) {
    if (!std::isfinite(loss)) {
        throw NumericError(fmt::format("training: non-finite loss in epoch {}", epoch + 1));
    }
}

// Applies d loss / d yhat through the network and takes one Adam step.
void apply_step(Mlp& net, AdamState& adam, const ForwardCache& cache, const Points& grads) {
    const Vector flat = net.backward(cache, stack_grads(grads, net.output_dim()));
    if (!flat.allFinite()) {
        throw NumericError("training: non-finite gradient");
    }
    Vector params = net.parameters();
    adam_step(adam, params, flat);
    net.set_parameters(params);
}

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

struct Loop {
    const TrainConfig& config;
    ConditionalGenerator& gen;
    AdamState adam;
    NoiseSource noise;
    TrainHistory history;

    Loop(const TrainConfig& c, ConditionalGenerator& g)
        : config(c),
          gen(g),
          adam(g.net().parameter_count(), AdamConfig{.lr = c.lr}),
          noise(c.xi_dim, derive_seed(c.seed, 1)) {}

    void finish_epoch(std::size_t epoch, double loss_sum, std::size_t steps, Clock::time_point start) {
        EpochRecord rec;
        rec.epoch = epoch + 1;
        rec.mean_loss = steps > 0 ? loss_sum / static_cast<double>(steps) : 0.0;
        if (config.on_epoch) {
            rec.heldout = config.on_epoch(gen, epoch + 1);
        }
        rec.wall_ms = elapsed_ms(start);
        history.epochs.push_back(rec);
    }
};

std::uint64_t batch_seed(const TrainConfig& config, std::size_t epoch) {
    return derive_seed(derive_seed(config.seed, 2), epoch);
}

TrainResult run_grouped(ConditionalGenerator gen, const TrainConfig& config, const Dataset& dataset,
                        const KernelPtr& ky) {
    const std::size_t r = config.r == 0 ? dataset.min_outputs() : config.r;
    if (r < 1 || r > dataset.min_outputs()) {
        throw ConfigError(fmt::format("train: r = {} exceeds the smallest group ({} outputs)", r,
                                      dataset.min_outputs()));
    }
    Loop loop(config, gen);
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const auto start = Clock::now();
        double loss_sum = 0.0;
        std::size_t steps = 0;
        const auto batches = make_minibatches(dataset.records.size(), config.batch_size, batch_seed(config, epoch));
        for (std::size_t b = 0; b < batches.size(); ++b) {
            GroupedBatch grouped;
            Points xs, xis;
            for (std::size_t idx : batches[b]) {
                const Record& rec = dataset.records[idx];
                grouped.groups.push_back({rec.x, Points(rec.ys.begin(), rec.ys.begin() + static_cast<long>(r)), {}});
                for (std::size_t j = 0; j < config.m; ++j) {
                    xs.push_back(rec.x);
                    xis.push_back(loop.noise.draw());
                }
            }
            const ForwardCache cache = gen.net().forward(gen.stack_inputs(xs, xis));
            for (std::size_t g = 0; g < grouped.groups.size(); ++g) {
                for (std::size_t j = 0; j < config.m; ++j) {
                    grouped.groups[g].yhats.emplace_back(cache.output.col(static_cast<Eigen::Index>(g * config.m + j)));
                }
            }
            const EstimateWithGrad est = ammd_hat(*ky, grouped);
            check_finite(est.value, epoch);
            if (config.on_step) {
                config.on_step({.epoch = epoch + 1, .batch = b, .loss = est.value, .grouped = &grouped});
            }
            apply_step(gen.net(), loop.adam, cache, est.grads_wrt_generated);
            loss_sum += est.value;
            ++steps;
        }
        loop.finish_epoch(epoch, loss_sum, steps, start);
    }
    return {std::move(gen), std::move(loop.history)};
}

TrainResult run_joint(ConditionalGenerator gen, const TrainConfig& config, const Dataset& dataset,
                      const TrainingKernels& kernels) {
    const Batch pairs = dataset.joint_pairs();
    if (pairs.size() < 2) {
        throw InputError("train: need at least two (x, y) pairs");
    }
    Loop loop(config, gen);
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const auto start = Clock::now();
        double loss_sum = 0.0;
        std::size_t steps = 0;
        const auto batches = make_minibatches(pairs.size(), config.batch_size, batch_seed(config, epoch));
        for (std::size_t b = 0; b < batches.size(); ++b) {
            if (batches[b].size() < 2) {
                continue;
            }
            Batch data;
            GenBatch generated;
            for (std::size_t idx : batches[b]) {
                data.xs.push_back(pairs.xs[idx]);
                data.ys.push_back(pairs.ys[idx]);
                generated.xs.push_back(pairs.xs[idx]);
                generated.xis.push_back(loop.noise.draw());
            }
            const ForwardCache cache = gen.net().forward(gen.stack_inputs(generated.xs, generated.xis));
            generated.yhats = columns(cache.output);
            const EstimateWithGrad est =
                config.loss == LossKind::Cmmd
                    ? cmmd_hat_with_grad(*kernels.kx, *kernels.ky, data, generated, config.lambda)
                    : jmmd_hat(*kernels.kx, *kernels.ky, data, generated);
            check_finite(est.value, epoch);
            if (config.on_step) {
                config.on_step({.epoch = epoch + 1, .batch = b, .loss = est.value, .data = &data, .gen = &generated});
            }
            apply_step(gen.net(), loop.adam, cache, est.grads_wrt_generated);
            loss_sum += est.value;
            ++steps;
        }
        loop.finish_epoch(epoch, loss_sum, steps, start);
    }
    return {std::move(gen), std::move(loop.history)};
}

}  // namespace

// ---------------------------------------------------------------------------
// Generator

ConditionalGenerator::ConditionalGenerator(Mlp net, Eigen::Index x_dim, Eigen::Index xi_dim)
    : net_(std::move(net)), x_dim_(x_dim), xi_dim_(xi_dim) {
    if (x_dim < 1 || xi_dim < 1) {
        throw ConfigError("generator: x_dim and xi_dim must be positive");
    }
    if (net_.input_dim() != x_dim + xi_dim) {
        throw ConfigError(fmt::format("generator: network input {} does not equal x_dim + xi_dim = {}",
                                      net_.input_dim(), x_dim + xi_dim));
    }
}

ConditionalGenerator ConditionalGenerator::init(Eigen::Index x_dim, Eigen::Index xi_dim, Eigen::Index y_dim,
                                                const std::vector<Eigen::Index>& hidden, std::uint64_t seed) {
    std::vector<Eigen::Index> dims{x_dim + xi_dim};
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(y_dim);
    return {Mlp::he_uniform(dims, seed), x_dim, xi_dim};
}

Matrix ConditionalGenerator::stack_inputs(const Points& xs, const Points& xis) const {
    return stack_columns(xs, xis, x_dim_, xi_dim_);
}

Points ConditionalGenerator::generate(const Points& xs, const Points& xis) const {
    if (xs.empty()) {
        return {};
    }
    return columns(net_.forward(stack_inputs(xs, xis)).output);
}

Vector ConditionalGenerator::generate(const Vector& x, const Vector& xi) const {
    return generate(Points{x}, Points{xi}).front();
}

nlohmann::json generator_to_json(const ConditionalGenerator& gen) {
    return {{"format", "cgm-generator"},
            {"version", 1},
            {"x_dim", gen.x_dim()},
            {"xi_dim", gen.xi_dim()},
            {"mlp", mlp_to_json(gen.net())}};
}

ConditionalGenerator generator_from_json(const nlohmann::json& doc) {
    try {
        if (doc.at("format").get<std::string>() != "cgm-generator") {
            throw SchemaError("model: unexpected format tag");
        }
        if (doc.at("version").get<int>() != 1) {
            throw SchemaError("model: unsupported version");
        }
        return {mlp_from_json(doc.at("mlp")), doc.at("x_dim").get<Eigen::Index>(), doc.at("xi_dim").get<Eigen::Index>()};
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(fmt::format("model: {}", e.what()));
    } catch (const ConfigError& e) {
        throw SchemaError(fmt::format("model: {}", e.what()));
    }
}

void save_generator(const std::filesystem::path& path, const ConditionalGenerator& gen) {
    std::ofstream out(path);
    if (!out) {
        throw InputError(fmt::format("cannot write {}", path.string()));
    }
    out << generator_to_json(gen).dump(1) << '\n';
}

ConditionalGenerator load_generator(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw SchemaError(fmt::format("model: cannot open {}", path.string()));
    }
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(fmt::format("model: {}", e.what()));
    }
    return generator_from_json(doc);
}

// ---------------------------------------------------------------------------
// Config and history

std::string to_string(LossKind kind) {
    switch (kind) {
        case LossKind::Ammd:
            return "ammd";
        case LossKind::Jmmd:
            return "jmmd";
        case LossKind::Cmmd:
            return "cmmd";
    }
    return "unknown";
}

LossKind parse_loss_kind(const std::string& name) {
    if (name == "ammd") {
        return LossKind::Ammd;
    }
    if (name == "jmmd") {
        return LossKind::Jmmd;
    }
    if (name == "cmmd") {
        return LossKind::Cmmd;
    }
    throw ConfigError(fmt::format("unknown loss '{}' (expected ammd, jmmd or cmmd)", name));
}

void TrainConfig::validate() const {
    if (epochs < 1) {
        throw ConfigError("train: epochs must be at least 1");
    }
    if (batch_size < 2) {
        throw ConfigError("train: batch_size must be at least 2");
    }
    if (loss == LossKind::Ammd && m < 2) {
        throw ConfigError("train: ammd needs m >= 2 generated samples per x");
    }
    if (xi_dim < 1) {
        throw ConfigError("train: xi_dim must be at least 1");
    }
    if (!(lr >= 0.0) || !std::isfinite(lr)) {
        throw ConfigError("train: lr must be finite and nonnegative");
    }
    if (loss == LossKind::Cmmd && !(lambda > 0.0)) {
        throw ConfigError("train: cmmd needs lambda > 0");
    }
    for (auto h : hidden) {
        if (h < 1) {
            throw ConfigError("train: hidden layer sizes must be positive");
        }
    }
}

void TrainHistory::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) {
        throw InputError(fmt::format("cannot write {}", path.string()));
    }
    out << "epoch,loss,wall_ms,heldout\n";
    for (const auto& e : epochs) {
        out << fmt::format("{},{},{:.3f},{}\n", e.epoch, e.mean_loss, e.wall_ms,
                           e.heldout ? fmt::format("{}", *e.heldout) : std::string{});
    }
}

std::vector<std::vector<std::size_t>> make_minibatches(std::size_t count, std::size_t batch_size,
                                                       std::uint64_t seed) {
    if (batch_size < 1) {
        throw ConfigError("minibatches: batch_size must be positive");
    }
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t start = 0; start < count; start += batch_size) {
        const std::size_t stop = std::min(count, start + batch_size);
        out.emplace_back(order.begin() + static_cast<long>(start), order.begin() + static_cast<long>(stop));
    }
    return out;
}

TrainingKernels make_training_kernels(const TrainConfig& config, const Dataset& dataset) {
    constexpr std::size_t kMedianCap = 1000;
    Points xs, ys;
    for (const auto& rec : dataset.records) {
        if (xs.size() < kMedianCap) {
            xs.push_back(rec.x);
        }
        for (const auto& y : rec.ys) {
            if (ys.size() < kMedianCap) {
                ys.push_back(y);
            }
        }
    }
    return {make_kernel(config.kx, dataset.x_dim(), xs), make_kernel(config.ky, dataset.y_dim(), ys)};
}

// ---------------------------------------------------------------------------
// Entry points

TrainResult train_from(ConditionalGenerator generator, const TrainConfig& config, const Dataset& dataset) {
    config.validate();
    if (dataset.records.empty()) {
        throw InputError("train: dataset is empty");
    }
    if (generator.x_dim() != dataset.x_dim() || generator.y_dim() != dataset.y_dim() ||
        generator.xi_dim() != config.xi_dim) {
        throw ConfigError("train: generator dimensions do not match the dataset and config");
    }
    const TrainingKernels kernels = make_training_kernels(config, dataset);
    if (config.loss == LossKind::Ammd) {
        return run_grouped(std::move(generator), config, dataset, kernels.ky);
    }
    return run_joint(std::move(generator), config, dataset, kernels);
}

TrainResult train(const TrainConfig& config, const Dataset& dataset) {
    config.validate();
    if (dataset.records.empty()) {
        throw InputError("train: dataset is empty");
    }
    auto gen = ConditionalGenerator::init(dataset.x_dim(), config.xi_dim, dataset.y_dim(), config.hidden,
                                          derive_seed(config.seed, 0));
    return train_from(std::move(gen), config, dataset);
}

TrainResult train_acgm(const TrainConfig& config, const Dataset& dataset) {
    TrainConfig c = config;
    c.loss = LossKind::Ammd;
    return train(c, dataset);
}

TrainResult train_jcgm(const TrainConfig& config, const Dataset& dataset) {
    TrainConfig c = config;
    c.loss = LossKind::Jmmd;
    return train(c, dataset);
}

TrainResult train_cmmd(const TrainConfig& config, const Dataset& dataset) {
    TrainConfig c = config;
    c.loss = LossKind::Cmmd;
    return train(c, dataset);
}

// ---------------------------------------------------------------------------
// Losses with fixed noise

DifferentiableLoss jmmd_loss(KernelPtr kx, KernelPtr ky, Batch data, Points gen_xs, Points xis, Eigen::Index x_dim) {
    if (gen_xs.empty() || xis.empty()) {
        throw InputError("jmmd_loss: no generated inputs");
    }
    const Eigen::Index xi_dim = xis.front().size();
    auto shared = std::make_shared<const std::tuple<Batch, Points, Points>>(std::move(data), std::move(gen_xs),
                                                                            std::move(xis));
    auto forward = [shared, x_dim, xi_dim](const Mlp& net) {
        const auto& [d, gx, gxi] = *shared;
        return net.forward(stack_columns(gx, gxi, x_dim, xi_dim));
    };
    DifferentiableLoss loss;
    loss.value = [=](const Mlp& net) {
        const GenBatch gen{std::get<1>(*shared), {}, columns(forward(net).output)};
        return jmmd_hat(*kx, *ky, std::get<0>(*shared), gen, Gradient::Skip).value;
    };
    loss.gradient = [=](const Mlp& net) {
        const ForwardCache cache = forward(net);
        const GenBatch gen{std::get<1>(*shared), {}, columns(cache.output)};
        const auto est = jmmd_hat(*kx, *ky, std::get<0>(*shared), gen);
        return net.backward(cache, stack_grads(est.grads_wrt_generated, net.output_dim()));
    };
    loss.min_abs_preactivation = [=](const Mlp& net) { return forward(net).min_abs_preactivation(); };
    return loss;
}

DifferentiableLoss ammd_loss(KernelPtr ky, std::vector<Record> groups, std::vector<Points> xis, Eigen::Index x_dim) {
    if (groups.empty() || groups.size() != xis.size() || xis.front().empty()) {
        throw InputError("ammd_loss: need one noise list per group");
    }
    const Eigen::Index xi_dim = xis.front().front().size();
    Points flat_xs, flat_xis;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        for (const auto& xi : xis[g]) {
            flat_xs.push_back(groups[g].x);
            flat_xis.push_back(xi);
        }
    }
    auto shared = std::make_shared<const std::tuple<std::vector<Record>, std::vector<Points>, Matrix>>(
        std::move(groups), std::move(xis), stack_columns(flat_xs, flat_xis, x_dim, xi_dim));
    auto assemble = [shared](const ForwardCache& cache) {
        const auto& [gs, noise, inputs] = *shared;
        GroupedBatch grouped;
        Eigen::Index col = 0;
        for (std::size_t g = 0; g < gs.size(); ++g) {
            Group group{gs[g].x, gs[g].ys, {}};
            for (std::size_t j = 0; j < noise[g].size(); ++j) {
                group.yhats.emplace_back(cache.output.col(col++));
            }
            grouped.groups.push_back(std::move(group));
        }
        return grouped;
    };
    DifferentiableLoss loss;
    loss.value = [=](const Mlp& net) {
        return ammd_hat(*ky, assemble(net.forward(std::get<2>(*shared))), Gradient::Skip).value;
    };
    loss.gradient = [=](const Mlp& net) {
        const ForwardCache cache = net.forward(std::get<2>(*shared));
        const auto est = ammd_hat(*ky, assemble(cache));
        return net.backward(cache, stack_grads(est.grads_wrt_generated, net.output_dim()));
    };
    loss.min_abs_preactivation = [=](const Mlp& net) {
        return net.forward(std::get<2>(*shared)).min_abs_preactivation();
    };
    return loss;
}

}  // namespace cgm
