#include "cgm/nn.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>

namespace cgm {

namespace {

std::uint64_t next_net_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1, std::memory_order_relaxed);
}

}  // namespace

double ForwardCache::min_abs_preactivation() const {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& z : pre_activations) {
        if (z.size() > 0) {
            best = std::min(best, z.cwiseAbs().minCoeff());
        }
    }
    return best;
}

Mlp::Mlp(std::vector<Eigen::Index> layer_dims) : dims_(std::move(layer_dims)), id_(next_net_id()) {
    if (dims_.size() < 2) {
        throw ConfigError("mlp: need at least input and output dimensions");
    }
    for (auto d : dims_) {
        if (d < 1) {
            throw ConfigError("mlp: layer dimensions must be positive");
        }
    }
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
        weights_.push_back(Matrix::Zero(dims_[l + 1], dims_[l]));
        biases_.push_back(Vector::Zero(dims_[l + 1]));
    }
}

Mlp Mlp::he_uniform(std::vector<Eigen::Index> layer_dims, std::uint64_t seed) {
    Mlp net(std::move(layer_dims));
    std::mt19937_64 rng(seed);
    for (auto& w : net.weights_) {
        const double limit = std::sqrt(6.0 / static_cast<double>(w.cols()));
        std::uniform_real_distribution<double> u(-limit, limit);
        // Column-major fill keeps the draw order tied to the flat layout.
        for (Eigen::Index c = 0; c < w.cols(); ++c) {
            for (Eigen::Index r = 0; r < w.rows(); ++r) {
                w(r, c) = u(rng);
            }
        }
    }
    return net;
}

Mlp::Mlp(const Mlp& other)
    : dims_(other.dims_), weights_(other.weights_), biases_(other.biases_), id_(next_net_id()), version_(0) {}

Mlp& Mlp::operator=(const Mlp& other) {
    if (this != &other) {
        dims_ = other.dims_;
        weights_ = other.weights_;
        biases_ = other.biases_;
        touch();
    }
    return *this;
}

Eigen::Index Mlp::parameter_count() const noexcept {
    Eigen::Index total = 0;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        total += weights_[l].size() + biases_[l].size();
    }
    return total;
}

void Mlp::set_layer(std::size_t layer, Matrix weights, Vector bias) {
    if (layer >= weights_.size()) {
        throw InputError(fmt::format("mlp: layer {} out of range", layer));
    }
    if (weights.rows() != weights_[layer].rows() || weights.cols() != weights_[layer].cols() ||
        bias.size() != biases_[layer].size()) {
        throw InputError(fmt::format("mlp: layer {} shape mismatch", layer));
    }
    weights_[layer] = std::move(weights);
    biases_[layer] = std::move(bias);
    touch();
}

Vector Mlp::parameters() const {
    Vector flat(parameter_count());
    Eigen::Index off = 0;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        flat.segment(off, weights_[l].size()) = weights_[l].reshaped();
        off += weights_[l].size();
        flat.segment(off, biases_[l].size()) = biases_[l];
        off += biases_[l].size();
    }
    return flat;
}

void Mlp::set_parameters(const Vector& flat) {
    if (flat.size() != parameter_count()) {
        throw InputError(fmt::format("mlp: expected {} parameters, got {}", parameter_count(), flat.size()));
    }
    Eigen::Index off = 0;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        weights_[l].reshaped() = flat.segment(off, weights_[l].size());
        off += weights_[l].size();
        biases_[l] = flat.segment(off, biases_[l].size());
        off += biases_[l].size();
    }
    touch();
}

ForwardCache Mlp::forward(const Matrix& inputs) const {
    if (inputs.rows() != input_dim()) {
        throw InputError(fmt::format("mlp: input dimension {} does not match {}", inputs.rows(), input_dim()));
    }
    ForwardCache cache;
    cache.net_id = id_;
    cache.net_version = version_;
    cache.inputs.reserve(weights_.size());
    cache.inputs.push_back(inputs);
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        Matrix z = weights_[l] * cache.inputs.back();
        z.colwise() += biases_[l];
        if (l + 1 == weights_.size()) {
            cache.output = std::move(z);
        } else {
            cache.inputs.push_back(z.cwiseMax(0.0));
            cache.pre_activations.push_back(std::move(z));
        }
    }
    return cache;
}

Vector Mlp::forward(const Vector& input) const {
    Matrix in = input;
    return forward(in).output.col(0);
}

Vector Mlp::backward(const ForwardCache& cache, const Matrix& output_grads) const {
    if (cache.net_id != id_ || cache.net_version != version_) {
        throw InputError("mlp: forward cache is stale or belongs to another network");
    }
    if (output_grads.rows() != output_dim() || output_grads.cols() != cache.output.cols()) {
        throw InputError("mlp: output gradient shape does not match the cached batch");
    }
    Vector flat(parameter_count());
    std::vector<Eigen::Index> offsets(weights_.size());
    Eigen::Index off = 0;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        offsets[l] = off;
        off += weights_[l].size() + biases_[l].size();
    }
    Matrix delta = output_grads;
    for (std::size_t l = weights_.size(); l-- > 0;) {
        const Matrix gw = delta * cache.inputs[l].transpose();
        flat.segment(offsets[l], gw.size()) = gw.reshaped();
        flat.segment(offsets[l] + gw.size(), biases_[l].size()) = delta.rowwise().sum();
        if (l > 0) {
            Matrix back = weights_[l].transpose() * delta;
            const Matrix& z = cache.pre_activations[l - 1];
            delta = (z.array() > 0.0).select(back, 0.0);
        }
    }
    return flat;
}

AdamState::AdamState(Eigen::Index parameter_count, AdamConfig cfg)
    : config(cfg),
      first_moment(Vector::Zero(parameter_count)),
      second_moment(Vector::Zero(parameter_count)) {
    if (!(cfg.lr >= 0.0) || !(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0) || !(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0) ||
        !(cfg.eps > 0.0)) {
        throw ConfigError("adam: invalid hyperparameters");
    }
}

void adam_step(AdamState& state, Vector& params, const Vector& grads) {
    if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
        throw InputError(fmt::format("adam: shape mismatch (params {}, grads {}, state {})", params.size(),
                                     grads.size(), state.first_moment.size()));
    }
    const AdamConfig& c = state.config;
    ++state.step;
    state.first_moment = c.beta1 * state.first_moment + (1.0 - c.beta1) * grads;
    state.second_moment = c.beta2 * state.second_moment + (1.0 - c.beta2) * grads.cwiseAbs2();
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(c.beta1, t);
    const double bc2 = 1.0 - std::pow(c.beta2, t);
    params.array() -= c.lr * (state.first_moment.array() / bc1) /
                      ((state.second_moment.array() / bc2).sqrt() + c.eps);
}

GradCheckReport grad_check(const Mlp& net, const DifferentiableLoss& loss, double tolerance, double step) {
    GradCheckReport report;
    if (loss.min_abs_preactivation) {
        report.near_kink = loss.min_abs_preactivation(net) < 1e-6;
    }
    const Vector analytic = loss.gradient(net);
    Mlp probe = net;
    Vector params = net.parameters();
    for (Eigen::Index i = 0; i < params.size(); ++i) {
        const double saved = params(i);
        params(i) = saved + step;
        probe.set_parameters(params);
        const double up = loss.value(probe);
        params(i) = saved - step;
        probe.set_parameters(params);
        const double down = loss.value(probe);
        params(i) = saved;

        const double fd = (up - down) / (2.0 * step);
        const double abs_err = std::abs(fd - analytic(i));
        const double denom = std::max({std::abs(fd), std::abs(analytic(i)), 1e-6});
        report.max_abs_error = std::max(report.max_abs_error, abs_err);
        report.max_rel_error = std::max(report.max_rel_error, abs_err / denom);
        ++report.parameters_checked;
    }
    report.passed = report.max_rel_error < tolerance;
    return report;
}

nlohmann::json mlp_to_json(const Mlp& net) {
    nlohmann::json doc;
    doc["format"] = "cgm-mlp";
    doc["version"] = 1;
    doc["layer_dims"] = net.layer_dims();
    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        const Matrix& w = net.weights(l);
        nlohmann::json rows = nlohmann::json::array();
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
            rows.push_back(std::vector<double>(w.row(r).begin(), w.row(r).end()));
        }
        const Vector& b = net.bias(l);
        layers.push_back({{"weights", rows}, {"bias", std::vector<double>(b.begin(), b.end())}});
    }
    doc["layers"] = layers;
    return doc;
}

Mlp mlp_from_json(const nlohmann::json& doc) {
    try {
        if (doc.at("format").get<std::string>() != "cgm-mlp") {
            throw SchemaError("model: unexpected format tag");
        }
        if (doc.at("version").get<int>() != 1) {
            throw SchemaError("model: unsupported version");
        }
        Mlp net(doc.at("layer_dims").get<std::vector<Eigen::Index>>());
        const auto& layers = doc.at("layers");
        if (!layers.is_array() || layers.size() != net.layer_count()) {
            throw SchemaError("model: layer count does not match layer_dims");
        }
        for (std::size_t l = 0; l < net.layer_count(); ++l) {
            const auto rows = layers[l].at("weights").get<std::vector<std::vector<double>>>();
            const auto bias = layers[l].at("bias").get<std::vector<double>>();
            const Eigen::Index d_out = net.layer_dims()[l + 1];
            const Eigen::Index d_in = net.layer_dims()[l];
            if (static_cast<Eigen::Index>(rows.size()) != d_out || static_cast<Eigen::Index>(bias.size()) != d_out) {
                throw SchemaError(fmt::format("model: layer {} has wrong output size", l));
            }
            Matrix w(d_out, d_in);
            for (Eigen::Index r = 0; r < d_out; ++r) {
                if (static_cast<Eigen::Index>(rows[static_cast<std::size_t>(r)].size()) != d_in) {
                    throw SchemaError(fmt::format("model: layer {} has wrong input size", l));
                }
                for (Eigen::Index c = 0; c < d_in; ++c) {
                    w(r, c) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
                }
            }
            net.set_layer(l, std::move(w), Eigen::Map<const Vector>(bias.data(), d_out));
        }
        return net;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(fmt::format("model: {}", e.what()));
    } catch (const ConfigError& e) {
        throw SchemaError(fmt::format("model: {}", e.what()));
    }
}

}  // namespace cgm
