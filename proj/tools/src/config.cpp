#include "cgm_cli/config.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>

namespace cgm::cli {

namespace {

using nlohmann::json;

// Typed, strict view of one JSON object.
class Section {
public:
    Section(const json& doc, std::string where) : doc_(doc), where_(std::move(where)) {
        if (!doc_.is_object()) {
            throw SchemaError(fmt::format("{}: expected an object", where_));
        }
    }

    void allow(std::initializer_list<const char*> keys) const {
        const std::set<std::string> allowed(keys.begin(), keys.end());
        for (const auto& [key, value] : doc_.items()) {
            if (!allowed.contains(key)) {
                throw SchemaError(fmt::format("{}: unknown key '{}'", where_, key));
            }
        }
    }

    [[nodiscard]] bool has(const char* key) const { return doc_.contains(key); }
    [[nodiscard]] std::string path(const char* key) const { return fmt::format("{}.{}", where_, key); }
    [[nodiscard]] const json& raw(const char* key) const { return doc_.at(key); }

    [[nodiscard]] Section child(const char* key) const { return {doc_.at(key), path(key)}; }

    void read(const char* key, double& out) const {
        if (!has(key)) {
            return;
        }
        const json& v = doc_.at(key);
        if (!v.is_number()) {
            throw SchemaError(fmt::format("{}: expected a number", path(key)));
        }
        out = v.get<double>();
    }

    template <typename Int>
        requires std::is_integral_v<Int>
    void read(const char* key, Int& out) const {
        if (!has(key)) {
            return;
        }
        out = as_uint<Int>(doc_.at(key), path(key));
    }

    void read(const char* key, bool& out) const {
        if (!has(key)) {
            return;
        }
        const json& v = doc_.at(key);
        if (!v.is_boolean()) {
            throw SchemaError(fmt::format("{}: expected a boolean", path(key)));
        }
        out = v.get<bool>();
    }

    void read(const char* key, std::string& out) const {
        if (!has(key)) {
            return;
        }
        const json& v = doc_.at(key);
        if (!v.is_string()) {
            throw SchemaError(fmt::format("{}: expected a string", path(key)));
        }
        out = v.get<std::string>();
    }

    template <typename T>
    void read_list(const char* key, std::vector<T>& out) const {
        if (!has(key)) {
            return;
        }
        const json& v = doc_.at(key);
        if (!v.is_array()) {
            throw SchemaError(fmt::format("{}: expected an array", path(key)));
        }
        out.clear();
        for (const auto& item : v) {
            if constexpr (std::is_same_v<T, double>) {
                if (!item.is_number()) {
                    throw SchemaError(fmt::format("{}: expected numbers", path(key)));
                }
                out.push_back(item.get<double>());
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!item.is_string()) {
                    throw SchemaError(fmt::format("{}: expected strings", path(key)));
                }
                out.push_back(item.get<std::string>());
            } else {
                out.push_back(as_uint<T>(item, path(key)));
            }
        }
    }

    template <typename Int>
    [[nodiscard]] static Int as_uint(const json& v, const std::string& where) {
        if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
            throw SchemaError(fmt::format("{}: expected a nonnegative integer", where));
        }
        return static_cast<Int>(v.get<std::uint64_t>());
    }

private:
    const json& doc_;
    std::string where_;
};

KernelConfig parse_kernel(const Section& s) {
    s.allow({"type", "bandwidth_sq", "epsilon0", "code_bandwidth_sq", "code_dim", "encoder_seed"});
    KernelConfig k;
    std::string type = "gaussian";
    s.read("type", type);
    if (type == "gaussian") {
        k.type = KernelConfig::Type::Gaussian;
    } else if (type == "deep") {
        k.type = KernelConfig::Type::Deep;
    } else if (type == "linear") {
        k.type = KernelConfig::Type::Linear;
    } else {
        throw ConfigError(fmt::format("{}: unknown kernel type '{}'", s.path("type"), type));
    }
    if (s.has("bandwidth_sq") && s.raw("bandwidth_sq").is_string()) {
        if (s.raw("bandwidth_sq").get<std::string>() != "median") {
            throw SchemaError(fmt::format("{}: expected a number or \"median\"", s.path("bandwidth_sq")));
        }
        k.median_bandwidth = true;
    } else {
        s.read("bandwidth_sq", k.bandwidth_sq);
        if (!(k.bandwidth_sq > 0.0)) {
            throw ConfigError(fmt::format("{}: must be positive", s.path("bandwidth_sq")));
        }
    }
    s.read("epsilon0", k.epsilon0);
    s.read("code_bandwidth_sq", k.code_bandwidth_sq);
    s.read("code_dim", k.code_dim);
    s.read("encoder_seed", k.encoder_seed);
    if (!(k.epsilon0 > 0.0 && k.epsilon0 < 1.0) || !(k.code_bandwidth_sq > 0.0) || k.code_dim < 1) {
        throw ConfigError("kernels: epsilon0 must lie in (0, 1), code_bandwidth_sq > 0, code_dim >= 1");
    }
    return k;
}

void parse_kernels(const Section& s, TrainConfig& train) {
    s.allow({"type", "x", "y"});
    std::string type = "tensor";
    s.read("type", type);
    if (type != "tensor") {
        throw ConfigError(fmt::format("{}: only \"tensor\" is supported", s.path("type")));
    }
    if (s.has("x")) {
        train.kx = parse_kernel(s.child("x"));
    }
    if (s.has("y")) {
        train.ky = parse_kernel(s.child("y"));
    }
}

DatasetConfig parse_dataset(const Section& s, const std::filesystem::path& base_dir, std::uint64_t seed) {
    s.allow({"source",      "kind",       "count",      "outputs_per_x", "seed",     "x_low",    "x_high",
             "mean_amp",    "mean_freq",  "mean_slope", "noise_base",    "noise_slope", "gap_base", "gap_slope",
             "mode_std",    "labels",     "radius",     "path",          "targets",  "has_header", "test_fraction"});
    DatasetConfig d;
    std::string source = "synthetic";
    s.read("source", source);
    s.read("test_fraction", d.test_fraction);
    if (!(d.test_fraction > 0.0 && d.test_fraction < 1.0)) {
        throw ConfigError(fmt::format("{}: must lie in (0, 1)", s.path("test_fraction")));
    }
    if (source == "csv") {
        d.source = DatasetConfig::Source::Csv;
        for (const char* key : {"kind", "count", "outputs_per_x", "seed", "x_low", "x_high", "mean_amp", "mean_freq",
                                "mean_slope", "noise_base", "noise_slope", "gap_base", "gap_slope", "mode_std",
                                "labels", "radius"}) {
            if (s.has(key)) {
                throw SchemaError(fmt::format("{}: not valid for a csv dataset", s.path(key)));
            }
        }
        std::string path;
        s.read("path", path);
        if (path.empty()) {
            throw SchemaError(fmt::format("{}: required for a csv dataset", s.path("path")));
        }
        d.csv_path = std::filesystem::path(path).is_absolute() ? std::filesystem::path(path) : base_dir / path;
        s.read_list("targets", d.targets);
        if (d.targets.empty()) {
            throw SchemaError(fmt::format("{}: at least one target column is required", s.path("targets")));
        }
        s.read("has_header", d.has_header);
        return d;
    }
    if (source != "synthetic") {
        throw ConfigError(fmt::format("{}: expected \"synthetic\" or \"csv\"", s.path("source")));
    }
    for (const char* key : {"path", "targets", "has_header"}) {
        if (s.has(key)) {
            throw SchemaError(fmt::format("{}: not valid for a synthetic dataset", s.path(key)));
        }
    }
    SyntheticSpec& spec = d.synthetic;
    std::string kind = "heteroscedastic";
    s.read("kind", kind);
    if (kind == "heteroscedastic") {
        spec.kind = SyntheticSpec::Kind::Heteroscedastic;
    } else if (kind == "bimodal") {
        spec.kind = SyntheticSpec::Kind::Bimodal;
    } else if (kind == "label_mixture") {
        spec.kind = SyntheticSpec::Kind::LabelMixture;
    } else {
        throw ConfigError(fmt::format("{}: unknown synthetic kind '{}'", s.path("kind"), kind));
    }
    spec.seed = derive_seed(seed, 100);
    s.read("seed", spec.seed);
    s.read("count", spec.count);
    s.read("outputs_per_x", spec.outputs_per_x);
    s.read("x_low", spec.x_low);
    s.read("x_high", spec.x_high);
    s.read("mean_amp", spec.mean_amp);
    s.read("mean_freq", spec.mean_freq);
    s.read("mean_slope", spec.mean_slope);
    s.read("noise_base", spec.noise_base);
    s.read("noise_slope", spec.noise_slope);
    s.read("gap_base", spec.gap_base);
    s.read("gap_slope", spec.gap_slope);
    s.read("mode_std", spec.mode_std);
    s.read("labels", spec.labels);
    s.read("radius", spec.radius);
    if (spec.count < 1 || spec.outputs_per_x < 1) {
        throw ConfigError("dataset: count and outputs_per_x must be positive");
    }
    (void)make_ground_truth(spec);
    return d;
}

void parse_train(const Section& s, TrainConfig& t) {
    s.allow({"loss", "epochs", "batch_size", "m", "r", "xi_dim", "lr", "lambda", "hidden"});
    std::string loss = to_string(t.loss);
    s.read("loss", loss);
    t.loss = parse_loss_kind(loss);
    s.read("epochs", t.epochs);
    s.read("batch_size", t.batch_size);
    s.read("m", t.m);
    s.read("r", t.r);
    s.read("xi_dim", t.xi_dim);
    s.read("lr", t.lr);
    s.read("lambda", t.lambda);
    s.read_list("hidden", t.hidden);
}

void parse_eval(const Section& s, EvalConfig& e) {
    s.allow({"m_draws", "n_reps", "quantiles", "probes", "summary_draws"});
    s.read("m_draws", e.m_draws);
    s.read("n_reps", e.n_reps);
    s.read("summary_draws", e.summary_draws);
    s.read_list("quantiles", e.quantiles);
    if (s.has("probes")) {
        const json& probes = s.raw("probes");
        if (!probes.is_array()) {
            throw SchemaError(fmt::format("{}: expected an array of points", s.path("probes")));
        }
        for (const auto& p : probes) {
            std::vector<double> coords;
            if (p.is_number()) {
                coords.push_back(p.get<double>());
            } else if (p.is_array() && std::all_of(p.begin(), p.end(), [](const json& c) { return c.is_number(); })) {
                coords = p.get<std::vector<double>>();
            } else {
                throw SchemaError(fmt::format("{}: each probe is a number or an array of numbers", s.path("probes")));
            }
            e.probes.push_back(Eigen::Map<const Vector>(coords.data(), static_cast<Eigen::Index>(coords.size())));
        }
    }
    if (e.m_draws < 2 || e.n_reps < 1 || e.summary_draws < 2) {
        throw ConfigError("eval: need m_draws >= 2, n_reps >= 1, summary_draws >= 2");
    }
    for (double q : e.quantiles) {
        if (!(q >= 0.0 && q <= 1.0)) {
            throw ConfigError("eval: quantile levels must lie in [0, 1]");
        }
    }
}

void parse_varbench(const Section& s, VarbenchConfig& v) {
    s.allow({"q_shift", "jmmd_sizes", "ammd_ns", "ammd_m", "ammd_r", "reps", "ratio_low", "ratio_high"});
    s.read("q_shift", v.q_shift);
    s.read_list("jmmd_sizes", v.jmmd_sizes);
    s.read_list("ammd_ns", v.ammd_ns);
    s.read("ammd_m", v.ammd_m);
    s.read("ammd_r", v.ammd_r);
    s.read("reps", v.reps);
    s.read("ratio_low", v.ratio_low);
    s.read("ratio_high", v.ratio_high);
    if (v.reps < 2 || v.ammd_m < 2 || v.ammd_r < 1) {
        throw ConfigError("varbench: need reps >= 2, ammd_m >= 2, ammd_r >= 1");
    }
    for (auto size : v.jmmd_sizes) {
        if (size < 2) {
            throw ConfigError("varbench: jmmd sizes must be at least 2");
        }
    }
    for (auto n : v.ammd_ns) {
        if (n < 1) {
            throw ConfigError("varbench: ammd n values must be positive");
        }
    }
}

}  // namespace

RunConfig parse_run_config(const nlohmann::json& doc, const std::filesystem::path& base_dir,
                           std::optional<std::uint64_t> seed_override) {
    const Section root(doc, "config");
    root.allow({"seed", "out_dir", "dataset", "kernels", "train", "eval", "varbench"});
    RunConfig cfg;
    root.read("seed", cfg.seed);
    if (seed_override) {
        cfg.seed = *seed_override;
    }
    std::string out_dir = cfg.out_dir.string();
    root.read("out_dir", out_dir);
    cfg.out_dir = std::filesystem::path(out_dir).is_absolute() ? std::filesystem::path(out_dir) : base_dir / out_dir;
    if (root.has("dataset")) {
        cfg.dataset = parse_dataset(root.child("dataset"), base_dir, cfg.seed);
    } else {
        cfg.dataset.synthetic.seed = derive_seed(cfg.seed, 100);
    }
    if (root.has("kernels")) {
        parse_kernels(root.child("kernels"), cfg.train);
    }
    if (root.has("train")) {
        parse_train(root.child("train"), cfg.train);
    }
    cfg.train.seed = cfg.seed;
    cfg.train.validate();
    if (root.has("eval")) {
        parse_eval(root.child("eval"), cfg.eval);
    }
    if (root.has("varbench")) {
        parse_varbench(root.child("varbench"), cfg.varbench);
    }
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw SchemaError(fmt::format("config: cannot open {}", path.string()));
    }
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw SchemaError(fmt::format("config: {}", e.what()));
    }
    std::optional<std::uint64_t> override_seed;
    if (const char* env = std::getenv(kSeedEnv); env != nullptr && *env != '\0') {
        try {
            std::size_t used = 0;
            const std::string text(env);
            const unsigned long long v = std::stoull(text, &used);
            if (used != text.size()) {
                throw ConfigError("");
            }
            override_seed = v;
        } catch (const std::exception&) {
            throw ConfigError(fmt::format("{} must be a nonnegative integer, got '{}'", kSeedEnv, env));
        }
    }
    return parse_run_config(doc, path.parent_path(), override_seed);
}

std::uint64_t split_seed(const RunConfig& config) { return derive_seed(config.seed, 101); }
std::uint64_t eval_seed(const RunConfig& config) { return derive_seed(config.seed, 102); }

}  // namespace cgm::cli
