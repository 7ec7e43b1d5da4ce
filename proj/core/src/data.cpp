#include "cgm/data.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>

namespace cgm {

// ---------------------------------------------------------------------------
// Normalization

Vector Normalization::normalize_x(const Vector& raw) const {
    if (raw.size() != raw_x_dim) {
        throw InputError(fmt::format("normalize_x: expected dimension {}, got {}", raw_x_dim, raw.size()));
    }
    Vector out(static_cast<Eigen::Index>(kept_x.size()));
    for (std::size_t i = 0; i < kept_x.size(); ++i) {
        const auto k = static_cast<Eigen::Index>(i);
        out(k) = (raw(kept_x[i]) - x_mean(k)) / x_std(k);
    }
    return out;
}

Vector Normalization::denormalize_x(const Vector& normalized) const {
    if (normalized.size() != static_cast<Eigen::Index>(kept_x.size())) {
        throw InputError("denormalize_x: dimension mismatch");
    }
    return (normalized.array() * x_std.array() + x_mean.array()).matrix();
}

Vector Normalization::normalize_y(const Vector& raw) const {
    if (raw.size() != y_mean.size()) {
        throw InputError("normalize_y: dimension mismatch");
    }
    return ((raw - y_mean).array() / y_std.array()).matrix();
}

Vector Normalization::denormalize_y(const Vector& normalized) const {
    if (normalized.size() != y_mean.size()) {
        throw InputError("denormalize_y: dimension mismatch");
    }
    return (normalized.array() * y_std.array() + y_mean.array()).matrix();
}

// ---------------------------------------------------------------------------
// Dataset

Eigen::Index Dataset::x_dim() const {
    if (records.empty()) {
        throw InputError("dataset is empty");
    }
    return records.front().x.size();
}

Eigen::Index Dataset::y_dim() const {
    if (records.empty() || records.front().ys.empty()) {
        throw InputError("dataset is empty");
    }
    return records.front().ys.front().size();
}

std::size_t Dataset::output_count() const noexcept {
    std::size_t total = 0;
    for (const auto& r : records) {
        total += r.ys.size();
    }
    return total;
}

std::size_t Dataset::min_outputs() const noexcept {
    std::size_t best = records.empty() ? 0 : records.front().ys.size();
    for (const auto& r : records) {
        best = std::min(best, r.ys.size());
    }
    return best;
}

Batch Dataset::joint_pairs() const {
    Batch b;
    b.xs.reserve(output_count());
    b.ys.reserve(output_count());
    for (const auto& r : records) {
        for (const auto& y : r.ys) {
            b.xs.push_back(r.x);
            b.ys.push_back(y);
        }
    }
    return b;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) {
        cells.push_back(cell);
    }
    if (!line.empty() && line.back() == ',') {
        cells.emplace_back();
    }
    return cells;
}

std::string trim(std::string s) {
    const auto ws = [](unsigned char c) { return std::isspace(c) != 0; };
    s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), ws));
    s.erase(std::find_if_not(s.rbegin(), s.rend(), ws).base(), s.end());
    return s;
}

double parse_cell(const std::string& raw, std::size_t row, std::size_t col) {
    const std::string cell = trim(raw);
    if (cell.empty()) {
        throw ParseError(fmt::format("csv: empty cell at row {}, column {}", row, col), row, col);
    }
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(cell, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != cell.size() || !std::isfinite(v)) {
        throw ParseError(fmt::format("csv: non-numeric cell '{}' at row {}, column {}", cell, row, col), row, col);
    }
    return v;
}

// Bitwise key so that merging never conflates -0.0/0.0 or near-equal values.
std::string bitwise_key(const Vector& x) {
    std::string key(static_cast<std::size_t>(x.size()) * sizeof(double), '\0');
    std::memcpy(key.data(), x.data(), key.size());
    return key;
}

std::vector<Record> merge_by_x(const Points& xs, const Points& ys) {
    std::vector<Record> records;
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        auto [it, inserted] = index.emplace(bitwise_key(xs[i]), records.size());
        if (inserted) {
            records.push_back({xs[i], {}});
        }
        records[it->second].ys.push_back(ys[i]);
    }
    return records;
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path, const std::vector<std::string>& target_columns, bool has_header) {
    std::ifstream in(path);
    if (!in) {
        throw SchemaError(fmt::format("csv: cannot open {}", path.string()));
    }
    if (target_columns.empty()) {
        throw SchemaError("csv: no target columns given");
    }
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (trim(line).empty()) {
            continue;
        }
        rows.push_back(split_line(line));
    }
    if (rows.empty()) {
        throw SchemaError("csv: file is empty");
    }
    const std::size_t width = rows.front().size();
    std::vector<std::size_t> targets;
    for (const auto& t : target_columns) {
        std::size_t col = width;
        if (has_header) {
            for (std::size_t c = 0; c < width; ++c) {
                if (trim(rows.front()[c]) == t) {
                    col = c;
                }
            }
        } else {
            try {
                std::size_t used = 0;
                col = static_cast<std::size_t>(std::stoul(t, &used));
                if (used != t.size()) {
                    col = width;
                }
            } catch (const std::exception&) {
                col = width;
            }
        }
        if (col >= width) {
            throw SchemaError(fmt::format("csv: target column '{}' not found", t));
        }
        targets.push_back(col);
    }
    const std::size_t first = has_header ? 1 : 0;
    if (rows.size() <= first) {
        throw SchemaError("csv: no data rows");
    }
    if (targets.size() >= width) {
        throw SchemaError("csv: no feature columns remain after selecting targets");
    }
    Points xs, ys;
    for (std::size_t r = first; r < rows.size(); ++r) {
        const auto& cells = rows[r];
        if (cells.size() != width) {
            throw ParseError(fmt::format("csv: row {} has {} cells, expected {}", r + 1, cells.size(), width), r + 1,
                             cells.size());
        }
        Vector x(static_cast<Eigen::Index>(width - targets.size()));
        Vector y(static_cast<Eigen::Index>(targets.size()));
        Eigen::Index xi = 0;
        for (std::size_t c = 0; c < width; ++c) {
            const double v = parse_cell(cells[c], r + 1, c + 1);
            const auto hit = std::find(targets.begin(), targets.end(), c);
            if (hit != targets.end()) {
                y(static_cast<Eigen::Index>(hit - targets.begin())) = v;
            } else {
                x(xi++) = v;
            }
        }
        xs.push_back(std::move(x));
        ys.push_back(std::move(y));
    }
    Dataset ds;
    ds.records = merge_by_x(xs, ys);
    ds.kind = ds.records.size() == xs.size() ? TaskKind::Single : TaskKind::Multi;
    return ds;
}

void write_csv(const std::filesystem::path& path, const Dataset& ds) {
    std::ofstream out(path);
    if (!out) {
        throw InputError(fmt::format("cannot write {}", path.string()));
    }
    const Eigen::Index dx = ds.x_dim();
    const Eigen::Index dy = ds.y_dim();
    for (Eigen::Index i = 0; i < dx; ++i) {
        out << (i ? "," : "") << "x" << i;
    }
    for (Eigen::Index i = 0; i < dy; ++i) {
        out << ",y" << i;
    }
    out << '\n';
    for (const auto& r : ds.records) {
        for (const auto& y : r.ys) {
            for (Eigen::Index i = 0; i < dx; ++i) {
                out << (i ? "," : "") << fmt::format("{}", r.x(i));
            }
            for (Eigen::Index i = 0; i < dy; ++i) {
                out << ',' << fmt::format("{}", y(i));
            }
            out << '\n';
        }
    }
}

// ---------------------------------------------------------------------------
// Split + normalize

Normalization fit_normalization(const Dataset& ds) {
    if (ds.records.empty()) {
        throw InputError("normalization: dataset is empty");
    }
    const Eigen::Index dx = ds.x_dim();
    const Eigen::Index dy = ds.y_dim();
    const double nx = static_cast<double>(ds.records.size());
    const double ny = static_cast<double>(ds.output_count());
    Vector xm = Vector::Zero(dx), xs2 = Vector::Zero(dx), ym = Vector::Zero(dy), ys2 = Vector::Zero(dy);
    for (const auto& r : ds.records) {
        xm += r.x;
        for (const auto& y : r.ys) {
            ym += y;
        }
    }
    xm /= nx;
    ym /= ny;
    for (const auto& r : ds.records) {
        xs2 += (r.x - xm).cwiseAbs2();
        for (const auto& y : r.ys) {
            ys2 += (y - ym).cwiseAbs2();
        }
    }
    const Vector xsd = (xs2 / nx).cwiseSqrt();
    Vector ysd = (ys2 / ny).cwiseSqrt();

    Normalization norm;
    norm.raw_x_dim = dx;
    for (Eigen::Index i = 0; i < dx; ++i) {
        if (xsd(i) > 0.0) {
            norm.kept_x.push_back(i);
        } else {
            fmt::print(stderr, "note: dropping constant feature x{}\n", i);
        }
    }
    if (norm.kept_x.empty()) {
        throw InputError("normalization: every x feature is constant");
    }
    norm.x_mean.resize(static_cast<Eigen::Index>(norm.kept_x.size()));
    norm.x_std.resize(norm.x_mean.size());
    for (std::size_t i = 0; i < norm.kept_x.size(); ++i) {
        norm.x_mean(static_cast<Eigen::Index>(i)) = xm(norm.kept_x[i]);
        norm.x_std(static_cast<Eigen::Index>(i)) = xsd(norm.kept_x[i]);
    }
    for (Eigen::Index i = 0; i < dy; ++i) {
        if (!(ysd(i) > 0.0)) {
            ysd(i) = 1.0;
        }
    }
    norm.y_mean = ym;
    norm.y_std = ysd;
    return norm;
}

Dataset apply_normalization(const Dataset& ds, const Normalization& norm) {
    Dataset out = ds;
    for (auto& r : out.records) {
        r.x = norm.normalize_x(r.x);
        for (auto& y : r.ys) {
            y = norm.normalize_y(y);
        }
    }
    out.normalization = norm;
    return out;
}

Split normalize_split(const Dataset& ds, double test_fraction, std::uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
        throw InputError("normalize_split: test_fraction must lie in (0, 1)");
    }
    const std::size_t total = ds.records.size();
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(total)));
    if (total < n_test + 2 || n_test < 1) {
        throw InputError(fmt::format("normalize_split: {} records cannot give a test split and >= 2 train records",
                                     total));
    }
    std::vector<std::size_t> order(total);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    Split out;
    out.train.kind = out.test.kind = ds.kind;
    for (std::size_t i = 0; i < total; ++i) {
        (i < n_test ? out.test : out.train).records.push_back(ds.records[order[i]]);
    }

    const Normalization norm = fit_normalization(out.train);
    out.train = apply_normalization(out.train, norm);
    out.test = apply_normalization(out.test, norm);
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic tasks

namespace {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

// Smallest t with cdf(t) >= q, by bisection on [lo, hi].
template <typename Cdf>
double invert_cdf(Cdf&& cdf, double q, double lo, double hi) {
    for (int it = 0; it < 200 && hi - lo > 1e-13 * (1.0 + std::abs(lo) + std::abs(hi)); ++it) {
        const double mid = 0.5 * (lo + hi);
        if (cdf(mid) < q) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

void check_quantile(double q) {
    if (!(q > 0.0 && q < 1.0)) {
        throw InputError("quantile level must lie in (0, 1)");
    }
}

class ScalarXTruth : public GroundTruth {
public:
    explicit ScalarXTruth(const SyntheticSpec& s) : spec_(s) {}
    Vector sample_x(std::mt19937_64& rng) const override {
        if (spec_.x_low == spec_.x_high) {
            return Vector::Constant(1, spec_.x_low);
        }
        std::uniform_real_distribution<double> u(spec_.x_low, spec_.x_high);
        return Vector::Constant(1, u(rng));
    }
    Eigen::Index x_dim() const override { return 1; }
    Eigen::Index y_dim() const override { return 1; }

protected:
    static double scalar(const Vector& x) {
        if (x.size() != 1) {
            throw InputError("synthetic task expects a scalar x");
        }
        return x(0);
    }
    SyntheticSpec spec_;
};

class HeteroscedasticTruth final : public ScalarXTruth {
public:
    using ScalarXTruth::ScalarXTruth;

    double mu(double x) const { return spec_.mean_amp * std::sin(spec_.mean_freq * x) + spec_.mean_slope * x; }
    double sigma(double x) const { return spec_.noise_base + spec_.noise_slope * std::abs(x); }

    Vector sample_y(const Vector& x, std::mt19937_64& rng) const override {
        const double t = scalar(x);
        std::normal_distribution<double> n(0.0, 1.0);
        const double s = sigma(t);
        return Vector::Constant(1, s > 0.0 ? mu(t) + s * n(rng) : mu(t));
    }
    Vector cond_mean(const Vector& x) const override { return Vector::Constant(1, mu(scalar(x))); }
    Vector cond_std(const Vector& x) const override { return Vector::Constant(1, sigma(scalar(x))); }
    Vector cond_quantile(const Vector& x, double q) const override {
        check_quantile(q);
        const double t = scalar(x);
        if (sigma(t) == 0.0) {
            return Vector::Constant(1, mu(t));
        }
        const double z = invert_cdf(normal_cdf, q, -40.0, 40.0);
        return Vector::Constant(1, mu(t) + sigma(t) * z);
    }
};

class BimodalTruth final : public ScalarXTruth {
public:
    using ScalarXTruth::ScalarXTruth;

    double center(double x) const { return spec_.mean_slope * x; }
    double gap(double x) const { return spec_.gap_base + spec_.gap_slope * std::abs(x); }

    Vector sample_y(const Vector& x, std::mt19937_64& rng) const override {
        const double t = scalar(x);
        std::bernoulli_distribution coin(0.5);
        std::normal_distribution<double> n(0.0, 1.0);
        const double mode = center(t) + (coin(rng) ? gap(t) : -gap(t));
        return Vector::Constant(1, mode + spec_.mode_std * n(rng));
    }
    Vector cond_mean(const Vector& x) const override { return Vector::Constant(1, center(scalar(x))); }
    Vector cond_std(const Vector& x) const override {
        const double g = gap(scalar(x));
        return Vector::Constant(1, std::sqrt(spec_.mode_std * spec_.mode_std + g * g));
    }
    Vector cond_quantile(const Vector& x, double q) const override {
        check_quantile(q);
        const double t = scalar(x);
        const double c = center(t), g = gap(t), s = spec_.mode_std;
        auto cdf = [&](double v) { return 0.5 * normal_cdf((v - c + g) / s) + 0.5 * normal_cdf((v - c - g) / s); };
        const double span = std::abs(g) + 40.0 * s;
        return Vector::Constant(1, invert_cdf(cdf, q, c - span, c + span));
    }
};

class LabelMixtureTruth final : public GroundTruth {
public:
    explicit LabelMixtureTruth(const SyntheticSpec& s) : spec_(s) {}

    Vector sample_x(std::mt19937_64& rng) const override {
        std::uniform_int_distribution<std::size_t> pick(0, spec_.labels - 1);
        Vector x = Vector::Zero(static_cast<Eigen::Index>(spec_.labels));
        x(static_cast<Eigen::Index>(pick(rng))) = 1.0;
        return x;
    }
    Vector sample_y(const Vector& x, std::mt19937_64& rng) const override {
        const auto [c0, c1] = centers(x);
        std::bernoulli_distribution coin(0.5);
        std::normal_distribution<double> n(0.0, spec_.mode_std);
        Vector y = coin(rng) ? c0 : c1;
        y(0) += n(rng);
        y(1) += n(rng);
        return y;
    }
    Vector cond_mean(const Vector& x) const override {
        const auto [c0, c1] = centers(x);
        return 0.5 * (c0 + c1);
    }
    Vector cond_std(const Vector& x) const override {
        const auto [c0, c1] = centers(x);
        const Vector half_gap = 0.5 * (c0 - c1);
        return (half_gap.cwiseAbs2().array() + spec_.mode_std * spec_.mode_std).sqrt().matrix();
    }
    Vector cond_quantile(const Vector& x, double q) const override {
        check_quantile(q);
        const auto [c0, c1] = centers(x);
        const double s = spec_.mode_std;
        Vector out(2);
        for (Eigen::Index d = 0; d < 2; ++d) {
            auto cdf = [&](double v) { return 0.5 * normal_cdf((v - c0(d)) / s) + 0.5 * normal_cdf((v - c1(d)) / s); };
            const double lo = std::min(c0(d), c1(d)) - 40.0 * s;
            const double hi = std::max(c0(d), c1(d)) + 40.0 * s;
            out(d) = invert_cdf(cdf, q, lo, hi);
        }
        return out;
    }
    Eigen::Index x_dim() const override { return static_cast<Eigen::Index>(spec_.labels); }
    Eigen::Index y_dim() const override { return 2; }

private:
    std::pair<Vector, Vector> centers(const Vector& x) const {
        if (x.size() != x_dim()) {
            throw InputError("label mixture: x must be a one-hot label vector");
        }
        Eigen::Index label = 0;
        x.maxCoeff(&label);
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(label) / static_cast<double>(spec_.labels);
        Vector u(2);
        u << std::cos(angle), std::sin(angle);
        return {spec_.radius * u, 0.5 * spec_.radius * u};
    }

    SyntheticSpec spec_;
};

}  // namespace

std::shared_ptr<const GroundTruth> make_ground_truth(const SyntheticSpec& spec) {
    if (spec.x_low > spec.x_high) {
        throw ConfigError("synthetic: x_low must not exceed x_high");
    }
    switch (spec.kind) {
        case SyntheticSpec::Kind::Heteroscedastic:
            if (spec.noise_base < 0.0 || spec.noise_slope < 0.0) {
                throw ConfigError("synthetic: noise scale parameters must be nonnegative");
            }
            return std::make_shared<HeteroscedasticTruth>(spec);
        case SyntheticSpec::Kind::Bimodal:
            if (!(spec.mode_std > 0.0)) {
                throw ConfigError("synthetic: mode_std must be positive");
            }
            return std::make_shared<BimodalTruth>(spec);
        case SyntheticSpec::Kind::LabelMixture:
            if (spec.labels < 1 || !(spec.mode_std > 0.0)) {
                throw ConfigError("synthetic: label mixture needs labels >= 1 and mode_std > 0");
            }
            return std::make_shared<LabelMixtureTruth>(spec);
    }
    throw ConfigError("synthetic: unknown kind");
}

SyntheticData gen_synthetic(const SyntheticSpec& spec) {
    if (spec.count < 1 || spec.outputs_per_x < 1) {
        throw ConfigError("synthetic: count and outputs_per_x must be positive");
    }
    SyntheticData out;
    out.truth = make_ground_truth(spec);
    std::mt19937_64 rng(spec.seed);
    const bool labels = spec.kind == SyntheticSpec::Kind::LabelMixture;
    // Label tasks have one record per label; `count` is ignored there.
    const std::size_t n_records = labels ? spec.labels : spec.count;
    for (std::size_t i = 0; i < n_records; ++i) {
        Record rec;
        if (labels) {
            rec.x = Vector::Zero(static_cast<Eigen::Index>(spec.labels));
            rec.x(static_cast<Eigen::Index>(i)) = 1.0;
        } else {
            rec.x = out.truth->sample_x(rng);
        }
        for (std::size_t l = 0; l < spec.outputs_per_x; ++l) {
            rec.ys.push_back(out.truth->sample_y(rec.x, rng));
        }
        out.dataset.records.push_back(std::move(rec));
    }
    out.dataset.kind = spec.outputs_per_x > 1 ? TaskKind::Multi : TaskKind::Single;
    return out;
}

NoiseSource::NoiseSource(Eigen::Index xi_dim, std::uint64_t seed) : dim_(xi_dim), rng_(seed) {
    if (xi_dim < 1) {
        throw ConfigError("noise: xi_dim must be at least 1");
    }
}

Vector NoiseSource::draw() {
    Vector v(dim_);
    for (Eigen::Index i = 0; i < dim_; ++i) {
        v(i) = unit_(rng_);
    }
    return v;
}

Points sample_noise(Eigen::Index xi_dim, std::size_t count, std::uint64_t seed) {
    NoiseSource src(xi_dim, seed);
    Points out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        out.push_back(src.draw());
    }
    return out;
}

}  // namespace cgm
