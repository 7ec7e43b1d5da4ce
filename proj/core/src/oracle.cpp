#include "cgm/oracle.hpp"

#include <fmt/format.h>

#include <cmath>

namespace cgm::oracle {

namespace {

constexpr double kProbTolerance = 1e-12;

struct WeightedPoints {
    Points xs;  // empty for Y-only lists
    Points ys;
    std::vector<double> w;

    [[nodiscard]] std::size_t size() const noexcept { return w.size(); }
};

WeightedPoints joint_atoms(const DiscreteInstance& inst, bool data_side) {
    WeightedPoints out;
    for (const auto& c : inst.conditions) {
        for (const auto& a : data_side ? c.p_cond : c.q_cond) {
            const double w = c.px * a.prob;
            if (w > 0.0) {
                out.xs.push_back(c.x);
                out.ys.push_back(a.point);
                out.w.push_back(w);
            }
        }
    }
    return out;
}

WeightedPoints cond_atoms(const std::vector<Atom>& atoms) {
    WeightedPoints out;
    for (const auto& a : atoms) {
        if (a.prob > 0.0) {
            out.ys.push_back(a.point);
            out.w.push_back(a.prob);
        }
    }
    return out;
}

// sum_a sum_b wa wb K(a, b)
double weighted_sum(const Matrix& k, const std::vector<double>& wa, const std::vector<double>& wb) {
    CompensatedSum s;
    for (std::size_t a = 0; a < wa.size(); ++a) {
        for (std::size_t b = 0; b < wb.size(); ++b) {
            s.add(wa[a] * wb[b] * k(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)));
        }
    }
    return s.value();
}

Matrix joint_gram(const Kernel& kx, const Kernel& ky, const WeightedPoints& a, const WeightedPoints& b) {
    return gram(kx, a.xs, b.xs).cwiseProduct(gram(ky, a.ys, b.ys));
}

double check_sum(const std::vector<Atom>& atoms, const char* what, std::size_t idx) {
    if (atoms.empty()) {
        throw InputError(fmt::format("instance: {} at condition {} is empty", what, idx));
    }
    double total = 0.0;
    for (const auto& a : atoms) {
        if (!(a.prob >= 0.0)) {
            throw InputError(fmt::format("instance: negative probability in {} at condition {}", what, idx));
        }
        if (a.point.size() != atoms.front().point.size()) {
            throw InputError("instance: inconsistent y dimensions");
        }
        total += a.prob;
    }
    if (std::abs(total - 1.0) > kProbTolerance) {
        throw InputError(fmt::format("instance: {} at condition {} sums to {}", what, idx, total));
    }
    return total;
}

// Mixed-radix walk over every index tuple.
template <typename F>
void for_each_tuple(const std::vector<std::size_t>& radices, F&& visit) {
    std::vector<std::size_t> idx(radices.size(), 0);
    for (;;) {
        visit(idx);
        std::size_t pos = 0;
        while (pos < idx.size()) {
            if (++idx[pos] < radices[pos]) {
                break;
            }
            idx[pos] = 0;
            ++pos;
        }
        if (pos == idx.size()) {
            return;
        }
    }
}

double tuple_count(const std::vector<std::size_t>& radices) {
    double c = 1.0;
    for (auto r : radices) {
        c *= static_cast<double>(r);
    }
    return c;
}

// Accumulates weighted first and second moments about a fixed shift.
class MomentAccumulator {
public:
    void add(double weight, double v) {
        if (!shift_set_) {
            shift_ = v;
            shift_set_ = true;
        }
        const double d = v - shift_;
        first_.add(weight * d);
        second_.add(weight * d * d);
        ++count_;
    }
    [[nodiscard]] Moments moments() const {
        const double m1 = first_.value();
        return {shift_ + m1, second_.value() - m1 * m1, count_};
    }

private:
    bool shift_set_ = false;
    double shift_ = 0.0;
    CompensatedSum first_;
    CompensatedSum second_;
    std::size_t count_ = 0;
};

// Mean and variance of -2/(mr) sum k(w_l, what_j) + 1/(m(m-1)) sum_{j!=j'} k(what_j, what_j')
// for i.i.d. w ~ P-list and what ~ Q-list, from the expansion of its second moment.
struct TwoSampleVariance {
    double mean = 0.0;
    double variance = 0.0;
};

TwoSampleVariance two_sample_variance(const Matrix& k_pq, const Matrix& k_qq, const std::vector<double>& wp,
                                      const std::vector<double>& wq, std::size_t m_sz, std::size_t r_sz) {
    const double m = static_cast<double>(m_sz);
    const double r = static_cast<double>(r_sz);
    const auto np = static_cast<Eigen::Index>(wp.size());
    const auto nq = static_cast<Eigen::Index>(wq.size());

    // Conditional means: col_mean(b) = E_w k(w, b), row_mean_q(b) = E_what' k(b, what').
    std::vector<double> col_mean(wq.size()), q_row_mean(wq.size()), p_row_mean(wp.size());
    for (Eigen::Index b = 0; b < nq; ++b) {
        CompensatedSum s, t;
        for (Eigen::Index a = 0; a < np; ++a) {
            s.add(wp[a] * k_pq(a, b));
        }
        for (Eigen::Index c = 0; c < nq; ++c) {
            t.add(wq[c] * k_qq(b, c));
        }
        col_mean[b] = s.value();
        q_row_mean[b] = t.value();
    }
    for (Eigen::Index a = 0; a < np; ++a) {
        CompensatedSum s;
        for (Eigen::Index b = 0; b < nq; ++b) {
            s.add(wq[b] * k_pq(a, b));
        }
        p_row_mean[a] = s.value();
    }

    CompensatedSum a1, a2, a3, mu_a, b1, b2, mu_b, c1;
    for (Eigen::Index a = 0; a < np; ++a) {
        for (Eigen::Index b = 0; b < nq; ++b) {
            const double w = wp[a] * wq[b];
            a1.add(w * k_pq(a, b) * k_pq(a, b));  // E[k(z1,zh1)^2]
            mu_a.add(w * k_pq(a, b));
        }
        a3.add(wp[a] * p_row_mean[a] * p_row_mean[a]);  // E[k(z1,zh1) k(z1,zh2)]
    }
    for (Eigen::Index b = 0; b < nq; ++b) {
        a2.add(wq[b] * col_mean[b] * col_mean[b]);  // E[k(z2,zh1) k(z1,zh1)]
        for (Eigen::Index c = 0; c < nq; ++c) {
            const double w = wq[b] * wq[c];
            b1.add(w * k_qq(b, c) * k_qq(b, c));  // E[k(zh1,zh2)^2]
            mu_b.add(w * k_qq(b, c));
        }
        b2.add(wq[b] * q_row_mean[b] * q_row_mean[b]);               // E[k(zh1,zh2) k(zh1,zh3)]
        c1.add(wq[b] * q_row_mean[b] * col_mean[b]);                 // E[k(zh1,zh2) k(z1,zh1)]
    }
    const double a4 = mu_a.value() * mu_a.value();  // E[k(z1,zh1) k(z2,zh2)]
    const double b3 = mu_b.value() * mu_b.value();  // E[k(zh1,zh2) k(zh3,zh4)]
    const double c2 = mu_a.value() * mu_b.value();  // E[k(zh1,zh2) k(z1,zh3)]

    const double cross = 4.0 / (m * r) * (a1.value() + (r - 1.0) * a2.value() + (m - 1.0) * a3.value() +
                                          (1.0 - m - r) * a4);
    const double self =
        1.0 / (m * (m - 1.0)) * (2.0 * b1.value() + 4.0 * (m - 2.0) * b2.value() + (6.0 - 4.0 * m) * b3);
    const double cov = 4.0 / (m * r) * (2.0 * r * c1.value() - 2.0 * r * c2);

    return {-2.0 * mu_a.value() + mu_b.value(), cross + self - cov};
}

void require_tractable(const DiscreteInstance& inst) {
    inst.validate();
    if (inst.total_support() > kMaxExactSupport) {
        throw InputError(fmt::format("instance support {} exceeds the exact-computation limit {}",
                                     inst.total_support(), kMaxExactSupport));
    }
}

}  // namespace

void DiscreteInstance::validate() const {
    if (conditions.empty()) {
        throw InputError("instance: no conditions");
    }
    double px_total = 0.0;
    for (std::size_t i = 0; i < conditions.size(); ++i) {
        const auto& c = conditions[i];
        if (!(c.px >= 0.0)) {
            throw InputError(fmt::format("instance: negative P_X mass at condition {}", i));
        }
        if (c.x.size() != conditions.front().x.size()) {
            throw InputError("instance: inconsistent x dimensions");
        }
        px_total += c.px;
        check_sum(c.p_cond, "p_cond", i);
        check_sum(c.q_cond, "q_cond", i);
        if (c.p_cond.front().point.size() != conditions.front().p_cond.front().point.size() ||
            c.q_cond.front().point.size() != conditions.front().p_cond.front().point.size()) {
            throw InputError("instance: inconsistent y dimensions");
        }
    }
    if (std::abs(px_total - 1.0) > kProbTolerance) {
        throw InputError(fmt::format("instance: P_X sums to {}", px_total));
    }
}

std::size_t DiscreteInstance::total_support() const noexcept {
    std::size_t total = 0;
    for (const auto& c : conditions) {
        total += c.p_cond.size() + c.q_cond.size();
    }
    return total;
}

ExactMetrics exact_metrics(const DiscreteInstance& inst, const Kernel& kx, const Kernel& ky) {
    require_tractable(inst);
    const WeightedPoints p = joint_atoms(inst, true);
    const WeightedPoints q = joint_atoms(inst, false);

    ExactMetrics out;
    const double pp = weighted_sum(joint_gram(kx, ky, p, p), p.w, p.w);
    const double pq = weighted_sum(joint_gram(kx, ky, p, q), p.w, q.w);
    const double qq = weighted_sum(joint_gram(kx, ky, q, q), q.w, q.w);
    out.c1 = pp;
    out.jmmd2 = pp - 2.0 * pq + qq;

    const double ypp = weighted_sum(gram(ky, p.ys, p.ys), p.w, p.w);
    const double ypq = weighted_sum(gram(ky, p.ys, q.ys), p.w, q.w);
    const double yqq = weighted_sum(gram(ky, q.ys, q.ys), q.w, q.w);
    out.mmd2_marginal_y = ypp - 2.0 * ypq + yqq;
    out.e_k2_marginal = ypp;

    CompensatedSum ammd, c0, ek1;
    for (const auto& c : inst.conditions) {
        if (c.px <= 0.0) {
            continue;
        }
        const WeightedPoints cp = cond_atoms(c.p_cond);
        const WeightedPoints cq = cond_atoms(c.q_cond);
        const double cpp = weighted_sum(gram(ky, cp.ys, cp.ys), cp.w, cp.w);
        const double cpq = weighted_sum(gram(ky, cp.ys, cq.ys), cp.w, cq.w);
        const double cqq = weighted_sum(gram(ky, cq.ys, cq.ys), cq.w, cq.w);
        ammd.add(c.px * (cpp - 2.0 * cpq + cqq));
        c0.add(c.px * cpp);
        ek1.add(c.px * kx.eval(c.x, c.x));
    }
    out.ammd2 = ammd.value();
    out.c0 = c0.value();
    out.e_k1xx = ek1.value();
    return out;
}

EstimatorFns EstimatorFns::library() {
    EstimatorFns fns;
    fns.jmmd = [](const Kernel& kx, const Kernel& ky, const Batch& d, const GenBatch& g) {
        return jmmd_hat(kx, ky, d, g, Gradient::Skip).value;
    };
    fns.ammd = [](const Kernel& ky, const GroupedBatch& gb) { return ammd_hat(ky, gb, Gradient::Skip).value; };
    fns.mmd = [](const Kernel& ky, const Points& ys, const Points& yhats) { return mmd2_unbiased(ky, ys, yhats); };
    return fns;
}

Moments estimator_moments(const DiscreteInstance& inst, EstimatorKind kind, SampleSizes sizes, const Kernel& kx,
                          const Kernel& ky, const EstimatorFns& fns) {
    require_tractable(inst);
    MomentAccumulator acc;

    if (kind == EstimatorKind::Jmmd || kind == EstimatorKind::Mmd) {
        const WeightedPoints p = joint_atoms(inst, true);
        const WeightedPoints q = joint_atoms(inst, false);
        const std::size_t data_slots = (kind == EstimatorKind::Jmmd) ? sizes.r : sizes.n;
        std::vector<std::size_t> radices(data_slots, p.size());
        radices.insert(radices.end(), sizes.m, q.size());
        if (tuple_count(radices) > kMaxEnumeration) {
            throw InputError(fmt::format("enumeration of {} tuples exceeds the limit", tuple_count(radices)));
        }
        Batch data;
        GenBatch gen;
        data.xs.resize(data_slots);
        data.ys.resize(data_slots);
        gen.xs.resize(sizes.m);
        gen.yhats.resize(sizes.m);
        for_each_tuple(radices, [&](const std::vector<std::size_t>& idx) {
            double w = 1.0;
            for (std::size_t l = 0; l < data_slots; ++l) {
                data.xs[l] = p.xs[idx[l]];
                data.ys[l] = p.ys[idx[l]];
                w *= p.w[idx[l]];
            }
            for (std::size_t j = 0; j < sizes.m; ++j) {
                const std::size_t a = idx[data_slots + j];
                gen.xs[j] = q.xs[a];
                gen.yhats[j] = q.ys[a];
                w *= q.w[a];
            }
            const double v = (kind == EstimatorKind::Jmmd) ? fns.jmmd(kx, ky, data, gen) : fns.mmd(ky, data.ys, gen.yhats);
            acc.add(w, v);
        });
        return acc.moments();
    }

    // Grouped: enumerate every single-group outcome, then all n-tuples of outcomes.
    std::vector<Group> outcomes;
    std::vector<double> outcome_w;
    for (const auto& c : inst.conditions) {
        if (c.px <= 0.0) {
            continue;
        }
        const WeightedPoints cp = cond_atoms(c.p_cond);
        const WeightedPoints cq = cond_atoms(c.q_cond);
        std::vector<std::size_t> radices(sizes.r, cp.size());
        radices.insert(radices.end(), sizes.m, cq.size());
        if (tuple_count(radices) > kMaxEnumeration) {
            throw InputError("group enumeration exceeds the limit");
        }
        for_each_tuple(radices, [&](const std::vector<std::size_t>& idx) {
            Group g;
            g.x = c.x;
            double w = c.px;
            for (std::size_t l = 0; l < sizes.r; ++l) {
                g.ys.push_back(cp.ys[idx[l]]);
                w *= cp.w[idx[l]];
            }
            for (std::size_t j = 0; j < sizes.m; ++j) {
                g.yhats.push_back(cq.ys[idx[sizes.r + j]]);
                w *= cq.w[idx[sizes.r + j]];
            }
            outcomes.push_back(std::move(g));
            outcome_w.push_back(w);
        });
    }
    const std::vector<std::size_t> radices(sizes.n, outcomes.size());
    if (tuple_count(radices) > kMaxEnumeration) {
        throw InputError(fmt::format("enumeration of {} tuples exceeds the limit", tuple_count(radices)));
    }
    GroupedBatch batch;
    batch.groups.resize(sizes.n);
    for_each_tuple(radices, [&](const std::vector<std::size_t>& idx) {
        double w = 1.0;
        for (std::size_t i = 0; i < sizes.n; ++i) {
            batch.groups[i] = outcomes[idx[i]];
            w *= outcome_w[idx[i]];
        }
        acc.add(w, fns.ammd(ky, batch));
    });
    return acc.moments();
}

double closed_form_variance_jmmd(const DiscreteInstance& inst, std::size_t m, std::size_t r, const Kernel& kx,
                                 const Kernel& ky) {
    require_tractable(inst);
    if (m < 2 || r < 1) {
        throw InputError("closed_form_variance_jmmd: need m >= 2 and r >= 1");
    }
    const WeightedPoints p = joint_atoms(inst, true);
    const WeightedPoints q = joint_atoms(inst, false);
    return two_sample_variance(joint_gram(kx, ky, p, q), joint_gram(kx, ky, q, q), p.w, q.w, m, r).variance;
}

AmmdVariance closed_form_variance_ammd(const DiscreteInstance& inst, std::size_t n, std::size_t m, std::size_t r,
                                       const Kernel& ky) {
    require_tractable(inst);
    if (n < 1 || m < 2 || r < 1) {
        throw InputError("closed_form_variance_ammd: need n >= 1, m >= 2 and r >= 1");
    }
    std::vector<double> px, means, vars;
    for (const auto& c : inst.conditions) {
        if (c.px <= 0.0) {
            continue;
        }
        const WeightedPoints cp = cond_atoms(c.p_cond);
        const WeightedPoints cq = cond_atoms(c.q_cond);
        const auto t = two_sample_variance(gram(ky, cp.ys, cq.ys), gram(ky, cq.ys, cq.ys), cp.w, cq.w, m, r);
        px.push_back(c.px);
        means.push_back(t.mean);
        vars.push_back(t.variance);
    }
    CompensatedSum mean_of_means, expected_var;
    for (std::size_t i = 0; i < px.size(); ++i) {
        mean_of_means.add(px[i] * means[i]);
        expected_var.add(px[i] * vars[i]);
    }
    CompensatedSum k0;
    for (std::size_t i = 0; i < px.size(); ++i) {
        const double d = means[i] - mean_of_means.value();
        k0.add(px[i] * d * d);
    }
    const double nn = static_cast<double>(n);
    return {(expected_var.value() + k0.value()) / nn, k0.value()};
}

double finite_feature_cmmd(const Batch& data, const GenBatch& gen, double lambda) {
    if (!(lambda > 0.0)) {
        throw InputError("finite_feature_cmmd: lambda must be positive");
    }
    if (data.size() < 1 || gen.size() < 1 || data.ys.size() != data.size() || gen.yhats.size() != gen.size()) {
        throw InputError("finite_feature_cmmd: malformed samples");
    }
    // Columns are samples: X is (d_x x s), Y is (d_y x s).
    auto as_matrix = [](const Points& pts) {
        Matrix out(pts.front().size(), static_cast<Eigen::Index>(pts.size()));
        for (std::size_t i = 0; i < pts.size(); ++i) {
            out.col(static_cast<Eigen::Index>(i)) = pts[i];
        }
        return out;
    };
    auto operator_estimate = [&](const Points& xs, const Points& ys) {
        const Matrix x = as_matrix(xs);
        const Matrix y = as_matrix(ys);
        const auto s = static_cast<Eigen::Index>(xs.size());
        const Matrix reg = x.transpose() * x + lambda * static_cast<double>(s) * Matrix::Identity(s, s);
        Eigen::FullPivLU<Matrix> lu(reg);
        if (!lu.isInvertible()) {
            throw NumericError("finite_feature_cmmd: regularized Gram matrix is singular");
        }
        return Matrix(y * lu.solve(x.transpose()));
    };
    const Matrix c_p = operator_estimate(data.xs, data.ys);
    const Matrix c_q = operator_estimate(gen.xs, gen.yhats);
    return (c_p - c_q).squaredNorm();
}

InequalityCheck check_metric_inequalities(const DiscreteInstance& inst, const Kernel& kx, const Kernel& ky) {
    const ExactMetrics e = exact_metrics(inst, kx, ky);
    InequalityCheck out;
    out.slack = e.e_k1xx * e.ammd2 - e.jmmd2;
    out.thm7_holds = e.jmmd2 <= e.e_k1xx * e.ammd2 + 1e-12;
    return out;
}

DiscreteInstance random_instance(std::mt19937_64& rng, const RandomInstanceOptions& options) {
    std::uniform_int_distribution<std::size_t> count_x(1, options.max_x);
    std::uniform_int_distribution<std::size_t> count_y(1, options.max_support);
    std::uniform_real_distribution<double> coord(-options.coord_range, options.coord_range);
    std::uniform_real_distribution<double> mass(0.05, 1.0);

    auto random_point = [&](Eigen::Index dim) {
        Vector v(dim);
        for (Eigen::Index i = 0; i < dim; ++i) {
            v(i) = coord(rng);
        }
        return v;
    };
    auto normalize = [](std::vector<double>& w) {
        double total = 0.0;
        for (double v : w) {
            total += v;
        }
        for (double& v : w) {
            v /= total;
        }
    };
    auto random_law = [&]() {
        std::vector<Atom> atoms(count_y(rng));
        std::vector<double> w(atoms.size());
        for (auto& v : w) {
            v = mass(rng);
        }
        normalize(w);
        for (std::size_t i = 0; i < atoms.size(); ++i) {
            atoms[i] = {random_point(options.y_dim), w[i]};
        }
        return atoms;
    };

    DiscreteInstance inst;
    inst.conditions.resize(count_x(rng));
    std::vector<double> px(inst.conditions.size());
    for (auto& v : px) {
        v = mass(rng);
    }
    normalize(px);
    for (std::size_t i = 0; i < inst.conditions.size(); ++i) {
        auto& c = inst.conditions[i];
        c.x = random_point(options.x_dim);
        c.px = px[i];
        c.p_cond = random_law();
        c.q_cond = random_law();
    }
    return inst;
}

DiscreteInstance pm_one_instance() {
    DiscreteInstance inst;
    Condition c;
    c.x = Vector::Zero(1);
    c.px = 1.0;
    c.p_cond = {{Vector::Constant(1, -1.0), 0.5}, {Vector::Constant(1, 1.0), 0.5}};
    c.q_cond = {{Vector::Zero(1), 1.0}};
    inst.conditions.push_back(std::move(c));
    return inst;
}

}  // namespace cgm::oracle
