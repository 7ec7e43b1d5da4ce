#include "cgm/estimators.hpp"

#include <fmt/format.h>

#include <cmath>

namespace cgm {

namespace {

void require_same_dims(const Points& pts, const char* what) {
    for (const auto& p : pts) {
        if (p.size() != pts.front().size()) {
            throw InputError(fmt::format("{}: inconsistent point dimensions", what));
        }
    }
}

void check_batch(const Batch& data) {
    if (data.xs.size() != data.ys.size()) {
        throw InputError("batch: xs and ys differ in length");
    }
    if (!data.xs.empty()) {
        require_same_dims(data.xs, "batch xs");
        require_same_dims(data.ys, "batch ys");
    }
}

void check_gen(const GenBatch& gen) {
    if (gen.xs.size() != gen.yhats.size()) {
        throw InputError("generated batch: xs and yhats differ in length");
    }
    if (!gen.xis.empty() && gen.xis.size() != gen.xs.size()) {
        throw InputError("generated batch: xis must be empty or match xs in length");
    }
    if (!gen.xs.empty()) {
        require_same_dims(gen.xs, "generated xs");
        require_same_dims(gen.yhats, "generated yhats");
    }
}

// Off-diagonal mean (1/(s(s-1))) sum_{i != j} K(i, j) of a square table.
double offdiag_mean(const Matrix& k) {
    const Eigen::Index s = k.rows();
    double acc = 0.0;
    for (Eigen::Index i = 0; i < s; ++i) {
        for (Eigen::Index j = 0; j < s; ++j) {
            if (i != j) {
                acc += k(i, j);
            }
        }
    }
    return acc / (static_cast<double>(s) * static_cast<double>(s - 1));
}

}  // namespace

std::size_t GroupedBatch::generated_count() const noexcept {
    std::size_t total = 0;
    for (const auto& g : groups) {
        total += g.yhats.size();
    }
    return total;
}

double mmd2_unbiased(const Kernel& ky, const Points& ys, const Points& yhats) {
    if (ys.size() < 2 || yhats.size() < 2) {
        throw InputError("mmd2_unbiased: both samples need at least two points");
    }
    const double n = static_cast<double>(ys.size());
    const double m = static_cast<double>(yhats.size());
    const double within_p = offdiag_mean(gram(ky, ys, ys));
    const double within_q = offdiag_mean(gram(ky, yhats, yhats));
    const double cross = gram(ky, ys, yhats).sum() / (n * m);
    return within_p - 2.0 * cross + within_q;
}

EstimateWithGrad jmmd_hat(const Kernel& kx, const Kernel& ky, const Batch& data, const GenBatch& gen,
                          Gradient gradient) {
    check_batch(data);
    check_gen(gen);
    const std::size_t r = data.size();
    const std::size_t m = gen.size();
    if (r < 1) {
        throw InputError("jmmd_hat: data batch is empty");
    }
    if (m < 2) {
        throw InputError("jmmd_hat: need at least two generated samples");
    }
    const double cross_w = 2.0 / (static_cast<double>(m) * static_cast<double>(r));
    const double self_w = 1.0 / (static_cast<double>(m) * static_cast<double>(m - 1));

    const Matrix kx_dg = gram(kx, data.xs, gen.xs);
    const Matrix ky_dg = gram(ky, data.ys, gen.yhats);
    const Matrix kx_gg = gram(kx, gen.xs, gen.xs);
    const Matrix ky_gg = gram(ky, gen.yhats, gen.yhats);

    double cross = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
        for (std::size_t l = 0; l < r; ++l) {
            const auto li = static_cast<Eigen::Index>(l), ji = static_cast<Eigen::Index>(j);
            cross += kx_dg(li, ji) * ky_dg(li, ji);
        }
    }
    double self = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
        for (std::size_t jp = 0; jp < m; ++jp) {
            if (j != jp) {
                const auto a = static_cast<Eigen::Index>(j), b = static_cast<Eigen::Index>(jp);
                self += kx_gg(a, b) * ky_gg(a, b);
            }
        }
    }

    EstimateWithGrad out;
    out.value = -cross_w * cross + self_w * self;
    if (gradient == Gradient::Skip) {
        return out;
    }
    out.grads_wrt_generated.reserve(m);
    for (std::size_t j = 0; j < m; ++j) {
        const auto ji = static_cast<Eigen::Index>(j);
        Vector g = Vector::Zero(gen.yhats[j].size());
        for (std::size_t l = 0; l < r; ++l) {
            g -= cross_w * kx_dg(static_cast<Eigen::Index>(l), ji) * ky.grad_second(data.ys[l], gen.yhats[j]);
        }
        for (std::size_t jp = 0; jp < m; ++jp) {
            if (jp != j) {
                g += 2.0 * self_w * kx_gg(static_cast<Eigen::Index>(jp), ji) *
                     ky.grad_second(gen.yhats[jp], gen.yhats[j]);
            }
        }
        out.grads_wrt_generated.push_back(std::move(g));
    }
    return out;
}

EstimateWithGrad ammd_hat(const Kernel& ky, const GroupedBatch& grouped, Gradient gradient) {
    if (grouped.groups.empty()) {
        throw InputError("ammd_hat: no groups");
    }
    const std::size_t r = grouped.groups.front().ys.size();
    const std::size_t m = grouped.groups.front().yhats.size();
    if (r < 1) {
        throw InputError("ammd_hat: each group needs at least one observed output");
    }
    if (m < 2) {
        throw InputError("ammd_hat: each group needs at least two generated outputs");
    }
    for (const auto& g : grouped.groups) {
        if (g.ys.size() != r || g.yhats.size() != m) {
            throw InputError(fmt::format("ammd_hat: inconsistent group sizes (expected r={}, m={}, got r={}, m={})", r,
                                         m, g.ys.size(), g.yhats.size()));
        }
    }
    const double n = static_cast<double>(grouped.size());
    const double cross_w = 2.0 / (static_cast<double>(m) * static_cast<double>(r));
    const double self_w = 1.0 / (static_cast<double>(m) * static_cast<double>(m - 1));

    EstimateWithGrad out;
    if (gradient == Gradient::Compute) {
        out.grads_wrt_generated.reserve(grouped.generated_count());
    }
    double total = 0.0;
    for (const auto& g : grouped.groups) {
        const Matrix k_cross = gram(ky, g.ys, g.yhats);
        const Matrix k_self = gram(ky, g.yhats, g.yhats);
        const double term = -cross_w * k_cross.sum() + self_w * (k_self.sum() - k_self.trace());
        total += term;
        if (gradient == Gradient::Skip) {
            continue;
        }
        for (std::size_t j = 0; j < m; ++j) {
            Vector grad = Vector::Zero(g.yhats[j].size());
            for (std::size_t l = 0; l < r; ++l) {
                grad -= cross_w * ky.grad_second(g.ys[l], g.yhats[j]);
            }
            for (std::size_t jp = 0; jp < m; ++jp) {
                if (jp != j) {
                    grad += 2.0 * self_w * ky.grad_second(g.yhats[jp], g.yhats[j]);
                }
            }
            out.grads_wrt_generated.push_back(grad / n);
        }
    }
    out.value = total / n;
    return out;
}

double c0_hat(const Kernel& ky, const GroupedBatch& grouped) {
    if (grouped.groups.empty()) {
        throw InputError("c0_hat: no groups");
    }
    double total = 0.0;
    for (const auto& g : grouped.groups) {
        if (g.ys.size() < 2) {
            throw InputError("c0_hat: every group needs at least two observed outputs");
        }
        total += offdiag_mean(gram(ky, g.ys, g.ys));
    }
    return total / static_cast<double>(grouped.size());
}

double c1_hat(const Kernel& kx, const Kernel& ky, const Batch& data) {
    check_batch(data);
    if (data.size() < 2) {
        throw InputError("c1_hat: need at least two joint observations");
    }
    const Matrix k = gram(kx, data.xs, data.xs).cwiseProduct(gram(ky, data.ys, data.ys));
    return offdiag_mean(k);
}

namespace {

struct CmmdTerms {
    double value = 0.0;
    Matrix coef_dg;  // d value / d K2_DG
    Matrix coef_gg;  // d value / d K2_GG (symmetric)
};

Matrix ridge_inverse(const Matrix& k, double ridge, const char* side) {
    const Eigen::Index s = k.rows();
    Eigen::LLT<Matrix> llt(k + ridge * Matrix::Identity(s, s));
    if (llt.info() != Eigen::Success) {
        throw NumericError(fmt::format("cmmd_hat: {} ridge system is not positive definite", side));
    }
    return llt.solve(Matrix::Identity(s, s));
}

CmmdTerms cmmd_terms(const Kernel& kx, const Kernel& ky, const Batch& data, const GenBatch& gen, double lambda,
                     bool want_coefs) {
    check_batch(data);
    check_gen(gen);
    if (!(lambda > 0.0)) {
        throw InputError("cmmd_hat: lambda must be positive");
    }
    if (data.size() < 1 || gen.size() < 1) {
        throw InputError("cmmd_hat: both samples must be non-empty");
    }
    const double n = static_cast<double>(data.size());
    const double m = static_cast<double>(gen.size());

    const Matrix k1_dd = gram(kx, data.xs, data.xs);
    const Matrix k1_gg = gram(kx, gen.xs, gen.xs);
    const Matrix k1_dg = gram(kx, data.xs, gen.xs);
    const Matrix k2_dd = gram(ky, data.ys, data.ys);
    const Matrix k2_gg = gram(ky, gen.yhats, gen.yhats);
    const Matrix k2_dg = gram(ky, data.ys, gen.yhats);

    const Matrix a_p = ridge_inverse(k1_dd, lambda * n, "data");
    const Matrix a_q = ridge_inverse(k1_gg, lambda * m, "generated");

    const double t_pp = (a_p * k2_dd * a_p * k1_dd).trace();
    const double t_pq = (a_p * k2_dg * a_q * k1_dg.transpose()).trace();
    const double t_qq = (a_q * k2_gg * a_q * k1_gg).trace();

    CmmdTerms out;
    out.value = t_pp - 2.0 * t_pq + t_qq;
    if (want_coefs) {
        out.coef_dg = -2.0 * a_p * k1_dg * a_q;
        out.coef_gg = a_q * k1_gg * a_q;
    }
    return out;
}

}  // namespace

double cmmd_hat(const Kernel& kx, const Kernel& ky, const Batch& data, const GenBatch& gen, double lambda) {
    return cmmd_terms(kx, ky, data, gen, lambda, false).value;
}

EstimateWithGrad cmmd_hat_with_grad(const Kernel& kx, const Kernel& ky, const Batch& data, const GenBatch& gen,
                                    double lambda) {
    const CmmdTerms t = cmmd_terms(kx, ky, data, gen, lambda, true);
    EstimateWithGrad out;
    out.value = t.value;
    const std::size_t m = gen.size();
    out.grads_wrt_generated.reserve(m);
    for (std::size_t j = 0; j < m; ++j) {
        const auto ji = static_cast<Eigen::Index>(j);
        Vector g = t.coef_gg(ji, ji) * ky.grad_diagonal(gen.yhats[j]);
        for (std::size_t l = 0; l < data.size(); ++l) {
            g += t.coef_dg(static_cast<Eigen::Index>(l), ji) * ky.grad_second(data.ys[l], gen.yhats[j]);
        }
        for (std::size_t jp = 0; jp < m; ++jp) {
            if (jp != j) {
                g += 2.0 * t.coef_gg(static_cast<Eigen::Index>(jp), ji) * ky.grad_second(gen.yhats[jp], gen.yhats[j]);
            }
        }
        out.grads_wrt_generated.push_back(std::move(g));
    }
    return out;
}

EstimatorSettings recommend_settings(Metric metric, std::size_t budget) {
    if (budget < 4) {
        throw InputError("recommend_settings: budget must be at least 4");
    }
    if (metric == Metric::Ammd) {
        return {budget / 3, 2, 1};
    }
    const auto side = static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(budget))));
    return {1, side, side};
}

}  // namespace cgm
