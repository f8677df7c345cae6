#include "dlab/targets.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace dlab {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // log(2*pi)
constexpr double kWeightSumTol = 1e-12;

}  // namespace

void validate_kernel(const KernelParams& k) {
    if (!(k.scale > 0.0) || !std::isfinite(k.scale))
        throw std::invalid_argument("KernelParams: scale must be finite and > 0, got " +
                                    std::to_string(k.scale));
    if (!(k.noise_var >= 0.0) || !std::isfinite(k.noise_var))
        throw std::invalid_argument("KernelParams: noise_var must be finite and >= 0, got " +
                                    std::to_string(k.noise_var));
}

GaussianMixture::GaussianMixture(std::vector<double> weights, Matrix means, Matrix variances)
    : weights_(std::move(weights)), means_(std::move(means)), variances_(std::move(variances)) {
    const std::size_t k = weights_.size();
    if (k == 0) throw std::invalid_argument("GaussianMixture: needs at least one component");
    if (means_.rows != k || variances_.rows != k)
        throw std::invalid_argument("GaussianMixture: weights/means/variances disagree on K");
    if (means_.cols == 0 || variances_.cols != means_.cols)
        throw std::invalid_argument("GaussianMixture: means/variances disagree on dimension");

    double sum = 0.0;
    for (double w : weights_) {
        if (!(w > 0.0) || !std::isfinite(w))
            throw std::invalid_argument("GaussianMixture: weights must be finite and > 0");
        sum += w;
    }
    if (std::abs(sum - 1.0) > kWeightSumTol)
        throw std::invalid_argument("GaussianMixture: weights sum to " + std::to_string(sum) +
                                    ", expected 1 within 1e-12");
    for (double v : variances_.data) {
        if (!(v > 0.0) || !std::isfinite(v))
            throw std::invalid_argument("GaussianMixture: variances must be finite and > 0");
    }

    inv_var_ = Matrix(k, means_.cols);
    log_norm_.resize(k);
    for (std::size_t i = 0; i < k; ++i) {
        double ln = std::log(weights_[i]);
        for (std::size_t j = 0; j < means_.cols; ++j) {
            const double v = variances_.at(i, j);
            inv_var_.at(i, j) = 1.0 / v;
            ln -= 0.5 * (kLog2Pi + std::log(v));
        }
        log_norm_[i] = ln;
    }
}

void GaussianMixture::check_dim(std::span<const double> x) const {
    if (x.size() != dim())
        throw std::invalid_argument("GaussianMixture: point has dimension " +
                                    std::to_string(x.size()) + ", expected " +
                                    std::to_string(dim()));
}

void GaussianMixture::component_log_terms(std::span<const double> x, std::span<double> out) const {
    for (std::size_t i = 0; i < components(); ++i) {
        double q = 0.0;
        for (std::size_t j = 0; j < dim(); ++j) {
            const double r = x[j] - means_.at(i, j);
            q += r * r * inv_var_.at(i, j);
        }
        out[i] = log_norm_[i] - 0.5 * q;
    }
}

double GaussianMixture::log_density(std::span<const double> x) const {
    check_dim(x);
    // log-sum-exp over components; never sums raw densities.
    std::vector<double> lt(components());
    component_log_terms(x, lt);
    const double m = *std::max_element(lt.begin(), lt.end());
    double acc = 0.0;
    for (double v : lt) acc += std::exp(v - m);
    return m + std::log(acc);
}

void GaussianMixture::posterior(std::span<const double> x, std::span<double> out) const {
    check_dim(x);
    std::vector<double> lt(components());
    component_log_terms(x, lt);
    const double m = *std::max_element(lt.begin(), lt.end());
    double acc = 0.0;
    for (std::size_t i = 0; i < components(); ++i) {
        out[i] = std::exp(lt[i] - m);
        acc += out[i];
    }
    for (std::size_t i = 0; i < components(); ++i) out[i] /= acc;
}

Vec GaussianMixture::posterior(std::span<const double> x) const {
    Vec r(components());
    posterior(x, r);
    return r;
}

void GaussianMixture::score(std::span<const double> x, std::span<double> out) const {
    // sum_k r_k(x) * (mu_k - x) / v_k, with r_k the responsibilities.
    std::vector<double> resp(components());
    posterior(x, resp);
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t i = 0; i < components(); ++i) {
        const double r = resp[i];
        for (std::size_t j = 0; j < dim(); ++j)
            out[j] += r * (means_.at(i, j) - x[j]) * inv_var_.at(i, j);
    }
}

Vec GaussianMixture::score(std::span<const double> x) const {
    Vec r(dim());
    score(x, r);
    return r;
}

Vec GaussianMixture::marginal_mean() const {
    Vec m(dim(), 0.0);
    for (std::size_t i = 0; i < components(); ++i)
        for (std::size_t j = 0; j < dim(); ++j) m[j] += weights_[i] * means_.at(i, j);
    return m;
}

Vec GaussianMixture::marginal_variance() const {
    const Vec m = marginal_mean();
    Vec v(dim(), 0.0);
    for (std::size_t i = 0; i < components(); ++i)
        for (std::size_t j = 0; j < dim(); ++j) {
            const double mu = means_.at(i, j);
            v[j] += weights_[i] * (variances_.at(i, j) + mu * mu);
        }
    for (std::size_t j = 0; j < dim(); ++j) v[j] -= m[j] * m[j];
    return v;
}

GaussianMixture perturb(const GaussianMixture& g, const KernelParams& k) {
    validate_kernel(k);
    Matrix means = g.means();
    Matrix vars = g.variances();
    const double s2 = k.scale * k.scale;
    for (auto& m : means.data) m *= k.scale;
    for (auto& v : vars.data) v = s2 * v + k.noise_var;
    return GaussianMixture(g.weights(), std::move(means), std::move(vars));
}

void eps_from_perturbed(const GaussianMixture& perturbed, double noise_var,
                        std::span<const double> x_t, std::span<double> out) {
    if (!(noise_var > 0.0))
        throw std::invalid_argument("eps oracle: noise_var must be > 0 (degenerate kernel)");
    perturbed.score(x_t, out);
    const double s = -std::sqrt(noise_var);
    for (auto& v : out) v *= s;
}

Vec eps_oracle(const GaussianMixture& g, const KernelParams& k, std::span<const double> x_t) {
    const GaussianMixture pert = perturb(g, k);
    Vec out(g.dim());
    eps_from_perturbed(pert, k.noise_var, x_t, out);
    return out;
}

Vec class_posterior(const GaussianMixture& g, const KernelParams& k, std::span<const double> x_t) {
    return perturb(g, k).posterior(x_t);
}

void class_grad_from_perturbed(const GaussianMixture& perturbed, std::size_t label,
                               std::span<const double> x_t, std::span<double> out) {
    if (label >= perturbed.components())
        throw std::invalid_argument("class_grad: label " + std::to_string(label) +
                                    " out of range for K = " +
                                    std::to_string(perturbed.components()));
    // grad log p(y|x) = grad log N(x; m_y, c_y) - grad log p(x)
    perturbed.score(x_t, out);
    for (std::size_t j = 0; j < perturbed.dim(); ++j) {
        const double comp = (perturbed.means().at(label, j) - x_t[j]) /
                            perturbed.variances().at(label, j);
        out[j] = comp - out[j];
    }
}

Vec class_grad(const GaussianMixture& g, const KernelParams& k, std::span<const double> x_t,
               std::size_t label) {
    const GaussianMixture pert = perturb(g, k);
    Vec out(g.dim());
    class_grad_from_perturbed(pert, label, x_t, out);
    return out;
}

SampleSet sample_exact(const GaussianMixture& g, std::size_t n, RngStream& rng) {
    SampleSet s;
    s.x = Matrix(n, g.dim());
    s.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double u = rng.uniform();
        double acc = 0.0;
        std::size_t k = g.components() - 1;
        for (std::size_t c = 0; c < g.components(); ++c) {
            acc += g.weights()[c];
            if (u < acc) {
                k = c;
                break;
            }
        }
        s.labels[i] = k;
        auto row = s.x.row(i);
        for (std::size_t j = 0; j < g.dim(); ++j)
            row[j] = g.means().at(k, j) + std::sqrt(g.variances().at(k, j)) * rng.normal();
    }
    return s;
}

}  // namespace dlab
