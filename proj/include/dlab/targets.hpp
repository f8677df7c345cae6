#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dlab/matrix.hpp"
#include "dlab/rng.hpp"

namespace dlab {

// Forward perturbation kernel: x_t = scale * x_0 + sqrt(noise_var) * eps.
struct KernelParams {
    double scale = 1.0;
    double noise_var = 0.0;
};

void validate_kernel(const KernelParams& k);

// Gaussian mixture with diagonal (per-dimension) covariances and exact
// density / score / posterior oracles.  Closed under the perturbation kernel
// above, which is what makes every sampler in this lab testable without a
// learned model.
class GaussianMixture {
public:
    // weights: K entries, strictly positive, summing to 1 within 1e-12.
    // means, variances: K x d; variances strictly positive.
    GaussianMixture(std::vector<double> weights, Matrix means, Matrix variances);

    std::size_t dim() const { return means_.cols; }
    std::size_t components() const { return weights_.size(); }
    const std::vector<double>& weights() const { return weights_; }
    const Matrix& means() const { return means_; }
    const Matrix& variances() const { return variances_; }

    double log_density(std::span<const double> x) const;

    // grad_x log p(x)
    void score(std::span<const double> x, std::span<double> out) const;
    Vec score(std::span<const double> x) const;

    // Component responsibilities p(k | x); sums to 1.
    void posterior(std::span<const double> x, std::span<double> out) const;
    Vec posterior(std::span<const double> x) const;

    // Marginal moments per dimension.
    Vec marginal_mean() const;
    Vec marginal_variance() const;

private:
    void check_dim(std::span<const double> x) const;
    // log w_k + log N(x; mu_k, v_k) per component, into out (size K).
    void component_log_terms(std::span<const double> x, std::span<double> out) const;

    std::vector<double> weights_;
    Matrix means_;
    Matrix variances_;
    Matrix inv_var_;
    std::vector<double> log_norm_;  // log w_k - 0.5 sum_d log(2 pi v_kd)
};

// Closure under the forward kernel: means scale, variances pick up noise_var.
GaussianMixture perturb(const GaussianMixture& g, const KernelParams& k);

// eps-prediction oracle: eps(x_t) = -sqrt(noise_var) * score_t(x_t).
// Requires noise_var > 0 (the identity degenerates otherwise).
Vec eps_oracle(const GaussianMixture& g, const KernelParams& k, std::span<const double> x_t);
void eps_from_perturbed(const GaussianMixture& perturbed, double noise_var,
                        std::span<const double> x_t, std::span<double> out);

// Class posterior p(y | x_t) under the perturbed mixture, and the gradient
// of log p(y = label | x_t) with respect to x_t.
Vec class_posterior(const GaussianMixture& g, const KernelParams& k, std::span<const double> x_t);
Vec class_grad(const GaussianMixture& g, const KernelParams& k, std::span<const double> x_t,
               std::size_t label);
void class_grad_from_perturbed(const GaussianMixture& perturbed, std::size_t label,
                               std::span<const double> x_t, std::span<double> out);

struct SampleSet {
    Matrix x;                         // n x d
    std::vector<std::size_t> labels;  // generating component per draw
};

// Exact ancestral sampling: component by weight, then the diagonal Gaussian.
SampleSet sample_exact(const GaussianMixture& g, std::size_t n, RngStream& rng);

}  // namespace dlab
