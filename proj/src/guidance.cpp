#include "dlab/guidance.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace dlab {

BoundClassifier::BoundClassifier(const GuidanceAttachment& att, const GaussianMixture& target)
    : att_(att) {
    if (att_.kind == ClassifierKind::Null) return;
    if (att_.label >= target.components())
        throw std::invalid_argument("guidance: label " + std::to_string(att_.label) +
                                    " out of range for K = " + std::to_string(target.components()));
    if (!std::isfinite(att_.scale))
        throw std::invalid_argument("guidance: scale must be finite");
    if (att_.kind == ClassifierKind::Untrained) {
        const std::size_t k = target.components();
        const std::size_t d = target.dim();
        // Untrained head: (W, b) ~ N(0, 1)/sqrt(d), keyed by seed only.
        RngStream rng(att_.seed, 0x67756964ULL);  // fixed salt, "guid"
        const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
        w_ = Matrix(k, d);
        for (auto& v : w_.data) v = rng.normal() * inv_sqrt_d;
        b_.resize(k);
        for (auto& v : b_) v = rng.normal() * inv_sqrt_d;
    }
}

void BoundClassifier::grad(const GaussianMixture& perturbed, std::span<const double> x_t,
                           std::span<double> out) const {
    switch (att_.kind) {
        case ClassifierKind::Null:
            std::fill(out.begin(), out.end(), 0.0);
            return;
        case ClassifierKind::Exact:
            class_grad_from_perturbed(perturbed, att_.label, x_t, out);
            return;
        case ClassifierKind::Untrained: {
            // d/dx log softmax_y(Wx + b) = W_y - sum_j p_j W_j
            const std::size_t k = w_.rows;
            const std::size_t d = w_.cols;
            std::vector<double> logits(k);
            for (std::size_t i = 0; i < k; ++i) {
                double z = b_[i];
                for (std::size_t j = 0; j < d; ++j) z += w_.at(i, j) * x_t[j];
                logits[i] = z;
            }
            const double m = *std::max_element(logits.begin(), logits.end());
            double acc = 0.0;
            for (auto& z : logits) {
                z = std::exp(z - m);
                acc += z;
            }
            for (std::size_t j = 0; j < d; ++j) {
                double v = w_.at(att_.label, j);
                for (std::size_t i = 0; i < k; ++i) v -= (logits[i] / acc) * w_.at(i, j);
                out[j] = v;
            }
            return;
        }
    }
}

Vec classifier_grad(const GuidanceAttachment& att, const GaussianMixture& target,
                    const KernelParams& k, std::span<const double> x_t) {
    BoundClassifier cls(att, target);
    Vec out(target.dim(), 0.0);
    if (!cls.active()) return out;
    const GaussianMixture pert = perturb(target, k);
    cls.grad(pert, x_t, out);
    return out;
}

void apply_mean_shift(std::span<double> mu, double sigma2, std::span<const double> grad,
                      double scale) {
    if (mu.size() != grad.size())
        throw std::invalid_argument("guided_mean_shift: mu/grad size mismatch");
    for (std::size_t j = 0; j < mu.size(); ++j) mu[j] += scale * sigma2 * grad[j];
}

Vec guided_mean_shift(std::span<const double> mu, double sigma2, std::span<const double> grad,
                      double scale) {
    Vec out(mu.begin(), mu.end());
    apply_mean_shift(out, sigma2, grad, scale);
    return out;
}

void apply_eps_shift(std::span<double> eps, double alpha_bar, std::span<const double> grad,
                     double scale) {
    if (eps.size() != grad.size())
        throw std::invalid_argument("guided_eps: eps/grad size mismatch");
    if (!(alpha_bar > 0.0) || !(alpha_bar <= 1.0))
        throw std::invalid_argument("guided_eps: alpha_bar must lie in (0, 1]");
    const double c = scale * std::sqrt(1.0 - alpha_bar);
    for (std::size_t j = 0; j < eps.size(); ++j) eps[j] -= c * grad[j];
}

Vec guided_eps(std::span<const double> eps, double alpha_bar, std::span<const double> grad,
               double scale) {
    Vec out(eps.begin(), eps.end());
    apply_eps_shift(out, alpha_bar, grad, scale);
    return out;
}

}  // namespace dlab
