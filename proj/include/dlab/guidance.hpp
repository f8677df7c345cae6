#pragma once

#include <cstdint>
#include <span>

#include "dlab/matrix.hpp"
#include "dlab/targets.hpp"

namespace dlab {

enum class ClassifierKind { Null, Exact, Untrained };

// Guidance configuration carried through sampler calls.  Null is the
// unguided baseline; Exact wraps the Bayes posterior of the target;
// Untrained is a random affine classifier keyed by `seed` ("misguided"
// runs -- plausible gradients, no information about the target).
struct GuidanceAttachment {
    ClassifierKind kind = ClassifierKind::Null;
    std::size_t label = 0;
    double scale = 1.0;
    std::uint64_t seed = 0;  // Untrained weight key
};

// Classifier bound to a target's (K, d).  Untrained materializes W (K x d)
// and b (K), entries N(0,1)/sqrt(d), once at construction; grad is pure
// afterwards.
class BoundClassifier {
public:
    BoundClassifier(const GuidanceAttachment& att, const GaussianMixture& target);

    bool active() const { return att_.kind != ClassifierKind::Null; }
    const GuidanceAttachment& attachment() const { return att_; }

    // d/dx log p(y = label | x_t).  `perturbed` is the mixture at the
    // current noise level (ignored by the Untrained classifier, whose
    // logits do not depend on t).
    void grad(const GaussianMixture& perturbed, std::span<const double> x_t,
              std::span<double> out) const;

private:
    GuidanceAttachment att_;
    Matrix w_;   // Untrained only
    Vec b_;
};

// One-call convenience wrapper around BoundClassifier.
Vec classifier_grad(const GuidanceAttachment& att, const GaussianMixture& target,
                    const KernelParams& k, std::span<const double> x_t);

// Markovian branch: mu + scale * sigma2 * grad (elementwise in grad).
Vec guided_mean_shift(std::span<const double> mu, double sigma2,
                      std::span<const double> grad, double scale);
void apply_mean_shift(std::span<double> mu, double sigma2, std::span<const double> grad,
                      double scale);

// DDIM branch: eps - scale * sqrt(1 - alpha_bar) * grad.
Vec guided_eps(std::span<const double> eps, double alpha_bar,
               std::span<const double> grad, double scale);
void apply_eps_shift(std::span<double> eps, double alpha_bar, std::span<const double> grad,
                     double scale);

}  // namespace dlab
