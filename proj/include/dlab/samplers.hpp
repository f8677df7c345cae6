#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "dlab/guidance.hpp"
#include "dlab/schedules.hpp"
#include "dlab/targets.hpp"

namespace dlab {

// Invoked with chain 0's state after each accepted step.  `sigma` is in the
// sampler's own noise parameterization (see README).
using TrajectorySink = std::function<void(std::size_t step, double sigma, std::span<const double> x)>;

struct SamplerOutput {
    Matrix samples;         // n x d
    std::uint64_t nfe = 0;  // score/eps oracle evaluations per chain
};

enum class ReverseVariance { BetaT, Posterior };

struct AncestralOptions {
    ReverseVariance variance = ReverseVariance::BetaT;
    TrajectorySink trajectory;
};

// DDPM ancestral reverse chain, x_T ~ N(0, I), noise skipped at t = 1.
SamplerOutput sample_ancestral(const GaussianMixture& target, const DiscreteSchedule& sched,
                               const GuidanceAttachment& guidance, std::size_t n, RngStream rng,
                               const AncestralOptions& opts = {});

// Deterministic DDIM (eta = 0) on the strided subsequence T, T-stride, ..., 0.
// stride must divide T.
SamplerOutput sample_ddim(const GaussianMixture& target, const DiscreteSchedule& sched,
                          const GuidanceAttachment& guidance, std::size_t n, RngStream rng,
                          std::size_t stride = 1, const TrajectorySink& trajectory = {});

// Annealed Langevin over the sigma ladder; step size at level i is
// eps_scale * sigma_i^2 / sigma_L^2; init x ~ N(0, sigma_1^2 I).
SamplerOutput sample_langevin_annealed(const GaussianMixture& target, const SigmaLadder& ladder,
                                       double eps_scale, std::size_t inner_steps, std::size_t n,
                                       RngStream rng, const TrajectorySink& trajectory = {});

double langevin_step_size(double eps_scale, double sigma_i, double sigma_last);

struct EmCheckpoint {
    std::size_t step = 0;
    double t = 0.0;
    Matrix states;  // n x d snapshot
};

struct EmOptions {
    std::size_t checkpoint_every = 0;  // 0 = no checkpoints
    TrajectorySink trajectory;
};

struct EmOutput {
    Matrix samples;
    std::uint64_t nfe = 0;
    std::vector<EmCheckpoint> checkpoints;
};

// Euler-Maruyama on the reverse SDE over a uniform time grid from t_max to
// t_min.  Returns terminal states unscaled by s(t_min).
EmOutput sample_euler_maruyama(const GaussianMixture& target, const ContinuousSchedule& cs,
                               std::size_t steps, std::size_t n, RngStream rng,
                               const EmOptions& opts = {});

enum class OdeSolver { Euler, Heun };

struct OdeOptions {
    TrajectorySink trajectory;
    const Matrix* initial = nullptr;  // override the N(0, (s*sigma)(t0)^2 I) prior draw
};

// Probability-flow ODE dx/dt = (s'/s) x - s^2 sigma' sigma * score(x/s; sigma)
// integrated along `time_grid` (strictly decreasing; a terminal 0 is allowed
// and Heun skips its correction on a step whose endpoint has sigma = 0).
SamplerOutput sample_ode(const GaussianMixture& target, const ContinuousSchedule& cs,
                         const std::vector<double>& time_grid, OdeSolver solver, std::size_t n,
                         RngStream rng, const OdeOptions& opts = {});

struct ChurnParams {
    double s_churn = 0.0;
    double s_tmin = 0.0;
    double s_tmax = std::numeric_limits<double>::infinity();
    double s_noise = 1.0;
};

// Heun integration with per-step noise churn: gamma_i = min(s_churn/N,
// sqrt(2)-1) when sigma_i lies in [s_tmin, s_tmax], else 0.  With
// s_churn = 0 this reduces bitwise to sample_ode(..., Heun) on the same grid.
SamplerOutput sample_stochastic_churn(const GaussianMixture& target, const ContinuousSchedule& cs,
                                      const KarrasSteps& steps, const ChurnParams& cp,
                                      std::size_t n, RngStream rng,
                                      const TrajectorySink& trajectory = {});

}  // namespace dlab
