#pragma once

#include <cstddef>
#include <vector>

#include "dlab/targets.hpp"

namespace dlab {

enum class DiscreteKind { Linear, Cosine, Sigmoid };

// Discrete-time variance-preserving schedule.  betas[t-1] <-> timestep t for
// t = 1..T; alpha_bars holds the running product of (1 - beta) so that
// alpha(t) * alpha_bar(t-1) == alpha_bar(t) exactly as computed.
struct DiscreteSchedule {
    DiscreteKind kind = DiscreteKind::Linear;
    std::vector<double> betas;
    std::vector<double> alphas;
    std::vector<double> alpha_bars;

    std::size_t steps() const { return betas.size(); }
    double beta(std::size_t t) const { return betas.at(t - 1); }
    double alpha(std::size_t t) const { return alphas.at(t - 1); }
    double alpha_bar(std::size_t t) const { return t == 0 ? 1.0 : alpha_bars.at(t - 1); }

    // Forward kernel x_t | x_0 at timestep t: (sqrt(abar_t), 1 - abar_t).
    KernelParams kernel(std::size_t t) const;
};

// beta ramps linearly from factor*1e-4 to factor*0.02 over `steps` steps.
DiscreteSchedule make_linear_schedule(double factor, std::size_t steps);

// alpha_bar_t = f(t)/f(0) with f(t) = cos^2(((t/T + s)/(1 + s)) * pi/2);
// derived betas are clipped at 0.999 and alpha_bar recomputed from them.
DiscreteSchedule make_cosine_schedule(std::size_t steps, double s_offset = 0.008);

// gamma(t) ramps linearly gamma_min -> gamma_max; alpha_bar_t =
// sigmoid(-gamma(t)); betas derived with alpha_bar_0 = 1 and clipped to
// (1e-9, 0.999).  SNR(t) = exp(-gamma(t)).
DiscreteSchedule make_sigmoid_schedule(std::size_t steps, double gamma_min = -6.0,
                                       double gamma_max = 6.0);

// Geometric noise ladder for annealed Langevin: sigmas[0] = sigma_max down
// to sigma_min, constant ratio.
struct SigmaLadder {
    std::vector<double> sigmas;

    std::size_t levels() const { return sigmas.size(); }
    double ratio() const;  // sigmas[i+1] / sigmas[i]; 1 when a single level
};

SigmaLadder make_geometric_ladder(double sigma_max, double sigma_min, std::size_t levels);
SigmaLadder ladder_from_sigmas(std::vector<double> sigmas);

enum class ContinuousKind { VE, VP, KarrasLinear };

// Continuous schedule (sigma(t), s(t)) on t in [t_min, t_max] with analytic
// derivatives and sigma inverse.
//   VE:     sigma = sqrt(t),  s = 1,        t in [sigma_min^2, sigma_max^2]
//   VP:     sigma = sqrt(exp(0.5 b_d t^2 + b_min t) - 1), s = 1/sqrt(exp(...)),
//           t in [eps_s, 1];  identity s(t)^2 (1 + sigma(t)^2) = 1
//   Karras: sigma = t, s = 1, t in [sigma_min, sigma_max]
struct ContinuousSchedule {
    ContinuousKind kind = ContinuousKind::VE;
    double t_min = 0.0;
    double t_max = 1.0;
    double beta_min = 0.1;  // VP only
    double beta_d = 19.9;   // VP only

    double sigma(double t) const;
    double sigma_dot(double t) const;
    double scale(double t) const;
    double scale_dot(double t) const;
    double sigma_inverse(double sig) const;

    // Diffusion terms of the forward SDE dx = (s'/s) x dt + g dW:
    // g^2 = s(t)^2 * d(sigma^2)/dt.
    double g_squared(double t) const;

    double sigma_min() const { return sigma(t_min); }
    double sigma_max() const { return sigma(t_max); }

    // Marginal kernel of x_t | x_0 in sample space.
    KernelParams kernel(double t) const;
};

ContinuousSchedule make_ve_schedule(double sigma_min, double sigma_max);
ContinuousSchedule make_vp_schedule(double beta_min = 0.1, double beta_d = 19.9,
                                    double eps_s = 1e-3);
ContinuousSchedule make_karras_schedule(double sigma_min, double sigma_max);

// Karras discretization: n active noise levels from sigma_max down to
// sigma_min (exact at both ends) plus an appended terminal 0.
struct KarrasSteps {
    double sigma_min = 0.0;
    double sigma_max = 0.0;
    double rho = 7.0;
    std::size_t n = 0;
    std::vector<double> values;  // size n + 1, values[n] == 0
};

KarrasSteps karras_steps(double sigma_min, double sigma_max, double rho, std::size_t n);

// Default integration grids (n active points + terminal t = 0, so every
// family ends at sigma = 0):
//   VP:     linear in t from t_max down to eps_s      (then 0)
//   VE:     geometric in sigma^2 = t                  (then 0)
//   Karras: karras_steps(sigma_min, sigma_max, rho, n)
std::vector<double> ode_time_grid(const ContinuousSchedule& cs, std::size_t n, double rho = 7.0);

// Map a decreasing sigma ladder onto the schedule's time axis.
std::vector<double> times_from_sigmas(const ContinuousSchedule& cs, const std::vector<double>& sigmas);

}  // namespace dlab
