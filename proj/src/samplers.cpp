#include "dlab/samplers.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace dlab {

namespace {

void check_n(std::size_t n) {
    if (n == 0) throw std::invalid_argument("sampler: n must be >= 1");
}

// Coefficients of the probability-flow derivative at one fixed time:
// d = drift * x - c2 * score_q(x / s), with q the sigma-level mixture in
// u-space.  Shared by sample_ode and sample_stochastic_churn so the
// s_churn = 0 reduction is bitwise.
struct StepCoef {
    double t = 0.0;
    double sigma = 0.0;
    double s = 1.0;
    double drift = 0.0;  // s'(t)/s(t)
    double c2 = 0.0;     // s(t)^2 * sigma'(t) * sigma(t)
    const GaussianMixture* q = nullptr;
};

StepCoef make_coef(const ContinuousSchedule& cs, double t, const GaussianMixture* q) {
    StepCoef c;
    c.t = t;
    c.sigma = t == 0.0 ? 0.0 : cs.sigma(t);
    c.s = t == 0.0 ? 1.0 : cs.scale(t);
    if (c.sigma > 0.0) {
        c.drift = cs.scale_dot(t) / c.s;
        c.c2 = c.s * c.s * cs.sigma_dot(t) * c.sigma;
    }
    c.q = q;
    return c;
}

void ode_deriv(const StepCoef& c, std::span<const double> x, std::span<double> u,
               std::span<double> d) {
    for (std::size_t j = 0; j < x.size(); ++j) u[j] = x[j] / c.s;
    c.q->score(u, d);
    for (std::size_t j = 0; j < x.size(); ++j) d[j] = c.drift * x[j] - c.c2 * d[j];
}

// One Heun interval a -> b; skips the corrector when b sits at sigma = 0.
// Returns oracle evaluations spent.
std::uint64_t heun_interval(const StepCoef& a, const StepCoef& b, std::span<double> x,
                            std::span<double> u, std::span<double> d1, std::span<double> d2,
                            std::span<double> xe) {
    const double h = b.t - a.t;
    ode_deriv(a, x, u, d1);
    if (b.sigma == 0.0) {
        for (std::size_t j = 0; j < x.size(); ++j) x[j] += h * d1[j];
        return 1;
    }
    for (std::size_t j = 0; j < x.size(); ++j) xe[j] = x[j] + h * d1[j];
    ode_deriv(b, xe, u, d2);
    for (std::size_t j = 0; j < x.size(); ++j) x[j] += 0.5 * h * (d1[j] + d2[j]);
    return 2;
}

void check_grid(const std::vector<double>& grid) {
    if (grid.size() < 2) throw std::invalid_argument("sampler: time grid needs >= 2 points");
    for (std::size_t i = 0; i + 1 < grid.size(); ++i)
        if (!(grid[i + 1] < grid[i]))
            throw std::invalid_argument("sampler: time grid must be strictly decreasing");
    if (grid.back() < 0.0) throw std::invalid_argument("sampler: negative time in grid");
}

}  // namespace

SamplerOutput sample_ancestral(const GaussianMixture& target, const DiscreteSchedule& sched,
                               const GuidanceAttachment& guidance, std::size_t n, RngStream rng,
                               const AncestralOptions& opts) {
    check_n(n);
    const std::size_t T = sched.steps();
    const std::size_t d = target.dim();
    BoundClassifier cls(guidance, target);

    // Per-timestep tables shared across chains (index t-1).
    std::vector<GaussianMixture> pert;
    pert.reserve(T);
    std::vector<double> inv_sqrt_alpha(T), eps_coef(T), sigma_t(T), kernel_sigma(T);
    for (std::size_t t = 1; t <= T; ++t) {
        const KernelParams k = sched.kernel(t);
        pert.push_back(perturb(target, k));
        inv_sqrt_alpha[t - 1] = 1.0 / std::sqrt(sched.alpha(t));
        eps_coef[t - 1] = sched.beta(t) / std::sqrt(1.0 - sched.alpha_bar(t));
        const double var = opts.variance == ReverseVariance::BetaT
                               ? sched.beta(t)
                               : sched.beta(t) * (1.0 - sched.alpha_bar(t - 1)) /
                                     (1.0 - sched.alpha_bar(t));
        sigma_t[t - 1] = var;
        kernel_sigma[t - 1] = std::sqrt(k.noise_var);
    }

    Matrix out(n, d);
    Vec x(d), eps(d), mu(d), g(d);
    for (std::size_t c = 0; c < n; ++c) {
        RngStream r = rng.substream(c);
        for (auto& v : x) v = r.normal();
        std::size_t emitted = 0;
        if (c == 0 && opts.trajectory) opts.trajectory(emitted++, kernel_sigma[T - 1], x);
        for (std::size_t t = T; t >= 1; --t) {
            const auto& pm = pert[t - 1];
            eps_from_perturbed(pm, 1.0 - sched.alpha_bar(t), x, eps);
            for (std::size_t j = 0; j < d; ++j)
                mu[j] = (x[j] - eps_coef[t - 1] * eps[j]) * inv_sqrt_alpha[t - 1];
            if (cls.active()) {
                cls.grad(pm, x, g);
                apply_mean_shift(mu, sigma_t[t - 1], g, guidance.scale);
            }
            if (t > 1) {
                const double sd = std::sqrt(sigma_t[t - 1]);
                for (std::size_t j = 0; j < d; ++j) x[j] = mu[j] + sd * r.normal();
            } else {
                x = mu;
            }
            if (c == 0 && opts.trajectory)
                opts.trajectory(emitted++, t > 1 ? kernel_sigma[t - 2] : 0.0, x);
        }
        std::copy(x.begin(), x.end(), out.row(c).begin());
    }
    return {std::move(out), T};
}

SamplerOutput sample_ddim(const GaussianMixture& target, const DiscreteSchedule& sched,
                          const GuidanceAttachment& guidance, std::size_t n, RngStream rng,
                          std::size_t stride, const TrajectorySink& trajectory) {
    check_n(n);
    const std::size_t T = sched.steps();
    const std::size_t d = target.dim();
    if (stride < 1 || stride > T)
        throw std::invalid_argument("ddim: stride must lie in 1..T");
    if (T % stride != 0)
        throw std::invalid_argument("ddim: stride " + std::to_string(stride) +
                                    " does not divide T = " + std::to_string(T));
    BoundClassifier cls(guidance, target);

    // Strided subsequence T, T-stride, ..., stride; each step lands on
    // t - stride with alpha_bar(0) = 1.
    std::vector<std::size_t> ts;
    for (std::size_t t = T; t >= stride; t -= stride) ts.push_back(t);
    std::vector<GaussianMixture> pert;
    pert.reserve(ts.size());
    for (std::size_t i = 0; i < ts.size(); ++i)
        pert.push_back(perturb(target, sched.kernel(ts[i])));

    Matrix out(n, d);
    Vec x(d), eps(d), g(d);
    for (std::size_t c = 0; c < n; ++c) {
        RngStream r = rng.substream(c);
        for (auto& v : x) v = r.normal();
        std::size_t emitted = 0;
        if (c == 0 && trajectory)
            trajectory(emitted++, std::sqrt(1.0 - sched.alpha_bar(T)), x);
        for (std::size_t i = 0; i < ts.size(); ++i) {
            const std::size_t t = ts[i];
            const std::size_t t_prev = t - stride;
            const double ab = sched.alpha_bar(t);
            const double ab_prev = sched.alpha_bar(t_prev);
            eps_from_perturbed(pert[i], 1.0 - ab, x, eps);
            if (cls.active()) {
                cls.grad(pert[i], x, g);
                apply_eps_shift(eps, ab, g, guidance.scale);
            }
            const double sq_ab = std::sqrt(ab);
            const double sq_ab_prev = std::sqrt(ab_prev);
            const double sq_om = std::sqrt(1.0 - ab);
            const double sq_om_prev = std::sqrt(1.0 - ab_prev);
            for (std::size_t j = 0; j < d; ++j) {
                const double x0 = (x[j] - sq_om * eps[j]) / sq_ab;
                x[j] = sq_ab_prev * x0 + sq_om_prev * eps[j];
            }
            if (c == 0 && trajectory) trajectory(emitted++, sq_om_prev, x);
        }
        std::copy(x.begin(), x.end(), out.row(c).begin());
    }
    return {std::move(out), ts.size()};
}

double langevin_step_size(double eps_scale, double sigma_i, double sigma_last) {
    return eps_scale * sigma_i * sigma_i / (sigma_last * sigma_last);
}

SamplerOutput sample_langevin_annealed(const GaussianMixture& target, const SigmaLadder& ladder,
                                       double eps_scale, std::size_t inner_steps, std::size_t n,
                                       RngStream rng, const TrajectorySink& trajectory) {
    check_n(n);
    if (!(eps_scale > 0.0)) throw std::invalid_argument("langevin: eps_scale must be > 0");
    if (inner_steps == 0) throw std::invalid_argument("langevin: inner_steps must be >= 1");
    if (ladder.sigmas.empty()) throw std::invalid_argument("langevin: empty sigma ladder");
    const std::size_t L = ladder.levels();
    const std::size_t d = target.dim();
    const double sigma_last = ladder.sigmas.back();

    std::vector<GaussianMixture> pert;
    pert.reserve(L);
    std::vector<double> alpha(L);
    for (std::size_t i = 0; i < L; ++i) {
        const double sig = ladder.sigmas[i];
        pert.push_back(perturb(target, {1.0, sig * sig}));
        alpha[i] = langevin_step_size(eps_scale, sig, sigma_last);
    }

    Matrix out(n, d);
    Vec x(d), s(d);
    for (std::size_t c = 0; c < n; ++c) {
        RngStream r = rng.substream(c);
        for (auto& v : x) v = ladder.sigmas.front() * r.normal();
        std::size_t emitted = 0;
        if (c == 0 && trajectory) trajectory(emitted++, ladder.sigmas.front(), x);
        for (std::size_t i = 0; i < L; ++i) {
            const double half_a = 0.5 * alpha[i];
            const double noise = std::sqrt(alpha[i]);
            for (std::size_t step = 0; step < inner_steps; ++step) {
                pert[i].score(x, s);
                for (std::size_t j = 0; j < d; ++j)
                    x[j] += half_a * s[j] + noise * r.normal();
                if (c == 0 && trajectory) trajectory(emitted++, ladder.sigmas[i], x);
            }
        }
        std::copy(x.begin(), x.end(), out.row(c).begin());
    }
    return {std::move(out), static_cast<std::uint64_t>(L) * inner_steps};
}

EmOutput sample_euler_maruyama(const GaussianMixture& target, const ContinuousSchedule& cs,
                               std::size_t steps, std::size_t n, RngStream rng,
                               const EmOptions& opts) {
    check_n(n);
    if (steps < 1) throw std::invalid_argument("euler_maruyama: steps must be >= 1");
    const std::size_t d = target.dim();

    // Uniform grid t_max -> t_min; per-point drift/diffusion and the
    // sample-space marginal mixture.
    std::vector<double> t(steps + 1), drift(steps), g2(steps);
    std::vector<GaussianMixture> pert;
    pert.reserve(steps);
    for (std::size_t k = 0; k <= steps; ++k)
        t[k] = cs.t_max + (cs.t_min - cs.t_max) * static_cast<double>(k) / static_cast<double>(steps);
    for (std::size_t k = 0; k < steps; ++k) {
        drift[k] = cs.scale_dot(t[k]) / cs.scale(t[k]);
        g2[k] = cs.g_squared(t[k]);
        pert.push_back(perturb(target, cs.kernel(t[k])));
    }
    const KernelParams k0 = cs.kernel(cs.t_max);
    const double init_sd = std::sqrt(k0.noise_var);
    const double final_scale = 1.0 / cs.scale(cs.t_min);

    EmOutput out;
    out.samples = Matrix(n, d);
    out.nfe = steps;
    std::vector<std::size_t> cp_steps;
    if (opts.checkpoint_every > 0) {
        for (std::size_t k = opts.checkpoint_every; k <= steps; k += opts.checkpoint_every)
            cp_steps.push_back(k);
        for (std::size_t k : cp_steps)
            out.checkpoints.push_back({k, t[k], Matrix(n, d)});
    }

    Vec x(d), s(d);
    for (std::size_t c = 0; c < n; ++c) {
        RngStream r = rng.substream(c);
        for (auto& v : x) v = init_sd * r.normal();
        std::size_t emitted = 0;
        if (c == 0 && opts.trajectory) opts.trajectory(emitted++, cs.sigma(t[0]), x);
        std::size_t next_cp = 0;
        for (std::size_t k = 0; k < steps; ++k) {
            const double dt = t[k + 1] - t[k];  // negative
            const double noise_sd = std::sqrt(g2[k] * std::abs(dt));
            pert[k].score(x, s);
            for (std::size_t j = 0; j < d; ++j)
                x[j] += (drift[k] * x[j] - g2[k] * s[j]) * dt + noise_sd * r.normal();
            if (next_cp < cp_steps.size() && k + 1 == cp_steps[next_cp]) {
                auto row = out.checkpoints[next_cp].states.row(c);
                std::copy(x.begin(), x.end(), row.begin());
                ++next_cp;
            }
            if (c == 0 && opts.trajectory) opts.trajectory(emitted++, cs.sigma(t[k + 1]), x);
        }
        auto row = out.samples.row(c);
        for (std::size_t j = 0; j < d; ++j) row[j] = x[j] * final_scale;
    }
    return out;
}

SamplerOutput sample_ode(const GaussianMixture& target, const ContinuousSchedule& cs,
                         const std::vector<double>& time_grid, OdeSolver solver, std::size_t n,
                         RngStream rng, const OdeOptions& opts) {
    check_n(n);
    check_grid(time_grid);
    const std::size_t d = target.dim();
    const std::size_t m = time_grid.size();

    std::vector<GaussianMixture> q;
    q.reserve(m);
    std::vector<StepCoef> coef(m);
    for (std::size_t i = 0; i < m; ++i) {
        const double sig = time_grid[i] == 0.0 ? 0.0 : cs.sigma(time_grid[i]);
        q.push_back(perturb(target, {1.0, sig * sig}));
    }
    for (std::size_t i = 0; i < m; ++i) coef[i] = make_coef(cs, time_grid[i], &q[i]);

    if (opts.initial && (opts.initial->rows != n || opts.initial->cols != d))
        throw std::invalid_argument("sample_ode: initial state shape mismatch");
    const double init_sd = coef[0].s * coef[0].sigma;

    Matrix out(n, d);
    std::uint64_t nfe = 0;
    Vec x(d), u(d), d1(d), d2(d), xe(d);
    for (std::size_t c = 0; c < n; ++c) {
        RngStream r = rng.substream(c);
        if (opts.initial) {
            auto row = opts.initial->row(c);
            std::copy(row.begin(), row.end(), x.begin());
        } else {
            for (auto& v : x) v = init_sd * r.normal();
        }
        std::size_t emitted = 0;
        if (c == 0 && opts.trajectory) opts.trajectory(emitted++, coef[0].sigma, x);
        std::uint64_t evals = 0;
        for (std::size_t i = 0; i + 1 < m; ++i) {
            if (solver == OdeSolver::Euler) {
                const double h = coef[i + 1].t - coef[i].t;
                ode_deriv(coef[i], x, u, d1);
                for (std::size_t j = 0; j < d; ++j) x[j] += h * d1[j];
                evals += 1;
            } else {
                evals += heun_interval(coef[i], coef[i + 1], x, u, d1, d2, xe);
            }
            if (c == 0 && opts.trajectory) opts.trajectory(emitted++, coef[i + 1].sigma, x);
        }
        if (c == 0) nfe = evals;
        std::copy(x.begin(), x.end(), out.row(c).begin());
    }
    return {std::move(out), nfe};
}

SamplerOutput sample_stochastic_churn(const GaussianMixture& target, const ContinuousSchedule& cs,
                                      const KarrasSteps& steps, const ChurnParams& cp,
                                      std::size_t n, RngStream rng,
                                      const TrajectorySink& trajectory) {
    check_n(n);
    if (!(cp.s_churn >= 0.0)) throw std::invalid_argument("churn: s_churn must be >= 0");
    if (!(cp.s_noise > 0.0)) throw std::invalid_argument("churn: s_noise must be > 0");
    if (!(cp.s_tmin <= cp.s_tmax)) throw std::invalid_argument("churn: need s_tmin <= s_tmax");
    if (steps.values.size() != steps.n + 1 || steps.n < 2)
        throw std::invalid_argument("churn: malformed KarrasSteps");
    const std::size_t d = target.dim();
    const std::size_t m = steps.values.size();
    const std::vector<double> grid = times_from_sigmas(cs, steps.values);
    check_grid(grid);

    const double gamma_cap = std::sqrt(2.0) - 1.0;
    const double gamma_base = std::min(cp.s_churn / static_cast<double>(steps.n), gamma_cap);

    // Grid-point coefficients, plus inflated "hat" coefficients where the
    // churn band applies.  All chain-independent, computed once.
    std::vector<GaussianMixture> q;
    std::vector<StepCoef> coef(m);
    q.reserve(2 * m);
    for (std::size_t i = 0; i < m; ++i) {
        const double sig = grid[i] == 0.0 ? 0.0 : cs.sigma(grid[i]);
        q.push_back(perturb(target, {1.0, sig * sig}));
    }
    for (std::size_t i = 0; i < m; ++i) coef[i] = make_coef(cs, grid[i], &q[i]);

    std::vector<double> gamma(m - 1, 0.0);
    std::vector<StepCoef> coef_hat(m - 1);
    std::vector<GaussianMixture> q_hat;
    q_hat.reserve(m - 1);  // no reallocation, stored pointers stay valid
    for (std::size_t i = 0; i + 1 < m; ++i) {
        const double sig = coef[i].sigma;
        if (cp.s_churn > 0.0 && sig >= cp.s_tmin && sig <= cp.s_tmax) gamma[i] = gamma_base;
        if (gamma[i] > 0.0) {
            const double sig_hat = sig * (1.0 + gamma[i]);
            const double t_hat = cs.sigma_inverse(sig_hat);
            q_hat.push_back(perturb(target, {1.0, sig_hat * sig_hat}));
            coef_hat[i] = make_coef(cs, t_hat, &q_hat.back());
        } else {
            coef_hat[i] = coef[i];
        }
    }

    const double init_sd = coef[0].s * coef[0].sigma;
    Matrix out(n, d);
    std::uint64_t nfe = 0;
    Vec x(d), u(d), d1(d), d2(d), xe(d), eps(d);
    for (std::size_t c = 0; c < n; ++c) {
        RngStream r = rng.substream(c);
        for (auto& v : x) v = init_sd * r.normal();
        std::size_t emitted = 0;
        if (c == 0 && trajectory) trajectory(emitted++, coef[0].sigma, x);
        std::uint64_t evals = 0;
        for (std::size_t i = 0; i + 1 < m; ++i) {
            // Noise drawn every step (used only inside the churn band) so
            // RNG consumption does not depend on the parameter set.
            for (auto& v : eps) v = r.normal();
            if (gamma[i] > 0.0) {
                const StepCoef& a = coef[i];
                const StepCoef& ah = coef_hat[i];
                const double bump =
                    std::sqrt(ah.sigma * ah.sigma - a.sigma * a.sigma) * cp.s_noise;
                // u-space noise injection, then back to sample space at t_hat.
                for (std::size_t j = 0; j < d; ++j)
                    x[j] = ah.s * (x[j] / a.s + bump * eps[j]);
                evals += heun_interval(ah, coef[i + 1], x, u, d1, d2, xe);
            } else {
                evals += heun_interval(coef[i], coef[i + 1], x, u, d1, d2, xe);
            }
            if (c == 0 && trajectory) trajectory(emitted++, coef[i + 1].sigma, x);
        }
        if (c == 0) nfe = evals;
        std::copy(x.begin(), x.end(), out.row(c).begin());
    }
    return {std::move(out), nfe};
}

}  // namespace dlab
