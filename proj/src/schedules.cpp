#include "dlab/schedules.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace dlab {

namespace {

constexpr double kBetaClipHigh = 0.999;
constexpr double kBetaClipLow = 1e-9;

void fill_products(DiscreteSchedule& s) {
    s.alphas.resize(s.betas.size());
    s.alpha_bars.resize(s.betas.size());
    double bar = 1.0;
    for (std::size_t i = 0; i < s.betas.size(); ++i) {
        s.alphas[i] = 1.0 - s.betas[i];
        bar *= s.alphas[i];
        s.alpha_bars[i] = bar;
    }
}

void check_steps(std::size_t steps) {
    if (steps < 2) throw std::invalid_argument("schedule: steps must be >= 2");
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

KernelParams DiscreteSchedule::kernel(std::size_t t) const {
    if (t < 1 || t > steps())
        throw std::invalid_argument("DiscreteSchedule::kernel: t = " + std::to_string(t) +
                                    " outside 1.." + std::to_string(steps()));
    const double ab = alpha_bar(t);
    return {std::sqrt(ab), 1.0 - ab};
}

DiscreteSchedule make_linear_schedule(double factor, std::size_t steps) {
    check_steps(steps);
    if (!(factor > 0.0)) throw std::invalid_argument("linear schedule: factor must be > 0");
    const double beta_1 = 1e-4;
    const double beta_T = 0.02;
    DiscreteSchedule s;
    s.kind = DiscreteKind::Linear;
    s.betas.resize(steps);
    for (std::size_t i = 0; i < steps; ++i) {
        const double frac = static_cast<double>(i) / static_cast<double>(steps - 1);
        s.betas[i] = factor * (beta_1 + frac * (beta_T - beta_1));
    }
    if (s.betas.back() >= 1.0)
        throw std::invalid_argument("linear schedule: factor too large, beta_T >= 1");
    fill_products(s);
    return s;
}

DiscreteSchedule make_cosine_schedule(std::size_t steps, double s_offset) {
    check_steps(steps);
    if (!(s_offset > 0.0)) throw std::invalid_argument("cosine schedule: s_offset must be > 0");
    const double T = static_cast<double>(steps);
    auto f = [&](double t) {
        const double c = std::cos((t / T + s_offset) / (1.0 + s_offset) * std::numbers::pi / 2.0);
        return c * c;
    };
    const double f0 = f(0.0);
    DiscreteSchedule s;
    s.kind = DiscreteKind::Cosine;
    s.betas.resize(steps);
    double bar_prev = 1.0;  // f(0)/f(0)
    for (std::size_t i = 0; i < steps; ++i) {
        const double bar = f(static_cast<double>(i + 1)) / f0;
        double beta = 1.0 - bar / bar_prev;
        s.betas[i] = std::min(beta, kBetaClipHigh);
        bar_prev = bar;
    }
    fill_products(s);
    return s;
}

DiscreteSchedule make_sigmoid_schedule(std::size_t steps, double gamma_min, double gamma_max) {
    check_steps(steps);
    if (!(gamma_min < gamma_max))
        throw std::invalid_argument("sigmoid schedule: gamma_min must be < gamma_max");
    const double T = static_cast<double>(steps);
    DiscreteSchedule s;
    s.kind = DiscreteKind::Sigmoid;
    s.betas.resize(steps);
    double bar_prev = 1.0;
    for (std::size_t i = 0; i < steps; ++i) {
        const double gamma = gamma_min + (static_cast<double>(i + 1) / T) * (gamma_max - gamma_min);
        const double bar = sigmoid(-gamma);
        const double beta = std::clamp(1.0 - bar / bar_prev, kBetaClipLow, kBetaClipHigh);
        s.betas[i] = beta;
        bar_prev = bar;
    }
    fill_products(s);
    return s;
}

double SigmaLadder::ratio() const {
    return sigmas.size() < 2 ? 1.0 : sigmas[1] / sigmas[0];
}

SigmaLadder ladder_from_sigmas(std::vector<double> sigmas) {
    if (sigmas.empty()) throw std::invalid_argument("sigma ladder: needs at least one level");
    for (std::size_t i = 0; i < sigmas.size(); ++i) {
        if (!(sigmas[i] > 0.0)) throw std::invalid_argument("sigma ladder: sigmas must be > 0");
        if (i > 0 && !(sigmas[i] < sigmas[i - 1]))
            throw std::invalid_argument("sigma ladder: sigmas must be strictly decreasing");
    }
    return SigmaLadder{std::move(sigmas)};
}

SigmaLadder make_geometric_ladder(double sigma_max, double sigma_min, std::size_t levels) {
    if (levels < 2) throw std::invalid_argument("geometric ladder: levels must be >= 2");
    if (!(sigma_min > 0.0) || !(sigma_max > sigma_min))
        throw std::invalid_argument("geometric ladder: need sigma_max > sigma_min > 0");
    std::vector<double> sig(levels);
    const double lr = std::log(sigma_min / sigma_max) / static_cast<double>(levels - 1);
    for (std::size_t i = 0; i < levels; ++i)
        sig[i] = sigma_max * std::exp(lr * static_cast<double>(i));
    sig.front() = sigma_max;
    sig.back() = sigma_min;
    return SigmaLadder{std::move(sig)};
}

double ContinuousSchedule::sigma(double t) const {
    switch (kind) {
        case ContinuousKind::VE: return std::sqrt(t);
        case ContinuousKind::KarrasLinear: return t;
        case ContinuousKind::VP: {
            const double e = std::exp(0.5 * beta_d * t * t + beta_min * t);
            return std::sqrt(e - 1.0);
        }
    }
    return 0.0;
}

double ContinuousSchedule::sigma_dot(double t) const {
    switch (kind) {
        case ContinuousKind::VE: return 0.5 / std::sqrt(t);
        case ContinuousKind::KarrasLinear: return 1.0;
        case ContinuousKind::VP: {
            const double x = 0.5 * beta_d * t * t + beta_min * t;
            const double e = std::exp(x);
            return 0.5 * e * (beta_d * t + beta_min) / std::sqrt(e - 1.0);
        }
    }
    return 0.0;
}

double ContinuousSchedule::scale(double t) const {
    if (kind != ContinuousKind::VP) return 1.0;
    return 1.0 / std::sqrt(std::exp(0.5 * beta_d * t * t + beta_min * t));
}

double ContinuousSchedule::scale_dot(double t) const {
    if (kind != ContinuousKind::VP) return 0.0;
    return -0.5 * (beta_d * t + beta_min) * scale(t);
}

double ContinuousSchedule::sigma_inverse(double sig) const {
    if (!(sig >= 0.0)) throw std::invalid_argument("sigma_inverse: sigma must be >= 0");
    switch (kind) {
        case ContinuousKind::VE: return sig * sig;
        case ContinuousKind::KarrasLinear: return sig;
        case ContinuousKind::VP: {
            // 0.5 b_d t^2 + b_min t = log(1 + sigma^2); positive quadratic root.
            const double x = std::log1p(sig * sig);
            if (beta_d == 0.0) return x / beta_min;
            return (-beta_min + std::sqrt(beta_min * beta_min + 2.0 * beta_d * x)) / beta_d;
        }
    }
    return 0.0;
}

double ContinuousSchedule::g_squared(double t) const {
    if (kind == ContinuousKind::VP) return beta_d * t + beta_min;  // s^2 * d(sigma^2)/dt
    const double sig = sigma(t);
    return 2.0 * sig * sigma_dot(t);
}

KernelParams ContinuousSchedule::kernel(double t) const {
    const double s = scale(t);
    const double sig = sigma(t);
    return {s, s * s * sig * sig};
}

ContinuousSchedule make_ve_schedule(double sigma_min, double sigma_max) {
    if (!(sigma_min > 0.0) || !(sigma_max > sigma_min))
        throw std::invalid_argument("VE schedule: need sigma_max > sigma_min > 0");
    ContinuousSchedule cs;
    cs.kind = ContinuousKind::VE;
    cs.t_min = sigma_min * sigma_min;
    cs.t_max = sigma_max * sigma_max;
    return cs;
}

ContinuousSchedule make_vp_schedule(double beta_min, double beta_d, double eps_s) {
    if (!(beta_min > 0.0) || !(beta_d >= 0.0))
        throw std::invalid_argument("VP schedule: need beta_min > 0 and beta_d >= 0");
    if (!(eps_s > 0.0) || !(eps_s < 1.0))
        throw std::invalid_argument("VP schedule: need 0 < eps_s < 1");
    ContinuousSchedule cs;
    cs.kind = ContinuousKind::VP;
    cs.t_min = eps_s;
    cs.t_max = 1.0;
    cs.beta_min = beta_min;
    cs.beta_d = beta_d;
    return cs;
}

ContinuousSchedule make_karras_schedule(double sigma_min, double sigma_max) {
    if (!(sigma_min > 0.0) || !(sigma_max > sigma_min))
        throw std::invalid_argument("Karras schedule: need sigma_max > sigma_min > 0");
    ContinuousSchedule cs;
    cs.kind = ContinuousKind::KarrasLinear;
    cs.t_min = sigma_min;
    cs.t_max = sigma_max;
    return cs;
}

KarrasSteps karras_steps(double sigma_min, double sigma_max, double rho, std::size_t n) {
    if (n < 2) throw std::invalid_argument("karras_steps: n must be >= 2");
    if (!(sigma_min > 0.0) || !(sigma_max > sigma_min))
        throw std::invalid_argument("karras_steps: need sigma_max > sigma_min > 0");
    if (!(rho > 0.0)) throw std::invalid_argument("karras_steps: rho must be > 0");
    KarrasSteps ks;
    ks.sigma_min = sigma_min;
    ks.sigma_max = sigma_max;
    ks.rho = rho;
    ks.n = n;
    ks.values.resize(n + 1);
    const double inv_rho = 1.0 / rho;
    const double a = std::pow(sigma_max, inv_rho);
    const double b = std::pow(sigma_min, inv_rho);
    for (std::size_t i = 0; i < n; ++i) {
        const double frac = static_cast<double>(i) / static_cast<double>(n - 1);
        ks.values[i] = std::pow(a + frac * (b - a), rho);
    }
    ks.values[0] = sigma_max;      // exact endpoints, no pow round-trip
    ks.values[n - 1] = sigma_min;
    ks.values[n] = 0.0;
    return ks;
}

std::vector<double> ode_time_grid(const ContinuousSchedule& cs, std::size_t n, double rho) {
    if (n < 2) throw std::invalid_argument("ode_time_grid: n must be >= 2");
    std::vector<double> t(n + 1);
    switch (cs.kind) {
        case ContinuousKind::VP:
            for (std::size_t i = 0; i < n; ++i) {
                const double frac = static_cast<double>(i) / static_cast<double>(n - 1);
                t[i] = cs.t_max + frac * (cs.t_min - cs.t_max);
            }
            break;
        case ContinuousKind::VE: {
            const double lr = std::log(cs.t_min / cs.t_max) / static_cast<double>(n - 1);
            for (std::size_t i = 0; i < n; ++i)
                t[i] = cs.t_max * std::exp(lr * static_cast<double>(i));
            t[0] = cs.t_max;
            t[n - 1] = cs.t_min;
            break;
        }
        case ContinuousKind::KarrasLinear:
            return karras_steps(cs.t_min, cs.t_max, rho, n).values;
    }
    t[n] = 0.0;
    return t;
}

std::vector<double> times_from_sigmas(const ContinuousSchedule& cs,
                                      const std::vector<double>& sigmas) {
    std::vector<double> t(sigmas.size());
    for (std::size_t i = 0; i < sigmas.size(); ++i)
        t[i] = sigmas[i] == 0.0 ? 0.0 : cs.sigma_inverse(sigmas[i]);
    return t;
}

}  // namespace dlab
