#include "dlab/metrics.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "dlab/schedules.hpp"

namespace dlab {

GaussianStats fit_gaussian(const Matrix& samples) {
    if (samples.rows < 2)
        throw std::invalid_argument("fit_gaussian: need >= 2 samples, got " +
                                    std::to_string(samples.rows));
    const std::size_t n = samples.rows;
    const std::size_t d = samples.cols;
    GaussianStats st;
    st.mean.assign(d, 0.0);
    st.variance.assign(d, 0.0);
    st.n = n;
    for (std::size_t i = 0; i < n; ++i) {
        auto row = samples.row(i);
        for (std::size_t j = 0; j < d; ++j) st.mean[j] += row[j];
    }
    for (std::size_t j = 0; j < d; ++j) st.mean[j] /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto row = samples.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            const double dev = row[j] - st.mean[j];
            st.variance[j] += dev * dev;
        }
    }
    for (std::size_t j = 0; j < d; ++j) st.variance[j] /= static_cast<double>(n - 1);
    return st;
}

GaussianStats target_stats(const GaussianMixture& g) {
    GaussianStats st;
    st.mean = g.marginal_mean();
    st.variance = g.marginal_variance();
    st.n = 0;
    return st;
}

double frechet_gaussian(const GaussianStats& a, const GaussianStats& b) {
    if (a.mean.size() != b.mean.size())
        throw std::invalid_argument("frechet_gaussian: dimension mismatch");
    double acc = 0.0;
    for (std::size_t j = 0; j < a.mean.size(); ++j) {
        const double dm = a.mean[j] - b.mean[j];
        const double ds = std::sqrt(a.variance[j]) - std::sqrt(b.variance[j]);
        acc += dm * dm + ds * ds;
    }
    return acc;
}

double surrogate_score(const Matrix& posteriors) {
    const std::size_t n = posteriors.rows;
    const std::size_t K = posteriors.cols;
    if (n == 0 || K == 0) throw std::invalid_argument("surrogate_score: empty posterior matrix");
    Vec mean(K, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        auto row = posteriors.row(i);
        double sum = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            if (!(row[k] >= 0.0))
                throw std::invalid_argument("surrogate_score: negative posterior entry at row " +
                                            std::to_string(i));
            sum += row[k];
        }
        if (std::abs(sum - 1.0) > 1e-9)
            throw std::invalid_argument("surrogate_score: row " + std::to_string(i) +
                                        " sums to " + std::to_string(sum) + ", expected 1");
        for (std::size_t k = 0; k < K; ++k) mean[k] += row[k];
    }
    for (std::size_t k = 0; k < K; ++k) mean[k] /= static_cast<double>(n);

    double kl = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        auto row = posteriors.row(i);
        for (std::size_t k = 0; k < K; ++k) {
            if (row[k] > 0.0) kl += row[k] * std::log(row[k] / mean[k]);
        }
    }
    kl /= static_cast<double>(n);
    return std::exp(kl);
}

double surrogate_score(const GaussianMixture& g, const Matrix& samples) {
    if (samples.cols != g.dim())
        throw std::invalid_argument("surrogate_score: sample dimension mismatch");
    Matrix post(samples.rows, g.components());
    for (std::size_t i = 0; i < samples.rows; ++i) g.posterior(samples.row(i), post.row(i));
    return surrogate_score(post);
}

std::optional<std::size_t> detect_plateau(const MetricSeries& series, std::size_t window,
                                          std::optional<double> slope_tol) {
    const auto& pts = series.points;
    if (window < 2) throw std::invalid_argument("detect_plateau: window must be >= 2");
    if (pts.size() < 2 * window)
        throw std::invalid_argument("detect_plateau: series length " +
                                    std::to_string(pts.size()) + " < 2*window = " +
                                    std::to_string(2 * window));

    double tol;
    if (slope_tol) {
        tol = *slope_tol;
    } else {
        double lo = pts[0].value, hi = pts[0].value;
        for (const auto& p : pts) {
            lo = std::min(lo, p.value);
            hi = std::max(hi, p.value);
        }
        tol = 0.01 * (hi - lo);
    }
    if (!(tol >= 0.0)) throw std::invalid_argument("detect_plateau: slope_tol must be >= 0");

    // Least-squares slope over the trailing window, in per-position units
    // (positions 0..w-1), so unevenly spaced index fields don't distort it.
    const double w = static_cast<double>(window);
    const double xbar = 0.5 * (w - 1.0);
    double sxx = 0.0;
    for (std::size_t k = 0; k < window; ++k) {
        const double dx = static_cast<double>(k) - xbar;
        sxx += dx * dx;
    }

    std::size_t streak = 0;
    for (std::size_t p = window - 1; p < pts.size(); ++p) {
        double sxy = 0.0;
        for (std::size_t k = 0; k < window; ++k) {
            const double dx = static_cast<double>(k) - xbar;
            sxy += dx * pts[p - window + 1 + k].value;
        }
        const double slope = sxy / sxx;
        if (std::abs(slope) <= tol) {
            if (++streak == window) return p - window + 1;
        } else {
            streak = 0;
        }
    }
    return std::nullopt;
}

StudyResult sample_size_study(const GaussianMixture& target, const SampleGenerator& gen,
                              const std::vector<std::size_t>& sizes, std::size_t repeats,
                              RngStream rng) {
    if (sizes.empty()) throw std::invalid_argument("sample_size_study: no sizes given");
    if (repeats < 3) throw std::invalid_argument("sample_size_study: repeats must be >= 3");
    for (std::size_t s : sizes)
        if (s < 2) throw std::invalid_argument("sample_size_study: sizes must be >= 2");
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i)
        if (!(sizes[i] < sizes[i + 1]))
            throw std::invalid_argument("sample_size_study: sizes must be strictly increasing");

    const GaussianStats ref = target_stats(target);
    StudyResult out;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        Vec sur(repeats), fre(repeats);
        for (std::size_t r = 0; r < repeats; ++r) {
            RngStream sub = rng.substream(i).substream(r);
            Matrix samples = gen(sizes[i], sub);
            sur[r] = surrogate_score(target, samples);
            fre[r] = frechet_gaussian(fit_gaussian(samples), ref);
        }
        auto summarize = [&](const Vec& v) {
            double mean = 0.0;
            for (double x : v) mean += x;
            mean /= static_cast<double>(repeats);
            double var = 0.0;
            if (repeats > 1) {
                for (double x : v) var += (x - mean) * (x - mean);
                var /= static_cast<double>(repeats - 1);
            }
            return MetricPoint{static_cast<double>(sizes[i]), mean, std::sqrt(var)};
        };
        out.surrogate.points.push_back(summarize(sur));
        out.frechet.points.push_back(summarize(fre));
    }
    return out;
}

double order_closed_form(const OrderCase& c, double sigma_end) {
    const double num = c.variance + sigma_end * sigma_end;
    const double den = c.variance + c.sigma_max * c.sigma_max;
    return c.mean + (c.x_init - c.mean) * std::sqrt(num / den);
}

Vec order_errors(OdeSolver solver, const OrderCase& c,
                 const std::vector<std::size_t>& step_counts) {
    if (!(c.sigma_min > 0.0 && c.sigma_max > c.sigma_min))
        throw std::invalid_argument("order_errors: need 0 < sigma_min < sigma_max");
    if (!(c.variance > 0.0)) throw std::invalid_argument("order_errors: variance must be > 0");

    GaussianMixture target({1.0}, Matrix(1, 1, c.mean), Matrix(1, 1, c.variance));
    ContinuousSchedule cs = make_ve_schedule(c.sigma_min, c.sigma_max);
    Matrix init(1, 1, c.x_init);
    const double exact = order_closed_form(c, c.sigma_min);

    Vec errs;
    errs.reserve(step_counts.size());
    for (std::size_t nsteps : step_counts) {
        if (nsteps < 2) throw std::invalid_argument("order_errors: step counts must be >= 2");
        // Geometric grid in t = sigma^2 ending at sigma_min (no terminal zero:
        // the endpoint error there would stop shrinking with N).
        std::vector<double> grid(nsteps + 1);
        const double ratio = cs.t_min / cs.t_max;
        for (std::size_t i = 0; i <= nsteps; ++i)
            grid[i] = cs.t_max * std::pow(ratio, static_cast<double>(i) / static_cast<double>(nsteps));
        grid.front() = cs.t_max;
        grid.back() = cs.t_min;

        OdeOptions opts;
        opts.initial = &init;
        SamplerOutput res = sample_ode(target, cs, grid, solver, 1, RngStream(0), opts);
        errs.push_back(std::abs(res.samples.at(0, 0) - exact));
    }
    return errs;
}

double estimate_order(OdeSolver solver, const OrderCase& c,
                      const std::vector<std::size_t>& step_counts) {
    if (step_counts.size() < 3)
        throw std::invalid_argument("estimate_order: need >= 3 step counts");
    for (std::size_t i = 0; i + 1 < step_counts.size(); ++i)
        if (!(step_counts[i] < step_counts[i + 1]))
            throw std::invalid_argument("estimate_order: step counts must be strictly increasing");

    const Vec errs = order_errors(solver, c, step_counts);
    const double floor = 1e-14 * std::max(1.0, std::abs(order_closed_form(c, c.sigma_min)));
    for (double e : errs) {
        if (!std::isfinite(e)) throw std::runtime_error("estimate_order: non-finite error");
        if (e < floor)
            throw std::runtime_error(
                "estimate_order: exact integration (error below noise floor), no slope to fit");
    }

    // Least-squares fit of log(err) against log(N); order is minus the slope.
    const std::size_t m = step_counts.size();
    double xbar = 0.0, ybar = 0.0;
    Vec lx(m), ly(m);
    for (std::size_t i = 0; i < m; ++i) {
        lx[i] = std::log(static_cast<double>(step_counts[i]));
        ly[i] = std::log(errs[i]);
        xbar += lx[i];
        ybar += ly[i];
    }
    xbar /= static_cast<double>(m);
    ybar /= static_cast<double>(m);
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        sxy += (lx[i] - xbar) * (ly[i] - ybar);
        sxx += (lx[i] - xbar) * (lx[i] - xbar);
    }
    return -sxy / sxx;
}

}  // namespace dlab
