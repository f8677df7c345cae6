#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

#include "dlab/matrix.hpp"
#include "dlab/rng.hpp"
#include "dlab/samplers.hpp"
#include "dlab/targets.hpp"

namespace dlab {

struct GaussianStats {
    Vec mean;
    Vec variance;  // unbiased, per dimension
    std::size_t n = 0;
};

GaussianStats fit_gaussian(const Matrix& samples);      // needs >= 2 rows
GaussianStats target_stats(const GaussianMixture& g);   // analytic moments

// Squared 2-Wasserstein distance between diagonal Gaussians:
// |mu_a - mu_b|^2 + sum_d (sqrt(v_a) - sqrt(v_b))^2.
double frechet_gaussian(const GaussianStats& a, const GaussianStats& b);

// exp(mean_i KL(p(y|x_i) || p_bar)) for per-sample class distributions
// (rows of `posteriors`, each summing to 1 within 1e-9).  Lies in [1, K].
double surrogate_score(const Matrix& posteriors);
// Convenience: clean-posterior rows computed from the target.
double surrogate_score(const GaussianMixture& g, const Matrix& samples);

struct MetricPoint {
    double index = 0.0;       // e.g. sample size or step position
    double value = 0.0;
    double dispersion = 0.0;  // std over repeats where applicable
};

struct MetricSeries {
    std::vector<MetricPoint> points;
};

// First position p0 (0-based, p0 >= window-1) such that the least-squares
// slope over the trailing `window` points stays within +/- slope_tol for
// `window` consecutive positions starting at p0.  Default slope_tol: 1% of
// the series' value range per index step.  Throws below 2*window points.
std::optional<std::size_t> detect_plateau(const MetricSeries& series, std::size_t window = 10,
                                          std::optional<double> slope_tol = std::nullopt);

using SampleGenerator = std::function<Matrix(std::size_t n, RngStream& rng)>;

struct StudyResult {
    MetricSeries surrogate;  // index = size, value = mean over repeats, dispersion = std
    MetricSeries frechet;    // vs analytic target stats
};

// Metric stability versus sample size: for each size (strictly increasing),
// `repeats` >= 3 independent generations; reports mean and std of both
// metrics.
StudyResult sample_size_study(const GaussianMixture& target, const SampleGenerator& gen,
                              const std::vector<std::size_t>& sizes, std::size_t repeats,
                              RngStream rng);

// 1D single-Gaussian VE case with a closed-form probability-flow solution:
// x(sigma) = mean + (x_init - mean) * sqrt((v + sigma^2) / (v + sigma_max^2)).
struct OrderCase {
    double mean = 0.4;
    double variance = 1.3;
    double sigma_min = 0.05;
    double sigma_max = 20.0;
    double x_init = 2.5;  // state at sigma_max
};

double order_closed_form(const OrderCase& c, double sigma_end);
Vec order_errors(OdeSolver solver, const OrderCase& c, const std::vector<std::size_t>& step_counts);

// Empirical convergence order: -slope of log(endpoint error) vs log(N).
// step_counts must be >= 3 strictly increasing values.  Throws if an error
// underflows to zero (exact integration; no slope to fit).
double estimate_order(OdeSolver solver, const OrderCase& c,
                      const std::vector<std::size_t>& step_counts);

}  // namespace dlab
