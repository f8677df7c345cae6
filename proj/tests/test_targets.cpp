#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "dlab/matrix.hpp"
#include "dlab/rng.hpp"
#include "dlab/targets.hpp"
#include "doctest.h"

using namespace dlab;

namespace {

GaussianMixture reference_mixture() {
    return GaussianMixture({0.3, 0.7}, matrix_from_rows({{-1.0, 0.0}, {2.0, 1.0}}),
                           matrix_from_rows({{0.5, 1.2}, {2.0, 0.7}}));
}

GaussianMixture benchmark_mixture() {
    return GaussianMixture({0.5, 0.5}, matrix_from_rows({{-2.0, -2.0}, {2.0, 2.0}}),
                           matrix_from_rows({{1.0, 1.0}, {1.0, 1.0}}));
}

// Central difference of log_density; step scaled to the coordinate.
Vec fd_score(const GaussianMixture& g, const Vec& x) {
    Vec out(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) {
        const double h = 1e-5 * std::max(1.0, std::abs(x[j]));
        Vec lo = x, hi = x;
        lo[j] -= h;
        hi[j] += h;
        out[j] = (g.log_density(hi) - g.log_density(lo)) / (2.0 * h);
    }
    return out;
}

GaussianMixture random_mixture(RngStream& rng, std::size_t k, std::size_t d) {
    std::vector<double> w(k);
    double sum = 0.0;
    for (auto& wi : w) {
        wi = 0.2 + rng.uniform();
        sum += wi;
    }
    for (auto& wi : w) wi /= sum;
    Matrix means(k, d), vars(k, d);
    for (std::size_t i = 0; i < k * d; ++i) {
        means.data[i] = 6.0 * rng.uniform() - 3.0;
        vars.data[i] = 0.2 + 3.8 * rng.uniform();
    }
    return GaussianMixture(std::move(w), std::move(means), std::move(vars));
}

}  // namespace

TEST_SUITE("targets") {

TEST_CASE("log density, posterior and score at a pinned point") {
    const GaussianMixture g = reference_mixture();
    const Vec x{0.5, -0.3};
    CHECK(g.log_density(x) == doctest::Approx(-3.803098487919395).epsilon(1e-13));
    const Vec post = g.posterior(x);
    CHECK(post[0] == doctest::Approx(0.28059622).epsilon(1e-7));
    CHECK(post[1] == doctest::Approx(0.71940378).epsilon(1e-7));
    CHECK(post[0] + post[1] == doctest::Approx(1.0).epsilon(1e-12));
    const Vec sc = g.score(x);
    CHECK(sc[0] == doctest::Approx(-0.30223584).epsilon(1e-7));
    CHECK(sc[1] == doctest::Approx(1.40618464).epsilon(1e-7));
}

TEST_CASE("score equals the gradient of log density (100 random cases)") {
    RngStream rng(20240601);
    for (int c = 0; c < 100; ++c) {
        const std::size_t k = 1 + static_cast<std::size_t>(rng.uniform() * 4);
        const std::size_t d = 1 + static_cast<std::size_t>(rng.uniform() * 3);
        const GaussianMixture g = random_mixture(rng, k, d);
        Vec x(d);
        for (auto& xi : x) xi = 2.0 * rng.normal();
        const Vec sc = g.score(x);
        const Vec fd = fd_score(g, x);
        for (std::size_t j = 0; j < d; ++j) {
            const double scale = std::max(1.0, std::abs(fd[j]));
            CHECK(std::abs(sc[j] - fd[j]) / scale < 1e-5);
        }
    }
}

TEST_CASE("marginal moments") {
    const GaussianMixture g = reference_mixture();
    const Vec m = g.marginal_mean(), v = g.marginal_variance();
    CHECK(m[0] == doctest::Approx(1.1).epsilon(1e-13));
    CHECK(m[1] == doctest::Approx(0.7).epsilon(1e-13));
    CHECK(v[0] == doctest::Approx(3.44).epsilon(1e-13));
    CHECK(v[1] == doctest::Approx(1.06).epsilon(1e-13));
}

TEST_CASE("perturb scales means and inflates variances") {
    const GaussianMixture g = reference_mixture();
    const KernelParams k{0.8, 0.6};
    const GaussianMixture p = perturb(g, k);
    CHECK(p.means().at(0, 0) == doctest::Approx(-0.8).epsilon(1e-13));
    CHECK(p.means().at(1, 1) == doctest::Approx(0.8).epsilon(1e-13));
    CHECK(p.variances().at(0, 0) == doctest::Approx(0.5 * 0.64 + 0.6).epsilon(1e-13));
    CHECK(p.variances().at(1, 0) == doctest::Approx(2.0 * 0.64 + 0.6).epsilon(1e-13));
    const Vec x{0.5, -0.3};
    CHECK(p.log_density(x) == doctest::Approx(-3.021338921413361).epsilon(1e-13));

    SUBCASE("forward noising of exact draws matches the perturbed moments") {
        RngStream rng(11);
        const SampleSet s = sample_exact(g, 60000, rng);
        Vec mean(2, 0.0), var(2, 0.0);
        for (std::size_t i = 0; i < s.x.rows; ++i)
            for (std::size_t j = 0; j < 2; ++j) {
                const double y = k.scale * s.x.at(i, j) + std::sqrt(k.noise_var) * rng.normal();
                mean[j] += y;
                var[j] += y * y;
            }
        const Vec pm = p.marginal_mean(), pv = p.marginal_variance();
        for (std::size_t j = 0; j < 2; ++j) {
            mean[j] /= static_cast<double>(s.x.rows);
            var[j] = var[j] / static_cast<double>(s.x.rows) - mean[j] * mean[j];
            CHECK(mean[j] == doctest::Approx(pm[j]).epsilon(0.05));
            CHECK(var[j] == doctest::Approx(pv[j]).epsilon(0.05));
        }
    }
}

TEST_CASE("eps oracle at a pinned point and as a conditional mean") {
    const GaussianMixture g = reference_mixture();
    const KernelParams k{0.8, 0.6};
    const Vec x{0.5, -0.3};
    const Vec eps = eps_oracle(g, k, x);
    CHECK(eps[0] == doctest::Approx(0.06879343).epsilon(1e-7));
    CHECK(eps[1] == doctest::Approx(-0.59611047).epsilon(1e-7));

    SUBCASE("identity against the perturbed score") {
        const GaussianMixture p = perturb(g, k);
        const Vec sc = p.score(x);
        for (std::size_t j = 0; j < 2; ++j)
            CHECK(eps[j] == doctest::Approx(-std::sqrt(k.noise_var) * sc[j]).epsilon(1e-13));
    }

    SUBCASE("recovers the injected noise in expectation") {
        // E[eps_oracle(x_t) - eps | x_0, eps] averages to zero over the kernel.
        RngStream rng(21);
        const SampleSet s = sample_exact(g, 20000, rng);
        Vec bias(2, 0.0);
        Vec xt(2), z(2);
        for (std::size_t i = 0; i < s.x.rows; ++i) {
            for (std::size_t j = 0; j < 2; ++j) {
                z[j] = rng.normal();
                xt[j] = k.scale * s.x.at(i, j) + std::sqrt(k.noise_var) * z[j];
            }
            const Vec e = eps_oracle(g, k, xt);
            for (std::size_t j = 0; j < 2; ++j) bias[j] += e[j] - z[j];
        }
        for (std::size_t j = 0; j < 2; ++j)
            CHECK(std::abs(bias[j] / static_cast<double>(s.x.rows)) < 0.03);
    }

    SUBCASE("degenerate kernel is rejected") {
        CHECK_THROWS_AS((void)eps_oracle(g, KernelParams{1.0, 0.0}, x), std::invalid_argument);
    }
}

TEST_CASE("class posterior and gradient under the kernel") {
    const GaussianMixture g = reference_mixture();
    const KernelParams k{0.8, 0.6};
    const Vec x{0.5, -0.3};
    const Vec post = class_posterior(g, k, x);
    CHECK(post[0] == doctest::Approx(0.33727116).epsilon(1e-7));
    CHECK(post[1] == doctest::Approx(0.66272884).epsilon(1e-7));
    const Vec grad = class_grad(g, k, x, 1);
    CHECK(grad[0] == doctest::Approx(0.67391832).epsilon(1e-7));
    CHECK(grad[1] == doctest::Approx(0.28004301).epsilon(1e-7));

    SUBCASE("gradient matches finite differences of log p(y|x)") {
        RngStream rng(31);
        for (int c = 0; c < 30; ++c) {
            Vec pt{4.0 * rng.normal(), 4.0 * rng.normal()};
            const std::size_t label = rng.uniform() < 0.5 ? 0 : 1;
            const Vec an = class_grad(g, k, pt, label);
            for (std::size_t j = 0; j < 2; ++j) {
                const double h = 1e-5 * std::max(1.0, std::abs(pt[j]));
                Vec lo = pt, hi = pt;
                lo[j] -= h;
                hi[j] += h;
                const double fd = (std::log(class_posterior(g, k, hi)[label]) -
                                   std::log(class_posterior(g, k, lo)[label])) /
                                  (2.0 * h);
                CHECK(an[j] == doctest::Approx(fd).epsilon(1e-5));
            }
        }
    }

    SUBCASE("label out of range") {
        CHECK_THROWS_AS((void)class_grad(g, k, x, 2), std::invalid_argument);
    }
}

TEST_CASE("exact sampling recovers moments and component frequencies") {
    const GaussianMixture g = reference_mixture();
    RngStream rng(5);
    const std::size_t n = 100000;
    const SampleSet s = sample_exact(g, n, rng);
    REQUIRE(s.x.rows == n);
    REQUIRE(s.labels.size() == n);
    Vec mean(2, 0.0), var(2, 0.0);
    std::size_t count1 = 0;
    for (std::size_t i = 0; i < n; ++i) {
        count1 += s.labels[i];
        for (std::size_t j = 0; j < 2; ++j) mean[j] += s.x.at(i, j);
    }
    for (auto& m : mean) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < 2; ++j) {
            const double d = s.x.at(i, j) - mean[j];
            var[j] += d * d;
        }
    for (auto& v : var) v /= static_cast<double>(n - 1);
    const Vec tm = g.marginal_mean(), tv = g.marginal_variance();
    for (std::size_t j = 0; j < 2; ++j) {
        // 5 MC standard errors on the mean; 3% on the variance.
        CHECK(std::abs(mean[j] - tm[j]) < 5.0 * std::sqrt(tv[j] / static_cast<double>(n)));
        CHECK(var[j] == doctest::Approx(tv[j]).epsilon(0.03));
    }
    // Binomial(n, 0.7): 5 se on the label-1 frequency.
    const double freq = static_cast<double>(count1) / static_cast<double>(n);
    CHECK(std::abs(freq - 0.7) < 5.0 * std::sqrt(0.7 * 0.3 / static_cast<double>(n)));
}

TEST_CASE("construction and argument validation") {
    CHECK_THROWS_AS(GaussianMixture({0.4, 0.4}, matrix_from_rows({{0.0}, {1.0}}),
                                    matrix_from_rows({{1.0}, {1.0}})),
                    std::invalid_argument);  // weights sum to 0.8
    CHECK_THROWS_AS(GaussianMixture({1.0}, matrix_from_rows({{0.0}}),
                                    matrix_from_rows({{-1.0}})),
                    std::invalid_argument);  // negative variance
    CHECK_THROWS_AS(GaussianMixture({0.5, 0.5}, matrix_from_rows({{0.0}}),
                                    matrix_from_rows({{1.0}})),
                    std::invalid_argument);  // K mismatch
    CHECK_THROWS_AS(GaussianMixture({1.0}, matrix_from_rows({{0.0, 0.0}}),
                                    matrix_from_rows({{1.0}})),
                    std::invalid_argument);  // dim mismatch
    CHECK_THROWS_AS(validate_kernel(KernelParams{0.0, 1.0}), std::invalid_argument);
    CHECK_THROWS_AS(validate_kernel(KernelParams{1.0, -0.5}), std::invalid_argument);

    const GaussianMixture g = benchmark_mixture();
    CHECK_THROWS_AS((void)g.log_density(Vec{0.0}), std::invalid_argument);  // wrong dim
}

}  // TEST_SUITE
