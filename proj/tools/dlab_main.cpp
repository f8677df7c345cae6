// dlab: command-line harness for the schedule / sampler / guidance grid.
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "dlab/harness.hpp"
#include "dlab/metrics.hpp"
#include "dlab/schedules.hpp"
#include "dlab/version.hpp"

namespace {

// Built-in benchmark target: two well-separated modes in 2-D.
dlab::GaussianMixture benchmark_target() {
    dlab::Matrix means = dlab::matrix_from_rows({{-2.0, -2.0}, {2.0, 2.0}});
    dlab::Matrix vars = dlab::matrix_from_rows({{1.0, 1.0}, {1.0, 1.0}});
    return dlab::GaussianMixture({0.5, 0.5}, means, vars);
}

int cmd_run(const std::string& config_path, long seed_override, std::size_t threads,
            const std::string& out_override) {
    dlab::RunConfig cfg = dlab::load_config(config_path);
    if (seed_override >= 0) cfg.seeds = {static_cast<std::uint64_t>(seed_override)};
    if (!out_override.empty()) cfg.out_dir = out_override;

    dlab::GridResult result = dlab::run_grid(cfg, threads);
    std::filesystem::create_directories(cfg.out_dir);
    dlab::write_results_csv(cfg.out_dir + "/results.csv", result.records);
    dlab::write_summary_json(cfg.out_dir + "/summary.json", cfg, result);

    std::cout << "config " << dlab::config_hash(cfg) << ": " << result.records.size()
              << " cell(s), " << result.skipped.size() << " skipped, " << result.failures.size()
              << " failed in " << std::fixed << std::setprecision(1) << result.total_ms
              << " ms\n";
    std::cout << "wrote " << cfg.out_dir << "/results.csv and summary.json\n";
    for (const auto& f : result.failures) std::cerr << "failure: " << f << "\n";
    return result.failures.empty() ? 0 : 2;
}

int cmd_order(const std::string& solver, std::vector<std::size_t> steps, dlab::OrderCase oc) {
    const dlab::OdeSolver sv = solver == "euler" ? dlab::OdeSolver::Euler : dlab::OdeSolver::Heun;
    const dlab::Vec errs = dlab::order_errors(sv, oc, steps);
    std::cout << std::left << std::setw(10) << "steps" << std::setw(16) << "endpoint_err"
              << "ratio\n";
    for (std::size_t i = 0; i < steps.size(); ++i) {
        std::cout << std::left << std::setw(10) << steps[i] << std::setw(16) << std::scientific
                  << std::setprecision(4) << errs[i];
        if (i > 0 && errs[i] > 0.0)
            std::cout << std::fixed << std::setprecision(2) << errs[i - 1] / errs[i];
        std::cout << "\n";
    }
    try {
        const double order = dlab::estimate_order(sv, oc, steps);
        std::cout << "estimated order: " << std::fixed << std::setprecision(3) << order << "\n";
    } catch (const std::runtime_error& e) {
        if (std::string(e.what()).find("exact integration") == std::string::npos) throw;
        std::cout << e.what() << "\n";
    }
    return 0;
}

int cmd_study(std::vector<std::size_t> sizes, std::size_t repeats, std::uint64_t seed,
              const std::string& out_dir) {
    const dlab::GaussianMixture target = benchmark_target();
    const dlab::ContinuousSchedule cs = dlab::make_karras_schedule(0.002, 80.0);
    const std::vector<double> grid = dlab::ode_time_grid(cs, 64);
    dlab::SampleGenerator gen = [&](std::size_t n, dlab::RngStream& rng) {
        return dlab::sample_ode(target, cs, grid, dlab::OdeSolver::Heun, n, rng).samples;
    };
    dlab::StudyResult res = dlab::sample_size_study(target, gen, sizes, repeats, dlab::RngStream(seed));

    std::cout << std::left << std::setw(10) << "size" << std::setw(14) << "surrogate"
              << std::setw(14) << "sur_std" << std::setw(14) << "frechet" << "fre_std\n";
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        std::cout << std::left << std::setw(10) << sizes[i] << std::fixed << std::setprecision(6)
                  << std::setw(14) << res.surrogate.points[i].value << std::setw(14)
                  << res.surrogate.points[i].dispersion << std::setw(14)
                  << res.frechet.points[i].value << res.frechet.points[i].dispersion << "\n";
    }
    const std::size_t window = 3;
    if (sizes.size() >= 2 * window) {
        for (const auto& [name, series] :
             {std::pair{std::string{"surrogate_score"}, &res.surrogate},
              std::pair{std::string{"frechet"}, &res.frechet}}) {
            auto p = dlab::detect_plateau(*series, window);
            if (p)
                std::cout << name << " plateau from size "
                          << static_cast<std::size_t>(series->points[*p].index) << "\n";
            else
                std::cout << name << " plateau: none detected\n";
        }
    } else {
        std::cout << "plateau detection needs >= " << 2 * window << " sizes; skipped\n";
    }
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        std::ofstream f(out_dir + "/study.csv");
        if (!f) throw std::runtime_error("cannot write " + out_dir + "/study.csv");
        f << "size,metric,mean,std\n";
        for (std::size_t i = 0; i < sizes.size(); ++i) {
            f << sizes[i] << ",surrogate_score," << res.surrogate.points[i].value << ","
              << res.surrogate.points[i].dispersion << "\n";
            f << sizes[i] << ",frechet," << res.frechet.points[i].value << ","
              << res.frechet.points[i].dispersion << "\n";
        }
        std::cout << "wrote " << out_dir << "/study.csv\n";
    }
    return 0;
}

int cmd_bench(const std::string& config_path, std::size_t repeats, std::size_t threads,
              const std::string& out_override) {
    dlab::RunConfig cfg = dlab::load_config(config_path);
    if (!out_override.empty()) cfg.out_dir = out_override;

    std::vector<dlab::RunRecord> all;
    std::size_t failures = 0;
    for (std::size_t r = 0; r < repeats; ++r) {
        dlab::GridResult res = dlab::run_grid(cfg, threads);
        failures += res.failures.size();
        for (const auto& f : res.failures) std::cerr << "failure: " << f << "\n";
        all.insert(all.end(), res.records.begin(), res.records.end());
    }
    std::cout << dlab::bench_table(all);
    std::filesystem::create_directories(cfg.out_dir);
    dlab::write_bench_csv(cfg.out_dir + "/bench.csv", all);
    std::cout << "wrote " << cfg.out_dir << "/bench.csv (" << repeats << " repeat(s))\n";
    return failures == 0 ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dlab: noise-schedule / sampler laboratory on Gaussian-mixture targets"};
    app.set_version_flag("--version", dlab::kToolVersion);
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "Execute a schedule x sampler x guidance grid");
    std::string run_config;
    long run_seed = -1;
    std::size_t run_threads = 1;
    std::string run_out;
    run->add_option("--config", run_config, "JSON config path")->required();
    run->add_option("--seed", run_seed, "replace the config seed list with a single seed");
    run->add_option("--threads", run_threads, "worker threads (results identical for any value)");
    run->add_option("--out", run_out, "override the output directory");

    auto* order = app.add_subcommand("order", "Empirical convergence order of the ODE solvers");
    std::string order_solver;
    std::vector<std::size_t> order_steps{8, 16, 32, 64, 128};
    dlab::OrderCase oc;
    order->add_option("--solver", order_solver, "euler or heun")
        ->required()
        ->check(CLI::IsMember({"euler", "heun"}));
    order->add_option("--steps", order_steps, "comma-separated step counts")->delimiter(',');
    order->add_option("--mean", oc.mean, "target mean");
    order->add_option("--variance", oc.variance, "target variance");
    order->add_option("--sigma-min", oc.sigma_min, "integration endpoint");
    order->add_option("--sigma-max", oc.sigma_max, "integration start");
    order->add_option("--x0", oc.x_init, "state at sigma_max");

    auto* study = app.add_subcommand("study", "Metric stability versus sample size");
    std::vector<std::size_t> study_sizes{1000, 3162, 10000, 31623};
    std::size_t study_repeats = 10;
    std::uint64_t study_seed = 0;
    std::string study_out;
    study->add_option("--sizes", study_sizes, "comma-separated sample sizes")->delimiter(',');
    study->add_option("--repeats", study_repeats, "independent repeats per size (>= 3)")
        ->check(CLI::Range(std::size_t{3}, std::size_t{1000000}));
    study->add_option("--seed", study_seed, "master seed");
    study->add_option("--out", study_out, "directory for study.csv");

    auto* bench = app.add_subcommand("bench", "Median wall-clock per sampler over repeats");
    std::string bench_config;
    std::size_t bench_repeats = 5;
    std::size_t bench_threads = 1;
    std::string bench_out;
    bench->add_option("--config", bench_config, "JSON config path")->required();
    bench->add_option("--repeats", bench_repeats, "grid repetitions")->check(CLI::PositiveNumber);
    bench->add_option("--threads", bench_threads, "worker threads");
    bench->add_option("--out", bench_out, "override the output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*run) return cmd_run(run_config, run_seed, run_threads, run_out);
        if (*order) return cmd_order(order_solver, order_steps, oc);
        if (*study) return cmd_study(study_sizes, study_repeats, study_seed, study_out);
        if (*bench) return cmd_bench(bench_config, bench_repeats, bench_threads, bench_out);
    } catch (const dlab::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
