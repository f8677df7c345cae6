#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dlab/guidance.hpp"
#include "dlab/metrics.hpp"
#include "dlab/samplers.hpp"
#include "dlab/schedules.hpp"

namespace dlab {

// Configuration / validation problems; the CLI maps these to exit code 1.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ScheduleSpec {
    std::string kind;  // linear | cosine | sigmoid | geometric | ve | vp | karras
    double factor = 1.0;
    std::size_t steps = 1000;
    double s_offset = 0.008;
    double gamma_min = -6.0;
    double gamma_max = 6.0;
    double sigma_min = 0.002;
    double sigma_max = 80.0;
    std::size_t levels = 10;
    double beta_min = 0.1;
    double beta_d = 19.9;
    double eps_s = 1e-3;

    bool discrete() const;
    bool ladder() const;
    bool continuous() const;
    std::string id() const;
};

struct SamplerSpec {
    std::string kind;  // ancestral | ddim | langevin | euler_maruyama | ode_euler | ode_heun | churn
    std::size_t stride = 1;         // ddim
    double eps_scale = 2e-5;        // langevin
    std::size_t inner_steps = 100;  // langevin
    std::size_t steps = 64;         // continuous integrators
    double rho = 7.0;               // karras grids
    ChurnParams churn;

    std::string id() const;
};

struct GuidanceSpec {
    std::string classifier = "null";  // null | exact | untrained
    std::size_t label = 0;
    double scale = 1.0;
    std::uint64_t seed = 0;

    GuidanceAttachment attachment() const;
    std::string id() const;
};

struct RunConfig {
    // target
    std::vector<double> weights;
    Matrix means;
    Matrix variances;
    // grid
    std::vector<ScheduleSpec> schedules;
    std::vector<SamplerSpec> samplers;
    std::vector<GuidanceSpec> guidance;
    // sampling
    std::size_t n_samples = 1000;
    std::vector<std::uint64_t> seeds;
    // outputs
    std::vector<std::string> metrics;  // surrogate_score | frechet
    std::string out_dir = "results";
    bool emit_trajectories = false;

    GaussianMixture target() const;
};

RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::string& path);

// Canonical form: defaults filled, keys sorted.  config_hash is FNV-1a 64
// of this text, as 16 hex digits.
std::string serialize_config(const RunConfig& cfg);
std::string config_hash(const RunConfig& cfg);

struct RunRecord {
    std::string schedule;
    std::string sampler;
    std::string guidance;
    long label = -1;     // -1 for unguided
    double scale = 0.0;  // 0 for unguided
    std::uint64_t seed = 0;
    std::size_t n_samples = 0;
    std::vector<std::pair<std::string, double>> metrics;
    std::uint64_t nfe = 0;
    double wall_clock_ms = 0.0;
    std::string config_hash;
    std::string tool_version;
};

struct GridResult {
    std::vector<RunRecord> records;
    std::vector<std::string> skipped;   // incompatible cells, with reason
    std::vector<std::string> failures;  // runtime failures (exit code 2)
    double total_ms = 0.0;
};

// Executes schedules x samplers x guidance x seeds.  Per-cell RNG is keyed
// by (seed, schedule index): deterministic for any `threads`, and cells that
// differ only in sampler/guidance share their noise realization (paired
// comparisons; churn(0) and heun cells give identical metrics).
GridResult run_grid(const RunConfig& cfg, std::size_t threads = 1);

void write_results_csv(const std::string& path, const std::vector<RunRecord>& records);
void write_summary_json(const std::string& path, const RunConfig& cfg, const GridResult& result);

// Per-sampler medians (wall clock, NFE) sorted by median time.
std::string bench_table(const std::vector<RunRecord>& records);
void write_bench_csv(const std::string& path, const std::vector<RunRecord>& records);

}  // namespace dlab
