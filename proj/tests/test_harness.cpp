#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dlab/harness.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace dlab;
namespace fs = std::filesystem;

namespace {

const char* kMinimalConfig = R"({
  "target": {
    "weights": [0.5, 0.5],
    "means": [[-2.0, -2.0], [2.0, 2.0]],
    "variances": [[1.0, 1.0], [1.0, 1.0]]
  },
  "grid": {
    "schedules": [{"kind": "linear", "factor": 1.0, "steps": 100}],
    "samplers": [{"kind": "ancestral"}]
  },
  "sampling": {"n_samples": 300}
})";

std::string small_grid_config(std::size_t n = 400) {
    std::ostringstream os;
    os << R"({
  "target": {
    "weights": [0.5, 0.5],
    "means": [[-2.0, -2.0], [2.0, 2.0]],
    "variances": [[1.0, 1.0], [1.0, 1.0]]
  },
  "grid": {
    "schedules": [
      {"kind": "linear", "factor": 1.0, "steps": 100},
      {"kind": "karras", "sigma_min": 0.01, "sigma_max": 10.0}
    ],
    "samplers": [
      {"kind": "ancestral"},
      {"kind": "ode_heun", "steps": 16}
    ],
    "guidance": [{"classifier": "null"}]
  },
  "sampling": {"n_samples": )"
       << n << R"(, "seeds": [0, 1, 2]},
  "metrics": ["surrogate_score", "frechet"]
})";
    return os.str();
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("dlab_test_" + std::to_string(::getpid()) + "_" +
                std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("minimal config fills documented defaults") {
    const RunConfig cfg = parse_config(kMinimalConfig);
    CHECK(cfg.n_samples == 300);
    CHECK(cfg.seeds == std::vector<std::uint64_t>{0, 1, 2});
    REQUIRE(cfg.metrics.size() == 2);  // both metrics by default
    CHECK(cfg.guidance.size() == 1);   // implicit unguided cell
    CHECK(cfg.guidance[0].classifier == "null");
    CHECK(cfg.out_dir == "results");
    CHECK_FALSE(cfg.emit_trajectories);
    CHECK(cfg.target().components() == 2);
    CHECK(cfg.schedules[0].id() == "linear(f=1;T=100)");
    CHECK(cfg.samplers[0].id() == "ancestral");
}

TEST_CASE("config validation points at the offending key") {
    SUBCASE("unknown key is named") {
        const char* bad = R"({"target": {"weights": [1.0], "means": [[0.0]],
            "variances": [[1.0]]}, "grid": {"schedules": [{"kind": "linear"}],
            "samplers": [{"kind": "ancestral"}]},
            "sampling": {"n_samplez": 100}})";
        try {
            (void)parse_config(bad);
            FAIL("expected ConfigError");
        } catch (const ConfigError& e) {
            CHECK(std::string(e.what()).find("n_samplez") != std::string::npos);
        }
    }
    SUBCASE("weights that do not sum to one") {
        const char* bad = R"({"target": {"weights": [0.9, 0.3], "means": [[0.0], [1.0]],
            "variances": [[1.0], [1.0]]}, "grid": {"schedules": [{"kind": "linear"}],
            "samplers": [{"kind": "ancestral"}]}})";
        try {
            (void)parse_config(bad);
            FAIL("expected ConfigError");
        } catch (const ConfigError& e) {
            CHECK(std::string(e.what()).find("sum") != std::string::npos);
        }
    }
    SUBCASE("ddim stride must divide the schedule steps") {
        const char* bad = R"({"target": {"weights": [1.0], "means": [[0.0]],
            "variances": [[1.0]]}, "grid": {"schedules": [{"kind": "linear", "steps": 100}],
            "samplers": [{"kind": "ddim", "stride": 7}]}})";
        CHECK_THROWS_AS((void)parse_config(bad), ConfigError);
    }
    SUBCASE("guidance label must index a component") {
        const char* bad = R"({"target": {"weights": [1.0], "means": [[0.0]],
            "variances": [[1.0]]}, "grid": {"schedules": [{"kind": "linear"}],
            "samplers": [{"kind": "ancestral"}],
            "guidance": [{"classifier": "exact", "label": 3}]}})";
        CHECK_THROWS_AS((void)parse_config(bad), ConfigError);
    }
    SUBCASE("malformed JSON") {
        CHECK_THROWS_AS((void)parse_config("{"), ConfigError);
    }
}

TEST_CASE("config hash is canonical") {
    const RunConfig cfg = parse_config(kMinimalConfig);
    const std::string h = config_hash(cfg);
    CHECK(h.size() == 16);
    CHECK(h.find_first_not_of("0123456789abcdef") == std::string::npos);

    SUBCASE("key order and whitespace do not matter") {
        const char* shuffled = R"({"sampling":{"n_samples":300},"grid":{"samplers":[{"kind":"ancestral"}],"schedules":[{"steps":100,"kind":"linear","factor":1.0}]},"target":{"variances":[[1.0,1.0],[1.0,1.0]],"means":[[-2.0,-2.0],[2.0,2.0]],"weights":[0.5,0.5]}})";
        CHECK(config_hash(parse_config(shuffled)) == h);
    }
    SUBCASE("a changed value does matter") {
        std::string tweaked = kMinimalConfig;
        const auto pos = tweaked.find("\"factor\": 1.0");
        REQUIRE(pos != std::string::npos);
        tweaked.replace(pos, 13, "\"factor\": 0.5");
        CHECK(config_hash(parse_config(tweaked)) != h);
    }
    SUBCASE("round trip through the canonical form") {
        CHECK(config_hash(parse_config(serialize_config(cfg))) == h);
    }
}

TEST_CASE("run_grid enumerates compatible cells deterministically") {
    const RunConfig cfg = parse_config(small_grid_config());
    const GridResult r = run_grid(cfg, 2);
    // 2 schedules x 2 samplers x 1 guidance x 3 seeds, minus the two
    // incompatible pairs (linear+heun, karras+ancestral) x 3 seeds.
    CHECK(r.records.size() == 6);
    CHECK(r.skipped.size() == 2);
    CHECK(r.failures.empty());
    for (const RunRecord& rec : r.records) {
        CHECK(rec.n_samples == 400);
        CHECK(rec.metrics.size() == 2);
        for (const auto& [name, value] : rec.metrics) CHECK(std::isfinite(value));
        CHECK(rec.nfe > 0);
        CHECK(rec.config_hash == config_hash(cfg));
        // CSV-safe cell ids.
        CHECK(rec.schedule.find(',') == std::string::npos);
        CHECK(rec.sampler.find(',') == std::string::npos);
        CHECK(rec.guidance.find(',') == std::string::npos);
    }

    SUBCASE("thread count changes timing only") {
        const GridResult r2 = run_grid(cfg, 4);
        REQUIRE(r2.records.size() == r.records.size());
        for (std::size_t i = 0; i < r.records.size(); ++i) {
            CHECK(r2.records[i].schedule == r.records[i].schedule);
            CHECK(r2.records[i].sampler == r.records[i].sampler);
            CHECK(r2.records[i].seed == r.records[i].seed);
            CHECK(r2.records[i].nfe == r.records[i].nfe);
            CHECK(r2.records[i].metrics == r.records[i].metrics);
        }
    }
}

TEST_CASE("churn at zero and heun share a cell's noise and metrics") {
    const char* cfgtext = R"({
      "target": {"weights": [0.5, 0.5], "means": [[-2.0, -2.0], [2.0, 2.0]],
                 "variances": [[1.0, 1.0], [1.0, 1.0]]},
      "grid": {
        "schedules": [{"kind": "karras", "sigma_min": 0.01, "sigma_max": 10.0}],
        "samplers": [
          {"kind": "ode_heun", "steps": 16},
          {"kind": "churn", "steps": 16, "s_churn": 0.0}
        ]
      },
      "sampling": {"n_samples": 500, "seeds": [7]}
    })";
    const GridResult r = run_grid(parse_config(cfgtext), 1);
    REQUIRE(r.records.size() == 2);
    CHECK(r.records[0].sampler != r.records[1].sampler);
    CHECK(r.records[0].metrics == r.records[1].metrics);
    CHECK(r.records[0].nfe == r.records[1].nfe);
}

TEST_CASE("incompatible pairs and discrete-only guidance are skipped with reasons") {
    const char* cfgtext = R"({
      "target": {"weights": [0.5, 0.5], "means": [[-2.0, -2.0], [2.0, 2.0]],
                 "variances": [[1.0, 1.0], [1.0, 1.0]]},
      "grid": {
        "schedules": [{"kind": "ve", "sigma_min": 0.1, "sigma_max": 5.0}],
        "samplers": [{"kind": "euler_maruyama", "steps": 50}, {"kind": "ddim"}],
        "guidance": [{"classifier": "null"}, {"classifier": "exact", "label": 0, "scale": 2.0}]
      },
      "sampling": {"n_samples": 200, "seeds": [0]}
    })";
    const GridResult r = run_grid(parse_config(cfgtext), 1);
    // ve+em+null runs; ve+em+exact is skipped (guidance needs a discrete
    // schedule); ve+ddim is skipped for both guidance rows.
    CHECK(r.records.size() == 1);
    CHECK(r.skipped.size() == 3);
    bool saw_guidance_reason = false;
    for (const std::string& s : r.skipped)
        if (s.find("guidance") != std::string::npos) saw_guidance_reason = true;
    CHECK(saw_guidance_reason);
}

TEST_CASE("results csv layout") {
    TempDir tmp;
    const RunConfig cfg = parse_config(small_grid_config(200));
    const GridResult r = run_grid(cfg, 2);
    const std::string path = (tmp.path / "results.csv").string();
    write_results_csv(path, r.records);

    std::ifstream in(path);
    REQUIRE(in.good());
    std::string header;
    std::getline(in, header);
    CHECK(header ==
          "schedule,sampler,guidance,label,scale,seed,n_samples,metric,value,nfe,"
          "wall_clock_ms,config_hash");
    std::size_t rows = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ++rows;
        CHECK(std::count(line.begin(), line.end(), ',') == 11);
    }
    // One row per record per metric.
    CHECK(rows == r.records.size() * 2);
}

TEST_CASE("summary json layout") {
    TempDir tmp;
    const RunConfig cfg = parse_config(small_grid_config(200));
    const GridResult r = run_grid(cfg, 2);
    const std::string path = (tmp.path / "summary.json").string();
    write_summary_json(path, cfg, r);

    std::ifstream in(path);
    REQUIRE(in.good());
    nlohmann::json j;
    in >> j;
    CHECK(j.contains("config"));
    CHECK(j.contains("config_hash"));
    CHECK(j.contains("tool_version"));
    CHECK(j.contains("host"));
    CHECK(j.contains("total_ms"));
    CHECK(j.contains("skipped"));
    CHECK(j.contains("failures"));
    REQUIRE(j.contains("cells"));
    CHECK(j["cells"].size() == r.records.size());
    REQUIRE(j.contains("groups"));
    // Aggregates across seeds per (schedule, sampler, guidance).
    CHECK(j["groups"].size() == 2);
    for (const auto& g : j["groups"]) {
        CHECK(g.contains("seeds"));
        CHECK(g["seeds"].size() == 3);
        REQUIRE(g.contains("metrics"));
        for (const auto& [name, agg] : g["metrics"].items()) {
            CHECK(agg.contains("mean"));
            CHECK(agg.contains("std"));
        }
    }
    CHECK(j["config_hash"] == config_hash(cfg));
}

TEST_CASE("trajectory emission writes one csv per cell") {
    TempDir tmp;
    std::string text = small_grid_config(50);
    const auto pos = text.find("\"metrics\"");
    REQUIRE(pos != std::string::npos);
    std::string with_output = text.substr(0, pos) +
                              "\"output\": {\"dir\": \"" + (tmp.path / "out").string() +
                              "\", \"trajectories\": true},\n  " + text.substr(pos);
    const RunConfig cfg = parse_config(with_output);
    CHECK(cfg.emit_trajectories);
    const GridResult r = run_grid(cfg, 1);
    CHECK(r.records.size() == 6);
    std::size_t traj_files = 0;
    for (const auto& entry : fs::directory_iterator(tmp.path / "out"))
        if (entry.path().filename().string().rfind("traj_", 0) == 0) ++traj_files;
    CHECK(traj_files == 6);
}

TEST_CASE("bench table groups by sampler with medians") {
    const RunConfig cfg = parse_config(small_grid_config(200));
    GridResult r = run_grid(cfg, 2);
    const std::string table = bench_table(r.records);
    CHECK(table.find("sampler") != std::string::npos);
    CHECK(table.find("median_ms") != std::string::npos);
    CHECK(table.find("ancestral") != std::string::npos);
    CHECK(table.find("ode_heun") != std::string::npos);

    TempDir tmp;
    const std::string path = (tmp.path / "bench.csv").string();
    write_bench_csv(path, r.records);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "sampler,median_wall_clock_ms,median_nfe,runs");
}

}  // TEST_SUITE
