#include "dlab/harness.hpp"

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "dlab/version.hpp"

namespace dlab {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& msg) { throw ConfigError("config: " + msg); }

std::string num_str(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

const json& expect_object(const json& j, const std::string& path) {
    if (!j.is_object()) fail(path + " must be an object");
    return j;
}

void check_keys(const json& j, const std::string& path, std::initializer_list<const char*> allowed) {
    for (const auto& item : j.items()) {
        bool ok = false;
        for (const char* k : allowed)
            if (item.key() == k) { ok = true; break; }
        if (!ok) fail("unknown key \"" + item.key() + "\" in " + path);
    }
}

double num_field(const json& j, const std::string& path, const char* key,
                 std::optional<double> def = std::nullopt) {
    if (!j.contains(key)) {
        if (def) return *def;
        fail(path + " is missing required key \"" + std::string(key) + "\"");
    }
    const json& v = j.at(key);
    if (!v.is_number()) fail(path + "." + key + " must be a number");
    return v.get<double>();
}

std::size_t size_field(const json& j, const std::string& path, const char* key,
                       std::optional<std::size_t> def = std::nullopt) {
    if (!j.contains(key)) {
        if (def) return *def;
        fail(path + " is missing required key \"" + std::string(key) + "\"");
    }
    const json& v = j.at(key);
    if (!v.is_number_integer() || (v.is_number_integer() && v.get<long long>() < 0))
        fail(path + "." + key + " must be a non-negative integer");
    return v.get<std::size_t>();
}

std::string str_field(const json& j, const std::string& path, const char* key,
                      std::optional<std::string> def = std::nullopt) {
    if (!j.contains(key)) {
        if (def) return *def;
        fail(path + " is missing required key \"" + std::string(key) + "\"");
    }
    const json& v = j.at(key);
    if (!v.is_string()) fail(path + "." + key + " must be a string");
    return v.get<std::string>();
}

Matrix matrix_field(const json& j, const std::string& path, const char* key) {
    if (!j.contains(key)) fail(path + " is missing required key \"" + std::string(key) + "\"");
    const json& v = j.at(key);
    if (!v.is_array() || v.empty()) fail(path + "." + key + " must be a non-empty array of rows");
    std::vector<Vec> rows;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const json& r = v.at(i);
        if (!r.is_array() || r.empty())
            fail(path + "." + key + "[" + std::to_string(i) + "] must be a non-empty array");
        Vec row;
        for (const auto& x : r) {
            if (!x.is_number())
                fail(path + "." + key + "[" + std::to_string(i) + "] must contain numbers");
            row.push_back(x.get<double>());
        }
        rows.push_back(std::move(row));
    }
    try {
        return matrix_from_rows(rows);
    } catch (const std::exception& e) {
        fail(path + "." + key + ": " + e.what());
    }
}

ScheduleSpec parse_schedule(const json& j, const std::string& path) {
    expect_object(j, path);
    ScheduleSpec s;
    s.kind = str_field(j, path, "kind");
    if (s.kind == "linear") {
        check_keys(j, path, {"kind", "factor", "steps"});
        s.factor = num_field(j, path, "factor", 1.0);
        s.steps = size_field(j, path, "steps", std::size_t{1000});
    } else if (s.kind == "cosine") {
        check_keys(j, path, {"kind", "steps", "s_offset"});
        s.steps = size_field(j, path, "steps", std::size_t{1000});
        s.s_offset = num_field(j, path, "s_offset", 0.008);
    } else if (s.kind == "sigmoid") {
        check_keys(j, path, {"kind", "steps", "gamma_min", "gamma_max"});
        s.steps = size_field(j, path, "steps", std::size_t{1000});
        s.gamma_min = num_field(j, path, "gamma_min", -6.0);
        s.gamma_max = num_field(j, path, "gamma_max", 6.0);
    } else if (s.kind == "geometric") {
        check_keys(j, path, {"kind", "sigma_max", "sigma_min", "levels"});
        s.sigma_max = num_field(j, path, "sigma_max", 5.0);
        s.sigma_min = num_field(j, path, "sigma_min", 0.03);
        s.levels = size_field(j, path, "levels", std::size_t{10});
    } else if (s.kind == "ve") {
        check_keys(j, path, {"kind", "sigma_min", "sigma_max"});
        s.sigma_min = num_field(j, path, "sigma_min", 0.08);
        s.sigma_max = num_field(j, path, "sigma_max", 8.0);
    } else if (s.kind == "vp") {
        check_keys(j, path, {"kind", "beta_min", "beta_d", "eps_s"});
        s.beta_min = num_field(j, path, "beta_min", 0.1);
        s.beta_d = num_field(j, path, "beta_d", 19.9);
        s.eps_s = num_field(j, path, "eps_s", 1e-3);
    } else if (s.kind == "karras") {
        check_keys(j, path, {"kind", "sigma_min", "sigma_max"});
        s.sigma_min = num_field(j, path, "sigma_min", 0.002);
        s.sigma_max = num_field(j, path, "sigma_max", 80.0);
    } else {
        fail(path + ".kind \"" + s.kind + "\" is not a known schedule");
    }
    return s;
}

SamplerSpec parse_sampler(const json& j, const std::string& path) {
    expect_object(j, path);
    SamplerSpec s;
    s.kind = str_field(j, path, "kind");
    if (s.kind == "ancestral") {
        check_keys(j, path, {"kind"});
    } else if (s.kind == "ddim") {
        check_keys(j, path, {"kind", "stride"});
        s.stride = size_field(j, path, "stride", std::size_t{1});
        if (s.stride < 1) fail(path + ".stride must be >= 1");
    } else if (s.kind == "langevin") {
        check_keys(j, path, {"kind", "eps_scale", "inner_steps"});
        s.eps_scale = num_field(j, path, "eps_scale", 2e-5);
        s.inner_steps = size_field(j, path, "inner_steps", std::size_t{100});
        if (!(s.eps_scale > 0.0)) fail(path + ".eps_scale must be > 0");
        if (s.inner_steps < 1) fail(path + ".inner_steps must be >= 1");
    } else if (s.kind == "euler_maruyama") {
        check_keys(j, path, {"kind", "steps"});
        s.steps = size_field(j, path, "steps", std::size_t{1000});
        if (s.steps < 1) fail(path + ".steps must be >= 1");
    } else if (s.kind == "ode_euler" || s.kind == "ode_heun") {
        check_keys(j, path, {"kind", "steps", "rho"});
        s.steps = size_field(j, path, "steps", std::size_t{64});
        s.rho = num_field(j, path, "rho", 7.0);
        if (s.steps < 2) fail(path + ".steps must be >= 2");
        if (!(s.rho > 0.0)) fail(path + ".rho must be > 0");
    } else if (s.kind == "churn") {
        check_keys(j, path, {"kind", "steps", "rho", "s_churn", "s_tmin", "s_tmax", "s_noise"});
        s.steps = size_field(j, path, "steps", std::size_t{64});
        s.rho = num_field(j, path, "rho", 7.0);
        s.churn.s_churn = num_field(j, path, "s_churn", 0.0);
        s.churn.s_tmin = num_field(j, path, "s_tmin", 0.0);
        s.churn.s_tmax = num_field(j, path, "s_tmax",
                                   std::numeric_limits<double>::infinity());
        s.churn.s_noise = num_field(j, path, "s_noise", 1.0);
        if (s.steps < 2) fail(path + ".steps must be >= 2");
        if (!(s.rho > 0.0)) fail(path + ".rho must be > 0");
        if (!(s.churn.s_churn >= 0.0)) fail(path + ".s_churn must be >= 0");
        if (!(s.churn.s_noise > 0.0)) fail(path + ".s_noise must be > 0");
        if (!(s.churn.s_tmin <= s.churn.s_tmax)) fail(path + ": need s_tmin <= s_tmax");
    } else {
        fail(path + ".kind \"" + s.kind + "\" is not a known sampler");
    }
    return s;
}

GuidanceSpec parse_guidance(const json& j, const std::string& path) {
    expect_object(j, path);
    GuidanceSpec g;
    g.classifier = str_field(j, path, "classifier", std::string{"null"});
    if (g.classifier == "null") {
        check_keys(j, path, {"classifier"});
    } else if (g.classifier == "exact") {
        check_keys(j, path, {"classifier", "label", "scale"});
        g.label = size_field(j, path, "label", std::size_t{0});
        g.scale = num_field(j, path, "scale", 1.0);
    } else if (g.classifier == "untrained") {
        check_keys(j, path, {"classifier", "label", "scale", "seed"});
        g.label = size_field(j, path, "label", std::size_t{0});
        g.scale = num_field(j, path, "scale", 1.0);
        g.seed = size_field(j, path, "seed", std::size_t{0});
    } else {
        fail(path + ".classifier \"" + g.classifier + "\" is not a known classifier");
    }
    if (!std::isfinite(g.scale)) fail(path + ".scale must be finite");
    return g;
}

// Schedule artifacts built once per spec and shared read-only across cells.
struct BuiltSchedule {
    std::optional<DiscreteSchedule> discrete;
    std::optional<SigmaLadder> ladder;
    std::optional<ContinuousSchedule> continuous;
};

BuiltSchedule build_schedule(const ScheduleSpec& s) {
    BuiltSchedule b;
    if (s.kind == "linear") b.discrete = make_linear_schedule(s.factor, s.steps);
    else if (s.kind == "cosine") b.discrete = make_cosine_schedule(s.steps, s.s_offset);
    else if (s.kind == "sigmoid") b.discrete = make_sigmoid_schedule(s.steps, s.gamma_min, s.gamma_max);
    else if (s.kind == "geometric") b.ladder = make_geometric_ladder(s.sigma_max, s.sigma_min, s.levels);
    else if (s.kind == "ve") b.continuous = make_ve_schedule(s.sigma_min, s.sigma_max);
    else if (s.kind == "vp") b.continuous = make_vp_schedule(s.beta_min, s.beta_d, s.eps_s);
    else if (s.kind == "karras") b.continuous = make_karras_schedule(s.sigma_min, s.sigma_max);
    else throw ConfigError("config: unknown schedule kind \"" + s.kind + "\"");
    return b;
}

// Empty optional means the cell runs; otherwise the skip reason.
std::optional<std::string> incompat_reason(const ScheduleSpec& ss, const SamplerSpec& ms,
                                           const GuidanceSpec& gs) {
    const bool discrete_sampler = ms.kind == "ancestral" || ms.kind == "ddim";
    const bool ladder_sampler = ms.kind == "langevin";
    const bool continuous_sampler = ms.kind == "euler_maruyama" || ms.kind == "ode_euler" ||
                                    ms.kind == "ode_heun" || ms.kind == "churn";
    if (ss.discrete() && !discrete_sampler)
        return ms.kind + " does not run on discrete schedules";
    if (ss.ladder() && !ladder_sampler)
        return ms.kind + " does not run on sigma ladders";
    if (ss.continuous() && !continuous_sampler)
        return ms.kind + " does not run on continuous schedules";
    if (gs.classifier != "null" && !discrete_sampler)
        return "guidance requires ancestral or ddim";
    return std::nullopt;
}

json schedule_json(const ScheduleSpec& s) {
    json j;
    j["kind"] = s.kind;
    if (s.kind == "linear") { j["factor"] = s.factor; j["steps"] = s.steps; }
    else if (s.kind == "cosine") { j["steps"] = s.steps; j["s_offset"] = s.s_offset; }
    else if (s.kind == "sigmoid") {
        j["steps"] = s.steps; j["gamma_min"] = s.gamma_min; j["gamma_max"] = s.gamma_max;
    } else if (s.kind == "geometric") {
        j["sigma_max"] = s.sigma_max; j["sigma_min"] = s.sigma_min; j["levels"] = s.levels;
    } else if (s.kind == "ve" || s.kind == "karras") {
        j["sigma_min"] = s.sigma_min; j["sigma_max"] = s.sigma_max;
    } else if (s.kind == "vp") {
        j["beta_min"] = s.beta_min; j["beta_d"] = s.beta_d; j["eps_s"] = s.eps_s;
    }
    return j;
}

json sampler_json(const SamplerSpec& s) {
    json j;
    j["kind"] = s.kind;
    if (s.kind == "ddim") j["stride"] = s.stride;
    else if (s.kind == "langevin") { j["eps_scale"] = s.eps_scale; j["inner_steps"] = s.inner_steps; }
    else if (s.kind == "euler_maruyama") j["steps"] = s.steps;
    else if (s.kind == "ode_euler" || s.kind == "ode_heun") { j["steps"] = s.steps; j["rho"] = s.rho; }
    else if (s.kind == "churn") {
        j["steps"] = s.steps; j["rho"] = s.rho;
        j["s_churn"] = s.churn.s_churn; j["s_tmin"] = s.churn.s_tmin;
        j["s_tmax"] = s.churn.s_tmax; j["s_noise"] = s.churn.s_noise;
    }
    return j;
}

json guidance_json(const GuidanceSpec& g) {
    json j;
    j["classifier"] = g.classifier;
    if (g.classifier != "null") { j["label"] = g.label; j["scale"] = g.scale; }
    if (g.classifier == "untrained") j["seed"] = g.seed;
    return j;
}

std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += "\"";
    return out;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

bool ScheduleSpec::discrete() const {
    return kind == "linear" || kind == "cosine" || kind == "sigmoid";
}
bool ScheduleSpec::ladder() const { return kind == "geometric"; }
bool ScheduleSpec::continuous() const {
    return kind == "ve" || kind == "vp" || kind == "karras";
}

std::string ScheduleSpec::id() const {
    if (kind == "linear")
        return "linear(f=" + num_str(factor) + ";T=" + std::to_string(steps) + ")";
    if (kind == "cosine")
        return "cosine(T=" + std::to_string(steps) + ";s=" + num_str(s_offset) + ")";
    if (kind == "sigmoid")
        return "sigmoid(T=" + std::to_string(steps) + ";gmin=" + num_str(gamma_min) +
               ";gmax=" + num_str(gamma_max) + ")";
    if (kind == "geometric")
        return "geometric(smax=" + num_str(sigma_max) + ";smin=" + num_str(sigma_min) +
               ";L=" + std::to_string(levels) + ")";
    if (kind == "ve")
        return "ve(smin=" + num_str(sigma_min) + ";smax=" + num_str(sigma_max) + ")";
    if (kind == "vp")
        return "vp(bmin=" + num_str(beta_min) + ";bd=" + num_str(beta_d) +
               ";eps=" + num_str(eps_s) + ")";
    if (kind == "karras")
        return "karras(smin=" + num_str(sigma_min) + ";smax=" + num_str(sigma_max) + ")";
    return kind;
}

std::string SamplerSpec::id() const {
    if (kind == "ancestral") return "ancestral";
    if (kind == "ddim") return "ddim(stride=" + std::to_string(stride) + ")";
    if (kind == "langevin")
        return "langevin(eps=" + num_str(eps_scale) + ";inner=" + std::to_string(inner_steps) + ")";
    if (kind == "euler_maruyama") return "euler_maruyama(steps=" + std::to_string(steps) + ")";
    if (kind == "ode_euler" || kind == "ode_heun")
        return kind + "(steps=" + std::to_string(steps) + ";rho=" + num_str(rho) + ")";
    if (kind == "churn")
        return "churn(steps=" + std::to_string(steps) + ";rho=" + num_str(rho) +
               ";churn=" + num_str(churn.s_churn) + ";tmin=" + num_str(churn.s_tmin) +
               ";tmax=" + num_str(churn.s_tmax) + ";noise=" + num_str(churn.s_noise) + ")";
    return kind;
}

GuidanceAttachment GuidanceSpec::attachment() const {
    GuidanceAttachment a;
    if (classifier == "null") a.kind = ClassifierKind::Null;
    else if (classifier == "exact") a.kind = ClassifierKind::Exact;
    else if (classifier == "untrained") a.kind = ClassifierKind::Untrained;
    else throw ConfigError("config: unknown classifier \"" + classifier + "\"");
    a.label = label;
    a.scale = scale;
    a.seed = seed;
    return a;
}

std::string GuidanceSpec::id() const {
    if (classifier == "null") return "null";
    std::string s = classifier + "(label=" + std::to_string(label) + ";scale=" + num_str(scale);
    if (classifier == "untrained") s += ";seed=" + std::to_string(seed);
    return s + ")";
}

GaussianMixture RunConfig::target() const { return GaussianMixture(weights, means, variances); }

RunConfig parse_config(const std::string& json_text) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::exception& e) {
        fail(std::string{"parse error: "} + e.what());
    }
    expect_object(root, "config");
    check_keys(root, "config", {"target", "grid", "sampling", "metrics", "output"});

    RunConfig cfg;

    if (!root.contains("target")) fail("missing required key \"target\"");
    const json& jt = expect_object(root.at("target"), "target");
    check_keys(jt, "target", {"weights", "means", "variances"});
    if (!jt.contains("weights") || !jt.at("weights").is_array())
        fail("target.weights must be an array of numbers");
    for (const auto& w : jt.at("weights")) {
        if (!w.is_number()) fail("target.weights must be an array of numbers");
        cfg.weights.push_back(w.get<double>());
    }
    cfg.means = matrix_field(jt, "target", "means");
    cfg.variances = matrix_field(jt, "target", "variances");
    try {
        (void)cfg.target();
    } catch (const std::exception& e) {
        fail(std::string{"target: "} + e.what());
    }

    if (!root.contains("grid")) fail("missing required key \"grid\"");
    const json& jg = expect_object(root.at("grid"), "grid");
    check_keys(jg, "grid", {"schedules", "samplers", "guidance"});
    if (!jg.contains("schedules") || !jg.at("schedules").is_array() || jg.at("schedules").empty())
        fail("grid.schedules must be a non-empty array");
    if (!jg.contains("samplers") || !jg.at("samplers").is_array() || jg.at("samplers").empty())
        fail("grid.samplers must be a non-empty array");
    for (std::size_t i = 0; i < jg.at("schedules").size(); ++i) {
        const std::string path = "grid.schedules[" + std::to_string(i) + "]";
        ScheduleSpec s = parse_schedule(jg.at("schedules").at(i), path);
        try {
            (void)build_schedule(s);
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            fail(path + ": " + e.what());
        }
        cfg.schedules.push_back(std::move(s));
    }
    for (std::size_t i = 0; i < jg.at("samplers").size(); ++i)
        cfg.samplers.push_back(
            parse_sampler(jg.at("samplers").at(i), "grid.samplers[" + std::to_string(i) + "]"));
    if (jg.contains("guidance")) {
        if (!jg.at("guidance").is_array() || jg.at("guidance").empty())
            fail("grid.guidance must be a non-empty array");
        for (std::size_t i = 0; i < jg.at("guidance").size(); ++i)
            cfg.guidance.push_back(
                parse_guidance(jg.at("guidance").at(i), "grid.guidance[" + std::to_string(i) + "]"));
    } else {
        cfg.guidance.push_back(GuidanceSpec{});
    }
    for (std::size_t i = 0; i < cfg.guidance.size(); ++i)
        if (cfg.guidance[i].classifier != "null" && cfg.guidance[i].label >= cfg.weights.size())
            fail("grid.guidance[" + std::to_string(i) + "].label " +
                 std::to_string(cfg.guidance[i].label) + " is out of range for " +
                 std::to_string(cfg.weights.size()) + " components");

    if (root.contains("sampling")) {
        const json& js = expect_object(root.at("sampling"), "sampling");
        check_keys(js, "sampling", {"n_samples", "seeds"});
        cfg.n_samples = size_field(js, "sampling", "n_samples", std::size_t{1000});
        if (js.contains("seeds")) {
            if (!js.at("seeds").is_array() || js.at("seeds").empty())
                fail("sampling.seeds must be a non-empty array of integers");
            for (const auto& s : js.at("seeds")) {
                if (!s.is_number_integer() || s.get<long long>() < 0)
                    fail("sampling.seeds must contain non-negative integers");
                cfg.seeds.push_back(s.get<std::uint64_t>());
            }
        }
    }
    if (cfg.seeds.empty()) cfg.seeds = {0, 1, 2};
    if (cfg.n_samples < 2) fail("sampling.n_samples must be >= 2");

    if (root.contains("metrics")) {
        if (!root.at("metrics").is_array() || root.at("metrics").empty())
            fail("metrics must be a non-empty array of names");
        for (const auto& m : root.at("metrics")) {
            if (!m.is_string()) fail("metrics must contain strings");
            const std::string name = m.get<std::string>();
            if (name != "surrogate_score" && name != "frechet")
                fail("metrics: \"" + name + "\" is not a known metric");
            cfg.metrics.push_back(name);
        }
    } else {
        cfg.metrics = {"surrogate_score", "frechet"};
    }

    if (root.contains("output")) {
        const json& jo = expect_object(root.at("output"), "output");
        check_keys(jo, "output", {"dir", "trajectories"});
        cfg.out_dir = str_field(jo, "output", "dir", std::string{"results"});
        if (jo.contains("trajectories")) {
            if (!jo.at("trajectories").is_boolean()) fail("output.trajectories must be a boolean");
            cfg.emit_trajectories = jo.at("trajectories").get<bool>();
        }
    }

    // Cross-field check: ddim stride has to divide every discrete schedule it
    // will run against.
    for (const auto& ms : cfg.samplers) {
        if (ms.kind != "ddim") continue;
        for (const auto& ss : cfg.schedules) {
            if (!ss.discrete()) continue;
            if (ss.steps % ms.stride != 0)
                fail("ddim stride " + std::to_string(ms.stride) + " does not divide " +
                     ss.id() + " steps " + std::to_string(ss.steps));
        }
    }
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

std::string serialize_config(const RunConfig& cfg) {
    json root;
    json& jt = root["target"];
    jt["weights"] = cfg.weights;
    for (std::size_t i = 0; i < cfg.means.rows; ++i) {
        auto r = cfg.means.row(i);
        jt["means"].push_back(std::vector<double>(r.begin(), r.end()));
    }
    for (std::size_t i = 0; i < cfg.variances.rows; ++i) {
        auto r = cfg.variances.row(i);
        jt["variances"].push_back(std::vector<double>(r.begin(), r.end()));
    }
    json& jg = root["grid"];
    jg["schedules"] = json::array();
    for (const auto& s : cfg.schedules) jg["schedules"].push_back(schedule_json(s));
    jg["samplers"] = json::array();
    for (const auto& s : cfg.samplers) jg["samplers"].push_back(sampler_json(s));
    jg["guidance"] = json::array();
    for (const auto& g : cfg.guidance) jg["guidance"].push_back(guidance_json(g));
    root["sampling"]["n_samples"] = cfg.n_samples;
    root["sampling"]["seeds"] = cfg.seeds;
    root["metrics"] = cfg.metrics;
    root["output"]["dir"] = cfg.out_dir;
    root["output"]["trajectories"] = cfg.emit_trajectories;
    return root.dump();  // nlohmann objects iterate in sorted key order
}

std::string config_hash(const RunConfig& cfg) {
    // Output plumbing does not change what gets computed, so two runs of the
    // same experiment keep one hash regardless of --out / trajectory dumps.
    RunConfig keyed = cfg;
    keyed.out_dir = "results";
    keyed.emit_trajectories = false;
    const std::string text = serialize_config(keyed);
    std::uint64_t h = 1469598103934665603ULL;  // FNV offset basis
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;  // FNV prime
    }
    std::ostringstream out;
    out << std::hex << std::setfill('0') << std::setw(16) << h;
    return out.str();
}

namespace {

struct Cell {
    std::size_t si, mi, gi, seed_idx;
};

SamplerOutput execute_cell(const GaussianMixture& target, const BuiltSchedule& bs,
                           const SamplerSpec& ms, const GuidanceSpec& gs, std::size_t n,
                           RngStream rng, const TrajectorySink& sink) {
    if (ms.kind == "ancestral") {
        AncestralOptions opts;
        opts.trajectory = sink;
        return sample_ancestral(target, *bs.discrete, gs.attachment(), n, rng, opts);
    }
    if (ms.kind == "ddim")
        return sample_ddim(target, *bs.discrete, gs.attachment(), n, rng, ms.stride, sink);
    if (ms.kind == "langevin")
        return sample_langevin_annealed(target, *bs.ladder, ms.eps_scale, ms.inner_steps, n, rng,
                                        sink);
    if (ms.kind == "euler_maruyama") {
        EmOptions opts;
        opts.trajectory = sink;
        EmOutput out = sample_euler_maruyama(target, *bs.continuous, ms.steps, n, rng, opts);
        return {std::move(out.samples), out.nfe};
    }
    if (ms.kind == "ode_euler" || ms.kind == "ode_heun") {
        const std::vector<double> grid = ode_time_grid(*bs.continuous, ms.steps, ms.rho);
        OdeOptions opts;
        opts.trajectory = sink;
        return sample_ode(target, *bs.continuous, grid,
                          ms.kind == "ode_euler" ? OdeSolver::Euler : OdeSolver::Heun, n, rng,
                          opts);
    }
    if (ms.kind == "churn") {
        const KarrasSteps ks = karras_steps(bs.continuous->sigma_min(), bs.continuous->sigma_max(),
                                            ms.rho, ms.steps);
        return sample_stochastic_churn(target, *bs.continuous, ks, ms.churn, n, rng, sink);
    }
    throw ConfigError("config: unknown sampler kind \"" + ms.kind + "\"");
}

}  // namespace

GridResult run_grid(const RunConfig& cfg, std::size_t threads) {
    const auto t_start = std::chrono::steady_clock::now();
    const GaussianMixture target = cfg.target();
    const GaussianStats ref = target_stats(target);
    const std::string hash = config_hash(cfg);

    std::vector<BuiltSchedule> built;
    built.reserve(cfg.schedules.size());
    for (const auto& s : cfg.schedules) built.push_back(build_schedule(s));

    GridResult result;
    std::vector<Cell> cells;
    const std::size_t M = cfg.samplers.size();
    const std::size_t G = cfg.guidance.size();
    for (std::size_t si = 0; si < cfg.schedules.size(); ++si) {
        for (std::size_t mi = 0; mi < M; ++mi) {
            for (std::size_t gi = 0; gi < G; ++gi) {
                const auto reason =
                    incompat_reason(cfg.schedules[si], cfg.samplers[mi], cfg.guidance[gi]);
                if (reason) {
                    result.skipped.push_back(cfg.schedules[si].id() + " x " +
                                             cfg.samplers[mi].id() + " x " +
                                             cfg.guidance[gi].id() + ": " + *reason);
                    continue;
                }
                for (std::size_t k = 0; k < cfg.seeds.size(); ++k)
                    cells.push_back({si, mi, gi, k});
            }
        }
    }

    if (cfg.emit_trajectories) std::filesystem::create_directories(cfg.out_dir);

    std::vector<std::optional<RunRecord>> slots(cells.size());
    std::mutex fail_mu;
    std::atomic<std::size_t> next{0};

    auto worker = [&]() {
        for (;;) {
            const std::size_t idx = next.fetch_add(1);
            if (idx >= cells.size()) return;
            const Cell& cell = cells[idx];
            const ScheduleSpec& ss = cfg.schedules[cell.si];
            const SamplerSpec& ms = cfg.samplers[cell.mi];
            const GuidanceSpec& gs = cfg.guidance[cell.gi];
            try {
                // Stream keyed by the schedule axis only: cells that differ
                // just in sampler or guidance see the same noise realization,
                // which is what makes paired comparisons (and the grid-level
                // reduction identities, e.g. churn(0) vs heun) meaningful.
                RngStream rng(cfg.seeds[cell.seed_idx], cell.si);
                std::ostringstream traj;
                TrajectorySink sink;
                if (cfg.emit_trajectories) {
                    traj << "step,sigma";
                    for (std::size_t j = 0; j < target.dim(); ++j) traj << ",x" << j;
                    traj << "\n";
                    sink = [&traj](std::size_t step, double sigma, std::span<const double> x) {
                        traj << step << "," << num_str(sigma);
                        for (double v : x) traj << "," << num_str(v);
                        traj << "\n";
                    };
                }

                const auto c0 = std::chrono::steady_clock::now();
                SamplerOutput out =
                    execute_cell(target, built[cell.si], ms, gs, cfg.n_samples, rng, sink);
                const auto c1 = std::chrono::steady_clock::now();

                RunRecord rec;
                rec.schedule = ss.id();
                rec.sampler = ms.id();
                rec.guidance = gs.id();
                rec.label = gs.classifier == "null" ? -1 : static_cast<long>(gs.label);
                rec.scale = gs.classifier == "null" ? 0.0 : gs.scale;
                rec.seed = cfg.seeds[cell.seed_idx];
                rec.n_samples = cfg.n_samples;
                rec.nfe = out.nfe;
                rec.wall_clock_ms =
                    std::chrono::duration<double, std::milli>(c1 - c0).count();
                rec.config_hash = hash;
                rec.tool_version = kToolVersion;
                for (const auto& name : cfg.metrics) {
                    double v = name == "surrogate_score"
                                   ? surrogate_score(target, out.samples)
                                   : frechet_gaussian(fit_gaussian(out.samples), ref);
                    if (!std::isfinite(v))
                        throw std::runtime_error("metric " + name + " is not finite");
                    rec.metrics.emplace_back(name, v);
                }

                if (cfg.emit_trajectories) {
                    const std::string fname = cfg.out_dir + "/traj_s" + std::to_string(cell.si) +
                                              "_m" + std::to_string(cell.mi) + "_g" +
                                              std::to_string(cell.gi) + "_seed" +
                                              std::to_string(rec.seed) + ".csv";
                    std::ofstream f(fname);
                    if (!f) throw std::runtime_error("cannot write " + fname);
                    f << traj.str();
                }
                slots[idx] = std::move(rec);
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(fail_mu);
                result.failures.push_back(ss.id() + " x " + ms.id() + " x " + gs.id() + " seed " +
                                          std::to_string(cfg.seeds[cell.seed_idx]) + ": " +
                                          e.what());
            }
        }
    };

    const std::size_t nthreads = std::max<std::size_t>(1, std::min(threads, cells.size()));
    if (nthreads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(nthreads);
        for (std::size_t i = 0; i < nthreads; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    for (auto& slot : slots)
        if (slot) result.records.push_back(std::move(*slot));
    result.total_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t_start)
            .count();
    return result;
}

void write_results_csv(const std::string& path, const std::vector<RunRecord>& records) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << "schedule,sampler,guidance,label,scale,seed,n_samples,metric,value,nfe,"
         "wall_clock_ms,config_hash\n";
    for (const auto& r : records) {
        for (const auto& [name, value] : r.metrics) {
            f << csv_escape(r.schedule) << ',' << csv_escape(r.sampler) << ','
              << csv_escape(r.guidance) << ',' << r.label << ',' << num_str(r.scale) << ','
              << r.seed << ',' << r.n_samples << ',' << name << ',' << num_str(value) << ','
              << r.nfe << ',' << num_str(r.wall_clock_ms) << ',' << r.config_hash << "\n";
        }
    }
}

void write_summary_json(const std::string& path, const RunConfig& cfg, const GridResult& result) {
    json root;
    root["config"] = json::parse(serialize_config(cfg));
    root["config_hash"] = config_hash(cfg);
    root["tool_version"] = kToolVersion;
    char host[256] = {0};
    if (gethostname(host, sizeof(host) - 1) == 0) root["host"] = std::string(host);
    root["total_ms"] = result.total_ms;
    root["cells"] = json::array();
    for (const auto& r : result.records) {
        json c;
        c["schedule"] = r.schedule;
        c["sampler"] = r.sampler;
        c["guidance"] = r.guidance;
        c["label"] = r.label;
        c["scale"] = r.scale;
        c["seed"] = r.seed;
        c["n_samples"] = r.n_samples;
        c["nfe"] = r.nfe;
        c["wall_clock_ms"] = r.wall_clock_ms;
        for (const auto& [name, value] : r.metrics) c["metrics"][name] = value;
        root["cells"].push_back(std::move(c));
    }

    // Aggregate each (schedule, sampler, guidance) group across seeds.
    struct Group {
        const RunRecord* first;
        std::vector<const RunRecord*> members;
    };
    std::vector<Group> groups;
    for (const auto& r : result.records) {
        Group* g = nullptr;
        for (auto& cand : groups) {
            if (cand.first->schedule == r.schedule && cand.first->sampler == r.sampler &&
                cand.first->guidance == r.guidance) {
                g = &cand;
                break;
            }
        }
        if (!g) {
            groups.push_back({&r, {}});
            g = &groups.back();
        }
        g->members.push_back(&r);
    }
    root["groups"] = json::array();
    for (const auto& g : groups) {
        json jg;
        jg["schedule"] = g.first->schedule;
        jg["sampler"] = g.first->sampler;
        jg["guidance"] = g.first->guidance;
        jg["seeds"] = json::array();
        for (const auto* r : g.members) jg["seeds"].push_back(r->seed);
        jg["nfe"] = g.first->nfe;
        for (const auto& [name, _] : g.first->metrics) {
            std::vector<double> vals;
            for (const auto* r : g.members)
                for (const auto& [n2, v2] : r->metrics)
                    if (n2 == name) vals.push_back(v2);
            double mean = 0.0;
            for (double v : vals) mean += v;
            mean /= static_cast<double>(vals.size());
            double var = 0.0;
            if (vals.size() > 1) {
                for (double v : vals) var += (v - mean) * (v - mean);
                var /= static_cast<double>(vals.size() - 1);
            }
            jg["metrics"][name]["mean"] = mean;
            jg["metrics"][name]["std"] = std::sqrt(var);
        }
        root["groups"].push_back(std::move(jg));
    }

    root["skipped"] = result.skipped;
    root["failures"] = result.failures;
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << root.dump(2) << "\n";
}

std::string bench_table(const std::vector<RunRecord>& records) {
    // Group by sampler id, first-seen order, then sort by median wall clock.
    std::vector<std::string> order;
    std::vector<std::vector<double>> ms, nfe;
    for (const auto& r : records) {
        std::size_t k = 0;
        for (; k < order.size(); ++k)
            if (order[k] == r.sampler) break;
        if (k == order.size()) {
            order.push_back(r.sampler);
            ms.emplace_back();
            nfe.emplace_back();
        }
        ms[k].push_back(r.wall_clock_ms);
        nfe[k].push_back(static_cast<double>(r.nfe));
    }
    std::vector<std::size_t> idx(order.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::vector<double> med(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) med[i] = median(ms[i]);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return med[a] < med[b]; });

    std::size_t width = 12;
    for (const auto& s : order) width = std::max(width, s.size());
    std::ostringstream out;
    out << std::left << std::setw(static_cast<int>(width) + 2) << "sampler" << std::right
        << std::setw(14) << "median_ms" << std::setw(12) << "nfe" << std::setw(8) << "runs"
        << "\n";
    for (std::size_t i : idx) {
        out << std::left << std::setw(static_cast<int>(width) + 2) << order[i] << std::right
            << std::setw(14) << std::fixed << std::setprecision(3) << med[i] << std::setw(12)
            << std::setprecision(0) << median(nfe[i]) << std::setw(8) << ms[i].size() << "\n";
        out.unsetf(std::ios_base::floatfield);
    }
    return out.str();
}

void write_bench_csv(const std::string& path, const std::vector<RunRecord>& records) {
    std::vector<std::string> order;
    std::vector<std::vector<double>> ms, nfe;
    for (const auto& r : records) {
        std::size_t k = 0;
        for (; k < order.size(); ++k)
            if (order[k] == r.sampler) break;
        if (k == order.size()) {
            order.push_back(r.sampler);
            ms.emplace_back();
            nfe.emplace_back();
        }
        ms[k].push_back(r.wall_clock_ms);
        nfe[k].push_back(static_cast<double>(r.nfe));
    }
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << "sampler,median_wall_clock_ms,median_nfe,runs\n";
    for (std::size_t k = 0; k < order.size(); ++k)
        f << csv_escape(order[k]) << ',' << num_str(median(ms[k])) << ','
          << num_str(median(nfe[k])) << ',' << ms[k].size() << "\n";
}

}  // namespace dlab
