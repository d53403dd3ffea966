#include "hynea/runner.hpp"

#include "hynea/config.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace hynea::run {

namespace fs = std::filesystem;

nlohmann::json read_json(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read config " + path);
    try {
        return nlohmann::json::parse(f);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

void write_json(const std::string& path, const nlohmann::json& j) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << j.dump(2) << '\n';
}

// --- train -------------------------------------------------------------------

TrainSpec parse_train(const nlohmann::json& j, std::optional<std::uint64_t> seed) {
    check_keys(j, {"command", "component", "stack", "checkpoints"}, "train config");
    TrainSpec s;
    if (j.contains("stack")) s.stack = stack::stack_config_from_json(j.at("stack"));
    if (seed) s.stack.data_seed = *seed;
    std::vector<std::string> names;
    if (j.contains("component")) {
        const auto& c = j.at("component");
        if (c.is_string()) names.push_back(c.get<std::string>());
        else names = field<std::vector<std::string>>(j, "component", {});
    }
    for (const auto& n : names) {
        if (n == "all") {
            s.components.clear();
            break;
        }
        if (n == "sut") {
            for (auto c : {stack::Component::multiclass, stack::Component::binary, stack::Component::detector})
                s.components.push_back(c);
            continue;
        }
        try {
            s.components.push_back(stack::parse_component(n));
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("config field 'component': ") + e.what());
        }
    }
    return s;
}

std::vector<stack::TrainResult> execute_train(const TrainSpec& spec, const std::string& out, const stack::Log& log) {
    fs::create_directories(out);
    std::vector<stack::TrainResult> results;
    if (spec.components.empty()) {
        for (auto c : stack::all_components()) {
            if (stack::present(out, c)) continue;
            if (log) log(std::string("training ") + stack::component_name(c));
            results.push_back(stack::train_component(c, spec.stack, out));
        }
    } else {
        for (auto c : spec.components) {
            if (log) log(std::string("training ") + stack::component_name(c));
            results.push_back(stack::train_component(c, spec.stack, out));
        }
    }
    nlohmann::json names = nlohmann::json::array();
    for (auto c : spec.components) names.push_back(stack::component_name(c));
    write_json((fs::path(out) / "manifest.json").string(),
               {{"command", "train"},
                {"component", spec.components.empty() ? nlohmann::json("all") : names},
                {"stack", stack::to_json(spec.stack)},
                {"checkpoints", stack::checkpoint_hashes(out)}});
    return results;
}

// --- generate ------------------------------------------------------------------

namespace {

gen::NoiseBaselineConfig parse_baseline(const nlohmann::json& j) {
    check_keys(j, {"alpha", "max_evals", "population", "seed", "detection_fraction"}, "baseline config");
    gen::NoiseBaselineConfig b;
    b.alpha = field<double>(j, "alpha", b.alpha);
    b.max_evals = field<std::size_t>(j, "max_evals", b.max_evals);
    b.population = field<std::size_t>(j, "population", b.population);
    b.seed = field<std::uint64_t>(j, "seed", b.seed);
    b.detection_fraction = field<double>(j, "detection_fraction", b.detection_fraction);
    if (!(b.alpha > 0.0)) throw ConfigError("baseline: alpha must be positive");
    return b;
}

nlohmann::json baseline_json(const gen::NoiseBaselineConfig& b) {
    return {{"alpha", b.alpha},
            {"max_evals", b.max_evals},
            {"population", b.population},
            {"seed", b.seed},
            {"detection_fraction", b.detection_fraction}};
}

void check_hashes(const GenerateSpec& spec) {
    if (spec.expected_hashes.is_null() || spec.expected_hashes.empty()) return;
    const auto now = stack::checkpoint_hashes(spec.stack_dir);
    for (const auto& [name, h] : spec.expected_hashes.items()) {
        if (!now.contains(name)) throw stack::MissingPrerequisite("checkpoint " + name + " is missing from " + spec.stack_dir);
        if (now.at(name) != h) {
            throw stack::MissingPrerequisite("checkpoint " + name + " in " + spec.stack_dir +
                                             " differs from the one recorded in the manifest");
        }
    }
}

stack::Component sut_component(sut::TaskKind t) {
    switch (t) {
        case sut::TaskKind::multiclass: return stack::Component::multiclass;
        case sut::TaskKind::binary: return stack::Component::binary;
        case sut::TaskKind::detection: return stack::Component::detector;
    }
    return stack::Component::multiclass;
}

}  // namespace

GenerateSpec parse_generate(const nlohmann::json& j, std::optional<std::uint64_t> seed) {
    check_keys(j, {"command", "stack_dir", "cases", "master_seed", "generation", "baseline", "checkpoint_hashes", "artifacts"},
               "generate config");
    GenerateSpec s;
    s.stack_dir = field<std::string>(j, "stack_dir", "");
    if (s.stack_dir.empty()) throw ConfigError("generate config needs 'stack_dir'");
    s.cases = field<std::size_t>(j, "cases", s.cases);
    if (s.cases == 0) throw ConfigError("config field 'cases' must be positive");
    s.master_seed = field<std::uint64_t>(j, "master_seed", s.master_seed);
    if (seed) s.master_seed = *seed;
    try {
        s.generation = gen::gen_config_from_json(j.value("generation", nlohmann::json::object()));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("generation: ") + e.what());
    } catch (const ConfigError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("generation: ") + e.what());
    }
    if (j.contains("baseline") && !j.at("baseline").is_null()) s.baseline = parse_baseline(j.at("baseline"));
    if (j.contains("checkpoint_hashes")) s.expected_hashes = j.at("checkpoint_hashes");
    return s;
}

nlohmann::json to_json(const GenerateSpec& s) {
    return {{"command", "generate"},
            {"stack_dir", s.stack_dir},
            {"cases", s.cases},
            {"master_seed", s.master_seed},
            {"generation", gen::to_json(s.generation)},
            {"baseline", s.baseline ? baseline_json(*s.baseline) : nlohmann::json(nullptr)}};
}

GenerateOutcome execute_generate(const GenerateSpec& spec, const std::string& out, std::size_t workers) {
    check_hashes(spec);
    const ldm::Backbone bb = stack::load_backbone(spec.stack_dir);
    const sut::Sut sut = stack::load_sut(spec.stack_dir, spec.generation.task);
    const sut::Classifier embedder = stack::load_embedder(spec.stack_dir);
    fs::create_directories(out);

    GenerateOutcome o;
    const auto cases = gen::make_cases(spec.generation.task, spec.cases, spec.master_seed);
    o.records = gen::batch_run(cases, spec.generation, bb, sut, workers);
    for (const auto& r : o.records)
        if (!r.valid) ++o.invalid;
    o.report = report::summarize(o.records, embedder);

    const fs::path dir(out);
    nlohmann::json hashes = nlohmann::json::object();
    for (auto c : {stack::Component::autoencoder, stack::Component::denoiser, sut_component(spec.generation.task),
                   stack::Component::embedder}) {
        hashes[stack::component_name(c)] = stack::checkpoint_hashes(spec.stack_dir).at(stack::component_name(c));
    }
    nlohmann::json manifest = to_json(spec);
    manifest["checkpoint_hashes"] = hashes;
    manifest["artifacts"] = {{"config", "config.json"}, {"records", "records.csv"}, {"timings", "timings.csv"},
                             {"report", "report.json"}, {"images", "images"}};
    nlohmann::json report_json = report::to_json(o.report);

    if (spec.baseline) {
        for (std::size_t i = 0; i < cases.size(); ++i) {
            const auto& cs = cases[i];
            gen::TestCaseRecord b;
            try {
                const gen::Origin origin =
                    gen::generate_origin(bb, sut, cs.cls, cs.seed, spec.generation.max_origin_attempts, cs.attribute);
                if (origin.valid) {
                    b = gen::run_noise_baseline(origin, *spec.baseline, bb, sut);
                } else {
                    b.valid = false;
                    b.error = "no valid origin";
                }
            } catch (const std::exception& e) {
                b.valid = false;
                b.error = e.what();
            }
            b.case_id = i;
            o.baseline.push_back(std::move(b));
        }
        report::write_records_csv((dir / "baseline_records.csv").string(), o.baseline);
        report::write_image_pairs((dir / "baseline_images").string(), o.baseline);
        report_json["baseline"] = report::to_json(report::summarize(o.baseline, embedder));
        manifest["artifacts"]["baseline_records"] = "baseline_records.csv";
    }

    write_json((dir / "manifest.json").string(), manifest);
    write_json((dir / "config.json").string(), gen::to_json(spec.generation));
    report::write_records_csv((dir / "records.csv").string(), o.records);
    report::write_timings_csv((dir / "timings.csv").string(), o.records);
    report::write_image_pairs((dir / "images").string(), o.records);
    write_json((dir / "report.json").string(), report_json);
    return o;
}

// --- drift ---------------------------------------------------------------------

DriftSpec parse_drift(const nlohmann::json& j, std::optional<std::uint64_t> seed) {
    if (!j.is_object()) throw ConfigError("drift config: expected a JSON object");
    nlohmann::json base = j;
    base.erase("command");
    base.erase("artifacts");
    std::vector<double> ps{drift::DriftConfig{}.p_s};
    if (base.contains("p_s")) {
        if (base.at("p_s").is_array()) ps = field<std::vector<double>>(base, "p_s", {});
        else ps = {field<double>(base, "p_s", 0.0)};
        base.erase("p_s");
    }
    if (ps.empty()) throw ConfigError("config field 'p_s': empty list");
    DriftSpec s;
    for (double p : ps) {
        nlohmann::json one = base;
        one["p_s"] = p;
        if (seed) one["seed"] = *seed;
        try {
            s.configs.push_back(drift::drift_config_from_json(one));
        } catch (const ConfigError&) {
            throw;
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
    }
    return s;
}

nlohmann::json to_json(const DriftSpec& s) {
    nlohmann::json j = drift::to_json(s.configs.front());
    nlohmann::json ps = nlohmann::json::array();
    for (const auto& c : s.configs) ps.push_back(c.p_s);
    j["p_s"] = ps;
    j["command"] = "drift";
    return j;
}

std::vector<drift::DriftReport> execute_drift(const DriftSpec& spec, const std::string& out, std::string* table) {
    fs::create_directories(out);
    std::vector<drift::DriftReport> reports;
    for (const auto& c : spec.configs) reports.push_back(drift::run_drift_experiment(c));
    const fs::path dir(out);
    nlohmann::json manifest = to_json(spec);
    manifest["artifacts"] = {{"report", "drift_report.csv"}, {"summary", "drift_summary.json"}};
    write_json((dir / "manifest.json").string(), manifest);
    drift::write_drift_csv((dir / "drift_report.csv").string(), reports);
    nlohmann::json summary = nlohmann::json::array();
    for (const auto& r : reports) {
        std::size_t first_half = r.p_ood.size();
        for (std::size_t k = 0; k < r.p_ood.size(); ++k)
            if (r.p_ood[k] > 0.5) {
                first_half = k;
                break;
            }
        summary.push_back({{"config", drift::to_json(r.config)},
                           {"range", r.range},
                           {"threshold", r.threshold},
                           {"p_ood_0", r.p_ood.front()},
                           {"p_ood_last", r.p_ood.back()},
                           {"first_k_p_ood_above_half", first_half < r.p_ood.size() ? nlohmann::json(first_half) : nlohmann::json(nullptr)},
                           {"ad_crossing", r.ad_crossing() < r.ad_stat.size() ? nlohmann::json(r.ad_crossing()) : nlohmann::json(nullptr)}});
    }
    write_json((dir / "drift_summary.json").string(), summary);
    if (table) {
        std::ostringstream t;
        char buf[64];
        t << "   k";
        for (const auto& r : reports) {
            std::snprintf(buf, sizeof buf, "  P_s=%.2f", r.config.p_s);
            t << buf;
        }
        t << '\n';
        const std::size_t kmax = reports.front().p_ood.size() - 1;
        for (std::size_t k = 0; k <= kmax; k += k < 10 ? 1 : 5) {
            std::snprintf(buf, sizeof buf, "%4zu", k);
            t << buf;
            for (const auto& r : reports) {
                std::snprintf(buf, sizeof buf, "  %8.4f", r.p_ood[std::min(k, r.p_ood.size() - 1)]);
                t << buf;
            }
            t << '\n';
        }
        *table = t.str();
    }
    return reports;
}

// --- sweep ---------------------------------------------------------------------

std::vector<double> default_lr_grid() { return {1e-8, 3e-8, 1e-7, 3e-7, 1e-6, 3e-6, 1e-5, 3e-5, 1e-4}; }

SweepSpec parse_sweep(const nlohmann::json& j, std::optional<std::uint64_t> seed) {
    if (!j.is_object()) throw ConfigError("sweep config: expected a JSON object");
    nlohmann::json base = j;
    base.erase("lr_grid");
    SweepSpec s;
    s.base = parse_generate(base, seed);
    s.base.baseline.reset();
    s.lr_grid = j.contains("lr_grid") ? field<std::vector<double>>(j, "lr_grid", {}) : default_lr_grid();
    if (s.lr_grid.empty()) throw ConfigError("config field 'lr_grid': empty list");
    for (double v : s.lr_grid)
        if (!(v > 0.0)) throw ConfigError("config field 'lr_grid': values must be positive");
    return s;
}

std::vector<SweepRow> execute_sweep(const SweepSpec& spec, const std::string& out, std::size_t workers,
                                    std::size_t& invalid, std::string* trend) {
    fs::create_directories(out);
    std::vector<SweepRow> rows;
    invalid = 0;
    char name[64];
    for (double lr : spec.lr_grid) {
        GenerateSpec g = spec.base;
        g.generation.lr_min = lr;
        g.generation.lr_max = 100.0 * lr;
        g.generation.validate();
        std::snprintf(name, sizeof name, "lr_%.0e", lr);
        const auto o = execute_generate(g, (fs::path(out) / name).string(), workers);
        invalid += o.invalid;
        rows.push_back({lr, g.generation.lr_max, o.report});
    }
    std::ofstream f(fs::path(out) / "sweep.csv");
    f << "lr_min,lr_max,cases,misbehavior_rate,sut_evals_mean,wall_seconds_mean,ms_ssim_mean,frechet\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%.1e,%.1e,%zu,%.4f,%.2f,%.4f,%.4f,%.6g\n", r.lr_min, r.lr_max, r.report.valid,
                      r.report.misbehavior_rate, r.report.sut_evals.mean, r.report.wall_seconds.mean,
                      r.report.ms_ssim.mean, r.report.frechet);
        f << buf;
    }
    nlohmann::json manifest = to_json(spec.base);
    manifest["command"] = "sweep";
    manifest["lr_grid"] = spec.lr_grid;
    write_json((fs::path(out) / "manifest.json").string(), manifest);
    if (trend) {
        std::size_t drops = 0;
        for (std::size_t i = 1; i < rows.size(); ++i)
            if (rows[i].report.wall_seconds.mean <= rows[i - 1].report.wall_seconds.mean) ++drops;
        std::snprintf(buf, sizeof buf, "runtime non-increasing in %zu of %zu lr steps (%s)", drops,
                      rows.empty() ? std::size_t{0} : rows.size() - 1,
                      drops + 1 == rows.size() ? "monotone" : "not monotone");
        *trend = buf;
    }
    return rows;
}

}  // namespace hynea::run
