#include "doctest.h"
#include "helpers.hpp"

#include "hynea/config.hpp"
#include "hynea/runner.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace hynea;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

nlohmann::json tiny_stack() {
    return {{"shape_images", 64},
            {"attribute_images", 16},
            {"autoencoder", {{"steps", 4}, {"batch", 4}}},
            {"denoiser", {{"steps", 4}, {"batch", 4}}},
            {"sut", {{"steps", 4}, {"batch", 4}, {"train_size", 32}, {"heldout_size", 16}}},
            {"sampler_steps", 2}};
}

// A scratch directory that disappears with the test.
struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("hynea_" + name)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str(const std::string& sub = "") const { return (path / sub).string(); }
};

int cli(const std::string& args) {
    const std::string cmd = std::string(HYNEA_CLI) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("stack config parsing rejects bad fields") {
    CHECK(stack::stack_config_from_json(tiny_stack()).sampler_steps == 2);
    CHECK_THROWS_AS(stack::stack_config_from_json({{"denoiser", {{"stpes", 3}}}}), ConfigError);
    CHECK_THROWS_AS(stack::stack_config_from_json({{"sampler_steps", 1}}), ConfigError);
    CHECK_THROWS_AS(stack::stack_config_from_json({{"data_seed", -1}}), ConfigError);
    CHECK(stack::parse_component("detection") == stack::Component::detector);
    CHECK_THROWS(stack::parse_component("vae"));
}

TEST_CASE("malformed json names the line") {
    TempDir d("badjson");
    write(d.path / "c.json", "{\n  \"cases\": 3,\n  \"stack_dir\" \"x\"\n}");
    try {
        run::read_json(d.str("c.json"));
        FAIL("no error");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
}

TEST_CASE("training honors dependencies and is reproducible") {
    TempDir d("train");
    const auto cfg = stack::stack_config_from_json(tiny_stack());
    CHECK_THROWS_AS(stack::train_component(stack::Component::denoiser, cfg, d.str("a")), stack::MissingPrerequisite);
    try {
        stack::train_component(stack::Component::denoiser, cfg, d.str("a"));
    } catch (const stack::MissingPrerequisite& e) {
        CHECK(std::string(e.what()).find("autoencoder") != std::string::npos);
    }
    const auto a = stack::train_component(stack::Component::autoencoder, cfg, d.str("a"));
    const auto b = stack::train_component(stack::Component::autoencoder, cfg, d.str("b"));
    CHECK(a.weight_hash == b.weight_hash);
    CHECK(fs::exists(d.path / "a" / "autoencoder_curve.csv"));
    CHECK(stack::present(d.str("a"), stack::Component::autoencoder));
    auto other = cfg;
    other.autoencoder.seed += 1;
    CHECK(stack::train_component(stack::Component::autoencoder, other, d.str("c")).weight_hash != a.weight_hash);
}

TEST_CASE("generate, rerun from the manifest, and the CLI exit codes") {
    TempDir d("generate");
    const std::string stack_dir = d.str("stack");
    stack::ensure_stack(stack::stack_config_from_json(tiny_stack()), stack_dir);
    for (auto c : stack::all_components()) CHECK(stack::present(stack_dir, c));

    const nlohmann::json gen = {{"stack_dir", stack_dir},
                                {"cases", 4},
                                {"master_seed", 9},
                                {"generation", {{"task", "multiclass"}, {"total_steps", 3}, {"max_origin_attempts", 4}}}};
    const auto spec = run::parse_generate(gen, std::nullopt);
    const auto o = run::execute_generate(spec, d.str("run1"));
    CHECK(o.records.size() == 4);
    for (const char* f : {"manifest.json", "config.json", "records.csv", "timings.csv", "report.json"})
        CHECK(fs::exists(d.path / "run1" / f));
    const auto manifest = run::read_json(d.str("run1/manifest.json"));
    CHECK(manifest.contains("checkpoint_hashes"));
    CHECK(manifest.at("generation").at("lr_min") == 1e-6);
    const auto report = run::read_json(d.str("run1/report.json"));
    for (const char* k : {"misbehavior_rate", "ms_ssim", "escape_ratio", "confidence_reduction", "diversity_origin", "diversity_result", "trace_diff"})
        CHECK(report.contains(k));

    const auto again = run::execute_generate(run::parse_generate(manifest, std::nullopt), d.str("run2"));
    CHECK(slurp(d.path / "run1" / "records.csv") == slurp(d.path / "run2" / "records.csv"));
    CHECK(again.invalid == o.invalid);

    // Exit codes: 0 or 3 for a run, 1 for config errors, 2 for missing checkpoints.
    write(d.path / "gen.json", gen.dump());
    const int code = cli("generate --config " + d.str("gen.json") + " --out " + d.str("run3"));
    CHECK(code == (o.invalid > 0 ? 3 : 0));
    CHECK(slurp(d.path / "run1" / "records.csv") == slurp(d.path / "run3" / "records.csv"));
    write(d.path / "bad.json", "{\"stack_dir\": \"x\", \"casez\": 1}");
    CHECK(cli("generate --config " + d.str("bad.json") + " --out " + d.str("run4")) == 1);
    auto missing = gen;
    missing["stack_dir"] = d.str("nowhere");
    write(d.path / "missing.json", missing.dump());
    CHECK(cli("generate --config " + d.str("missing.json") + " --out " + d.str("run5")) == 2);
    write(d.path / "den.json", "{\"component\": \"denoiser\"}");
    CHECK(cli("train --config " + d.str("den.json") + " --out " + d.str("empty")) == 2);
    CHECK(cli("generate --out " + d.str("run6")) == 1);

    // A manifest whose checkpoint hashes no longer match is refused.
    auto stale = manifest;
    stale["checkpoint_hashes"]["denoiser"] = 12345;
    CHECK_THROWS_AS(run::execute_generate(run::parse_generate(stale, std::nullopt), d.str("run7")),
                    stack::MissingPrerequisite);
}

TEST_CASE("drift and sweep commands") {
    TempDir d("drift");
    const nlohmann::json j = {{"label", "high"}, {"d", 16}, {"trials", 200}, {"population", 100}, {"k_max", 6},
                              {"p_s", {0.0, 1.0}}};
    std::string table;
    const auto spec = run::parse_drift(j, std::nullopt);
    REQUIRE(spec.configs.size() == 2);
    const auto reports = run::execute_drift(spec, d.str("a"), &table);
    CHECK(reports.size() == 2);
    CHECK(table.find("P_s=1.00") != std::string::npos);
    const auto manifest = run::read_json(d.str("a/manifest.json"));
    CHECK(manifest.at("alpha") == 1e-4);
    run::execute_drift(run::parse_drift(manifest, std::nullopt), d.str("b"));
    CHECK(slurp(d.path / "a" / "drift_report.csv") == slurp(d.path / "b" / "drift_report.csv"));
    CHECK_THROWS_AS(run::parse_drift({{"p_s", nlohmann::json::array()}}, std::nullopt), ConfigError);

    CHECK(run::default_lr_grid().size() == 9);
    CHECK(run::default_lr_grid().front() == 1e-8);
    CHECK(run::default_lr_grid().back() == 1e-4);
    CHECK_THROWS_AS(run::parse_sweep({{"stack_dir", "s"}, {"lr_grid", {1e-5, -1.0}}}, std::nullopt), ConfigError);
    const auto sw = run::parse_sweep({{"stack_dir", "s"}}, 5);
    CHECK(sw.base.master_seed == 5);
    CHECK(sw.lr_grid.size() == 9);
}

}  // TEST_SUITE
