// hynea: train the toy stack, generate test cases, run the drift study, sweep learning rates.

#include "hynea/config.hpp"
#include "hynea/runner.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <iostream>
#include <optional>

using namespace hynea;

namespace {

enum Exit { kOk = 0, kConfig = 1, kPrerequisite = 2, kInvalidRecord = 3, kFailure = 4 };

void print_report(const report::MetricsReport& r) {
    std::printf("cases %zu valid %zu misbehaviors %zu mr %.3f\n", r.cases, r.valid, r.misbehaviors, r.misbehavior_rate);
    std::printf("ms_ssim %.4f +- %.4f  sut_evals %.1f  wall %.2fs\n", r.ms_ssim.mean, r.ms_ssim.sd, r.sut_evals.mean,
                r.wall_seconds.mean);
    if (r.task == sut::TaskKind::detection) {
        std::printf("confidence_reduction %.4f eviction_rate %.3f (re-ranked top-5: %.3f)\n", r.confidence_reduction,
                    r.eviction_rate, r.eviction_rate_reranked);
    } else {
        std::printf("escape %.4f\n", r.escape);
    }
    std::printf("diversity origin %.4f result %.4f  trace_diff %.4f  frechet %.4f\n", r.diversity_origin,
                r.diversity_result, r.trace_diff, r.frechet);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"HyperNet-adapted diffusion test-case generation"};
    app.require_subcommand(1);

    std::string config, out;
    std::optional<std::uint64_t> seed;
    std::size_t workers = 1;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config, "JSON config (a run manifest also works)")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", out, "output directory")->required();
        sub->add_option("--seed", seed, "override the master seed");
        sub->add_option("--workers", workers, "parallel cases")->check(CLI::PositiveNumber);
    };
    auto* train = app.add_subcommand("train", "train stack components (missing ones when no component is given)");
    auto* generate = app.add_subcommand("generate", "adapt a HyperNet per test case");
    auto* drift = app.add_subcommand("drift", "latent drift study for random mutation");
    auto* sweep = app.add_subcommand("sweep", "generate over a grid of learning rates");
    for (auto* s : {train, generate, drift, sweep}) add_common(s);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kConfig;
    }

    try {
        const auto j = run::read_json(config);
        if (*train) {
            const auto spec = run::parse_train(j, seed);
            const auto results = run::execute_train(spec, out, [](const std::string& m) { std::cerr << m << '\n'; });
            for (const auto& r : results) {
                std::printf("%-16s final loss %.5f metric %.4f %s hash %016llx\n", stack::component_name(r.component),
                            r.curve.empty() ? 0.0 : r.curve.back(), r.accuracy.empty() ? 0.0 : r.accuracy.back(), r.passed ? "ok" : "BELOW TARGET",
                            static_cast<unsigned long long>(r.weight_hash));
            }
            return kOk;
        }
        if (*generate) {
            const auto spec = run::parse_generate(j, seed);
            const auto o = run::execute_generate(spec, out, workers);
            print_report(o.report);
            for (const auto& r : o.records)
                if (!r.valid) std::fprintf(stderr, "case %zu invalid: %s\n", r.case_id, r.error.c_str());
            if (spec.baseline) {
                std::printf("baseline:\n");
                print_report(report::summarize(o.baseline, stack::load_embedder(spec.stack_dir)));
            }
            return o.invalid > 0 ? kInvalidRecord : kOk;
        }
        if (*drift) {
            std::string table;
            const auto reports = run::execute_drift(run::parse_drift(j, seed), out, &table);
            std::printf("%s", table.c_str());
            for (const auto& r : reports) {
                std::printf("P_s=%.2f R=%.4f threshold=%.3f A*^2 crosses %.3f at k=%zu\n", r.config.p_s, r.range,
                            r.threshold, drift::kAdCritical, r.ad_crossing());
            }
            return kOk;
        }
        if (*sweep) {
            std::size_t invalid = 0;
            std::string trend;
            const auto rows = run::execute_sweep(run::parse_sweep(j, seed), out, workers, invalid, &trend);
            std::printf("%10s %10s %6s %10s %10s %8s %10s\n", "lr_min", "lr_max", "mr", "evals", "wall_s", "ms_ssim",
                        "frechet");
            for (const auto& r : rows) {
                std::printf("%10.1e %10.1e %6.3f %10.1f %10.3f %8.4f %10.4g\n", r.lr_min, r.lr_max,
                            r.report.misbehavior_rate, r.report.sut_evals.mean, r.report.wall_seconds.mean,
                            r.report.ms_ssim.mean, r.report.frechet);
            }
            std::printf("%s\n", trend.c_str());
            return invalid > 0 ? kInvalidRecord : kOk;
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kConfig;
    } catch (const stack::MissingPrerequisite& e) {
        std::fprintf(stderr, "missing prerequisite: %s\n", e.what());
        return kPrerequisite;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kFailure;
    }
    return kOk;
}
