// Command-line front end: schedule derivation, complexity analysis, forward
// inference, synthetic features, checkpoints, and the self-check suites.
//
// Exit codes: 0 success, 1 a check failed, 2 usage or validation error.

#include <cstdint>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "speechformer/checks.hpp"
#include "speechformer/complexity.hpp"
#include "speechformer/io.hpp"
#include "speechformer/model.hpp"
#include "speechformer/rng.hpp"
#include "speechformer/speech_structure.hpp"

namespace sf = speechformer;

namespace {

constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;

struct Options {
    double hop1_ms = sf::kDefaultHop1Ms;

    std::string config_path;
    std::string baseline_config_path;
    std::size_t input_len = 0;
    std::size_t dim = 0;
    std::string format = "table";

    std::string features_path;
    std::string checkpoint_path;
    std::uint64_t seed = 0;

    std::size_t rows = 0;
    std::size_t cols = 0;
    std::string out_path;

    std::string suite = "all";
};

int cmd_schedule(const Options& o) {
    sf::write_schedule_tsv(std::cout, sf::derive_schedule(o.hop1_ms));
    return 0;
}

void print_report(const sf::CostReport& r, const std::string& format) {
    if (format == "tsv") sf::write_cost_tsv(std::cout, r);
    else sf::write_cost_table(std::cout, r);
}

sf::CostReport analyze_one(const std::string& path, const Options& o) {
    sf::ModelConfig config = sf::load_config(path).model;
    if (o.dim != 0) config.d_model = o.dim;
    if (o.input_len == 0) return sf::count_params(config);
    return sf::count_flops(config, o.input_len);
}

int cmd_analyze(const Options& o) {
    const sf::CostReport candidate = analyze_one(o.config_path, o);
    print_report(candidate, o.format);
    if (!o.baseline_config_path.empty()) {
        const sf::CostReport reference = analyze_one(o.baseline_config_path, o);
        if (o.format != "tsv") std::cout << '\n';
        print_report(reference, o.format);
        const sf::CostRatio ratio = sf::compare(reference, candidate);
        char buf[96];
        if (o.format == "tsv") {
            std::snprintf(buf, sizeof buf, "flops_ratio\t%.4f\nparams_ratio\t%.4f\n",
                          ratio.flops_ratio, ratio.params_ratio);
        } else {
            std::snprintf(buf, sizeof buf, "\nflops ratio  %.4f (%.1f%%)\nparams ratio %.4f\n",
                          ratio.flops_ratio, 100.0 * ratio.flops_ratio, ratio.params_ratio);
        }
        std::cout << buf;
    }
    return 0;
}

int cmd_forward(const Options& o, bool seed_given) {
    const sf::RunConfig rc = sf::load_config(o.config_path);
    const sf::ModelConfig& config = rc.model;
    const sf::Matrix features = sf::load_features(o.features_path);
    if (features.cols() != config.d_model) {
        throw sf::ShapeError("features " + features.shape() + " do not match d_model " +
                             std::to_string(config.d_model));
    }
    const std::uint64_t seed = seed_given ? o.seed : rc.seed;
    const sf::ModelWeights weights = o.checkpoint_path.empty()
                                         ? sf::init_model(config, seed)
                                         : sf::load_checkpoint(o.checkpoint_path, config);
    const sf::StageSchedule schedule = sf::derive_schedule(config.hop1_ms);
    const sf::ForwardTrace trace = sf::forward(features, weights, config, schedule);

    for (std::size_t s = 0; s < trace.stage_shapes.size(); ++s) {
        std::cout << "stage\t" << sf::stage_name(config, s) << '\t' << trace.stage_shapes[s].first
                  << '\t' << trace.stage_shapes[s].second << '\n';
    }
    std::cout << "logits";
    char buf[32];
    for (double v : trace.logits) {
        std::snprintf(buf, sizeof buf, "\t%.17g", v);
        std::cout << buf;
    }
    std::cout << '\n';
    return 0;
}

int cmd_synth(const Options& o) {
    if (o.rows == 0 || o.cols == 0) throw sf::InvalidArgument("--rows and --cols must be >= 1");
    sf::Rng rng(o.seed);
    sf::Matrix m(o.rows, o.cols);
    for (double& v : m.values()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    sf::save_features(o.out_path, m);
    return 0;
}

int cmd_init(const Options& o, bool seed_given) {
    const sf::RunConfig rc = sf::load_config(o.config_path);
    const sf::ModelWeights w = sf::init_model(rc.model, seed_given ? o.seed : rc.seed);
    sf::save_checkpoint(o.out_path, rc.model, w);
    return 0;
}

int cmd_check(const Options& o) {
    bool ok = true;
    if (o.suite == "oracle" || o.suite == "all") {
        const auto cases = sf::run_oracle_suite(o.seed);
        double worst = 0.0;
        for (std::size_t i = 0; i < cases.size(); ++i) {
            const auto& c = cases[i];
            worst = std::max(worst, c.max_abs_diff);
            char buf[160];
            std::snprintf(buf, sizeof buf,
                          "oracle/%02zu\tT=%zu d=%zu h=%zu tw=%zu scale=%s\t%.3e\t%s\tseed=%llu\n", i,
                          c.tokens, c.width, c.heads, c.tw, sf::to_string(c.mode), c.max_abs_diff,
                          c.pass ? "pass" : "fail", static_cast<unsigned long long>(c.seed));
            std::cout << buf;
            ok = ok && c.pass;
        }
        char buf[96];
        std::snprintf(buf, sizeof buf, "oracle\tmax_abs_diff=%.3e\t%zu cases\n", worst, cases.size());
        std::cout << buf;
    }
    if (o.suite == "grad" || o.suite == "all") {
        for (const auto& c : sf::run_grad_suite(o.seed)) {
            sf::write_report_tsv(std::cout, c.report, "grad/" + c.name + "/");
            ok = ok && c.report.passed();
            if (!c.report.passed()) {
                std::cout << "grad/" << c.name << "\tfailed\tsuite seed=" << o.seed << '\n';
            }
        }
    }
    std::cout << (ok ? "all checks passed\n" : "checks FAILED\n");
    return ok ? 0 : kExitCheckFailed;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"SpeechFormer hierarchical encoder toolkit"};
    app.require_subcommand(1);
    Options o;

    auto* schedule = app.add_subcommand("schedule", "Print the stage schedule (windows, merge scales, hops)");
    schedule->add_option("--hop1-ms", o.hop1_ms, "Feature hop length in ms")->check(CLI::PositiveNumber);

    auto* analyze = app.add_subcommand("analyze", "Parameter and FLOPs report for a config");
    analyze->add_option("--config", o.config_path, "Model config file")->required()->check(CLI::ExistingFile);
    analyze->add_option("--input-len", o.input_len, "Input frames T (omit for parameters only)");
    analyze->add_option("--dim", o.dim, "Override d_model (feature dimension)");
    analyze->add_option("--baseline-config", o.baseline_config_path, "Reference config for a FLOPs ratio")
        ->check(CLI::ExistingFile);
    analyze->add_option("--format", o.format, "Output format")->check(CLI::IsMember({"table", "tsv"}));

    auto* forward = app.add_subcommand("forward", "Run the encoder on a feature file");
    forward->add_option("--config", o.config_path, "Model config file")->required()->check(CLI::ExistingFile);
    forward->add_option("--features", o.features_path, "FMAT feature file")->required()->check(CLI::ExistingFile);
    forward->add_option("--checkpoint", o.checkpoint_path, "SFWT weights (default: seeded init)")
        ->check(CLI::ExistingFile);
    auto* forward_seed = forward->add_option("--seed", o.seed, "Initialization seed (overrides config)");

    auto* synth = app.add_subcommand("synth", "Write a synthetic FMAT feature file");
    synth->add_option("--rows", o.rows, "Frames")->required();
    synth->add_option("--cols", o.cols, "Feature dimension")->required();
    synth->add_option("--seed", o.seed, "Random seed");
    synth->add_option("--out", o.out_path, "Output path")->required();

    auto* init = app.add_subcommand("init", "Write seeded initial weights as an SFWT checkpoint");
    init->add_option("--config", o.config_path, "Model config file")->required()->check(CLI::ExistingFile);
    auto* init_seed = init->add_option("--seed", o.seed, "Initialization seed (overrides config)");
    init->add_option("--out", o.out_path, "Output path")->required();

    auto* check = app.add_subcommand("check", "Run the oracle and gradient self-checks");
    check->add_option("--suite", o.suite, "Which suite")->check(CLI::IsMember({"oracle", "grad", "all"}));
    check->add_option("--seed", o.seed, "Suite seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*schedule) return cmd_schedule(o);
        if (*analyze) return cmd_analyze(o);
        if (*forward) return cmd_forward(o, forward_seed->count() > 0);
        if (*synth) return cmd_synth(o);
        if (*init) return cmd_init(o, init_seed->count() > 0);
        if (*check) return cmd_check(o);
    } catch (const sf::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    }
    return kExitUsage;
}
