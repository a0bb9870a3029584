// xover: Bayesian D-optimal crossover designs for GLMs fitted by GEE.
//
//   xover optimize   --config C [--seed S] [--out DIR] [--workers W]
//   xover efficiency --config C [--seed S] [--out DIR] [--workers W]
//   xover fit        --config C --data FILE [--out DIR]
//   xover simulate   --config C [--seed S] [--out DIR]
//   xover catalog    --config C [--name lsd|wsd|epd]... [--out DIR]
//
// Exit status: 0 success, 2 configuration or input error, 3 numerical failure.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "xover/experiment.hpp"

namespace {

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::optional<std::size_t> workers;
    std::string data;
    std::vector<std::string> catalogs;
};

xover::ExperimentConfig load(const Options& o) {
    auto cfg = xover::load_config(o.config);
    if (o.seed) {
        cfg.seed = *o.seed;
        cfg.optimizer.seed = *o.seed;
    }
    if (o.workers) {
        if (*o.workers < 1) throw xover::ValidationError("--workers must be >= 1");
        cfg.workers = *o.workers;
    }
    if (!o.out.empty()) cfg.output = o.out;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bayesian D-optimal crossover designs for GLMs under GEE"};
    app.require_subcommand(1);
    Options o;

    auto common = [&](CLI::App* sub, bool sweep) {
        sub->add_option("--config", o.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", o.out, "output directory (overrides config)");
        sub->add_option("--seed", o.seed, "seed (overrides config)");
        if (sweep) sub->add_option("--workers", o.workers, "parallel (kind, alpha) cells");
    };
    auto* optimize = app.add_subcommand("optimize", "Bayesian optimal weights for every (kind, alpha) cell");
    common(optimize, true);
    auto* efficiency = app.add_subcommand("efficiency", "efficiency of comparison designs against the optimum");
    common(efficiency, true);
    auto* fit = app.add_subcommand("fit", "GEE fit of a long-format dataset");
    common(fit, false);
    fit->add_option("--data", o.data, "dataset CSV: subject_id,sequence,period,response")
        ->required()
        ->check(CLI::ExistingFile);
    auto* simulate = app.add_subcommand("simulate", "simulate a trial, optionally check variances");
    common(simulate, false);
    auto* cat = app.add_subcommand("catalog", "list Latin square, Williams and extra-period designs");
    common(cat, false);
    cat->add_option("--name", o.catalogs, "lsd, wsd or epd (repeatable; default all)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        const auto cfg = load(o);
        const std::filesystem::path out = cfg.output;
        if (optimize->parsed()) {
            xover::run_optimize(cfg, out);
        } else if (efficiency->parsed()) {
            xover::run_efficiency(cfg, out);
        } else if (fit->parsed()) {
            xover::run_fit(cfg, o.data, out);
        } else if (simulate->parsed()) {
            xover::run_simulate(cfg, out);
        } else if (cat->parsed()) {
            xover::run_catalog(cfg, o.catalogs.empty() ? std::vector<std::string>{"lsd", "wsd", "epd"} : o.catalogs,
                               out);
        }
    } catch (const xover::ValidationError& e) {
        std::cerr << "xover: error: " << e.what() << '\n';
        return 2;
    } catch (const xover::Error& e) {
        std::cerr << "xover: numerical failure: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "xover: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
