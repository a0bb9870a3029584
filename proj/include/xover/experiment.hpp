#pragma once

// Batch experiments behind the command-line tool. Each run_* function reads
// a validated ExperimentConfig and writes CSV files plus a meta.json record
// into an output directory. Outputs depend only on the config and the seed.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <boost/version.hpp>

#include "json.hpp"

#include "xover/catalog.hpp"
#include "xover/config.hpp"
#include "xover/gee_fit.hpp"
#include "xover/optimizer.hpp"
#include "xover/priors.hpp"
#include "xover/sim_data.hpp"

namespace xover {

inline constexpr const char* kVersion = "0.1.0";

namespace detail {

inline std::ofstream open_output(const std::filesystem::path& dir, const std::string& name) {
    std::filesystem::create_directories(dir);
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + (dir / name).string());
    return out;
}

inline std::string na_or(const std::optional<double>& v) { return v ? csv::fmt(*v) : "NA"; }

inline void write_meta(const std::filesystem::path& dir, const std::string& command, const ExperimentConfig& cfg,
                       Json extra = Json::object()) {
    Json meta = {{"command", command},
                 {"seed", cfg.seed},
                 {"version", kVersion},
                 {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                               std::to_string(EIGEN_MINOR_VERSION)},
                 {"boost", std::to_string(BOOST_VERSION / 100000) + "." + std::to_string(BOOST_VERSION / 100 % 1000) +
                               "." + std::to_string(BOOST_VERSION % 100)}};
    if (cfg.prior) meta["prior_points"] = cfg.prior->points;
    for (const auto& item : extra.items()) meta[item.key()] = item.value();
    auto out = open_output(dir, "meta.json");
    out << meta.dump(2) << '\n';
}

}  // namespace detail

/// The prior of an experiment, resolving csv and fit sources.
inline PriorSpec resolve_prior(const ExperimentConfig& cfg) {
    if (!cfg.prior) throw ValidationError("config has no \"prior\" section");
    const PriorConfig& p = *cfg.prior;
    std::vector<EstimateRow> table;
    switch (p.source) {
        case PriorSource::inline_table: table = p.table; break;
        case PriorSource::csv: table = read_estimate_table(p.path); break;
        case PriorSource::fit: {
            const TrialDataset data = read_dataset_file(p.path, cfg.layout, cfg.spec.family);
            const FitResult fr = fit(data, cfg.spec, p.fit_correlation);
            if (!fr.converged)
                throw NumericalError("fit of " + p.path + " for the prior did not converge (" + to_string(fr.status) +
                                     ")");
            table = estimate_table(fr, data.layout, cfg.spec);
            break;
        }
    }
    if (table.size() != parameter_count(cfg.layout, cfg.spec))
        throw ValidationError("prior table has " + std::to_string(table.size()) + " rows, model has " +
                              std::to_string(parameter_count(cfg.layout, cfg.spec)) + " parameters");
    return prior_from_ci_table(table, p.kind);
}

inline PriorSample experiment_sample(const ExperimentConfig& cfg) {
    return lhs_sample(resolve_prior(cfg), cfg.prior->points, cfg.seed);
}

inline std::string cell_name(CorrelationStructure s, double alpha) {
    std::ostringstream o;
    o << to_string(s) << '(' << alpha << ')';
    return o.str();
}

/// D^B for every (kind, alpha) cell: design.csv, objective.csv, meta.json.
/// A failed cell is reported by name after the other cells are written.
inline void run_optimize(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
    const PriorSample sample = experiment_sample(cfg);
    const auto rows = weight_sweep(cfg.candidates, sample, cfg.spec, cfg.structures, cfg.alphas, cfg.layout,
                                   cfg.optimizer, cfg.workers);
    auto design = detail::open_output(out_dir, "design.csv");
    auto objective = detail::open_output(out_dir, "objective.csv");
    design << "kind,alpha,sequence,weight\n";
    objective << "kind,alpha,psi,optimality_gap,iterations,converged\n";
    std::string failures;
    for (const auto& r : rows) {
        const std::string key = to_string(r.structure) + "," + csv::fmt(r.alpha);
        if (!r.result) {
            failures += "\n  " + cell_name(r.structure, r.alpha) + ": " + r.error;
            continue;
        }
        const auto& res = *r.result;
        for (std::size_t i = 0; i < res.design.size(); ++i)
            design << key << ',' << res.design.sequences[i].str() << ',' << csv::fmt(res.design.weights[i]) << '\n';
        objective << key << ',' << csv::fmt(res.objective) << ',' << csv::fmt(res.optimality_gap) << ','
                  << res.iterations << ',' << (res.converged ? 1 : 0) << '\n';
    }
    detail::write_meta(out_dir, "optimize", cfg, {{"candidates", cfg.candidates.size()}});
    if (!failures.empty()) throw NumericalError("optimization failed for" + failures);
}

/// Efficiency of every comparison design against D^B in every cell. The
/// first row of each cell is D^B itself. Cells or designs that cannot be
/// evaluated get NA and a line in errors.csv.
inline void run_efficiency(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
    const PriorSample sample = experiment_sample(cfg);
    const auto rows = weight_sweep(cfg.candidates, sample, cfg.spec, cfg.structures, cfg.alphas, cfg.layout,
                                   cfg.optimizer, cfg.workers);
    const std::size_t m = parameter_count(cfg.layout, cfg.spec);
    const std::size_t q = cfg.layout.treatments - 1;
    auto eff = detail::open_output(out_dir, "efficiency.csv");
    eff << "design_name,kind,alpha,eff_paper,eff_log\n";
    std::vector<std::string> errors;
    auto note = [&](const std::string& name, const std::string& key, std::string message) {
        std::replace(message.begin(), message.end(), ',', ';');
        errors.push_back(name + "," + key + "," + message);
    };
    for (const auto& r : rows) {
        const std::string key = to_string(r.structure) + "," + csv::fmt(r.alpha);
        const CorrelationKind kind{r.structure, r.alpha};
        if (!r.result) {
            note("D_B", key, r.error);
            eff << "D_B," << key << ",NA,NA\n";
            for (const auto& c : cfg.comparisons) eff << c.name << ',' << key << ",NA,NA\n";
            continue;
        }
        const double psi_ref = r.result->objective;
        const auto self = efficiency_from_objectives(psi_ref, psi_ref, m, q);
        eff << "D_B," << key << ',' << detail::na_or(self.eff_paper) << ',' << csv::fmt(self.eff_log) << '\n';
        for (const auto& c : cfg.comparisons) {
            try {
                const double psi = bayes_objective(c.design, sample, cfg.spec, kind, cfg.layout);
                const auto e = efficiency_from_objectives(psi_ref, psi, m, q);
                eff << c.name << ',' << key << ',' << detail::na_or(e.eff_paper) << ',' << csv::fmt(e.eff_log) << '\n';
            } catch (const Error& ex) {
                note(c.name, key, ex.what());
                eff << c.name << ',' << key << ",NA,NA\n";
            }
        }
    }
    if (!errors.empty()) {
        auto err = detail::open_output(out_dir, "errors.csv");
        err << "design_name,kind,alpha,message\n";
        for (const auto& e : errors) err << e << '\n';
    }
    detail::write_meta(out_dir, "efficiency", cfg, {{"designs", cfg.comparisons.size() + 1}});
}

/// GEE fit of a long-format dataset: fit.csv with one row per parameter,
/// alpha-hat, dispersion and convergence in meta.json.
inline FitResult run_fit(const ExperimentConfig& cfg, const std::string& data_path,
                         const std::filesystem::path& out_dir) {
    const TrialDataset data = read_dataset_file(data_path, cfg.layout, cfg.spec.family);
    const FitResult fr = fit(data, cfg.spec, cfg.fit_correlation);
    auto out = detail::open_output(out_dir, "fit.csv");
    out << "parameter,estimate,ci_low,ci_high,model_se,sandwich_se\n";
    const auto names = parameter_names(cfg.layout, cfg.spec);
    const bool have_se = fr.sandwich_se.size() == fr.theta_hat.size();
    for (std::size_t k = 0; k < names.size(); ++k) {
        const auto kk = static_cast<Eigen::Index>(k);
        out << names[k] << ',' << csv::fmt(fr.theta_hat(kk));
        if (have_se)
            out << ',' << csv::fmt(fr.ci_low(kk)) << ',' << csv::fmt(fr.ci_high(kk)) << ',' << csv::fmt(fr.model_se(kk))
                << ',' << csv::fmt(fr.sandwich_se(kk)) << '\n';
        else
            out << ",NA,NA,NA,NA\n";
    }
    detail::write_meta(out_dir, "fit", cfg,
                       {{"correlation", to_string(cfg.fit_correlation)},
                        {"alpha_hat", fr.alpha_hat},
                        {"dispersion_hat", fr.dispersion_hat},
                        {"iterations", fr.iterations},
                        {"converged", fr.converged},
                        {"status", to_string(fr.status)},
                        {"subjects", data.subjects.size()}});
    if (!fr.converged) throw NumericalError("GEE fit did not converge: " + to_string(fr.status));
    return fr;
}

inline SimConfig simulation_config(const ExperimentConfig& cfg) {
    if (!cfg.simulation) throw ValidationError("config has no \"simulation\" section");
    const auto& s = *cfg.simulation;
    SimConfig sc;
    sc.layout = cfg.layout;
    sc.spec = cfg.spec;
    sc.theta = s.theta;
    sc.design = s.design;
    sc.truth = s.truth;
    sc.seed = cfg.seed;
    if (s.calibrate) sc.latent_alpha = calibrate_latent_alpha(sc);
    return sc;
}

/// dataset.csv for one simulated trial; with replications > 0 also
/// variance_check.csv comparing empirical and predicted variances.
inline void run_simulate(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
    const SimConfig sc = simulation_config(cfg);
    const TrialDataset data = simulate_trial(sc);
    {
        auto out = detail::open_output(out_dir, "dataset.csv");
        write_dataset(out, data);
    }
    Json extra = {{"subjects", data.subjects.size()}};
    if (sc.latent_alpha) extra["latent_alpha"] = *sc.latent_alpha;
    const auto& s = *cfg.simulation;
    if (s.replications > 0) {
        const CorrelationStructure ws = s.working.value_or(s.truth.structure);
        const CorrelationKind working{ws, limiting_alpha(s.truth, ws, cfg.layout.periods)};
        const VarianceCheck vc = empirical_variance_check(sc, working, s.replications);
        auto out = detail::open_output(out_dir, "variance_check.csv");
        out << "parameter,empirical_var,model_var,sandwich_var,ratio_model,ratio_sandwich\n";
        const auto names = parameter_names(cfg.layout, cfg.spec);
        for (std::size_t k = 0; k < names.size(); ++k) {
            const auto kk = static_cast<Eigen::Index>(k);
            out << names[k] << ',';
            if (vc.empirical.size() > 0)
                out << csv::fmt(vc.empirical(kk, kk)) << ',';
            else
                out << "NA,";
            out << csv::fmt(vc.model_based(kk, kk)) << ',' << csv::fmt(vc.sandwich(kk, kk)) << ',';
            if (vc.ratio_model.size() > 0)
                out << csv::fmt(vc.ratio_model(kk)) << ',' << csv::fmt(vc.ratio_sandwich(kk)) << '\n';
            else
                out << "NA,NA\n";
        }
        extra["replications"] = vc.replications;
        extra["converged_fits"] = vc.converged;
        extra["insufficient"] = vc.insufficient;
        extra["working"] = to_string(working.structure);
    }
    detail::write_meta(out_dir, "simulate", cfg, extra);
}

/// catalog.csv: every design of the named catalogs for the layout.
inline void run_catalog(const ExperimentConfig& cfg, const std::vector<std::string>& names,
                        const std::filesystem::path& out_dir) {
    auto out = detail::open_output(out_dir, "catalog.csv");
    out << "catalog,index,williams,sequences\n";
    Json counts = Json::object();
    for (const auto& name : names) {
        const auto entries = catalog(name, cfg.layout);
        counts[name] = entries.size();
        for (const auto& d : entries) {
            out << d.name << ',' << d.index << ',' << (d.williams ? 1 : 0) << ',';
            for (std::size_t i = 0; i < d.sequences.size(); ++i) out << (i ? " " : "") << d.sequences[i].str();
            out << '\n';
        }
    }
    detail::write_meta(out_dir, "catalog", cfg, {{"counts", counts}});
}

}  // namespace xover
