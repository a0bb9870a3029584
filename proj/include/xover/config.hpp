#pragma once

// Experiment configuration: a JSON document validated against a fixed
// schema (unknown keys are rejected) before anything is computed. The field
// reference is docs/config.md.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "xover/catalog.hpp"
#include "xover/optimizer.hpp"
#include "xover/priors.hpp"

namespace xover {

using Json = nlohmann::json;

enum class PriorSource { inline_table, csv, fit };

struct PriorConfig {
    PriorSource source = PriorSource::inline_table;
    std::vector<EstimateRow> table;  // inline
    std::string path;                // csv table or dataset to fit
    CorrelationStructure fit_correlation = CorrelationStructure::compound_symmetric;
    PriorKind kind;
    std::size_t points = 100;
};

/// A design compared against the optimum: either a catalog entry or an
/// explicit list (weights default to uniform).
struct ComparisonConfig {
    std::string name;
    std::string catalog;  // empty for explicit designs
    std::size_t index = 0;
    ApproxDesign design;
};

struct SimulationConfig {
    ParamVector theta;
    ApproxDesign design;
    CorrelationKind truth = CorrelationKind::independent();
    bool calibrate = false;
    std::optional<CorrelationStructure> working;  // default: truth structure
    std::size_t replications = 0;
};

struct ExperimentConfig {
    CrossoverLayout layout;
    ModelSpec spec;
    std::vector<TreatmentSequence> candidates;
    std::optional<PriorConfig> prior;
    std::vector<CorrelationStructure> structures{CorrelationStructure::independent};
    std::vector<double> alphas{0.0};
    OptimizerConfig optimizer;
    std::vector<ComparisonConfig> comparisons;
    std::optional<SimulationConfig> simulation;
    CorrelationStructure fit_correlation = CorrelationStructure::compound_symmetric;
    std::uint64_t seed = 0;
    std::size_t workers = 1;
    std::string output = "out";
    std::filesystem::path base_dir;  // directory of the config file
};

namespace detail {

inline void check_keys(const Json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) throw ValidationError(where + ": expected an object");
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& item : obj.items())
        if (!ok.count(item.key())) throw ValidationError(where + ": unknown key \"" + item.key() + "\"");
}

template <class T>
T get_as(const Json& obj, const char* key, const std::string& where) {
    if (!obj.contains(key)) throw ValidationError(where + ": missing key \"" + key + "\"");
    try {
        return obj.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ValidationError(where + "." + key + ": wrong type");
    }
}

template <class T>
T get_or(const Json& obj, const char* key, const std::string& where, T fallback) {
    return obj.contains(key) ? get_as<T>(obj, key, where) : fallback;
}

inline std::size_t get_count(const Json& obj, const char* key, const std::string& where, std::size_t fallback) {
    if (!obj.contains(key)) return fallback;
    const Json& v = obj.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0)
        throw ValidationError(where + "." + key + ": expected a non-negative integer");
    return v.get<std::size_t>();
}

inline Vector to_vector(const std::vector<double>& v) {
    Vector out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<Eigen::Index>(i)) = v[i];
    return out;
}

inline ApproxDesign parse_design(const Json& j, const std::string& where, const CrossoverLayout& layout) {
    ApproxDesign d;
    d.sequences = parse_sequences(get_as<std::vector<std::string>>(j, "sequences", where));
    if (j.contains("weights"))
        d.weights = get_as<std::vector<double>>(j, "weights", where);
    else
        d = ApproxDesign::uniform(d.sequences);
    try {
        d.validate(layout);
    } catch (const ValidationError& e) {
        throw ValidationError(where + ": " + e.what());
    }
    return d;
}

inline CorrelationKind parse_kind(const Json& j, const std::string& where, std::size_t periods) {
    check_keys(j, where, {"kind", "alpha"});
    CorrelationKind k{parse_structure(get_as<std::string>(j, "kind", where)), get_or<double>(j, "alpha", where, 0.0)};
    try {
        k.validate(periods);
    } catch (const ValidationError& e) {
        throw ValidationError(where + ": " + e.what());
    }
    return k;
}

}  // namespace detail

inline ExperimentConfig parse_config(const Json& root, const std::filesystem::path& base_dir = {}) {
    using detail::check_keys;
    using detail::get_as;
    using detail::get_or;
    check_keys(root, "config", {"layout", "model", "candidates", "prior", "correlation", "optimizer", "comparisons",
                                "simulation", "fit", "seed", "workers", "output"});
    ExperimentConfig cfg;
    cfg.base_dir = base_dir;

    const Json& lj = root.contains("layout") ? root.at("layout") : throw ValidationError("config: missing \"layout\"");
    check_keys(lj, "layout", {"treatments", "periods", "subjects"});
    cfg.layout.treatments = detail::get_count(lj, "treatments", "layout", 0);
    cfg.layout.periods = detail::get_count(lj, "periods", "layout", 0);
    cfg.layout.subjects = detail::get_count(lj, "subjects", "layout", 1);
    cfg.layout.validate();

    const Json& mj = root.contains("model") ? root.at("model") : throw ValidationError("config: missing \"model\"");
    check_keys(mj, "model", {"family", "carryover", "shape"});
    cfg.spec.family = parse_family(get_as<std::string>(mj, "family", "model"), get_or<double>(mj, "shape", "model", 1.0));
    cfg.spec.carryover = get_or<bool>(mj, "carryover", "model", false);

    if (!root.contains("candidates") || (root.at("candidates").is_string() && root.at("candidates") == "all")) {
        cfg.candidates = enumerate_sequences(cfg.layout);
    } else if (root.at("candidates").is_array()) {
        const auto texts = get_as<std::vector<std::string>>(root, "candidates", "config");
        if (texts.empty()) throw ValidationError("candidates: list is empty");
        cfg.candidates = enumerate_sequences(cfg.layout, parse_sequences(texts));
    } else {
        throw ValidationError("candidates: expected \"all\" or a list of sequences");
    }

    if (root.contains("prior")) {
        const Json& pj = root.at("prior");
        check_keys(pj, "prior", {"source", "table", "path", "fit_correlation", "kind", "variance", "points"});
        PriorConfig p;
        const auto source = get_or<std::string>(pj, "source", "prior", "inline");
        if (source == "inline") {
            p.source = PriorSource::inline_table;
            const Json& tj = pj.contains("table") ? pj.at("table") : throw ValidationError("prior: missing \"table\"");
            if (!tj.is_array()) throw ValidationError("prior.table: expected a list");
            for (std::size_t i = 0; i < tj.size(); ++i) {
                const std::string w = "prior.table[" + std::to_string(i) + "]";
                check_keys(tj[i], w, {"parameter", "estimate", "ci_low", "ci_high"});
                p.table.push_back({get_as<std::string>(tj[i], "parameter", w), get_as<double>(tj[i], "estimate", w),
                                   get_as<double>(tj[i], "ci_low", w), get_as<double>(tj[i], "ci_high", w)});
            }
        } else if (source == "csv" || source == "fit") {
            p.source = source == "csv" ? PriorSource::csv : PriorSource::fit;
            const std::filesystem::path rel = get_as<std::string>(pj, "path", "prior");
            p.path = (rel.is_absolute() || base_dir.empty() ? rel : base_dir / rel).string();
            if (pj.contains("fit_correlation"))
                p.fit_correlation = parse_structure(get_as<std::string>(pj, "fit_correlation", "prior"));
        } else {
            throw ValidationError("prior.source: expected inline, csv or fit");
        }
        const auto kind = get_or<std::string>(pj, "kind", "prior", "uniform");
        if (kind == "uniform")
            p.kind = PriorKind::uniform();
        else if (kind == "normal")
            p.kind = PriorKind::normal(get_or<double>(pj, "variance", "prior", 0.25));
        else
            throw ValidationError("prior.kind: expected uniform or normal");
        if (!(p.kind.variance > 0.0)) throw ValidationError("prior.variance must be positive");
        p.points = detail::get_count(pj, "points", "prior", 100);
        if (p.points < 1) throw ValidationError("prior.points must be >= 1");
        if (p.source == PriorSource::inline_table && p.table.size() != parameter_count(cfg.layout, cfg.spec))
            throw ValidationError("prior.table has " + std::to_string(p.table.size()) + " rows, model has " +
                                  std::to_string(parameter_count(cfg.layout, cfg.spec)) + " parameters");
        cfg.prior = std::move(p);
    }

    if (root.contains("correlation")) {
        const Json& cj = root.at("correlation");
        check_keys(cj, "correlation", {"kinds", "alphas"});
        cfg.structures.clear();
        for (const auto& s : get_as<std::vector<std::string>>(cj, "kinds", "correlation"))
            cfg.structures.push_back(parse_structure(s));
        cfg.alphas = get_or<std::vector<double>>(cj, "alphas", "correlation", {0.0});
        if (cfg.structures.empty() || cfg.alphas.empty())
            throw ValidationError("correlation: kinds and alphas must be non-empty");
    }

    if (root.contains("optimizer")) {
        const Json& oj = root.at("optimizer");
        check_keys(oj, "optimizer", {"max_iterations", "objective_tolerance", "gap_tolerance", "prune_threshold",
                                     "restarts"});
        auto& o = cfg.optimizer;
        o.max_iterations = detail::get_count(oj, "max_iterations", "optimizer", o.max_iterations);
        o.objective_tolerance = get_or<double>(oj, "objective_tolerance", "optimizer", o.objective_tolerance);
        o.gap_tolerance = get_or<double>(oj, "gap_tolerance", "optimizer", o.gap_tolerance);
        o.weight_prune_threshold = get_or<double>(oj, "prune_threshold", "optimizer", o.weight_prune_threshold);
        o.restarts = detail::get_count(oj, "restarts", "optimizer", o.restarts);
        o.validate();
    }

    if (root.contains("comparisons")) {
        const Json& cj = root.at("comparisons");
        if (!cj.is_array()) throw ValidationError("comparisons: expected a list");
        std::set<std::string> names;
        for (std::size_t i = 0; i < cj.size(); ++i) {
            const std::string w = "comparisons[" + std::to_string(i) + "]";
            check_keys(cj[i], w, {"name", "catalog", "index", "sequences", "weights"});
            ComparisonConfig c;
            c.name = get_as<std::string>(cj[i], "name", w);
            if (c.name.empty() || c.name.find(',') != std::string::npos)
                throw ValidationError(w + ".name must be non-empty and contain no commas");
            if (!names.insert(c.name).second) throw ValidationError(w + ": duplicate name " + c.name);
            if (cj[i].contains("catalog")) {
                if (cj[i].contains("sequences")) throw ValidationError(w + ": give either catalog or sequences");
                c.catalog = get_as<std::string>(cj[i], "catalog", w);
                c.index = detail::get_count(cj[i], "index", w, 0);
                const auto entries = catalog(c.catalog, cfg.layout);
                if (c.index >= entries.size())
                    throw ValidationError(w + ": catalog " + c.catalog + " has " + std::to_string(entries.size()) +
                                          " designs");
                c.design = entries[c.index].design();
            } else {
                c.design = detail::parse_design(cj[i], w, cfg.layout);
            }
            cfg.comparisons.push_back(std::move(c));
        }
    }

    if (root.contains("simulation")) {
        const Json& sj = root.at("simulation");
        check_keys(sj, "simulation", {"theta", "design", "truth", "calibrate", "working", "replications"});
        SimulationConfig s;
        s.theta = detail::to_vector(get_as<std::vector<double>>(sj, "theta", "simulation"));
        if (static_cast<std::size_t>(s.theta.size()) != parameter_count(cfg.layout, cfg.spec))
            throw ValidationError("simulation.theta has length " + std::to_string(s.theta.size()) + ", model has " +
                                  std::to_string(parameter_count(cfg.layout, cfg.spec)) + " parameters");
        if (!sj.contains("design")) throw ValidationError("simulation: missing \"design\"");
        check_keys(sj.at("design"), "simulation.design", {"sequences", "weights"});
        s.design = detail::parse_design(sj.at("design"), "simulation.design", cfg.layout);
        if (sj.contains("truth")) s.truth = detail::parse_kind(sj.at("truth"), "simulation.truth", cfg.layout.periods);
        s.calibrate = get_or<bool>(sj, "calibrate", "simulation", false);
        if (sj.contains("working")) s.working = parse_structure(get_as<std::string>(sj, "working", "simulation"));
        s.replications = detail::get_count(sj, "replications", "simulation", 0);
        cfg.simulation = std::move(s);
    }

    if (root.contains("fit")) {
        const Json& fj = root.at("fit");
        check_keys(fj, "fit", {"correlation"});
        cfg.fit_correlation = parse_structure(get_or<std::string>(fj, "correlation", "fit", "cs"));
    }

    if (root.contains("seed")) {
        const Json& v = root.at("seed");
        if (!v.is_number_unsigned()) throw ValidationError("seed: expected a non-negative integer");
        cfg.seed = v.get<std::uint64_t>();
    }
    cfg.optimizer.seed = cfg.seed;
    cfg.workers = detail::get_count(root, "workers", "config", 1);
    if (cfg.workers < 1) throw ValidationError("workers must be >= 1");
    cfg.output = get_or<std::string>(root, "output", "config", "out");
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config " + path);
    Json root;
    try {
        root = Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(path + ": " + e.what());
    }
    return parse_config(root, std::filesystem::path(path).parent_path());
}

}  // namespace xover
