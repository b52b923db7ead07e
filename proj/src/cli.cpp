#include "sdforge/cli.hpp"

#include <cstdlib>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "sdforge/adaptive.hpp"
#include "sdforge/cart.hpp"
#include "sdforge/error.hpp"
#include "sdforge/metrics.hpp"
#include "sdforge/rng.hpp"
#include "sdforge/sampling.hpp"
#include "sdforge/serialize.hpp"
#include "sdforge/service.hpp"
#include "sdforge/simulator.hpp"

namespace sdforge {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Common {
    std::string experiment;
    std::string out = ".";
    std::optional<std::uint64_t> seed;
    std::vector<std::string> overrides;
};

struct PrimFlags {
    PrimConfig cfg;
    std::size_t max_boxes = 3;
    double stop_coverage = 0.85;
};

void add_common(CLI::App& cmd, Common& c, bool needs_out = true) {
    cmd.add_option("--experiment,-e", c.experiment, "experiment file")->required();
    if (needs_out) cmd.add_option("--out,-o", c.out, "output directory")->capture_default_str();
    cmd.add_option("--seed", c.seed, "root seed (overrides SDFORGE_SEED and the config)");
    cmd.add_option("--set", c.overrides, "dotted key=value override of the experiment config");
}

void add_prim(CLI::App& cmd, PrimFlags& p) {
    cmd.add_option("--patience", p.cfg.patience)->capture_default_str();
    cmd.add_option("--support-threshold", p.cfg.support_threshold)->capture_default_str();
    cmd.add_option("--min-mean-gain", p.cfg.min_mean_gain)->capture_default_str();
    cmd.add_option("--coverage-floor", p.cfg.coverage_floor)->capture_default_str();
    cmd.add_option("--max-boxes", p.max_boxes, "covering rounds")->capture_default_str();
    cmd.add_option("--stop-coverage", p.stop_coverage)->capture_default_str();
}

std::optional<std::uint64_t> env_seed() {
    const char* v = std::getenv("SDFORGE_SEED");
    if (!v || !*v) return std::nullopt;
    try {
        std::size_t used = 0;
        const auto s = std::stoull(v, &used);
        if (used == std::string(v).size()) return s;
    } catch (const std::exception&) {
    }
    throw ValidationError(std::string("SDFORGE_SEED is not an unsigned integer: ") + v);
}

fs::path resolve_experiment(const std::string& name) {
    const fs::path given(name);
    if (fs::exists(given)) return given;
    if (!given.has_parent_path()) {
        if (const char* dir = std::getenv("SDFORGE_EXPERIMENTS_DIR")) {
            for (const fs::path& candidate : {fs::path(dir) / name, fs::path(dir) / (name + ".experiment")})
                if (fs::exists(candidate)) return candidate;
        }
        if (fs::exists(given.string() + ".experiment")) return given.string() + ".experiment";
    }
    throw ValidationError("experiment file not found: " + name);
}

// Records everything needed to re-run the command plus digests of what it wrote.
class Artifacts {
public:
    Artifacts(std::string command, const Common& c)
        : dir_(c.out), manifest_{{"schema_version", kSchemaVersion}, {"command", command}} {
        const fs::path path = resolve_experiment(c.experiment);
        const std::string text = read_file(path);
        manifest_["inputs"] = json::array({{{"role", "experiment"},
                                            {"path", c.experiment},
                                            {"sha256", sha256_hex(text)}}});
        manifest_["overrides"] = c.overrides;
        std::vector<std::string> overrides = c.overrides;
        const auto seed = c.seed ? c.seed : env_seed();
        if (seed) overrides.push_back("seed=" + std::to_string(*seed));
        experiment = load_experiment(path, overrides);
        validate(experiment);
        manifest_["experiment"] = to_json(experiment);
        manifest_["seeds"] = {{"root", experiment.seed}};
        fs::create_directories(dir_);
    }

    void add_input(const std::string& role, const fs::path& path) {
        manifest_["inputs"].push_back({{"role", role}, {"path", path.string()}, {"sha256", sha256_hex(read_file(path))}});
    }
    void param(const std::string& key, json value) { manifest_["params"][key] = std::move(value); }
    void seed(const std::string& purpose, std::uint64_t value) { manifest_["seeds"][purpose] = value; }

    void write(const std::string& name, const std::string& content) {
        write_file(dir_ / name, content);
        outputs_[name] = sha256_hex(content);
    }

    void finish() {
        json outs = json::object();
        for (const auto& [name, digest] : outputs_) outs[name] = {{"sha256", digest}};
        manifest_["outputs"] = outs;
        write_file(dir_ / "manifest.json", dump(manifest_));
    }

    ExperimentConfig experiment;

private:
    fs::path dir_;
    json manifest_;
    std::map<std::string, std::string> outputs_;
};

json prim_json(const PrimConfig& p) {
    return {{"patience", p.patience},
            {"support_threshold", p.support_threshold},
            {"min_mean_gain", p.min_mean_gain},
            {"coverage_floor", p.coverage_floor}};
}

std::size_t scenario_count(const std::optional<std::size_t>& n, const ExperimentConfig& exp) {
    const std::size_t v = n.value_or(exp.n_scenarios);
    if (v == 0) throw ValidationError("--n must be positive");
    return v;
}

LabeledSamples sample_and_simulate(Artifacts& a, std::size_t n) {
    const auto& exp = a.experiment;
    const auto seed = derive_seed(exp.seed, "scenarios");
    a.seed("scenarios", seed);
    a.param("n", n);
    const SampleMatrix samples = lhs(exp.space, n, seed);
    a.write("samples.csv", samples_csv(samples));
    const auto outcomes = simulate_batch(exp, samples.points);
    a.write("outcomes.csv", outcomes_csv(exp.space, samples.points, outcomes, exp.rule));
    return simulate(exp, samples.points);
}

json cover_json(const std::vector<CoverRound>& rounds, const UncertaintySpace& space) {
    json out = json::array();
    for (const auto& r : rounds) out.push_back(to_json(r, space));
    return {{"schema_version", kSchemaVersion}, {"boxes", out}};
}

int cmd_sample(const Common& c, std::optional<std::size_t> n, std::ostream& out) {
    Artifacts a("sample", c);
    const auto count = scenario_count(n, a.experiment);
    const auto seed = derive_seed(a.experiment.seed, "scenarios");
    a.seed("scenarios", seed);
    a.param("n", count);
    a.write("samples.csv", samples_csv(lhs(a.experiment.space, count, seed)));
    const auto diag = relative_density(count, a.experiment.space.k());
    a.param("J", diag.J);
    a.finish();
    out << "wrote " << count << " samples (J = " << format_double(diag.J) << ")\n";
    return 0;
}

int cmd_simulate(const Common& c, std::optional<std::size_t> n, const std::string& samples_path,
                 std::ostream& out) {
    Artifacts a("simulate", c);
    const auto& exp = a.experiment;
    Eigen::MatrixXd points;
    if (!samples_path.empty()) {
        a.add_input("samples", samples_path);
        points = samples_from_csv(read_file(samples_path), exp.space).points;
    } else {
        const auto count = scenario_count(n, exp);
        const auto seed = derive_seed(exp.seed, "scenarios");
        a.seed("scenarios", seed);
        a.param("n", count);
        points = lhs(exp.space, count, seed).points;
    }
    const auto outcomes = simulate_batch(exp, points);
    a.write("outcomes.csv", outcomes_csv(exp.space, points, outcomes, exp.rule));
    a.finish();
    std::size_t vulnerable = 0;
    for (const auto& o : outcomes) vulnerable += exp.rule.is_vulnerable(o.delta);
    out << "simulated " << outcomes.size() << " scenarios, " << vulnerable << " vulnerable\n";
    return 0;
}

int cmd_discover(const Common& c, std::optional<std::size_t> n, const PrimFlags& p, std::ostream& out) {
    p.cfg.validate();
    if (p.max_boxes == 0) throw ValidationError("--max-boxes must be positive");
    Artifacts a("discover", c);
    const auto& exp = a.experiment;
    a.param("prim", prim_json(p.cfg));
    a.param("max_boxes", p.max_boxes);
    a.param("stop_coverage", p.stop_coverage);
    const LabeledSamples data = sample_and_simulate(a, scenario_count(n, exp));
    const auto rounds = cover(data, exp.space, p.cfg, p.max_boxes, p.stop_coverage);
    PeelingTrajectory first;
    if (rounds.empty()) {
        first = peel(data, exp.space, p.cfg);
        first.selected_index = select_step(first, SelectionCriterion::automatic(), p.cfg.coverage_floor);
    } else {
        first = rounds.front().trajectory;
    }
    json traj = to_json(first, exp.space);
    traj["schema_version"] = kSchemaVersion;
    a.write("trajectory.json", dump(traj));
    a.write("boxes.json", dump(cover_json(rounds, exp.space)));
    a.finish();
    out << data.vulnerable_count() << " of " << data.size() << " scenarios vulnerable; " << rounds.size()
        << " box(es)";
    if (!rounds.empty()) out << ", cumulative coverage " << format_double(rounds.back().cumulative_coverage);
    out << "\n";
    return 0;
}

int cmd_cart(const Common& c, std::optional<std::size_t> n, const cart::CartConfig& cfg, std::ostream& out) {
    cfg.validate();
    Artifacts a("cart", c);
    const auto& exp = a.experiment;
    a.param("cart", {{"min_split", cfg.min_split}, {"min_leaf", cfg.min_leaf}, {"max_depth", cfg.max_depth}});
    const LabeledSamples data = sample_and_simulate(a, scenario_count(n, exp));
    const auto full = cart::grow(data, cfg);
    const auto pruned = cart::prune(full, cfg);
    const auto leaves = cart::leaves_to_boxes(pruned, exp.space, data);
    a.write("tree.json", dump({{"schema_version", kSchemaVersion},
                               {"unpruned", to_json(full, exp.space)},
                               {"pruned", to_json(pruned, exp.space)},
                               {"leaf_count", cart::leaf_count(full)},
                               {"pruned_leaf_count", cart::leaf_count(pruned)},
                               {"misclassified", cart::misclassified(pruned, data)}}));
    json boxes = json::array();
    for (const auto& leaf : leaves) boxes.push_back(to_json(leaf, exp.space));
    a.write("boxes.json", dump({{"schema_version", kSchemaVersion}, {"boxes", boxes}}));
    a.finish();
    out << cart::leaf_count(pruned) << " leaves after pruning, " << leaves.size() << " vulnerable box(es)\n";
    return 0;
}

int cmd_sweep(const Common& c, std::optional<std::size_t> n, const std::string& grid, std::size_t max_count,
              std::ostream& out, std::ostream& err) {
    Artifacts a("sweep", c);
    const auto& exp = a.experiment;
    const auto deltas = parse_delta_grid(grid);
    const auto count = scenario_count(n, exp);
    const auto seed = derive_seed(exp.seed, "scenarios");
    a.seed("scenarios", seed);
    a.param("n", count);
    a.param("deltas", grid);
    a.param("max_count", max_count);
    const auto result = policy_sweep(exp, deltas, count, seed, max_count);
    std::ostringstream csv;
    csv << "delta,vulnerable_count\n";
    for (std::size_t i = 0; i < result.deltas.size(); ++i)
        csv << format_double(result.deltas[i]) << ',' << result.vulnerable_counts[i] << '\n';
    a.write("sweep.csv", csv.str());
    a.write("report.json", dump({{"schema_version", kSchemaVersion},
                                 {"experiment", exp.name},
                                 {"n_scenarios", result.n_scenarios},
                                 {"max_count", max_count},
                                 {"zero_lever_warning", result.zero_lever_warning},
                                 {"threshold", result.threshold ? json(*result.threshold) : json(nullptr)}}));
    a.finish();
    if (result.zero_lever_warning) err << "warning: the sweep includes delta = 0, where every scenario is vulnerable\n";
    out << "threshold: " << (result.threshold ? format_double(*result.threshold) : std::string("none")) << "\n";
    return 0;
}

struct AdaptiveFlags {
    AdaptiveConfig cfg;
    std::string mode = "interior_or_border";
    std::size_t truth_n = 200;
};

LabeledSamples truth_set(const ExperimentConfig& exp, std::size_t n, std::uint64_t seed) {
    return simulate(exp, lhs(exp.space, n, derive_seed(seed, "truth")).points);
}

int cmd_adaptive(const Common& c, AdaptiveFlags f, std::ostream& out) {
    f.cfg.mode = sampling_mode_from_string(f.mode);
    Artifacts a("adaptive", c);
    const auto& exp = a.experiment;
    f.cfg.seed = exp.seed;
    f.cfg.validate();
    a.param("adaptive", to_json(f.cfg));
    a.param("truth_n", f.truth_n);
    for (const char* purpose : {"init", "pool"}) a.seed(purpose, derive_seed(exp.seed, purpose));
    const AdaptiveResult result = run_adaptive(f.cfg, exp);
    std::string history;
    for (const auto& rec : result.state.history) history += to_json(rec, exp.space).dump() + "\n";
    a.write("history.jsonl", history);
    a.write("boxes.json", dump(cover_json(result.final_boxes, exp.space)));
    a.write("model.json", dump(gp::to_json(result.final_model)));
    a.write("dataset.csv", labeled_csv(exp.space, result.state.dataset));
    a.write("state.json", to_json(result.state, exp.space).dump() + "\n");
    if (f.truth_n > 0) {
        a.seed("truth", derive_seed(exp.seed, "truth"));
        const auto rep = evaluate_against_truth(result.state, result.final_model, truth_set(exp, f.truth_n, exp.seed));
        a.write("diagnostics.json", dump(to_json(rep)));
        out << "accuracy " << format_double(rep.accuracy) << ", correlation " << format_double(rep.correlation)
            << ", ";
    }
    a.finish();
    out << result.state.simulator_calls << " simulator calls, " << result.final_boxes.size() << " final box(es)\n";
    return 0;
}

int cmd_evaluate(const std::string& run_dir, std::size_t truth_n, std::ostream& out) {
    const fs::path dir(run_dir);
    if (!fs::exists(dir / "manifest.json")) throw ValidationError("no manifest.json in " + run_dir);
    json manifest;
    try {
        manifest = json::parse(read_file(dir / "manifest.json"));
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("malformed manifest: ") + e.what());
    }
    if (manifest.value("command", "") != "adaptive")
        throw ValidationError("evaluate needs the output directory of an adaptive run");
    const ExperimentConfig exp = experiment_from_json(manifest.at("experiment"));
    const auto state = adaptive_state_from_json(json::parse(read_file(dir / "state.json")), exp.space);
    const auto model = gp::model_from_json(json::parse(read_file(dir / "model.json")));
    if (truth_n == 0) truth_n = manifest.at("params").value("truth_n", std::size_t{200});
    if (truth_n == 0) throw ValidationError("--truth-n must be positive");
    const auto rep = evaluate_against_truth(state, model, truth_set(exp, truth_n, exp.seed));
    write_file(dir / "diagnostics.json", dump(to_json(rep)));
    out << "accuracy " << format_double(rep.accuracy) << ", correlation " << format_double(rep.correlation)
        << " on " << rep.n << " truth points\n";
    return 0;
}

struct ServeFlags {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string data_dir = "sdforge-data";
    std::string experiments_dir = "data/experiments";
    std::string ui_dir;
};

int cmd_serve(const ServeFlags& f, std::ostream& out) {
    RunService service({f.data_dir, f.experiments_dir});
    std::optional<fs::path> ui;
    if (!f.ui_dir.empty()) ui = fs::path(f.ui_dir);
    HttpServer server(service, ui);
    const int port = server.bind(f.host, f.port);
    out << "listening on http://" << f.host << ":" << port << std::endl;
    server.listen();
    return 0;
}

} // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Scenario discovery over XLRM experiments", "sdforge"};
    app.require_subcommand(1);

    Common common;
    std::optional<std::size_t> n;
    PrimFlags prim;
    cart::CartConfig cart_cfg;
    std::string deltas = "0.5:30:0.5";
    std::size_t max_count = 2;
    std::string samples_path;
    AdaptiveFlags adaptive;
    std::string run_dir;
    std::size_t truth_n = 0;
    ServeFlags serve;

    auto* sample = app.add_subcommand("sample", "draw a Latin hypercube sample");
    add_common(*sample, common);
    sample->add_option("--n", n, "number of scenarios");

    auto* simulate_cmd = app.add_subcommand("simulate", "evaluate the simulator over samples");
    add_common(*simulate_cmd, common);
    simulate_cmd->add_option("--n", n, "number of scenarios when no sample file is given");
    simulate_cmd->add_option("--samples", samples_path, "samples.csv to evaluate");

    auto* discover = app.add_subcommand("discover", "PRIM peeling and covering");
    add_common(*discover, common);
    discover->add_option("--n", n, "number of scenarios");
    add_prim(*discover, prim);

    auto* cart_cmd = app.add_subcommand("cart", "classification tree boxes");
    add_common(*cart_cmd, common);
    cart_cmd->add_option("--n", n, "number of scenarios");
    cart_cmd->add_option("--min-split", cart_cfg.min_split)->capture_default_str();
    cart_cmd->add_option("--min-leaf", cart_cfg.min_leaf)->capture_default_str();
    cart_cmd->add_option("--max-depth", cart_cfg.max_depth)->capture_default_str();

    auto* sweep = app.add_subcommand("sweep", "vulnerable counts over lever values");
    add_common(*sweep, common);
    sweep->add_option("--n", n, "number of scenarios");
    sweep->add_option("--deltas", deltas, "start:stop:step")->capture_default_str();
    sweep->add_option("--max-count", max_count, "threshold tolerance in scenarios")->capture_default_str();

    auto* adaptive_cmd = app.add_subcommand("adaptive", "metamodel-guided adaptive sampling");
    add_common(*adaptive_cmd, common);
    auto& ac = adaptive.cfg;
    adaptive_cmd->add_option("--n-init", ac.n_init)->capture_default_str();
    adaptive_cmd->add_option("--pool", ac.pool_size)->capture_default_str();
    adaptive_cmd->add_option("--n-iter", ac.n_iter)->capture_default_str();
    adaptive_cmd->add_option("--batch", ac.batch)->capture_default_str();
    adaptive_cmd->add_option("--mode", adaptive.mode)
        ->check(CLI::IsMember({"interior_or_border", "border_only"}))
        ->capture_default_str();
    adaptive_cmd->add_option("--interior-prob", ac.interior_prob)->capture_default_str();
    adaptive_cmd->add_option("--gp-budget", ac.gp_budget)->capture_default_str();
    adaptive_cmd->add_option("--gp-starts", ac.gp_starts)->capture_default_str();
    adaptive_cmd->add_option("--final-max-boxes", ac.final_max_boxes)->capture_default_str();
    adaptive_cmd->add_option("--final-stop-coverage", ac.final_stop_coverage)->capture_default_str();
    adaptive_cmd->add_option("--patience", ac.prim_cfg.patience)->capture_default_str();
    adaptive_cmd->add_option("--support-threshold", ac.prim_cfg.support_threshold)->capture_default_str();
    adaptive_cmd->add_option("--coverage-floor", ac.prim_cfg.coverage_floor)->capture_default_str();
    adaptive_cmd->add_option("--truth-n", adaptive.truth_n, "truth set size for diagnostics.json; 0 skips it")
        ->capture_default_str();

    auto* evaluate = app.add_subcommand("evaluate", "diagnostics of an adaptive run directory");
    evaluate->add_option("--run", run_dir, "adaptive output directory")->required();
    evaluate->add_option("--truth-n", truth_n, "truth set size (default: as recorded)");

    auto* serve_cmd = app.add_subcommand("serve", "HTTP run service");
    serve_cmd->add_option("--host", serve.host)->capture_default_str();
    serve_cmd->add_option("--port", serve.port)->capture_default_str();
    serve_cmd->add_option("--data-dir", serve.data_dir)->capture_default_str();
    serve_cmd->add_option("--experiments-dir", serve.experiments_dir)->capture_default_str();
    serve_cmd->add_option("--ui-dir", serve.ui_dir, "static UI bundle served at /");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        err << e.what() << "\n\n" << app.help();
        return 1;
    }

    try {
        if (sample->parsed()) return cmd_sample(common, n, out);
        if (simulate_cmd->parsed()) return cmd_simulate(common, n, samples_path, out);
        if (discover->parsed()) return cmd_discover(common, n, prim, out);
        if (cart_cmd->parsed()) return cmd_cart(common, n, cart_cfg, out);
        if (sweep->parsed()) return cmd_sweep(common, n, deltas, max_count, out, err);
        if (adaptive_cmd->parsed()) return cmd_adaptive(common, adaptive, out);
        if (evaluate->parsed()) return cmd_evaluate(run_dir, truth_n, out);
        if (serve_cmd->parsed()) return cmd_serve(serve, out);
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const ParseError& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "runtime error: " << e.what() << "\n";
        return 2;
    }
    err << app.help();
    return 1;
}

} // namespace sdforge
