#include "sdforge/service.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <regex>

#include "sdforge/adaptive.hpp"
#include "sdforge/cart.hpp"
#include "sdforge/error.hpp"
#include "sdforge/rng.hpp"
#include "sdforge/sampling.hpp"
#include "sdforge/serialize.hpp"
#include "sdforge/simulator.hpp"

// After Eigen: resolv.h defines _res, which Eigen uses as a parameter name.
#include <httplib.h>

namespace sdforge {

using nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(RunKind k) {
    switch (k) {
    case RunKind::Prim: return "prim";
    case RunKind::Cart: return "cart";
    case RunKind::Adaptive: return "adaptive";
    }
    return "unknown";
}

std::string to_string(RunState s) {
    switch (s) {
    case RunState::Created: return "created";
    case RunState::Sampling: return "sampling";
    case RunState::Ready: return "ready";
    case RunState::AwaitingSelection: return "awaiting_selection";
    case RunState::Stepping: return "stepping";
    case RunState::Done: return "done";
    case RunState::Failed: return "failed";
    }
    return "unknown";
}

RunKind run_kind_from_string(const std::string& s) {
    if (s == "prim") return RunKind::Prim;
    if (s == "cart") return RunKind::Cart;
    if (s == "adaptive") return RunKind::Adaptive;
    throw ValidationError("unknown run kind '" + s + "'");
}

RunState run_state_from_string(const std::string& s) {
    for (auto st : {RunState::Created, RunState::Sampling, RunState::Ready, RunState::AwaitingSelection,
                    RunState::Stepping, RunState::Done, RunState::Failed})
        if (to_string(st) == s) return st;
    throw ParseError("unknown run state '" + s + "'");
}

bool legal_transition(RunState from, RunState to) {
    using S = RunState;
    if (to == S::Failed) return from != S::Failed;
    switch (from) {
    case S::Created: return to == S::Sampling;
    case S::Sampling: return to == S::Ready;
    case S::Ready: return to == S::AwaitingSelection || to == S::Done;
    case S::AwaitingSelection: return to == S::Stepping || to == S::Done;
    case S::Stepping: return to == S::AwaitingSelection || to == S::Stepping || to == S::Done;
    case S::Done:
    case S::Failed: return false;
    }
    return false;
}

namespace {

// Thrown for requests that are well-formed but not allowed in the run's state.
class Conflict : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NotFound : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string now_utc() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

json with_version(json body) {
    body["schema_version"] = kSchemaVersion;
    return body;
}

Response reply(int status, json body) { return {status, with_version(std::move(body))}; }

Response error_reply(int status, const std::string& message) { return reply(status, {{"error", message}}); }

json parse_body(const std::string& body) {
    if (body.empty()) return json::object();
    try {
        json j = json::parse(body);
        if (!j.is_object()) throw ValidationError("request body must be a JSON object");
        return j;
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("malformed JSON body: ") + e.what());
    }
}

template <class T>
T param(const json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ValidationError(std::string("bad value for '") + key + "'");
    }
}

std::size_t positive_count(const json& j, const char* key, std::size_t fallback) {
    if (!j.contains(key)) return fallback;
    const auto& v = j.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 1)
        throw ValidationError(std::string("'") + key + "' must be a positive integer");
    return v.get<std::size_t>();
}

Box box_of_step(const json& trajectory, std::size_t index, const UncertaintySpace& space) {
    return box_from_json(trajectory.at("steps").at(index), space);
}

std::uint64_t scenario_seed(std::uint64_t seed) { return derive_seed(seed, "scenarios"); }

} // namespace

// Immutable view published after every committed mutation; readers never
// take the run's write lock.
struct Snapshot {
    json record;
    json report;
    std::map<std::size_t, json> trajectories;
    UncertaintySpace space;
    LabeledSamples points;
    std::vector<std::string> point_source;
    std::vector<std::uint8_t> in_fitting_data;
    std::vector<Box> highlight;
};

class Run {
public:
    std::mutex write_mutex;

    std::string id;
    RunKind kind = RunKind::Prim;
    RunState state = RunState::Created;
    ExperimentConfig experiment;
    json params = json::object();
    std::string created_at;
    std::string updated_at;
    std::vector<std::string> transitions;
    std::string error;
    fs::path dir;

    // prim and cart
    LabeledSamples data;
    PrimConfig prim_cfg;
    std::size_t max_rounds = 10;
    std::vector<json> rounds;                          // trajectory per covering round
    std::vector<std::optional<std::size_t>> selections; // analyst choice per round
    cart::CartConfig cart_cfg;
    json tree;
    std::size_t leaf_count = 0;
    std::size_t pruned_leaf_count = 0;
    std::vector<cart::LeafBox> leaves;

    // adaptive
    AdaptiveConfig adaptive_cfg;
    std::size_t truth_n = 200;
    std::unique_ptr<AdaptiveRunner> runner;
    LabeledSamples truth;
    std::map<std::size_t, json> views;                 // trajectory per iteration
    std::optional<std::size_t> pending_selection;
    json diagnostics;
    std::vector<CoverRound> final_boxes;

    std::shared_ptr<const Snapshot> snapshot() const {
        std::lock_guard lock(snapshot_mutex_);
        return snapshot_;
    }

    void move_to(RunState next) {
        if (!legal_transition(state, next))
            throw std::logic_error("illegal transition " + to_string(state) + " -> " + to_string(next));
        state = next;
        transitions.push_back(to_string(next));
    }

    void require_state(std::initializer_list<RunState> allowed, const std::string& action) const {
        for (auto s : allowed)
            if (state == s) return;
        throw Conflict(action + " is not allowed in state '" + to_string(state) + "'");
    }

    void require_kind(RunKind k, const std::string& action) const {
        if (kind != k) throw Conflict(action + " is not available for " + to_string(kind) + " runs");
    }

    // ---- lifecycle ----

    void initialize() {
        move_to(RunState::Sampling);
        const std::uint64_t seed = param<std::uint64_t>(params, "seed", experiment.seed);
        params["seed"] = seed;
        switch (kind) {
        case RunKind::Prim: {
            const auto n = positive_count(params, "n", experiment.n_scenarios);
            prim_cfg.patience = param(params, "patience", prim_cfg.patience);
            prim_cfg.support_threshold = param(params, "support_threshold", prim_cfg.support_threshold);
            prim_cfg.min_mean_gain = param(params, "min_mean_gain", prim_cfg.min_mean_gain);
            prim_cfg.coverage_floor = param(params, "coverage_floor", prim_cfg.coverage_floor);
            prim_cfg.validate();
            max_rounds = positive_count(params, "max_rounds", max_rounds);
            params.update({{"n", n},
                           {"patience", prim_cfg.patience},
                           {"support_threshold", prim_cfg.support_threshold},
                           {"min_mean_gain", prim_cfg.min_mean_gain},
                           {"coverage_floor", prim_cfg.coverage_floor},
                           {"max_rounds", max_rounds}});
            data = simulate(experiment, lhs(experiment.space, n, scenario_seed(seed)).points);
            move_to(RunState::Ready);
            rounds.push_back(fit_round(0));
            selections.emplace_back();
            move_to(RunState::AwaitingSelection);
            break;
        }
        case RunKind::Cart: {
            const auto n = positive_count(params, "n", experiment.n_scenarios);
            cart_cfg.min_split = positive_count(params, "min_split", cart_cfg.min_split);
            cart_cfg.min_leaf = positive_count(params, "min_leaf", cart_cfg.min_leaf);
            cart_cfg.max_depth = positive_count(params, "max_depth", cart_cfg.max_depth);
            cart_cfg.validate();
            params.update({{"n", n},
                           {"min_split", cart_cfg.min_split},
                           {"min_leaf", cart_cfg.min_leaf},
                           {"max_depth", cart_cfg.max_depth}});
            data = simulate(experiment, lhs(experiment.space, n, scenario_seed(seed)).points);
            move_to(RunState::Ready);
            grow_tree();
            move_to(RunState::Done);
            break;
        }
        case RunKind::Adaptive: {
            AdaptiveConfig defaults;
            defaults.seed = seed;
            adaptive_cfg = adaptive_config_from_json(params, defaults);
            adaptive_cfg.validate();
            truth_n = positive_count(params, "truth_n", truth_n);
            params = to_json(adaptive_cfg);
            params["truth_n"] = truth_n;
            runner = std::make_unique<AdaptiveRunner>(adaptive_cfg, experiment);
            truth = make_truth();
            move_to(RunState::Ready);
            refresh_view();
            move_to(runner->finished() ? RunState::Done : RunState::AwaitingSelection);
            if (state == RunState::Done) finish_adaptive();
            break;
        }
        }
    }

    LabeledSamples residual_for(std::size_t round) const {
        std::vector<Box> earlier;
        for (std::size_t r = 0; r < round; ++r) earlier.push_back(box_of_step(rounds[r], *selections[r], experiment.space));
        return residual(data, earlier);
    }

    json fit_round(std::size_t round) const {
        const LabeledSamples rest = residual_for(round);
        PeelingTrajectory traj = peel(rest, experiment.space, prim_cfg);
        traj.selected_index = select_step(traj, SelectionCriterion::automatic(), prim_cfg.coverage_floor);
        json j = to_json(traj, experiment.space);
        j["auto_index"] = *traj.selected_index;
        j["selected_index"] = nullptr;
        j["n_fitting_points"] = rest.size();
        j["n_fitting_vulnerable"] = rest.vulnerable_count();
        return j;
    }

    void grow_tree() {
        const auto full = cart::grow(data, cart_cfg);
        const auto pruned = cart::prune(full, cart_cfg);
        leaf_count = cart::leaf_count(full);
        pruned_leaf_count = cart::leaf_count(pruned);
        leaves = cart::leaves_to_boxes(pruned, experiment.space, data);
        tree = {{"unpruned", to_json(full, experiment.space)}, {"pruned", to_json(pruned, experiment.space)}};
    }

    LabeledSamples make_truth() const {
        return simulate(experiment, lhs(experiment.space, truth_n, derive_seed(adaptive_cfg.seed, "truth")).points);
    }

    void refresh_view() {
        const auto view = runner->current_view();
        json j = to_json(view.trajectory, experiment.space);
        j["auto_index"] = *view.trajectory.selected_index;
        j["selected_index"] = nullptr;
        j["n_fitting_points"] = view.labeled_pool.size();
        j["n_fitting_vulnerable"] = view.labeled_pool.vulnerable_count();
        views[runner->state().iteration] = std::move(j);
        diagnostics = to_json(evaluate_against_truth(runner->state(), view.model, truth));
    }

    void finish_adaptive() {
        const auto result = runner->finalize();
        final_boxes = result.final_boxes;
        diagnostics = to_json(evaluate_against_truth(result.state, result.final_model, truth));
    }

    // ---- commands ----

    json select(const json& body) {
        if (kind == RunKind::Cart) throw Conflict("select is not available for cart runs");
        require_state({RunState::AwaitingSelection, RunState::Stepping}, "select");
        if (!body.contains("step_index") || !body.at("step_index").is_number_integer() ||
            body.at("step_index").get<long long>() < 0)
            throw ValidationError("'step_index' must be a non-negative integer");
        const auto index = body.at("step_index").get<std::size_t>();
        json& traj = current_trajectory();
        const std::size_t n_steps = traj.at("steps").size();
        if (index >= n_steps)
            throw ValidationError("step_index " + std::to_string(index) + " out of range (trajectory has " +
                                  std::to_string(n_steps) + " steps)");
        traj["selected_index"] = index;
        if (kind == RunKind::Prim) selections.back() = index;
        else pending_selection = index;
        move_to(RunState::Stepping);
        return {{"state", to_string(state)},
                {"step_index", index},
                {"box", {{"limits", traj.at("steps").at(index).at("limits")}}}};
    }

    json cover_next() {
        require_kind(RunKind::Prim, "cover-next");
        require_state({RunState::Stepping}, "cover-next");
        const std::size_t next = rounds.size();
        const LabeledSamples rest = residual_for(next);
        if (rest.empty() || rest.vulnerable_count() == 0 || next >= max_rounds) {
            move_to(RunState::Done);
        } else {
            rounds.push_back(fit_round(next));
            selections.emplace_back();
            move_to(RunState::AwaitingSelection);
        }
        return {{"state", to_string(state)},
                {"box_round", rounds.size() - 1},
                {"n_residual", rest.size()},
                {"n_residual_vulnerable", rest.vulnerable_count()}};
    }

    json adaptive_step(const json& body) {
        require_kind(RunKind::Adaptive, "adaptive-step");
        require_state({RunState::AwaitingSelection, RunState::Stepping}, "adaptive-step");
        const std::size_t remaining = adaptive_cfg.n_iter - runner->state().iteration;
        const std::size_t n = positive_count(body, "n", 1);
        if (n > remaining)
            throw ValidationError("n = " + std::to_string(n) + " exceeds the " + std::to_string(remaining) +
                                  " remaining iterations");
        if (state == RunState::AwaitingSelection) move_to(RunState::Stepping);
        json fresh = json::array();
        for (std::size_t i = 0; i < n; ++i) {
            std::optional<Box> override_box;
            if (i == 0 && pending_selection)
                override_box = box_of_step(views.at(runner->state().iteration), *pending_selection, experiment.space);
            const auto& rec = runner->step(override_box);
            fresh.push_back(to_json(rec, experiment.space));
        }
        pending_selection.reset();
        if (runner->finished()) {
            finish_adaptive();
            move_to(RunState::Done);
        } else {
            refresh_view();
            move_to(RunState::AwaitingSelection);
        }
        return {{"state", to_string(state)},
                {"iteration", runner->state().iteration},
                {"records", fresh},
                {"diagnostics", diagnostics}};
    }

    json& current_trajectory() {
        if (kind == RunKind::Prim) return rounds.back();
        return views.at(runner->state().iteration);
    }

    // ---- views ----

    json record() const {
        json j = {{"run_id", id},
                  {"kind", to_string(kind)},
                  {"state", to_string(state)},
                  {"experiment", to_json(experiment)},
                  {"params", params},
                  {"created_at", created_at},
                  {"updated_at", updated_at},
                  {"transitions", transitions}};
        if (!error.empty()) j["error"] = error;
        switch (kind) {
        case RunKind::Prim: {
            json sel = json::array();
            for (const auto& s : selections) sel.push_back(s ? json(*s) : json(nullptr));
            j["prim"] = {{"box_round", rounds.empty() ? 0 : rounds.size() - 1},
                         {"selections", sel},
                         {"n_points", data.size()},
                         {"n_vulnerable", data.vulnerable_count()}};
            break;
        }
        case RunKind::Cart:
            j["cart"] = {{"n_points", data.size()},
                         {"n_vulnerable", data.vulnerable_count()},
                         {"leaf_count", leaf_count},
                         {"pruned_leaf_count", pruned_leaf_count},
                         {"n_boxes", leaves.size()}};
            break;
        case RunKind::Adaptive:
            if (runner) {
                j["adaptive"] = {{"iteration", runner->state().iteration},
                                 {"n_iter", adaptive_cfg.n_iter},
                                 {"simulator_calls", runner->state().simulator_calls},
                                 {"pending_selection",
                                  pending_selection ? json(*pending_selection) : json(nullptr)}};
            }
            break;
        }
        return j;
    }

    json boxes_json() const {
        json out = json::array();
        switch (kind) {
        case RunKind::Prim: {
            std::vector<Box> earlier;
            std::size_t captured = 0;
            const std::size_t total = data.vulnerable_count();
            for (std::size_t r = 0; r < rounds.size(); ++r) {
                if (!selections[r]) continue;
                const Box box = box_of_step(rounds[r], *selections[r], experiment.space);
                const LabeledSamples rest = residual(data, earlier);
                const BoxStats s = box_stats(box, rest);
                captured += s.n_vulnerable_inside;
                out.push_back({{"box_round", r},
                               {"selected_index", *selections[r]},
                               {"box", to_json(box, experiment.space)},
                               {"stats", to_json(s)},
                               {"stats_full", to_json(box_stats(box, data))},
                               {"cumulative_coverage",
                                total == 0 ? 0.0 : static_cast<double>(captured) / static_cast<double>(total)}});
                earlier.push_back(box);
            }
            break;
        }
        case RunKind::Cart:
            for (const auto& leaf : leaves) out.push_back(to_json(leaf, experiment.space));
            break;
        case RunKind::Adaptive:
            for (const auto& round : final_boxes) out.push_back(to_json(round, experiment.space));
            break;
        }
        return out;
    }

    json report() const {
        json j = record();
        j["boxes"] = boxes_json();
        if (kind == RunKind::Cart) j["tree"] = tree;
        if (kind == RunKind::Adaptive && runner) {
            json history = json::array();
            for (const auto& rec : runner->state().history)
                history.push_back({{"iteration", rec.iteration},
                                   {"selected_box", to_json(rec.selected_box, experiment.space)},
                                   {"box_stats", to_json(rec.box_stats)},
                                   {"fallback", rec.fallback},
                                   {"override_used", rec.override_used},
                                   {"pool_vulnerable", rec.pool_vulnerable}});
            j["history"] = history;
            j["diagnostics"] = diagnostics;
        }
        return with_version(std::move(j));
    }

    void publish() {
        auto snap = std::make_shared<Snapshot>();
        snap->record = record();
        snap->report = report();
        snap->space = experiment.space;
        if (kind == RunKind::Adaptive) {
            snap->trajectories = views;
            if (runner) {
                snap->points = runner->state().dataset;
                snap->point_source.assign(adaptive_cfg.n_init, "init");
                snap->point_source.resize(snap->points.size(), "adaptive");
                const auto it = views.find(runner->state().iteration);
                if (it != views.end() && state != RunState::Done) {
                    const json& v = it->second;
                    const std::size_t idx = pending_selection ? *pending_selection : v.at("auto_index").get<std::size_t>();
                    snap->highlight.push_back(box_of_step(v, idx, experiment.space));
                }
                for (const auto& round : final_boxes) snap->highlight.push_back(round.box);
            }
        } else {
            for (std::size_t r = 0; r < rounds.size(); ++r) snap->trajectories[r] = rounds[r];
            snap->points = data;
            snap->point_source.assign(data.size(), "sample");
            if (kind == RunKind::Prim && !rounds.empty()) {
                const auto& cur = rounds.back();
                const std::size_t idx = selections.back() ? *selections.back() : cur.at("auto_index").get<std::size_t>();
                snap->highlight.push_back(box_of_step(cur, idx, experiment.space));
                std::vector<Box> earlier;
                for (std::size_t r = 0; r + 1 < rounds.size(); ++r)
                    earlier.push_back(box_of_step(rounds[r], *selections[r], experiment.space));
                snap->in_fitting_data.assign(data.size(), 1);
                for (Eigen::Index i = 0; i < data.points.rows(); ++i)
                    for (const auto& b : earlier)
                        if (b.contains(data.points.row(i))) snap->in_fitting_data[static_cast<std::size_t>(i)] = 0;
            }
            for (const auto& leaf : leaves) snap->highlight.push_back(leaf.box);
        }
        std::lock_guard lock(snapshot_mutex_);
        snapshot_ = std::move(snap);
    }

    // ---- persistence ----

    // Rewrites only the artifacts whose content changed since the last call;
    // run.json goes last, through a rename, so a reload never sees it ahead
    // of the files it describes.
    void persist() const {
        fs::create_directories(dir);
        const auto snap = snapshot();
        const auto& space = experiment.space;
        switch (kind) {
        case RunKind::Prim:
        case RunKind::Cart:
            put("samples.csv", [&] { return labeled_csv(space, data); });
            break;
        case RunKind::Adaptive:
            if (runner) {
                put("state.json", [&] { return to_json(runner->state(), space).dump() + "\n"; });
                std::string lines;
                for (const auto& rec : runner->state().history) lines += to_json(rec, space).dump() + "\n";
                put("history.jsonl", [&] { return lines; });
                put("diagnostics.json", [&] { return dump(diagnostics); });
            }
            break;
        }
        for (const auto& [r, traj] : snap->trajectories)
            put("trajectory_" + std::to_string(r) + ".json", [&] { return dump(traj); });
        if (kind == RunKind::Cart && !tree.is_null()) put("tree.json", [&] { return dump(tree); });
        put("boxes.json", [&] { return dump(boxes_json()); });

        json saved = snap->record;
        saved["schema_version"] = kSchemaVersion;
        const fs::path tmp = dir / "run.json.tmp";
        write_file(tmp, dump(saved));
        fs::rename(tmp, dir / "run.json");
    }

    static std::shared_ptr<Run> load(const fs::path& dir) {
        const json saved = json::parse(read_file(dir / "run.json"));
        auto run = std::make_shared<Run>();
        run->dir = dir;
        run->id = saved.at("run_id").get<std::string>();
        run->kind = run_kind_from_string(saved.at("kind").get<std::string>());
        run->state = run_state_from_string(saved.at("state").get<std::string>());
        run->experiment = experiment_from_json(saved.at("experiment"));
        run->params = saved.at("params");
        run->created_at = saved.at("created_at").get<std::string>();
        run->updated_at = saved.at("updated_at").get<std::string>();
        run->transitions = saved.at("transitions").get<std::vector<std::string>>();
        run->error = saved.value("error", std::string{});
        const auto& space = run->experiment.space;

        const auto read_trajectories = [&]() {
            std::map<std::size_t, json> out;
            for (const auto& entry : fs::directory_iterator(dir)) {
                const std::string name = entry.path().filename().string();
                static const std::regex pattern(R"(trajectory_(\d+)\.json)");
                std::smatch m;
                if (std::regex_match(name, m, pattern))
                    out[std::stoul(m[1].str())] = json::parse(read_file(entry.path()));
            }
            return out;
        };

        switch (run->kind) {
        case RunKind::Prim: {
            const auto& p = run->params;
            run->prim_cfg.patience = p.at("patience").get<double>();
            run->prim_cfg.support_threshold = p.at("support_threshold").get<double>();
            run->prim_cfg.min_mean_gain = p.at("min_mean_gain").get<double>();
            run->prim_cfg.coverage_floor = p.at("coverage_floor").get<double>();
            run->max_rounds = p.at("max_rounds").get<std::size_t>();
            if (fs::exists(dir / "samples.csv")) run->data = labeled_from_csv(read_file(dir / "samples.csv"), space);
            for (auto& [r, traj] : read_trajectories()) run->rounds.push_back(std::move(traj));
            for (const auto& s : saved.at("prim").at("selections"))
                run->selections.push_back(s.is_null() ? std::nullopt : std::optional<std::size_t>(s.get<std::size_t>()));
            break;
        }
        case RunKind::Cart: {
            const auto& p = run->params;
            run->cart_cfg.min_split = p.at("min_split").get<std::size_t>();
            run->cart_cfg.min_leaf = p.at("min_leaf").get<std::size_t>();
            run->cart_cfg.max_depth = p.at("max_depth").get<std::size_t>();
            if (fs::exists(dir / "samples.csv")) {
                run->data = labeled_from_csv(read_file(dir / "samples.csv"), space);
                if (run->state == RunState::Done) run->grow_tree();
            }
            break;
        }
        case RunKind::Adaptive: {
            run->adaptive_cfg = adaptive_config_from_json(run->params);
            run->truth_n = run->params.at("truth_n").get<std::size_t>();
            if (fs::exists(dir / "state.json")) {
                auto st = adaptive_state_from_json(json::parse(read_file(dir / "state.json")), space);
                run->runner = std::make_unique<AdaptiveRunner>(run->adaptive_cfg, run->experiment, std::move(st));
                run->truth = run->make_truth();
                run->views = read_trajectories();
                const auto& pending = saved.at("adaptive").at("pending_selection");
                if (!pending.is_null()) run->pending_selection = pending.get<std::size_t>();
                if (fs::exists(dir / "diagnostics.json"))
                    run->diagnostics = json::parse(read_file(dir / "diagnostics.json"));
                if (run->state == RunState::Done) run->final_boxes = run->runner->finalize().final_boxes;
            }
            break;
        }
        }
        run->publish();
        return run;
    }

private:
    template <class Make>
    void put(const std::string& name, Make make) const {
        std::string content = make();
        auto& last = written_[name];
        if (last == content && fs::exists(dir / name)) return;
        write_file(dir / name, content);
        last = std::move(content);
    }

    mutable std::map<std::string, std::string> written_;
    mutable std::mutex snapshot_mutex_;
    std::shared_ptr<const Snapshot> snapshot_;
};

RunService::RunService(ServiceOptions options) : options_(std::move(options)) {
    const fs::path runs_dir = options_.data_dir / "runs";
    fs::create_directories(runs_dir);
    std::uint64_t max_seq = 0;
    for (const auto& entry : fs::directory_iterator(runs_dir)) {
        if (!entry.is_directory() || !fs::exists(entry.path() / "run.json")) continue;
        auto run = Run::load(entry.path());
        const std::string& id = run->id;
        if (id.rfind("run-", 0) == 0) max_seq = std::max<std::uint64_t>(max_seq, std::stoull(id.substr(4)));
        runs_[id] = std::move(run);
    }
    next_id_ = max_seq + 1;
}

RunService::~RunService() = default;

std::vector<std::string> RunService::run_ids() const {
    std::shared_lock lock(runs_mutex_);
    std::vector<std::string> ids;
    for (const auto& [id, run] : runs_) ids.push_back(id);
    return ids;
}

std::shared_ptr<Run> RunService::find(const std::string& id) const {
    std::shared_lock lock(runs_mutex_);
    const auto it = runs_.find(id);
    if (it == runs_.end()) throw NotFound("unknown run '" + id + "'");
    return it->second;
}

Response RunService::create_run(const Request& req) {
    const json body = parse_body(req.body);
    if (!body.contains("experiment")) throw ValidationError("missing 'experiment'");
    if (!body.contains("kind") || !body.at("kind").is_string()) throw ValidationError("missing 'kind'");

    json doc;
    const auto& exp = body.at("experiment");
    if (exp.is_string()) {
        const std::string name = exp.get<std::string>();
        if (name.empty() || name.find('/') != std::string::npos || name.find("..") != std::string::npos)
            throw ValidationError("bad experiment name '" + name + "'");
        const fs::path path = options_.experiments_dir / (name + ".experiment");
        try {
            doc = json::parse(read_file(path));
        } catch (const json::parse_error& e) {
            throw ValidationError("experiment '" + name + "' is malformed: " + e.what());
        }
    } else if (exp.is_object()) {
        doc = exp;
    } else {
        throw ValidationError("'experiment' must be a bundled name or a config object");
    }
    if (body.contains("overrides")) {
        if (!body.at("overrides").is_array()) throw ValidationError("'overrides' must be a list of key=value strings");
        std::vector<std::string> overrides;
        for (const auto& o : body.at("overrides")) {
            if (!o.is_string()) throw ValidationError("'overrides' must be a list of key=value strings");
            overrides.push_back(o.get<std::string>());
        }
        apply_overrides(doc, overrides);
    }

    auto run = std::make_shared<Run>();
    run->experiment = experiment_from_json(doc);
    validate(run->experiment);
    run->kind = run_kind_from_string(body.at("kind").get<std::string>());
    if (body.contains("params")) {
        if (!body.at("params").is_object()) throw ValidationError("'params' must be an object");
        run->params = body.at("params");
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "run-%06llu", static_cast<unsigned long long>(next_id_++));
    run->id = buf;
    run->dir = options_.data_dir / "runs" / run->id;
    run->created_at = run->updated_at = now_utc();
    run->transitions.push_back(to_string(RunState::Created));

    std::lock_guard lock(run->write_mutex);
    try {
        run->initialize();
    } catch (const ValidationError&) {
        throw;
    } catch (const std::exception& e) {
        run->error = e.what();
        run->move_to(RunState::Failed);
    }
    run->publish();
    run->persist();
    {
        std::unique_lock runs_lock(runs_mutex_);
        runs_[run->id] = run;
    }
    if (run->state == RunState::Failed) return reply(500, {{"run_id", run->id}, {"state", "failed"}, {"error", run->error}});
    return reply(201, {{"run_id", run->id}, {"state", to_string(run->state)}});
}

Response RunService::handle(const Request& req) {
    static const std::regex run_path(R"(^/runs/([^/]+)(?:/([a-z-]+))?/?$)");
    try {
        if (req.path == "/runs" || req.path == "/runs/") {
            if (req.method == "POST") return create_run(req);
            if (req.method == "GET") {
                json list = json::array();
                for (const auto& id : run_ids()) {
                    const auto snap = find(id)->snapshot();
                    list.push_back({{"run_id", id},
                                    {"kind", snap->record.at("kind")},
                                    {"state", snap->record.at("state")}});
                }
                return reply(200, {{"runs", list}});
            }
            return error_reply(405, "method not allowed");
        }
        std::smatch m;
        if (!std::regex_match(req.path, m, run_path)) return error_reply(404, "no such endpoint");
        const std::string id = m[1].str();
        const std::string action = m[2].str();
        const auto run = find(id);

        if (req.method == "GET") {
            const auto snap = run->snapshot();
            if (action.empty()) return reply(200, snap->record);
            if (action == "report") return reply(200, snap->report);
            if (action == "trajectory") {
                if (snap->trajectories.empty()) throw Conflict("no trajectory for " + snap->record.at("kind").get<std::string>() + " runs");
                std::size_t round = snap->trajectories.rbegin()->first;
                if (auto it = req.query.find("box_round"); it != req.query.end()) {
                    try {
                        std::size_t used = 0;
                        round = std::stoul(it->second, &used);
                        if (used != it->second.size()) throw std::invalid_argument("trailing");
                    } catch (const std::exception&) {
                        throw ValidationError("box_round must be a non-negative integer");
                    }
                }
                const auto t = snap->trajectories.find(round);
                if (t == snap->trajectories.end()) return error_reply(404, "no trajectory for box_round " + std::to_string(round));
                json out = t->second;
                out["box_round"] = round;
                return reply(200, out);
            }
            if (action == "points") {
                const auto& space = snap->space;
                std::vector<std::size_t> dims;
                if (auto it = req.query.find("projection"); it != req.query.end() && !it->second.empty()) {
                    std::size_t start = 0;
                    while (start <= it->second.size()) {
                        const auto comma = it->second.find(',', start);
                        const std::string name = it->second.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
                        const auto d = space.index_of(name);
                        if (!d) throw ValidationError("unknown dimension '" + name + "' in projection");
                        dims.push_back(*d);
                        if (comma == std::string::npos) break;
                        start = comma + 1;
                    }
                } else {
                    for (std::size_t d = 0; d < space.k(); ++d) dims.push_back(d);
                }
                json names = json::array(), pts = json::array(), labels = json::array(), in_box = json::array();
                for (auto d : dims) names.push_back(space.dims[d].name);
                const auto& data = snap->points;
                for (Eigen::Index i = 0; i < data.points.rows(); ++i) {
                    json row = json::array();
                    for (auto d : dims) row.push_back(data.points(i, static_cast<Eigen::Index>(d)));
                    pts.push_back(row);
                    labels.push_back(data.labels[static_cast<std::size_t>(i)]);
                    bool inside = false;
                    for (const auto& b : snap->highlight) inside = inside || b.contains(data.points.row(i));
                    in_box.push_back(inside);
                }
                json boxes = json::array();
                for (const auto& b : snap->highlight) boxes.push_back(to_json(b, space));
                json out = {{"dims", names}, {"points", pts}, {"labels", labels}, {"in_box", in_box},
                            {"boxes", boxes}, {"source", snap->point_source}};
                if (!snap->in_fitting_data.empty()) {
                    std::vector<bool> flags(snap->in_fitting_data.begin(), snap->in_fitting_data.end());
                    out["in_fitting_data"] = flags;
                }
                return reply(200, out);
            }
            return error_reply(404, "no such endpoint");
        }

        if (req.method == "POST") {
            if (action != "select" && action != "cover-next" && action != "adaptive-step")
                return error_reply(404, "no such endpoint");
            const json body = parse_body(req.body);
            std::lock_guard lock(run->write_mutex);
            if (run->state == RunState::Failed) throw Conflict("run has failed");
            json result;
            try {
                if (action == "select") result = run->select(body);
                else if (action == "cover-next") result = run->cover_next();
                else result = run->adaptive_step(body);
            } catch (const ValidationError&) {
                throw;
            } catch (const Conflict&) {
                throw;
            } catch (const std::exception& e) {
                run->error = e.what();
                run->move_to(RunState::Failed);
                run->updated_at = now_utc();
                run->publish();
                run->persist();
                return error_reply(500, run->error);
            }
            run->updated_at = now_utc();
            run->publish();
            run->persist();
            return reply(200, result);
        }
        return error_reply(405, "method not allowed");
    } catch (const NotFound& e) {
        return error_reply(404, e.what());
    } catch (const Conflict& e) {
        return error_reply(409, e.what());
    } catch (const ValidationError& e) {
        return error_reply(422, e.what());
    } catch (const ParseError& e) {
        return error_reply(422, e.what());
    } catch (const std::exception& e) {
        return error_reply(500, e.what());
    }
}

struct HttpServer::Impl {
    RunService& service;
    httplib::Server server;
    explicit Impl(RunService& s) : service(s) {}
};

HttpServer::HttpServer(RunService& service, std::optional<fs::path> ui_dir)
    : impl_(std::make_unique<Impl>(service)) {
    auto& svr = impl_->server;
    if (ui_dir && !svr.set_mount_point("/", ui_dir->string()))
        throw ValidationError("UI directory '" + ui_dir->string() + "' does not exist");
    const auto bridge = [this](const httplib::Request& r, httplib::Response& res) {
        Request req{r.method, r.path, {}, r.body};
        for (const auto& [k, v] : r.params) req.query[k] = v;
        const Response out = impl_->service.handle(req);
        res.status = out.status;
        res.set_content(out.body.dump(), "application/json");
    };
    svr.Get(R"(/runs(/.*)?)", bridge);
    svr.Post(R"(/runs(/.*)?)", bridge);
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
    if (port == 0) {
        const int bound = impl_->server.bind_to_any_port(host);
        if (bound < 0) throw std::runtime_error("cannot bind " + host);
        return bound;
    }
    if (!impl_->server.bind_to_port(host, port))
        throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
    return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
    if (impl_) impl_->server.stop();
}

} // namespace sdforge
