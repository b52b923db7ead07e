#include "sdforge/adaptive.hpp"

#include <algorithm>
#include <cmath>

#include "sdforge/error.hpp"
#include "sdforge/metrics.hpp"
#include "sdforge/rng.hpp"
#include "sdforge/sampling.hpp"
#include "sdforge/serialize.hpp"
#include "sdforge/simulator.hpp"

namespace sdforge {

using nlohmann::json;

std::string to_string(SamplingMode m) {
    return m == SamplingMode::BorderOnly ? "border_only" : "interior_or_border";
}

SamplingMode sampling_mode_from_string(const std::string& s) {
    if (s == "interior_or_border") return SamplingMode::InteriorOrBorder;
    if (s == "border_only") return SamplingMode::BorderOnly;
    throw ValidationError("unknown sampling mode '" + s + "'");
}

std::string to_string(PointPlacement p) {
    switch (p) {
    case PointPlacement::Interior: return "interior";
    case PointPlacement::Border: return "border";
    case PointPlacement::Fallback: return "fallback";
    }
    return "unknown";
}

namespace {

PointPlacement placement_from_string(const std::string& s) {
    if (s == "interior") return PointPlacement::Interior;
    if (s == "border") return PointPlacement::Border;
    if (s == "fallback") return PointPlacement::Fallback;
    throw ParseError("unknown placement '" + s + "'");
}

} // namespace

void AdaptiveConfig::validate() const {
    if (n_init < 2) throw ValidationError("adaptive: n_init must be >= 2");
    if (pool_size < 5 * n_init) throw ValidationError("adaptive: pool_size must be >= 5 x n_init");
    if (batch < 1) throw ValidationError("adaptive: batch must be >= 1");
    if (!(interior_prob >= 0.0 && interior_prob <= 1.0))
        throw ValidationError("adaptive: interior_prob must be in [0, 1]");
    if (gp_budget < 1 || gp_starts < 1) throw ValidationError("adaptive: gp budget and starts must be >= 1");
    if (final_max_boxes < 1) throw ValidationError("adaptive: final_max_boxes must be >= 1");
    prim_cfg.validate();
}

gp::OptimizeHyper AdaptiveConfig::hyper_for(std::string_view purpose, std::size_t iteration) const {
    gp::OptimizeHyper h;
    h.budget = gp_budget;
    h.starts = gp_starts;
    h.seed = derive_seed(seed, purpose, iteration);
    return h;
}

AdaptiveRunner::AdaptiveRunner(AdaptiveConfig cfg, ExperimentConfig experiment)
    : cfg_(std::move(cfg)), experiment_(std::move(experiment)) {
    cfg_.validate();
    validate(experiment_);
    const auto& space = experiment_.space;
    const SampleMatrix init = lhs(space, cfg_.n_init, derive_seed(cfg_.seed, "init"));
    state_.dataset = simulate(experiment_, init.points);
    state_.simulator_calls = cfg_.n_init;
    state_.pool = lhs(space, cfg_.pool_size, derive_seed(cfg_.seed, "pool"));
}

AdaptiveRunner::AdaptiveRunner(AdaptiveConfig cfg, ExperimentConfig experiment, AdaptiveState state)
    : cfg_(std::move(cfg)), experiment_(std::move(experiment)), state_(std::move(state)) {
    cfg_.validate();
    validate(experiment_);
    if (state_.dataset.size() != cfg_.n_init + state_.iteration * cfg_.batch)
        throw ValidationError("adaptive: persisted dataset size does not match the iteration count");
}

AdaptiveRunner::PoolView AdaptiveRunner::current_view() const {
    PoolView view;
    view.model = gp::fit(state_.dataset, experiment_.space, cfg_.hyper_for("gp", state_.iteration));
    const auto posterior = gp::predict(view.model, state_.pool.points);
    view.labeled_pool = LabeledSamples::from_outputs(state_.pool.points, posterior.mean, experiment_.rule);
    view.trajectory = peel(view.labeled_pool, experiment_.space, cfg_.prim_cfg);
    view.trajectory.selected_index =
        select_step(view.trajectory, SelectionCriterion::automatic(), cfg_.prim_cfg.coverage_floor);
    return view;
}

Eigen::MatrixXd AdaptiveRunner::draw_batch(const Box& box, bool fallback, std::size_t iteration,
                                           std::vector<PointPlacement>& placements) const {
    const auto& space = experiment_.space;
    Engine eng = make_engine(derive_seed(cfg_.seed, "placement", iteration));
    Eigen::MatrixXd out(static_cast<Eigen::Index>(cfg_.batch), static_cast<Eigen::Index>(space.k()));
    for (std::size_t j = 0; j < cfg_.batch; ++j) {
        const std::uint64_t point_seed = derive_seed(cfg_.seed, "point", iteration * cfg_.batch + j);
        const double u = uniform01(eng);
        SampleMatrix s;
        if (fallback) {
            s = uniform_in_box(space, Box(space.k()), 1, point_seed);
            placements.push_back(PointPlacement::Fallback);
        } else if (cfg_.mode == SamplingMode::BorderOnly || u >= cfg_.interior_prob) {
            s = uniform_on_border(space, box, 1, point_seed);
            placements.push_back(PointPlacement::Border);
        } else {
            s = uniform_in_box(space, box, 1, point_seed);
            placements.push_back(PointPlacement::Interior);
        }
        out.row(static_cast<Eigen::Index>(j)) = s.points.row(0);
    }
    return out;
}

const IterationRecord& AdaptiveRunner::step(const std::optional<Box>& box_override) {
    if (finished()) throw ValidationError("adaptive: all iterations already ran");
    const PoolView view = current_view();

    IterationRecord rec;
    rec.iteration = state_.iteration;
    rec.selected_step = *view.trajectory.selected_index;
    rec.trajectory_length = view.trajectory.size();
    rec.selected_box = view.trajectory.steps[rec.selected_step].box;
    if (box_override) {
        if (box_override->k() != experiment_.space.k())
            throw ValidationError("adaptive: override box dimension mismatch");
        rec.selected_box = *box_override;
        rec.override_used = true;
    }
    rec.box_stats = box_stats(rec.selected_box, view.labeled_pool);
    rec.fallback = rec.selected_box.restricted_dims().empty();
    rec.gp_params = view.model.params;
    rec.gp_lml = view.model.log_marginal_likelihood;
    rec.pool_vulnerable = view.labeled_pool.vulnerable_count();

    rec.new_points = draw_batch(rec.selected_box, rec.fallback, state_.iteration, rec.placements);
    const LabeledSamples fresh = simulate(experiment_, rec.new_points);
    rec.new_outputs = fresh.outputs;
    state_.dataset.append(fresh);
    state_.simulator_calls += cfg_.batch;
    ++state_.iteration;
    state_.history.push_back(std::move(rec));
    return state_.history.back();
}

AdaptiveResult AdaptiveRunner::finalize() const {
    AdaptiveResult result;
    result.state = state_;
    result.final_model = gp::fit(state_.dataset, experiment_.space, cfg_.hyper_for("gp", state_.iteration));
    const auto posterior = gp::predict(result.final_model, state_.pool.points);
    result.labeled_pool = LabeledSamples::from_outputs(state_.pool.points, posterior.mean, experiment_.rule);
    if (result.labeled_pool.vulnerable_count() > 0)
        result.final_boxes = cover(result.labeled_pool, experiment_.space, cfg_.prim_cfg, cfg_.final_max_boxes,
                                   cfg_.final_stop_coverage);
    return result;
}

AdaptiveResult run_adaptive(const AdaptiveConfig& cfg, const ExperimentConfig& experiment) {
    AdaptiveRunner runner(cfg, experiment);
    while (!runner.finished()) runner.step();
    return runner.finalize();
}

DiagnosticsReport evaluate_predictions(const Eigen::VectorXd& posterior_mean, const LabeledSamples& truth,
                                       const Eigen::VectorXd& picked_outputs, const VulnerabilityRule& rule,
                                       std::size_t bins) {
    if (truth.empty()) throw ValidationError("evaluate: empty truth set");
    if (posterior_mean.size() != static_cast<Eigen::Index>(truth.size()))
        throw ValidationError("evaluate: prediction/truth length mismatch");
    DiagnosticsReport rep;
    rep.n = truth.size();
    const auto corr = pearson(std::span<const double>(posterior_mean.data(), rep.n),
                              std::span<const double>(truth.outputs.data(), rep.n));
    rep.correlation = corr.r;
    rep.correlation_defined = corr.defined;
    double abs_err = 0.0;
    for (std::size_t i = 0; i < rep.n; ++i) {
        const auto idx = static_cast<Eigen::Index>(i);
        const bool predicted = rule.is_vulnerable(posterior_mean(idx));
        const bool actual = truth.labels[i] == 1;
        if (predicted && actual) ++rep.true_positive;
        else if (predicted) ++rep.false_positive;
        else if (actual) ++rep.false_negative;
        else ++rep.true_negative;
        abs_err += std::abs(posterior_mean(idx) - truth.outputs(idx));
    }
    rep.n_correct = rep.true_positive + rep.true_negative;
    rep.accuracy = static_cast<double>(rep.n_correct) / static_cast<double>(rep.n);
    rep.mean_abs_error = abs_err / static_cast<double>(rep.n);

    bins = std::max<std::size_t>(bins, 1);
    double lo = std::min(posterior_mean.minCoeff(), truth.outputs.minCoeff());
    double hi = std::max(posterior_mean.maxCoeff(), truth.outputs.maxCoeff());
    if (picked_outputs.size() > 0) {
        lo = std::min(lo, picked_outputs.minCoeff());
        hi = std::max(hi, picked_outputs.maxCoeff());
    }
    if (!(hi > lo)) {
        lo -= 0.5;
        hi += 0.5;
    }
    auto& h = rep.histogram;
    for (std::size_t b = 0; b <= bins; ++b)
        h.edges.push_back(lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(bins));
    h.picked.assign(bins, 0);
    h.truth.assign(bins, 0);
    h.posterior.assign(bins, 0);
    const auto bin_of = [&](double v) {
        auto b = static_cast<std::size_t>((v - lo) / (hi - lo) * static_cast<double>(bins));
        return std::min(b, bins - 1);
    };
    for (Eigen::Index i = 0; i < picked_outputs.size(); ++i) ++h.picked[bin_of(picked_outputs(i))];
    for (Eigen::Index i = 0; i < truth.outputs.size(); ++i) ++h.truth[bin_of(truth.outputs(i))];
    for (Eigen::Index i = 0; i < posterior_mean.size(); ++i) ++h.posterior[bin_of(posterior_mean(i))];
    return rep;
}

DiagnosticsReport evaluate_against_truth(const AdaptiveState& state, const gp::GPModel& model,
                                         const LabeledSamples& truth) {
    if (truth.empty()) throw ValidationError("evaluate: empty truth set");
    const auto posterior = gp::predict(model, truth.points);
    std::vector<double> picked;
    for (const auto& rec : state.history)
        picked.insert(picked.end(), rec.new_outputs.data(), rec.new_outputs.data() + rec.new_outputs.size());
    return evaluate_predictions(posterior.mean, truth,
                                Eigen::Map<const Eigen::VectorXd>(picked.data(), static_cast<Eigen::Index>(picked.size())));
}

json to_json(const AdaptiveConfig& cfg) {
    return {{"n_init", cfg.n_init},
            {"pool_size", cfg.pool_size},
            {"n_iter", cfg.n_iter},
            {"batch", cfg.batch},
            {"mode", to_string(cfg.mode)},
            {"interior_prob", cfg.interior_prob},
            {"prim",
             {{"patience", cfg.prim_cfg.patience},
              {"support_threshold", cfg.prim_cfg.support_threshold},
              {"min_mean_gain", cfg.prim_cfg.min_mean_gain},
              {"coverage_floor", cfg.prim_cfg.coverage_floor}}},
            {"gp_budget", cfg.gp_budget},
            {"gp_starts", cfg.gp_starts},
            {"final_max_boxes", cfg.final_max_boxes},
            {"final_stop_coverage", cfg.final_stop_coverage},
            {"seed", cfg.seed}};
}

AdaptiveConfig adaptive_config_from_json(const json& j, const AdaptiveConfig& defaults) {
    AdaptiveConfig c = defaults;
    try {
        c.n_init = j.value("n_init", c.n_init);
        c.pool_size = j.value("pool_size", c.pool_size);
        c.n_iter = j.value("n_iter", c.n_iter);
        c.batch = j.value("batch", c.batch);
        if (j.contains("mode")) c.mode = sampling_mode_from_string(j.at("mode").get<std::string>());
        c.interior_prob = j.value("interior_prob", c.interior_prob);
        if (j.contains("prim")) {
            const auto& p = j.at("prim");
            c.prim_cfg.patience = p.value("patience", c.prim_cfg.patience);
            c.prim_cfg.support_threshold = p.value("support_threshold", c.prim_cfg.support_threshold);
            c.prim_cfg.min_mean_gain = p.value("min_mean_gain", c.prim_cfg.min_mean_gain);
            c.prim_cfg.coverage_floor = p.value("coverage_floor", c.prim_cfg.coverage_floor);
        }
        c.gp_budget = j.value("gp_budget", c.gp_budget);
        c.gp_starts = j.value("gp_starts", c.gp_starts);
        c.final_max_boxes = j.value("final_max_boxes", c.final_max_boxes);
        c.final_stop_coverage = j.value("final_stop_coverage", c.final_stop_coverage);
        c.seed = j.value("seed", c.seed);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("adaptive config: ") + e.what());
    }
    return c;
}

json to_json(const IterationRecord& rec, const UncertaintySpace& space) {
    json placements = json::array();
    for (auto p : rec.placements) placements.push_back(to_string(p));
    return {{"iteration", rec.iteration},
            {"selected_box", to_json(rec.selected_box, space)},
            {"box_stats", to_json(rec.box_stats)},
            {"selected_step", rec.selected_step},
            {"trajectory_length", rec.trajectory_length},
            {"fallback", rec.fallback},
            {"override_used", rec.override_used},
            {"new_points", rows_to_json(rec.new_points)},
            {"new_outputs", vector_to_json(rec.new_outputs)},
            {"placements", placements},
            {"gp_params",
             {{"signal_variance", rec.gp_params.signal_variance},
              {"length_scales", vector_to_json(rec.gp_params.length_scales)},
              {"noise_variance", rec.gp_params.noise_variance}}},
            {"gp_lml", rec.gp_lml},
            {"pool_vulnerable", rec.pool_vulnerable}};
}

IterationRecord iteration_record_from_json(const json& j, const UncertaintySpace& space) {
    try {
        IterationRecord rec;
        rec.iteration = j.at("iteration").get<std::size_t>();
        rec.selected_box = box_from_json(j.at("selected_box"), space);
        const auto& s = j.at("box_stats");
        rec.box_stats.coverage = s.at("coverage").get<double>();
        rec.box_stats.density = s.at("density").get<double>();
        rec.box_stats.support = s.at("support").get<double>();
        rec.box_stats.vulnerable_support = s.at("vulnerable_support").get<double>();
        rec.box_stats.interpretability = s.at("interpretability").get<std::size_t>();
        rec.box_stats.n_inside = s.at("n_inside").get<std::size_t>();
        rec.box_stats.n_vulnerable_inside = s.at("n_vulnerable_inside").get<std::size_t>();
        rec.selected_step = j.at("selected_step").get<std::size_t>();
        rec.trajectory_length = j.at("trajectory_length").get<std::size_t>();
        rec.fallback = j.at("fallback").get<bool>();
        rec.override_used = j.at("override_used").get<bool>();
        rec.new_points = rows_from_json(j.at("new_points"), space.k());
        rec.new_outputs = vector_from_json(j.at("new_outputs"));
        for (const auto& p : j.at("placements")) rec.placements.push_back(placement_from_string(p.get<std::string>()));
        rec.gp_params.signal_variance = j.at("gp_params").at("signal_variance").get<double>();
        rec.gp_params.length_scales = vector_from_json(j.at("gp_params").at("length_scales"));
        rec.gp_params.noise_variance = j.at("gp_params").at("noise_variance").get<double>();
        rec.gp_lml = j.at("gp_lml").get<double>();
        rec.pool_vulnerable = j.at("pool_vulnerable").get<std::size_t>();
        return rec;
    } catch (const json::exception& e) {
        throw ParseError(std::string("iteration record: ") + e.what());
    }
}

json to_json(const AdaptiveState& state, const UncertaintySpace& space) {
    json history = json::array();
    for (const auto& rec : state.history) history.push_back(to_json(rec, space));
    std::vector<int> labels(state.dataset.labels.begin(), state.dataset.labels.end());
    return {{"dataset",
             {{"points", rows_to_json(state.dataset.points)},
              {"outputs", vector_to_json(state.dataset.outputs)},
              {"labels", labels}}},
            {"pool", rows_to_json(state.pool.points)},
            {"iteration", state.iteration},
            {"simulator_calls", state.simulator_calls},
            {"history", history}};
}

AdaptiveState adaptive_state_from_json(const json& j, const UncertaintySpace& space) {
    try {
        AdaptiveState s;
        s.dataset.points = rows_from_json(j.at("dataset").at("points"), space.k());
        s.dataset.outputs = vector_from_json(j.at("dataset").at("outputs"));
        for (int l : j.at("dataset").at("labels").get<std::vector<int>>()) s.dataset.labels.push_back(l ? 1 : 0);
        s.pool = SampleMatrix{rows_from_json(j.at("pool"), space.k()), space};
        s.iteration = j.at("iteration").get<std::size_t>();
        s.simulator_calls = j.at("simulator_calls").get<std::size_t>();
        for (const auto& rec : j.at("history")) s.history.push_back(iteration_record_from_json(rec, space));
        return s;
    } catch (const json::exception& e) {
        throw ParseError(std::string("adaptive state: ") + e.what());
    }
}

json to_json(const DiagnosticsReport& rep) {
    return {{"correlation", rep.correlation},
            {"correlation_defined", rep.correlation_defined},
            {"accuracy", rep.accuracy},
            {"n_correct", rep.n_correct},
            {"n", rep.n},
            {"confusion",
             {{"true_positive", rep.true_positive},
              {"false_positive", rep.false_positive},
              {"true_negative", rep.true_negative},
              {"false_negative", rep.false_negative}}},
            {"mean_abs_error", rep.mean_abs_error},
            {"histogram",
             {{"edges", rep.histogram.edges},
              {"picked", rep.histogram.picked},
              {"truth", rep.histogram.truth},
              {"posterior", rep.histogram.posterior}}}};
}

} // namespace sdforge
