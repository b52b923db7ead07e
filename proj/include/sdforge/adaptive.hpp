#pragma once

// Active-learning scenario discovery. A GP metamodel fitted on the simulated
// dataset D labels a large LHS candidate pool B; PRIM on the labelled pool
// picks a box, and new true-simulator points are drawn from inside the box or
// on its faces. Two sampling modes mirror the two loops: interior_or_border
// and border_only.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sdforge/experiment.hpp"
#include "sdforge/metamodel.hpp"
#include "sdforge/prim.hpp"

namespace sdforge {

enum class SamplingMode { InteriorOrBorder, BorderOnly };

std::string to_string(SamplingMode m);
SamplingMode sampling_mode_from_string(const std::string& s);

struct AdaptiveConfig {
    std::size_t n_init = 100;
    std::size_t pool_size = 2000;
    std::size_t n_iter = 50;
    std::size_t batch = 1;
    SamplingMode mode = SamplingMode::InteriorOrBorder;
    double interior_prob = 0.5;
    PrimConfig prim_cfg;
    std::size_t gp_budget = 200;
    std::size_t gp_starts = 8;
    std::size_t final_max_boxes = 3;
    double final_stop_coverage = 0.85;
    std::uint64_t seed = 0;

    void validate() const;
    gp::OptimizeHyper hyper_for(std::string_view purpose, std::size_t iteration) const;
};

enum class PointPlacement { Interior, Border, Fallback };
std::string to_string(PointPlacement p);

struct IterationRecord {
    std::size_t iteration = 0;
    Box selected_box;
    BoxStats box_stats;      // on the labelled pool
    std::size_t selected_step = 0;
    std::size_t trajectory_length = 0;
    bool fallback = false;   // selected box was unrestricted; sampled the whole space
    bool override_used = false;
    Eigen::MatrixXd new_points;
    Eigen::VectorXd new_outputs;
    std::vector<PointPlacement> placements;
    gp::KernelParams gp_params;
    double gp_lml = 0.0;
    std::size_t pool_vulnerable = 0;
};

struct AdaptiveState {
    LabeledSamples dataset;   // D
    SampleMatrix pool;        // B
    std::size_t iteration = 0;
    std::vector<IterationRecord> history;
    std::size_t simulator_calls = 0;
};

struct AdaptiveResult {
    AdaptiveState state;
    gp::GPModel final_model;
    LabeledSamples labeled_pool;
    std::vector<CoverRound> final_boxes;
};

/// Drives the loop one iteration at a time so the service can advance it on
/// analyst command; run_adaptive is the unattended path.
class AdaptiveRunner {
public:
    AdaptiveRunner(AdaptiveConfig cfg, ExperimentConfig experiment);
    /// Resumes from a persisted state.
    AdaptiveRunner(AdaptiveConfig cfg, ExperimentConfig experiment, AdaptiveState state);

    const AdaptiveConfig& config() const { return cfg_; }
    const ExperimentConfig& experiment() const { return experiment_; }
    const AdaptiveState& state() const { return state_; }
    bool finished() const { return state_.iteration >= cfg_.n_iter; }

    /// GP fit on D, pool labelled by the posterior mean, PRIM trajectory on it.
    struct PoolView {
        gp::GPModel model;
        LabeledSamples labeled_pool;
        PeelingTrajectory trajectory;
    };
    PoolView current_view() const;

    /// Runs one iteration. `box_override` replaces the auto-selected box.
    const IterationRecord& step(const std::optional<Box>& box_override = std::nullopt);

    AdaptiveResult finalize() const;

private:
    Eigen::MatrixXd draw_batch(const Box& box, bool fallback, std::size_t iteration,
                               std::vector<PointPlacement>& placements) const;

    AdaptiveConfig cfg_;
    ExperimentConfig experiment_;
    AdaptiveState state_;
};

AdaptiveResult run_adaptive(const AdaptiveConfig& cfg, const ExperimentConfig& experiment);

struct Histogram {
    std::vector<double> edges; // bins + 1
    std::vector<std::size_t> picked;
    std::vector<std::size_t> truth;
    std::vector<std::size_t> posterior;
};

struct DiagnosticsReport {
    double correlation = 0.0;
    bool correlation_defined = true;
    double accuracy = 0.0;
    std::size_t n_correct = 0;
    std::size_t n = 0;
    std::size_t true_positive = 0;
    std::size_t false_positive = 0;
    std::size_t true_negative = 0;
    std::size_t false_negative = 0;
    double mean_abs_error = 0.0;
    Histogram histogram;
};

/// Compares posterior means against true outputs on `truth`.
DiagnosticsReport evaluate_predictions(const Eigen::VectorXd& posterior_mean,
                                       const LabeledSamples& truth,
                                       const Eigen::VectorXd& picked_outputs,
                                       const VulnerabilityRule& rule = {},
                                       std::size_t bins = 20);

/// Fits the final GP on the state's dataset and evaluates it on `truth`.
DiagnosticsReport evaluate_against_truth(const AdaptiveState& state, const gp::GPModel& model,
                                         const LabeledSamples& truth);

nlohmann::json to_json(const AdaptiveConfig& cfg);
AdaptiveConfig adaptive_config_from_json(const nlohmann::json& j,
                                         const AdaptiveConfig& defaults = {});
nlohmann::json to_json(const IterationRecord& rec, const UncertaintySpace& space);
IterationRecord iteration_record_from_json(const nlohmann::json& j, const UncertaintySpace& space);
nlohmann::json to_json(const AdaptiveState& state, const UncertaintySpace& space);
AdaptiveState adaptive_state_from_json(const nlohmann::json& j, const UncertaintySpace& space);
nlohmann::json to_json(const DiagnosticsReport& rep);

} // namespace sdforge
