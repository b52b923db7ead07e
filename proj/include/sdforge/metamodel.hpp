#pragma once

// Gaussian-process regression metamodel with a squared-exponential ARD kernel.
// Inputs are mapped to the unit cube through the space bounds and outputs are
// standardized before fitting.

#include <cstdint>
#include <variant>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "sdforge/data.hpp"

namespace sdforge::gp {

struct KernelParams {
    double signal_variance = 1.0;
    Eigen::VectorXd length_scales; // normalized units, one per dim
    double noise_variance = 0.0;

    void validate(std::size_t k) const;
};

struct FixedHyper {
    KernelParams params;
};

struct OptimizeHyper {
    std::size_t budget = 200; // likelihood evaluations in total
    std::size_t starts = 8;
    std::uint64_t seed = 0;
    double bound_low = 1e-2;  // box for signal variance and length scales
    double bound_high = 1e2;
    double noise_low = 1e-8;  // box for the noise variance
    double noise_high = 1e-1;
};

using HyperChoice = std::variant<FixedHyper, OptimizeHyper>;

struct OutputStats {
    double mean = 0.0;
    double std = 1.0;
};

struct GPModel {
    KernelParams params;
    UncertaintySpace space;
    Eigen::MatrixXd training_points;  // normalized to the unit cube
    Eigen::VectorXd training_outputs; // standardized
    Eigen::MatrixXd factorization;    // lower Cholesky factor of K + (noise + jitter) I
    Eigen::VectorXd alpha;
    OutputStats output_stats;
    double jitter = 0.0;
    double log_marginal_likelihood = 0.0;

    std::size_t n() const { return static_cast<std::size_t>(training_points.rows()); }
};

struct FitReport {
    std::vector<double> initial_lml; // one per multi-start initial candidate
    double best_lml = 0.0;
    std::size_t evaluations = 0;
};

struct PosteriorPrediction {
    Eigen::VectorXd mean;     // native output units
    Eigen::VectorXd variance; // >= 0
};

Eigen::MatrixXd normalize_points(const Eigen::MatrixXd& points, const UncertaintySpace& space);

/// SE kernel matrix between rows of a and b (normalized inputs).
Eigen::MatrixXd kernel(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                       const KernelParams& params);

/// Log marginal likelihood of standardized outputs y at normalized inputs x.
/// Returns -infinity when the kernel matrix cannot be factorized.
double log_marginal_likelihood(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                               const KernelParams& params);

GPModel fit(const LabeledSamples& data, const UncertaintySpace& space, const HyperChoice& hyper,
            FitReport* report = nullptr);

PosteriorPrediction predict(const GPModel& model, const Eigen::MatrixXd& query);

/// {params, normalized training set, output_stats}; the factorization is
/// recomputed by model_from_json.
nlohmann::json to_json(const GPModel& model);
GPModel model_from_json(const nlohmann::json& j);

} // namespace sdforge::gp
