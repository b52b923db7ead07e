#include "sdforge/metamodel.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/Cholesky>

#include "sdforge/error.hpp"
#include "sdforge/rng.hpp"

namespace sdforge::gp {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

void KernelParams::validate(std::size_t k) const {
    if (!(signal_variance > 0.0) || !std::isfinite(signal_variance))
        throw ValidationError("gp: signal_variance must be > 0");
    if (!(noise_variance >= 0.0) || !std::isfinite(noise_variance))
        throw ValidationError("gp: noise_variance must be >= 0");
    if (static_cast<std::size_t>(length_scales.size()) != k)
        throw ValidationError("gp: need one length scale per dimension");
    for (Index d = 0; d < length_scales.size(); ++d)
        if (!(length_scales(d) > 0.0) || !std::isfinite(length_scales(d)))
            throw ValidationError("gp: length scales must be > 0");
}

MatrixXd normalize_points(const MatrixXd& points, const UncertaintySpace& space) {
    if (static_cast<std::size_t>(points.cols()) != space.k())
        throw ValidationError("gp: point dimension does not match the space");
    MatrixXd out(points.rows(), points.cols());
    for (Index d = 0; d < points.cols(); ++d) {
        const auto& dim = space.dims[static_cast<std::size_t>(d)];
        out.col(d) = (points.col(d).array() - dim.low) / (dim.high - dim.low);
    }
    return out;
}

MatrixXd kernel(const MatrixXd& a, const MatrixXd& b, const KernelParams& params) {
    const Index k = a.cols();
    const VectorXd inv_l = params.length_scales.cwiseInverse();
    MatrixXd as = a * inv_l.asDiagonal();
    MatrixXd bs = b * inv_l.asDiagonal();
    MatrixXd out(a.rows(), b.rows());
    for (Index j = 0; j < b.rows(); ++j) {
        for (Index i = 0; i < a.rows(); ++i) {
            double sq = 0.0;
            for (Index d = 0; d < k; ++d) {
                const double diff = as(i, d) - bs(j, d);
                sq += diff * diff;
            }
            out(i, j) = params.signal_variance * std::exp(-0.5 * sq);
        }
    }
    return out;
}

namespace {

struct Factor {
    MatrixXd lower;
    double jitter = 0.0;
};

// Cholesky of K + noise I, escalating jitter 1e-8, 1e-7, ... 1e-2 on failure.
std::optional<Factor> factorize(const MatrixXd& k_matrix, double noise) {
    const Index n = k_matrix.rows();
    double jitter = 0.0;
    while (true) {
        MatrixXd a = k_matrix;
        a.diagonal().array() += noise + jitter;
        Eigen::LLT<MatrixXd> llt(a);
        if (llt.info() == Eigen::Success) {
            MatrixXd lower = llt.matrixL();
            bool ok = true;
            for (Index i = 0; i < n && ok; ++i) ok = std::isfinite(lower(i, i)) && lower(i, i) > 0.0;
            if (ok) return Factor{std::move(lower), jitter};
        }
        if (jitter == 0.0)
            jitter = 1e-8;
        else if (jitter < 1e-2 * (1 - 1e-9))
            jitter *= 10.0;
        else
            return std::nullopt;
    }
}

double lml_from_factor(const Factor& f, const VectorXd& y, VectorXd* alpha_out) {
    const auto tri = f.lower.triangularView<Eigen::Lower>();
    VectorXd alpha = tri.solve(y);
    alpha = tri.transpose().solve(alpha);
    const double data_fit = -0.5 * y.dot(alpha);
    const double complexity = -f.lower.diagonal().array().log().sum();
    const double n = static_cast<double>(y.size());
    if (alpha_out) *alpha_out = std::move(alpha);
    return data_fit + complexity - 0.5 * n * std::log(2.0 * std::numbers::pi);
}

struct Standardized {
    VectorXd y;
    OutputStats stats;
};

Standardized standardize(const VectorXd& outputs) {
    Standardized s;
    const double n = static_cast<double>(outputs.size());
    s.stats.mean = outputs.mean();
    const double var = (outputs.array() - s.stats.mean).square().sum() / n;
    s.stats.std = var > 1e-24 ? std::sqrt(var) : 1.0;
    s.y = (outputs.array() - s.stats.mean) / s.stats.std;
    return s;
}

// Parameter vector in log space: [signal, l_1..l_k, noise].
KernelParams from_log(const VectorXd& theta) {
    const Index k = theta.size() - 2;
    KernelParams p;
    p.signal_variance = std::exp(theta(0));
    p.length_scales = theta.segment(1, k).array().exp();
    p.noise_variance = std::exp(theta(k + 1));
    return p;
}

double normal(Engine& eng) {
    // Box-Muller on the portable uniform source.
    const double u1 = 1.0 - uniform01(eng);
    const double u2 = uniform01(eng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

KernelParams optimize(const MatrixXd& x, const VectorXd& y, const OptimizeHyper& opt, FitReport* report) {
    const Index k = x.cols();
    const Index dim = k + 2;
    VectorXd lo(dim), hi(dim);
    lo.setConstant(std::log(opt.bound_low));
    hi.setConstant(std::log(opt.bound_high));
    lo(dim - 1) = std::log(opt.noise_low);
    hi(dim - 1) = std::log(opt.noise_high);

    Engine eng = make_engine(opt.seed);
    const auto evaluate = [&](const VectorXd& theta) { return log_marginal_likelihood(x, y, from_log(theta)); };
    const auto clamp = [&](VectorXd theta) { return theta.cwiseMax(lo).cwiseMin(hi).eval(); };

    const std::size_t starts = std::max<std::size_t>(1, opt.starts);
    const std::size_t budget = std::max(opt.budget, starts);
    const std::size_t per_start = budget / starts;

    VectorXd best_theta;
    double best = -std::numeric_limits<double>::infinity();
    std::size_t evaluations = 0;
    std::vector<double> initial;

    for (std::size_t s = 0; s < starts; ++s) {
        VectorXd theta(dim);
        if (s == 0) {
            // Unit signal, a quarter of the cube as length scale, tiny noise.
            theta.setConstant(std::log(0.25));
            theta(0) = 0.0;
            theta(dim - 1) = std::log(std::max(opt.noise_low, 1e-6));
            theta = clamp(theta);
        } else {
            for (Index d = 0; d < dim; ++d) theta(d) = lo(d) + uniform01(eng) * (hi(d) - lo(d));
        }
        double value = evaluate(theta);
        ++evaluations;
        initial.push_back(value);
        if (value > best || best_theta.size() == 0) {
            best = value;
            best_theta = theta;
        }
        double radius = 0.5;
        for (std::size_t e = 1; e < per_start; ++e) {
            VectorXd cand(dim);
            for (Index d = 0; d < dim; ++d) cand(d) = theta(d) + radius * normal(eng);
            cand = clamp(cand);
            const double cv = evaluate(cand);
            ++evaluations;
            if (cv > value) {
                theta = cand;
                value = cv;
                radius = std::min(radius * 1.3, 2.0);
            } else {
                radius = std::max(radius * 0.85, 0.02);
            }
            if (value > best) {
                best = value;
                best_theta = theta;
            }
        }
    }
    if (!std::isfinite(best)) throw NumericalError("gp: no hyperparameter candidate could be factorized");
    if (report) {
        report->initial_lml = std::move(initial);
        report->best_lml = best;
        report->evaluations = evaluations;
    }
    return from_log(best_theta);
}

GPModel assemble(KernelParams params, const UncertaintySpace& space, MatrixXd x, VectorXd y, OutputStats stats) {
    GPModel model;
    model.params = std::move(params);
    model.space = space;
    const MatrixXd k_matrix = kernel(x, x, model.params);
    auto factor = factorize(k_matrix, model.params.noise_variance);
    if (!factor) throw NumericalError("gp: kernel matrix not positive definite after maximum jitter");
    model.log_marginal_likelihood = lml_from_factor(*factor, y, &model.alpha);
    model.factorization = std::move(factor->lower);
    model.jitter = factor->jitter;
    model.training_points = std::move(x);
    model.training_outputs = std::move(y);
    model.output_stats = stats;
    return model;
}

} // namespace

double log_marginal_likelihood(const MatrixXd& x, const VectorXd& y, const KernelParams& params) {
    const auto factor = factorize(kernel(x, x, params), params.noise_variance);
    if (!factor) return -std::numeric_limits<double>::infinity();
    const double v = lml_from_factor(*factor, y, nullptr);
    return std::isfinite(v) ? v : -std::numeric_limits<double>::infinity();
}

GPModel fit(const LabeledSamples& data, const UncertaintySpace& space, const HyperChoice& hyper,
            FitReport* report) {
    if (data.size() < 2) throw ValidationError("gp fit: need at least 2 samples");
    MatrixXd x = normalize_points(data.points, space);
    Standardized s = standardize(data.outputs);

    KernelParams params;
    if (const auto* fixed = std::get_if<FixedHyper>(&hyper)) {
        params = fixed->params;
        params.validate(space.k());
        if (report) {
            report->best_lml = log_marginal_likelihood(x, s.y, params);
            report->initial_lml = {report->best_lml};
            report->evaluations = 1;
        }
    } else {
        params = optimize(x, s.y, std::get<OptimizeHyper>(hyper), report);
    }
    return assemble(std::move(params), space, std::move(x), std::move(s.y), s.stats);
}

PosteriorPrediction predict(const GPModel& model, const MatrixXd& query) {
    if (static_cast<std::size_t>(query.cols()) != model.space.k())
        throw ValidationError("gp predict: query dimension does not match the model");
    PosteriorPrediction out;
    if (query.rows() == 0) return out;
    const MatrixXd xq = normalize_points(query, model.space);
    const MatrixXd ks = kernel(xq, model.training_points, model.params); // m x n
    const double sd = model.output_stats.std;
    out.mean = (ks * model.alpha).array() * sd + model.output_stats.mean;
    const MatrixXd v = model.factorization.triangularView<Eigen::Lower>().solve(ks.transpose()); // n x m
    out.variance.resize(query.rows());
    for (Index i = 0; i < query.rows(); ++i) {
        const double var = model.params.signal_variance - v.col(i).squaredNorm() + model.params.noise_variance;
        out.variance(i) = std::max(var, 0.0) * sd * sd;
    }
    return out;
}

nlohmann::json to_json(const GPModel& model) {
    using nlohmann::json;
    json dims = json::array();
    for (const auto& d : model.space.dims)
        dims.push_back({{"name", d.name}, {"low", d.low}, {"high", d.high}, {"baseline", d.baseline}});
    json points = json::array();
    for (Index i = 0; i < model.training_points.rows(); ++i) {
        json row = json::array();
        for (Index d = 0; d < model.training_points.cols(); ++d) row.push_back(model.training_points(i, d));
        points.push_back(std::move(row));
    }
    return {
        {"params",
         {{"signal_variance", model.params.signal_variance},
          {"length_scales", std::vector<double>(model.params.length_scales.data(),
                                                model.params.length_scales.data() + model.params.length_scales.size())},
          {"noise_variance", model.params.noise_variance}}},
        {"space", {{"dims", dims}}},
        {"training_points", points},
        {"training_outputs", std::vector<double>(model.training_outputs.data(),
                                                 model.training_outputs.data() + model.training_outputs.size())},
        {"output_stats", {{"mean", model.output_stats.mean}, {"std", model.output_stats.std}}},
    };
}

GPModel model_from_json(const nlohmann::json& j) {
    try {
        KernelParams params;
        params.signal_variance = j.at("params").at("signal_variance").get<double>();
        const auto ls = j.at("params").at("length_scales").get<std::vector<double>>();
        params.length_scales = Eigen::Map<const VectorXd>(ls.data(), static_cast<Index>(ls.size()));
        params.noise_variance = j.at("params").at("noise_variance").get<double>();
        UncertaintySpace space;
        for (const auto& d : j.at("space").at("dims"))
            space.dims.push_back({d.at("name").get<std::string>(), d.at("low").get<double>(),
                                  d.at("high").get<double>(), d.at("baseline").get<double>()});
        params.validate(space.k());
        const auto& rows = j.at("training_points");
        MatrixXd x(static_cast<Index>(rows.size()), static_cast<Index>(space.k()));
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (std::size_t d = 0; d < space.k(); ++d)
                x(static_cast<Index>(i), static_cast<Index>(d)) = rows.at(i).at(d).get<double>();
        const auto ys = j.at("training_outputs").get<std::vector<double>>();
        VectorXd y = Eigen::Map<const VectorXd>(ys.data(), static_cast<Index>(ys.size()));
        OutputStats stats{j.at("output_stats").at("mean").get<double>(), j.at("output_stats").at("std").get<double>()};
        return assemble(std::move(params), space, std::move(x), std::move(y), stats);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("gp model: ") + e.what());
    }
}

} // namespace sdforge::gp
