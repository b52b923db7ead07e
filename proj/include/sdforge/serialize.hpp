#pragma once

// JSON and CSV encodings shared by the CLI and the service.

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "sdforge/cart.hpp"
#include "sdforge/prim.hpp"
#include "sdforge/simulator.hpp"

namespace sdforge {

inline constexpr int kSchemaVersion = 1;

nlohmann::json to_json(const Box& box, const UncertaintySpace& space);
Box box_from_json(const nlohmann::json& j, const UncertaintySpace& space);
nlohmann::json to_json(const BoxStats& stats);
nlohmann::json to_json(const PeelStep& step, const UncertaintySpace& space);
nlohmann::json to_json(const PeelingTrajectory& traj, const UncertaintySpace& space);
nlohmann::json to_json(const CoverRound& round, const UncertaintySpace& space);
nlohmann::json to_json(const cart::TreeNode& node, const UncertaintySpace& space);
nlohmann::json to_json(const cart::LeafBox& leaf, const UncertaintySpace& space);

nlohmann::json rows_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd rows_from_json(const nlohmann::json& j, std::size_t cols);
nlohmann::json vector_to_json(const Eigen::VectorXd& v);
Eigen::VectorXd vector_from_json(const nlohmann::json& j);

/// Shortest round-trip text for a double.
std::string format_double(double v);

/// Header row of dim names, one row per point.
std::string samples_csv(const SampleMatrix& samples);
SampleMatrix samples_from_csv(const std::string& text, const UncertaintySpace& space);

/// Dim columns followed by stress_baseline, stress_policy, delta, vulnerable.
std::string outcomes_csv(const UncertaintySpace& space, const Eigen::MatrixXd& points,
                         const std::vector<ScenarioOutcome>& outcomes,
                         const VulnerabilityRule& rule);

/// Dim columns followed by output, vulnerable.
std::string labeled_csv(const UncertaintySpace& space, const LabeledSamples& data);
LabeledSamples labeled_from_csv(const std::string& text, const UncertaintySpace& space);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& content);
/// Pretty JSON with a trailing newline.
std::string dump(const nlohmann::json& j);

std::string sha256_hex(const std::string& content);

} // namespace sdforge
