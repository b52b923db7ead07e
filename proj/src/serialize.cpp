#include "sdforge/serialize.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include "sdforge/error.hpp"

namespace sdforge {

using nlohmann::json;

json to_json(const Box& box, const UncertaintySpace& space) {
    json limits = json::array();
    for (std::size_t d : box.restricted_dims())
        limits.push_back({{"dim", space.dims[d].name}, {"low", box.limits[d]->low}, {"high", box.limits[d]->high}});
    return {{"limits", limits}};
}

Box box_from_json(const json& j, const UncertaintySpace& space) {
    Box box(space.k());
    try {
        for (const auto& lim : j.at("limits")) {
            const auto name = lim.at("dim").get<std::string>();
            const auto d = space.index_of(name);
            if (!d) throw ValidationError("box: unknown dimension '" + name + "'");
            Interval iv{lim.at("low").get<double>(), lim.at("high").get<double>()};
            if (!(iv.low < iv.high)) throw ValidationError("box: empty interval on '" + name + "'");
            box.limits[*d] = iv;
        }
    } catch (const json::exception& e) {
        throw ValidationError(std::string("box: ") + e.what());
    }
    return box;
}

json to_json(const BoxStats& s) {
    return {{"coverage", s.coverage},
            {"density", s.density},
            {"support", s.support},
            {"vulnerable_support", s.vulnerable_support},
            {"interpretability", s.interpretability},
            {"n_inside", s.n_inside},
            {"n_vulnerable_inside", s.n_vulnerable_inside}};
}

json to_json(const PeelStep& step, const UncertaintySpace& space) {
    json j = to_json(step.stats);
    j["limits"] = to_json(step.box, space)["limits"];
    j["peeled_dim"] = step.peeled_dim ? json(space.dims[*step.peeled_dim].name) : json(nullptr);
    j["peeled_side"] = step.peeled_dim ? json(to_string(step.peeled_side)) : json(nullptr);
    return j;
}

json to_json(const PeelingTrajectory& traj, const UncertaintySpace& space) {
    json steps = json::array();
    for (const auto& s : traj.steps) steps.push_back(to_json(s, space));
    return {{"steps", steps},
            {"selected_index", traj.selected_index ? json(*traj.selected_index) : json(nullptr)}};
}

json to_json(const CoverRound& round, const UncertaintySpace& space) {
    return {{"box", to_json(round.box, space)},
            {"stats", to_json(round.stats)},
            {"stats_full", to_json(round.stats_full)},
            {"selected_index", round.selected_index},
            {"cumulative_coverage", round.cumulative_coverage}};
}

json to_json(const cart::TreeNode& node, const UncertaintySpace& space) {
    json j = {{"n_negative", node.n_negative}, {"n_positive", node.n_positive}};
    if (node.is_leaf()) {
        j["leaf_label"] = node.leaf_label.value_or(0);
        j["leaf_stats"] = to_json(node.leaf_stats);
    } else {
        j["split_dim"] = space.dims[*node.split_dim].name;
        j["split_value"] = *node.split_value;
        j["left"] = to_json(*node.left, space);
        j["right"] = to_json(*node.right, space);
    }
    return j;
}

json to_json(const cart::LeafBox& leaf, const UncertaintySpace& space) {
    return {{"box", to_json(leaf.box, space)}, {"stats", to_json(leaf.stats)}};
}

json rows_to_json(const Eigen::MatrixXd& m) {
    json out = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index d = 0; d < m.cols(); ++d) row.push_back(m(i, d));
        out.push_back(std::move(row));
    }
    return out;
}

Eigen::MatrixXd rows_from_json(const json& j, std::size_t cols) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (j[i].size() != cols) throw ParseError("matrix row has wrong length");
        for (std::size_t d = 0; d < cols; ++d)
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = j[i][d].get<double>();
    }
    return m;
}

json vector_to_json(const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd vector_from_json(const json& j) {
    const auto values = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) {
        while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
        while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
        out.push_back(cell);
    }
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_cell(const std::string& cell, std::size_t line_no) {
    double v = 0.0;
    const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (res.ec != std::errc{} || res.ptr != cell.data() + cell.size())
        throw ParseError("csv line " + std::to_string(line_no) + ": '" + cell + "' is not a number");
    return v;
}

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};

Table parse_csv(const std::string& text) {
    Table t;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = split_line(line);
        if (t.header.empty()) {
            t.header = std::move(cells);
            continue;
        }
        if (cells.size() != t.header.size())
            throw ParseError("csv line " + std::to_string(line_no) + ": expected " +
                             std::to_string(t.header.size()) + " columns");
        std::vector<double> row;
        for (const auto& c : cells) row.push_back(parse_cell(c, line_no));
        t.rows.push_back(std::move(row));
    }
    if (t.header.empty()) throw ParseError("csv: missing header row");
    return t;
}

std::vector<std::size_t> dim_columns(const Table& t, const UncertaintySpace& space) {
    std::vector<std::size_t> cols;
    for (const auto& d : space.dims) {
        auto it = std::find(t.header.begin(), t.header.end(), d.name);
        if (it == t.header.end()) throw ParseError("csv: missing column '" + d.name + "'");
        cols.push_back(static_cast<std::size_t>(it - t.header.begin()));
    }
    return cols;
}

void write_dims_header(std::ostringstream& out, const UncertaintySpace& space) {
    for (std::size_t d = 0; d < space.k(); ++d) out << (d ? "," : "") << space.dims[d].name;
}

void write_point(std::ostringstream& out, const Eigen::MatrixXd& points, Eigen::Index i) {
    for (Eigen::Index d = 0; d < points.cols(); ++d) out << (d ? "," : "") << format_double(points(i, d));
}

} // namespace

std::string samples_csv(const SampleMatrix& samples) {
    std::ostringstream out;
    write_dims_header(out, samples.space);
    out << '\n';
    for (Eigen::Index i = 0; i < samples.points.rows(); ++i) {
        write_point(out, samples.points, i);
        out << '\n';
    }
    return out.str();
}

SampleMatrix samples_from_csv(const std::string& text, const UncertaintySpace& space) {
    const Table t = parse_csv(text);
    const auto cols = dim_columns(t, space);
    SampleMatrix s{Eigen::MatrixXd(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(space.k())), space};
    for (std::size_t i = 0; i < t.rows.size(); ++i)
        for (std::size_t d = 0; d < cols.size(); ++d)
            s.points(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = t.rows[i][cols[d]];
    return s;
}

std::string outcomes_csv(const UncertaintySpace& space, const Eigen::MatrixXd& points,
                         const std::vector<ScenarioOutcome>& outcomes, const VulnerabilityRule& rule) {
    std::ostringstream out;
    write_dims_header(out, space);
    out << ",stress_baseline,stress_policy,delta,vulnerable\n";
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        const auto& o = outcomes[static_cast<std::size_t>(i)];
        write_point(out, points, i);
        out << ',' << format_double(o.stress_baseline) << ',' << format_double(o.stress_policy) << ','
            << format_double(o.delta) << ',' << (rule.is_vulnerable(o.delta) ? 1 : 0) << '\n';
    }
    return out.str();
}

std::string labeled_csv(const UncertaintySpace& space, const LabeledSamples& data) {
    std::ostringstream out;
    write_dims_header(out, space);
    out << ",output,vulnerable\n";
    for (Eigen::Index i = 0; i < data.points.rows(); ++i) {
        write_point(out, data.points, i);
        out << ',' << format_double(data.outputs(i)) << ',' << int(data.labels[static_cast<std::size_t>(i)]) << '\n';
    }
    return out.str();
}

LabeledSamples labeled_from_csv(const std::string& text, const UncertaintySpace& space) {
    const Table t = parse_csv(text);
    const auto cols = dim_columns(t, space);
    auto find = [&](const std::string& name) -> std::optional<std::size_t> {
        auto it = std::find(t.header.begin(), t.header.end(), name);
        if (it == t.header.end()) return std::nullopt;
        return static_cast<std::size_t>(it - t.header.begin());
    };
    const auto out_col = find("output") ? find("output") : find("delta");
    const auto lab_col = find("vulnerable");
    if (!out_col || !lab_col) throw ParseError("csv: need 'output' (or 'delta') and 'vulnerable' columns");
    LabeledSamples s;
    const auto n = static_cast<Eigen::Index>(t.rows.size());
    s.points.resize(n, static_cast<Eigen::Index>(space.k()));
    s.outputs.resize(n);
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        for (std::size_t d = 0; d < cols.size(); ++d)
            s.points(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = t.rows[i][cols[d]];
        s.outputs(static_cast<Eigen::Index>(i)) = t.rows[i][*out_col];
        s.labels.push_back(t.rows[i][*lab_col] != 0.0 ? 1 : 0);
    }
    return s;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << content;
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

std::string sha256_hex(const std::string& content) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(content.data(), content.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("sha256 failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

} // namespace sdforge
