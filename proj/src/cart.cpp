#include "sdforge/cart.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "sdforge/error.hpp"

namespace sdforge::cart {

void CartConfig::validate() const {
    if (min_split < 1 || min_leaf < 1 || max_depth < 1)
        throw ValidationError("cart: min_split, min_leaf and max_depth must be positive");
    if (min_leaf > min_split) throw ValidationError("cart: min_leaf must be <= min_split");
}

TreeNode TreeNode::clone() const {
    TreeNode out;
    out.split_dim = split_dim;
    out.split_value = split_value;
    out.leaf_label = leaf_label;
    out.leaf_stats = leaf_stats;
    out.n_negative = n_negative;
    out.n_positive = n_positive;
    if (left) out.left = std::make_unique<TreeNode>(left->clone());
    if (right) out.right = std::make_unique<TreeNode>(right->clone());
    return out;
}

namespace {

std::size_t errors_of(std::size_t neg, std::size_t pos) { return pos > neg ? neg : pos; }

double gini_mass(std::size_t neg, std::size_t pos) {
    const std::size_t n = neg + pos;
    return n == 0 ? 0.0 : 2.0 * static_cast<double>(neg) * static_cast<double>(pos) / static_cast<double>(n);
}

struct Totals {
    std::size_t n = 0;
    std::size_t vulnerable = 0;
};

BoxStats leaf_stats(std::size_t neg, std::size_t pos, const Totals& totals, std::size_t interpretability) {
    BoxStats s;
    s.n_inside = neg + pos;
    s.n_vulnerable_inside = pos;
    s.interpretability = interpretability;
    s.coverage = totals.vulnerable == 0 ? 0.0 : static_cast<double>(pos) / static_cast<double>(totals.vulnerable);
    s.density = s.n_inside == 0 ? 0.0 : static_cast<double>(pos) / static_cast<double>(s.n_inside);
    s.support = totals.n == 0 ? 0.0 : static_cast<double>(s.n_inside) / static_cast<double>(totals.n);
    s.vulnerable_support = totals.n == 0 ? 0.0 : static_cast<double>(pos) / static_cast<double>(totals.n);
    return s;
}

void make_leaf(TreeNode& node, const Totals& totals, std::size_t interpretability) {
    node.split_dim.reset();
    node.split_value.reset();
    node.left.reset();
    node.right.reset();
    node.leaf_label = node.majority();
    node.leaf_stats = leaf_stats(node.n_negative, node.n_positive, totals, interpretability);
}

struct Split {
    std::size_t dim = 0;
    double threshold = 0.0;
    std::size_t errors = 0;
    double gini = 0.0;
};

class Grower {
public:
    Grower(const LabeledSamples& data, const CartConfig& cfg)
        : data_(data), cfg_(cfg), totals_{data.size(), data.vulnerable_count()} {}

    TreeNode build(std::vector<std::size_t> rows, std::size_t depth, std::set<std::size_t> path_dims) {
        TreeNode node;
        for (auto r : rows) (data_.labels[r] ? node.n_positive : node.n_negative)++;
        const bool pure = node.n_positive == 0 || node.n_negative == 0;
        if (pure || rows.size() < cfg_.min_split || depth >= cfg_.max_depth) {
            make_leaf(node, totals_, path_dims.size());
            return node;
        }
        const auto split = best_split(rows, node);
        if (!split) {
            make_leaf(node, totals_, path_dims.size());
            return node;
        }
        std::vector<std::size_t> left_rows, right_rows;
        for (auto r : rows) {
            const double v = data_.points(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(split->dim));
            (v <= split->threshold ? left_rows : right_rows).push_back(r);
        }
        node.split_dim = split->dim;
        node.split_value = split->threshold;
        path_dims.insert(split->dim);
        node.left = std::make_unique<TreeNode>(build(std::move(left_rows), depth + 1, path_dims));
        node.right = std::make_unique<TreeNode>(build(std::move(right_rows), depth + 1, path_dims));
        return node;
    }

private:
    // Lexicographic (misclassification errors, Gini mass, dim, threshold); a
    // split is only taken if it lowers the errors or the Gini mass.
    std::optional<Split> best_split(const std::vector<std::size_t>& rows, const TreeNode& node) const {
        const std::size_t n = rows.size();
        const std::size_t parent_errors = errors_of(node.n_negative, node.n_positive);
        const double parent_gini = gini_mass(node.n_negative, node.n_positive);
        std::optional<Split> best;
        std::vector<std::pair<double, std::uint8_t>> column(n);
        for (std::size_t d = 0; d < data_.k(); ++d) {
            for (std::size_t i = 0; i < n; ++i)
                column[i] = {data_.points(static_cast<Eigen::Index>(rows[i]), static_cast<Eigen::Index>(d)),
                             data_.labels[rows[i]]};
            std::sort(column.begin(), column.end());
            std::size_t left_pos = 0, left_neg = 0;
            for (std::size_t i = 0; i + 1 < n; ++i) {
                (column[i].second ? left_pos : left_neg)++;
                if (column[i].first == column[i + 1].first) continue;
                const std::size_t n_left = i + 1;
                if (n_left < cfg_.min_leaf || n - n_left < cfg_.min_leaf) continue;
                const std::size_t right_pos = node.n_positive - left_pos;
                const std::size_t right_neg = node.n_negative - left_neg;
                Split s{d, 0.5 * (column[i].first + column[i + 1].first),
                        errors_of(left_neg, left_pos) + errors_of(right_neg, right_pos),
                        gini_mass(left_neg, left_pos) + gini_mass(right_neg, right_pos)};
                if (!best || s.errors < best->errors || (s.errors == best->errors && s.gini < best->gini))
                    best = s;
            }
        }
        if (!best) return std::nullopt;
        if (best->errors < parent_errors || best->gini < parent_gini - 1e-12) return best;
        return std::nullopt;
    }

    const LabeledSamples& data_;
    const CartConfig& cfg_;
    Totals totals_;
};

// Returns true if anything collapsed.
bool prune_pass(TreeNode& node, const Totals& totals, std::set<std::size_t> path_dims) {
    if (node.is_leaf()) return false;
    auto child_dims = path_dims;
    child_dims.insert(*node.split_dim);
    bool changed = prune_pass(*node.left, totals, child_dims);
    changed = prune_pass(*node.right, totals, child_dims) || changed;
    if (node.left->is_leaf() && node.right->is_leaf()) {
        const std::size_t children = misclassified(*node.left) + misclassified(*node.right);
        if (node.node_errors() <= children) {
            make_leaf(node, totals, path_dims.size());
            changed = true;
        }
    }
    return changed;
}

void collect_boxes(const TreeNode& node, Box box, const UncertaintySpace& space, const LabeledSamples& data,
                   std::vector<LeafBox>& out) {
    if (node.is_leaf()) {
        if (node.leaf_label.value_or(0) == 1) out.push_back({box, box_stats(box, data)});
        return;
    }
    const std::size_t d = *node.split_dim;
    const double t = *node.split_value;
    const Interval cur = box.bounds(d, space);
    Box left = box, right = box;
    left.limits[d] = Interval{cur.low, std::min(cur.high, t)};
    right.limits[d] = Interval{std::max(cur.low, t), cur.high};
    collect_boxes(*node.left, std::move(left), space, data, out);
    collect_boxes(*node.right, std::move(right), space, data, out);
}

} // namespace

TreeNode grow(const LabeledSamples& data, const CartConfig& cfg) {
    cfg.validate();
    if (data.empty()) throw ValidationError("cart grow: empty data");
    std::vector<std::size_t> rows(data.size());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    return Grower(data, cfg).build(std::move(rows), 0, {});
}

TreeNode prune(const TreeNode& tree, const CartConfig& cfg) {
    cfg.validate();
    TreeNode out = tree.clone();
    const Totals totals{out.n_negative + out.n_positive, out.n_positive};
    while (prune_pass(out, totals, {})) {
    }
    return out;
}

std::size_t leaf_count(const TreeNode& tree) {
    return tree.is_leaf() ? 1 : leaf_count(*tree.left) + leaf_count(*tree.right);
}

std::size_t depth(const TreeNode& tree) {
    return tree.is_leaf() ? 0 : 1 + std::max(depth(*tree.left), depth(*tree.right));
}

std::size_t misclassified(const TreeNode& tree) {
    if (tree.is_leaf()) return tree.leaf_label.value_or(0) == 1 ? tree.n_negative : tree.n_positive;
    return misclassified(*tree.left) + misclassified(*tree.right);
}

int classify(const TreeNode& tree, const Eigen::Ref<const Eigen::RowVectorXd>& x) {
    const TreeNode* node = &tree;
    while (!node->is_leaf())
        node = x(static_cast<Eigen::Index>(*node->split_dim)) <= *node->split_value ? node->left.get()
                                                                                     : node->right.get();
    return node->leaf_label.value_or(0);
}

std::size_t misclassified(const TreeNode& tree, const LabeledSamples& data) {
    std::size_t errors = 0;
    for (Eigen::Index i = 0; i < data.points.rows(); ++i)
        if (classify(tree, data.points.row(i)) != data.labels[static_cast<std::size_t>(i)]) ++errors;
    return errors;
}

std::vector<LeafBox> leaves_to_boxes(const TreeNode& tree, const UncertaintySpace& space,
                                     const LabeledSamples& data) {
    std::vector<LeafBox> out;
    collect_boxes(tree, Box(space.k()), space, data, out);
    return out;
}

} // namespace sdforge::cart
