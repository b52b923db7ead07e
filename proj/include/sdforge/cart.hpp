#pragma once

// Classification trees for scenario discovery: misclassification-minimizing
// binary splits, fixpoint pruning and extraction of vulnerable leaf boxes.

#include <cstddef>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "sdforge/prim.hpp"

namespace sdforge::cart {

struct CartConfig {
    std::size_t min_split = 20;
    std::size_t min_leaf = 10;
    std::size_t max_depth = 12;

    void validate() const;
};

struct TreeNode {
    std::optional<std::size_t> split_dim;
    std::optional<double> split_value; // left: x <= value, right: x > value
    std::unique_ptr<TreeNode> left;
    std::unique_ptr<TreeNode> right;
    std::optional<int> leaf_label;
    BoxStats leaf_stats;

    // Training counts reaching this node; kept on internal nodes for pruning.
    std::size_t n_negative = 0;
    std::size_t n_positive = 0;

    bool is_leaf() const { return !left; }
    int majority() const { return n_positive > n_negative ? 1 : 0; }
    std::size_t node_errors() const { return majority() == 1 ? n_negative : n_positive; }

    TreeNode clone() const;
};

TreeNode grow(const LabeledSamples& data, const CartConfig& cfg);

/// Collapses sibling leaves whose merge keeps the misclassification count,
/// repeated bottom-up to a fixpoint.
TreeNode prune(const TreeNode& tree, const CartConfig& cfg);

std::size_t leaf_count(const TreeNode& tree);
std::size_t depth(const TreeNode& tree);
std::size_t misclassified(const TreeNode& tree);
int classify(const TreeNode& tree, const Eigen::Ref<const Eigen::RowVectorXd>& x);
/// Misclassification count of `tree` on `data`.
std::size_t misclassified(const TreeNode& tree, const LabeledSamples& data);

struct LeafBox {
    Box box;
    BoxStats stats;
};

/// One box per vulnerable leaf (path constraints intersected with the space
/// bounds); boxes are pairwise disjoint.
std::vector<LeafBox> leaves_to_boxes(const TreeNode& tree, const UncertaintySpace& space,
                                     const LabeledSamples& data);

} // namespace sdforge::cart
