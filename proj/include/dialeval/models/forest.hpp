#pragma once

// CART classification trees with Gini splits, bagged into a random forest.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "dialeval/models/common.hpp"
#include "dialeval/random.hpp"

namespace dialeval::models {

struct TreeNode {
    int feature = -1;  // -1 for leaves
    double threshold = 0.0;  // go left when value <= threshold
    int left = -1;
    int right = -1;
    std::vector<double> distribution;  // class fractions of the training samples reaching the node

    bool is_leaf() const { return feature < 0; }
};

struct TreeParams {
    std::size_t max_depth = 0;           // 0 = unlimited
    std::size_t features_per_split = 0;  // candidates drawn per node
};

inline double gini(std::span<const double> counts, double total) {
    if (total <= 0.0) return 0.0;
    double sum_sq = 0.0;
    for (double c : counts) sum_sq += (c / total) * (c / total);
    return 1.0 - sum_sq;
}

class DecisionTree {
public:
    /// Grows a tree on `samples` (row indices into X, repeats allowed for bootstrap).
    /// `importance` accumulates (n_node / n_root) * impurity decrease per feature.
    void fit(const Eigen::MatrixXd& X, std::span<const std::size_t> y, std::size_t classes,
             std::vector<std::size_t> samples, const TreeParams& params, Rng& rng) {
        nodes_.clear();
        classes_ = classes;
        importance_.assign(static_cast<std::size_t>(X.cols()), 0.0);
        root_size_ = static_cast<double>(samples.size());
        grow(X, y, samples, 0, samples.size(), 0, params, rng);
    }

    std::span<const TreeNode> nodes() const { return nodes_; }
    std::span<const double> importance() const { return importance_; }

    const TreeNode& leaf_for(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
        std::size_t i = 0;
        while (!nodes_[i].is_leaf()) {
            const TreeNode& n = nodes_[i];
            i = static_cast<std::size_t>(row(n.feature) <= n.threshold ? n.left : n.right);
        }
        return nodes_[i];
    }

    /// Class index of the leaf's majority (lowest index on ties).
    std::size_t predict_index(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
        const auto& dist = leaf_for(row).distribution;
        return static_cast<std::size_t>(std::max_element(dist.begin(), dist.end()) - dist.begin());
    }

    // Serialization support.
    std::vector<TreeNode>& mutable_nodes() { return nodes_; }
    std::vector<double>& mutable_importance() { return importance_; }

private:
    int grow(const Eigen::MatrixXd& X, std::span<const std::size_t> y, std::vector<std::size_t>& samples,
             std::size_t begin, std::size_t end, std::size_t depth, const TreeParams& params, Rng& rng) {
        const auto index = static_cast<int>(nodes_.size());
        nodes_.emplace_back();
        const double n = static_cast<double>(end - begin);
        std::vector<double> counts(classes_, 0.0);
        for (std::size_t i = begin; i < end; ++i) counts[y[samples[i]]] += 1.0;
        const double impurity = gini(counts, n);
        {
            auto& node = nodes_[static_cast<std::size_t>(index)];
            node.distribution.resize(classes_);
            for (std::size_t k = 0; k < classes_; ++k) node.distribution[k] = counts[k] / n;
        }
        const bool depth_exhausted = params.max_depth != 0 && depth >= params.max_depth;
        if (impurity <= 0.0 || end - begin < 2 || depth_exhausted) return index;

        const auto d = static_cast<std::size_t>(X.cols());
        std::vector<std::size_t> order(d);
        std::iota(order.begin(), order.end(), std::size_t{0});
        rng.shuffle(std::span(order));
        const std::size_t wanted = std::clamp<std::size_t>(params.features_per_split, 1, d);

        struct Best {
            int feature = -1;
            double threshold = 0.0;
            double child_impurity = 0.0;
        } best;
        std::vector<std::size_t> sorted(samples.begin() + static_cast<std::ptrdiff_t>(begin),
                                        samples.begin() + static_cast<std::ptrdiff_t>(end));
        std::vector<double> left(classes_), right(classes_);
        std::size_t tried_valid = 0;
        for (std::size_t f : order) {
            // Keep drawing candidates past the quota until one of them can split the node.
            if (tried_valid >= wanted && best.feature >= 0) break;
            const auto col = static_cast<Eigen::Index>(f);
            std::stable_sort(sorted.begin(), sorted.end(), [&](std::size_t a, std::size_t b) {
                return X(static_cast<Eigen::Index>(a), col) < X(static_cast<Eigen::Index>(b), col);
            });
            if (X(static_cast<Eigen::Index>(sorted.front()), col) == X(static_cast<Eigen::Index>(sorted.back()), col)) {
                continue;  // constant here; does not use up a candidate slot
            }
            ++tried_valid;
            std::fill(left.begin(), left.end(), 0.0);
            right = counts;
            for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
                const std::size_t k = y[sorted[i]];
                left[k] += 1.0;
                right[k] -= 1.0;
                const double v = X(static_cast<Eigen::Index>(sorted[i]), col);
                const double next = X(static_cast<Eigen::Index>(sorted[i + 1]), col);
                if (v == next) continue;
                const double nl = static_cast<double>(i + 1);
                const double nr = n - nl;
                const double child = (nl * gini(left, nl) + nr * gini(right, nr)) / n;
                if (best.feature < 0 || child < best.child_impurity) {
                    best.feature = static_cast<int>(f);
                    best.threshold = v + (next - v) / 2.0;
                    if (best.threshold >= next) best.threshold = v;
                    best.child_impurity = child;
                }
            }
        }
        if (best.feature < 0) return index;

        importance_[static_cast<std::size_t>(best.feature)] += (n / root_size_) * (impurity - best.child_impurity);
        const auto col = static_cast<Eigen::Index>(best.feature);
        const auto mid = std::stable_partition(samples.begin() + static_cast<std::ptrdiff_t>(begin),
                                               samples.begin() + static_cast<std::ptrdiff_t>(end),
                                               [&](std::size_t s) { return X(static_cast<Eigen::Index>(s), col) <= best.threshold; });
        const auto split = static_cast<std::size_t>(mid - samples.begin());
        const int l = grow(X, y, samples, begin, split, depth + 1, params, rng);
        const int r = grow(X, y, samples, split, end, depth + 1, params, rng);
        auto& node = nodes_[static_cast<std::size_t>(index)];
        node.feature = best.feature;
        node.threshold = best.threshold;
        node.left = l;
        node.right = r;
        return index;
    }

    std::vector<TreeNode> nodes_;
    std::vector<double> importance_;
    std::size_t classes_ = 0;
    double root_size_ = 1.0;
};

struct RandomForest {
    std::vector<DecisionTree> trees;
    std::size_t classes = 0;

    /// Tree t draws from its own stream derive_seed(seed, "rf", t), so the result does not
    /// depend on how trees are scheduled across threads.
    static RandomForest fit(const Eigen::MatrixXd& X, std::span<const std::size_t> y, std::size_t classes,
                            const ClassifierSpec& spec) {
        RandomForest forest;
        forest.classes = classes;
        forest.trees.resize(spec.n_trees);
        const auto d = static_cast<std::size_t>(X.cols());
        TreeParams params;
        params.max_depth = spec.max_depth;
        params.features_per_split = spec.features_per_split != 0
                                        ? spec.features_per_split
                                        : static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(d))));
        const std::size_t n = static_cast<std::size_t>(X.rows());

        auto fit_tree = [&](std::size_t t) {
            Rng rng(derive_seed(spec.seed, "rf", t));
            std::vector<std::size_t> samples(n);
            if (spec.bootstrap) {
                for (auto& s : samples) s = static_cast<std::size_t>(rng.below(n));
            } else {
                std::iota(samples.begin(), samples.end(), std::size_t{0});
            }
            forest.trees[t].fit(X, y, classes, std::move(samples), params, rng);
        };

        const std::size_t workers = std::min<std::size_t>(std::max(1u, std::thread::hardware_concurrency()), spec.n_trees);
        if (workers <= 1) {
            for (std::size_t t = 0; t < spec.n_trees; ++t) fit_tree(t);
        } else {
            std::vector<std::thread> pool;
            for (std::size_t w = 0; w < workers; ++w) {
                pool.emplace_back([&, w] {
                    for (std::size_t t = w; t < spec.n_trees; t += workers) fit_tree(t);
                });
            }
            for (auto& th : pool) th.join();
        }
        return forest;
    }

    /// Fraction of trees voting for each class.
    Eigen::MatrixXd vote_fractions(const Eigen::MatrixXd& X) const {
        Eigen::MatrixXd votes = Eigen::MatrixXd::Zero(X.rows(), static_cast<Eigen::Index>(classes));
        for (Eigen::Index i = 0; i < X.rows(); ++i) {
            for (const auto& tree : trees) votes(i, static_cast<Eigen::Index>(tree.predict_index(X.row(i)))) += 1.0;
        }
        return votes / static_cast<double>(trees.size());
    }

    /// Mean over trees of the per-tree impurity decrease.
    std::vector<double> importance(std::size_t features) const {
        std::vector<double> out(features, 0.0);
        for (const auto& tree : trees) {
            const auto imp = tree.importance();
            for (std::size_t j = 0; j < features && j < imp.size(); ++j) out[j] += imp[j];
        }
        for (auto& v : out) v /= static_cast<double>(trees.size());
        return out;
    }
};

}  // namespace dialeval::models
