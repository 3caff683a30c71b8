#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "dialeval/error.hpp"

namespace dialeval::models {

enum class Kind { lr, nb, rf };

inline constexpr std::array<Kind, 3> kAllKinds{Kind::lr, Kind::rf, Kind::nb};

inline std::string_view to_string(Kind k) {
    switch (k) {
        case Kind::lr: return "lr";
        case Kind::nb: return "nb";
        case Kind::rf: return "rf";
    }
    return "";
}

inline std::string_view display_name(Kind k) {
    switch (k) {
        case Kind::lr: return "Logistic Regression";
        case Kind::nb: return "Naive Bayes";
        case Kind::rf: return "Random Forest";
    }
    return "";
}

inline Kind parse_kind(std::string_view text) {
    if (text == "lr") return Kind::lr;
    if (text == "nb") return Kind::nb;
    if (text == "rf") return Kind::rf;
    throw DataError("unknown classifier kind '" + std::string(text) + "' (lr|nb|rf)");
}

struct ClassifierSpec {
    Kind kind = Kind::lr;
    // lr
    double l2_lambda = 1e-2;
    double learning_rate = 0.1;
    std::size_t max_epochs = 2000;
    double tol = 1e-6;
    // nb: epsilon added to every variance, as a fraction of the largest feature variance
    double variance_smoothing = 1e-9;
    // rf
    std::size_t n_trees = 100;
    std::size_t max_depth = 0;           // 0 = unlimited
    std::size_t features_per_split = 0;  // 0 = ceil(sqrt(d))
    bool bootstrap = true;
    std::uint64_t seed = 0;

    static ClassifierSpec defaults(Kind kind, std::uint64_t seed = 0) {
        ClassifierSpec s;
        s.kind = kind;
        s.seed = seed;
        return s;
    }

    void check() const {
        auto positive = [](double v, const char* name) {
            if (!(v > 0.0) || !std::isfinite(v)) throw DataError(std::string("classifier spec: ") + name + " must be positive");
        };
        switch (kind) {
            case Kind::lr:
                if (!(l2_lambda >= 0.0)) throw DataError("classifier spec: l2_lambda must be non-negative");
                positive(learning_rate, "learning_rate");
                positive(tol, "tol");
                if (max_epochs == 0) throw DataError("classifier spec: max_epochs must be positive");
                break;
            case Kind::nb: positive(variance_smoothing, "variance_smoothing"); break;
            case Kind::rf:
                if (n_trees == 0) throw DataError("classifier spec: n_trees must be positive");
                break;
        }
    }
};

/// Zero-mean / unit-variance scaling with training statistics. A constant column has
/// scale 0 and maps to all zeros.
struct Standardizer {
    Eigen::VectorXd mean;
    Eigen::VectorXd scale;  // 1 / std, or 0 for constant columns

    static Standardizer fit(const Eigen::MatrixXd& X) {
        Standardizer s;
        const auto n = static_cast<double>(X.rows());
        s.mean = X.colwise().mean().transpose();
        s.scale.resize(X.cols());
        for (Eigen::Index j = 0; j < X.cols(); ++j) {
            if (X.rows() == 0 || X.col(j).maxCoeff() == X.col(j).minCoeff()) {
                s.mean(j) = X.rows() ? X(0, j) : 0.0;
                s.scale(j) = 0.0;
                continue;
            }
            const double var = (X.col(j).array() - s.mean(j)).square().sum() / n;
            s.scale(j) = var > 0.0 ? 1.0 / std::sqrt(var) : 0.0;
        }
        return s;
    }

    Eigen::MatrixXd apply(const Eigen::MatrixXd& X) const {
        return (X.rowwise() - mean.transpose()).array().rowwise() * scale.transpose().array();
    }
};

/// Maps 1..5 labels to dense class indices in ascending label order.
inline std::vector<std::size_t> class_indices(const std::vector<int>& classes, std::span<const int> y) {
    std::vector<std::size_t> idx(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        auto it = std::lower_bound(classes.begin(), classes.end(), y[i]);
        if (it == classes.end() || *it != y[i]) throw DataError("label " + std::to_string(y[i]) + " not among model classes");
        idx[i] = static_cast<std::size_t>(it - classes.begin());
    }
    return idx;
}

inline std::vector<int> distinct_sorted(std::span<const int> y) {
    std::vector<int> classes(y.begin(), y.end());
    std::sort(classes.begin(), classes.end());
    classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
    return classes;
}

/// Index of the largest score; ties go to the lowest index (lowest class label).
template <class Row>
std::size_t argmax(const Row& scores) {
    std::size_t best = 0;
    for (Eigen::Index k = 1; k < scores.size(); ++k) {
        if (scores(k) > scores(static_cast<Eigen::Index>(best))) best = static_cast<std::size_t>(k);
    }
    return best;
}

inline void check_finite(const Eigen::MatrixXd& X) {
    for (Eigen::Index r = 0; r < X.rows(); ++r) {
        for (Eigen::Index c = 0; c < X.cols(); ++c) {
            if (!std::isfinite(X(r, c))) {
                throw DataError("non-finite feature value at row " + std::to_string(r) + ", column " + std::to_string(c));
            }
        }
    }
}

}  // namespace dialeval::models
