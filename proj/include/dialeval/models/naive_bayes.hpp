#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "dialeval/models/common.hpp"

namespace dialeval::models {

/// Gaussian naive Bayes: per-class prior, and per-class, per-feature mean and variance.
struct GaussianNB {
    Eigen::VectorXd log_prior;   // classes
    Eigen::MatrixXd means;       // classes x features
    Eigen::MatrixXd variances;   // classes x features, smoothing already added
    double epsilon = 0.0;

    static GaussianNB fit(const Eigen::MatrixXd& Z, std::span<const std::size_t> y, Eigen::Index classes,
                          double variance_smoothing) {
        const Eigen::Index d = Z.cols();
        GaussianNB nb;
        // epsilon is relative to the widest feature; all-constant data falls back to an absolute epsilon.
        double widest = 0.0;
        for (Eigen::Index j = 0; j < d; ++j) {
            const double mu = Z.col(j).mean();
            widest = std::max(widest, (Z.col(j).array() - mu).square().mean());
        }
        nb.epsilon = variance_smoothing * (widest > 0.0 ? widest : 1.0);

        Eigen::VectorXd counts = Eigen::VectorXd::Zero(classes);
        nb.means = Eigen::MatrixXd::Zero(classes, d);
        nb.variances = Eigen::MatrixXd::Zero(classes, d);
        for (Eigen::Index i = 0; i < Z.rows(); ++i) {
            const auto k = static_cast<Eigen::Index>(y[static_cast<std::size_t>(i)]);
            counts(k) += 1.0;
            nb.means.row(k) += Z.row(i);
        }
        for (Eigen::Index k = 0; k < classes; ++k) nb.means.row(k) /= counts(k);
        for (Eigen::Index i = 0; i < Z.rows(); ++i) {
            const auto k = static_cast<Eigen::Index>(y[static_cast<std::size_t>(i)]);
            nb.variances.row(k) += (Z.row(i) - nb.means.row(k)).array().square().matrix();
        }
        for (Eigen::Index k = 0; k < classes; ++k) nb.variances.row(k) /= counts(k);
        nb.variances.array() += nb.epsilon;
        nb.log_prior = (counts / static_cast<double>(Z.rows())).array().log();
        return nb;
    }

    /// Unnormalized log joint log p(k) + sum_j log N(z_j; mu_kj, var_kj), one row per sample.
    Eigen::MatrixXd log_joint(const Eigen::MatrixXd& Z) const {
        const Eigen::Index K = means.rows();
        Eigen::MatrixXd out(Z.rows(), K);
        for (Eigen::Index i = 0; i < Z.rows(); ++i) {
            for (Eigen::Index k = 0; k < K; ++k) {
                double s = log_prior(k);
                for (Eigen::Index j = 0; j < Z.cols(); ++j) {
                    const double diff = Z(i, j) - means(k, j);
                    s -= 0.5 * (std::log(2.0 * std::numbers::pi * variances(k, j)) + diff * diff / variances(k, j));
                }
                out(i, k) = s;
            }
        }
        return out;
    }

    /// Posterior p(k | z) per row via log-sum-exp.
    Eigen::MatrixXd posterior(const Eigen::MatrixXd& Z) const {
        Eigen::MatrixXd lj = log_joint(Z);
        for (Eigen::Index i = 0; i < lj.rows(); ++i) {
            const double top = lj.row(i).maxCoeff();
            lj.row(i) = (lj.row(i).array() - top).exp();
            lj.row(i) /= lj.row(i).sum();
        }
        return lj;
    }
};

}  // namespace dialeval::models
