#pragma once

// Multinomial (softmax) logistic regression fit by full-batch gradient descent on
// L2-regularized mean cross-entropy.

#include <cmath>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "dialeval/error.hpp"
#include "dialeval/models/common.hpp"

namespace dialeval::models {

struct SoftmaxParams {
    Eigen::MatrixXd weights;  // classes x features
    Eigen::VectorXd bias;     // classes

    static SoftmaxParams zeros(Eigen::Index classes, Eigen::Index features) {
        return {Eigen::MatrixXd::Zero(classes, features), Eigen::VectorXd::Zero(classes)};
    }
};

/// Row-wise softmax of logits = Z W^T + b, computed stably.
inline Eigen::MatrixXd softmax_probabilities(const SoftmaxParams& p, const Eigen::MatrixXd& Z) {
    Eigen::MatrixXd logits = (Z * p.weights.transpose()).rowwise() + p.bias.transpose();
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const double top = logits.row(i).maxCoeff();
        logits.row(i) = (logits.row(i).array() - top).exp();
        logits.row(i) /= logits.row(i).sum();
    }
    return logits;
}

/// Objective (1/n) sum_i -log p(y_i | z_i) + (lambda/2) ||W||^2 and its gradient.
/// The bias is not regularized.
inline double softmax_loss(const SoftmaxParams& p, const Eigen::MatrixXd& Z, std::span<const std::size_t> y,
                           double l2_lambda, SoftmaxParams* gradient = nullptr) {
    const Eigen::Index n = Z.rows();
    Eigen::MatrixXd logits = (Z * p.weights.transpose()).rowwise() + p.bias.transpose();
    Eigen::MatrixXd residual(logits.rows(), logits.cols());
    double loss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double top = logits.row(i).maxCoeff();
        const Eigen::RowVectorXd shifted = logits.row(i).array() - top;
        const double log_norm = std::log(shifted.array().exp().sum());
        loss -= shifted(static_cast<Eigen::Index>(y[static_cast<std::size_t>(i)])) - log_norm;
        residual.row(i) = (shifted.array() - log_norm).exp();
        residual(i, static_cast<Eigen::Index>(y[static_cast<std::size_t>(i)])) -= 1.0;
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    loss = loss * inv_n + 0.5 * l2_lambda * p.weights.squaredNorm();
    if (gradient) {
        gradient->weights = inv_n * residual.transpose() * Z + l2_lambda * p.weights;
        gradient->bias = inv_n * residual.colwise().sum().transpose();
    }
    return loss;
}

struct SoftmaxFit {
    SoftmaxParams params;
    std::size_t epochs = 0;
    double gradient_norm = 0.0;
    double loss = 0.0;
};

/// Gradient descent from zero until ||grad|| < tol or max_epochs.
inline SoftmaxFit fit_softmax(const Eigen::MatrixXd& Z, std::span<const std::size_t> y, Eigen::Index classes,
                              const ClassifierSpec& spec) {
    SoftmaxFit fit;
    fit.params = SoftmaxParams::zeros(classes, Z.cols());
    SoftmaxParams grad;
    for (fit.epochs = 0; fit.epochs < spec.max_epochs; ++fit.epochs) {
        fit.loss = softmax_loss(fit.params, Z, y, spec.l2_lambda, &grad);
        if (!std::isfinite(fit.loss)) throw NumericError("logistic regression diverged (non-finite loss)");
        fit.gradient_norm = std::sqrt(grad.weights.squaredNorm() + grad.bias.squaredNorm());
        if (fit.gradient_norm < spec.tol) break;
        fit.params.weights -= spec.learning_rate * grad.weights;
        fit.params.bias -= spec.learning_rate * grad.bias;
    }
    return fit;
}

}  // namespace dialeval::models
