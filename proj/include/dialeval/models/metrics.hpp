#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "dialeval/error.hpp"

namespace dialeval::models {

struct Metrics {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;

    friend bool operator==(const Metrics&, const Metrics&) = default;
};

struct ClassCounts {
    std::size_t tp = 0, fp = 0, fn = 0;
    std::size_t support() const { return tp + fn; }
};

inline std::map<int, ClassCounts> confusion_counts(std::span<const int> y_true, std::span<const int> y_pred) {
    std::map<int, ClassCounts> counts;
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        if (y_true[i] == y_pred[i]) {
            ++counts[y_true[i]].tp;
        } else {
            ++counts[y_pred[i]].fp;
            ++counts[y_true[i]].fn;
        }
    }
    return counts;
}

/// Accuracy plus support-weighted one-vs-rest precision, recall and F1. A class that is
/// never predicted contributes precision 0.
inline Metrics evaluate(std::span<const int> y_true, std::span<const int> y_pred) {
    if (y_true.size() != y_pred.size()) throw DataError("evaluate: y_true and y_pred differ in length");
    if (y_true.empty()) throw DataError("evaluate: empty input");
    const double n = static_cast<double>(y_true.size());
    Metrics m;
    std::size_t correct = 0;
    for (const auto& [label, c] : confusion_counts(y_true, y_pred)) {
        correct += c.tp;
        if (c.support() == 0) continue;
        const double weight = static_cast<double>(c.support()) / n;
        const double precision = c.tp + c.fp == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
        const double recall = static_cast<double>(c.tp) / static_cast<double>(c.support());
        const double f1 = precision + recall == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
        m.precision += weight * precision;
        m.f1 += weight * f1;
    }
    m.accuracy = static_cast<double>(correct) / n;
    // support_k / n * tp_k / support_k summed over k is sum(tp_k) / n.
    m.recall = m.accuracy;
    return m;
}

}  // namespace dialeval::models
