#pragma once

// Mini-dialogue span annotations -> per-feature weights -> design matrices.

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "dialeval/agreement.hpp"
#include "dialeval/corpus.hpp"
#include "dialeval/error.hpp"

namespace dialeval::featurize {

using corpus::FeatureDef;
using corpus::FeatureLevel;
using corpus::MiniDialogue;
using json = nlohmann::json;

/// Weight of one feature in one mini-dialogue given each annotator's marked-token count:
///
///   x = sum_i (c_i / sum_j c_j) * (c_i / c_total)
///
/// i.e. the per-annotator marked fraction, averaged with weights proportional to how much
/// each annotator marked. No marks at all gives 0.
inline double feature_weight(std::span<const std::size_t> marked, std::size_t token_total) {
    if (token_total == 0) throw DataError("feature_weight: mini-dialogue has no tokens");
    std::size_t sum = 0;
    for (auto c : marked) sum += c;
    if (sum == 0) return 0.0;
    const double total = static_cast<double>(token_total);
    const double denom = static_cast<double>(sum);
    double x = 0.0;
    for (auto c : marked) {
        const double ci = static_cast<double>(c);
        x += (ci / denom) * (ci / total);
    }
    return x;
}

/// Annotators of a mini: its explicit list plus anyone who left a span in it.
inline std::vector<std::string> annotators_of(const MiniDialogue& mini) {
    std::set<std::string> ids(mini.annotators.begin(), mini.annotators.end());
    for (const auto& s : mini.spans) ids.insert(s.annotator_id);
    return {ids.begin(), ids.end()};
}

/// Union-marked token count per annotator for one feature (overlaps count once).
inline std::vector<std::size_t> marked_counts(const MiniDialogue& mini, std::string_view feature_id) {
    std::vector<const corpus::SpanAnnotation*> spans;
    for (const auto& s : mini.spans) spans.push_back(&s);
    std::vector<std::size_t> counts;
    for (const auto& annotator : annotators_of(mini)) {
        const auto marks = agreement::binarize(mini.turns, spans, feature_id, annotator);
        counts.push_back(static_cast<std::size_t>(std::count(marks.begin(), marks.end(), std::uint8_t{1})));
    }
    return counts;
}

inline double feature_weight(const MiniDialogue& mini, std::string_view feature_id) {
    const auto counts = marked_counts(mini, feature_id);
    return feature_weight(counts, mini.token_count());
}

struct FeatureVector {
    std::string mini_dialogue_id;
    std::map<std::string, double> weights;
    std::size_t annotator_count = 0;
    std::size_t token_total = 0;
};

inline FeatureVector feature_vector(const MiniDialogue& mini, const std::vector<FeatureDef>& registry) {
    FeatureVector v;
    v.mini_dialogue_id = mini.id;
    v.annotator_count = annotators_of(mini).size();
    v.token_total = mini.token_count();
    if (v.token_total == 0) throw DataError("featurize: mini-dialogue '" + mini.id + "' has zero tokens");
    for (const auto& f : registry) v.weights[f.id] = feature_weight(mini, f.id);
    return v;
}

// ---------------------------------------------------------------------------
// Design matrices

enum class LevelFilter { token_only, utterance_only, both };

inline std::string_view to_string(LevelFilter f) {
    switch (f) {
        case LevelFilter::token_only: return "token";
        case LevelFilter::utterance_only: return "utterance";
        case LevelFilter::both: return "both";
    }
    return "";
}

inline LevelFilter parse_filter(std::string_view text) {
    if (text == "token" || text == "token_only") return LevelFilter::token_only;
    if (text == "utterance" || text == "utterance_only") return LevelFilter::utterance_only;
    if (text == "both") return LevelFilter::both;
    throw DataError("unknown level filter '" + std::string(text) + "' (token|utterance|both)");
}

inline bool passes(const FeatureDef& f, LevelFilter filter) {
    switch (filter) {
        case LevelFilter::token_only: return f.level == FeatureLevel::token;
        case LevelFilter::utterance_only: return f.level == FeatureLevel::utterance;
        case LevelFilter::both: return true;
    }
    return false;
}

struct DesignMatrix {
    std::vector<std::string> row_ids;
    std::vector<std::string> feature_ids;  // registry order
    Eigen::MatrixXd values;                // rows x features
    std::map<std::string, std::vector<int>> targets;  // label id -> one score per row

    const std::vector<int>& target(const std::string& label) const {
        auto it = targets.find(label);
        if (it == targets.end()) throw DataError("design matrix has no target column for label '" + label + "'");
        return it->second;
    }

    /// Keeps only the columns whose feature passes `filter` (registry order preserved).
    DesignMatrix select(const std::vector<FeatureDef>& registry, LevelFilter filter) const {
        DesignMatrix out;
        out.row_ids = row_ids;
        out.targets = targets;
        std::vector<Eigen::Index> keep;
        for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(feature_ids.size()); ++j) {
            auto it = std::find_if(registry.begin(), registry.end(),
                                   [&](const FeatureDef& f) { return f.id == feature_ids[static_cast<std::size_t>(j)]; });
            if (it == registry.end()) throw DataError("select: column '" + feature_ids[static_cast<std::size_t>(j)] + "' not in registry");
            if (passes(*it, filter)) keep.push_back(j);
        }
        out.values.resize(values.rows(), static_cast<Eigen::Index>(keep.size()));
        for (std::size_t k = 0; k < keep.size(); ++k) {
            out.values.col(static_cast<Eigen::Index>(k)) = values.col(keep[k]);
            out.feature_ids.push_back(feature_ids[static_cast<std::size_t>(keep[k])]);
        }
        return out;
    }
};

/// One row per mini, one column per registry feature passing `filter`, plus a target column
/// per label taken from the minis' inherited labels.
inline DesignMatrix build_matrix(std::span<const MiniDialogue> minis, const std::vector<FeatureDef>& registry,
                                 LevelFilter filter = LevelFilter::both) {
    DesignMatrix m;
    std::vector<const FeatureDef*> columns;
    for (const auto& f : registry) {
        if (passes(f, filter)) {
            columns.push_back(&f);
            m.feature_ids.push_back(f.id);
        }
    }
    m.values = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(minis.size()), static_cast<Eigen::Index>(columns.size()));

    std::set<std::string> labels;
    for (const auto& mini : minis) {
        for (const auto& [label, score] : mini.inherited_labels) labels.insert(label);
    }
    for (const auto& label : labels) m.targets[label].reserve(minis.size());

    for (std::size_t r = 0; r < minis.size(); ++r) {
        const MiniDialogue& mini = minis[r];
        if (mini.token_count() == 0) throw DataError("build_matrix: mini-dialogue '" + mini.id + "' has zero tokens");
        m.row_ids.push_back(mini.id);
        for (std::size_t c = 0; c < columns.size(); ++c) {
            m.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = feature_weight(mini, columns[c]->id);
        }
        for (const auto& label : labels) {
            auto it = mini.inherited_labels.find(label);
            if (it == mini.inherited_labels.end()) {
                throw DataError("build_matrix: mini-dialogue '" + mini.id + "' has no inherited label '" + label + "'");
            }
            m.targets[label].push_back(it->second);
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// Export

inline constexpr std::string_view kTargetPrefix = "label:";

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// Header: mini_id, feature ids..., label:<id> target columns.
inline std::string to_csv(const DesignMatrix& m) {
    std::ostringstream out;
    out << "mini_id";
    for (const auto& f : m.feature_ids) out << ',' << f;
    for (const auto& [label, _] : m.targets) out << ',' << kTargetPrefix << label;
    out << '\n';
    for (Eigen::Index r = 0; r < m.values.rows(); ++r) {
        out << m.row_ids[static_cast<std::size_t>(r)];
        for (Eigen::Index c = 0; c < m.values.cols(); ++c) out << ',' << format_double(m.values(r, c));
        for (const auto& [label, column] : m.targets) out << ',' << column[static_cast<std::size_t>(r)];
        out << '\n';
    }
    return out.str();
}

inline DesignMatrix from_csv(std::string_view text, const std::string& source = "<csv>") {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> line_of;  // 1-based source line per row; '#' lines are comments
    std::size_t line_start = 0, line_no = 0;
    while (line_start < text.size()) {
        std::size_t line_end = text.find('\n', line_start);
        if (line_end == std::string_view::npos) line_end = text.size();
        std::string_view line = text.substr(line_start, line_end - line_start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        ++line_no;
        if (!line.empty() && line.front() != '#') {
            line_of.push_back(line_no);
            std::vector<std::string> fields;
            std::size_t pos = 0;
            while (true) {
                const std::size_t comma = line.find(',', pos);
                fields.emplace_back(line.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos));
                if (comma == std::string_view::npos) break;
                pos = comma + 1;
            }
            rows.push_back(std::move(fields));
        }
        line_start = line_end + 1;
    }
    if (rows.empty()) throw ParseError(source, line_of.empty() ? 1 : line_of[0], 1, "empty design matrix file");
    const auto& header = rows.front();
    if (header.empty() || header[0] != "mini_id") throw ParseError(source, line_of.empty() ? 1 : line_of[0], 1, "first column must be 'mini_id'");

    DesignMatrix m;
    std::vector<std::string> labels;
    for (std::size_t c = 1; c < header.size(); ++c) {
        if (header[c].rfind(kTargetPrefix, 0) == 0) {
            labels.push_back(header[c].substr(kTargetPrefix.size()));
        } else {
            if (!labels.empty()) throw ParseError(source, line_of.empty() ? 1 : line_of[0], c + 1, "feature column after target columns");
            m.feature_ids.push_back(header[c]);
        }
    }
    const std::size_t d = m.feature_ids.size();
    m.values.resize(static_cast<Eigen::Index>(rows.size() - 1), static_cast<Eigen::Index>(d));
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& fields = rows[r];
        if (fields.size() != header.size()) {
            throw ParseError(source, line_of[r], 1, "expected " + std::to_string(header.size()) + " fields, got " +
                                                   std::to_string(fields.size()));
        }
        m.row_ids.push_back(fields[0]);
        for (std::size_t c = 0; c < d; ++c) {
            const std::string& f = fields[c + 1];
            double v = 0.0;
            try {
                std::size_t used = 0;
                v = std::stod(f, &used);
                if (used != f.size()) throw std::invalid_argument(f);
            } catch (const std::exception&) {
                throw ParseError(source, line_of[r], c + 2, "not a number: '" + f + "'");
            }
            m.values(static_cast<Eigen::Index>(r - 1), static_cast<Eigen::Index>(c)) = v;
        }
        for (std::size_t k = 0; k < labels.size(); ++k) {
            const std::string& f = fields[1 + d + k];
            int v = 0;
            auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
            if (ec != std::errc{} || ptr != f.data() + f.size()) {
                throw ParseError(source, line_of[r], 2 + d + k, "target must be an integer: '" + f + "'");
            }
            if (v < corpus::kMinScore || v > corpus::kMaxScore) {
                throw DataError(source + ": row '" + fields[0] + "' label '" + labels[k] + "' score outside 1..5");
            }
            m.targets[labels[k]].push_back(v);
        }
    }
    return m;
}

inline json to_json(const DesignMatrix& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.values.rows(); ++r) {
        json weights = json::object();
        for (Eigen::Index c = 0; c < m.values.cols(); ++c) weights[m.feature_ids[static_cast<std::size_t>(c)]] = m.values(r, c);
        json targets = json::object();
        for (const auto& [label, column] : m.targets) targets[label] = column[static_cast<std::size_t>(r)];
        rows.push_back({{"mini_id", m.row_ids[static_cast<std::size_t>(r)]}, {"weights", weights}, {"targets", targets}});
    }
    return {{"feature_ids", m.feature_ids}, {"rows", rows}};
}

}  // namespace dialeval::featurize
