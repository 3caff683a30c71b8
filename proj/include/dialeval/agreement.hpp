#pragma once

// Inter-annotator agreement on token-level binarized span marks and on 1-5 label scores.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dialeval/corpus.hpp"
#include "dialeval/error.hpp"
#include "dialeval/stats.hpp"

namespace dialeval::agreement {

using corpus::Corpus;
using corpus::Dialogue;
using corpus::FeatureLevel;
using corpus::SpanAnnotation;
using corpus::Turn;
using json = nlohmann::json;
using stats::pearson;

// ---------------------------------------------------------------------------
// Binarization

/// One 0/1 cell per word token of `turns` (concatenated in turn order): 1 iff the token lies
/// in some span by `annotator_id` with `feature_id`. Overlapping spans are a union.
inline std::vector<std::uint8_t> binarize(std::span<const Turn> turns, std::span<const SpanAnnotation* const> spans,
                                          std::string_view feature_id, std::string_view annotator_id) {
    std::vector<std::size_t> offset(turns.size() + 1, 0);
    for (std::size_t t = 0; t < turns.size(); ++t) offset[t + 1] = offset[t] + turns[t].tokens.size();
    std::vector<std::uint8_t> marks(offset.back(), 0);
    for (const SpanAnnotation* s : spans) {
        if (s->feature_id != feature_id || s->annotator_id != annotator_id) continue;
        if (s->turn_index >= turns.size() || s->range.end > turns[s->turn_index].tokens.size()) {
            throw DataError("binarize: span outside its turn in dialogue '" + s->dialogue_id + "'");
        }
        std::fill(marks.begin() + static_cast<std::ptrdiff_t>(offset[s->turn_index] + s->range.start),
                  marks.begin() + static_cast<std::ptrdiff_t>(offset[s->turn_index] + s->range.end), std::uint8_t{1});
    }
    return marks;
}

inline std::vector<std::uint8_t> binarize(const Corpus& c, const Dialogue& d, std::string_view feature_id,
                                          std::string_view annotator_id) {
    if (!c.find_feature(feature_id)) throw DataError("binarize: unknown feature '" + std::string(feature_id) + "'");
    const auto annotators = c.annotators_of(d);
    if (std::find(annotators.begin(), annotators.end(), annotator_id) == annotators.end()) {
        throw DataError("binarize: annotator '" + std::string(annotator_id) + "' did not work on dialogue '" + d.id + "'");
    }
    const auto spans = c.spans_of(d.id);
    return binarize(d.turns, spans, feature_id, annotator_id);
}

// ---------------------------------------------------------------------------
// Krippendorff's alpha

enum class Metric { nominal, interval };

inline std::string_view to_string(Metric m) { return m == Metric::nominal ? "nominal" : "interval"; }

/// units x raters; std::nullopt marks a missing rating.
using RatingMatrix = std::vector<std::vector<std::optional<double>>>;

/// alpha = 1 - D_o / D_e over the coincidence matrix. Units with fewer than two ratings are
/// not pairable and drop out. Throws NumericError when fewer than two pairable values exist
/// or when every pairable value is identical (D_e = 0).
inline double krippendorff_alpha(const RatingMatrix& ratings, Metric metric) {
    std::vector<double> values;
    for (const auto& unit : ratings) {
        for (const auto& v : unit) {
            if (v) values.push_back(*v);
        }
    }
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    const std::size_t V = values.size();
    auto index_of = [&](double v) {
        return static_cast<std::size_t>(std::lower_bound(values.begin(), values.end(), v) - values.begin());
    };

    std::vector<double> coincidence(V * V, 0.0);
    std::vector<std::size_t> counts(V);
    for (const auto& unit : ratings) {
        std::fill(counts.begin(), counts.end(), 0);
        std::size_t m = 0;
        for (const auto& v : unit) {
            if (v) {
                ++counts[index_of(*v)];
                ++m;
            }
        }
        if (m < 2) continue;
        const double weight = 1.0 / static_cast<double>(m - 1);
        for (std::size_t c = 0; c < V; ++c) {
            if (counts[c] == 0) continue;
            for (std::size_t k = 0; k < V; ++k) {
                const std::size_t pairs = counts[c] * (counts[k] - (c == k ? 1 : 0));
                coincidence[c * V + k] += static_cast<double>(pairs) * weight;
            }
        }
    }

    std::vector<double> marginal(V, 0.0);
    double n = 0.0;
    for (std::size_t c = 0; c < V; ++c) {
        for (std::size_t k = 0; k < V; ++k) marginal[c] += coincidence[c * V + k];
        n += marginal[c];
    }
    if (n < 2.0) throw NumericError("krippendorff_alpha: fewer than 2 pairable values");

    auto delta2 = [&](std::size_t c, std::size_t k) {
        if (metric == Metric::nominal) return c == k ? 0.0 : 1.0;
        const double d = values[c] - values[k];
        return d * d;
    };
    double observed = 0.0, expected = 0.0;
    for (std::size_t c = 0; c < V; ++c) {
        for (std::size_t k = 0; k < V; ++k) {
            const double d2 = delta2(c, k);
            observed += coincidence[c * V + k] * d2;
            expected += marginal[c] * marginal[k] * d2;
        }
    }
    if (expected == 0.0) throw NumericError("krippendorff_alpha: undefined, all pairable values are identical");
    return 1.0 - (n - 1.0) * observed / expected;
}

/// Two complete raters; convenience for binarized mark vectors.
template <class T>
double krippendorff_alpha(std::span<const T> a, std::span<const T> b, Metric metric) {
    if (a.size() != b.size()) throw DataError("krippendorff_alpha: rater vectors differ in length");
    RatingMatrix m(a.size());
    for (std::size_t u = 0; u < a.size(); ++u) m[u] = {static_cast<double>(a[u]), static_cast<double>(b[u])};
    return krippendorff_alpha(m, metric);
}

// ---------------------------------------------------------------------------
// Aggregated report

enum class Row { token_features, utterance_features, dialogue_labels };

inline constexpr std::array<Row, 3> kRows{Row::token_features, Row::utterance_features, Row::dialogue_labels};

inline std::string_view to_string(Row row) {
    switch (row) {
        case Row::token_features: return "token_features";
        case Row::utterance_features: return "utterance_features";
        case Row::dialogue_labels: return "dialogue_labels";
    }
    return "";
}

using AnnotatorPair = std::pair<std::string, std::string>;
using Pairing = std::map<AnnotatorPair, std::vector<std::string>>;  // pair -> dialogue ids

/// One (annotator pair, feature or label) cell. A missing value means the coefficient was
/// undefined for that cell and the cell is left out of the row mean.
struct Cell {
    Row row = Row::token_features;
    AnnotatorPair pair;
    std::string item;
    std::optional<double> alpha;
    std::optional<double> r;
    std::string note;
};

struct RowSummary {
    std::optional<double> alpha;
    std::optional<double> r;
    std::size_t alpha_cells = 0;
    std::size_t r_cells = 0;
};

struct AgreementReport {
    std::map<Row, RowSummary> rows;
    std::vector<Cell> cells;
    Metric dialogue_metric = Metric::interval;
    std::size_t excluded_cells = 0;  // features never marked by either annotator of a pair
};

/// Every unordered annotator pair that shares a dialogue, with the dialogues they share.
inline Pairing default_pairing(const Corpus& c) {
    Pairing pairing;
    for (const auto& d : c.dialogues) {
        const auto annotators = c.annotators_of(d);
        for (std::size_t i = 0; i < annotators.size(); ++i) {
            for (std::size_t j = i + 1; j < annotators.size(); ++j) {
                auto pair = std::minmax(annotators[i], annotators[j]);
                pairing[{pair.first, pair.second}].push_back(d.id);
            }
        }
    }
    return pairing;
}

namespace detail {

inline std::optional<double> try_alpha(const RatingMatrix& m, Metric metric, std::string& note) {
    try {
        return krippendorff_alpha(m, metric);
    } catch (const NumericError&) {
        note += std::string(note.empty() ? "" : "; ") + "alpha undefined";
        return std::nullopt;
    }
}

inline std::optional<double> try_pearson(std::span<const double> x, std::span<const double> y, std::string& note) {
    try {
        return pearson(x, y);
    } catch (const NumericError&) {
        note += std::string(note.empty() ? "" : "; ") + "r undefined";
        return std::nullopt;
    }
}

}  // namespace detail

/// Micro-level rows: nominal alpha and Pearson r on token-level 0/1 mark vectors,
/// concatenated over the pair's dialogues, one cell per (pair, feature).
/// Dialogue-level row: alpha (interval by default) and r on the pair's 1-5 scores, one cell
/// per (pair, label). Row values are unweighted means over defined cells.
inline AgreementReport agreement_report(const Corpus& c, const Pairing& pairing,
                                        Metric dialogue_metric = Metric::interval) {
    AgreementReport report;
    report.dialogue_metric = dialogue_metric;

    std::map<std::string, std::vector<const SpanAnnotation*>> spans_by_dialogue;
    for (const auto& s : c.spans) spans_by_dialogue[s.dialogue_id].push_back(&s);
    static const std::vector<const SpanAnnotation*> kNone;

    for (const auto& [pair, dialogue_ids] : pairing) {
        std::vector<const Dialogue*> dialogues;
        for (const auto& id : dialogue_ids) {
            const Dialogue* d = c.find_dialogue(id);
            if (!d) throw DataError("agreement: pairing references unknown dialogue '" + id + "'");
            const auto annotators = c.annotators_of(*d);
            for (const auto* who : {&pair.first, &pair.second}) {
                if (std::find(annotators.begin(), annotators.end(), *who) == annotators.end()) {
                    throw DataError("agreement: annotator '" + *who + "' did not work on dialogue '" + id + "'");
                }
            }
            dialogues.push_back(d);
        }

        for (const auto& feature : c.registry) {
            std::vector<double> a, b;
            for (const Dialogue* d : dialogues) {
                auto it = spans_by_dialogue.find(d->id);
                const auto& spans = it == spans_by_dialogue.end() ? kNone : it->second;
                for (auto v : binarize(d->turns, spans, feature.id, pair.first)) a.push_back(v);
                for (auto v : binarize(d->turns, spans, feature.id, pair.second)) b.push_back(v);
            }
            Cell cell;
            cell.row = feature.level == FeatureLevel::token ? Row::token_features : Row::utterance_features;
            cell.pair = pair;
            cell.item = feature.id;
            const bool marked = std::any_of(a.begin(), a.end(), [](double v) { return v != 0.0; }) ||
                                std::any_of(b.begin(), b.end(), [](double v) { return v != 0.0; });
            if (!marked) {
                cell.note = "never marked by either annotator";
                ++report.excluded_cells;
            } else {
                RatingMatrix m(a.size());
                for (std::size_t u = 0; u < a.size(); ++u) m[u] = {a[u], b[u]};
                cell.alpha = detail::try_alpha(m, Metric::nominal, cell.note);
                cell.r = detail::try_pearson(a, b, cell.note);
            }
            report.cells.push_back(std::move(cell));
        }

        for (const auto& label : c.labels) {
            auto score_of = [&](const Dialogue* d, const std::string& annotator) -> std::optional<double> {
                auto it = c.scores.find(d->id);
                if (it == c.scores.end()) return std::nullopt;
                std::optional<double> found;
                for (const auto& s : it->second) {
                    if (s.annotator_id == annotator && s.label_id == label.id) found = s.score;
                }
                return found;
            };
            RatingMatrix m;
            std::vector<double> x, y;
            for (const Dialogue* d : dialogues) {
                const auto sa = score_of(d, pair.first);
                const auto sb = score_of(d, pair.second);
                m.push_back({sa, sb});
                if (sa && sb) {
                    x.push_back(*sa);
                    y.push_back(*sb);
                }
            }
            Cell cell;
            cell.row = Row::dialogue_labels;
            cell.pair = pair;
            cell.item = label.id;
            cell.alpha = detail::try_alpha(m, dialogue_metric, cell.note);
            cell.r = detail::try_pearson(x, y, cell.note);
            report.cells.push_back(std::move(cell));
        }
    }

    for (Row row : kRows) {
        double alpha_sum = 0.0, r_sum = 0.0;
        RowSummary summary;
        for (const auto& cell : report.cells) {
            if (cell.row != row) continue;
            if (cell.alpha) {
                alpha_sum += *cell.alpha;
                ++summary.alpha_cells;
            }
            if (cell.r) {
                r_sum += *cell.r;
                ++summary.r_cells;
            }
        }
        if (summary.alpha_cells) summary.alpha = alpha_sum / static_cast<double>(summary.alpha_cells);
        if (summary.r_cells) summary.r = r_sum / static_cast<double>(summary.r_cells);
        report.rows[row] = summary;
    }
    return report;
}

inline AgreementReport agreement_report(const Corpus& c, Metric dialogue_metric = Metric::interval) {
    return agreement_report(c, default_pairing(c), dialogue_metric);
}

// ---------------------------------------------------------------------------
// Output

inline json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline json to_json(const AgreementReport& report) {
    json rows = json::object();
    for (const auto& [row, s] : report.rows) {
        rows[std::string(to_string(row))] = {{"alpha", optional_json(s.alpha)},
                                             {"pearson_r", optional_json(s.r)},
                                             {"alpha_cells", s.alpha_cells},
                                             {"r_cells", s.r_cells}};
    }
    json cells = json::array();
    for (const auto& cell : report.cells) {
        json jc = {{"row", std::string(to_string(cell.row))},
                   {"pair", {cell.pair.first, cell.pair.second}},
                   {"item", cell.item},
                   {"alpha", optional_json(cell.alpha)},
                   {"pearson_r", optional_json(cell.r)}};
        if (!cell.note.empty()) jc["note"] = cell.note;
        cells.push_back(std::move(jc));
    }
    return {{"rows", rows},
            {"cells", cells},
            {"dialogue_metric", std::string(to_string(report.dialogue_metric))},
            {"micro_metric", "nominal"},
            {"excluded_unmarked_cells", report.excluded_cells}};
}

inline std::string format_value(const std::optional<double>& v) {
    if (!v) return "n/a";
    std::ostringstream out;
    out << std::fixed << std::setprecision(3) << *v;
    return out.str();
}

/// Aligned text table: measures down, token / utterance / dialogue columns across.
inline std::string to_table(const AgreementReport& report) {
    std::ostringstream out;
    auto row = [&](const std::string& a, const std::string& b, const std::string& c, const std::string& d) {
        out << std::left << std::setw(9) << a << std::setw(14) << b << std::setw(18) << c << d << "\n";
    };
    auto value = [&](Row r, bool alpha) {
        auto it = report.rows.find(r);
        if (it == report.rows.end()) return std::string("n/a");
        return format_value(alpha ? it->second.alpha : it->second.r);
    };
    row("Measure", "Token-level", "Utterance-level", "Dialogue-level");
    row("", "Features", "Features", "Labels");
    row("alpha", value(Row::token_features, true), value(Row::utterance_features, true),
        value(Row::dialogue_labels, true));
    row("r", value(Row::token_features, false), value(Row::utterance_features, false),
        value(Row::dialogue_labels, false));
    if (report.excluded_cells) {
        out << "(" << report.excluded_cells << " pair/feature cells excluded: never marked by either annotator)\n";
    }
    return out.str();
}

}  // namespace dialeval::agreement
