#pragma once

// Synthetic corpora with planted feature -> label effects, used as an oracle
// substrate: the generating rule is known, so recovery can be checked.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "dialeval/corpus.hpp"
#include "dialeval/random.hpp"

namespace dialeval::synthetic {

using corpus::Corpus;
using corpus::FeatureDef;

struct SyntheticConfig {
    std::size_t n_dialogues = 120;
    std::size_t turns_per_dialogue = 72;
    std::size_t tokens_per_turn = 10;
    std::size_t annotators_per_dialogue = 2;
    std::size_t annotator_groups = 6;  // dialogue d is annotated by group d % annotator_groups
    std::vector<std::string> vocab;   // empty: w0..w199
    // feature id -> label id -> slope of the label's latent score in the feature's marking rate.
    std::map<std::string, std::map<std::string, double>> planted_effects;
    // follower feature id -> leader feature id: the follower is marked at the leader's rate.
    std::map<std::string, std::string> tied;
    double max_rate = 0.4;          // planted features are marked at rates in [0, max_rate]
    double background_rate = 0.0;   // unplanted features are marked at rates in [0, background_rate]
    double noise = 0.0;             // per-annotator Gaussian noise on the latent score (unit = full 1..5 range)
    double mark_noise = 0.0;        // per-annotator Gaussian noise on span length (unit = turn length)
    bool lexical_marks = true;      // marked tokens are replaced by a feature keyword
    std::vector<FeatureDef> registry = corpus::default_registry();
};

inline std::string keyword_for(std::size_t feature_index) { return "kw" + std::to_string(feature_index); }

namespace detail {

inline int quantize(double u) {
    const int score = 1 + static_cast<int>(std::floor(u * 5.0 + 1e-9));
    return std::clamp(score, corpus::kMinScore, corpus::kMaxScore);
}

inline std::size_t levels_for(double rate, std::size_t tokens_per_turn) {
    return static_cast<std::size_t>(std::floor(rate * static_cast<double>(tokens_per_turn) + 1e-9));
}

inline std::size_t index_of(const std::vector<FeatureDef>& registry, const std::string& id) {
    for (std::size_t i = 0; i < registry.size(); ++i) {
        if (registry[i].id == id) return i;
    }
    throw DataError("synthetic: feature '" + id + "' not in registry");
}

}  // namespace detail

/// Generates a corpus whose label scores are a monotone function of planted per-feature
/// marking rates. Planted spans have the same length in every turn of a dialogue, so with
/// mark_noise = 0 every window of a dialogue reproduces the dialogue's planted rates exactly.
inline Corpus generate_synthetic(const SyntheticConfig& config, std::uint64_t seed) {
    if (config.n_dialogues == 0 || config.turns_per_dialogue == 0 || config.tokens_per_turn == 0 ||
        config.annotators_per_dialogue == 0 || config.annotator_groups == 0) {
        throw DataError("synthetic: sizes must be positive");
    }
    for (const auto& [feature, slopes] : config.planted_effects) {
        bool known = false;
        for (const auto& f : config.registry) known = known || f.id == feature;
        if (!known) throw DataError("synthetic: planted feature '" + feature + "' not in registry");
        for (const auto& [label, slope] : slopes) {
            if (!std::isfinite(slope)) throw DataError("synthetic: non-finite slope for '" + feature + "'/" + label);
        }
    }

    for (const auto& [follower, leader] : config.tied) {
        detail::index_of(config.registry, follower);
        detail::index_of(config.registry, leader);
        if (config.tied.count(leader)) throw DataError("synthetic: tie chain through '" + leader + "'");
    }

    std::vector<std::string> vocab = config.vocab;
    if (vocab.empty()) {
        for (int i = 0; i < 200; ++i) vocab.push_back("w" + std::to_string(i));
    }
    const std::size_t L = config.tokens_per_turn;
    const std::size_t planted_levels = detail::levels_for(config.max_rate, L);
    const std::size_t background_levels = detail::levels_for(config.background_rate, L);

    Corpus c;
    c.registry = config.registry;
    c.labels = corpus::default_labels();

    // Latent range per label, so that u = (z - zmin) / (zmax - zmin) lands in [0, 1].
    std::map<std::string, std::pair<double, double>> latent_range;
    for (const auto& label : corpus::kLabelIds) {
        double lo = 0.0, hi = 0.0;
        for (const auto& [feature, slopes] : config.planted_effects) {
            if (auto it = slopes.find(std::string(label)); it != slopes.end()) {
                lo += std::min(0.0, it->second);
                hi += std::max(0.0, it->second);
            }
        }
        latent_range[std::string(label)] = {lo, hi};
    }

    for (std::size_t d = 0; d < config.n_dialogues; ++d) {
        Rng rng(derive_seed(seed, "synth", d));
        corpus::Dialogue dialogue;
        dialogue.id = "d" + std::to_string(d);
        dialogue.topic = "topic-" + std::to_string(d % 10);
        dialogue.speakers = {{"s1", "B2"}, {"s2", "C1"}};
        const std::size_t group = d % config.annotator_groups;
        for (std::size_t a = 0; a < config.annotators_per_dialogue; ++a) {
            dialogue.annotators.push_back("ann" + std::to_string(group * config.annotators_per_dialogue + a));
        }

        // Marked tokens per turn. Planted (and tied) features keep one level for the whole
        // dialogue; background features draw a fresh level every turn, so they carry no
        // per-dialogue fingerprint.
        std::vector<std::size_t> level(c.registry.size(), 0);
        std::vector<double> rate(c.registry.size(), 0.0);
        std::vector<bool> per_turn(c.registry.size(), false);
        for (std::size_t f = 0; f < c.registry.size(); ++f) {
            const bool planted = config.planted_effects.count(c.registry[f].id) > 0;
            if (!planted) {
                per_turn[f] = background_levels > 0 && !config.tied.count(c.registry[f].id);
                continue;
            }
            level[f] = planted_levels == 0 ? 0 : static_cast<std::size_t>(rng.below(planted_levels + 1));
            rate[f] = planted_levels == 0 ? 0.0 : static_cast<double>(level[f]) / static_cast<double>(planted_levels);
        }
        for (const auto& [follower, leader] : config.tied) {
            const std::size_t fi = detail::index_of(c.registry, follower), li = detail::index_of(c.registry, leader);
            level[fi] = level[li];
            rate[fi] = rate[li];
        }

        for (std::size_t t = 0; t < config.turns_per_dialogue; ++t) {
            corpus::Turn turn;
            turn.index = t;
            turn.speaker_id = t % 2 == 0 ? "s1" : "s2";
            for (std::size_t i = 0; i < L; ++i) turn.tokens.push_back(vocab[rng.below(vocab.size())]);
            dialogue.turns.push_back(std::move(turn));
        }

        for (std::size_t f = 0; f < c.registry.size(); ++f) {
            if (level[f] == 0 && !per_turn[f]) continue;
            for (std::size_t t = 0; t < config.turns_per_dialogue; ++t) {
                const std::size_t marked = per_turn[f] ? static_cast<std::size_t>(rng.below(background_levels + 1)) : level[f];
                if (marked == 0) continue;
                const std::size_t start = rng.below(L - marked + 1);
                if (config.lexical_marks) {
                    for (std::size_t i = start; i < start + marked; ++i) dialogue.turns[t].tokens[i] = keyword_for(f);
                }
                for (const auto& annotator : dialogue.annotators) {
                    std::size_t length = marked;
                    if (config.mark_noise > 0.0) {
                        const double jitter = config.mark_noise * static_cast<double>(L) * rng.normal();
                        const double noisy = std::round(static_cast<double>(marked) + jitter);
                        length = static_cast<std::size_t>(std::clamp(noisy, 0.0, static_cast<double>(L)));
                    }
                    if (length == 0) continue;
                    const std::size_t s = std::min(start, L - length);
                    c.spans.push_back({dialogue.id, annotator, c.registry[f].id, t, {s, s + length}, false});
                }
            }
        }

        for (auto& turn : dialogue.turns) {
            std::string text;
            for (const auto& tok : turn.tokens) {
                if (!text.empty()) text += ' ';
                text += tok;
            }
            turn.raw_text = std::move(text);
        }

        auto& scores = c.scores[dialogue.id];
        for (const auto& annotator : dialogue.annotators) {
            for (const auto& label_view : corpus::kLabelIds) {
                const std::string label(label_view);
                double z = 0.0;
                for (std::size_t f = 0; f < c.registry.size(); ++f) {
                    auto it = config.planted_effects.find(c.registry[f].id);
                    if (it == config.planted_effects.end()) continue;
                    if (auto jt = it->second.find(label); jt != it->second.end()) z += jt->second * rate[f];
                }
                const auto [lo, hi] = latent_range[label];
                double u = hi > lo ? (z - lo) / (hi - lo) : 0.5;
                if (config.noise > 0.0) u += config.noise * rng.normal();
                scores.push_back({annotator, label, detail::quantize(u)});
            }
        }
        c.dialogues.push_back(std::move(dialogue));
    }
    return c;
}

/// Permutes each label's inherited scores across minis, destroying any feature signal
/// while keeping the class distribution.
inline void shuffle_labels(std::vector<corpus::MiniDialogue>& minis, std::uint64_t seed) {
    for (const auto& label_view : corpus::kLabelIds) {
        const std::string label(label_view);
        std::vector<int> values;
        for (const auto& m : minis) {
            if (auto it = m.inherited_labels.find(label); it != m.inherited_labels.end()) values.push_back(it->second);
        }
        Rng rng(derive_seed(seed, "shuffle", fnv1a64(label)));
        rng.shuffle(std::span(values));
        std::size_t i = 0;
        for (auto& m : minis) {
            if (auto it = m.inherited_labels.find(label); it != m.inherited_labels.end()) it->second = values[i++];
        }
    }
}

// Presets used by the test suites and the `synth` subcommand.

/// One informative feature per label; every other feature is background noise.
inline SyntheticConfig one_feature_per_label() {
    SyntheticConfig config;
    config.planted_effects = {
        {"negotiation_of_meaning", {{"topic", 1.0}}},
        {"formulaic_responses", {{"tone", 1.0}}},
        {"question_based_responses", {{"opening", 1.0}}},
        {"collaborative_finishes", {{"closing", 1.0}}},
    };
    config.background_rate = 0.3;
    return config;
}

/// Each label is driven by a group of three features marked at one shared rate; the
/// remaining features are never marked.
inline SyntheticConfig keyword_groups() {
    SyntheticConfig config;
    const std::vector<std::pair<std::string, std::vector<std::string>>> groups = {
        {"topic", {"negotiation_of_meaning", "subordinate_clauses", "epistemic_modals"}},
        {"tone", {"formulaic_responses", "routinized_resources", "backchannels"}},
        {"opening", {"question_based_responses", "reference_word", "adj_adv_possibility"}},
        {"closing", {"collaborative_finishes", "tense_choice", "feedback_next_turn"}},
    };
    for (const auto& [label, features] : groups) {
        config.planted_effects[features[0]] = {{label, 1.0}};
        for (std::size_t i = 1; i < features.size(); ++i) config.tied[features[i]] = features[0];
    }
    return config;
}

/// Two features drive all four labels; nothing else is ever marked.
inline SyntheticConfig shared_features() {
    SyntheticConfig config;
    config.planted_effects = {
        {"code_switching", {{"topic", 1.0}, {"tone", 1.0}, {"opening", 2.0}, {"closing", 1.0}}},
        {"feedback_next_turn", {{"topic", 1.0}, {"tone", -1.0}, {"opening", 1.0}, {"closing", 2.0}}},
    };
    return config;
}

/// Labels depend on token-level features only; utterance-level features are noise.
inline SyntheticConfig token_signal() {
    SyntheticConfig config;
    config.planted_effects = {
        {"reference_word", {{"topic", 1.0}}},
        {"code_switching", {{"tone", 1.0}}},
        {"tense_choice", {{"opening", 1.0}}},
        {"subordinate_clauses", {{"closing", 1.0}}},
    };
    config.background_rate = 0.3;
    return config;
}

}  // namespace dialeval::synthetic
