#pragma once

#include <string>
#include <vector>

#include "dialeval/corpus.hpp"

namespace testsupport {

using namespace dialeval::corpus;

inline Turn make_turn(std::size_t index, const std::string& speaker, const std::string& text) {
    Turn t;
    t.index = index;
    t.speaker_id = speaker;
    t.raw_text = text;
    t.tokens = tokenize(text);
    return t;
}

/// Dialogue with `n` turns of `tokens_per_turn` placeholder tokens each.
inline Dialogue make_dialogue(const std::string& id, std::size_t n, std::size_t tokens_per_turn = 4) {
    Dialogue d;
    d.id = id;
    d.topic = "t";
    d.speakers = {{"a", std::nullopt}, {"b", "B2"}};
    for (std::size_t i = 0; i < n; ++i) {
        std::string text;
        for (std::size_t k = 0; k < tokens_per_turn; ++k) text += (k ? " w" : "w") + std::to_string(i) + "t" + std::to_string(k);
        d.turns.push_back(make_turn(i, i % 2 ? "b" : "a", text));
    }
    return d;
}

inline Corpus base_corpus() {
    Corpus c;
    c.registry = default_registry();
    c.labels = default_labels();
    return c;
}

inline void add_scores(Corpus& c, const std::string& dialogue, const std::string& annotator, int topic, int tone, int opening,
                       int closing) {
    auto& list = c.scores[dialogue];
    list.push_back({annotator, "topic", topic});
    list.push_back({annotator, "tone", tone});
    list.push_back({annotator, "opening", opening});
    list.push_back({annotator, "closing", closing});
}

inline std::string data_path(const std::string& name) { return std::string(DIALEVAL_DATA_DIR) + "/" + name; }

}  // namespace testsupport
