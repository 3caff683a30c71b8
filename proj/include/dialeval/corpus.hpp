#pragma once

// Span-annotated dialogue corpus: data model, canonical JSON format, validation,
// majority voting, and mini-dialogue splitting with label inheritance.

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "dialeval/error.hpp"
#include "dialeval/random.hpp"
#include "dialeval/stats.hpp"

namespace dialeval::corpus {

using json = nlohmann::json;

inline constexpr int kMinScore = 1;
inline constexpr int kMaxScore = 5;
inline constexpr std::array<std::string_view, 4> kLabelIds{"topic", "tone", "opening", "closing"};

enum class FeatureLevel { token, utterance };

inline std::string_view to_string(FeatureLevel level) {
    return level == FeatureLevel::token ? "token" : "utterance";
}

struct FeatureDef {
    std::string id;
    std::string name;
    FeatureLevel level = FeatureLevel::token;
    std::string description;
};

struct LabelDef {
    std::string id;
    std::map<int, std::string> rubric;  // score -> description
};

struct Speaker {
    std::string speaker_id;
    std::optional<std::string> proficiency;
};

struct Turn {
    std::size_t index = 0;
    std::string speaker_id;
    std::vector<std::string> tokens;
    std::string raw_text;
};

struct Dialogue {
    std::string id;
    std::string topic;
    std::vector<Speaker> speakers;
    std::vector<Turn> turns;
    // Annotators who worked on the dialogue. Empty means "everyone who left a span or a score".
    std::vector<std::string> annotators;

    std::size_t token_count() const {
        std::size_t n = 0;
        for (const auto& t : turns) n += t.tokens.size();
        return n;
    }
};

/// Half-open token interval [start, end) within one turn.
struct TokenRange {
    std::size_t start = 0;
    std::size_t end = 0;

    std::size_t size() const { return end - start; }
    friend bool operator==(const TokenRange&, const TokenRange&) = default;
};

struct SpanAnnotation {
    std::string dialogue_id;
    std::string annotator_id;
    std::string feature_id;
    std::size_t turn_index = 0;
    TokenRange range;
    // Set when a window boundary cut the span. Spans are turn-local and windows are
    // turn-aligned, so splitting never produces one; the flag is kept for imported data.
    bool clipped = false;

    friend bool operator==(const SpanAnnotation&, const SpanAnnotation&) = default;
};

struct InteractivityScore {
    std::string annotator_id;
    std::string label_id;
    int score = 0;

    friend bool operator==(const InteractivityScore&, const InteractivityScore&) = default;
};

struct Corpus {
    std::vector<FeatureDef> registry;
    std::vector<LabelDef> labels;
    std::vector<Dialogue> dialogues;
    std::vector<SpanAnnotation> spans;
    std::map<std::string, std::vector<InteractivityScore>> scores;  // dialogue id -> scores

    const Dialogue* find_dialogue(std::string_view id) const {
        for (const auto& d : dialogues) {
            if (d.id == id) return &d;
        }
        return nullptr;
    }

    const FeatureDef* find_feature(std::string_view id) const {
        for (const auto& f : registry) {
            if (f.id == id) return &f;
        }
        return nullptr;
    }

    std::vector<const SpanAnnotation*> spans_of(std::string_view dialogue_id) const {
        std::vector<const SpanAnnotation*> out;
        for (const auto& s : spans) {
            if (s.dialogue_id == dialogue_id) out.push_back(&s);
        }
        return out;
    }

    /// Explicit annotator list if present, else the sorted union of span and score authors.
    std::vector<std::string> annotators_of(const Dialogue& d) const {
        if (!d.annotators.empty()) return d.annotators;
        std::set<std::string> ids;
        for (const auto& s : spans) {
            if (s.dialogue_id == d.id) ids.insert(s.annotator_id);
        }
        if (auto it = scores.find(d.id); it != scores.end()) {
            for (const auto& sc : it->second) ids.insert(sc.annotator_id);
        }
        return {ids.begin(), ids.end()};
    }
};

// ---------------------------------------------------------------------------
// Default registry and label rubric

inline std::vector<FeatureDef> default_registry() {
    using L = FeatureLevel;
    return {
        {"reference_word", "Reference Word", L::token, "Pronouns and other words pointing back to a person or entity already in the talk."},
        {"noun_verb_collocation", "Noun & Verb Collocation", L::token, "Noun and verb combinations used in their conventional form."},
        {"code_switching", "Code Switching", L::token, "Switching into another language to get a point across."},
        {"negotiation_of_meaning", "Negotiation of Meaning", L::token, "Clarification or confirmation moves that repair a misunderstanding."},
        {"tense_choice", "Tense Choice", L::token, "Tense selected to serve an interactional aim."},
        {"routinized_resources", "Routinized Resources", L::token, "Formulaic multi-word chunks produced as a unit."},
        {"subordinate_clauses", "Subordinate Clauses", L::token, "Dependent clauses that build up more complex turns."},
        {"backchannels", "Backchannels", L::utterance, "Short listener responses (mm-hm, right) that do not take the floor."},
        {"question_based_responses", "Question-Based Responses", L::utterance, "Replies phrased as a question."},
        {"formulaic_responses", "Formulaic Responses", L::utterance, "Conventional fixed expressions used as a reply."},
        {"collaborative_finishes", "Collaborative Finishes", L::utterance, "One speaker completing the other speaker's utterance."},
        {"adj_adv_possibility", "Adj./Adv. Expressing Possibility", L::utterance, "Adjectives and adverbs that hedge or mark possibility."},
        {"impersonal_subject", "Impersonal Subject + Non-factive Verb + NP", L::utterance, "Impersonal-subject constructions followed by a non-factive verb and a noun phrase."},
        {"non_factive_verb", "Non-factive Verb", L::utterance, "Non-factive verbs and noun phrases that soften a claim."},
        {"feedback_next_turn", "Feedback in Next Turn", L::utterance, "Direct uptake of the previous turn at the start of the next one."},
        {"epistemic_copulas", "Epistemic Copulas", L::utterance, "Copular constructions expressing stance or certainty (it seems that...)."},
        {"epistemic_modals", "Epistemic Modals", L::utterance, "Modal verbs expressing likelihood."},
    };
}

inline std::vector<LabelDef> default_labels() {
    return {
        {"topic",
         {{5, "extends the topic with clearly new content"},
          {4, "extends the topic along the direction already set"},
          {3, "extends the topic but with the same content"},
          {2, "repeats without extending the topic"},
          {1, "does not extend the topic and lets it stop here"}}},
        {"tone",
         {{5, "very informal"},
          {4, "mostly informal with some formal expressions"},
          {3, "leaning informal, most expressions informal"},
          {2, "mostly formal with some less formal expressions"},
          {1, "very formal"}}},
        {"opening",
         {{5, "good greeting that shows a clear grasp of how social conversations open"},
          {4, "sound greeting with a basic grasp of the social role"},
          {3, "generic greeting without a good grasp of the social role"},
          {2, "minimal greeting"},
          {1, "no opening, the discussion starts immediately"}}},
        {"closing",
         {{5, "detailed summary and a smooth move to the close"},
          {4, "natural move to the close without summarising"},
          {3, "moves on to the discussion"},
          {2, "signals that the conversation is ending"},
          {1, "no closing, the conversation just stops"}}},
    };
}

// ---------------------------------------------------------------------------
// Tokenization

namespace detail {
inline bool is_detached_punct(unsigned char c) {
    return std::ispunct(c) && c != '\'' && c != '-';
}
}  // namespace detail

/// Whitespace split after detaching punctuation (apostrophes and hyphens stay word-internal).
inline std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    auto flush = [&] {
        if (!current.empty()) tokens.push_back(std::move(current));
        current.clear();
    };
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isspace(c)) {
            flush();
        } else if (detail::is_detached_punct(c)) {
            flush();
            tokens.emplace_back(1, ch);
        } else {
            current.push_back(ch);
        }
    }
    flush();
    return tokens;
}

inline std::string strip_whitespace(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    for (char ch : text) {
        if (!std::isspace(static_cast<unsigned char>(ch))) out.push_back(ch);
    }
    return out;
}

// ---------------------------------------------------------------------------
// JSON (de)serialization

namespace detail {

inline std::string type_name(const json& j) { return j.type_name(); }

inline const json& member(const json& j, std::string_view key, const std::string& where) {
    if (!j.is_object()) throw DataError(where + ": expected an object, got " + type_name(j));
    auto it = j.find(key);
    if (it == j.end()) throw DataError(where + ": missing field '" + std::string(key) + "'");
    return *it;
}

inline std::string get_string(const json& j, std::string_view key, const std::string& where) {
    const json& v = member(j, key, where);
    if (!v.is_string()) throw DataError(where + ": field '" + std::string(key) + "' must be a string");
    return v.get<std::string>();
}

inline std::int64_t get_int(const json& j, std::string_view key, const std::string& where) {
    const json& v = member(j, key, where);
    if (!v.is_number_integer()) throw DataError(where + ": field '" + std::string(key) + "' must be an integer");
    return v.get<std::int64_t>();
}

inline std::size_t get_index(const json& j, std::string_view key, const std::string& where) {
    const auto v = get_int(j, key, where);
    if (v < 0) throw DataError(where + ": field '" + std::string(key) + "' must be non-negative");
    return static_cast<std::size_t>(v);
}

inline const json& get_array(const json& j, std::string_view key, const std::string& where) {
    const json& v = member(j, key, where);
    if (!v.is_array()) throw DataError(where + ": field '" + std::string(key) + "' must be an array");
    return v;
}

/// Converts nlohmann's byte offset into a 1-based line/column pair.
inline std::pair<std::size_t, std::size_t> line_column(std::string_view text, std::size_t byte) {
    std::size_t line = 1, column = 1;
    for (std::size_t i = 0; i + 1 < byte && i < text.size(); ++i) {
        if (text[i] == '\n') {
            ++line;
            column = 1;
        } else {
            ++column;
        }
    }
    return {line, column};
}

}  // namespace detail

inline json parse_json(std::string_view text, const std::string& source) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        const auto [line, column] = detail::line_column(text, e.byte);
        throw ParseError(source, line, column, e.what());
    }
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << content;
}

inline json to_json(const FeatureDef& f) {
    return {{"id", f.id}, {"name", f.name}, {"level", std::string(to_string(f.level))}, {"description", f.description}};
}

inline FeatureDef feature_from_json(const json& j, const std::string& where) {
    FeatureDef f;
    f.id = detail::get_string(j, "id", where);
    f.name = detail::get_string(j, "name", where);
    const auto level = detail::get_string(j, "level", where);
    if (level == "token") {
        f.level = FeatureLevel::token;
    } else if (level == "utterance") {
        f.level = FeatureLevel::utterance;
    } else {
        throw DataError(where + ": level must be 'token' or 'utterance', got '" + level + "'");
    }
    if (j.contains("description")) f.description = detail::get_string(j, "description", where);
    return f;
}

inline json to_json(const LabelDef& l) {
    json rubric = json::object();
    for (const auto& [score, text] : l.rubric) rubric[std::to_string(score)] = text;
    return {{"id", l.id}, {"rubric", rubric}};
}

inline LabelDef label_from_json(const json& j, const std::string& where) {
    LabelDef l;
    l.id = detail::get_string(j, "id", where);
    const json& rubric = detail::member(j, "rubric", where);
    if (!rubric.is_object()) throw DataError(where + ": rubric must be an object keyed by score");
    for (const auto& [key, text] : rubric.items()) {
        int score = 0;
        try {
            std::size_t used = 0;
            score = std::stoi(key, &used);
            if (used != key.size()) throw std::invalid_argument(key);
        } catch (const std::exception&) {
            throw DataError(where + ": rubric key '" + key + "' is not an integer score");
        }
        if (!text.is_string()) throw DataError(where + ": rubric entry " + key + " must be a string");
        l.rubric[score] = text.get<std::string>();
    }
    return l;
}

inline json to_json(const Turn& t) {
    return {{"index", t.index}, {"speaker_id", t.speaker_id}, {"tokens", t.tokens}, {"raw_text", t.raw_text}};
}

inline json to_json(const Dialogue& d) {
    json speakers = json::array();
    for (const auto& s : d.speakers) {
        json js = {{"speaker_id", s.speaker_id}};
        if (s.proficiency) js["proficiency"] = *s.proficiency;
        speakers.push_back(std::move(js));
    }
    json turns = json::array();
    for (const auto& t : d.turns) turns.push_back(to_json(t));
    json out = {{"id", d.id}, {"topic", d.topic}, {"speakers", speakers}, {"turns", turns}};
    if (!d.annotators.empty()) out["annotators"] = d.annotators;
    return out;
}

inline Dialogue dialogue_from_json(const json& j, const std::string& where) {
    Dialogue d;
    d.id = detail::get_string(j, "id", where);
    const std::string here = "dialogue '" + d.id + "'";
    d.topic = j.contains("topic") ? detail::get_string(j, "topic", here) : std::string{};
    for (const auto& js : detail::get_array(j, "speakers", here)) {
        Speaker s;
        s.speaker_id = detail::get_string(js, "speaker_id", here + " speaker");
        if (js.contains("proficiency") && !js["proficiency"].is_null()) {
            s.proficiency = detail::get_string(js, "proficiency", here + " speaker " + s.speaker_id);
        }
        d.speakers.push_back(std::move(s));
    }
    std::size_t position = 0;
    for (const auto& jt : detail::get_array(j, "turns", here)) {
        const std::string turn_where = here + " turn #" + std::to_string(position++);
        Turn t;
        t.index = detail::get_index(jt, "index", turn_where);
        t.speaker_id = detail::get_string(jt, "speaker_id", turn_where);
        t.raw_text = jt.contains("raw_text") ? detail::get_string(jt, "raw_text", turn_where) : std::string{};
        if (jt.contains("tokens")) {
            for (const auto& tok : detail::get_array(jt, "tokens", turn_where)) {
                if (!tok.is_string()) throw DataError(turn_where + ": tokens must be strings");
                t.tokens.push_back(tok.get<std::string>());
            }
        } else {
            t.tokens = tokenize(t.raw_text);
        }
        d.turns.push_back(std::move(t));
    }
    if (j.contains("annotators")) {
        for (const auto& a : detail::get_array(j, "annotators", here)) {
            if (!a.is_string()) throw DataError(here + ": annotators must be strings");
            d.annotators.push_back(a.get<std::string>());
        }
    }
    return d;
}

inline json to_json(const SpanAnnotation& s) {
    json out = {{"dialogue_id", s.dialogue_id},
                {"annotator_id", s.annotator_id},
                {"feature_id", s.feature_id},
                {"turn_index", s.turn_index},
                {"token_range", {s.range.start, s.range.end}}};
    if (s.clipped) out["clipped"] = true;
    return out;
}

inline SpanAnnotation span_from_json(const json& j, const std::string& where) {
    SpanAnnotation s;
    s.dialogue_id = detail::get_string(j, "dialogue_id", where);
    s.annotator_id = detail::get_string(j, "annotator_id", where);
    s.feature_id = detail::get_string(j, "feature_id", where);
    s.turn_index = detail::get_index(j, "turn_index", where);
    const json& range = detail::get_array(j, "token_range", where);
    if (range.size() != 2 || !range[0].is_number_integer() || !range[1].is_number_integer() ||
        range[0].get<std::int64_t>() < 0 || range[1].get<std::int64_t>() < 0) {
        throw DataError(where + ": token_range must be two non-negative integers [start, end)");
    }
    s.range = {range[0].get<std::size_t>(), range[1].get<std::size_t>()};
    if (j.contains("clipped")) s.clipped = j["clipped"].get<bool>();
    return s;
}

inline json to_json(const InteractivityScore& s) {
    return {{"annotator_id", s.annotator_id}, {"label_id", s.label_id}, {"score", s.score}};
}

inline InteractivityScore score_from_json(const json& j, const std::string& where) {
    InteractivityScore s;
    s.annotator_id = detail::get_string(j, "annotator_id", where);
    s.label_id = detail::get_string(j, "label_id", where);
    s.score = static_cast<int>(detail::get_int(j, "score", where));
    return s;
}

inline json to_json(const Corpus& c) {
    json registry = json::array();
    for (const auto& f : c.registry) registry.push_back(to_json(f));
    json labels = json::array();
    for (const auto& l : c.labels) labels.push_back(to_json(l));
    json dialogues = json::array();
    for (const auto& d : c.dialogues) dialogues.push_back(to_json(d));
    json spans = json::array();
    for (const auto& s : c.spans) spans.push_back(to_json(s));
    json scores = json::object();
    for (const auto& [id, list] : c.scores) {
        json arr = json::array();
        for (const auto& s : list) arr.push_back(to_json(s));
        scores[id] = std::move(arr);
    }
    return {{"registry", registry},
            {"labels", labels},
            {"dialogues", dialogues},
            {"span_annotations", spans},
            {"interactivity_scores", scores}};
}

/// Structural decode only; call validate() for the semantic invariants.
inline Corpus corpus_from_json(const json& j) {
    if (!j.is_object()) throw DataError("corpus: top level must be an object");
    Corpus c;
    std::size_t i = 0;
    for (const auto& jf : detail::get_array(j, "registry", "corpus")) {
        c.registry.push_back(feature_from_json(jf, "registry entry #" + std::to_string(i++)));
    }
    i = 0;
    for (const auto& jl : detail::get_array(j, "labels", "corpus")) {
        c.labels.push_back(label_from_json(jl, "label #" + std::to_string(i++)));
    }
    i = 0;
    for (const auto& jd : detail::get_array(j, "dialogues", "corpus")) {
        c.dialogues.push_back(dialogue_from_json(jd, "dialogue #" + std::to_string(i++)));
    }
    i = 0;
    if (j.contains("span_annotations")) {
        for (const auto& js : detail::get_array(j, "span_annotations", "corpus")) {
            c.spans.push_back(span_from_json(js, "span #" + std::to_string(i++)));
        }
    }
    if (j.contains("interactivity_scores")) {
        const json& scores = j["interactivity_scores"];
        if (!scores.is_object()) throw DataError("corpus: interactivity_scores must map dialogue id -> list");
        for (const auto& [id, list] : scores.items()) {
            if (!list.is_array()) throw DataError("interactivity_scores['" + id + "'] must be a list");
            auto& out = c.scores[id];
            std::size_t k = 0;
            for (const auto& js : list) {
                out.push_back(score_from_json(js, "dialogue '" + id + "' score #" + std::to_string(k++)));
            }
        }
    }
    return c;
}

// ---------------------------------------------------------------------------
// Validation

inline std::string describe(const SpanAnnotation& s, std::size_t position) {
    return "span #" + std::to_string(position) + " (dialogue '" + s.dialogue_id + "', turn " +
           std::to_string(s.turn_index) + ", annotator '" + s.annotator_id + "', feature '" + s.feature_id +
           "', tokens [" + std::to_string(s.range.start) + "," + std::to_string(s.range.end) + "))";
}

inline void validate_registry(const std::vector<FeatureDef>& registry) {
    std::set<std::string> ids;
    for (const auto& f : registry) {
        if (f.id.empty()) throw DataError("registry: feature with empty id");
        if (!ids.insert(f.id).second) throw DataError("registry: duplicate feature id '" + f.id + "'");
    }
}

inline void validate_labels(const std::vector<LabelDef>& labels) {
    if (labels.size() != kLabelIds.size()) {
        throw DataError("labels: expected exactly 4 interactivity labels, got " + std::to_string(labels.size()));
    }
    std::set<std::string> seen;
    for (const auto& l : labels) {
        if (std::find(kLabelIds.begin(), kLabelIds.end(), l.id) == kLabelIds.end()) {
            throw DataError("labels: unknown label id '" + l.id + "' (expected topic, tone, opening, closing)");
        }
        if (!seen.insert(l.id).second) throw DataError("labels: duplicate label id '" + l.id + "'");
        for (const auto& [score, text] : l.rubric) {
            if (score < kMinScore || score > kMaxScore) {
                throw DataError("label '" + l.id + "': rubric score " + std::to_string(score) + " outside 1..5");
            }
        }
    }
}

inline void validate_dialogue(const Dialogue& d) {
    const std::string where = "dialogue '" + d.id + "'";
    if (d.id.empty()) throw DataError("dialogue with empty id");
    if (d.turns.empty()) throw DataError(where + ": has no turns");
    std::set<std::string> speakers;
    for (const auto& s : d.speakers) speakers.insert(s.speaker_id);
    for (std::size_t i = 0; i < d.turns.size(); ++i) {
        const Turn& t = d.turns[i];
        const std::string turn_where = where + " turn " + std::to_string(i);
        if (t.index != i) {
            throw DataError(turn_where + ": index " + std::to_string(t.index) + " breaks the contiguous 0-based order");
        }
        if (!speakers.count(t.speaker_id)) {
            throw DataError(turn_where + ": speaker '" + t.speaker_id + "' is not listed in speakers");
        }
        const std::string raw = strip_whitespace(t.raw_text);
        if (!raw.empty() && t.tokens.empty()) throw DataError(turn_where + ": non-empty raw_text but no tokens");
        std::string joined;
        for (const auto& tok : t.tokens) {
            if (tok.empty()) throw DataError(turn_where + ": empty token");
            joined += tok;
        }
        if (strip_whitespace(joined) != raw) {
            throw DataError(turn_where + ": tokens do not reproduce raw_text");
        }
    }
}

/// Checks every corpus invariant; throws DataError naming the offending entity.
inline void validate(const Corpus& c) {
    validate_registry(c.registry);
    validate_labels(c.labels);

    std::unordered_map<std::string, const Dialogue*> by_id;
    for (const auto& d : c.dialogues) {
        validate_dialogue(d);
        if (!by_id.emplace(d.id, &d).second) throw DataError("duplicate dialogue id '" + d.id + "'");
    }
    std::set<std::string> feature_ids;
    for (const auto& f : c.registry) feature_ids.insert(f.id);

    for (std::size_t i = 0; i < c.spans.size(); ++i) {
        const SpanAnnotation& s = c.spans[i];
        auto it = by_id.find(s.dialogue_id);
        if (it == by_id.end()) throw DataError(describe(s, i) + ": unknown dialogue");
        if (!feature_ids.count(s.feature_id)) throw DataError(describe(s, i) + ": feature not in registry");
        const Dialogue& d = *it->second;
        if (s.turn_index >= d.turns.size()) {
            throw DataError(describe(s, i) + ": turn index out of range (dialogue has " +
                            std::to_string(d.turns.size()) + " turns)");
        }
        const std::size_t n = d.turns[s.turn_index].tokens.size();
        if (s.range.start >= s.range.end) throw DataError(describe(s, i) + ": empty or reversed token range");
        if (s.range.end > n) {
            throw DataError(describe(s, i) + ": end exceeds turn token count " + std::to_string(n));
        }
    }

    for (const auto& [dialogue_id, list] : c.scores) {
        if (!by_id.count(dialogue_id)) throw DataError("interactivity scores for unknown dialogue '" + dialogue_id + "'");
        for (const auto& s : list) {
            const std::string where = "dialogue '" + dialogue_id + "', annotator '" + s.annotator_id + "'";
            if (std::none_of(c.labels.begin(), c.labels.end(), [&](const LabelDef& l) { return l.id == s.label_id; })) {
                throw DataError(where + ": unknown label '" + s.label_id + "'");
            }
            if (s.score < kMinScore || s.score > kMaxScore) {
                throw DataError(where + ": score " + std::to_string(s.score) + " for label '" + s.label_id +
                                "' outside 1..5");
            }
        }
    }
}

inline Corpus parse_corpus(std::string_view text, const std::string& source = "<memory>") {
    Corpus c = corpus_from_json(parse_json(text, source));
    validate(c);
    return c;
}

inline Corpus load_corpus(const std::filesystem::path& path) {
    return parse_corpus(read_file(path), path.string());
}

inline std::string serialize(const Corpus& c) { return to_json(c).dump(2) + "\n"; }

inline void save_corpus(const Corpus& c, const std::filesystem::path& path) { write_file(path, serialize(c)); }

/// Registry file: {"registry": [...], "labels": [...]} (labels optional).
inline std::pair<std::vector<FeatureDef>, std::vector<LabelDef>> load_registry(const std::filesystem::path& path) {
    const std::string text = read_file(path);
    const json j = parse_json(text, path.string());
    std::vector<FeatureDef> registry;
    std::size_t i = 0;
    for (const auto& jf : detail::get_array(j, "registry", path.string())) {
        registry.push_back(feature_from_json(jf, "registry entry #" + std::to_string(i++)));
    }
    validate_registry(registry);
    std::vector<LabelDef> labels = default_labels();
    if (j.contains("labels")) {
        labels.clear();
        i = 0;
        for (const auto& jl : detail::get_array(j, "labels", path.string())) {
            labels.push_back(label_from_json(jl, "label #" + std::to_string(i++)));
        }
        validate_labels(labels);
    }
    return {std::move(registry), std::move(labels)};
}

// ---------------------------------------------------------------------------
// Majority voting

/// Mode of 1..5 scores; ties resolve to the lowest tied score.
inline int majority_label(std::span<const int> scores) {
    if (scores.empty()) throw DataError("majority_label: empty score list");
    std::array<std::size_t, kMaxScore + 1> counts{};
    for (int s : scores) {
        if (s < kMinScore || s > kMaxScore) throw DataError("majority_label: score " + std::to_string(s) + " outside 1..5");
        ++counts[static_cast<std::size_t>(s)];
    }
    int best = kMinScore;
    for (int s = kMinScore + 1; s <= kMaxScore; ++s) {
        if (counts[static_cast<std::size_t>(s)] > counts[static_cast<std::size_t>(best)]) best = s;
    }
    return best;
}

inline constexpr std::string_view kTieRule = "lowest";

/// Majority label per label id over all annotators' scores for one dialogue.
inline std::map<std::string, int> majority_labels(const std::vector<InteractivityScore>& scores) {
    std::map<std::string, std::vector<int>> grouped;
    for (const auto& s : scores) grouped[s.label_id].push_back(s.score);
    std::map<std::string, int> out;
    for (const auto& [label, values] : grouped) out[label] = majority_label(values);
    return out;
}

// ---------------------------------------------------------------------------
// Mini-dialogues

struct TurnWindow {
    std::size_t first = 0;
    std::size_t last = 0;  // exclusive

    std::size_t size() const { return last - first; }
    friend bool operator==(const TurnWindow&, const TurnWindow&) = default;
};

struct MiniDialogue {
    std::string id;
    std::string parent_dialogue_id;
    TurnWindow window;
    std::map<std::string, int> inherited_labels;
    // Window turns, re-indexed from 0; spans are re-indexed to the same coordinates.
    std::vector<Turn> turns;
    std::vector<SpanAnnotation> spans;
    std::vector<std::string> annotators;

    std::size_t token_count() const {
        std::size_t n = 0;
        for (const auto& t : turns) n += t.tokens.size();
        return n;
    }
};

struct Stride {
    enum class Mode { contiguous, sample };
    Mode mode = Mode::contiguous;
    std::size_t k = 0;
    std::uint64_t seed = 0;

    static Stride contiguous() { return {}; }
    static Stride sample(std::size_t k, std::uint64_t seed) { return {Mode::sample, k, seed}; }
};

inline std::vector<TurnWindow> contiguous_windows(std::size_t turn_count, std::size_t max_turns) {
    if (max_turns < 1) throw DataError("split: max_turns must be >= 1");
    std::vector<TurnWindow> windows;
    for (std::size_t first = 0; first < turn_count; first += max_turns) {
        windows.push_back({first, std::min(first + max_turns, turn_count)});
    }
    return windows;
}

inline std::string mini_id(std::string_view parent, TurnWindow w) {
    return std::string(parent) + "#" + std::to_string(w.first) + "-" + std::to_string(w.last);
}

/// Cuts one window out of a dialogue: turns, projected spans and inherited labels.
inline MiniDialogue make_mini(const Corpus& c, const Dialogue& d, TurnWindow w,
                              const std::vector<const SpanAnnotation*>& parent_spans) {
    MiniDialogue m;
    m.id = mini_id(d.id, w);
    m.parent_dialogue_id = d.id;
    m.window = w;
    if (auto it = c.scores.find(d.id); it != c.scores.end()) m.inherited_labels = majority_labels(it->second);
    m.annotators = c.annotators_of(d);
    for (std::size_t t = w.first; t < w.last; ++t) {
        Turn turn = d.turns[t];
        turn.index = t - w.first;
        m.turns.push_back(std::move(turn));
    }
    for (const SpanAnnotation* s : parent_spans) {
        if (s->turn_index < w.first || s->turn_index >= w.last) continue;
        SpanAnnotation projected = *s;
        projected.dialogue_id = m.id;
        projected.turn_index = s->turn_index - w.first;
        m.spans.push_back(std::move(projected));
    }
    return m;
}

inline std::vector<MiniDialogue> split_mini(const Corpus& c, const Dialogue& d, std::size_t max_turns = 12,
                                            Stride stride = Stride::contiguous()) {
    auto windows = contiguous_windows(d.turns.size(), max_turns);
    if (stride.mode == Stride::Mode::sample && stride.k < windows.size()) {
        std::vector<std::size_t> order(windows.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng rng(derive_seed(stride.seed, "split", fnv1a64(d.id)));
        rng.shuffle(std::span(order));
        order.resize(stride.k);
        std::sort(order.begin(), order.end());
        std::vector<TurnWindow> picked;
        for (auto i : order) picked.push_back(windows[i]);
        windows = std::move(picked);
    }
    const auto parent_spans = c.spans_of(d.id);
    std::vector<MiniDialogue> minis;
    minis.reserve(windows.size());
    for (const auto& w : windows) minis.push_back(make_mini(c, d, w, parent_spans));
    return minis;
}

struct SplitOptions {
    std::size_t max_turns = 12;
    // When set, draw this many windows without replacement from the pooled contiguous
    // windows of every dialogue (the whole corpus), instead of keeping all of them.
    std::optional<std::size_t> sample_total;
    std::uint64_t seed = 0;
};

/// Splits every dialogue. Output order: corpus dialogue order, then window start.
inline std::vector<MiniDialogue> split_corpus(const Corpus& c, const SplitOptions& options) {
    std::unordered_map<std::string, std::vector<const SpanAnnotation*>> spans_by_dialogue;
    for (const auto& s : c.spans) spans_by_dialogue[s.dialogue_id].push_back(&s);

    std::vector<std::pair<std::size_t, TurnWindow>> pool;  // (dialogue position, window)
    for (std::size_t i = 0; i < c.dialogues.size(); ++i) {
        for (const auto& w : contiguous_windows(c.dialogues[i].turns.size(), options.max_turns)) pool.emplace_back(i, w);
    }
    if (options.sample_total) {
        if (*options.sample_total > pool.size()) {
            throw DataError("split: cannot sample " + std::to_string(*options.sample_total) + " mini-dialogues from " +
                            std::to_string(pool.size()) + " windows");
        }
        std::vector<std::size_t> order(pool.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng rng(derive_seed(options.seed, "split"));
        rng.shuffle(std::span(order));
        order.resize(*options.sample_total);
        std::sort(order.begin(), order.end());
        std::vector<std::pair<std::size_t, TurnWindow>> picked;
        picked.reserve(order.size());
        for (auto i : order) picked.push_back(pool[i]);
        pool = std::move(picked);
    }
    static const std::vector<const SpanAnnotation*> kNoSpans;
    std::vector<MiniDialogue> minis;
    minis.reserve(pool.size());
    for (const auto& [position, window] : pool) {
        const Dialogue& d = c.dialogues[position];
        auto it = spans_by_dialogue.find(d.id);
        minis.push_back(make_mini(c, d, window, it == spans_by_dialogue.end() ? kNoSpans : it->second));
    }
    return minis;
}

/// Pooled Pearson r between inherited labels and fresh re-annotations
/// (mini id -> label id -> score), over every (mini, label) pair present in both.
inline double validate_label_copy(std::span<const MiniDialogue> minis,
                                  const std::map<std::string, std::map<std::string, int>>& fresh) {
    std::vector<double> inherited, reannotated;
    for (const auto& m : minis) {
        auto it = fresh.find(m.id);
        if (it == fresh.end()) continue;
        for (const auto& [label, score] : m.inherited_labels) {
            auto jt = it->second.find(label);
            if (jt == it->second.end()) continue;
            inherited.push_back(score);
            reannotated.push_back(jt->second);
        }
    }
    if (inherited.size() < 2) {
        throw NumericError("validate_label_copy: need at least 2 (inherited, fresh) pairs, got " +
                           std::to_string(inherited.size()));
    }
    return stats::pearson(inherited, reannotated);
}

// ---------------------------------------------------------------------------
// Mini-dialogue export: the corpus schema plus parent/window fields.

struct MiniSet {
    std::vector<FeatureDef> registry;
    std::vector<LabelDef> labels;
    std::vector<MiniDialogue> minis;
    json split_info = json::object();
};

inline json to_json(const MiniSet& set) {
    Corpus shell;
    shell.registry = set.registry;
    shell.labels = set.labels;
    json j = to_json(shell);
    json& dialogues = j["dialogues"];
    json& spans = j["span_annotations"];
    json& scores = j["interactivity_scores"];
    for (const auto& m : set.minis) {
        Dialogue d;
        d.id = m.id;
        d.turns = m.turns;
        d.annotators = m.annotators;
        std::set<std::string> speaker_ids;
        for (const auto& t : m.turns) speaker_ids.insert(t.speaker_id);
        for (const auto& s : speaker_ids) d.speakers.push_back({s, std::nullopt});
        json jd = to_json(d);
        jd.erase("topic");
        jd["parent_dialogue_id"] = m.parent_dialogue_id;
        jd["turn_window"] = {m.window.first, m.window.last};
        jd["inherited_labels"] = m.inherited_labels;
        dialogues.push_back(std::move(jd));
        for (const auto& s : m.spans) spans.push_back(to_json(s));
        json list = json::array();
        for (const auto& [label, score] : m.inherited_labels) {
            list.push_back(to_json(InteractivityScore{"majority", label, score}));
        }
        scores[m.id] = std::move(list);
    }
    j["split"] = set.split_info;
    j["split"]["tie_rule"] = std::string(kTieRule);
    return j;
}

inline MiniSet minis_from_json(const json& j) {
    Corpus c = corpus_from_json(j);
    validate(c);
    MiniSet set;
    set.registry = c.registry;
    set.labels = c.labels;
    if (j.contains("split")) set.split_info = j["split"];
    std::unordered_map<std::string, std::vector<SpanAnnotation>> spans_by_mini;
    for (auto& s : c.spans) spans_by_mini[s.dialogue_id].push_back(s);
    const json& dialogues = j["dialogues"];
    for (std::size_t i = 0; i < c.dialogues.size(); ++i) {
        const json& jd = dialogues[i];
        const Dialogue& d = c.dialogues[i];
        const std::string where = "mini-dialogue '" + d.id + "'";
        MiniDialogue m;
        m.id = d.id;
        m.parent_dialogue_id = detail::get_string(jd, "parent_dialogue_id", where);
        const json& window = detail::get_array(jd, "turn_window", where);
        if (window.size() != 2) throw DataError(where + ": turn_window must be [first, last)");
        m.window = {window[0].get<std::size_t>(), window[1].get<std::size_t>()};
        if (m.window.size() != d.turns.size()) throw DataError(where + ": turn_window does not match its turn count");
        if (jd.contains("inherited_labels")) {
            for (const auto& [label, score] : jd["inherited_labels"].items()) {
                if (!score.is_number_integer() || score.get<int>() < kMinScore || score.get<int>() > kMaxScore) {
                    throw DataError(where + ": inherited label '" + label + "' must be an integer in 1..5");
                }
                m.inherited_labels[label] = score.get<int>();
            }
        } else if (auto it = c.scores.find(d.id); it != c.scores.end()) {
            m.inherited_labels = majority_labels(it->second);
        }
        m.turns = d.turns;
        m.annotators = d.annotators;
        m.spans = std::move(spans_by_mini[d.id]);
        set.minis.push_back(std::move(m));
    }
    return set;
}

inline bool is_mini_export(const json& j) { return j.is_object() && j.contains("split"); }

inline MiniSet load_minis(const std::filesystem::path& path) {
    return minis_from_json(parse_json(read_file(path), path.string()));
}

}  // namespace dialeval::corpus
