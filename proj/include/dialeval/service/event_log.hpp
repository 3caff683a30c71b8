#pragma once

// Append-only annotation event log and the fold that turns it into corpus state.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dialeval/corpus.hpp"

namespace dialeval::service {

using json = nlohmann::json;
using corpus::Corpus;
using corpus::InteractivityScore;
using corpus::SpanAnnotation;

enum class EventKind { span_added, span_removed, label_set };

inline std::string_view to_string(EventKind k) {
    switch (k) {
        case EventKind::span_added: return "span_added";
        case EventKind::span_removed: return "span_removed";
        case EventKind::label_set: return "label_set";
    }
    return "?";
}

inline EventKind parse_event_kind(std::string_view s) {
    if (s == "span_added") return EventKind::span_added;
    if (s == "span_removed") return EventKind::span_removed;
    if (s == "label_set") return EventKind::label_set;
    throw DataError("unknown event kind '" + std::string(s) + "'");
}

struct AnnotationEvent {
    std::uint64_t event_id = 0;
    std::string timestamp;
    std::string annotator_id;
    EventKind kind = EventKind::span_added;
    std::string dialogue_id;
    std::optional<SpanAnnotation> span;        // span_added, span_removed (copy of the removed span)
    std::optional<InteractivityScore> score;   // label_set
    std::optional<std::uint64_t> supersedes;   // span_removed: the span_added event; label_set: previous value
};

inline json to_json(const AnnotationEvent& e) {
    json out = {{"event_id", e.event_id},
                {"timestamp", e.timestamp},
                {"annotator_id", e.annotator_id},
                {"kind", std::string(to_string(e.kind))},
                {"dialogue_id", e.dialogue_id}};
    if (e.span) out["payload"] = corpus::to_json(*e.span);
    if (e.score) out["payload"] = {{"label_id", e.score->label_id}, {"score", e.score->score}};
    if (e.supersedes) out["supersedes"] = *e.supersedes;
    return out;
}

inline AnnotationEvent event_from_json(const json& j, const std::string& where) {
    AnnotationEvent e;
    e.event_id = j.at("event_id").get<std::uint64_t>();
    e.timestamp = j.at("timestamp").get<std::string>();
    e.annotator_id = j.at("annotator_id").get<std::string>();
    e.kind = parse_event_kind(j.at("kind").get<std::string>());
    e.dialogue_id = j.at("dialogue_id").get<std::string>();
    if (j.contains("supersedes")) e.supersedes = j.at("supersedes").get<std::uint64_t>();
    if (e.kind == EventKind::label_set) {
        const json& p = j.at("payload");
        e.score = InteractivityScore{e.annotator_id, p.at("label_id").get<std::string>(), p.at("score").get<int>()};
    } else {
        e.span = corpus::span_from_json(j.at("payload"), where);
    }
    return e;
}

/// Current annotation state. Spans keep the order of their span_added events; a label
/// re-set by the same annotator replaces the earlier score in place.
struct State {
    std::vector<std::pair<std::uint64_t, SpanAnnotation>> spans;
    std::map<std::string, std::vector<std::pair<std::uint64_t, InteractivityScore>>> scores;
    std::map<std::uint64_t, std::string> removed;  // span_added id -> dialogue id

    const SpanAnnotation* live_span(std::uint64_t event_id) const {
        for (const auto& [id, s] : spans) {
            if (id == event_id) return &s;
        }
        return nullptr;
    }

    /// Event id of the annotator's current score for (dialogue, label), if any.
    std::optional<std::uint64_t> score_event(const std::string& dialogue, const std::string& annotator,
                                             const std::string& label) const {
        auto it = scores.find(dialogue);
        if (it == scores.end()) return std::nullopt;
        for (const auto& [id, s] : it->second) {
            if (s.annotator_id == annotator && s.label_id == label) return id;
        }
        return std::nullopt;
    }
};

inline void apply(State& state, const AnnotationEvent& e) {
    switch (e.kind) {
        case EventKind::span_added:
            state.spans.emplace_back(e.event_id, *e.span);
            break;
        case EventKind::span_removed: {
            if (!e.supersedes) throw DataError("event " + std::to_string(e.event_id) + ": span_removed without target");
            auto it = std::find_if(state.spans.begin(), state.spans.end(),
                                   [&](const auto& p) { return p.first == *e.supersedes; });
            if (it == state.spans.end()) {
                throw DataError("event " + std::to_string(e.event_id) + ": removes unknown span event " +
                                std::to_string(*e.supersedes));
            }
            state.removed.emplace(it->first, it->second.dialogue_id);
            state.spans.erase(it);
            break;
        }
        case EventKind::label_set: {
            auto& list = state.scores[e.dialogue_id];
            auto it = std::find_if(list.begin(), list.end(), [&](const auto& p) {
                return p.second.annotator_id == e.score->annotator_id && p.second.label_id == e.score->label_id;
            });
            if (it == list.end()) {
                list.emplace_back(e.event_id, *e.score);
            } else {
                *it = {e.event_id, *e.score};
            }
            break;
        }
    }
}

inline State fold(const std::vector<AnnotationEvent>& events) {
    State state;
    for (const auto& e : events) apply(state, e);
    return state;
}

/// `base` supplies registry, labels and dialogues; annotations come from `state`.
inline Corpus materialize(const Corpus& base, const State& state) {
    Corpus c;
    c.registry = base.registry;
    c.labels = base.labels;
    c.dialogues = base.dialogues;
    for (const auto& [id, s] : state.spans) c.spans.push_back(s);
    for (const auto& [dialogue, list] : state.scores) {
        auto& out = c.scores[dialogue];
        for (const auto& [id, s] : list) out.push_back(s);
    }
    return c;
}

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline constexpr std::string_view kImportTimestamp = "import";

/// JSON-lines log. Not thread-safe on its own; the service serializes appends.
class EventLog {
public:
    EventLog() = default;

    /// Opens (or creates) a log file. An empty path keeps the log in memory only.
    explicit EventLog(std::filesystem::path path) : path_(std::move(path)) {
        if (path_.empty() || !std::filesystem::exists(path_)) return;
        std::ifstream in(path_);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            const std::string where = path_.string() + ":" + std::to_string(line_no);
            json j;
            try {
                j = json::parse(line);
            } catch (const json::parse_error& e) {
                throw ParseError(path_.string(), line_no, e.byte, e.what());
            }
            AnnotationEvent e;
            try {
                e = event_from_json(j, where);
            } catch (const json::exception& ex) {
                throw DataError(where + ": malformed event: " + ex.what());
            }
            if (!events_.empty() && e.event_id <= events_.back().event_id) {
                throw DataError(where + ": event ids must strictly increase");
            }
            events_.push_back(std::move(e));
        }
    }

    const std::vector<AnnotationEvent>& events() const { return events_; }
    bool empty() const { return events_.empty(); }
    std::uint64_t next_id() const { return events_.empty() ? 1 : events_.back().event_id + 1; }

    /// Assigns the next event id, persists, and returns the stored event.
    const AnnotationEvent& append(AnnotationEvent e) {
        e.event_id = next_id();
        if (!path_.empty()) {
            std::ofstream out(path_, std::ios::app);
            if (!out) throw DataError("cannot append to event log '" + path_.string() + "'");
            out << to_json(e).dump() << "\n";
            out.flush();
            if (!out) throw DataError("write to event log '" + path_.string() + "' failed");
        }
        events_.push_back(std::move(e));
        return events_.back();
    }

private:
    std::filesystem::path path_;
    std::vector<AnnotationEvent> events_;
};

/// Seeds an empty log with the corpus's existing annotations, in corpus order.
inline void import_corpus(EventLog& log, const Corpus& c) {
    if (!log.empty()) throw DataError("import_corpus: log already has events");
    for (const auto& s : c.spans) {
        AnnotationEvent e;
        e.timestamp = std::string(kImportTimestamp);
        e.annotator_id = s.annotator_id;
        e.kind = EventKind::span_added;
        e.dialogue_id = s.dialogue_id;
        e.span = s;
        log.append(std::move(e));
    }
    for (const auto& [dialogue, list] : c.scores) {
        for (const auto& s : list) {
            AnnotationEvent e;
            e.timestamp = std::string(kImportTimestamp);
            e.annotator_id = s.annotator_id;
            e.kind = EventKind::label_set;
            e.dialogue_id = dialogue;
            e.score = s;
            log.append(std::move(e));
        }
    }
}

}  // namespace dialeval::service
