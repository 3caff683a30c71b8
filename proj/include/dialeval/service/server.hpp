#pragma once

// HTTP annotation service. Requests are handled by AnnotationService::handle, which
// is transport-independent; serve() binds it to a cpp-httplib server.

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <regex>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "dialeval/corpus.hpp"
#include "dialeval/service/event_log.hpp"

namespace dialeval::service {

struct Principal {
    std::string annotator_id;
    bool admin = false;
    std::optional<std::set<std::string>> dialogues;  // unset: dialogues listing this annotator
};

using TokenTable = std::map<std::string, Principal>;

/// {"tokens": {"<token>": {"annotator_id": "...", "admin": false, "dialogues": ["d1"]}}}
inline TokenTable tokens_from_json(const json& j, const std::string& where = "tokens") {
    if (!j.is_object() || !j.contains("tokens") || !j["tokens"].is_object()) {
        throw DataError(where + ": expected an object with a 'tokens' object");
    }
    TokenTable out;
    for (const auto& [token, entry] : j["tokens"].items()) {
        const std::string here = where + ": token entry for '" + entry.value("annotator_id", std::string{"?"}) + "'";
        if (token.empty()) throw DataError(where + ": empty token");
        if (!entry.is_object() || !entry.contains("annotator_id") || !entry["annotator_id"].is_string()) {
            throw DataError(here + ": missing annotator_id");
        }
        Principal p;
        p.annotator_id = entry["annotator_id"].get<std::string>();
        p.admin = entry.value("admin", false);
        if (entry.contains("dialogues")) p.dialogues = entry["dialogues"].get<std::set<std::string>>();
        out.emplace(token, std::move(p));
    }
    return out;
}

inline TokenTable load_tokens(const std::filesystem::path& path) {
    return tokens_from_json(corpus::parse_json(corpus::read_file(path), path.string()), path.string());
}

struct Response {
    int status = 200;
    json body;
};

class AnnotationService {
public:
    using Clock = std::function<std::string()>;

    /// `base` must validate. If the log is empty the base corpus's annotations are imported
    /// as initial events; otherwise the log is authoritative and base annotations are ignored.
    AnnotationService(Corpus base, EventLog log, TokenTable tokens, Clock clock = utc_timestamp)
        : log_(std::move(log)), tokens_(std::move(tokens)), clock_(std::move(clock)) {
        corpus::validate(base);
        if (log_.empty()) import_corpus(log_, base);
        base.spans.clear();
        base.scores.clear();
        base_ = std::move(base);
        state_ = fold(log_.events());
    }

    Response handle(const std::string& method, const std::string& path, const std::string& authorization,
                    const std::string& body) {
        const Principal* who = authenticate(authorization);
        if (!who) return error(401, "missing or unknown bearer token");
        std::smatch m;
        try {
            if (method == "GET" && path == "/dialogues") return list_dialogues(*who);
            if (method == "GET" && std::regex_match(path, m, std::regex("^/dialogues/([^/]+)$"))) {
                return get_dialogue(*who, m[1].str());
            }
            if (method == "POST" && path == "/annotations/span") return post_span(*who, body);
            if (method == "POST" && path == "/annotations/label") return post_label(*who, body);
            if (method == "DELETE" && std::regex_match(path, m, std::regex("^/annotations/span/([0-9]+)$"))) {
                return delete_span(*who, std::stoull(m[1].str()));
            }
            if (method == "GET" && std::regex_match(path, m, std::regex("^/history/([^/]+)$"))) {
                return history(*who, m[1].str());
            }
            if (method == "GET" && path == "/export") return export_corpus();
        } catch (const json::exception& e) {
            return error(400, std::string("malformed payload: ") + e.what());
        } catch (const std::out_of_range&) {
            return error(404, "unknown event id");
        }
        return error(404, "no route for " + method + " " + path);
    }

    /// Current state, materialized as a corpus.
    Corpus snapshot() const {
        std::shared_lock lock(mutex_);
        return materialize(base_, state_);
    }

    std::vector<AnnotationEvent> events() const {
        std::shared_lock lock(mutex_);
        return log_.events();
    }

private:
    static Response error(int status, std::string message) { return {status, {{"error", std::move(message)}}}; }

    const Principal* authenticate(const std::string& authorization) const {
        static const std::string prefix = "Bearer ";
        if (authorization.rfind(prefix, 0) != 0) return nullptr;
        auto it = tokens_.find(authorization.substr(prefix.size()));
        return it == tokens_.end() ? nullptr : &it->second;
    }

    bool assigned(const Principal& who, const corpus::Dialogue& d) const {
        if (who.admin) return true;
        if (who.dialogues) return who.dialogues->count(d.id) > 0;
        return std::find(d.annotators.begin(), d.annotators.end(), who.annotator_id) != d.annotators.end();
    }

    /// Resolves a dialogue the caller may access; sets `failure` otherwise.
    const corpus::Dialogue* dialogue_for(const Principal& who, const std::string& id, Response& failure) const {
        const corpus::Dialogue* d = base_.find_dialogue(id);
        if (!d) {
            failure = error(404, "unknown dialogue '" + id + "'");
            return nullptr;
        }
        if (!assigned(who, *d)) {
            failure = error(403, "dialogue '" + id + "' is not assigned to annotator '" + who.annotator_id + "'");
            return nullptr;
        }
        return d;
    }

    Response list_dialogues(const Principal& who) const {
        std::shared_lock lock(mutex_);
        json list = json::array();
        for (const auto& d : base_.dialogues) {
            if (!assigned(who, d)) continue;
            std::size_t spans = 0, labels = 0;
            for (const auto& [id, s] : state_.spans) spans += s.dialogue_id == d.id && s.annotator_id == who.annotator_id;
            if (auto it = state_.scores.find(d.id); it != state_.scores.end()) {
                for (const auto& [id, s] : it->second) labels += s.annotator_id == who.annotator_id;
            }
            list.push_back({{"id", d.id},
                            {"topic", d.topic},
                            {"turns", d.turns.size()},
                            {"progress", {{"spans", spans}, {"labels", labels}, {"labels_total", base_.labels.size()}}}});
        }
        return {200, {{"annotator_id", who.annotator_id}, {"dialogues", list}}};
    }

    Response get_dialogue(const Principal& who, const std::string& id) const {
        std::shared_lock lock(mutex_);
        Response failure;
        const corpus::Dialogue* d = dialogue_for(who, id, failure);
        if (!d) return failure;
        json spans = json::array();
        for (const auto& [event_id, s] : state_.spans) {
            if (s.dialogue_id != id || s.annotator_id != who.annotator_id) continue;
            json entry = corpus::to_json(s);
            entry["event_id"] = event_id;
            spans.push_back(std::move(entry));
        }
        json labels = json::object();
        if (auto it = state_.scores.find(id); it != state_.scores.end()) {
            for (const auto& [event_id, s] : it->second) {
                if (s.annotator_id == who.annotator_id) labels[s.label_id] = s.score;
            }
        }
        json registry = json::array();
        for (const auto& f : base_.registry) registry.push_back(corpus::to_json(f));
        json rubric = json::array();
        for (const auto& l : base_.labels) rubric.push_back(corpus::to_json(l));
        return {200,
                {{"dialogue", corpus::to_json(*d)},
                 {"registry", registry},
                 {"labels", rubric},
                 {"annotations", {{"spans", spans}, {"labels", labels}}}}};
    }

    Response post_span(const Principal& who, const std::string& body) {
        const json j = json::parse(body);
        if (!j.is_object()) return error(400, "expected a JSON object");
        SpanAnnotation s;
        s.annotator_id = who.annotator_id;
        s.dialogue_id = j.at("dialogue_id").get<std::string>();
        s.feature_id = j.at("feature_id").get<std::string>();
        const auto turn = j.at("turn_index").get<std::int64_t>();
        const json& range = j.at("token_range");
        if (!range.is_array() || range.size() != 2) return error(400, "token_range must be [start, end)");
        const auto start = range[0].get<std::int64_t>(), end = range[1].get<std::int64_t>();
        if (turn < 0 || start < 0 || end <= start) return error(400, "turn_index and token_range must be non-negative with start < end");
        s.turn_index = static_cast<std::size_t>(turn);
        s.range = {static_cast<std::size_t>(start), static_cast<std::size_t>(end)};

        std::unique_lock lock(mutex_);
        Response failure;
        const corpus::Dialogue* d = dialogue_for(who, s.dialogue_id, failure);
        if (!d) return failure;
        if (!base_.find_feature(s.feature_id)) return error(400, "feature '" + s.feature_id + "' not in registry");
        if (s.turn_index >= d->turns.size()) {
            return error(409, "turn " + std::to_string(s.turn_index) + " does not exist in dialogue '" + d->id + "'");
        }
        if (s.range.end > d->turns[s.turn_index].tokens.size()) {
            return error(409, "token range [" + std::to_string(start) + ", " + std::to_string(end) + ") exceeds turn " +
                                  std::to_string(s.turn_index) + " (" + std::to_string(d->turns[s.turn_index].tokens.size()) +
                                  " tokens)");
        }
        AnnotationEvent e;
        e.timestamp = clock_();
        e.annotator_id = who.annotator_id;
        e.kind = EventKind::span_added;
        e.dialogue_id = s.dialogue_id;
        e.span = s;
        return commit(std::move(e));
    }

    Response post_label(const Principal& who, const std::string& body) {
        const json j = json::parse(body);
        if (!j.is_object()) return error(400, "expected a JSON object");
        const auto dialogue = j.at("dialogue_id").get<std::string>();
        const auto label = j.at("label_id").get<std::string>();
        const auto score = j.at("score").get<std::int64_t>();
        if (score < corpus::kMinScore || score > corpus::kMaxScore) return error(400, "score must be in 1..5");

        std::unique_lock lock(mutex_);
        Response failure;
        if (!dialogue_for(who, dialogue, failure)) return failure;
        if (std::none_of(base_.labels.begin(), base_.labels.end(), [&](const auto& l) { return l.id == label; })) {
            return error(400, "unknown label '" + label + "'");
        }
        AnnotationEvent e;
        e.timestamp = clock_();
        e.annotator_id = who.annotator_id;
        e.kind = EventKind::label_set;
        e.dialogue_id = dialogue;
        e.score = InteractivityScore{who.annotator_id, label, static_cast<int>(score)};
        e.supersedes = state_.score_event(dialogue, who.annotator_id, label);
        return commit(std::move(e));
    }

    Response delete_span(const Principal& who, std::uint64_t target) {
        std::unique_lock lock(mutex_);
        if (state_.removed.count(target)) return error(409, "span event " + std::to_string(target) + " was already removed");
        const SpanAnnotation* s = state_.live_span(target);
        if (!s) return error(404, "no span event " + std::to_string(target));
        if (s->annotator_id != who.annotator_id && !who.admin) {
            return error(403, "span event " + std::to_string(target) + " belongs to annotator '" + s->annotator_id + "'");
        }
        AnnotationEvent e;
        e.timestamp = clock_();
        e.annotator_id = who.annotator_id;
        e.kind = EventKind::span_removed;
        e.dialogue_id = s->dialogue_id;
        e.span = *s;
        e.supersedes = target;
        return commit(std::move(e), 200);
    }

    Response history(const Principal& who, const std::string& id) const {
        std::shared_lock lock(mutex_);
        Response failure;
        if (!dialogue_for(who, id, failure)) return failure;
        json events = json::array();
        for (const auto& e : log_.events()) {
            if (e.dialogue_id == id) events.push_back(to_json(e));
        }
        return {200, {{"dialogue_id", id}, {"events", events}}};
    }

    Response export_corpus() const {
        std::shared_lock lock(mutex_);
        return {200, corpus::to_json(materialize(base_, state_))};
    }

    /// Caller holds the write lock.
    Response commit(AnnotationEvent e, int status = 201) {
        const AnnotationEvent& stored = log_.append(std::move(e));
        apply(state_, stored);
        return {status, {{"event_id", stored.event_id}}};
    }

    Corpus base_;
    EventLog log_;
    TokenTable tokens_;
    Clock clock_;
    State state_;
    mutable std::shared_mutex mutex_;
};

/// Routes every request through `service.handle`. Blocks until server.stop().
inline void bind_routes(httplib::Server& server, AnnotationService& service) {
    auto route = [&service](const httplib::Request& req, httplib::Response& res) {
        const Response r = service.handle(req.method, req.path, req.get_header_value("Authorization"), req.body);
        res.status = r.status;
        res.set_content(r.body.dump(), "application/json");
    };
    server.Get(".*", route);
    server.Post(".*", route);
    server.Delete(".*", route);
}

}  // namespace dialeval::service
