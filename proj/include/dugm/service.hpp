#pragma once

// JSON-over-HTTP front end for one interaction session. The request logic
// lives in SessionService so it can be driven without a socket; serve()
// binds it to cpp-httplib.

#include <dugm/data.hpp>
#include <dugm/interaction.hpp>
#include <dugm/metrics.hpp>

#include <boost/archive/iterators/base64_from_binary.hpp>
#include <boost/archive/iterators/binary_from_base64.hpp>
#include <boost/archive/iterators/transform_width.hpp>
#include <httplib.h>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace dugm {

inline std::string base64_encode(const std::string& bytes) {
    using namespace boost::archive::iterators;
    using It = base64_from_binary<transform_width<std::string::const_iterator, 6, 8>>;
    std::string out(It(bytes.begin()), It(bytes.end()));
    out.append((3 - bytes.size() % 3) % 3, '=');
    return out;
}

inline std::string base64_decode(std::string text) {
    using namespace boost::archive::iterators;
    using It = transform_width<binary_from_base64<std::string::const_iterator>, 8, 6>;
    const std::size_t pad = text.size() - text.find_last_not_of('=') - 1;
    if (text.size() % 4 != 0 || pad > 2) throw FormatError("base64: bad length or padding");
    std::replace(text.end() - std::ptrdiff_t(pad), text.end(), '=', 'A');
    try {
        std::string out(It(text.begin()), It(text.end()));
        out.resize(out.size() - pad);
        return out;
    } catch (const std::exception&) {
        throw FormatError("base64: invalid character");
    }
}

/// Single-channel view for display: channel mean for multi-channel images.
inline Raster display_luma(const Raster& r) {
    if (r.channels == 1) return r;
    Raster out(r.width, r.height);
    for (std::uint32_t c = 0; c < r.channels; ++c) {
        auto p = r.plane(c);
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += p[i] / float(r.channels);
    }
    return out;
}

inline std::string png_base64(const Raster& r) { return base64_encode(encode_png8(r)); }

/// Metrics of the fused matte against the session's ground truth.
inline MetricReport session_metrics(const InteractionSession& s) {
    if (!s.gt_alpha) throw DomainError("session has no ground truth");
    return evaluate(s.fused.gamma, *s.gt_alpha, trimap_from_alpha(*s.gt_alpha));
}

/// The SessionWire document: PNG renders, proposals, round, metrics if known.
inline nlohmann::json session_wire(const InteractionSession& s, const std::string& session_id) {
    const UncertaintyMaps u = uncertainty_maps(s.fused);
    nlohmann::json j;
    j["session_id"] = session_id;
    j["round"] = s.round;
    j["width"] = s.image.width;
    j["height"] = s.image.height;
    j["image_png"] = png_base64(display_luma(s.image));
    j["matte_png"] = png_base64(s.fused.gamma);
    j["epistemic_png"] = png_base64(normalize_for_display(u.epistemic));
    j["aleatoric_png"] = png_base64(normalize_for_display(u.aleatoric));
    j["mean_epistemic"] = mean_of(u.epistemic);
    j["proposals"] = nlohmann::json::array();
    for (std::size_t i = 0; i < s.proposals.size(); ++i)
        j["proposals"].push_back(proposal_json(s.proposals[i], proposal_id(s.round, i)));
    j["metrics"] = s.gt_alpha ? report_json(session_metrics(s)) : nlohmann::json(nullptr);
    return j;
}

struct ServiceReply {
    int status = 200;
    nlohmann::json body;
};

/// One session behind a lock. Reads copy the session under the lock and
/// render outside it; /label and /step are the only mutations.
class SessionService {
public:
    SessionService(InteractionSession session, Predictor predictor, std::string session_id = "s0")
        : session_(std::move(session)), predictor_(std::move(predictor)), id_(std::move(session_id)) {}

    ServiceReply get_session() const { return {200, session_wire(snapshot(), id_)}; }

    ServiceReply get_metrics() const {
        const InteractionSession s = snapshot();
        if (!s.gt_alpha) return error(404, "no ground truth loaded");
        nlohmann::json j = report_json(session_metrics(s));
        j["round"] = s.round;
        j["mean_epistemic"] = mean_of(uncertainty_maps(s.fused).epistemic);
        return {200, j};
    }

    /// Body {"proposal_id": "r0-p3", "label": "fg" | "bg" | "transition"}.
    ServiceReply post_label(const std::string& body) {
        nlohmann::json req;
        try {
            req = nlohmann::json::parse(body);
        } catch (const nlohmann::json::exception&) {
            return error(400, "body is not JSON");
        }
        if (!req.is_object() || !req.contains("proposal_id") || !req["proposal_id"].is_string() ||
            !req.contains("label") || !req["label"].is_string())
            return error(400, "expected {\"proposal_id\": string, \"label\": string}");
        const auto label = parse_label(req["label"].get<std::string>());
        if (!label) return error(400, "label must be fg, bg or transition");
        const std::string id = req["proposal_id"];

        std::lock_guard lock(mutex_);
        const auto [round, index] = parse_proposal_id(id);
        if (round && *round < session_.round) return error(409, "proposal " + id + " belongs to a finished round");
        if (!round || *round != session_.round || index >= session_.proposals.size())
            return error(404, "unknown proposal " + id);
        pending_[index] = *label;
        return {200, {{"ok", true}, {"proposal_id", id}, {"label", label_name(*label)}, {"round", session_.round},
                      {"pending", pending_.size()}}};
    }

    /// Applies pending labels and runs one round. An optional {"round": n}
    /// must name the current round, so a repeated step is rejected with 409.
    ServiceReply post_step(const std::string& body) {
        std::optional<std::size_t> expected;
        if (!body.empty()) {
            try {
                const auto req = nlohmann::json::parse(body);
                if (req.is_object() && req.contains("round")) expected = req["round"].get<std::size_t>();
            } catch (const nlohmann::json::exception&) {
                return error(400, "body is not JSON");
            }
        }
        InteractionSession next;
        {
            std::lock_guard lock(mutex_);
            if (expected && *expected != session_.round)
                return error(409, "step requested for round " + std::to_string(*expected) + " but session is at round " +
                                      std::to_string(session_.round));
            std::vector<LabelledProposal> labels;
            for (const auto& [index, label] : pending_) labels.push_back({session_.proposals[index], label});
            session_ = run_round(session_, predictor_, labels);
            pending_.clear();
            next = session_;
        }
        return {200, session_wire(next, id_)};
    }

    InteractionSession snapshot() const {
        std::lock_guard lock(mutex_);
        return session_;
    }

    void record(const std::string& method, const std::string& path, int status) {
        std::lock_guard lock(log_mutex_);
        log_.push_back({{"method", method}, {"path", path}, {"status", status}});
    }

    nlohmann::json request_log() const {
        std::lock_guard lock(log_mutex_);
        return log_;
    }

private:
    static ServiceReply error(int status, const std::string& message) { return {status, {{"error", message}}}; }

    /// "r{round}-p{index}"; nullopt round when the id is malformed.
    static std::pair<std::optional<std::size_t>, std::size_t> parse_proposal_id(const std::string& id) {
        std::size_t round = 0, index = 0;
        int used = 0;
        if (std::sscanf(id.c_str(), "r%zu-p%zu%n", &round, &index, &used) != 2 || std::size_t(used) != id.size() ||
            id != proposal_id(round, index))
            return {std::nullopt, 0};
        return {round, index};
    }

    mutable std::mutex mutex_;
    InteractionSession session_;
    Predictor predictor_;
    std::string id_;
    std::map<std::size_t, Label> pending_;
    mutable std::mutex log_mutex_;
    nlohmann::json log_ = nlohmann::json::array();
};

/// Registers the HTTP routes on `server`. Every response carries a
/// permissive CORS header so a browser UI on another origin can call it.
/// Requests are logged before their response is sent, so a client that has
/// seen a reply will find it in /log.
inline void install_routes(httplib::Server& server, SessionService& service) {
    const auto send = [&service](const httplib::Request& req, httplib::Response& res, const ServiceReply& reply) {
        service.record(req.method, req.path, reply.status);
        res.status = reply.status;
        res.set_content(reply.body.dump(), "application/json");
    };
    server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                {"Access-Control-Allow-Headers", "Content-Type"},
                                {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
    server.Get("/session", [&service, send](const httplib::Request& req, httplib::Response& res) {
        send(req, res, service.get_session());
    });
    server.Get("/metrics", [&service, send](const httplib::Request& req, httplib::Response& res) {
        send(req, res, service.get_metrics());
    });
    server.Post("/label", [&service, send](const httplib::Request& req, httplib::Response& res) {
        send(req, res, service.post_label(req.body));
    });
    server.Post("/step", [&service, send](const httplib::Request& req, httplib::Response& res) {
        send(req, res, service.post_step(req.body));
    });
    server.Get("/log", [&service](const httplib::Request&, httplib::Response& res) {
        res.set_content(service.request_log().dump(), "application/json");
    });
    server.Options(R"(/.*)", [&service](const httplib::Request& req, httplib::Response& res) {
        service.record(req.method, req.path, 204);
        res.status = 204;
    });
    server.set_error_handler([send](const httplib::Request& req, httplib::Response& res) {
        if (res.body.empty()) send(req, res, {res.status, {{"error", "no route for " + req.method + " " + req.path}}});
    });
    server.set_exception_handler(
        [send](const httplib::Request& req, httplib::Response& res, std::exception_ptr ep) {
            std::string message = "internal error";
            try {
                std::rethrow_exception(ep);
            } catch (const std::exception& e) {
                message = e.what();
            } catch (...) {
            }
            send(req, res, {500, {{"error", message}}});
        });
}

/// Blocks serving the session on host:port until server.stop() is called
/// from another thread.
inline bool serve(httplib::Server& server, SessionService& service, const std::string& host, int port) {
    install_routes(server, service);
    return server.listen(host, port);
}

} // namespace dugm
