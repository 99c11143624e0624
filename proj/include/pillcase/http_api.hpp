#pragma once

#include <string>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "pillcase/error.hpp"
#include "pillcase/gateway.hpp"

namespace pillcase::http {

inline int status_for(ErrorCode code) {
    switch (code) {
        case ErrorCode::not_found: return 404;
        case ErrorCode::validation:
        case ErrorCode::invalid_argument:
        case ErrorCode::range:
        case ErrorCode::parse: return 400;
        case ErrorCode::scan_rejected:
        case ErrorCode::state:
        case ErrorCode::lid_closed:
        case ErrorCode::device_unpowered:
        case ErrorCode::underflow: return 409;
        case ErrorCode::io: return 500;
        default: return 422;
    }
}

inline nlohmann::json error_body(ErrorCode code, const std::string& message) {
    return {{"error", {{"code", to_string(code)}, {"message", message}}}};
}

inline void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

/// Runs a handler, mapping library errors onto HTTP statuses with a
/// machine-readable code and a human message.
template <typename F>
void guarded(httplib::Response& res, F&& handler) {
    try {
        handler();
    } catch (const Error& e) {
        auto body = error_body(e.code(), e.what());
        if (e.offset()) body["error"]["offset"] = *e.offset();
        send_json(res, status_for(e.code()), body);
    } catch (const nlohmann::json::exception& e) {
        send_json(res, 400, error_body(ErrorCode::validation, std::string("malformed request body: ") + e.what()));
    }
}

inline nlohmann::json parse_body(const httplib::Request& req) {
    if (req.body.empty()) return nlohmann::json::object();
    auto j = nlohmann::json::parse(req.body);
    if (!j.is_object()) throw Error(ErrorCode::validation, "request body must be a JSON object");
    return j;
}

/// Builds a prescription from {medicine_id, recommended_dose} (catalog
/// lookup) or from an explicit unit_weight for medicines outside it.
inline Prescription prescription_from(const nlohmann::json& j, const MedicineCatalog& catalog) {
    if (!j.contains("medicine_id")) throw Error(ErrorCode::validation, "medicine_id is required");
    const auto id = j.at("medicine_id").get<std::string>();
    const int dose = j.value("recommended_dose", 1);
    Prescription p;
    if (j.contains("unit_weight")) {
        p = Prescription{id, j.value("medicine_name", id), j.at("unit_weight").get<double>(), dose, {}};
    } else {
        const auto* entry = catalog.find(id);
        if (!entry) throw Error(ErrorCode::validation, "unknown medicine: " + id);
        p = Prescription{id, entry->name, entry->unit_weight, dose, {}};
    }
    p.schedule = j.value("schedule", std::vector<std::string>{});
    p.validate();
    return p;
}

inline DeviceAction action_from(const nlohmann::json& j) {
    const auto name = j.value("action", std::string{});
    if (name == "open") return DeviceAction::open();
    if (name == "close") return DeviceAction::close();
    if (name == "remove") return DeviceAction::remove(j.value("n", 0));
    if (name == "add") return DeviceAction::add(j.value("n", 0));
    if (name == "advance") return DeviceAction::advance(j.value("seconds", 0.0));
    throw Error(ErrorCode::validation, "unknown action: \"" + name + "\" (open | close | remove | add | advance)");
}

inline void mount(httplib::Server& server, Gateway& gw) {
    server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                {"Access-Control-Allow-Methods", "GET, POST, PUT, OPTIONS"},
                                {"Access-Control-Allow-Headers", "Content-Type"}});
    server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    server.Get("/catalog", [&gw](const httplib::Request&, httplib::Response& res) {
        nlohmann::json list = nlohmann::json::array();
        for (const auto& [id, e] : gw.catalog().entries()) {
            list.push_back({{"medicine_id", id}, {"medicine_name", e.name}, {"unit_weight", e.unit_weight}});
        }
        send_json(res, 200, {{"medicines", list}});
    });

    server.Get("/devices", [&gw](const httplib::Request&, httplib::Response& res) {
        send_json(res, 200, {{"devices", gw.list_devices()}});
    });

    server.Post("/devices", [&gw](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const auto body = parse_body(req);
            DeviceRegistration reg;
            reg.device = body.get<DeviceConfig>();
            if (body.contains("medicine_id")) reg.prescription = prescription_from(body, gw.catalog());
            reg.prime = body.value("prime", true);
            const auto id = gw.register_device(reg);
            send_json(res, 201, {{"device_id", id}, {"status", gw.status(id)}});
        });
    });

    server.Put(R"(/devices/([^/]+)/prescription)", [&gw](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const std::string id = req.matches[1];
            const auto p = prescription_from(parse_body(req), gw.catalog());
            gw.set_prescription(id, p);
            const auto s = gw.status(id);
            send_json(res, 200, {{"ok", true}, {"calibration_required", !s.calibrated}, {"prescription", p}});
        });
    });

    server.Post(R"(/devices/([^/]+)/action)", [&gw](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const std::string id = req.matches[1];
            send_json(res, 200, gw.device_action(id, action_from(parse_body(req))));
        });
    });

    server.Post(R"(/devices/([^/]+)/scan)", [&gw](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] { send_json(res, 200, gw.scan(req.matches[1])); });
    });

    server.Get(R"(/devices/([^/]+)/events)", [&gw](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            std::uint64_t since = 0;
            if (req.has_param("since")) {
                try {
                    since = std::stoull(req.get_param_value("since"));
                } catch (const std::exception&) {
                    throw Error(ErrorCode::validation, "since must be a non-negative integer");
                }
            }
            send_json(res, 200, {{"events", gw.get_events(req.matches[1], since)}});
        });
    });

    server.Get(R"(/devices/([^/]+)/status)", [&gw](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] { send_json(res, 200, gw.status(req.matches[1])); });
    });
}

} // namespace pillcase::http
