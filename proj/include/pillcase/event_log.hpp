#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pillcase/adherence_engine.hpp"
#include "pillcase/error.hpp"
#include "pillcase/ndef_codec.hpp"

namespace pillcase {

enum class EventKind { calibration, scan };

/// One tap of the phone on the closed lid, as shared with caregivers.
struct AdherenceEvent {
    std::uint64_t event_id = 0;
    std::string device_id;
    double timestamp = 0.0;
    EventKind kind = EventKind::scan;
    WeightReading previous_weight;
    WeightReading current_weight;
    int doses_taken = 0;
    Verdict verdict;  // meaningless for calibration events
    Prescription prescription;

    friend bool operator==(const AdherenceEvent&, const AdherenceEvent&) = default;
};

inline void to_json(nlohmann::json& j, const Prescription& p) {
    j = nlohmann::json{{"medicine_id", p.medicine_id},
                       {"medicine_name", p.medicine_name},
                       {"unit_weight", p.unit_weight},
                       {"recommended_dose", p.recommended_dose},
                       {"schedule", p.schedule}};
}

inline void from_json(const nlohmann::json& j, Prescription& p) {
    j.at("medicine_id").get_to(p.medicine_id);
    p.medicine_name = j.value("medicine_name", p.medicine_id);
    j.at("unit_weight").get_to(p.unit_weight);
    j.at("recommended_dose").get_to(p.recommended_dose);
    p.schedule = j.value("schedule", std::vector<std::string>{});
}

inline nlohmann::json verdict_json(const Verdict& v) {
    return {{"kind", to_string(v.kind)}, {"count", v.count}, {"message", v.message()}};
}

inline Verdict verdict_from_json(const nlohmann::json& j) {
    auto kind = verdict_kind_from_string(j.at("kind").get<std::string>());
    if (!kind) throw Error(ErrorCode::parse, "unknown verdict kind");
    return {*kind, j.at("count").get<int>()};
}

inline void to_json(nlohmann::json& j, const AdherenceEvent& e) {
    j = nlohmann::json{{"event_id", e.event_id},
                       {"device_id", e.device_id},
                       {"timestamp", e.timestamp},
                       {"kind", e.kind == EventKind::calibration ? "calibration" : "scan"},
                       {"previous_weight", e.previous_weight.str()},
                       {"current_weight", e.current_weight.str()},
                       {"doses_taken", e.doses_taken},
                       {"prescription", e.prescription}};
    if (e.kind == EventKind::scan) j["verdict"] = verdict_json(e.verdict);
}

inline void from_json(const nlohmann::json& j, AdherenceEvent& e) {
    j.at("event_id").get_to(e.event_id);
    j.at("device_id").get_to(e.device_id);
    j.at("timestamp").get_to(e.timestamp);
    e.kind = j.at("kind").get<std::string>() == "calibration" ? EventKind::calibration : EventKind::scan;
    e.previous_weight = WeightReading::parse(j.at("previous_weight").get<std::string>());
    e.current_weight = WeightReading::parse(j.at("current_weight").get<std::string>());
    j.at("doses_taken").get_to(e.doses_taken);
    j.at("prescription").get_to(e.prescription);
    e.verdict = j.contains("verdict") ? verdict_from_json(j.at("verdict")) : Verdict{};
}

/// Append-only newline-delimited JSON log for one device. A path-less log
/// lives only in memory.
class EventLog {
public:
    EventLog() = default;
    explicit EventLog(std::filesystem::path path) : path_(std::move(path)) {}

    const std::filesystem::path& path() const { return path_; }

    /// Reads every complete record. A torn final line (crash mid-write) is
    /// dropped from the file; corruption anywhere else is an error.
    std::vector<AdherenceEvent> replay() const {
        std::vector<AdherenceEvent> events;
        if (path_.empty() || !std::filesystem::exists(path_)) return events;
        std::ifstream in(path_, std::ios::binary);
        std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        std::size_t pos = 0;
        while (pos < content.size()) {
            const std::size_t nl = content.find('\n', pos);
            if (nl == std::string::npos) {
                // torn tail: cut it off so the next append starts on a clean line
                std::filesystem::resize_file(path_, pos);
                break;
            }
            const std::string line = content.substr(pos, nl - pos);
            pos = nl + 1;
            if (line.empty()) continue;
            try {
                events.push_back(nlohmann::json::parse(line).get<AdherenceEvent>());
            } catch (const std::exception& e) {
                throw Error(ErrorCode::io, "corrupt event log " + path_.string() + ": " + e.what());
            }
        }
        return events;
    }

    void append(const AdherenceEvent& e) {
        if (fail_next_) {
            fail_next_ = false;
            throw Error(ErrorCode::io, "event log write failed (injected)");
        }
        if (path_.empty()) return;
        std::ofstream out(path_, std::ios::binary | std::ios::app);
        out << nlohmann::json(e).dump() << '\n';
        out.flush();
        if (!out) throw Error(ErrorCode::io, "cannot append to " + path_.string());
    }

    /// Test hook: the next append fails before touching the file.
    void fail_next_append() { fail_next_ = true; }

private:
    std::filesystem::path path_;
    bool fail_next_ = false;
};

} // namespace pillcase
