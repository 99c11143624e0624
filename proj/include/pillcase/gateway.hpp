#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pillcase/adherence_engine.hpp"
#include "pillcase/device_sim.hpp"
#include "pillcase/error.hpp"
#include "pillcase/event_log.hpp"
#include "pillcase/fed_adherence.hpp"

namespace pillcase {

inline void to_json(nlohmann::json& j, const DeviceConfig& c) {
    j = nlohmann::json{{"pills", c.container.pill_count},
                       {"unit_mass", c.container.true_unit_mass},
                       {"tare_mass", c.container.tare_mass},
                       {"calibration_factor", c.cell.calibration_factor},
                       {"offset_counts", c.cell.offset_counts},
                       {"noise_sigma", c.cell.noise_sigma},
                       {"session_tare_offset", c.cell.session_tare_offset},
                       {"session_tare_range", c.session_tare_range},
                       {"seed", c.cell.rng_seed},
                       {"samples_per_reading", c.samples_per_reading},
                       {"battery_mah", c.battery_mAh},
                       {"supply_v", c.supply_V},
                       {"power_mw", c.power_mW}};
}

/// Missing keys keep their defaults.
inline void from_json(const nlohmann::json& j, DeviceConfig& c) {
    c.container.pill_count = j.value("pills", c.container.pill_count);
    c.container.true_unit_mass = j.value("unit_mass", c.container.true_unit_mass);
    c.container.tare_mass = j.value("tare_mass", c.container.tare_mass);
    c.cell.calibration_factor = j.value("calibration_factor", c.cell.calibration_factor);
    c.cell.offset_counts = j.value("offset_counts", c.cell.offset_counts);
    c.cell.noise_sigma = j.value("noise_sigma", c.cell.noise_sigma);
    c.cell.session_tare_offset = j.value("session_tare_offset", c.cell.session_tare_offset);
    c.session_tare_range = j.value("session_tare_range", c.session_tare_range);
    c.cell.rng_seed = j.value("seed", c.cell.rng_seed);
    c.samples_per_reading = j.value("samples_per_reading", c.samples_per_reading);
    c.battery_mAh = j.value("battery_mah", c.battery_mAh);
    c.supply_V = j.value("supply_v", c.supply_V);
    c.power_mW = j.value("power_mw", c.power_mW);
}

struct DeviceRegistration {
    DeviceConfig device{};
    Prescription prescription{"tylenol", "Tylenol", 4.45, 1, {}};
    bool prime = true;  // fill the case with the lid open so the tag starts with a weight
};

struct DeviceAction {
    enum class Kind { open, close, remove, add, advance } kind = Kind::open;
    int count = 0;
    double seconds = 0.0;

    static DeviceAction open() { return {Kind::open}; }
    static DeviceAction close() { return {Kind::close}; }
    static DeviceAction remove(int n) { return {Kind::remove, n}; }
    static DeviceAction add(int n) { return {Kind::add, n}; }
    static DeviceAction advance(double s) { return {Kind::advance, 0, s}; }
};

struct DeviceStatus {
    std::string device_id;
    Lid lid = Lid::closed;
    int pill_count = 0;
    double battery_mAh = 0.0;
    double clock_seconds = 0.0;
    std::optional<WeightReading> tag_weight;
    bool calibrated = false;
    Prescription prescription;
};

inline void to_json(nlohmann::json& j, const DeviceStatus& s) {
    j = nlohmann::json{{"device_id", s.device_id},
                       {"lid", s.lid == Lid::open ? "open" : "closed"},
                       {"pill_count", s.pill_count},
                       {"battery_mah", s.battery_mAh},
                       {"clock", s.clock_seconds},
                       {"tag_weight", s.tag_weight ? nlohmann::json(s.tag_weight->str()) : nlohmann::json(nullptr)},
                       {"calibrated", s.calibrated},
                       {"prescription", s.prescription}};
}

/// Result of a tap. A calibration tap sets the baseline and reports no dose.
struct ScanOutcome {
    bool calibration = false;
    ScanResult result;
    std::uint64_t event_id = 0;
    std::string message;
};

inline void to_json(nlohmann::json& j, const ScanOutcome& o) {
    j = nlohmann::json{{"calibration", o.calibration},
                       {"event_id", o.event_id},
                       {"timestamp", o.result.timestamp},
                       {"previous_weight", o.result.previous_weight.str()},
                       {"current_weight", o.result.current_weight.str()},
                       {"doses_taken", o.result.doses_taken},
                       {"message", o.message}};
    if (!o.calibration) j["verdict"] = verdict_json(o.result.verdict);
}

/// Binds simulated devices, their scan sessions and their event logs. With
/// a data directory, every device and event survives a restart.
class Gateway {
public:
    explicit Gateway(std::optional<std::filesystem::path> data_dir = std::nullopt,
                     MedicineCatalog catalog = MedicineCatalog::defaults())
        : data_dir_(std::move(data_dir)), catalog_(std::move(catalog)) {
        if (data_dir_) {
            std::filesystem::create_directories(*data_dir_ / "devices");
            std::filesystem::create_directories(*data_dir_ / "events");
            load();
        }
    }

    Gateway(const Gateway&) = delete;
    Gateway& operator=(const Gateway&) = delete;

    const MedicineCatalog& catalog() const { return catalog_; }

    std::string register_device(const DeviceRegistration& reg) {
        reg.device.validate();
        reg.prescription.validate();
        std::unique_lock lock(registry_mutex_);
        const std::string id = std::to_string(next_id_++);
        auto entry = std::make_unique<Entry>(id, reg.device, reg.prescription, log_path(id));
        if (reg.prime) {
            entry->device.open_lid();
            entry->device.close_lid();
        }
        persist(*entry);
        devices_.emplace(id, std::move(entry));
        return id;
    }

    std::vector<std::string> list_devices() const {
        std::shared_lock lock(registry_mutex_);
        std::vector<std::string> ids;
        for (const auto& [id, _] : devices_) ids.push_back(id);
        std::sort(ids.begin(), ids.end(), [](const std::string& a, const std::string& b) {
            return a.size() != b.size() ? a.size() < b.size() : a < b;
        });
        return ids;
    }

    /// Changing the prescription invalidates the baseline: the next scan
    /// recalibrates. Re-committing the same prescription is a no-op.
    void set_prescription(const std::string& id, const Prescription& p) {
        p.validate();
        Entry& e = entry(id);
        std::lock_guard lock(e.mutex);
        e.prescription = p;
        persist(e);
    }

    DeviceStatus device_action(const std::string& id, const DeviceAction& a) {
        Entry& e = entry(id);
        std::lock_guard lock(e.mutex);
        switch (a.kind) {
            case DeviceAction::Kind::open: e.device.open_lid(); break;
            case DeviceAction::Kind::close: e.device.close_lid(); break;
            case DeviceAction::Kind::remove: e.device.remove_pills(a.count); break;
            case DeviceAction::Kind::add: e.device.add_pills(a.count); break;
            case DeviceAction::Kind::advance: e.device.advance(a.seconds); break;
        }
        persist(e);
        return status_locked(e);
    }

    DeviceStatus status(const std::string& id) {
        Entry& e = entry(id);
        std::lock_guard lock(e.mutex);
        return status_locked(e);
    }

    /// Phone tap on the closed lid. Either the event is logged and the
    /// session advances, or neither happens.
    ScanOutcome scan(const std::string& id) {
        Entry& e = entry(id);
        std::lock_guard lock(e.mutex);
        if (e.device.powered()) {
            throw Error(ErrorCode::scan_rejected, "lid is open; close it before scanning");
        }
        const double now = e.device.clock_seconds();

        ScanOutcome out;
        AdherenceEvent ev;
        Session next;
        if (!calibrated_locked(e)) {
            next = calibrate_initial(e.device.tag());
            out.calibration = true;
            out.result.timestamp = now;
            out.result.previous_weight = *next.previous_weight;
            out.result.current_weight = *next.previous_weight;
            out.message = "Baseline weight " + next.previous_weight->str() + " g recorded";
            ev.kind = EventKind::calibration;
        } else {
            auto [result, session] = process_scan(e.device.tag(), e.session, e.prescription, now);
            out.result = result;
            out.message = result.verdict.message();
            next = session;
            ev.kind = EventKind::scan;
        }
        ev.event_id = e.events.empty() ? 1 : e.events.back().event_id + 1;
        ev.device_id = id;
        ev.timestamp = now;
        ev.previous_weight = out.result.previous_weight;
        ev.current_weight = out.result.current_weight;
        ev.doses_taken = out.result.doses_taken;
        ev.verdict = out.result.verdict;
        ev.prescription = e.prescription;

        e.log.append(ev);  // throws before anything below changes
        e.events.push_back(ev);
        e.session = next;
        out.event_id = ev.event_id;
        return out;
    }

    std::vector<AdherenceEvent> get_events(const std::string& id, std::uint64_t since = 0) {
        Entry& e = entry(id);
        std::lock_guard lock(e.mutex);
        std::vector<AdherenceEvent> out;
        for (const auto& ev : e.events) {
            if (ev.event_id > since) out.push_back(ev);
        }
        return out;
    }

    /// Feature rows for the co-located federated client. Calibration taps
    /// carry no verdict and are skipped.
    fed::ClientDataset export_client_dataset(const std::string& id) {
        const auto events = get_events(id);
        std::vector<const AdherenceEvent*> scans;
        for (const auto& ev : events) {
            if (ev.kind == EventKind::scan) scans.push_back(&ev);
        }
        if (scans.empty()) {
            throw Error(ErrorCode::insufficient_data, "device " + id + " has no scan events to export");
        }
        double capacity = 0.0;
        for (const auto& ev : events) capacity = std::max({capacity, ev.previous_weight.grams(), ev.current_weight.grams()});

        fed::ClientDataset ds;
        ds.client_id = "device-" + id;
        constexpr double day = 86400.0;
        for (std::size_t i = 0; i < scans.size(); ++i) {
            const AdherenceEvent& ev = *scans[i];
            const auto day_index = static_cast<long long>(std::floor(ev.timestamp / day));
            int slot = 0;
            int window_n = 0, window_ok = 0;
            for (std::size_t k = 0; k < i; ++k) {
                const AdherenceEvent& prior = *scans[k];
                if (static_cast<long long>(std::floor(prior.timestamp / day)) == day_index) ++slot;
                if (prior.timestamp >= ev.timestamp - 7 * day) {
                    ++window_n;
                    window_ok += prior.verdict.kind == VerdictKind::correct ? 1 : 0;
                }
            }
            const double trailing = window_n ? double(window_ok) / window_n : 1.0;
            const double remaining = capacity > 0.0 ? std::clamp(ev.current_weight.grams() / capacity, 0.0, 1.0) : 0.0;
            fed::Example ex;
            ex.x = fed::make_features(static_cast<int>(((day_index % 7) + 7) % 7), slot, trailing, remaining);
            ex.label = ev.verdict.kind == VerdictKind::correct ? 1 : 0;
            ds.examples.push_back(ex);
        }
        return ds;
    }

    /// Test hook for the atomic-scan guarantee.
    void fail_next_log_append(const std::string& id) {
        Entry& e = entry(id);
        std::lock_guard lock(e.mutex);
        e.log.fail_next_append();
    }

private:
    struct Entry {
        Entry(std::string id_, const DeviceConfig& cfg, Prescription p, std::filesystem::path log_path)
            : id(std::move(id_)), device(cfg), prescription(std::move(p)), log(std::move(log_path)) {}

        std::string id;
        PillCase device;
        Prescription prescription;
        Session session;
        EventLog log;
        std::vector<AdherenceEvent> events;
        std::mutex mutex;
    };

    Entry& entry(const std::string& id) {
        std::shared_lock lock(registry_mutex_);
        auto it = devices_.find(id);
        if (it == devices_.end()) throw Error(ErrorCode::not_found, "unknown device: " + id);
        return *it->second;
    }

    /// The baseline is valid only if it was taken under the current prescription.
    static bool calibrated_locked(const Entry& e) {
        return e.session.calibrated() && !e.events.empty() && e.events.back().prescription == e.prescription;
    }

    DeviceStatus status_locked(const Entry& e) const {
        DeviceStatus s;
        s.device_id = e.id;
        s.lid = e.device.lid();
        s.pill_count = e.device.container().pill_count;
        s.battery_mAh = e.device.battery_mAh();
        s.clock_seconds = e.device.clock_seconds();
        if (!e.device.tag().blank()) {
            try {
                s.tag_weight = read_tag(e.device.tag());
            } catch (const Error&) {
            }
        }
        s.calibrated = calibrated_locked(e);
        s.prescription = e.prescription;
        return s;
    }

    std::filesystem::path log_path(const std::string& id) const {
        return data_dir_ ? *data_dir_ / "events" / (id + ".jsonl") : std::filesystem::path{};
    }

    void persist(const Entry& e) const {
        if (!data_dir_) return;
        nlohmann::json j{{"device_id", e.id},
                         {"config", e.device.config()},
                         {"prescription", e.prescription},
                         {"state", e.device.save_state()}};
        const auto path = *data_dir_ / "devices" / (e.id + ".json");
        const auto tmp = std::filesystem::path(path.string() + ".tmp");
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            out << j.dump() << '\n';
            if (!out) throw Error(ErrorCode::io, "cannot write " + tmp.string());
        }
        std::filesystem::rename(tmp, path);
    }

    void load() {
        for (const auto& f : std::filesystem::directory_iterator(*data_dir_ / "devices")) {
            if (f.path().extension() != ".json") continue;
            std::ifstream in(f.path());
            nlohmann::json j;
            try {
                in >> j;
            } catch (const std::exception& ex) {
                throw Error(ErrorCode::io, "corrupt device snapshot " + f.path().string() + ": " + ex.what());
            }
            const std::string id = j.at("device_id").get<std::string>();
            auto e = std::make_unique<Entry>(id, j.at("config").get<DeviceConfig>(),
                                             j.at("prescription").get<Prescription>(), log_path(id));
            e->device.load_state(j.at("state").get<std::string>());
            e->events = e->log.replay();
            if (!e->events.empty()) e->session.previous_weight = e->events.back().current_weight;
            try {
                next_id_ = std::max(next_id_, std::stoull(id) + 1);
            } catch (const std::exception&) {
            }
            devices_.emplace(id, std::move(e));
        }
    }

    std::optional<std::filesystem::path> data_dir_;
    MedicineCatalog catalog_;
    mutable std::shared_mutex registry_mutex_;
    std::map<std::string, std::unique_ptr<Entry>> devices_;
    unsigned long long next_id_ = 1;
};

} // namespace pillcase
