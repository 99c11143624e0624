#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "pillcase/error.hpp"
#include "pillcase/ndef_codec.hpp"

namespace pillcase {

struct PillContainer {
    int pill_count = 0;
    double true_unit_mass = 4.4;  // grams; a US quarter stands in for a pill
    double tare_mass = 0.0;       // empty container, grams

    double mass() const { return pill_count * true_unit_mass + tare_mass; }
};

struct LoadCellModel {
    double calibration_factor = 1000.0;  // raw counts per gram
    std::int32_t offset_counts = 0;      // raw counts at zero load
    double noise_sigma = 0.05;           // grams, per raw sample
    double session_tare_offset = 0.0;    // grams, constant for one power cycle
    std::uint64_t rng_seed = 42;
};

enum class Lid { closed, open };

inline constexpr std::int32_t raw_min = -(1 << 23);
inline constexpr std::int32_t raw_max = (1 << 23) - 1;

/// Calibration factor from one known mass and the zero-load reading.
inline double calibrate(double known_mass, double raw_at_mass, double raw_at_zero) {
    if (!(known_mass > 0.0)) {
        throw Error(ErrorCode::calibration, "known mass must be positive");
    }
    if (raw_at_mass == raw_at_zero) {
        throw Error(ErrorCode::calibration, "raw readings at mass and at zero are identical");
    }
    return (raw_at_mass - raw_at_zero) / known_mass;
}

/// Raw counts (or a mean of raw counts) to a one-decimal weight, clamped
/// to what the tag format can hold.
inline WeightReading counts_to_grams(double raw, const LoadCellModel& cell) {
    return WeightReading::clamped((raw - cell.offset_counts) / cell.calibration_factor);
}

struct PowerDraw {
    std::string name;
    double current_mA = 0.0;
    double voltage_V = 0.0;

    double power_mW() const { return current_mA * voltage_V; }
};

struct PowerProfile {
    std::vector<PowerDraw> components;

    double total_power_mW() const {
        double sum = 0.0;
        for (const auto& c : components) sum += c.power_mW();
        return sum;
    }

    /// Amplifier, RFID reader at its maximum draw, and the microcontroller
    /// board on the 9 V rail.
    static PowerProfile reference_build() {
        return PowerProfile{{
            {"HX711", 1.5, 5.0},
            {"RC522", 26.0, 3.3},
            {"Arduino Uno", 25.5, 9.0},
        }};
    }
};

/// Nominal total of the reference build, as budgeted (the component sum is
/// 322.8 mW; the budget rounds it to 320 mW).
inline constexpr double reference_power_budget_mW = 320.0;

/// Days of operation when the device only draws power while the lid is
/// open. Returns +infinity when there is no draw at all.
inline double battery_lifetime_days(double total_power_mW, double battery_mAh, double supply_V, double opens_per_day,
                                    double seconds_per_open) {
    if (!(battery_mAh > 0.0) || !(supply_V > 0.0)) {
        throw Error(ErrorCode::invalid_argument, "battery capacity and supply voltage must be positive");
    }
    if (total_power_mW < 0.0 || opens_per_day < 0.0 || seconds_per_open < 0.0) {
        throw Error(ErrorCode::invalid_argument, "power and duty figures must not be negative");
    }
    const double current_mA = total_power_mW / supply_V;
    const double duty_seconds_per_day = opens_per_day * seconds_per_open;
    const double average_mA = current_mA * duty_seconds_per_day / 86400.0;
    if (average_mA == 0.0) {
        return std::numeric_limits<double>::infinity();
    }
    const double hours = battery_mAh / average_mA;
    return hours / 24.0;
}

inline double battery_lifetime_days(const PowerProfile& profile, double battery_mAh, double supply_V,
                                    double opens_per_day, double seconds_per_open) {
    return battery_lifetime_days(profile.total_power_mW(), battery_mAh, supply_V, opens_per_day, seconds_per_open);
}

struct DeviceConfig {
    PillContainer container{};
    LoadCellModel cell{};
    double session_tare_range = 0.6;  // redraw U(-r, r) on every open; 0 keeps cell.session_tare_offset
    int samples_per_reading = 10;     // raw samples averaged into one tag write
    double battery_mAh = 300.0;
    double supply_V = 9.0;
    double power_mW = reference_power_budget_mW;

    void validate() const {
        if (container.pill_count < 0) throw Error(ErrorCode::validation, "pill count must not be negative");
        if (!(container.true_unit_mass > 0.0)) throw Error(ErrorCode::validation, "unit mass must be positive");
        if (cell.calibration_factor == 0.0 || !std::isfinite(cell.calibration_factor))
            throw Error(ErrorCode::validation, "calibration factor must be non-zero");
        if (!(cell.noise_sigma >= 0.0)) throw Error(ErrorCode::validation, "noise sigma must not be negative");
        if (!(session_tare_range >= 0.0)) throw Error(ErrorCode::validation, "tare range must not be negative");
        if (samples_per_reading < 1) throw Error(ErrorCode::validation, "samples per reading must be at least 1");
        if (!(battery_mAh >= 0.0) || !(supply_V > 0.0) || !(power_mW >= 0.0))
            throw Error(ErrorCode::validation, "invalid battery or power figures");
    }
};

/// The virtual pill case. Powered only while the lid is open; while
/// powered it takes a reading every tick (10 Hz) and rewrites the tag.
class PillCase {
public:
    static constexpr int ticks_per_second = 10;

    explicit PillCase(const DeviceConfig& config = {})
        : config_(config), container_(config.container), cell_(config.cell),
          battery_mAh_(config.battery_mAh), rng_(config.cell.rng_seed) {
        config_.validate();
    }

    Lid lid() const { return lid_; }
    bool powered() const { return lid_ == Lid::open; }
    const PillContainer& container() const { return container_; }
    const LoadCellModel& cell() const { return cell_; }
    const TagMemory& tag() const { return tag_; }
    const DeviceConfig& config() const { return config_; }
    double battery_mAh() const { return battery_mAh_; }
    std::int64_t ticks() const { return ticks_; }
    double clock_seconds() const { return double(ticks_) / ticks_per_second; }
    std::uint64_t samples_taken() const { return samples_; }

    /// One raw amplifier sample, 24-bit two's complement range.
    std::int32_t sample_raw() {
        if (!powered()) {
            throw Error(ErrorCode::device_unpowered, "device is unpowered (lid closed)");
        }
        double noise = 0.0;
        if (cell_.noise_sigma > 0.0) {
            noise = cell_.noise_sigma * gauss_(rng_);
        }
        ++samples_;
        const double counts =
            std::round(cell_.calibration_factor * (container_.mass() + noise + cell_.session_tare_offset));
        const double raw = std::clamp(counts + cell_.offset_counts, double(raw_min), double(raw_max));
        return static_cast<std::int32_t>(raw);
    }

    /// Averaged reading as the firmware computes it, before it goes on the tag.
    WeightReading read_weight() {
        double sum = 0.0;
        for (int i = 0; i < config_.samples_per_reading; ++i) sum += sample_raw();
        return counts_to_grams(sum / config_.samples_per_reading, cell_);
    }

    void open_lid() {
        if (powered()) return;
        lid_ = Lid::open;
        if (config_.session_tare_range > 0.0) {
            std::uniform_real_distribution<double> tare(-config_.session_tare_range, config_.session_tare_range);
            cell_.session_tare_offset = tare(rng_);
        }
        refresh_tag();
    }

    void close_lid() { lid_ = Lid::closed; }

    void remove_pills(int n) {
        if (n <= 0) throw Error(ErrorCode::invalid_argument, "number of pills to remove must be positive");
        if (!powered()) throw Error(ErrorCode::lid_closed, "lid is closed; open it to remove pills");
        if (n > container_.pill_count) {
            throw Error(ErrorCode::underflow, "cannot remove " + std::to_string(n) + " pills, only " +
                                                  std::to_string(container_.pill_count) + " left");
        }
        container_.pill_count -= n;
        refresh_tag();
    }

    void add_pills(int n) {
        if (n <= 0) throw Error(ErrorCode::invalid_argument, "number of pills to add must be positive");
        if (!powered()) throw Error(ErrorCode::lid_closed, "lid is closed; open it to add pills");
        container_.pill_count += n;
        refresh_tag();
    }

    /// Advances simulated time; sampling and battery drain happen only
    /// while the lid is open.
    void advance(double seconds) {
        if (!(seconds >= 0.0) || !std::isfinite(seconds)) {
            throw Error(ErrorCode::invalid_argument, "time step must be a non-negative number of seconds");
        }
        const std::int64_t steps = std::llround(seconds * ticks_per_second);
        const double drain_per_tick =
            config_.power_mW / config_.supply_V / (3600.0 * ticks_per_second);
        for (std::int64_t i = 0; i < steps; ++i) {
            ++ticks_;
            if (powered()) {
                refresh_tag();
                battery_mAh_ = std::max(0.0, battery_mAh_ - drain_per_tick);
            }
        }
    }

    /// Serializes the mutable state (including the RNG stream) for restart.
    std::string save_state() const {
        std::ostringstream out;
        out.precision(17);
        out << int(lid_) << ' ' << container_.pill_count << ' ' << cell_.session_tare_offset << ' ' << battery_mAh_
            << ' ' << ticks_ << ' ' << samples_ << ' ';
        for (const Block& b : tag_.blocks()) out << to_hex_line(b) << ' ';
        out << rng_ << ' ' << gauss_;
        return out.str();
    }

    void load_state(const std::string& text) {
        std::istringstream in(text);
        int lid = 0;
        in >> lid >> container_.pill_count >> cell_.session_tare_offset >> battery_mAh_ >> ticks_ >> samples_;
        TagMemory tag(tag_.block_count(), tag_.data_block_index());
        for (std::size_t i = 0; i < tag.block_count(); ++i) {
            std::string hex;
            in >> hex;
            const auto blocks = parse_hex_dump(hex);
            if (blocks.size() != 1) throw Error(ErrorCode::io, "corrupt device state");
            tag.block(i) = blocks.front();
        }
        in >> rng_ >> gauss_;
        if (!in) throw Error(ErrorCode::io, "corrupt device state");
        lid_ = lid ? Lid::open : Lid::closed;
        tag_ = tag;
    }

private:
    void refresh_tag() { tag_ = write_tag(std::move(tag_), read_weight()); }

    DeviceConfig config_;
    PillContainer container_;
    LoadCellModel cell_;
    TagMemory tag_{};
    Lid lid_ = Lid::closed;
    double battery_mAh_;
    std::int64_t ticks_ = 0;
    std::uint64_t samples_ = 0;
    std::mt19937_64 rng_;
    std::normal_distribution<double> gauss_{0.0, 1.0};
};

} // namespace pillcase
