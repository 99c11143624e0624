#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pillcase/error.hpp"
#include "pillcase/ndef_codec.hpp"

namespace pillcase {

struct Prescription {
    std::string medicine_id;
    std::string medicine_name;
    double unit_weight = 0.0;  // grams per pill
    int recommended_dose = 1;  // pills per intake
    std::vector<std::string> schedule;  // intake times, "HH:MM"

    void validate() const {
        if (medicine_id.empty()) throw Error(ErrorCode::validation, "medicine id must not be empty");
        if (!(unit_weight > 0.0) || !std::isfinite(unit_weight))
            throw Error(ErrorCode::validation, "unit weight must be positive");
        if (recommended_dose < 1) throw Error(ErrorCode::validation, "recommended dose must be at least 1");
    }

    friend bool operator==(const Prescription&, const Prescription&) = default;
};

enum class VerdictKind { correct, insufficient, exceed, refill };

constexpr std::string_view to_string(VerdictKind kind) {
    switch (kind) {
        case VerdictKind::correct: return "correct";
        case VerdictKind::insufficient: return "insufficient";
        case VerdictKind::exceed: return "exceed";
        case VerdictKind::refill: return "refill";
    }
    return "unknown";
}

inline std::optional<VerdictKind> verdict_kind_from_string(std::string_view s) {
    for (auto k : {VerdictKind::correct, VerdictKind::insufficient, VerdictKind::exceed, VerdictKind::refill}) {
        if (to_string(k) == s) return k;
    }
    return std::nullopt;
}

struct Verdict {
    VerdictKind kind = VerdictKind::correct;
    int count = 0;  // k for insufficient / exceed, pills added for refill, 0 for correct

    /// Text shown next to the warning (or thumb-up) image.
    std::string message() const {
        switch (kind) {
            case VerdictKind::correct: return "Correct dose";
            case VerdictKind::insufficient:
                return "You are taking " + std::to_string(count) + " less than what should";
            case VerdictKind::exceed: return "You are taking " + std::to_string(count) + " more than what should";
            case VerdictKind::refill: return "Refill detected: " + std::to_string(count) + " added";
        }
        return {};
    }

    friend bool operator==(const Verdict&, const Verdict&) = default;
};

struct ScanResult {
    double timestamp = 0.0;
    WeightReading previous_weight;
    WeightReading current_weight;
    int doses_taken = 0;
    Verdict verdict;
};

/// Spinner-backed list of medicines with predefined unit weights.
class MedicineCatalog {
public:
    struct Entry {
        std::string name;
        double unit_weight = 0.0;
    };

    void add(const std::string& id, const std::string& name, double unit_weight) {
        if (id.empty()) throw Error(ErrorCode::validation, "medicine id must not be empty");
        if (!(unit_weight > 0.0)) throw Error(ErrorCode::validation, "unit weight must be positive");
        if (!entries_.emplace(id, Entry{name, unit_weight}).second) {
            throw Error(ErrorCode::validation, "duplicate medicine id: " + id);
        }
    }

    const Entry* find(const std::string& id) const {
        auto it = entries_.find(id);
        return it == entries_.end() ? nullptr : &it->second;
    }

    const std::map<std::string, Entry>& entries() const { return entries_; }

    /// Prescription for a catalog medicine.
    Prescription prescribe(const std::string& id, int recommended_dose) const {
        const Entry* e = find(id);
        if (!e) throw Error(ErrorCode::validation, "unknown medicine: " + id);
        Prescription p{id, e->name, e->unit_weight, recommended_dose, {}};
        p.validate();
        return p;
    }

    /// Tylenol, calibrated against the quarter-coin stand-in.
    static MedicineCatalog defaults() {
        MedicineCatalog c;
        c.add("tylenol", "Tylenol", 4.45);
        return c;
    }

private:
    std::map<std::string, Entry> entries_;
};

/// Pills removed between two readings: (previous - current) / unit weight,
/// rounded half away from zero. Negative means pills were added.
inline int compute_doses(double previous_weight, double current_weight, double unit_weight) {
    if (!(unit_weight > 0.0)) throw Error(ErrorCode::invalid_argument, "unit weight must be positive");
    return static_cast<int>(round_half_away((previous_weight - current_weight) / unit_weight));
}

inline int compute_doses(WeightReading previous, WeightReading current, double unit_weight) {
    return compute_doses(previous.grams(), current.grams(), unit_weight);
}

inline Verdict evaluate(int doses, const Prescription& p) {
    if (doses < 0) return {VerdictKind::refill, -doses};
    if (doses == p.recommended_dose) return {VerdictKind::correct, 0};
    if (doses < p.recommended_dose) return {VerdictKind::insufficient, p.recommended_dose - doses};
    return {VerdictKind::exceed, doses - p.recommended_dose};
}

/// Per-device scan state: the weight every dose is measured against.
struct Session {
    std::optional<WeightReading> previous_weight;

    bool calibrated() const { return previous_weight.has_value(); }
    friend bool operator==(const Session&, const Session&) = default;
};

namespace detail {
inline WeightReading scan_weight(const TagMemory& tag) {
    try {
        return read_tag(tag);
    } catch (const Error& e) {
        throw Error(ErrorCode::scan_error, std::string("tag unreadable: ") + e.what(), e.offset());
    }
}
} // namespace detail

inline Session calibrate_initial(const TagMemory& tag) {
    return Session{detail::scan_weight(tag)};
}

/// Reads the tag, counts doses against the stored weight and advances the
/// session. Pure: on error the caller's session is untouched.
inline std::pair<ScanResult, Session> process_scan(const TagMemory& tag, const Session& session, const Prescription& p,
                                                   double now) {
    if (!session.calibrated()) {
        throw Error(ErrorCode::state, "session has no baseline weight; calibrate first");
    }
    const WeightReading current = detail::scan_weight(tag);
    ScanResult r;
    r.timestamp = now;
    r.previous_weight = *session.previous_weight;
    r.current_weight = current;
    r.doses_taken = compute_doses(r.previous_weight, current, p.unit_weight);
    r.verdict = evaluate(r.doses_taken, p);
    return {r, Session{current}};
}

/// Mean drop per step of a series taken one pill at a time, rounded to
/// two decimals.
inline double estimate_unit_weight(std::span<const double> weights) {
    if (weights.size() < 2) {
        throw Error(ErrorCode::insufficient_data, "need at least two weights to estimate a unit weight");
    }
    double sum = 0.0;
    for (std::size_t i = 1; i < weights.size(); ++i) sum += weights[i - 1] - weights[i];
    const double mean = sum / double(weights.size() - 1);
    return std::round(mean * 100.0) / 100.0;
}

} // namespace pillcase
