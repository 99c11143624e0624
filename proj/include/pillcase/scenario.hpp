#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "pillcase/adherence_engine.hpp"
#include "pillcase/config.hpp"
#include "pillcase/error.hpp"
#include "pillcase/gateway.hpp"

namespace pillcase::scenario {

// Line-oriented action script:
//
//   # comment
//   seed 42
//   device pills=9 unit_mass=4.4 noise_sigma=0.05
//   prescription medicine=tylenol dose=2
//   open | close | remove N | add N | advance SECONDS | scan | read
//   expect calibration
//   expect doses N
//   expect verdict correct | insufficient K | exceed K | refill K
//   expect message TEXT
//   expect weight xx.x
//   expect step-range LO HI
//   expect unit-weight LO HI
//   expect-error CODE ACTION...
//
// "read" records the live tag weight; step-range and unit-weight check the
// recorded series.

struct Step {
    int line = 0;
    std::string text;
    std::vector<std::string> words;
};

struct Script {
    std::optional<std::uint64_t> seed;
    DeviceConfig device{};
    std::optional<Prescription> prescription;
    std::vector<Step> steps;
};

namespace detail {

inline std::vector<std::string> split_words(const std::string& s) {
    std::istringstream in(s);
    std::vector<std::string> out;
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
}

[[noreturn]] inline void fail_parse(int line, const std::string& msg) {
    throw Error(ErrorCode::parse, "line " + std::to_string(line) + ": " + msg);
}

inline KeyValues key_values(const std::vector<std::string>& words, int line) {
    KeyValues kv;
    for (std::size_t i = 1; i < words.size(); ++i) {
        const auto eq = words[i].find('=');
        if (eq == std::string::npos || eq == 0) fail_parse(line, "expected key=value, got \"" + words[i] + "\"");
        kv[words[i].substr(0, eq)] = words[i].substr(eq + 1);
    }
    return kv;
}

inline bool is_action(const std::string& w) {
    return w == "open" || w == "close" || w == "remove" || w == "add" || w == "advance" || w == "scan" || w == "read";
}

inline void check_action(const std::vector<std::string>& w, std::size_t at, int line) {
    if (at >= w.size() || !is_action(w[at])) fail_parse(line, "expected an action");
    const std::string& a = w[at];
    const std::size_t args = w.size() - at - 1;
    if (a == "remove" || a == "add") {
        if (args != 1) fail_parse(line, a + " takes one count");
        try {
            parse_number<int>(a, w[at + 1]);
        } catch (const Error&) {
            fail_parse(line, "invalid count \"" + w[at + 1] + "\"");
        }
    } else if (a == "advance") {
        if (args != 1) fail_parse(line, "advance takes a number of seconds");
        try {
            parse_number<double>(a, w[at + 1]);
        } catch (const Error&) {
            fail_parse(line, "invalid duration \"" + w[at + 1] + "\"");
        }
    } else if (args != 0) {
        fail_parse(line, a + " takes no arguments");
    }
}

inline void check_expect(const Step& s) {
    const auto& w = s.words;
    if (w.size() < 2) fail_parse(s.line, "expect needs a clause");
    const std::string& what = w[1];
    auto need = [&](std::size_t n) {
        if (w.size() != n) fail_parse(s.line, "malformed expect " + what);
    };
    auto number = [&](std::size_t i) {
        try {
            parse_number<double>(what, w[i]);
        } catch (const Error&) {
            fail_parse(s.line, "invalid number \"" + w[i] + "\"");
        }
    };
    if (what == "calibration") {
        need(2);
    } else if (what == "doses") {
        need(3);
        number(2);
    } else if (what == "verdict") {
        if (w.size() < 3 || !verdict_kind_from_string(w[2])) fail_parse(s.line, "unknown verdict");
        need(w[2] == "correct" ? 3 : 4);
        if (w.size() == 4) number(3);
    } else if (what == "message") {
        if (w.size() < 3) fail_parse(s.line, "expect message needs text");
    } else if (what == "weight") {
        need(3);
        try {
            WeightReading::parse(w[2]);
        } catch (const Error&) {
            fail_parse(s.line, "weight must look like xx.x");
        }
    } else if (what == "step-range" || what == "unit-weight") {
        need(4);
        number(2);
        number(3);
    } else {
        fail_parse(s.line, "unknown expect clause \"" + what + "\"");
    }
}

inline DeviceConfig apply_device(DeviceConfig cfg, const KeyValues& kv, int line) {
    for (const auto& [k, v] : kv) {
        try {
            if (k == "pills") cfg.container.pill_count = parse_number<int>(k, v);
            else if (k == "unit_mass") cfg.container.true_unit_mass = parse_number<double>(k, v);
            else if (k == "tare_mass") cfg.container.tare_mass = parse_number<double>(k, v);
            else if (k == "noise_sigma") cfg.cell.noise_sigma = parse_number<double>(k, v);
            else if (k == "calibration_factor") cfg.cell.calibration_factor = parse_number<double>(k, v);
            else if (k == "offset_counts") cfg.cell.offset_counts = parse_number<std::int32_t>(k, v);
            else if (k == "session_tare_offset") cfg.cell.session_tare_offset = parse_number<double>(k, v);
            else if (k == "session_tare_range") cfg.session_tare_range = parse_number<double>(k, v);
            else if (k == "samples_per_reading") cfg.samples_per_reading = parse_number<int>(k, v);
            else if (k == "battery_mah") cfg.battery_mAh = parse_number<double>(k, v);
            else fail_parse(line, "unknown device key \"" + k + "\"");
        } catch (const Error& e) {
            if (e.code() == ErrorCode::parse) throw;
            fail_parse(line, e.what());
        }
    }
    try {
        cfg.validate();
    } catch (const Error& e) {
        fail_parse(line, e.what());
    }
    return cfg;
}

} // namespace detail

/// Parses the whole script up front; any malformed line fails with its
/// line number before anything runs.
inline Script parse(std::string_view text, const MedicineCatalog& catalog = MedicineCatalog::defaults()) {
    Script script;
    std::istringstream in{std::string(text)};
    std::string raw;
    int line = 0;
    bool started = false;
    while (std::getline(in, raw)) {
        ++line;
        if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
        Step step{line, trim(raw), detail::split_words(raw)};
        if (step.words.empty()) continue;
        const std::string& head = step.words[0];

        if (head == "seed" || head == "device" || head == "prescription") {
            if (started) detail::fail_parse(line, head + " must come before the first action");
            if (head == "seed") {
                if (step.words.size() != 2) detail::fail_parse(line, "seed takes one integer");
                try {
                    script.seed = parse_number<std::uint64_t>("seed", step.words[1]);
                } catch (const Error&) {
                    detail::fail_parse(line, "invalid seed \"" + step.words[1] + "\"");
                }
            } else if (head == "device") {
                script.device = detail::apply_device(script.device, detail::key_values(step.words, line), line);
            } else {
                const auto kv = detail::key_values(step.words, line);
                try {
                    const auto med = kv.count("medicine") ? kv.at("medicine") : std::string("tylenol");
                    const int dose = kv.count("dose") ? parse_number<int>("dose", kv.at("dose")) : 1;
                    Prescription p;
                    if (kv.count("unit_weight")) {
                        p = Prescription{med, med, parse_number<double>("unit_weight", kv.at("unit_weight")), dose, {}};
                        p.validate();
                    } else {
                        p = catalog.prescribe(med, dose);
                    }
                    script.prescription = p;
                } catch (const Error& e) {
                    detail::fail_parse(line, e.what());
                }
            }
            continue;
        }
        started = true;
        if (head == "expect") {
            detail::check_expect(step);
        } else if (head == "expect-error") {
            if (step.words.size() < 3) detail::fail_parse(line, "expect-error needs a code and an action");
            detail::check_action(step.words, 2, line);
        } else if (detail::is_action(head)) {
            detail::check_action(step.words, 0, line);
        } else {
            detail::fail_parse(line, "unknown command \"" + head + "\"");
        }
        script.steps.push_back(std::move(step));
    }
    return script;
}

struct Check {
    int line = 0;
    std::string text;
    bool passed = false;
    std::string detail;
};

struct Report {
    std::vector<Check> checks;
    std::vector<double> readings;
    std::optional<std::string> aborted;  // runtime error that stopped the run

    bool passed() const {
        if (aborted) return false;
        for (const auto& c : checks) {
            if (!c.passed) return false;
        }
        return true;
    }

    std::string render() const {
        std::ostringstream out;
        std::size_t ok = 0;
        for (const auto& c : checks) {
            out << (c.passed ? "PASS" : "FAIL") << " line " << c.line << ": " << c.text;
            if (!c.detail.empty()) out << " (" << c.detail << ")";
            out << '\n';
            ok += c.passed ? 1 : 0;
        }
        if (aborted) out << "ABORT " << *aborted << '\n';
        out << (passed() ? "PASSED" : "FAILED") << ' ' << ok << '/' << checks.size() << " checks\n";
        return out.str();
    }
};

/// Executes a parsed script against an in-process device and engine.
inline Report run(const Script& script, std::optional<std::uint64_t> seed_override = std::nullopt) {
    Report report;
    Gateway gw;
    DeviceRegistration reg;
    reg.device = script.device;
    if (seed_override) reg.device.cell.rng_seed = *seed_override;
    else if (script.seed) reg.device.cell.rng_seed = *script.seed;
    if (script.prescription) reg.prescription = *script.prescription;
    const std::string id = gw.register_device(reg);

    std::optional<ScanOutcome> last;
    auto format = [](double v) {
        std::ostringstream o;
        o << v;
        return o.str();
    };

    auto perform = [&](const std::vector<std::string>& w, std::size_t at) {
        const std::string& a = w[at];
        if (a == "open") gw.device_action(id, DeviceAction::open());
        else if (a == "close") gw.device_action(id, DeviceAction::close());
        else if (a == "remove") gw.device_action(id, DeviceAction::remove(parse_number<int>(a, w[at + 1])));
        else if (a == "add") gw.device_action(id, DeviceAction::add(parse_number<int>(a, w[at + 1])));
        else if (a == "advance") gw.device_action(id, DeviceAction::advance(parse_number<double>(a, w[at + 1])));
        else if (a == "scan") last = gw.scan(id);
        else if (a == "read") {
            const auto s = gw.status(id);
            if (!s.tag_weight) throw Error(ErrorCode::empty_tag, "tag holds no weight record");
            report.readings.push_back(s.tag_weight->grams());
        }
    };

    for (const Step& step : script.steps) {
        const auto& w = step.words;
        if (w[0] == "expect-error") {
            Check c{step.line, step.text, false, {}};
            try {
                perform(w, 2);
                c.detail = "no error raised";
            } catch (const Error& e) {
                c.passed = to_string(e.code()) == w[1];
                if (!c.passed) c.detail = "got " + std::string(to_string(e.code()));
            }
            report.checks.push_back(c);
            continue;
        }
        if (w[0] != "expect") {
            try {
                perform(w, 0);
            } catch (const Error& e) {
                report.aborted = "line " + std::to_string(step.line) + ": " + std::string(to_string(e.code())) + ": " + e.what();
                return report;
            }
            continue;
        }

        Check c{step.line, step.text, false, {}};
        const std::string& what = w[1];
        const bool needs_scan = what == "calibration" || what == "doses" || what == "verdict" || what == "message";
        if (needs_scan && !last) {
            c.detail = "no scan yet";
        } else if (what == "calibration") {
            c.passed = last->calibration;
            if (!c.passed) c.detail = "scan was not a calibration";
        } else if (what == "doses") {
            const int want = parse_number<int>(what, w[2]);
            c.passed = !last->calibration && last->result.doses_taken == want;
            c.detail = "got " + std::to_string(last->result.doses_taken);
        } else if (what == "verdict") {
            const Verdict want{*verdict_kind_from_string(w[2]), w.size() == 4 ? parse_number<int>(what, w[3]) : 0};
            c.passed = !last->calibration && last->result.verdict == want;
            c.detail = "got " + std::string(to_string(last->result.verdict.kind)) + " " +
                       std::to_string(last->result.verdict.count);
        } else if (what == "message") {
            std::string want;
            for (std::size_t i = 2; i < w.size(); ++i) want += (i > 2 ? " " : "") + w[i];
            c.passed = last->message == want;
            c.detail = "got \"" + last->message + "\"";
        } else if (what == "weight") {
            const auto s = gw.status(id);
            const auto want = WeightReading::parse(w[2]);
            c.passed = s.tag_weight && *s.tag_weight == want;
            c.detail = "tag " + (s.tag_weight ? s.tag_weight->str() : std::string("blank"));
        } else if (what == "step-range") {
            const double lo = parse_number<double>(what, w[2]);
            const double hi = parse_number<double>(what, w[3]);
            if (report.readings.size() < 2) {
                c.detail = "fewer than two readings";
            } else {
                c.passed = true;
                std::string diffs;
                for (std::size_t i = 1; i < report.readings.size(); ++i) {
                    // readings are exact tenths; compare on that grid
                    const double d = std::round((report.readings[i - 1] - report.readings[i]) * 10.0) / 10.0;
                    if (d < lo - 1e-9 || d > hi + 1e-9) c.passed = false;
                    diffs += (i > 1 ? " " : "") + format(d);
                }
                c.detail = "steps " + diffs;
            }
        } else if (what == "unit-weight") {
            const double lo = parse_number<double>(what, w[2]);
            const double hi = parse_number<double>(what, w[3]);
            try {
                const double uw = estimate_unit_weight(report.readings);
                c.passed = uw >= lo - 1e-9 && uw <= hi + 1e-9;
                c.detail = "estimated " + format(uw);
            } catch (const Error& e) {
                c.detail = e.what();
            }
        }
        report.checks.push_back(c);
    }
    return report;
}

} // namespace pillcase::scenario
