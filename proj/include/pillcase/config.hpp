#pragma once

#include <charconv>
#include <map>
#include <sstream>
#include <string>
#include <string_view>

#include "pillcase/error.hpp"
#include "pillcase/fed_adherence.hpp"

namespace pillcase {

/// Plain "key = value" text; '#' starts a comment.
using KeyValues = std::map<std::string, std::string>;

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

inline KeyValues parse_key_values(std::string_view text) {
    KeyValues kv;
    std::istringstream in{std::string(text)};
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const std::string t = trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw Error(ErrorCode::parse, "line " + std::to_string(line_no) + ": expected key = value");
        }
        const std::string key = trim(std::string_view(t).substr(0, eq));
        const std::string value = trim(std::string_view(t).substr(eq + 1));
        if (key.empty()) throw Error(ErrorCode::parse, "line " + std::to_string(line_no) + ": empty key");
        if (!kv.emplace(key, value).second) {
            throw Error(ErrorCode::parse, "line " + std::to_string(line_no) + ": duplicate key " + key);
        }
    }
    return kv;
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    T out{};
    const char* end = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc{} || ptr != end) {
        throw Error(ErrorCode::validation, "invalid value for " + key + ": \"" + value + "\"");
    }
    return out;
}

/// Experiment config. Keys:
///   clients, days, base_adherence, weekend_dip, imbalance_skew, slots_per_day,
///   seed, rounds, clients_per_round, mode (plain | fair), q, epochs, lr,
///   class_weighting (inverse | none), holdout, threads
inline fed::FedConfig fed_config_from(const KeyValues& kv) {
    fed::FedConfig c;
    std::string mode = "plain";
    double q = 0.0;
    for (const auto& [key, value] : kv) {
        if (key == "clients") c.population.n_clients = parse_number<int>(key, value);
        else if (key == "days") c.days = parse_number<int>(key, value);
        else if (key == "base_adherence") c.population.base_adherence = parse_number<double>(key, value);
        else if (key == "weekend_dip") c.population.weekend_dip = parse_number<double>(key, value);
        else if (key == "imbalance_skew") c.population.imbalance_skew = parse_number<double>(key, value);
        else if (key == "slots_per_day") c.population.slots_per_day = parse_number<int>(key, value);
        else if (key == "seed") c.population.seed = parse_number<std::uint64_t>(key, value);
        else if (key == "rounds") c.rounds = parse_number<int>(key, value);
        else if (key == "clients_per_round") c.clients_per_round = parse_number<int>(key, value);
        else if (key == "mode") mode = value;
        else if (key == "q") q = parse_number<double>(key, value);
        else if (key == "epochs") c.train.epochs = parse_number<int>(key, value);
        else if (key == "lr") c.train.learning_rate = parse_number<double>(key, value);
        else if (key == "class_weighting") {
            if (value != "inverse" && value != "none")
                throw Error(ErrorCode::validation, "class_weighting must be inverse or none");
            c.train.class_weighting = value == "inverse";
        }
        else if (key == "holdout") c.holdout_fraction = parse_number<double>(key, value);
        else if (key == "threads") c.threads = parse_number<int>(key, value);
        else throw Error(ErrorCode::validation, "unknown config key: " + key);
    }
    if (mode == "plain") c.mode = fed::AggregationMode::plain();
    else if (mode == "fair") c.mode = fed::AggregationMode::fair(q);
    else throw Error(ErrorCode::validation, "mode must be plain or fair");
    try {
        c.validate();
    } catch (const Error& e) {
        throw Error(ErrorCode::validation, e.what());
    }
    return c;
}

} // namespace pillcase
