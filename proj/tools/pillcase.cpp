// pillcase: operator entry point for the pill case twin.
//
// Exit codes: 0 pass, 1 assertion failure, 2 usage / parse / input error.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "pillcase/config.hpp"
#include "pillcase/device_sim.hpp"
#include "pillcase/fed_adherence.hpp"
#include "pillcase/gateway.hpp"
#include "pillcase/http_api.hpp"
#include "pillcase/ndef_codec.hpp"
#include "pillcase/scenario.hpp"

namespace {

constexpr int exit_pass = 0;
constexpr int exit_fail = 1;
constexpr int exit_usage = 2;

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw pillcase::Error(pillcase::ErrorCode::io, "cannot open " + path);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

int run_scenario(const std::string& path, std::optional<std::uint64_t> seed) {
    pillcase::scenario::Script script;
    try {
        script = pillcase::scenario::parse(read_file(path));
    } catch (const pillcase::Error& e) {
        std::cerr << path << ": " << e.what() << '\n';
        return exit_usage;
    }
    const auto report = pillcase::scenario::run(script, seed);
    std::cout << report.render();
    return report.passed() ? exit_pass : exit_fail;
}

struct BatteryOptions {
    double power_mW = pillcase::reference_power_budget_mW;
    double battery_mAh = 300.0;
    double supply_V = 9.0;
    double opens = 3.0;
    double seconds_per_open = 5.0;
    std::string format = "table";
};

int battery_report(const BatteryOptions& o) {
    const auto profile = pillcase::PowerProfile::reference_build();
    const double days = pillcase::battery_lifetime_days(o.power_mW, o.battery_mAh, o.supply_V, o.opens,
                                                        o.seconds_per_open);
    const bool unbounded = std::isinf(days);
    const std::string days_s = unbounded ? "unbounded" : fixed(days, 1);
    const std::string years_s = unbounded ? "unbounded" : fixed(days / 365.0, 2);

    if (o.format == "csv") {
        std::cout << "component,current_mA,voltage_V,power_mW\n";
        for (const auto& c : profile.components) {
            std::cout << c.name << ',' << fixed(c.current_mA, 1) << ',' << fixed(c.voltage_V, 1) << ','
                      << fixed(c.power_mW(), 1) << '\n';
        }
        std::cout << "sum,,," << fixed(profile.total_power_mW(), 1) << '\n';
        std::cout << "budget,,," << fixed(o.power_mW, 1) << '\n';
        std::cout << "lifetime_days," << days_s << "\nlifetime_years," << years_s << '\n';
        return exit_pass;
    }
    std::printf("%-14s %12s %11s %10s\n", "Component", "Current(mA)", "Voltage(V)", "Power(mW)");
    for (const auto& c : profile.components) {
        std::printf("%-14s %12.1f %11.1f %10.1f\n", c.name.c_str(), c.current_mA, c.voltage_V, c.power_mW());
    }
    std::printf("%-14s %12s %11s %10.1f\n", "Sum", "", "", profile.total_power_mW());
    std::printf("%-14s %12s %11s %10.1f\n", "Budget", "", "", o.power_mW);
    std::printf("\nBattery %s mAh at %s V, %s opens/day x %s s\n", fixed(o.battery_mAh, 0).c_str(),
                fixed(o.supply_V, 1).c_str(), fixed(o.opens, 0).c_str(), fixed(o.seconds_per_open, 1).c_str());
    std::printf("Lifetime: %s days (%s years)\n", days_s.c_str(), years_s.c_str());
    return exit_pass;
}

int fed_experiment(const std::string& config_path, std::optional<std::uint64_t> seed, const std::string& metrics_path,
                   const std::string& format) {
    pillcase::fed::FedConfig cfg;
    try {
        cfg = pillcase::fed_config_from(pillcase::parse_key_values(read_file(config_path)));
    } catch (const pillcase::Error& e) {
        std::cerr << config_path << ": " << e.what() << '\n';
        return exit_usage;
    }
    if (seed) cfg.population.seed = *seed;
    const auto history = pillcase::fed::run_federation(cfg);

    if (!metrics_path.empty()) {
        std::ofstream out(metrics_path, std::ios::binary | std::ios::trunc);
        for (const auto& m : history.rounds) out << nlohmann::json(m).dump() << '\n';
        if (!out) {
            std::cerr << "cannot write " << metrics_path << '\n';
            return exit_usage;
        }
    }

    const auto& last = history.last();
    if (format == "csv") {
        std::cout << "round,train_loss,heldout_accuracy,loss_variance,loss_max,loss_worst_decile\n";
        for (const auto& m : history.rounds) {
            std::cout << m.round << ',' << fixed(m.train_loss, 6) << ',' << fixed(m.heldout_accuracy, 6) << ','
                      << fixed(m.fairness.variance, 6) << ',' << fixed(m.fairness.max, 6) << ','
                      << fixed(m.fairness.worst_decile_mean, 6) << '\n';
        }
        return exit_pass;
    }
    std::printf("mode                 %s\n", history.mode.c_str());
    std::printf("clients              %d\n", cfg.population.n_clients);
    std::printf("rounds               %zu\n", history.rounds.size());
    std::printf("baseline accuracy    %.4f (always predict %d)\n", history.baseline_accuracy, history.baseline_label);
    std::printf("held-out accuracy    %.4f\n", last.heldout_accuracy);
    std::printf("held-out loss        %.4f\n", last.heldout_loss);
    std::printf("client loss variance %.6f\n", last.fairness.variance);
    std::printf("client loss max      %.4f\n", last.fairness.max);
    std::printf("worst-decile loss    %.4f\n", last.fairness.worst_decile_mean);
    return exit_pass;
}

int ndef_dump(const std::string& text) {
    char* end = nullptr;
    const double grams = std::strtod(text.c_str(), &end);
    if (end == text.c_str() || *end != '\0') {
        std::cerr << "not a number: " << text << '\n';
        return exit_usage;
    }
    try {
        std::cout << pillcase::to_hex_line(pillcase::encode_weight(grams).bytes) << '\n';
    } catch (const pillcase::Error& e) {
        std::cerr << pillcase::to_string(e.code()) << ": " << e.what() << '\n';
        return exit_usage;
    }
    return exit_pass;
}

int serve(const std::string& host, int port, const std::string& data_dir) {
    pillcase::Gateway gw(data_dir.empty() ? std::nullopt : std::optional<std::filesystem::path>(data_dir));
    httplib::Server server;
    pillcase::http::mount(server, gw);
    std::cerr << "listening on " << host << ':' << port << '\n';
    if (!server.listen(host, port)) {
        std::cerr << "cannot bind " << host << ':' << port << '\n';
        return exit_usage;
    }
    return exit_pass;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Smart pill case twin: scenarios, battery estimates, federated experiments, NDEF vectors"};
    app.require_subcommand(1);

    std::optional<std::uint64_t> seed;
    std::string scenario_path;
    auto* scenario = app.add_subcommand("scenario", "run a scripted device + engine scenario");
    scenario->add_option("--scenario,path", scenario_path, "scenario script")->required();
    scenario->add_option("--seed", seed, "override the script's seed");

    BatteryOptions battery;
    auto* bat = app.add_subcommand("battery", "battery lifetime report");
    bat->add_option("--power", battery.power_mW, "total draw while powered, mW")->check(CLI::NonNegativeNumber);
    bat->add_option("--battery-mah", battery.battery_mAh, "battery capacity, mAh")->check(CLI::PositiveNumber);
    bat->add_option("--supply-v", battery.supply_V, "supply voltage, V")->check(CLI::PositiveNumber);
    bat->add_option("--opens", battery.opens, "lid openings per day")->check(CLI::NonNegativeNumber);
    bat->add_option("--seconds-per-open", battery.seconds_per_open, "seconds the lid stays open")
        ->check(CLI::NonNegativeNumber);
    bat->add_option("--format", battery.format, "table or csv")->check(CLI::IsMember({"table", "csv"}));

    std::string config_path, metrics_path, fed_format = "table";
    auto* fed = app.add_subcommand("fed", "run a federated adherence experiment");
    fed->add_option("--config,config", config_path, "experiment config (key = value)")->required();
    fed->add_option("--seed", seed, "override the config seed");
    fed->add_option("--metrics", metrics_path, "write one JSON record per round here");
    fed->add_option("--format", fed_format, "table or csv")->check(CLI::IsMember({"table", "csv"}));

    std::string weight;
    auto* dump = app.add_subcommand("ndef-dump", "print the tag data block for a weight as hex");
    dump->add_option("weight", weight, "grams, e.g. 39.6")->required();

    std::string host = "127.0.0.1", data_dir;
    int port = 8080;
    auto* srv = app.add_subcommand("serve", "run the HTTP gateway");
    srv->add_option("--host", host);
    srv->add_option("--port", port);
    srv->add_option("--data-dir", data_dir, "event log and device snapshot directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return exit_usage;
    }

    try {
        if (*scenario) return run_scenario(scenario_path, seed);
        if (*bat) return battery_report(battery);
        if (*fed) return fed_experiment(config_path, seed, metrics_path, fed_format);
        if (*dump) return ndef_dump(weight);
        if (*srv) return serve(host, port, data_dir);
    } catch (const pillcase::Error& e) {
        std::cerr << pillcase::to_string(e.code()) << ": " << e.what() << '\n';
        return exit_usage;
    }
    return exit_usage;
}
