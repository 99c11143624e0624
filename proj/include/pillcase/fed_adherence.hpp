#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "pillcase/error.hpp"

namespace pillcase::fed {

// Feature layout: day-of-week one-hot (Mon..Sun), intake slot index,
// trailing 7-day adherence rate, pills-remaining fraction.
inline constexpr std::size_t weekday_features = 7;
inline constexpr std::size_t slot_feature = 7;
inline constexpr std::size_t trailing_rate_feature = 8;
inline constexpr std::size_t pills_fraction_feature = 9;
inline constexpr std::size_t feature_dim = 10;
inline constexpr std::size_t param_dim = feature_dim + 1;  // bias last

using Features = std::array<double, feature_dim>;

struct Example {
    Features x{};
    int label = 0;  // 1 when the scheduled dose was taken correctly

    friend bool operator==(const Example&, const Example&) = default;
};

struct ClientDataset {
    std::string client_id;
    std::vector<Example> examples;

    friend bool operator==(const ClientDataset&, const ClientDataset&) = default;
};

struct ModelParams {
    std::vector<double> weights = std::vector<double>(param_dim, 0.0);

    bool finite() const {
        return std::all_of(weights.begin(), weights.end(), [](double w) { return std::isfinite(w); });
    }
    friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

inline Features make_features(int day_of_week, int slot, double trailing_rate, double pills_fraction) {
    Features x{};
    x[static_cast<std::size_t>(day_of_week)] = 1.0;
    x[slot_feature] = slot;
    x[trailing_rate_feature] = trailing_rate;
    x[pills_fraction_feature] = pills_fraction;
    return x;
}

// ---------------------------------------------------------------------------
// Synthetic population

struct PopulationSpec {
    int n_clients = 50;
    double base_adherence = 0.9;
    std::vector<double> client_base;  // optional per-client override, size n_clients
    double weekend_dip = 0.6;         // multiplier on Saturdays and Sundays
    double imbalance_skew = 0.0;      // client base = base * (1 - skew * u), u ~ U(0,1)
    int slots_per_day = 2;
    int pill_capacity = 30;
    std::uint64_t seed = 7;

    void validate() const {
        auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
        if (n_clients < 1) throw Error(ErrorCode::spec_error, "population needs at least one client");
        if (!prob(base_adherence)) throw Error(ErrorCode::spec_error, "base adherence must be in [0, 1]");
        if (!prob(weekend_dip)) throw Error(ErrorCode::spec_error, "weekend dip must be in [0, 1]");
        if (!prob(imbalance_skew)) throw Error(ErrorCode::spec_error, "imbalance skew must be in [0, 1]");
        if (!client_base.empty()) {
            if (client_base.size() != static_cast<std::size_t>(n_clients))
                throw Error(ErrorCode::spec_error, "client_base must list one probability per client");
            if (!std::all_of(client_base.begin(), client_base.end(), prob))
                throw Error(ErrorCode::spec_error, "client base adherence must be in [0, 1]");
        }
        if (slots_per_day < 1) throw Error(ErrorCode::spec_error, "slots per day must be at least 1");
        if (pill_capacity < 1) throw Error(ErrorCode::spec_error, "pill capacity must be at least 1");
    }
};

inline bool is_weekend(int day_of_week) { return day_of_week >= 5; }

/// Probability that a given client takes a scheduled dose on a given day.
inline double adherence_probability(double client_base, double weekend_dip, int day_of_week) {
    return is_weekend(day_of_week) ? client_base * weekend_dip : client_base;
}

/// Simulated adherence logs, one dataset per household. Day 0 is a Monday.
/// Each client draws from its own stream so clients are independent of
/// population size ordering.
inline std::vector<ClientDataset> generate_population(const PopulationSpec& spec, int days) {
    spec.validate();
    if (days < 1) throw Error(ErrorCode::spec_error, "days must be at least 1");

    std::vector<ClientDataset> out;
    out.reserve(static_cast<std::size_t>(spec.n_clients));
    for (int c = 0; c < spec.n_clients; ++c) {
        std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                          static_cast<std::uint32_t>(c)};
        std::mt19937_64 rng(seq);
        std::uniform_real_distribution<double> unit(0.0, 1.0);

        double base = spec.base_adherence * (1.0 - spec.imbalance_skew * unit(rng));
        if (!spec.client_base.empty()) base = spec.client_base[static_cast<std::size_t>(c)];

        ClientDataset ds;
        ds.client_id = "client-" + std::to_string(c);
        ds.examples.reserve(static_cast<std::size_t>(days * spec.slots_per_day));

        const std::size_t window = static_cast<std::size_t>(7 * spec.slots_per_day);
        std::vector<int> history;
        int window_sum = 0;
        int pills = spec.pill_capacity;

        for (int d = 0; d < days; ++d) {
            const int dow = d % 7;
            const double p = adherence_probability(base, spec.weekend_dip, dow);
            for (int s = 0; s < spec.slots_per_day; ++s) {
                if (pills == 0) pills = spec.pill_capacity;
                const double trailing = history.empty() ? 1.0 : double(window_sum) / double(std::min(history.size(), window));
                Example ex;
                ex.x = make_features(dow, s, trailing, double(pills) / spec.pill_capacity);
                ex.label = unit(rng) < p ? 1 : 0;
                ds.examples.push_back(ex);

                if (ex.label) --pills;
                history.push_back(ex.label);
                window_sum += ex.label;
                if (history.size() > window) window_sum -= history[history.size() - 1 - window];
            }
        }
        out.push_back(std::move(ds));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Logistic model

struct ClassWeights {
    double negative = 1.0;
    double positive = 1.0;

    double operator()(int label) const { return label ? positive : negative; }
};

/// n / (2 n_class) per class; uniform when a class is absent.
inline ClassWeights inverse_frequency_weights(std::span<const Example> data) {
    std::size_t pos = 0;
    for (const auto& e : data) pos += e.label ? 1 : 0;
    const std::size_t neg = data.size() - pos;
    if (pos == 0 || neg == 0) return {};
    const double n = double(data.size());
    return {n / (2.0 * double(neg)), n / (2.0 * double(pos))};
}

inline double logit(const ModelParams& p, const Features& x) {
    double z = p.weights[feature_dim];
    for (std::size_t j = 0; j < feature_dim; ++j) z += p.weights[j] * x[j];
    return z;
}

inline double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

/// log(1 + e^z) without overflow.
inline double softplus(double z) {
    return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

/// Class-weighted mean negative log-likelihood.
inline double logistic_loss(const ModelParams& p, std::span<const Example> data, const ClassWeights& cw = {}) {
    if (data.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& e : data) {
        const double z = logit(p, e.x);
        sum += cw(e.label) * (softplus(z) - e.label * z);
    }
    return sum / double(data.size());
}

inline std::vector<double> logistic_gradient(const ModelParams& p, std::span<const Example> data,
                                             const ClassWeights& cw = {}) {
    std::vector<double> g(param_dim, 0.0);
    if (data.empty()) return g;
    for (const auto& e : data) {
        const double r = cw(e.label) * (sigmoid(logit(p, e.x)) - e.label);
        for (std::size_t j = 0; j < feature_dim; ++j) g[j] += r * e.x[j];
        g[feature_dim] += r;
    }
    for (double& v : g) v /= double(data.size());
    return g;
}

inline int predict(const ModelParams& p, const Features& x) { return logit(p, x) >= 0.0 ? 1 : 0; }

inline double accuracy(const ModelParams& p, std::span<const Example> data) {
    if (data.empty()) return 0.0;
    std::size_t hit = 0;
    for (const auto& e : data) hit += predict(p, e.x) == e.label ? 1 : 0;
    return double(hit) / double(data.size());
}

struct TrainConfig {
    int epochs = 5;
    double learning_rate = 0.5;
    bool class_weighting = true;
};

/// What a client hands to the coordinator. Nothing else crosses.
struct ClientUpdate {
    std::string client_id;
    ModelParams update;       // trained - incoming
    std::size_t n_samples = 0;
    double local_loss = 0.0;  // loss of the incoming global model on local data
};

inline void to_json(nlohmann::json& j, const ClientUpdate& u) {
    j = nlohmann::json{{"client_id", u.client_id},
                       {"update", u.update.weights},
                       {"n_samples", u.n_samples},
                       {"local_loss", u.local_loss}};
}

/// Full-batch gradient descent on the class-weighted logistic loss.
/// Returns nullopt (abstain) for an empty dataset.
inline std::optional<ClientUpdate> local_train(const ModelParams& params, const ClientDataset& data, int epochs,
                                               double lr, const ClassWeights& cw) {
    if (data.examples.empty()) return std::nullopt;
    if (epochs < 0) throw Error(ErrorCode::invalid_argument, "epochs must not be negative");
    ClientUpdate out;
    out.client_id = data.client_id;
    out.n_samples = data.examples.size();
    out.local_loss = logistic_loss(params, data.examples, cw);

    ModelParams trained = params;
    for (int e = 0; e < epochs; ++e) {
        const auto g = logistic_gradient(trained, data.examples, cw);
        for (std::size_t j = 0; j < param_dim; ++j) trained.weights[j] -= lr * g[j];
    }
    for (std::size_t j = 0; j < param_dim; ++j) out.update.weights[j] = trained.weights[j] - params.weights[j];
    if (!std::isfinite(out.local_loss) || !out.update.finite()) {
        throw Error(ErrorCode::invalid_argument, "local training diverged for " + data.client_id);
    }
    return out;
}

inline std::optional<ClientUpdate> local_train(const ModelParams& params, const ClientDataset& data,
                                               const TrainConfig& cfg) {
    const ClassWeights cw = cfg.class_weighting ? inverse_frequency_weights(data.examples) : ClassWeights{};
    return local_train(params, data, cfg.epochs, cfg.learning_rate, cw);
}

// ---------------------------------------------------------------------------
// Aggregation

struct AggregationMode {
    enum class Kind { plain, fair } kind = Kind::plain;
    double q = 0.0;

    static AggregationMode plain() { return {}; }
    static AggregationMode fair(double q) {
        if (!(q >= 0.0)) throw Error(ErrorCode::spec_error, "fairness exponent q must be non-negative");
        return {Kind::fair, q};
    }
    std::string name() const { return kind == Kind::plain ? "plain" : "fair(" + nlohmann::json(q).dump() + ")"; }
};

/// Normalized aggregation weights: n_i for plain, n_i * loss_i^q for fair(q).
/// pow(x, 0) is exactly 1, so fair(0) yields the plain weights bit for bit.
inline std::vector<double> aggregation_weights(std::span<const ClientUpdate> updates, const AggregationMode& mode) {
    std::vector<double> raw(updates.size(), 0.0);
    for (std::size_t i = 0; i < updates.size(); ++i) {
        const double factor = mode.kind == AggregationMode::Kind::fair ? std::pow(updates[i].local_loss, mode.q) : 1.0;
        raw[i] = double(updates[i].n_samples) * factor;
    }
    double total = std::accumulate(raw.begin(), raw.end(), 0.0);
    if (total <= 0.0 && mode.kind == AggregationMode::Kind::fair) {
        // every contributor has zero loss: nothing to rebalance
        return aggregation_weights(updates, AggregationMode::plain());
    }
    if (total <= 0.0) return std::vector<double>(updates.size(), 0.0);
    for (double& w : raw) w /= total;
    return raw;
}

struct AggregateResult {
    ModelParams params;
    std::vector<double> weights;
};

/// Global params plus the weighted mean of client deltas. A round where no
/// client contributes leaves the params unchanged.
inline AggregateResult aggregate(const ModelParams& global, std::span<const ClientUpdate> updates,
                                 const AggregationMode& mode) {
    AggregateResult r{global, aggregation_weights(updates, mode)};
    for (std::size_t i = 0; i < updates.size(); ++i) {
        if (r.weights[i] == 0.0) continue;
        for (std::size_t j = 0; j < param_dim; ++j) r.params.weights[j] += r.weights[i] * updates[i].update.weights[j];
    }
    return r;
}

// ---------------------------------------------------------------------------
// Fairness statistics

struct FairnessStats {
    double variance = 0.0;
    double max = 0.0;
    double worst_decile_mean = 0.0;
};

/// Population variance, maximum, and mean of the worst ceil(n/10) losses.
inline FairnessStats evaluate_fairness(std::span<const double> losses) {
    if (losses.empty()) throw Error(ErrorCode::insufficient_data, "no per-client losses to evaluate");
    const double n = double(losses.size());
    const double mean = std::accumulate(losses.begin(), losses.end(), 0.0) / n;
    double ss = 0.0;
    for (double l : losses) ss += (l - mean) * (l - mean);

    std::vector<double> sorted(losses.begin(), losses.end());
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    const std::size_t k = (sorted.size() + 9) / 10;
    const double worst = std::accumulate(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k), 0.0) / double(k);
    return {ss / n, sorted.front(), worst};
}

// ---------------------------------------------------------------------------
// Federation

/// A household. Owns its log; exposes only training updates and evaluation
/// summaries.
class Client {
public:
    Client(ClientDataset data, double holdout_fraction) : id_(data.client_id) {
        const std::size_t n = data.examples.size();
        const std::size_t test_n = static_cast<std::size_t>(std::floor(double(n) * holdout_fraction));
        train_.client_id = test_.client_id = id_;
        train_.examples.assign(data.examples.begin(), data.examples.end() - static_cast<std::ptrdiff_t>(test_n));
        test_.examples.assign(data.examples.end() - static_cast<std::ptrdiff_t>(test_n), data.examples.end());
    }

    const std::string& id() const { return id_; }

    std::optional<ClientUpdate> train(const ModelParams& global, const TrainConfig& cfg) const {
        return local_train(global, train_, cfg);
    }

    struct Evaluation {
        std::size_t n = 0;
        std::size_t correct = 0;
        double loss = 0.0;  // unweighted mean log loss
        std::size_t positives = 0;
    };

    Evaluation evaluate_heldout(const ModelParams& p) const { return evaluate(p, test_.examples); }
    Evaluation evaluate_train(const ModelParams& p) const { return evaluate(p, train_.examples); }

private:
    static Evaluation evaluate(const ModelParams& p, std::span<const Example> data) {
        Evaluation e;
        e.n = data.size();
        for (const auto& ex : data) {
            e.correct += predict(p, ex.x) == ex.label ? 1 : 0;
            e.positives += ex.label ? 1 : 0;
        }
        e.loss = logistic_loss(p, data);
        return e;
    }

    std::string id_;
    ClientDataset train_;
    ClientDataset test_;
};

struct FedConfig {
    PopulationSpec population{};
    int days = 365;
    int rounds = 100;
    int clients_per_round = 0;  // 0 = every client, every round
    AggregationMode mode{};
    TrainConfig train{};
    double holdout_fraction = 0.2;
    int threads = 1;

    void validate() const {
        population.validate();
        if (days < 1) throw Error(ErrorCode::spec_error, "days must be at least 1");
        if (rounds < 1) throw Error(ErrorCode::spec_error, "rounds must be at least 1");
        if (clients_per_round < 0) throw Error(ErrorCode::spec_error, "clients_per_round must not be negative");
        if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0))
            throw Error(ErrorCode::spec_error, "holdout fraction must be in [0, 1)");
        if (train.epochs < 0) throw Error(ErrorCode::spec_error, "epochs must not be negative");
        if (!(train.learning_rate > 0.0)) throw Error(ErrorCode::spec_error, "learning rate must be positive");
        if (threads < 1) throw Error(ErrorCode::spec_error, "threads must be at least 1");
    }
};

struct RoundMetrics {
    int round = 0;
    std::vector<std::string> participants;
    std::vector<double> aggregation_weights;
    double train_loss = 0.0;        // sample-weighted, all clients, after aggregation
    double heldout_accuracy = 0.0;  // pooled over all clients
    double heldout_loss = 0.0;
    std::vector<double> client_heldout_losses;
    FairnessStats fairness{};
};

inline void to_json(nlohmann::json& j, const RoundMetrics& m) {
    j = nlohmann::json{{"round", m.round},
                       {"participants", m.participants},
                       {"aggregation_weights", m.aggregation_weights},
                       {"train_loss", m.train_loss},
                       {"heldout_accuracy", m.heldout_accuracy},
                       {"heldout_loss", m.heldout_loss},
                       {"client_heldout_losses", m.client_heldout_losses},
                       {"loss_variance", m.fairness.variance},
                       {"loss_max", m.fairness.max},
                       {"loss_worst_decile", m.fairness.worst_decile_mean}};
}

struct History {
    std::string mode;
    double baseline_accuracy = 0.0;  // majority class of the pooled training labels
    int baseline_label = 1;
    std::vector<RoundMetrics> rounds;
    ModelParams final_params;

    const RoundMetrics& last() const { return rounds.back(); }
};

/// Coordinator: samples clients, collects their updates, aggregates.
/// Only ClientUpdate values and evaluation summaries reach it.
inline History run_federation(const std::vector<Client>& clients, const FedConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    if (clients.empty()) throw Error(ErrorCode::spec_error, "federation needs at least one client");

    History h;
    h.mode = cfg.mode.name();

    std::size_t train_n = 0, train_pos = 0;
    for (const auto& c : clients) {
        const auto e = c.evaluate_train(ModelParams{});
        train_n += e.n;
        train_pos += e.positives;
    }
    h.baseline_label = 2 * train_pos >= train_n ? 1 : 0;
    {
        std::size_t n = 0, hit = 0;
        for (const auto& c : clients) {
            const auto e = c.evaluate_heldout(ModelParams{});
            n += e.n;
            hit += h.baseline_label ? e.positives : e.n - e.positives;
        }
        h.baseline_accuracy = n ? double(hit) / double(n) : 0.0;
    }

    const std::size_t per_round =
        cfg.clients_per_round == 0 ? clients.size()
                                   : std::min(clients.size(), static_cast<std::size_t>(cfg.clients_per_round));
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> order(clients.size());
    ModelParams global;

    for (int r = 0; r < cfg.rounds; ++r) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        if (per_round < clients.size()) std::shuffle(order.begin(), order.end(), rng);
        std::vector<std::size_t> chosen(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(per_round));
        std::sort(chosen.begin(), chosen.end());

        std::vector<std::optional<ClientUpdate>> results(chosen.size());
        auto work = [&](std::size_t begin, std::size_t step) {
            for (std::size_t i = begin; i < chosen.size(); i += step) results[i] = clients[chosen[i]].train(global, cfg.train);
        };
        const std::size_t nthreads = std::min<std::size_t>(static_cast<std::size_t>(cfg.threads), chosen.size());
        if (nthreads <= 1) {
            work(0, 1);
        } else {
            std::vector<std::jthread> pool;
            for (std::size_t t = 0; t < nthreads; ++t) pool.emplace_back(work, t, nthreads);
        }

        std::vector<ClientUpdate> updates;
        for (auto& res : results) {
            if (res) updates.push_back(std::move(*res));
        }
        AggregateResult agg = aggregate(global, updates, cfg.mode);
        global = std::move(agg.params);

        RoundMetrics m;
        m.round = r + 1;
        for (const auto& u : updates) m.participants.push_back(u.client_id);
        m.aggregation_weights = std::move(agg.weights);

        double loss_sum = 0.0, heldout_loss_sum = 0.0;
        std::size_t n_train = 0, n_test = 0, hit = 0;
        for (const auto& c : clients) {
            const auto tr = c.evaluate_train(global);
            loss_sum += tr.loss * double(tr.n);
            n_train += tr.n;
            const auto te = c.evaluate_heldout(global);
            heldout_loss_sum += te.loss * double(te.n);
            n_test += te.n;
            hit += te.correct;
            if (te.n > 0) m.client_heldout_losses.push_back(te.loss);
        }
        m.train_loss = n_train ? loss_sum / double(n_train) : 0.0;
        m.heldout_loss = n_test ? heldout_loss_sum / double(n_test) : 0.0;
        m.heldout_accuracy = n_test ? double(hit) / double(n_test) : 0.0;
        if (!m.client_heldout_losses.empty()) m.fairness = evaluate_fairness(m.client_heldout_losses);
        h.rounds.push_back(std::move(m));
    }
    h.final_params = global;
    return h;
}

/// Generates the population and runs the experiment.
inline History run_federation(const FedConfig& cfg) {
    cfg.validate();
    auto data = generate_population(cfg.population, cfg.days);
    std::vector<Client> clients;
    clients.reserve(data.size());
    for (auto& ds : data) clients.emplace_back(std::move(ds), cfg.holdout_fraction);
    return run_federation(clients, cfg, cfg.population.seed ^ 0x9E3779B97F4A7C15ull);
}

} // namespace pillcase::fed
