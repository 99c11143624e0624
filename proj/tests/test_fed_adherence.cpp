#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "pillcase/fed_adherence.hpp"

using namespace pillcase;
using namespace pillcase::fed;

namespace {

/// Textbook weighted cross-entropy, written without the library's helpers.
double naive_loss(const ModelParams& p, const std::vector<Example>& data, double w_neg, double w_pos) {
    double sum = 0.0;
    for (const auto& e : data) {
        double z = p.weights.back();
        for (std::size_t j = 0; j < feature_dim; ++j) z += p.weights[j] * e.x[j];
        const double prob = 1.0 / (1.0 + std::exp(-z));
        sum += e.label ? -w_pos * std::log(prob) : -w_neg * std::log(1.0 - prob);
    }
    return sum / double(data.size());
}

std::vector<Example> random_examples(std::mt19937_64& rng, std::size_t n) {
    std::uniform_int_distribution<int> dow(0, 6), slot(0, 2), bit(0, 1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Example> out(n);
    for (auto& e : out) {
        e.x = make_features(dow(rng), slot(rng), u(rng), u(rng));
        e.label = bit(rng);
    }
    return out;
}

ModelParams random_params(std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> g(0.0, scale);
    ModelParams p;
    for (double& w : p.weights) w = g(rng);
    return p;
}

std::vector<ClientUpdate> random_updates(std::mt19937_64& rng, std::size_t k) {
    std::uniform_int_distribution<std::size_t> n(1, 500);
    std::uniform_real_distribution<double> loss(0.05, 2.0);
    std::vector<ClientUpdate> out;
    for (std::size_t i = 0; i < k; ++i) {
        out.push_back({"c" + std::to_string(i), random_params(rng, 0.3), n(rng), loss(rng)});
    }
    return out;
}

} // namespace

TEST(Features, Layout) {
    const auto x = make_features(5, 1, 0.75, 0.5);
    EXPECT_EQ(x[5], 1.0);
    EXPECT_EQ(std::accumulate(x.begin(), x.begin() + 7, 0.0), 1.0);
    EXPECT_EQ(x[slot_feature], 1.0);
    EXPECT_EQ(x[trailing_rate_feature], 0.75);
    EXPECT_EQ(x[pills_fraction_feature], 0.5);
    EXPECT_EQ(param_dim, feature_dim + 1);
}

TEST(Loss, MatchesNaiveCrossEntropy) {
    std::mt19937_64 rng(1);
    const auto data = random_examples(rng, 200);
    for (int i = 0; i < 10; ++i) {
        const auto p = random_params(rng);
        EXPECT_NEAR(logistic_loss(p, data), naive_loss(p, data, 1.0, 1.0), 1e-10);
        const auto cw = inverse_frequency_weights(data);
        EXPECT_NEAR(logistic_loss(p, data, cw), naive_loss(p, data, cw.negative, cw.positive), 1e-10);
    }
}

TEST(Loss, StableAtExtremeLogits) {
    ModelParams p;
    p.weights.back() = 800.0;
    std::vector<Example> data{{make_features(0, 0, 0, 0), 0}, {make_features(0, 0, 0, 0), 1}};
    const double l = logistic_loss(p, data);
    EXPECT_TRUE(std::isfinite(l));
    EXPECT_NEAR(l, 400.0, 1e-9);
    const auto g = logistic_gradient(p, data);
    for (double v : g) EXPECT_TRUE(std::isfinite(v));
}

TEST(Gradient, FiniteDifferenceAgainstNaiveLoss) {
    std::mt19937_64 rng(2);
    const auto data = random_examples(rng, 150);
    const auto cw = inverse_frequency_weights(data);
    const double h = 1e-6;
    for (int point = 0; point < 10; ++point) {
        const auto p = random_params(rng);
        const auto g = logistic_gradient(p, data, cw);
        for (std::size_t j = 0; j < param_dim; ++j) {
            ModelParams up = p, down = p;
            up.weights[j] += h;
            down.weights[j] -= h;
            const double fd =
                (naive_loss(up, data, cw.negative, cw.positive) - naive_loss(down, data, cw.negative, cw.positive)) /
                (2 * h);
            EXPECT_NEAR(g[j], fd, 1e-5) << "point " << point << " coord " << j;
        }
    }
}

TEST(ClassWeights, InverseFrequency) {
    std::vector<Example> data(10);
    for (int i = 0; i < 8; ++i) data[i].label = 1;
    const auto cw = inverse_frequency_weights(data);
    EXPECT_DOUBLE_EQ(cw.positive, 10.0 / 16.0);
    EXPECT_DOUBLE_EQ(cw.negative, 10.0 / 4.0);
    // equal total mass per class
    EXPECT_DOUBLE_EQ(8 * cw.positive, 2 * cw.negative);
    std::vector<Example> ones(4);
    for (auto& e : ones) e.label = 1;
    EXPECT_EQ(inverse_frequency_weights(ones).positive, 1.0);
}

TEST(LocalTrain, EmptyDataAbstains) {
    ClientDataset empty{"x", {}};
    EXPECT_FALSE(local_train(ModelParams{}, empty, TrainConfig{}).has_value());
}

TEST(LocalTrain, DecreasesLocalLoss) {
    std::mt19937_64 rng(3);
    ClientDataset ds{"c", random_examples(rng, 300)};
    const auto cw = inverse_frequency_weights(ds.examples);
    auto u = local_train(ModelParams{}, ds, 20, 0.3, cw);
    ASSERT_TRUE(u);
    ModelParams after;
    for (std::size_t j = 0; j < param_dim; ++j) after.weights[j] = u->update.weights[j];
    EXPECT_LT(logistic_loss(after, ds.examples, cw), u->local_loss);
    EXPECT_NEAR(u->local_loss, std::log(2.0), 1e-12);
    EXPECT_EQ(u->n_samples, 300u);
}

TEST(LocalTrain, MatchesHandRolledGradientDescent) {
    std::mt19937_64 rng(13);
    ClientDataset ds{"c", random_examples(rng, 50)};
    const auto start = random_params(rng, 0.2);
    ModelParams p = start;
    const double h = 1e-6, lr = 0.4;
    for (int e = 0; e < 3; ++e) {
        ModelParams next = p;
        for (std::size_t j = 0; j < param_dim; ++j) {
            ModelParams up = p, down = p;
            up.weights[j] += h;
            down.weights[j] -= h;
            next.weights[j] -= lr * (naive_loss(up, ds.examples, 1, 1) - naive_loss(down, ds.examples, 1, 1)) / (2 * h);
        }
        p = next;
    }
    const auto u = local_train(start, ds, 3, lr, ClassWeights{});
    for (std::size_t j = 0; j < param_dim; ++j) EXPECT_NEAR(start.weights[j] + u->update.weights[j], p.weights[j], 1e-6);
}

TEST(Aggregation, WeightsSumToOneAndArePositive) {
    std::mt19937_64 rng(4);
    for (int r = 0; r < 100; ++r) {
        const auto updates = random_updates(rng, 1 + r % 9);
        for (const auto mode : {AggregationMode::plain(), AggregationMode::fair(0.5), AggregationMode::fair(2)}) {
            const auto w = aggregation_weights(updates, mode);
            EXPECT_NEAR(std::accumulate(w.begin(), w.end(), 0.0), 1.0, 1e-12);
            for (double v : w) EXPECT_GT(v, 0.0);
        }
    }
}

TEST(Aggregation, FairZeroIsBitIdenticalToPlain) {
    std::mt19937_64 rng(5);
    for (int r = 0; r < 100; ++r) {
        const auto updates = random_updates(rng, 1 + r % 12);
        const auto global = random_params(rng);
        const auto a = aggregate(global, updates, AggregationMode::plain());
        const auto b = aggregate(global, updates, AggregationMode::fair(0.0));
        EXPECT_EQ(a.params.weights, b.params.weights);
        EXPECT_EQ(a.weights, b.weights);
    }
}

TEST(Aggregation, PlainIsSampleWeightedMean) {
    std::vector<ClientUpdate> updates{{"a", {}, 100, 0.5}, {"b", {}, 300, 1.0}};
    updates[0].update.weights.assign(param_dim, 1.0);
    updates[1].update.weights.assign(param_dim, 5.0);
    const auto r = aggregate(ModelParams{}, updates, AggregationMode::plain());
    for (double w : r.params.weights) EXPECT_DOUBLE_EQ(w, 4.0);
    // fair(1): weights 100*0.5 and 300*1.0 -> 1/7 and 6/7
    const auto f = aggregate(ModelParams{}, updates, AggregationMode::fair(1.0));
    EXPECT_NEAR(f.weights[0], 1.0 / 7, 1e-12);
    for (double w : f.params.weights) EXPECT_NEAR(w, 1.0 / 7 + 30.0 / 7, 1e-12);
}

TEST(Aggregation, PermutationInvariant) {
    std::mt19937_64 rng(6);
    for (int r = 0; r < 50; ++r) {
        auto updates = random_updates(rng, 7);
        const auto global = random_params(rng);
        const auto a = aggregate(global, updates, AggregationMode::fair(2));
        std::shuffle(updates.begin(), updates.end(), rng);
        const auto b = aggregate(global, updates, AggregationMode::fair(2));
        for (std::size_t j = 0; j < param_dim; ++j) EXPECT_NEAR(a.params.weights[j], b.params.weights[j], 1e-12);
    }
}

TEST(Aggregation, FairUpweightsHighLoss) {
    std::vector<ClientUpdate> u{{"lo", {}, 100, 0.2}, {"hi", {}, 100, 0.8}};
    const auto plain = aggregation_weights(u, AggregationMode::plain());
    const auto fair = aggregation_weights(u, AggregationMode::fair(2));
    EXPECT_DOUBLE_EQ(plain[1], 0.5);
    EXPECT_GT(fair[1], plain[1]);
    EXPECT_NEAR(fair[1], 16.0 / 17.0, 1e-12);
}

TEST(Aggregation, NoUpdatesLeavesParamsUnchanged) {
    std::mt19937_64 rng(7);
    const auto g = random_params(rng);
    EXPECT_EQ(aggregate(g, {}, AggregationMode::fair(1)).params, g);
    EXPECT_THROW(AggregationMode::fair(-1.0), Error);
}

TEST(Fairness, AgainstBruteForce) {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.0, 3.0);
    for (int n = 1; n <= 40; ++n) {
        std::vector<double> l(static_cast<std::size_t>(n));
        for (double& v : l) v = u(rng);
        double mean = 0;
        for (double v : l) mean += v;
        mean /= n;
        double var = 0;
        for (double v : l) var += (v - mean) * (v - mean);
        var /= n;
        auto sorted = l;
        std::sort(sorted.begin(), sorted.end());
        const int k = (n + 9) / 10;
        double worst = 0;
        for (int i = 0; i < k; ++i) worst += sorted[sorted.size() - 1 - i];
        worst /= k;
        const auto s = evaluate_fairness(l);
        EXPECT_NEAR(s.variance, var, 1e-12);
        EXPECT_EQ(s.max, sorted.back());
        EXPECT_NEAR(s.worst_decile_mean, worst, 1e-12);
        EXPECT_LE(s.worst_decile_mean, s.max);
        EXPECT_GE(s.worst_decile_mean, mean - 1e-12);
    }
    EXPECT_THROW(evaluate_fairness(std::vector<double>{}), Error);
    const auto flat = evaluate_fairness(std::vector<double>{0.3, 0.3, 0.3});
    EXPECT_EQ(flat.variance, 0.0);
}

TEST(Population, ShapesAndDeterminism) {
    PopulationSpec spec;
    spec.n_clients = 5;
    const auto a = generate_population(spec, 28);
    const auto b = generate_population(spec, 28);
    EXPECT_EQ(a, b);
    ASSERT_EQ(a.size(), 5u);
    for (const auto& c : a) {
        EXPECT_EQ(c.examples.size(), 56u);
        for (const auto& e : c.examples) {
            EXPECT_GE(e.x[trailing_rate_feature], 0.0);
            EXPECT_LE(e.x[trailing_rate_feature], 1.0);
            EXPECT_GT(e.x[pills_fraction_feature], 0.0);
            EXPECT_LE(e.x[pills_fraction_feature], 1.0);
        }
    }
    spec.seed = 8;
    EXPECT_NE(generate_population(spec, 28), a);
    // A client's log does not depend on how many other clients exist.
    spec.seed = 7;
    spec.n_clients = 9;
    EXPECT_EQ(generate_population(spec, 28)[3], a[3]);
}

TEST(Population, Validation) {
    PopulationSpec spec;
    spec.base_adherence = 1.5;
    EXPECT_THROW(generate_population(spec, 10), Error);
    spec = {};
    spec.weekend_dip = -0.1;
    EXPECT_THROW(generate_population(spec, 10), Error);
    spec = {};
    EXPECT_THROW(generate_population(spec, 0), Error);
    spec.n_clients = 0;
    try {
        generate_population(spec, 10);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::spec_error);
    }
}

TEST(Population, WeekendRateMonteCarlo) {
    PopulationSpec spec;
    spec.n_clients = 50;
    const auto pop = generate_population(spec, 364);
    std::size_t wk_n = 0, wk_ok = 0, wd_n = 0, wd_ok = 0;
    for (const auto& c : pop) {
        for (const auto& e : c.examples) {
            const bool weekend = e.x[5] == 1.0 || e.x[6] == 1.0;
            (weekend ? wk_n : wd_n) += 1;
            (weekend ? wk_ok : wd_ok) += e.label;
        }
    }
    EXPECT_NEAR(double(wk_ok) / wk_n, 0.9 * 0.6, 0.03);
    EXPECT_NEAR(double(wd_ok) / wd_n, 0.9, 0.03);
}

TEST(Population, NoDipMeansNoWeekendEffect) {
    PopulationSpec spec;
    spec.n_clients = 50;
    spec.weekend_dip = 1.0;
    const auto pop = generate_population(spec, 364);
    double wk_n = 0, wk_ok = 0, wd_n = 0, wd_ok = 0;
    for (const auto& c : pop) {
        for (const auto& e : c.examples) {
            const bool weekend = e.x[5] == 1.0 || e.x[6] == 1.0;
            (weekend ? wk_n : wd_n) += 1;
            (weekend ? wk_ok : wd_ok) += e.label;
        }
    }
    const double p1 = wk_ok / wk_n, p2 = wd_ok / wd_n, p = (wk_ok + wd_ok) / (wk_n + wd_n);
    const double z = (p1 - p2) / std::sqrt(p * (1 - p) * (1 / wk_n + 1 / wd_n));
    EXPECT_LT(std::abs(z), 3.0);
}

TEST(Population, TrailingRateMatchesLabels) {
    PopulationSpec spec;
    spec.n_clients = 2;
    spec.slots_per_day = 3;
    const auto pop = generate_population(spec, 30);
    for (const auto& c : pop) {
        for (std::size_t i = 0; i < c.examples.size(); ++i) {
            const std::size_t lo = i >= 21 ? i - 21 : 0;
            double expected = 1.0;
            if (i > 0) {
                double s = 0;
                for (std::size_t k = lo; k < i; ++k) s += c.examples[k].label;
                expected = s / double(i - lo);
            }
            EXPECT_NEAR(c.examples[i].x[trailing_rate_feature], expected, 1e-12) << i;
        }
    }
}

TEST(Federation, SingleClientEqualsCentralizedTraining) {
    PopulationSpec spec;
    spec.n_clients = 1;
    auto data = generate_population(spec, 60);
    FedConfig cfg;
    cfg.population = spec;
    cfg.days = 60;
    cfg.rounds = 4;
    cfg.train.epochs = 3;
    cfg.holdout_fraction = 0.2;
    std::vector<Client> clients{Client(data[0], cfg.holdout_fraction)};
    const auto h = run_federation(clients, cfg, 1);

    const std::size_t n = data[0].examples.size();
    const std::size_t test_n = static_cast<std::size_t>(std::floor(n * 0.2));
    ClientDataset train{"c", {data[0].examples.begin(), data[0].examples.end() - static_cast<std::ptrdiff_t>(test_n)}};
    const auto cw = inverse_frequency_weights(train.examples);
    ModelParams p;
    for (int r = 0; r < 12; ++r) {
        const auto g = logistic_gradient(p, train.examples, cw);
        for (std::size_t j = 0; j < param_dim; ++j) p.weights[j] -= cfg.train.learning_rate * g[j];
    }
    for (std::size_t j = 0; j < param_dim; ++j) EXPECT_NEAR(h.final_params.weights[j], p.weights[j], 1e-9);
}

TEST(Federation, DeterministicAndThreadIndependent) {
    FedConfig cfg;
    cfg.population.n_clients = 8;
    cfg.days = 56;
    cfg.rounds = 5;
    cfg.clients_per_round = 4;
    const auto a = run_federation(cfg);
    const auto b = run_federation(cfg);
    cfg.threads = 4;
    const auto c = run_federation(cfg);
    EXPECT_EQ(a.final_params, b.final_params);
    EXPECT_EQ(a.final_params, c.final_params);
    ASSERT_EQ(a.rounds.size(), 5u);
    for (const auto& r : a.rounds) EXPECT_EQ(r.participants.size(), 4u);
    EXPECT_NE(a.rounds[0].participants, a.rounds[1].participants);
}

TEST(Federation, ClientsWithNoTrainingDataAbstain) {
    PopulationSpec spec;
    spec.n_clients = 3;
    auto data = generate_population(spec, 30);
    data[1].examples.clear();
    FedConfig cfg;
    cfg.population = spec;
    cfg.rounds = 2;
    std::vector<Client> clients;
    for (auto& d : data) clients.emplace_back(d, 0.2);
    const auto h = run_federation(clients, cfg, 3);
    for (const auto& r : h.rounds) {
        EXPECT_EQ(r.participants.size(), 2u);
        EXPECT_EQ(std::count(r.participants.begin(), r.participants.end(), "client-1"), 0);
    }
}

TEST(Federation, ConfigValidation) {
    FedConfig cfg;
    cfg.rounds = 0;
    EXPECT_THROW(run_federation(cfg), Error);
    cfg = {};
    cfg.train.learning_rate = 0.0;
    EXPECT_THROW(run_federation(cfg), Error);
    cfg = {};
    cfg.holdout_fraction = 1.0;
    EXPECT_THROW(run_federation(cfg), Error);
}

TEST(Federation, TrainingReducesLoss) {
    FedConfig cfg;
    cfg.population.n_clients = 10;
    cfg.population.imbalance_skew = 0.6;
    cfg.days = 140;
    cfg.rounds = 30;
    const auto h = run_federation(cfg);
    EXPECT_LT(h.last().train_loss, h.rounds.front().train_loss);
    EXPECT_LT(h.last().train_loss, std::log(2.0));
    EXPECT_TRUE(h.final_params.finite());
}

TEST(Federation, BeatsMajorityBaselineOnSkewedPopulation) {
    FedConfig cfg;
    cfg.population.n_clients = 20;
    cfg.population.imbalance_skew = 0.6;
    cfg.days = 365;
    cfg.rounds = 60;
    const auto h = run_federation(cfg);
    EXPECT_GE(h.last().heldout_accuracy, h.baseline_accuracy + 0.05)
        << "accuracy " << h.last().heldout_accuracy << " baseline " << h.baseline_accuracy;
}

TEST(Federation, FairReducesWorstClientLoss) {
    FedConfig cfg;
    cfg.population.n_clients = 20;
    cfg.population.imbalance_skew = 0.6;
    cfg.days = 365;
    cfg.rounds = 60;
    const auto plain = run_federation(cfg);
    cfg.mode = AggregationMode::fair(2.0);
    const auto fair = run_federation(cfg);
    EXPECT_LE(fair.last().fairness.max, plain.last().fairness.max);
    EXPECT_EQ(fair.mode, "fair(2.0)");
}

TEST(Privacy, ClientUpdateCarriesNoRawData) {
    PopulationSpec spec;
    spec.n_clients = 1;
    const auto data = generate_population(spec, 30);
    const auto u = local_train(ModelParams{}, data[0], TrainConfig{});
    ASSERT_TRUE(u);
    const nlohmann::json j = *u;
    std::set<std::string> keys;
    for (const auto& [k, _] : j.items()) keys.insert(k);
    EXPECT_EQ(keys, (std::set<std::string>{"client_id", "update", "n_samples", "local_loss"}));
    EXPECT_EQ(j["update"].size(), param_dim);
    static_assert(sizeof(ClientUpdate) <= sizeof(std::string) + sizeof(ModelParams) + 2 * sizeof(double));
}
