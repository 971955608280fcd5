#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "doctest.h"
#include "fogids/ensemble.hpp"
#include "testutil.hpp"

using namespace fogids;

TEST_SUITE_BEGIN("ensemble");

namespace {

PredictionMatrix matrix_of(std::vector<std::vector<double>> rows) {
    PredictionMatrix p;
    p.n_learners = rows.size();
    p.n_classes = rows.front().size();
    for (const auto& r : rows) p.d.insert(p.d.end(), r.begin(), r.end());
    return p;
}

// Element-wise reference: recompute every rule with naive loops and a full
// sort for the median. Mirrors the floor-and-renormalize product handling.
std::vector<double> combine_oracle(FusionRule rule, const PredictionMatrix& p,
                                   std::span<const double> w) {
    const std::size_t N = p.n_learners, K = p.n_classes;
    std::vector<double> y(K, 0.0);
    for (std::size_t c = 0; c < K; ++c) {
        std::vector<double> col;
        for (std::size_t j = 0; j < N; ++j) col.push_back(p.d[j * K + c]);
        switch (rule) {
            case FusionRule::sum: {
                double s = 0.0;
                for (double v : col) s += v;
                y[c] = s / static_cast<double>(N);
                break;
            }
            case FusionRule::weighted_sum: {
                double s = 0.0;
                for (std::size_t j = 0; j < N; ++j) s += w[j] * col[j];
                y[c] = s;
                break;
            }
            case FusionRule::median: {
                std::sort(col.begin(), col.end());
                y[c] = N % 2 ? col[N / 2] : 0.5 * (col[N / 2 - 1] + col[N / 2]);
                break;
            }
            case FusionRule::minimum:
                y[c] = *std::min_element(col.begin(), col.end());
                break;
            case FusionRule::maximum:
                y[c] = *std::max_element(col.begin(), col.end());
                break;
            case FusionRule::product: {
                double prod = 1.0;
                for (std::size_t j = 0; j < N; ++j) {
                    double rowsum = 0.0;
                    for (std::size_t cc = 0; cc < K; ++cc)
                        rowsum += std::max(p.d[j * K + cc], 1e-6);
                    prod *= std::max(col[j], 1e-6) / rowsum;
                }
                y[c] = prod;
                break;
            }
            case FusionRule::majority_vote: {
                double votes = 0.0;
                for (std::size_t j = 0; j < N; ++j) {
                    std::size_t best = 0;
                    for (std::size_t cc = 1; cc < K; ++cc)
                        if (p.d[j * K + cc] > p.d[j * K + best]) best = cc;
                    if (best == c) votes += 1.0;
                }
                y[c] = votes / static_cast<double>(N);
                break;
            }
        }
    }
    return y;
}

PredictionMatrix random_prediction_matrix(Rng& rng, std::size_t max_n = 7, std::size_t max_k = 5) {
    PredictionMatrix p;
    p.n_learners = 1 + rng.below(max_n);
    p.n_classes = 2 + rng.below(max_k - 1);
    p.d.resize(p.n_learners * p.n_classes);
    for (std::size_t j = 0; j < p.n_learners; ++j) {
        auto row = p.learner(j);
        double sum = 0.0;
        for (auto& v : row) {
            v = rng.unit();
            // occasional hard zeros, as leaf histograms and vote fractions produce
            if (rng.below(8) == 0) v = 0.0;
            sum += v;
        }
        if (sum == 0.0) {
            row[0] = 1.0;
            sum = 1.0;
        }
        for (auto& v : row) v /= sum;
    }
    return p;
}

std::string serialize_to_string(const Model& m) {
    std::ostringstream os(std::ios::binary);
    save_model(os, m);
    return os.str();
}

double accuracy_on(const Model& m, const FeatureMatrix& data) {
    const auto predicted = predict_labels(m, data);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < data.rows; ++i)
        if (predicted[i] == data.labels[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(data.rows);
}

}  // namespace

TEST_CASE("combine: worked examples") {
    const auto sum = combine(FusionRule::sum, matrix_of({{0.2, 0.8}, {0.6, 0.4}}));
    CHECK(sum[0] == doctest::Approx(0.4).epsilon(1e-15));
    CHECK(sum[1] == doctest::Approx(0.6).epsilon(1e-15));

    const std::vector<double> w = {1.0, 0.0};
    const auto wsum = combine(FusionRule::weighted_sum, matrix_of({{0.2, 0.8}, {0.6, 0.4}}), w);
    CHECK(wsum[0] == 0.2);
    CHECK(wsum[1] == 0.8);

    const auto prod = combine(FusionRule::product, matrix_of({{0.5, 0.5}, {0.5, 0.5}}));
    CHECK(prod[0] == doctest::Approx(0.25).epsilon(1e-9));
    CHECK(prod[1] == doctest::Approx(0.25).epsilon(1e-9));

    const auto med =
        combine(FusionRule::median, matrix_of({{0.1, 0.9}, {0.5, 0.5}, {0.6, 0.4}}));
    CHECK(med[0] == 0.5);
    CHECK(med[1] == 0.5);

    const auto mn = combine(FusionRule::minimum, matrix_of({{0.1, 0.9}, {0.5, 0.5}}));
    CHECK(mn[0] == 0.1);
    CHECK(mn[1] == 0.5);

    const auto mx = combine(FusionRule::maximum, matrix_of({{0.1, 0.9}, {0.5, 0.5}}));
    CHECK(mx[0] == 0.5);
    CHECK(mx[1] == 0.9);
}

TEST_CASE("combine: weight validation") {
    const auto p = matrix_of({{0.2, 0.8}, {0.6, 0.4}});
    CHECK_THROWS(combine(FusionRule::weighted_sum, p, std::vector<double>{1.0}));
    CHECK_THROWS(combine(FusionRule::weighted_sum, p, std::vector<double>{0.8, 0.8}));
    CHECK_THROWS(combine(FusionRule::weighted_sum, p, std::vector<double>{1.5, -0.5}));
}

TEST_CASE("combine: all rules match the element-wise oracle on random matrices") {
    Rng rng(2024);
    for (int i = 0; i < 300; ++i) {
        const auto p = random_prediction_matrix(rng);
        std::vector<double> w(p.n_learners);
        double wsum = 0.0;
        for (auto& v : w) {
            v = rng.unit();
            wsum += v;
        }
        for (auto& v : w) v /= wsum;

        for (FusionRule rule : kAllFusionRules) {
            const auto got = combine(rule, p, rule == FusionRule::weighted_sum
                                                  ? std::span<const double>(w)
                                                  : std::span<const double>{});
            const auto expect =
                combine_oracle(rule, p, rule == FusionRule::weighted_sum
                                            ? std::span<const double>(w)
                                            : std::span<const double>{});
            REQUIRE(got.size() == expect.size());
            for (std::size_t c = 0; c < got.size(); ++c)
                CHECK(std::abs(got[c] - expect[c]) < 1e-12);
        }
    }
}

TEST_CASE("combine: sum, weighted-sum and median stay inside the class envelope") {
    Rng rng(555);
    for (int i = 0; i < 200; ++i) {
        const auto p = random_prediction_matrix(rng);
        std::vector<double> w(p.n_learners, 1.0 / static_cast<double>(p.n_learners));
        for (FusionRule rule : {FusionRule::sum, FusionRule::weighted_sum, FusionRule::median}) {
            const auto y = combine(rule, p, rule == FusionRule::weighted_sum
                                                ? std::span<const double>(w)
                                                : std::span<const double>{});
            for (std::size_t c = 0; c < p.n_classes; ++c) {
                double lo = 1e300, hi = -1e300;
                for (std::size_t j = 0; j < p.n_learners; ++j) {
                    lo = std::min(lo, p.d[j * p.n_classes + c]);
                    hi = std::max(hi, p.d[j * p.n_classes + c]);
                }
                CHECK(y[c] >= lo - 1e-12);
                CHECK(y[c] <= hi + 1e-12);
            }
        }
    }
}

TEST_CASE("combine: uniform weighted sum equals sum exactly") {
    Rng rng(77);
    for (int i = 0; i < 50; ++i) {
        const auto p = random_prediction_matrix(rng);
        const std::vector<double> w(p.n_learners, 1.0 / static_cast<double>(p.n_learners));
        const auto a = combine(FusionRule::sum, p);
        const auto b = combine(FusionRule::weighted_sum, p, w);
        for (std::size_t c = 0; c < a.size(); ++c)
            CHECK(a[c] == doctest::Approx(b[c]).epsilon(1e-12));
    }
}

TEST_CASE("decide: argmax, ties, and degeneracy") {
    CHECK(decide(std::vector<double>{0.4, 0.6}).class_id == 1);
    const auto tie = decide(std::vector<double>{0.5, 0.5});
    CHECK(tie.class_id == 0);
    CHECK(tie.degenerate);
    const auto zeros = decide(std::vector<double>{0.0, 0.0, 0.0});
    CHECK(zeros.class_id == 0);
    CHECK(zeros.degenerate);
    CHECK_THROWS(decide(std::vector<double>{}));
}

TEST_CASE("decide: invariant under positive rescaling") {
    Rng rng(31);
    for (int i = 0; i < 200; ++i) {
        std::vector<double> y(2 + rng.below(5));
        for (auto& v : y) v = rng.unit();
        const double scale = 0.1 + 10.0 * rng.unit();
        std::vector<double> scaled = y;
        for (auto& v : scaled) v *= scale;
        CHECK(decide(y).class_id == decide(scaled).class_id);
    }
}

TEST_CASE("bootstrap_sample: determinism, size, and distinct fraction") {
    Rng a(9), b(9), c(10);
    const auto s1 = bootstrap_sample(1000, a);
    const auto s2 = bootstrap_sample(1000, b);
    const auto s3 = bootstrap_sample(1000, c);
    CHECK(s1 == s2);
    CHECK(s1 != s3);
    CHECK(s1.size() == 1000);

    Rng one(4);
    const auto single = bootstrap_sample(1, one);
    CHECK(single.size() == 1);
    CHECK(single[0] == 0);

    // monte-carlo estimate of the expected distinct fraction 1 - 1/e
    Rng mc(123);
    double total = 0.0;
    const int reps = 100;
    const std::size_t n = 10000;
    for (int r = 0; r < reps; ++r) {
        const auto s = bootstrap_sample(n, mc);
        const std::set<std::size_t> distinct(s.begin(), s.end());
        total += static_cast<double>(distinct.size()) / static_cast<double>(n);
    }
    const double mean = total / reps;
    CHECK(std::abs(mean - (1.0 - 1.0 / std::exp(1.0))) < 0.02);
}

TEST_CASE("bagging: one member without bootstrap reduces to a single tree") {
    auto data = testutil::random_consistent(80, 4, 2, 3);
    const auto single = train_tree(data, TreeParams{});
    const auto bag = train_bagging(data, BaggingParams{{}, 1, false}, 42);
    for (std::size_t i = 0; i < data.rows; ++i)
        CHECK(bag->predict(data.row(i)).scores == single->predict(data.row(i)).scores);
}

TEST_CASE("bagging: perfect members keep the 1-D toy set perfect") {
    auto data = testutil::make_matrix(1, {0.0, 1.0, 2.0, 3.0}, {0, 0, 1, 1}, {"A", "B"});
    const auto bag = train_bagging(data, BaggingParams{{}, 15, true}, 7);
    CHECK(accuracy_on(*bag, data) == 1.0);
}

TEST_CASE("bagging: different seeds give different members, same seed identical") {
    auto data = testutil::random_consistent(150, 6, 2, 88);
    const auto a = train_bagging(data, BaggingParams{{}, 5, true}, 1);
    const auto b = train_bagging(data, BaggingParams{{}, 5, true}, 1);
    const auto c = train_bagging(data, BaggingParams{{}, 5, true}, 2);
    CHECK(serialize_to_string(*a) == serialize_to_string(*b));
    CHECK(serialize_to_string(*a) != serialize_to_string(*c));
}

TEST_CASE("random forest: m = feature count matches bagging on the same seed") {
    auto data = testutil::random_consistent(100, 5, 2, 12);
    const auto rf = train_random_forest(data, RandomForestParams{{}, 7, 5}, 99);
    const auto bag = train_bagging(data, BaggingParams{{}, 7, true}, 99);
    REQUIRE(rf->members().size() == bag->members().size());
    for (std::size_t j = 0; j < rf->members().size(); ++j)
        CHECK(serialize_to_string(*rf->members()[j]) == serialize_to_string(*bag->members()[j]));
    for (std::size_t i = 0; i < data.rows; ++i)
        CHECK(rf->predict(data.row(i)).scores == bag->predict(data.row(i)).scores);
}

TEST_CASE("random forest: m=1 still trains working trees") {
    auto data = testutil::random_consistent(60, 5, 2, 13);
    const auto rf = train_random_forest(data, RandomForestParams{{}, 5, 1}, 5);
    CHECK(rf->members().size() == 5);
    CHECK(accuracy_on(*rf, data) > 0.5);
    CHECK_THROWS_AS(train_random_forest(data, RandomForestParams{{}, 3, 9}, 5), TrainingError);
}

TEST_CASE("random forest: beats or ties a single tree out of sample on blobs") {
    auto train = testutil::two_blobs(60, 3.0, 1.4, 21);
    auto test = testutil::two_blobs(60, 3.0, 1.4, 22);
    TreeParams shallow{.max_depth = 3};
    const auto tree = train_tree(train, shallow);
    const auto rf = train_random_forest(train, RandomForestParams{shallow, 100, -1}, 3);
    CHECK(accuracy_on(*rf, test) >= accuracy_on(*tree, test) - 1e-12);
}

TEST_CASE("bagging: deeper members never hurt training accuracy on average") {
    double shallow_total = 0.0, deep_total = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto data = testutil::random_consistent(60, 4, 2, 1000 + seed);
        const auto shallow = train_bagging(data, BaggingParams{{.max_depth = 2}, 5, true}, seed);
        const auto deep = train_bagging(data, BaggingParams{{.max_depth = 10}, 5, true}, seed);
        shallow_total += accuracy_on(*shallow, data);
        deep_total += accuracy_on(*deep, data);
    }
    CHECK(deep_total >= shallow_total);
}

TEST_CASE("samme alpha: closed forms") {
    CHECK(samme_alpha(0.5, 2) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(samme_alpha(0.25, 2) == doctest::Approx(std::log(3.0)).epsilon(1e-12));
    for (double err : {0.5, 0.25, 0.1}) {
        for (std::size_t k : {std::size_t(2), std::size_t(4)}) {
            const double expect = std::log((1.0 - err) / err) + std::log(double(k) - 1.0);
            CHECK(samme_alpha(err, k) == doctest::Approx(expect).epsilon(1e-12));
        }
    }
}

TEST_CASE("adaboost: perfectly separable stump data stops after round one") {
    auto data = testutil::make_matrix(1, {0.0, 1.0, 2.0, 3.0}, {0, 0, 1, 1}, {"A", "B"});
    std::vector<BoostRound> trace;
    const auto model = train_adaboost(data, AdaBoostParams{{.max_depth = 1}, 10}, 4, &trace);
    CHECK(model->members().size() == 1);
    REQUIRE(trace.size() == 1);
    CHECK(trace[0].err == 0.0);
}

TEST_CASE("adaboost: weights stay a probability distribution every round") {
    auto data = testutil::random_consistent(200, 5, 3, 77);
    std::vector<BoostRound> trace;
    const auto model = train_adaboost(data, AdaBoostParams{{.max_depth = 1}, 25}, 11, &trace);
    CHECK(!trace.empty());
    for (const auto& round : trace) {
        CHECK(std::abs(round.weight_sum - 1.0) < 1e-9);
        CHECK(round.weight_min > 0.0);
        CHECK(round.err >= 0.0);
    }
    CHECK(model->members().size() == trace.size());
}

TEST_CASE("adaboost: prediction equals weighted sum over hardened votes") {
    auto data = testutil::random_consistent(120, 4, 3, 50);
    const auto model = train_adaboost(data, AdaBoostParams{{.max_depth = 2}, 10}, 6);
    REQUIRE(model->members().size() >= 1);

    Rng rng(8);
    for (int q = 0; q < 30; ++q) {
        std::vector<double> query(data.cols);
        for (auto& v : query) v = rng.unit();

        PredictionMatrix hard;
        hard.n_learners = model->members().size();
        hard.n_classes = model->n_classes();
        hard.d.assign(hard.n_learners * hard.n_classes, 0.0);
        for (std::size_t j = 0; j < model->members().size(); ++j) {
            const int vote = model->members()[j]->predict(query).argmax();
            hard.d[j * hard.n_classes + static_cast<std::size_t>(vote)] = 1.0;
        }
        const auto expect = combine(FusionRule::weighted_sum, hard, model->weights());
        const auto got = model->predict(query);
        const double total = std::accumulate(expect.begin(), expect.end(), 0.0);
        for (std::size_t c = 0; c < expect.size(); ++c)
            CHECK(got.scores[c] == doctest::Approx(expect[c] / total).epsilon(1e-12));
    }
}

TEST_CASE("voting: two identical members reproduce the single member") {
    auto data = testutil::random_consistent(60, 4, 2, 14);
    auto tree = std::shared_ptr<Model>(train_tree(data, TreeParams{}));
    for (FusionRule rule : {FusionRule::sum, FusionRule::median, FusionRule::minimum,
                            FusionRule::maximum, FusionRule::majority_vote}) {
        const auto vote = train_voting({tree, tree}, rule);
        for (std::size_t i = 0; i < 20; ++i) {
            const auto a = decide(tree->predict(data.row(i)).scores);
            const auto b = predict_ensemble(*vote, data.row(i)).second;
            CHECK(a.class_id == b.class_id);
        }
    }
}

TEST_CASE("voting: opposing members tie and break to class 0") {
    // two constant stumps with opposite votes
    auto d0 = testutil::make_matrix(1, {0.0, 1.0}, {0, 0}, {"A", "B"});
    auto d1 = testutil::make_matrix(1, {0.0, 1.0}, {1, 1}, {"A", "B"});
    auto m0 = std::shared_ptr<Model>(train_tree(d0, TreeParams{}));
    auto m1 = std::shared_ptr<Model>(train_tree(d1, TreeParams{}));
    const auto vote = train_voting({m0, m1}, FusionRule::sum);
    const auto [dist, decision] = predict_ensemble(*vote, std::vector<double>{0.5});
    CHECK(decision.class_id == 0);
    CHECK(decision.degenerate);
    CHECK(dist.scores[0] == doctest::Approx(0.5));
}

TEST_CASE("voting: needs two members and a shared schema") {
    auto data = testutil::random_consistent(30, 4, 2, 15);
    auto other = testutil::random_consistent(30, 3, 2, 16);
    auto a = std::shared_ptr<Model>(train_tree(data, TreeParams{}));
    auto b = std::shared_ptr<Model>(train_tree(other, TreeParams{}));
    CHECK_THROWS_AS(train_voting({a}, FusionRule::sum), TrainingError);
    CHECK_THROWS_AS(train_voting({a, b}, FusionRule::sum), SchemaError);
}

TEST_CASE("predict_ensemble: single-member ensemble is the member") {
    auto data = testutil::random_consistent(50, 4, 2, 19);
    const auto bag = train_bagging(data, BaggingParams{{}, 1, true}, 33);
    REQUIRE(bag->members().size() == 1);
    for (std::size_t i = 0; i < 20; ++i)
        CHECK(bag->predict(data.row(i)).scores == bag->members()[0]->predict(data.row(i)).scores);
}

TEST_CASE("predict_ensemble: hand-built members match rule-by-rule computation") {
    // members are depth-0 trees with fixed histograms: distributions
    // (0.25,0.75), (0.5,0.5), (1.0,0.0)
    auto d1 = testutil::make_matrix(1, {0, 0, 0, 0}, {0, 1, 1, 1}, {"A", "B"});
    auto d2 = testutil::make_matrix(1, {0, 0}, {0, 1}, {"A", "B"});
    auto d3 = testutil::make_matrix(1, {0.0}, {0}, {"A", "B"});
    TreeParams leaf{.max_depth = 0};
    std::vector<std::shared_ptr<Model>> members = {train_tree(d1, leaf), train_tree(d2, leaf),
                                                   train_tree(d3, leaf)};

    const std::vector<double> q = {0.0};
    PredictionMatrix expect = matrix_of({{0.25, 0.75}, {0.5, 0.5}, {1.0, 0.0}});
    for (std::size_t j = 0; j < members.size(); ++j)
        CHECK(members[j]->predict(q).scores ==
              std::vector<double>(expect.learner(j).begin(), expect.learner(j).end()));

    for (FusionRule rule : {FusionRule::sum, FusionRule::median, FusionRule::minimum,
                            FusionRule::maximum, FusionRule::product, FusionRule::majority_vote}) {
        const auto vote = train_voting(members, rule);
        const auto got = predict_ensemble(*vote, q);
        const auto y = combine_oracle(rule, expect, {});
        CHECK(got.second.class_id == decide(y).class_id);
    }
}

TEST_CASE("ensembles serialize deterministically and reload") {
    auto data = testutil::random_consistent(80, 5, 2, 60);
    const auto rf = train_random_forest(data, RandomForestParams{{.max_depth = 4}, 6, 2}, 10);
    const auto round_trip = [&](const Model& m) {
        std::stringstream ss(std::ios::in | std::ios::out | std::ios::binary);
        save_model(ss, m);
        return load_model(ss);
    };
    const auto loaded = round_trip(*rf);
    CHECK(serialize_to_string(*loaded) == serialize_to_string(*rf));
    for (std::size_t i = 0; i < 10; ++i)
        CHECK(loaded->predict(data.row(i)).scores == rf->predict(data.row(i)).scores);

    // voting over heterogeneous members survives a round trip too
    auto knn = std::shared_ptr<Model>(train_knn(data, KnnParams{.k = 3}));
    auto tree = std::shared_ptr<Model>(train_tree(data, TreeParams{}));
    const auto vote = train_voting({knn, tree}, FusionRule::sum);
    const auto vloaded = round_trip(*vote);
    CHECK(serialize_to_string(*vloaded) == serialize_to_string(*vote));
}

TEST_SUITE_END();
