#include "fogids/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <numeric>

namespace fogids {

std::string_view fusion_rule_name(FusionRule r) {
    switch (r) {
        case FusionRule::sum: return "sum";
        case FusionRule::weighted_sum: return "weighted_sum";
        case FusionRule::median: return "median";
        case FusionRule::minimum: return "minimum";
        case FusionRule::maximum: return "maximum";
        case FusionRule::product: return "product";
        case FusionRule::majority_vote: return "majority_vote";
    }
    return "?";
}

std::optional<FusionRule> fusion_rule_from_name(std::string_view name) {
    for (FusionRule r : kAllFusionRules)
        if (fusion_rule_name(r) == name) return r;
    return std::nullopt;
}

namespace {

constexpr double kProductFloor = 1e-6;

void validate(const PredictionMatrix& p) {
    if (p.n_learners == 0) throw std::invalid_argument("prediction matrix has no learners");
    if (p.n_classes == 0) throw std::invalid_argument("prediction matrix has no classes");
    if (p.d.size() != p.n_learners * p.n_classes)
        throw std::invalid_argument("prediction matrix storage size mismatch");
}

}  // namespace

std::vector<double> combine(FusionRule rule, const PredictionMatrix& p,
                            std::span<const double> weights) {
    validate(p);
    const std::size_t N = p.n_learners, K = p.n_classes;
    std::vector<double> y(K, 0.0);

    switch (rule) {
        case FusionRule::sum:
            for (std::size_t j = 0; j < N; ++j) {
                auto row = p.learner(j);
                for (std::size_t c = 0; c < K; ++c) y[c] += row[c];
            }
            for (double& v : y) v /= static_cast<double>(N);
            break;

        case FusionRule::weighted_sum: {
            if (weights.size() != N)
                throw std::invalid_argument("weighted_sum needs one weight per learner");
            double wsum = 0.0;
            for (double w : weights) {
                if (w < 0.0) throw std::invalid_argument("weights must be non-negative");
                wsum += w;
            }
            if (std::abs(wsum - 1.0) > 1e-9)
                throw std::invalid_argument("weights must sum to 1");
            for (std::size_t j = 0; j < N; ++j) {
                auto row = p.learner(j);
                for (std::size_t c = 0; c < K; ++c) y[c] += weights[j] * row[c];
            }
            break;
        }

        case FusionRule::median: {
            std::vector<double> col(N);
            for (std::size_t c = 0; c < K; ++c) {
                for (std::size_t j = 0; j < N; ++j) col[j] = p.d[j * K + c];
                std::sort(col.begin(), col.end());
                y[c] = N % 2 ? col[N / 2] : (col[N / 2 - 1] + col[N / 2]) / 2.0;
            }
            break;
        }

        case FusionRule::minimum:
            for (std::size_t c = 0; c < K; ++c) {
                double m = p.d[c];
                for (std::size_t j = 1; j < N; ++j) m = std::min(m, p.d[j * K + c]);
                y[c] = m;
            }
            break;

        case FusionRule::maximum:
            for (std::size_t c = 0; c < K; ++c) {
                double m = p.d[c];
                for (std::size_t j = 1; j < N; ++j) m = std::max(m, p.d[j * K + c]);
                y[c] = m;
            }
            break;

        case FusionRule::product: {
            // floor + renormalize each row so legitimate hard zeros (leaf
            // histograms, vote fractions) cannot zero out every class
            std::vector<double> row(K);
            y.assign(K, 1.0);
            for (std::size_t j = 0; j < N; ++j) {
                auto src = p.learner(j);
                double sum = 0.0;
                for (std::size_t c = 0; c < K; ++c) {
                    row[c] = std::max(src[c], kProductFloor);
                    sum += row[c];
                }
                for (std::size_t c = 0; c < K; ++c) y[c] *= row[c] / sum;
            }
            break;
        }

        case FusionRule::majority_vote: {
            for (std::size_t j = 0; j < N; ++j) {
                auto row = p.learner(j);
                std::size_t best = 0;
                for (std::size_t c = 1; c < K; ++c)
                    if (row[c] > row[best]) best = c;
                y[best] += 1.0;
            }
            for (double& v : y) v /= static_cast<double>(N);
            break;
        }
    }
    return y;
}

Decision decide(std::span<const double> scores) {
    if (scores.empty()) throw std::invalid_argument("decide: empty score vector");
    std::size_t best = 0;
    bool all_equal = true;
    for (std::size_t c = 1; c < scores.size(); ++c) {
        if (scores[c] != scores[0]) all_equal = false;
        if (scores[c] > scores[best]) best = c;
    }
    return Decision{static_cast<int>(best), all_equal && scores.size() > 1};
}

std::vector<std::size_t> bootstrap_sample(std::size_t n, Rng& rng) {
    if (n == 0) throw std::invalid_argument("bootstrap_sample: empty data");
    std::vector<std::size_t> idx(n);
    for (auto& i : idx) i = rng.below(n);
    return idx;
}

namespace {

FeatureMatrix take_rows(const FeatureMatrix& data, std::span<const std::size_t> rows) {
    FeatureMatrix out;
    out.cols = data.cols;
    out.rows = rows.size();
    out.col_names = data.col_names;
    out.class_names = data.class_names;
    out.values.resize(out.rows * out.cols);
    out.labels.resize(out.rows);
    for (std::size_t j = 0; j < rows.size(); ++j) {
        auto src = data.row(rows[j]);
        std::copy(src.begin(), src.end(), out.row(j).begin());
        out.labels[j] = data.labels[rows[j]];
    }
    return out;
}

// Train members on forked seeds, in parallel. Results only depend on each
// member's own seed, never on scheduling.
std::vector<std::shared_ptr<Model>> train_members(
    int n_estimators, const std::function<std::shared_ptr<Model>(int, std::uint64_t)>& one,
    std::uint64_t seed) {
    if (n_estimators < 1) throw TrainingError("n_estimators must be >= 1");
    std::vector<std::shared_ptr<Model>> members(static_cast<std::size_t>(n_estimators));
    std::vector<std::future<void>> jobs;
    std::exception_ptr first_error;
    std::mutex err_mu;
    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    const unsigned lanes = std::min<unsigned>(hw, static_cast<unsigned>(n_estimators));
    std::atomic<int> next{0};
    for (unsigned lane = 0; lane < lanes; ++lane) {
        jobs.push_back(std::async(std::launch::async, [&] {
            while (true) {
                const int t = next.fetch_add(1);
                if (t >= n_estimators) return;
                try {
                    members[static_cast<std::size_t>(t)] =
                        one(t, splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(t) + 1)));
                } catch (...) {
                    std::lock_guard lock(err_mu);
                    if (!first_error) first_error = std::current_exception();
                    return;
                }
            }
        }));
    }
    for (auto& j : jobs) j.get();
    if (first_error) std::rethrow_exception(first_error);
    return members;
}

}  // namespace

std::unique_ptr<EnsembleModel> train_bagging(const FeatureMatrix& data, const BaggingParams& params,
                                             std::uint64_t seed) {
    auto model = std::make_unique<EnsembleModel>();
    model->kind_ = EnsembleKind::bagging;
    model->rule_ = FusionRule::sum;
    model->seed_ = seed;
    model->members_ = train_members(
        params.n_estimators,
        [&](int, std::uint64_t member_seed) -> std::shared_ptr<Model> {
            if (!params.bootstrap) return train_tree(data, params.tree);
            Rng rng(member_seed);
            const auto rows = bootstrap_sample(data.rows, rng);
            const FeatureMatrix sample = take_rows(data, rows);
            return train_tree(sample, params.tree);
        },
        seed);
    return model;
}

std::unique_ptr<EnsembleModel> train_random_forest(const FeatureMatrix& data,
                                                   const RandomForestParams& params,
                                                   std::uint64_t seed) {
    int m = params.m_features;
    if (m == -1) m = std::max(1, static_cast<int>(std::sqrt(static_cast<double>(data.cols))));
    if (m < 1 || static_cast<std::size_t>(m) > data.cols)
        throw TrainingError("m_features must be in [1, feature count]");

    auto model = std::make_unique<EnsembleModel>();
    model->kind_ = EnsembleKind::random_forest;
    model->rule_ = FusionRule::sum;
    model->seed_ = seed;
    const int m_eff = m;
    model->members_ = train_members(
        params.n_estimators,
        [&, m_eff](int, std::uint64_t member_seed) -> std::shared_ptr<Model> {
            Rng rng(member_seed);
            const auto rows = bootstrap_sample(data.rows, rng);
            const FeatureMatrix sample = take_rows(data, rows);
            // m = full width degenerates to plain bagging on the same seed path
            if (static_cast<std::size_t>(m_eff) == data.cols)
                return train_tree(sample, params.tree);
            return train_tree(sample, params.tree, {}, &rng, m_eff);
        },
        seed);
    return model;
}

double samme_alpha(double err, std::size_t n_classes) {
    if (n_classes < 2) throw std::invalid_argument("samme_alpha needs >= 2 classes");
    const double floored = std::max(err, 1e-10);
    return std::log((1.0 - floored) / floored) + std::log(static_cast<double>(n_classes) - 1.0);
}

std::unique_ptr<EnsembleModel> train_adaboost(const FeatureMatrix& data, const AdaBoostParams& params,
                                              std::uint64_t seed,
                                              std::vector<BoostRound>* trace) {
    if (data.rows == 0) throw TrainingError("cannot boost on empty data");
    if (params.n_estimators < 1) throw TrainingError("n_estimators must be >= 1");
    const std::size_t K =
        data.class_names.empty()
            ? static_cast<std::size_t>(*std::max_element(data.labels.begin(), data.labels.end())) + 1
            : data.class_names.size();
    if (K < 2) throw TrainingError("boosting needs at least two classes");

    auto model = std::make_unique<EnsembleModel>();
    model->kind_ = EnsembleKind::adaboost;
    model->rule_ = FusionRule::weighted_sum;
    model->seed_ = seed;

    const double n_inv = 1.0 / static_cast<double>(data.rows);
    std::vector<double> w(data.rows, n_inv);
    std::vector<double> alphas;
    const double err_ceiling = 1.0 - 1.0 / static_cast<double>(K);

    for (int t = 0; t < params.n_estimators; ++t) {
        auto member = train_tree(data, params.tree, w);
        const auto predicted = predict_labels(*member, data);

        double err = 0.0;
        for (std::size_t i = 0; i < data.rows; ++i)
            if (predicted[i] != data.labels[i]) err += w[i];

        if (err >= err_ceiling) {
            // no better than chance: discard and stop; keep at least one member
            if (model->members_.empty()) {
                model->members_.push_back(std::move(member));
                alphas.push_back(samme_alpha(err_ceiling - 1e-12, K));
                if (trace) trace->push_back({err, alphas.back(), 1.0, *std::min_element(w.begin(), w.end())});
            }
            break;
        }

        const double alpha = samme_alpha(err, K);
        model->members_.push_back(std::move(member));
        alphas.push_back(alpha);

        if (err == 0.0) {
            if (trace) trace->push_back({err, alpha, 1.0, *std::min_element(w.begin(), w.end())});
            break;
        }

        const double bump = std::exp(alpha);
        double sum = 0.0;
        for (std::size_t i = 0; i < data.rows; ++i) {
            if (predicted[i] != data.labels[i]) w[i] *= bump;
            sum += w[i];
        }
        double w_min = std::numeric_limits<double>::infinity();
        for (auto& wi : w) {
            wi /= sum;
            if (wi <= 0.0) throw TrainingError("instance weight is non-positive after update");
            w_min = std::min(w_min, wi);
        }
        if (trace) {
            double check = std::accumulate(w.begin(), w.end(), 0.0);
            trace->push_back({err, alpha, check, w_min});
        }
    }

    // normalized alphas double as the fusion weights over hard votes
    const double alpha_sum = std::accumulate(alphas.begin(), alphas.end(), 0.0);
    model->weights_.resize(alphas.size());
    for (std::size_t t = 0; t < alphas.size(); ++t)
        model->weights_[t] = alpha_sum > 0.0 ? alphas[t] / alpha_sum
                                             : 1.0 / static_cast<double>(alphas.size());
    return model;
}

std::unique_ptr<EnsembleModel> train_voting(std::vector<std::shared_ptr<Model>> members,
                                            FusionRule rule, std::vector<double> weights) {
    if (members.size() < 2) throw TrainingError("voting needs at least two members");
    for (const auto& m : members) {
        if (!m) throw TrainingError("voting member is null");
        if (m->schema_hash() != members.front()->schema_hash())
            throw SchemaError("voting members were trained on different schemas");
        if (m->n_classes() != members.front()->n_classes())
            throw SchemaError("voting members disagree on class count");
    }
    if (rule == FusionRule::weighted_sum) {
        if (weights.size() != members.size())
            throw TrainingError("weighted voting needs one weight per member");
    } else if (!weights.empty()) {
        throw TrainingError("weights are only meaningful for the weighted_sum rule");
    }
    auto model = std::make_unique<EnsembleModel>();
    model->kind_ = EnsembleKind::voting;
    model->rule_ = rule;
    model->members_ = std::move(members);
    model->weights_ = std::move(weights);
    return model;
}

PredictionMatrix EnsembleModel::stack(std::span<const double> instance) const {
    PredictionMatrix p;
    p.n_learners = members_.size();
    p.n_classes = n_classes();
    p.d.resize(p.n_learners * p.n_classes);
    for (std::size_t j = 0; j < members_.size(); ++j) {
        auto dist = members_[j]->predict(instance);
        auto row = p.learner(j);
        if (kind_ == EnsembleKind::adaboost) {
            // hard one-hot votes; the alphas carry the confidence
            std::fill(row.begin(), row.end(), 0.0);
            row[static_cast<std::size_t>(dist.argmax())] = 1.0;
        } else {
            std::copy(dist.scores.begin(), dist.scores.end(), row.begin());
        }
    }
    return p;
}

ClassDistribution EnsembleModel::predict(std::span<const double> instance) const {
    return predict_ensemble(*this, instance).first;
}

std::pair<ClassDistribution, Decision> predict_ensemble(const EnsembleModel& model,
                                                        std::span<const double> instance) {
    check_input(*model.members().front(), instance);
    const PredictionMatrix p = model.stack(instance);
    std::vector<double> y = combine(model.rule(), p, model.weights());
    const Decision d = decide(y);

    const double total = std::accumulate(y.begin(), y.end(), 0.0);
    ClassDistribution dist;
    if (total > 0.0) {
        dist.scores = std::move(y);
        for (double& v : dist.scores) v /= total;
    } else {
        dist.scores.assign(p.n_classes, 1.0 / static_cast<double>(p.n_classes));
    }
    return {std::move(dist), d};
}

std::size_t EnsembleModel::input_width() const { return members_.front()->input_width(); }
std::size_t EnsembleModel::n_classes() const { return members_.front()->n_classes(); }
std::uint64_t EnsembleModel::schema_hash() const { return members_.front()->schema_hash(); }

std::string EnsembleModel::kind() const {
    switch (kind_) {
        case EnsembleKind::bagging: return "bagging";
        case EnsembleKind::random_forest: return "random_forest";
        case EnsembleKind::adaboost: return "adaboost";
        case EnsembleKind::voting: return "voting";
    }
    return "?";
}

void EnsembleModel::save(BinaryWriter& w) const {
    w.u8(static_cast<std::uint8_t>(kind_));
    w.u8(static_cast<std::uint8_t>(rule_));
    w.u64(seed_);
    w.vec_f64(weights_);
    w.u64(members_.size());
    for (const auto& m : members_) {
        w.str(m->kind());
        m->save(w);
    }
}

namespace {

std::shared_ptr<Model> load_body_by_kind(const std::string& kind, BinaryReader& r) {
    if (kind == "tree") return TreeModel::load_body(r);
    if (kind == "knn") return KnnModel::load_body(r);
    if (kind == "mlp") return MlpModel::load_body(r);
    if (kind == "bagging" || kind == "random_forest" || kind == "adaboost" || kind == "voting")
        return EnsembleModel::load_body(r);
    throw SerializeError("unknown model kind '" + kind + "'");
}

constexpr char kModelMagic[] = "FIDSML01";

}  // namespace

std::unique_ptr<EnsembleModel> EnsembleModel::load_body(BinaryReader& r) {
    auto m = std::make_unique<EnsembleModel>();
    m->kind_ = static_cast<EnsembleKind>(r.u8());
    m->rule_ = static_cast<FusionRule>(r.u8());
    m->seed_ = r.u64();
    m->weights_ = r.vec_f64();
    const auto n = r.u64();
    if (n == 0) throw SerializeError("ensemble with no members");
    m->members_.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        const std::string kind = r.str();
        m->members_.push_back(load_body_by_kind(kind, r));
    }
    return m;
}

void save_model(std::ostream& out, const Model& m) {
    out.write(kModelMagic, 8);
    BinaryWriter w(out);
    w.str(m.kind());
    w.u64(m.schema_hash());
    m.save(w);
    if (!out) throw SerializeError("model write failed");
}

std::shared_ptr<Model> load_model(std::istream& in, std::uint64_t expect_schema_hash) {
    char magic[8];
    in.read(magic, 8);
    if (in.gcount() != 8 || std::string_view(magic, 8) != kModelMagic)
        throw SerializeError("not a model file (bad magic)");
    BinaryReader r(in);
    const std::string kind = r.str();
    const std::uint64_t hash = r.u64();
    if (expect_schema_hash != 0 && hash != expect_schema_hash)
        throw SchemaError("model schema hash mismatch: file was trained on a different layout");
    auto m = load_body_by_kind(kind, r);
    if (expect_schema_hash != 0 && m->schema_hash() != expect_schema_hash)
        throw SchemaError("model schema hash mismatch: file was trained on a different layout");
    return m;
}

void save_model_file(const std::string& path, const Model& m) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw SerializeError("cannot open '" + path + "' for writing");
    save_model(out, m);
}

std::shared_ptr<Model> load_model_file(const std::string& path, std::uint64_t expect_schema_hash) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw SerializeError("cannot open '" + path + "'");
    return load_model(in, expect_schema_hash);
}

}  // namespace fogids
