#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fogids/learners.hpp"

namespace fogids {

// N learners x K classes score block for one instance.
struct PredictionMatrix {
    std::size_t n_learners = 0;
    std::size_t n_classes = 0;
    std::vector<double> d;  // row-major, row per learner

    std::span<const double> learner(std::size_t j) const {
        return std::span<const double>(d).subspan(j * n_classes, n_classes);
    }
    std::span<double> learner(std::size_t j) {
        return std::span<double>(d).subspan(j * n_classes, n_classes);
    }
};

enum class FusionRule { sum, weighted_sum, median, minimum, maximum, product, majority_vote };

std::string_view fusion_rule_name(FusionRule r);
std::optional<FusionRule> fusion_rule_from_name(std::string_view name);
inline constexpr FusionRule kAllFusionRules[] = {
    FusionRule::sum,     FusionRule::weighted_sum, FusionRule::median,       FusionRule::minimum,
    FusionRule::maximum, FusionRule::product,      FusionRule::majority_vote};

// Element-wise fusion of the learner scores. weighted_sum requires N
// weights on the probability simplex. The product rule floors entries at
// 1e-6 (then renormalizes each row) before multiplying, so a single hard
// zero cannot erase a class.
std::vector<double> combine(FusionRule rule, const PredictionMatrix& p,
                            std::span<const double> weights = {});

struct Decision {
    int class_id = 0;
    bool degenerate = false;  // all scores equal (includes the all-zero case)
};

// argmax with lowest-id tie-break.
Decision decide(std::span<const double> scores);

// n uniform draws with replacement from [0, n).
std::vector<std::size_t> bootstrap_sample(std::size_t n, Rng& rng);

enum class EnsembleKind { bagging, random_forest, adaboost, voting };

struct BaggingParams;
struct RandomForestParams;
struct AdaBoostParams;
struct BoostRound;

class EnsembleModel : public Model {
public:
    ClassDistribution predict(std::span<const double> instance) const override;
    std::size_t input_width() const override;
    std::size_t n_classes() const override;
    std::uint64_t schema_hash() const override;
    std::string kind() const override;
    void save(BinaryWriter& w) const override;
    static std::unique_ptr<EnsembleModel> load_body(BinaryReader& r);

    // Member score rows stacked for one instance. AdaBoost rows are
    // hardened to one-hot votes first.
    PredictionMatrix stack(std::span<const double> instance) const;

    EnsembleKind ensemble_kind() const { return kind_; }
    FusionRule rule() const { return rule_; }
    const std::vector<std::shared_ptr<Model>>& members() const { return members_; }
    const std::vector<double>& weights() const { return weights_; }
    std::uint64_t seed() const { return seed_; }

private:
    friend std::unique_ptr<EnsembleModel> train_bagging(const FeatureMatrix&, const BaggingParams&,
                                                        std::uint64_t);
    friend std::unique_ptr<EnsembleModel> train_random_forest(const FeatureMatrix&,
                                                              const RandomForestParams&,
                                                              std::uint64_t);
    friend std::unique_ptr<EnsembleModel> train_adaboost(const FeatureMatrix&, const AdaBoostParams&,
                                                         std::uint64_t, std::vector<BoostRound>*);
    friend std::unique_ptr<EnsembleModel> train_voting(std::vector<std::shared_ptr<Model>>,
                                                       FusionRule, std::vector<double>);
    EnsembleKind kind_ = EnsembleKind::bagging;
    FusionRule rule_ = FusionRule::sum;
    std::vector<std::shared_ptr<Model>> members_;
    std::vector<double> weights_;  // simplex weights for weighted_sum / normalized alphas
    std::uint64_t seed_ = 0;
};

struct BaggingParams {
    TreeParams tree;
    int n_estimators = 10;
    bool bootstrap = true;  // off = every member sees the full training set
};

struct RandomForestParams {
    TreeParams tree;
    int n_estimators = 100;
    int m_features = -1;  // -1 = floor(sqrt(feature count))
};

struct AdaBoostParams {
    TreeParams tree{.max_depth = 2, .min_samples_split = 2};
    int n_estimators = 50;
};

// Per-round diagnostics of the boosting loop.
struct BoostRound {
    double err = 0.0;
    double alpha = 0.0;
    double weight_sum = 0.0;  // after renormalization
    double weight_min = 0.0;
};

std::unique_ptr<EnsembleModel> train_bagging(const FeatureMatrix& data, const BaggingParams& params,
                                             std::uint64_t seed);
std::unique_ptr<EnsembleModel> train_random_forest(const FeatureMatrix& data,
                                                   const RandomForestParams& params,
                                                   std::uint64_t seed);

// Stagewise boosting that reweights toward previously misclassified
// instances each round: err_t = weighted error, alpha_t =
// ln((1-err_t)/err_t) + ln(K-1), misclassified weights scaled by
// exp(alpha_t), then renormalized. Stops early at err_t = 0 or
// err_t >= 1 - 1/K. Prediction is the alpha-weighted vote.
std::unique_ptr<EnsembleModel> train_adaboost(const FeatureMatrix& data, const AdaBoostParams& params,
                                              std::uint64_t seed,
                                              std::vector<BoostRound>* trace = nullptr);

double samme_alpha(double err, std::size_t n_classes);

// Fuse already-trained models; no retraining. Members must agree on schema
// hash and class count. weights apply when rule = weighted_sum.
std::unique_ptr<EnsembleModel> train_voting(std::vector<std::shared_ptr<Model>> members,
                                            FusionRule rule, std::vector<double> weights = {});

// combine + decide; the returned distribution is the fused scores
// renormalized to sum 1 (uniform when fully degenerate).
std::pair<ClassDistribution, Decision> predict_ensemble(const EnsembleModel& model,
                                                        std::span<const double> instance);

// --- model file io ----------------------------------------------------------

void save_model(std::ostream& out, const Model& m);
std::shared_ptr<Model> load_model(std::istream& in, std::uint64_t expect_schema_hash = 0);
void save_model_file(const std::string& path, const Model& m);
std::shared_ptr<Model> load_model_file(const std::string& path, std::uint64_t expect_schema_hash = 0);

}  // namespace fogids
