#pragma once

#include <memory>

#include "fogids/eval.hpp"
#include "fogids/pipeline.hpp"
#include "testutil.hpp"

namespace testutil {

struct FixtureData {
    std::vector<fogids::ConnectionRecord> train, testp, test21;

    static const FixtureData& get() {
        static FixtureData d = [] {
            const auto schema = fogids::FeatureSchema::kdd41();
            FixtureData x;
            x.train = fogids::parse_file(fixture("KDDTrain+_fixture.txt"), schema);
            x.testp = fogids::parse_file(fixture("KDDTest+_fixture.txt"), schema);
            x.test21 = fogids::parse_file(fixture("KDDTest-21_fixture.txt"), schema);
            return x;
        }();
        return d;
    }
};

// Stage 1: bagged full-depth trees on the 38-feature view, no scaling. An
// odd member count keeps pure-leaf vote sums away from exact 0.5 ties, so
// the >= threshold rule and plain argmax agree record for record.
inline fogids::StageBundle make_stage1_bundle(std::uint64_t seed = 1, int n_estimators = 15) {
    const auto& data = FixtureData::get();
    const auto base = fogids::FeatureSchema::kdd41();
    const auto keep = fogids::FeatureSchema::default_keep38();

    fogids::StageBundle b;
    b.pre = fogids::StagePreprocessor::fit(data.train, base, keep, false,
                                           fogids::LabelTask::binary());
    const auto train = b.pre.transform(data.train);
    b.model = fogids::train_bagging(train, fogids::BaggingParams{{}, n_estimators, true}, seed);
    b.threshold = 0.5;
    b.model_id = "stage1-bagging-seed" + std::to_string(seed);
    return b;
}

// Stage 2: the four-member soft-vote over knn, random forest, bagging and
// boosted stumps, trained on attack-only rows with scaling on.
inline fogids::StageBundle make_stage2_bundle(std::uint64_t seed = 2) {
    const auto& data = FixtureData::get();
    const auto base = fogids::FeatureSchema::kdd41();
    const auto keep = fogids::FeatureSchema::default_keep38();

    fogids::StageBundle b;
    b.pre = fogids::StagePreprocessor::fit(data.train, base, keep, true,
                                           fogids::LabelTask::category());
    const auto train = b.pre.transform(data.train);

    std::vector<std::shared_ptr<fogids::Model>> members;
    members.push_back(fogids::train_knn(train, fogids::KnnParams{.k = 5}));
    members.push_back(fogids::train_random_forest(
        train, fogids::RandomForestParams{{}, 20, -1}, fogids::splitmix64(seed ^ 1)));
    members.push_back(fogids::train_bagging(train, fogids::BaggingParams{{}, 10, true},
                                            fogids::splitmix64(seed ^ 2)));
    members.push_back(fogids::train_adaboost(
        train, fogids::AdaBoostParams{{.max_depth = 2}, 20}, fogids::splitmix64(seed ^ 3)));
    b.model = fogids::train_voting(std::move(members), fogids::FusionRule::sum);
    b.threshold = 0.5;
    b.model_id = "stage2-voting-seed" + std::to_string(seed);
    return b;
}

inline const fogids::StageBundle& shared_stage1() {
    static fogids::StageBundle b = make_stage1_bundle();
    return b;
}

inline const fogids::StageBundle& shared_stage2() {
    static fogids::StageBundle b = make_stage2_bundle();
    return b;
}

}  // namespace testutil
