#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fogids/ensemble.hpp"
#include "fogids/pipeline.hpp"

namespace fogids {

struct Metrics {
    std::size_t n = 0;
    std::size_t n_classes = 0;
    double accuracy = 0.0;
    std::vector<std::size_t> confusion;  // K x K row-major, rows = true class
    std::vector<double> precision, recall;
    double false_positive_rate = std::numeric_limits<double>::quiet_NaN();  // binary task only
    double train_seconds = 0.0;
    double predict_seconds = 0.0;

    std::size_t at(std::size_t truth, std::size_t predicted) const {
        return confusion[truth * n_classes + predicted];
    }
    double accuracy_from_confusion() const;
};

// Deterministic metrics over a labeled matrix; predict wall time recorded.
Metrics evaluate(const Model& model, const FeatureMatrix& test);
Metrics metrics_from_predictions(std::span<const int> truth, std::span<const int> predicted,
                                 std::size_t n_classes);

// --- experiment runner -------------------------------------------------------

// Self-describing model recipe; voting members are recipes themselves.
struct ModelSpec {
    std::string kind = "bagging";  // dt | knn | mlp | rf | bagging | adaboost | voting
    TreeParams tree;
    KnnParams knn;
    MlpParams mlp;
    int n_estimators = 10;
    int m_features = -1;
    bool bootstrap = true;
    FusionRule rule = FusionRule::sum;
    std::vector<ModelSpec> members;  // voting only

    static ModelSpec from_json_text(const std::string& text);
    std::string to_json_text() const;
    std::string describe() const;  // short hyperparameter summary
};

std::shared_ptr<Model> train_any(const FeatureMatrix& train, const ModelSpec& spec,
                                 std::uint64_t seed);

struct PreprocessSpec {
    std::vector<std::string> keep_list;  // empty = all features
    bool normalize = false;
};

struct ExperimentSpec {
    std::string name;
    LabelTask::Mode task = LabelTask::Mode::binary;
    ModelSpec model;
    PreprocessSpec preprocess;
    std::uint64_t seed = 1;
    std::string train_file;
    std::vector<std::string> test_files;
    bool rule_sweep = false;  // voting: one row per fusion rule
};

struct ReportRow {
    std::string experiment;
    std::string model;
    std::string hyperparameters;
    std::uint64_t seed = 0;
    std::string dataset;
    std::string rule;  // fusion rule, when applicable
    double accuracy = 0.0;
    double false_positive_rate = std::numeric_limits<double>::quiet_NaN();
    double train_seconds = 0.0;
    double predict_seconds = 0.0;
    std::string error;  // non-empty = failed run

    bool failed() const { return !error.empty(); }
};

// Trains per spec and evaluates on every test file; a training failure
// yields a failed row and the run continues.
std::vector<ReportRow> run_experiment(const ExperimentSpec& spec);

// Pre-parsed variant so sweeps can share one parse of the input files.
struct NamedMatrix {
    std::string name;
    FeatureMatrix matrix;
};
std::vector<ReportRow> run_experiment_on(const ExperimentSpec& spec, const FeatureMatrix& train,
                                         std::span<const NamedMatrix> tests);

// --- reports ------------------------------------------------------------------

void write_report_csv(std::span<const ReportRow> rows, std::ostream& out);
std::vector<ReportRow> read_report_csv(std::istream& in);
void write_report_summary(std::span<const ReportRow> rows, std::ostream& out);

// One "<model> <accuracy>" line per row: bar-chart source data.
void write_accuracy_data(std::span<const ReportRow> rows, std::ostream& out);

}  // namespace fogids
