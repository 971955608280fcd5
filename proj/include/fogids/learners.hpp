#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fogids/dataset.hpp"
#include "fogids/serialize.hpp"
#include "fogids/util.hpp"

namespace fogids {

// Per-class scores for one instance: entries in [0,1], summing to 1.
struct ClassDistribution {
    std::vector<double> scores;

    // Lowest class id wins ties.
    int argmax() const {
        int best = 0;
        for (std::size_t c = 1; c < scores.size(); ++c)
            if (scores[c] > scores[static_cast<std::size_t>(best)]) best = static_cast<int>(c);
        return best;
    }
    std::size_t size() const { return scores.size(); }
};

// Uniform train/predict surface shared by the base learners and ensembles.
class Model {
public:
    virtual ~Model() = default;

    virtual ClassDistribution predict(std::span<const double> instance) const = 0;
    virtual std::size_t input_width() const = 0;
    virtual std::size_t n_classes() const = 0;
    virtual std::uint64_t schema_hash() const = 0;
    virtual std::string kind() const = 0;
    virtual void save(BinaryWriter& w) const = 0;
};

void check_input(const Model& m, std::span<const double> instance);

// Batch prediction, parallel over instances.
std::vector<int> predict_labels(const Model& m, const FeatureMatrix& data);
std::vector<ClassDistribution> predict_batch(const Model& m, const FeatureMatrix& data);

// --- impurity -------------------------------------------------------------

// 1 - sum(p_c^2). Counts may be weighted; all-zero input is an error.
double gini(std::span<const double> class_counts);
double entropy(std::span<const double> class_counts);

// --- decision tree ----------------------------------------------------------

enum class SplitCriterion { gini, entropy };

struct TreeParams {
    int max_depth = -1;          // -1 = unbounded
    int min_samples_split = 2;
    SplitCriterion criterion = SplitCriterion::gini;
};

class TreeModel : public Model {
public:
    struct Node {
        std::int32_t feature = -1;   // -1 marks a leaf
        double threshold = 0.0;
        std::int32_t left = -1, right = -1;
        std::vector<double> histogram;  // weighted class counts at the leaf
    };

    ClassDistribution predict(std::span<const double> instance) const override;
    std::size_t input_width() const override { return input_width_; }
    std::size_t n_classes() const override { return n_classes_; }
    std::uint64_t schema_hash() const override { return schema_hash_; }
    std::string kind() const override { return "tree"; }
    void save(BinaryWriter& w) const override;
    static std::unique_ptr<TreeModel> load_body(BinaryReader& r);

    const std::vector<Node>& nodes() const { return nodes_; }
    int depth() const;

private:
    friend std::unique_ptr<TreeModel> train_tree(const FeatureMatrix&, const TreeParams&,
                                                 std::span<const double>, Rng*, int);
    std::vector<Node> nodes_;
    std::size_t input_width_ = 0;
    std::size_t n_classes_ = 0;
    std::uint64_t schema_hash_ = 0;
};

// Greedy recursive partitioning; at each node the (feature, threshold) pair
// with the lowest weighted child impurity wins, ties broken by lowest
// feature index then lowest threshold. Candidate thresholds are midpoints
// between consecutive distinct sorted values. `weights` (optional) gives
// per-instance weights; `rng` + `m_features` restrict each node's candidate
// features to a uniform random subset.
std::unique_ptr<TreeModel> train_tree(const FeatureMatrix& data, const TreeParams& params,
                                      std::span<const double> weights = {}, Rng* rng = nullptr,
                                      int m_features = -1);

// --- k-nearest neighbours ----------------------------------------------------

struct KnnParams {
    int k = 5;
};

class KnnModel : public Model {
public:
    ClassDistribution predict(std::span<const double> instance) const override;
    std::size_t input_width() const override { return cols_; }
    std::size_t n_classes() const override { return n_classes_; }
    std::uint64_t schema_hash() const override { return schema_hash_; }
    std::string kind() const override { return "knn"; }
    void save(BinaryWriter& w) const override;
    static std::unique_ptr<KnnModel> load_body(BinaryReader& r);

    int k() const { return k_; }

private:
    friend std::unique_ptr<KnnModel> train_knn(const FeatureMatrix&, const KnnParams&);
    std::vector<double> train_values_;  // row-major copy of the training matrix
    std::vector<int> train_labels_;
    std::size_t rows_ = 0, cols_ = 0;
    std::size_t n_classes_ = 0;
    int k_ = 5;
    std::uint64_t schema_hash_ = 0;
};

// Vote fractions of the k Euclidean-nearest training rows; distance ties
// break toward the lower training-row index.
std::unique_ptr<KnnModel> train_knn(const FeatureMatrix& data, const KnnParams& params);

// --- multilayer perceptron ---------------------------------------------------

struct MlpParams {
    std::vector<int> hidden = {64};
    double learning_rate = 0.01;
    int epochs = 50;
    int batch_size = 128;
    std::uint64_t seed = 0;
    double grad_clip = 5.0;  // cap on the per-batch gradient L2 norm; <=0 disables
};

class MlpModel : public Model {
public:
    // Rectifier hidden layers, normalized-exponential output.
    ClassDistribution predict(std::span<const double> instance) const override;
    std::size_t input_width() const override { return layer_sizes_.front(); }
    std::size_t n_classes() const override { return layer_sizes_.back(); }
    std::uint64_t schema_hash() const override { return schema_hash_; }
    std::string kind() const override { return "mlp"; }
    void save(BinaryWriter& w) const override;
    static std::unique_ptr<MlpModel> load_body(BinaryReader& r);

    // Construct an untrained network (zero weights unless initialized).
    MlpModel(std::vector<std::size_t> layer_sizes, std::uint64_t schema_hash);
    MlpModel() = default;

    void init_weights(Rng& rng);

    // Mean cross-entropy over the batch; fills `grad` (same layout as
    // params()) with the analytic gradient. Exposed so tests can compare
    // against finite differences.
    double loss_and_grad(const FeatureMatrix& data, std::span<const std::size_t> batch,
                         std::vector<double>& grad) const;

    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }
    const std::vector<std::size_t>& layer_sizes() const { return layer_sizes_; }

private:
    friend std::unique_ptr<MlpModel> train_mlp(const FeatureMatrix&, const MlpParams&);
    // params_ layout: per layer, weight matrix (out x in, row-major) then bias.
    std::vector<double> params_;
    std::vector<std::size_t> layer_sizes_;
    std::uint64_t schema_hash_ = 0;
};

// Seeded mini-batch gradient descent on cross-entropy. Throws TrainingError
// (naming epoch and batch) if the loss leaves the finite range.
std::unique_ptr<MlpModel> train_mlp(const FeatureMatrix& data, const MlpParams& params);

}  // namespace fogids
