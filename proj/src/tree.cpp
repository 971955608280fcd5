#include <algorithm>
#include <cmath>
#include <numeric>

#include "fogids/learners.hpp"

namespace fogids {

double gini(std::span<const double> class_counts) {
    double total = 0.0;
    for (double c : class_counts) {
        if (c < 0.0) throw std::invalid_argument("gini: negative class count");
        total += c;
    }
    if (total <= 0.0) throw std::invalid_argument("gini: all class counts are zero");
    double sq = 0.0;
    for (double c : class_counts) {
        const double p = c / total;
        sq += p * p;
    }
    return 1.0 - sq;
}

double entropy(std::span<const double> class_counts) {
    double total = 0.0;
    for (double c : class_counts) {
        if (c < 0.0) throw std::invalid_argument("entropy: negative class count");
        total += c;
    }
    if (total <= 0.0) throw std::invalid_argument("entropy: all class counts are zero");
    double h = 0.0;
    for (double c : class_counts) {
        if (c <= 0.0) continue;
        const double p = c / total;
        h -= p * std::log2(p);
    }
    return h;
}

namespace {

double impurity(SplitCriterion criterion, std::span<const double> counts) {
    return criterion == SplitCriterion::gini ? gini(counts) : entropy(counts);
}

struct Split {
    bool found = false;
    int feature = -1;
    double threshold = 0.0;
    double score = std::numeric_limits<double>::infinity();
};

class TreeBuilder {
public:
    TreeBuilder(const FeatureMatrix& data, const TreeParams& params,
                std::span<const double> weights, Rng* rng, int m_features, std::size_t n_classes)
        : data_(data),
          params_(params),
          weights_(weights),
          rng_(rng),
          m_features_(m_features),
          n_classes_(n_classes) {}

    std::int32_t build(std::vector<std::uint32_t>& indices, int depth,
                       std::vector<TreeModel::Node>& nodes) {
        std::vector<double> hist(n_classes_, 0.0);
        for (auto i : indices) hist[static_cast<std::size_t>(data_.labels[i])] += weight(i);

        const bool pure = std::count_if(hist.begin(), hist.end(),
                                        [](double c) { return c > 0.0; }) <= 1;
        const bool depth_capped = params_.max_depth >= 0 && depth >= params_.max_depth;
        const bool too_small = indices.size() < static_cast<std::size_t>(params_.min_samples_split);

        Split split;
        if (!pure && !depth_capped && !too_small) split = find_split(indices);

        const auto id = static_cast<std::int32_t>(nodes.size());
        nodes.emplace_back();
        if (!split.found) {
            nodes[static_cast<std::size_t>(id)].histogram = std::move(hist);
            return id;
        }

        std::vector<std::uint32_t> left, right;
        left.reserve(indices.size());
        right.reserve(indices.size());
        for (auto i : indices)
            (value(i, split.feature) <= split.threshold ? left : right).push_back(i);
        indices.clear();
        indices.shrink_to_fit();

        const auto left_id = build(left, depth + 1, nodes);
        const auto right_id = build(right, depth + 1, nodes);
        auto& node = nodes[static_cast<std::size_t>(id)];
        node.feature = split.feature;
        node.threshold = split.threshold;
        node.left = left_id;
        node.right = right_id;
        return id;
    }

private:
    double weight(std::uint32_t i) const { return weights_.empty() ? 1.0 : weights_[i]; }
    double value(std::uint32_t i, int f) const {
        return data_.values[static_cast<std::size_t>(i) * data_.cols + static_cast<std::size_t>(f)];
    }

    // Candidate features for this node, ascending so ties resolve to the
    // lowest index.
    std::vector<int> candidate_features() {
        const int d = static_cast<int>(data_.cols);
        if (m_features_ <= 0 || m_features_ >= d || rng_ == nullptr) {
            std::vector<int> all(static_cast<std::size_t>(d));
            std::iota(all.begin(), all.end(), 0);
            return all;
        }
        // partial Fisher-Yates over [0, d)
        std::vector<int> pool(static_cast<std::size_t>(d));
        std::iota(pool.begin(), pool.end(), 0);
        std::vector<int> picked;
        picked.reserve(static_cast<std::size_t>(m_features_));
        for (int j = 0; j < m_features_; ++j) {
            const auto r = j + static_cast<int>(rng_->below(static_cast<std::uint64_t>(d - j)));
            std::swap(pool[static_cast<std::size_t>(j)], pool[static_cast<std::size_t>(r)]);
            picked.push_back(pool[static_cast<std::size_t>(j)]);
        }
        std::sort(picked.begin(), picked.end());
        return picked;
    }

    Split find_split(const std::vector<std::uint32_t>& indices) {
        Split best;
        std::vector<double> total(n_classes_, 0.0);
        double w_total = 0.0;
        for (auto i : indices) {
            const double w = weight(i);
            total[static_cast<std::size_t>(data_.labels[i])] += w;
            w_total += w;
        }

        std::vector<double> left(n_classes_), right(n_classes_);
        sorted_.resize(indices.size());

        for (int f : candidate_features()) {
            // Binary {0,1} columns (one-hot blocks) take a counting pass
            // instead of a sort.
            if (try_binary_column(indices, f, total, w_total, best)) continue;

            for (std::size_t j = 0; j < indices.size(); ++j)
                sorted_[j] = {value(indices[j], f), indices[j]};
            std::sort(sorted_.begin(), sorted_.end(), [](const Entry& a, const Entry& b) {
                return a.v != b.v ? a.v < b.v : a.idx < b.idx;
            });

            std::fill(left.begin(), left.end(), 0.0);
            double w_left = 0.0;
            for (std::size_t j = 0; j + 1 < sorted_.size(); ++j) {
                const auto i = sorted_[j].idx;
                left[static_cast<std::size_t>(data_.labels[i])] += weight(i);
                w_left += weight(i);
                if (sorted_[j].v == sorted_[j + 1].v) continue;
                const double mid = (sorted_[j].v + sorted_[j + 1].v) / 2.0;
                if (!(mid < sorted_[j + 1].v)) continue;  // adjacent doubles can round up
                // clamp: cancellation can leave tiny negative dust
                for (std::size_t c = 0; c < n_classes_; ++c)
                    right[c] = std::max(0.0, total[c] - left[c]);
                const double w_right = w_total - w_left;
                if (w_left <= 0.0 || w_right <= 0.0) continue;
                const double score = (w_left * impurity(params_.criterion, left) +
                                      w_right * impurity(params_.criterion, right)) /
                                     w_total;
                if (score < best.score) best = {true, f, mid, score};
            }
        }
        return best;
    }

    bool try_binary_column(const std::vector<std::uint32_t>& indices, int f,
                           std::span<const double> total, double w_total, Split& best) {
        std::vector<double> zeros(n_classes_, 0.0);
        double w_zero = 0.0;
        bool saw_zero = false, saw_one = false;
        for (auto i : indices) {
            const double v = value(i, f);
            if (v == 0.0) {
                saw_zero = true;
                zeros[static_cast<std::size_t>(data_.labels[i])] += weight(i);
                w_zero += weight(i);
            } else if (v == 1.0) {
                saw_one = true;
            } else {
                return false;
            }
        }
        if (!saw_zero || !saw_one) return true;  // constant column: no split, but handled
        std::vector<double> ones(n_classes_);
        for (std::size_t c = 0; c < n_classes_; ++c) ones[c] = std::max(0.0, total[c] - zeros[c]);
        const double w_one = w_total - w_zero;
        if (w_zero <= 0.0 || w_one <= 0.0) return true;
        const double score = (w_zero * impurity(params_.criterion, zeros) +
                              w_one * impurity(params_.criterion, ones)) /
                             w_total;
        if (score < best.score) best = {true, f, 0.5, score};
        return true;
    }

    struct Entry {
        double v;
        std::uint32_t idx;
    };

    const FeatureMatrix& data_;
    const TreeParams& params_;
    std::span<const double> weights_;
    Rng* rng_;
    int m_features_;
    std::size_t n_classes_;
    std::vector<Entry> sorted_;
};

std::size_t infer_n_classes(const FeatureMatrix& data) {
    if (!data.class_names.empty()) return data.class_names.size();
    int max_label = -1;
    for (int l : data.labels) max_label = std::max(max_label, l);
    if (max_label < 0) throw TrainingError("data has no labels");
    return static_cast<std::size_t>(max_label) + 1;
}

}  // namespace

std::unique_ptr<TreeModel> train_tree(const FeatureMatrix& data, const TreeParams& params,
                                      std::span<const double> weights, Rng* rng, int m_features) {
    if (data.rows == 0) throw TrainingError("cannot train a tree on empty data");
    if (data.labels.size() != data.rows) throw TrainingError("labels missing or misaligned");
    if (!weights.empty()) {
        if (weights.size() != data.rows) throw TrainingError("weights misaligned with data");
        double sum = 0.0;
        for (double w : weights) {
            if (w < 0.0 || !std::isfinite(w)) throw TrainingError("instance weights must be finite and non-negative");
            sum += w;
        }
        if (sum <= 0.0) throw TrainingError("instance weights sum to zero");
    }
    if (params.min_samples_split < 2) throw TrainingError("min_samples_split must be >= 2");

    const std::size_t n_classes = infer_n_classes(data);
    for (int l : data.labels)
        if (l < 0 || static_cast<std::size_t>(l) >= n_classes)
            throw TrainingError("label out of range");

    auto model = std::make_unique<TreeModel>();
    model->input_width_ = data.cols;
    model->n_classes_ = n_classes;
    model->schema_hash_ = data.schema_hash();

    TreeBuilder builder(data, params, weights, rng, m_features, n_classes);
    std::vector<std::uint32_t> all(data.rows);
    std::iota(all.begin(), all.end(), 0u);
    builder.build(all, 0, model->nodes_);
    return model;
}

ClassDistribution TreeModel::predict(std::span<const double> instance) const {
    check_input(*this, instance);
    std::size_t at = 0;
    while (nodes_[at].feature >= 0) {
        const auto& n = nodes_[at];
        at = static_cast<std::size_t>(
            instance[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right);
    }
    const auto& hist = nodes_[at].histogram;
    const double total = std::accumulate(hist.begin(), hist.end(), 0.0);
    ClassDistribution dist;
    dist.scores.resize(hist.size());
    for (std::size_t c = 0; c < hist.size(); ++c) dist.scores[c] = hist[c] / total;
    return dist;
}

int TreeModel::depth() const {
    // depth of node 0; nodes are stored preorder so children follow parents
    std::vector<int> depth(nodes_.size(), 0);
    int deepest = 0;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const auto& n = nodes_[i];
        if (n.feature < 0) continue;
        depth[static_cast<std::size_t>(n.left)] = depth[i] + 1;
        depth[static_cast<std::size_t>(n.right)] = depth[i] + 1;
        deepest = std::max(deepest, depth[i] + 1);
    }
    return deepest;
}

void TreeModel::save(BinaryWriter& w) const {
    w.u64(input_width_);
    w.u64(n_classes_);
    w.u64(schema_hash_);
    w.u64(nodes_.size());
    for (const auto& n : nodes_) {
        w.i32(n.feature);
        w.f64(n.threshold);
        w.i32(n.left);
        w.i32(n.right);
        if (n.feature < 0)
            w.vec_f64(n.histogram);
        else
            w.u64(0);
    }
}

std::unique_ptr<TreeModel> TreeModel::load_body(BinaryReader& r) {
    auto m = std::make_unique<TreeModel>();
    m->input_width_ = r.u64();
    m->n_classes_ = r.u64();
    m->schema_hash_ = r.u64();
    const auto n_nodes = r.u64();
    m->nodes_.resize(n_nodes);
    for (auto& n : m->nodes_) {
        n.feature = r.i32();
        n.threshold = r.f64();
        n.left = r.i32();
        n.right = r.i32();
        n.histogram = r.vec_f64();
    }
    return m;
}

void check_input(const Model& m, std::span<const double> instance) {
    if (instance.size() != m.input_width())
        throw SchemaError("instance width " + std::to_string(instance.size()) +
                          " does not match model input width " + std::to_string(m.input_width()));
}

std::vector<ClassDistribution> predict_batch(const Model& m, const FeatureMatrix& data) {
    std::vector<ClassDistribution> out(data.rows);
    parallel_for(data.rows, [&](std::size_t i) { out[i] = m.predict(data.row(i)); });
    return out;
}

std::vector<int> predict_labels(const Model& m, const FeatureMatrix& data) {
    std::vector<int> out(data.rows);
    parallel_for(data.rows, [&](std::size_t i) { out[i] = m.predict(data.row(i)).argmax(); });
    return out;
}

}  // namespace fogids
