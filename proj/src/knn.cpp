#include <algorithm>
#include <cmath>

#include "fogids/learners.hpp"

namespace fogids {

std::unique_ptr<KnnModel> train_knn(const FeatureMatrix& data, const KnnParams& params) {
    if (data.rows == 0) throw TrainingError("cannot fit knn on empty data");
    if (data.labels.size() != data.rows) throw TrainingError("labels missing or misaligned");
    if (params.k < 1 || static_cast<std::size_t>(params.k) > data.rows)
        throw TrainingError("k must be in [1, training size]");

    auto m = std::make_unique<KnnModel>();
    m->train_values_ = data.values;
    m->train_labels_ = data.labels;
    m->rows_ = data.rows;
    m->cols_ = data.cols;
    m->k_ = params.k;
    m->schema_hash_ = data.schema_hash();
    std::size_t n_classes = data.class_names.size();
    if (n_classes == 0) {
        int max_label = 0;
        for (int l : data.labels) max_label = std::max(max_label, l);
        n_classes = static_cast<std::size_t>(max_label) + 1;
    }
    m->n_classes_ = n_classes;
    return m;
}

ClassDistribution KnnModel::predict(std::span<const double> instance) const {
    check_input(*this, instance);

    // (squared distance, training-row index): the index is the tie-break
    struct Neighbor {
        double d2;
        std::uint32_t idx;
        bool operator<(const Neighbor& o) const {
            return d2 != o.d2 ? d2 < o.d2 : idx < o.idx;
        }
    };

    std::vector<Neighbor> all(rows_);
    for (std::size_t r = 0; r < rows_; ++r) {
        const double* row = train_values_.data() + r * cols_;
        double d2 = 0.0;
        for (std::size_t c = 0; c < cols_; ++c) {
            const double diff = row[c] - instance[c];
            d2 += diff * diff;
        }
        all[r] = {d2, static_cast<std::uint32_t>(r)};
    }

    const auto k = static_cast<std::size_t>(k_);
    std::nth_element(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k - 1), all.end());

    ClassDistribution dist;
    dist.scores.assign(n_classes_, 0.0);
    for (std::size_t j = 0; j < k; ++j)
        dist.scores[static_cast<std::size_t>(train_labels_[all[j].idx])] += 1.0 / static_cast<double>(k);
    return dist;
}

void KnnModel::save(BinaryWriter& w) const {
    w.u64(rows_);
    w.u64(cols_);
    w.u64(n_classes_);
    w.u64(schema_hash_);
    w.i32(k_);
    w.vec_f64(train_values_);
    w.u64(train_labels_.size());
    for (int l : train_labels_) w.i32(l);
}

std::unique_ptr<KnnModel> KnnModel::load_body(BinaryReader& r) {
    auto m = std::make_unique<KnnModel>();
    m->rows_ = r.u64();
    m->cols_ = r.u64();
    m->n_classes_ = r.u64();
    m->schema_hash_ = r.u64();
    m->k_ = r.i32();
    m->train_values_ = r.vec_f64();
    const auto n = r.u64();
    m->train_labels_.resize(n);
    for (auto& l : m->train_labels_) l = r.i32();
    if (m->train_values_.size() != m->rows_ * m->cols_ || m->train_labels_.size() != m->rows_)
        throw SerializeError("knn model body is inconsistent");
    return m;
}

}  // namespace fogids
