#include <algorithm>
#include <cmath>
#include <numeric>

#include "fogids/learners.hpp"

namespace fogids {

namespace {

struct Layout {
    // offset of W_l and b_l inside the flat parameter vector
    std::vector<std::size_t> w_off, b_off;
    std::size_t total = 0;
};

Layout layout_of(const std::vector<std::size_t>& sizes) {
    Layout l;
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
        l.w_off.push_back(l.total);
        l.total += sizes[i + 1] * sizes[i];
        l.b_off.push_back(l.total);
        l.total += sizes[i + 1];
    }
    return l;
}

void softmax_inplace(std::vector<double>& z) {
    const double m = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double& v : z) {
        v = std::exp(v - m);
        sum += v;
    }
    for (double& v : z) v /= sum;
}

}  // namespace

MlpModel::MlpModel(std::vector<std::size_t> layer_sizes, std::uint64_t schema_hash)
    : layer_sizes_(std::move(layer_sizes)), schema_hash_(schema_hash) {
    if (layer_sizes_.size() < 2) throw TrainingError("mlp needs at least input and output layers");
    params_.assign(layout_of(layer_sizes_).total, 0.0);
}

void MlpModel::init_weights(Rng& rng) {
    const Layout lay = layout_of(layer_sizes_);
    for (std::size_t l = 0; l + 1 < layer_sizes_.size(); ++l) {
        const std::size_t fan_in = layer_sizes_[l];
        const std::size_t fan_out = layer_sizes_[l + 1];
        const bool last = l + 2 == layer_sizes_.size();
        const double limit = last ? std::sqrt(6.0 / static_cast<double>(fan_in + fan_out))
                                  : std::sqrt(6.0 / static_cast<double>(fan_in));
        for (std::size_t i = 0; i < fan_out * fan_in; ++i)
            params_[lay.w_off[l] + i] = (2.0 * rng.unit() - 1.0) * limit;
        for (std::size_t i = 0; i < fan_out; ++i) params_[lay.b_off[l] + i] = 0.0;
    }
}

ClassDistribution MlpModel::predict(std::span<const double> instance) const {
    check_input(*this, instance);
    const Layout lay = layout_of(layer_sizes_);
    std::vector<double> cur(instance.begin(), instance.end());
    std::vector<double> next;
    for (std::size_t l = 0; l + 1 < layer_sizes_.size(); ++l) {
        const std::size_t n_in = layer_sizes_[l];
        const std::size_t n_out = layer_sizes_[l + 1];
        next.assign(n_out, 0.0);
        const double* W = params_.data() + lay.w_off[l];
        const double* b = params_.data() + lay.b_off[l];
        for (std::size_t o = 0; o < n_out; ++o) {
            double acc = b[o];
            const double* w_row = W + o * n_in;
            for (std::size_t i = 0; i < n_in; ++i) acc += w_row[i] * cur[i];
            next[o] = acc;
        }
        const bool last = l + 2 == layer_sizes_.size();
        if (!last)
            for (double& v : next) v = v > 0.0 ? v : 0.0;
        cur.swap(next);
    }
    softmax_inplace(cur);
    return ClassDistribution{std::move(cur)};
}

double MlpModel::loss_and_grad(const FeatureMatrix& data, std::span<const std::size_t> batch,
                               std::vector<double>& grad) const {
    const Layout lay = layout_of(layer_sizes_);
    grad.assign(lay.total, 0.0);
    const std::size_t n_layers = layer_sizes_.size() - 1;

    // activations[0] = input; activations[l+1] = post-ReLU output of layer l
    std::vector<std::vector<double>> activations(n_layers + 1);
    std::vector<std::vector<double>> preact(n_layers);
    std::vector<double> delta, delta_prev;

    double loss = 0.0;
    for (std::size_t s : batch) {
        auto row = data.row(s);
        activations[0].assign(row.begin(), row.end());
        for (std::size_t l = 0; l < n_layers; ++l) {
            const std::size_t n_in = layer_sizes_[l];
            const std::size_t n_out = layer_sizes_[l + 1];
            preact[l].assign(n_out, 0.0);
            const double* W = params_.data() + lay.w_off[l];
            const double* b = params_.data() + lay.b_off[l];
            for (std::size_t o = 0; o < n_out; ++o) {
                double acc = b[o];
                const double* w_row = W + o * n_in;
                const double* in = activations[l].data();
                for (std::size_t i = 0; i < n_in; ++i) acc += w_row[i] * in[i];
                preact[l][o] = acc;
            }
            activations[l + 1] = preact[l];
            if (l + 1 < n_layers)
                for (double& v : activations[l + 1]) v = v > 0.0 ? v : 0.0;
        }

        std::vector<double> prob = activations[n_layers];
        softmax_inplace(prob);
        const auto y = static_cast<std::size_t>(data.labels[s]);
        loss -= std::log(std::max(prob[y], 1e-300));

        // output delta = softmax - onehot
        delta = prob;
        delta[y] -= 1.0;

        for (std::size_t l = n_layers; l-- > 0;) {
            const std::size_t n_in = layer_sizes_[l];
            const std::size_t n_out = layer_sizes_[l + 1];
            double* gW = grad.data() + lay.w_off[l];
            double* gb = grad.data() + lay.b_off[l];
            const double* in = activations[l].data();
            for (std::size_t o = 0; o < n_out; ++o) {
                const double d = delta[o];
                gb[o] += d;
                double* g_row = gW + o * n_in;
                for (std::size_t i = 0; i < n_in; ++i) g_row[i] += d * in[i];
            }
            if (l == 0) break;
            const double* W = params_.data() + lay.w_off[l];
            delta_prev.assign(n_in, 0.0);
            for (std::size_t o = 0; o < n_out; ++o) {
                const double d = delta[o];
                const double* w_row = W + o * n_in;
                for (std::size_t i = 0; i < n_in; ++i) delta_prev[i] += d * w_row[i];
            }
            // ReLU gate of the layer below
            for (std::size_t i = 0; i < n_in; ++i)
                if (preact[l - 1][i] <= 0.0) delta_prev[i] = 0.0;
            delta.swap(delta_prev);
        }
    }

    const double inv = 1.0 / static_cast<double>(batch.size());
    for (double& g : grad) g *= inv;
    return loss * inv;
}

std::unique_ptr<MlpModel> train_mlp(const FeatureMatrix& data, const MlpParams& params) {
    if (data.rows == 0) throw TrainingError("cannot train mlp on empty data");
    if (data.labels.size() != data.rows) throw TrainingError("labels missing or misaligned");
    if (params.batch_size < 1 || params.epochs < 0 || params.learning_rate <= 0.0)
        throw TrainingError("invalid mlp hyperparameters");

    std::size_t n_classes = data.class_names.size();
    if (n_classes == 0) {
        int max_label = 0;
        for (int l : data.labels) max_label = std::max(max_label, l);
        n_classes = static_cast<std::size_t>(max_label) + 1;
    }

    std::vector<std::size_t> sizes;
    sizes.push_back(data.cols);
    for (int h : params.hidden) {
        if (h < 1) throw TrainingError("hidden layer size must be positive");
        sizes.push_back(static_cast<std::size_t>(h));
    }
    sizes.push_back(n_classes);

    auto model = std::make_unique<MlpModel>(sizes, data.schema_hash());
    Rng rng(splitmix64(params.seed ^ 0x6d6c70ULL));
    model->init_weights(rng);

    std::vector<std::size_t> order(data.rows);
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> grad;

    for (int epoch = 0; epoch < params.epochs; ++epoch) {
        // Fisher-Yates, own RNG so the permutation is platform-stable
        for (std::size_t i = data.rows; i > 1; --i) {
            const auto j = rng.below(i);
            std::swap(order[i - 1], order[j]);
        }
        const auto bs = static_cast<std::size_t>(params.batch_size);
        for (std::size_t start = 0, batch_no = 0; start < data.rows; start += bs, ++batch_no) {
            const std::size_t len = std::min(bs, data.rows - start);
            std::span<const std::size_t> batch(order.data() + start, len);
            const double loss = model->loss_and_grad(data, batch, grad);
            if (!std::isfinite(loss))
                throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) +
                                    ", batch " + std::to_string(batch_no));
            if (params.grad_clip > 0.0) {
                double norm2 = 0.0;
                for (double g : grad) norm2 += g * g;
                const double norm = std::sqrt(norm2);
                if (norm > params.grad_clip) {
                    const double scale = params.grad_clip / norm;
                    for (double& g : grad) g *= scale;
                }
            }
            auto& p = model->params();
            for (std::size_t i = 0; i < p.size(); ++i) p[i] -= params.learning_rate * grad[i];
        }
    }

    for (double p : model->params())
        if (!std::isfinite(p)) throw TrainingError("non-finite parameters after training");
    return model;
}

void MlpModel::save(BinaryWriter& w) const {
    w.u64(schema_hash_);
    w.u64(layer_sizes_.size());
    for (auto s : layer_sizes_) w.u64(s);
    w.vec_f64(params_);
}

std::unique_ptr<MlpModel> MlpModel::load_body(BinaryReader& r) {
    auto m = std::make_unique<MlpModel>();
    m->schema_hash_ = r.u64();
    const auto n = r.u64();
    m->layer_sizes_.resize(n);
    for (auto& s : m->layer_sizes_) s = r.u64();
    m->params_ = r.vec_f64();
    if (m->layer_sizes_.size() < 2 || m->params_.size() != layout_of(m->layer_sizes_).total)
        throw SerializeError("mlp model body is inconsistent");
    return m;
}

}  // namespace fogids
