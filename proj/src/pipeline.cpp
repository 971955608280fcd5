#include "fogids/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>

namespace fogids {

StagePreprocessor StagePreprocessor::fit(std::span<const ConnectionRecord> train,
                                         const FeatureSchema& base,
                                         std::span<const std::string> keep_list, bool normalize,
                                         const LabelTask& task) {
    StagePreprocessor p;
    p.base_size_ = base.size();
    p.reduced_ = keep_list.empty() ? base : base.subset(keep_list);
    p.task_ = task;
    p.class_names_ = task.class_names();

    p.keep_idx_.clear();
    for (const auto& f : p.reduced_.features())
        p.keep_idx_.push_back(static_cast<std::uint32_t>(base.index_of(f.name)));

    // project, then fit vocabularies on the projected training records
    std::vector<ConnectionRecord> projected;
    projected.reserve(train.size());
    for (const auto& r : train) {
        ConnectionRecord pr;
        pr.raw.reserve(p.keep_idx_.size());
        pr.continuous.reserve(p.keep_idx_.size());
        for (auto i : p.keep_idx_) {
            pr.raw.push_back(r.raw[i]);
            pr.continuous.push_back(r.continuous[i]);
        }
        pr.label = r.label;
        pr.difficulty = r.difficulty;
        projected.push_back(std::move(pr));
    }
    p.reduced_.fit_vocabularies(projected);

    if (normalize) {
        FeatureMatrix m = build_matrix(projected, p.reduced_, task);
        if (m.rows == 0) throw TrainingError("no training rows left after label mapping");
        p.norm_ = Normalizer::fit(m);
    }
    return p;
}

namespace {

ConnectionRecord project_record(const ConnectionRecord& r, std::span<const std::uint32_t> keep_idx,
                                std::size_t base_size) {
    if (r.raw.size() != base_size)
        throw SchemaError("record has " + std::to_string(r.raw.size()) + " features, expected " +
                          std::to_string(base_size));
    ConnectionRecord pr;
    pr.raw.reserve(keep_idx.size());
    pr.continuous.reserve(keep_idx.size());
    for (auto i : keep_idx) {
        pr.raw.push_back(r.raw[i]);
        pr.continuous.push_back(r.continuous.empty() ? std::numeric_limits<double>::quiet_NaN()
                                                     : r.continuous[i]);
    }
    pr.label = r.label;
    pr.difficulty = r.difficulty;
    return pr;
}

}  // namespace

FeatureMatrix StagePreprocessor::transform(std::span<const ConnectionRecord> records) const {
    std::vector<ConnectionRecord> projected;
    projected.reserve(records.size());
    for (const auto& r : records) projected.push_back(project_record(r, keep_idx_, base_size_));
    FeatureMatrix m = build_matrix(projected, reduced_, task_);
    if (norm_) m = norm_->apply(m);
    return m;
}

std::vector<double> StagePreprocessor::transform_one(const ConnectionRecord& record) const {
    const ConnectionRecord pr = project_record(record, keep_idx_, base_size_);
    std::vector<double> row(reduced_.encoded_width());
    encode_into(pr, reduced_, row);
    if (norm_) norm_->apply_row(row);
    return row;
}

std::uint64_t StagePreprocessor::schema_hash() const {
    FeatureMatrix empty;
    empty.cols = reduced_.encoded_width();
    empty.col_names = reduced_.encoded_column_names();
    empty.class_names = class_names_;
    return empty.schema_hash();
}

void StagePreprocessor::save(BinaryWriter& w) const {
    w.u64(base_size_);
    w.u8(task_.mode == LabelTask::Mode::binary ? 0 : 1);
    w.u64(reduced_.size());
    for (const auto& f : reduced_.features()) {
        w.str(f.name);
        w.u8(f.kind == FeatureKind::categorical ? 1 : 0);
        w.vec_str(f.vocabulary);
    }
    std::vector<std::uint32_t> idx(keep_idx_.begin(), keep_idx_.end());
    w.vec_u32(idx);
    w.u8(norm_ ? 1 : 0);
    if (norm_) {
        w.vec_f64(norm_->mins());
        w.vec_f64(norm_->maxs());
    }
    w.vec_str(class_names_);
}

StagePreprocessor StagePreprocessor::load(BinaryReader& r) {
    StagePreprocessor p;
    p.base_size_ = r.u64();
    p.task_ = r.u8() == 0 ? LabelTask::binary() : LabelTask::category();
    const auto n = r.u64();
    std::vector<FeatureDesc> fs(n);
    for (auto& f : fs) {
        f.name = r.str();
        f.kind = r.u8() ? FeatureKind::categorical : FeatureKind::continuous;
        f.vocabulary = r.vec_str();
    }
    p.reduced_ = FeatureSchema(std::move(fs));
    p.keep_idx_ = r.vec_u32();
    if (r.u8()) {
        auto mins = r.vec_f64();
        auto maxs = r.vec_f64();
        p.norm_ = Normalizer(std::move(mins), std::move(maxs));
    }
    p.class_names_ = r.vec_str();
    return p;
}

void StageBundle::validate() const {
    if (!model) throw SchemaError("stage bundle has no model");
    if (model->schema_hash() != pre.schema_hash())
        throw SchemaError("stage model does not match the bundled preprocessor");
    if (model->n_classes() != pre.class_names().size())
        throw SchemaError("stage model class count does not match the task");
}

namespace {
constexpr char kStageMagic[] = "FIDSST01";
}

void save_stage_file(const std::string& path, const StageBundle& bundle) {
    bundle.validate();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw SerializeError("cannot open '" + path + "' for writing");
    out.write(kStageMagic, 8);
    BinaryWriter w(out);
    w.str(bundle.model_id);
    w.f64(bundle.threshold);
    bundle.pre.save(w);
    save_model(out, *bundle.model);
    if (!out) throw SerializeError("stage write failed");
}

StageBundle load_stage_file(const std::string& path, std::uint64_t expect_schema_hash) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw SerializeError("cannot open '" + path + "'");
    char magic[8];
    in.read(magic, 8);
    if (in.gcount() != 8 || std::string_view(magic, 8) != kStageMagic)
        throw SerializeError("not a stage file (bad magic)");
    BinaryReader r(in);
    StageBundle b;
    b.model_id = r.str();
    b.threshold = r.f64();
    b.pre = StagePreprocessor::load(r);
    b.model = load_model(in, b.pre.schema_hash());
    if (expect_schema_hash != 0 && b.pre.schema_hash() != expect_schema_hash)
        throw SchemaError("stage schema hash mismatch");
    b.validate();
    return b;
}

namespace {

std::int64_t elapsed_ns(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() -
                                                                t0)
        .count();
}

}  // namespace

Stage1Result stage1_detect(const StageBundle& stage1, const ConnectionRecord& record) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto row = stage1.pre.transform_one(record);
    const auto dist = stage1.model->predict(row);
    Stage1Result r;
    r.attack_score = dist.scores.size() > 1 ? dist.scores[1] : 0.0;
    r.anomaly = r.attack_score >= stage1.threshold;
    r.elapsed_ns = elapsed_ns(t0);
    return r;
}

Stage2Result stage2_classify(const StageBundle& stage2, const ConnectionRecord& record) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto row = stage2.pre.transform_one(record);
    auto dist = stage2.model->predict(row);
    Stage2Result r;
    r.category = decide(dist.scores).class_id;
    r.dist = std::move(dist);
    r.elapsed_ns = elapsed_ns(t0);
    return r;
}

std::vector<PipelineVerdict> run_pipeline(std::span<const ConnectionRecord> records,
                                          std::span<const std::uint64_t> record_ids,
                                          const StageBundle& stage1, const StageBundle& stage2,
                                          const AlertSink& alerts) {
    if (!record_ids.empty() && record_ids.size() != records.size())
        throw std::invalid_argument("record_ids must be empty or match the record count");

    std::vector<PipelineVerdict> verdicts;
    verdicts.reserve(records.size());
    const auto& categories = stage2.pre.class_names();

    for (std::size_t i = 0; i < records.size(); ++i) {
        PipelineVerdict v;
        v.record_id = record_ids.empty() ? static_cast<std::uint64_t>(i + 1) : record_ids[i];
        v.stage1 = stage1_detect(stage1, records[i]);
        if (v.stage1.anomaly) {
            if (alerts)
                alerts(Alert{Alert::Level::anomaly, v.record_id, "", iso8601_now(),
                             stage1.model_id});
            v.stage2 = stage2_classify(stage2, records[i]);
            if (alerts)
                alerts(Alert{Alert::Level::categorized, v.record_id,
                             categories[static_cast<std::size_t>(v.stage2->category)],
                             iso8601_now(), stage2.model_id});
        }
        verdicts.push_back(std::move(v));
    }
    return verdicts;
}

std::string iso8601_now() {
    const auto now = std::chrono::system_clock::now();
    const auto t = std::chrono::system_clock::to_time_t(now);
    const auto us = std::chrono::duration_cast<std::chrono::microseconds>(now.time_since_epoch())
                        .count() %
                    1000000;
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02d.%06lldZ", tm.tm_year + 1900,
                  tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec,
                  static_cast<long long>(us));
    return buf;
}

}  // namespace fogids
