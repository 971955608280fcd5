#pragma once

#include <chrono>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fogids/dataset.hpp"
#include "fogids/ensemble.hpp"

namespace fogids {

// Fitted per-stage preprocessing: feature keep list, training vocabularies
// and (optionally) min-max scaling. Apply never consults the data it
// transforms, only what was fitted.
class StagePreprocessor {
public:
    StagePreprocessor() = default;

    static StagePreprocessor fit(std::span<const ConnectionRecord> train,
                                 const FeatureSchema& base,
                                 std::span<const std::string> keep_list, bool normalize,
                                 const LabelTask& task);

    // Encode + label + drop task-excluded rows + scale.
    FeatureMatrix transform(std::span<const ConnectionRecord> records) const;

    // One full-arity record to one encoded (scaled) row; labels ignored.
    std::vector<double> transform_one(const ConnectionRecord& record) const;

    const LabelTask& task() const { return task_; }
    std::size_t base_size() const { return base_size_; }
    const FeatureSchema& reduced_schema() const { return reduced_; }
    const std::vector<std::string>& class_names() const { return class_names_; }
    bool normalizes() const { return norm_.has_value(); }
    std::uint64_t schema_hash() const;

    void save(BinaryWriter& w) const;
    static StagePreprocessor load(BinaryReader& r);

private:
    std::size_t base_size_ = 41;
    FeatureSchema reduced_;                 // fitted
    std::vector<std::uint32_t> keep_idx_;   // base feature index per reduced feature
    std::optional<Normalizer> norm_;
    LabelTask task_ = LabelTask::binary();
    std::vector<std::string> class_names_;
};

// Everything one stage needs at serving time, in one artifact.
struct StageBundle {
    StagePreprocessor pre;
    std::shared_ptr<Model> model;
    double threshold = 0.5;  // stage-1 anomaly cut on the attack score
    std::string model_id;    // stable identifier carried into alerts

    void validate() const;  // model/preprocessor hash agreement
};

void save_stage_file(const std::string& path, const StageBundle& bundle);
StageBundle load_stage_file(const std::string& path, std::uint64_t expect_schema_hash = 0);

struct Stage1Result {
    bool anomaly = false;
    double attack_score = 0.0;
    std::int64_t elapsed_ns = 0;
};

struct Stage2Result {
    int category = 0;  // index into the category class names
    ClassDistribution dist;
    std::int64_t elapsed_ns = 0;
};

struct PipelineVerdict {
    std::uint64_t record_id = 0;
    Stage1Result stage1;
    std::optional<Stage2Result> stage2;  // present iff stage1.anomaly
};

struct Alert {
    enum class Level { anomaly, categorized };
    Level level = Level::anomaly;
    std::uint64_t record_id = 0;
    std::string category;  // categorized alerts only
    std::string timestamp;
    std::string model_id;
};

// anomaly iff attack score >= threshold.
Stage1Result stage1_detect(const StageBundle& stage1, const ConnectionRecord& record);
Stage2Result stage2_classify(const StageBundle& stage2, const ConnectionRecord& record);

using AlertSink = std::function<void(const Alert&)>;

// Order-preserving: one verdict per input record; stage 2 runs exactly for
// the stage-1 anomalies; every anomaly emits one anomaly alert and every
// stage-2 result one categorized alert with the same record id.
std::vector<PipelineVerdict> run_pipeline(std::span<const ConnectionRecord> records,
                                          std::span<const std::uint64_t> record_ids,
                                          const StageBundle& stage1, const StageBundle& stage2,
                                          const AlertSink& alerts = {});

// Line-delimited log records (same token escaping as the wire protocol).
std::string format_alert_line(const Alert& a);
std::string format_verdict_line(const PipelineVerdict& v, std::span<const std::string> categories);

std::string iso8601_now();

}  // namespace fogids
