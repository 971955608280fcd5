#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fogids/util.hpp"

namespace fogids {

enum class FeatureKind { continuous, categorical };

struct FeatureDesc {
    std::string name;
    FeatureKind kind = FeatureKind::continuous;
    // Fitted (training-split) value set for categorical features, kept in
    // lexicographic order so encodings are reproducible.
    std::vector<std::string> vocabulary;
};

struct ConnectionRecord {
    std::vector<std::string> raw;      // feature fields as they appeared in the file
    std::vector<double> continuous;    // parsed values; NaN at categorical slots
    std::string label;
    int difficulty = -1;               // -1 when the trailing column was absent
};

class FeatureSchema {
public:
    FeatureSchema() = default;
    explicit FeatureSchema(std::vector<FeatureDesc> features);

    // The 41-feature connection-vector layout (protocol_type, service and
    // flag categorical, the rest continuous).
    static FeatureSchema kdd41();

    // Default 38-name keep list: kdd41 minus num_outbound_cmds,
    // is_host_login and urgent.
    static std::vector<std::string> default_keep38();

    const std::vector<FeatureDesc>& features() const { return features_; }
    std::size_t size() const { return features_.size(); }
    int index_of(std::string_view name) const;  // -1 when absent

    // Learn categorical vocabularies from the training split (lexicographic).
    void fit_vocabularies(std::span<const ConnectionRecord> train);
    bool fitted() const;

    // Reduced schema holding only the named features, original order kept.
    // Unknown names raise SchemaError.
    FeatureSchema subset(std::span<const std::string> keep) const;

    std::size_t encoded_width() const;
    std::vector<std::string> encoded_column_names() const;

private:
    std::vector<FeatureDesc> features_;
};

struct FeatureMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;  // row-major
    std::vector<int> labels;     // empty until a label task is applied
    std::vector<std::string> class_names;
    std::vector<std::string> col_names;

    std::span<const double> row(std::size_t i) const {
        return std::span<const double>(values).subspan(i * cols, cols);
    }
    std::span<double> row(std::size_t i) {
        return std::span<double>(values).subspan(i * cols, cols);
    }

    // Digest of the column layout plus class names; models remember it and
    // refuse data with a different layout.
    std::uint64_t schema_hash() const;
};

// --- parsing ------------------------------------------------------------

// One comma-separated record per line, 42 fields (features + label) or 43
// (+ difficulty). Throws ParseError with the offending 1-based line number.
// An empty stream yields an empty list.
std::vector<ConnectionRecord> parse_records(std::istream& in, const FeatureSchema& schema);
std::vector<ConnectionRecord> parse_records(std::string_view text, const FeatureSchema& schema);
std::vector<ConnectionRecord> parse_file(const std::string& path, const FeatureSchema& schema);

// --- encoding -----------------------------------------------------------

// Continuous features copy through; each categorical feature expands to
// one indicator column per fitted vocabulary entry. Values outside the
// vocabulary encode as an all-zero block. Labels are not set here.
FeatureMatrix encode(std::span<const ConnectionRecord> records, const FeatureSchema& schema);

// Encode a single record into a preallocated row (width = encoded_width()).
void encode_into(const ConnectionRecord& rec, const FeatureSchema& schema, std::span<double> out);

// Matrix-level feature selection: keeps the encoded expansions of the named
// raw features of `schema`, order preserved.
FeatureMatrix select_features(const FeatureMatrix& m, const FeatureSchema& schema,
                              std::span<const std::string> keep);

// --- label tasks ----------------------------------------------------------

enum class AttackCategory { dos = 0, probe = 1, r2l = 2, u2r = 3 };

std::string_view category_name(AttackCategory c);

// Attack-name -> category table. "normal" is implicit and never listed.
class CategoryMap {
public:
    static CategoryMap builtin();
    static CategoryMap load(const std::string& path);  // tab- or comma-separated name/category lines
    void save(std::ostream& out) const;

    // Throws ParseError for names not in the table (and not "normal").
    AttackCategory category_of(const std::string& attack_name) const;
    bool contains(const std::string& attack_name) const { return table_.count(attack_name) != 0; }
    std::size_t size() const { return table_.size(); }

private:
    std::map<std::string, AttackCategory> table_;
};

struct LabelTask {
    enum class Mode { binary, category };
    Mode mode = Mode::binary;
    CategoryMap map = CategoryMap::builtin();

    static LabelTask binary() { return {Mode::binary, CategoryMap::builtin()}; }
    static LabelTask category() { return {Mode::category, CategoryMap::builtin()}; }

    std::vector<std::string> class_names() const;
};

// Per-record class ids for the task; -1 marks records the task excludes
// (normal traffic in category mode). Unknown attack names fail loudly.
std::vector<int> map_labels(std::span<const ConnectionRecord> records, const LabelTask& task);

// encode + map_labels + drop excluded rows, in one pass.
FeatureMatrix build_matrix(std::span<const ConnectionRecord> records, const FeatureSchema& schema,
                           const LabelTask& task);

// Per-class record counts for a parsed file under a task (reporting aid).
std::map<std::string, std::size_t> class_counts(std::span<const ConnectionRecord> records,
                                                const LabelTask& task);

// --- normalization --------------------------------------------------------

class Normalizer {
public:
    Normalizer() = default;
    Normalizer(std::vector<double> mins, std::vector<double> maxs);

    // Column ranges of the training matrix. Train must be non-empty.
    static Normalizer fit(const FeatureMatrix& train);

    // (v - min) / (max - min); constant columns map to 0; out-of-range test
    // values extend linearly (no clamping). Column-count mismatch raises
    // SchemaError.
    FeatureMatrix apply(const FeatureMatrix& m) const;
    void apply_row(std::span<double> row) const;

    std::size_t cols() const { return mins_.size(); }
    const std::vector<double>& mins() const { return mins_; }
    const std::vector<double>& maxs() const { return maxs_; }

private:
    std::vector<double> mins_, maxs_;
};

// --- inspection -----------------------------------------------------------

void write_matrix_csv(const FeatureMatrix& m, std::ostream& out);

// Keep-list file: one feature name per line, '#' comments allowed.
std::vector<std::string> load_keep_list(const std::string& path);

}  // namespace fogids
