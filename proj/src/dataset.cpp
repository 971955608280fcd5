#include "fogids/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

namespace fogids {

namespace {

constexpr std::string_view kKddFeatureNames[41] = {
    "duration", "protocol_type", "service", "flag", "src_bytes", "dst_bytes", "land",
    "wrong_fragment", "urgent", "hot", "num_failed_logins", "logged_in", "num_compromised",
    "root_shell", "su_attempted", "num_root", "num_file_creations", "num_shells",
    "num_access_files", "num_outbound_cmds", "is_host_login", "is_guest_login", "count",
    "srv_count", "serror_rate", "srv_serror_rate", "rerror_rate", "srv_rerror_rate",
    "same_srv_rate", "diff_srv_rate", "srv_diff_host_rate", "dst_host_count",
    "dst_host_srv_count", "dst_host_same_srv_rate", "dst_host_diff_srv_rate",
    "dst_host_same_src_port_rate", "dst_host_srv_diff_host_rate", "dst_host_serror_rate",
    "dst_host_srv_serror_rate", "dst_host_rerror_rate", "dst_host_srv_rerror_rate"};

bool is_categorical_slot(std::string_view name) {
    return name == "protocol_type" || name == "service" || name == "flag";
}

double parse_continuous(std::string_view field, std::size_t line, std::string_view name) {
    double v = 0.0;
    const char* first = field.data();
    const char* last = field.data() + field.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last)
        throw ParseError(line, "non-numeric value '" + std::string(field) + "' for feature " +
                                   std::string(name));
    if (!std::isfinite(v))
        throw ParseError(line, "non-finite value for feature " + std::string(name));
    if (v < 0.0)
        throw ParseError(line, "negative value for feature " + std::string(name));
    return v;
}

void split_csv(std::string_view line, std::vector<std::string_view>& out) {
    out.clear();
    std::size_t start = 0;
    while (true) {
        std::size_t pos = line.find(',', start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            return;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

}  // namespace

FeatureSchema::FeatureSchema(std::vector<FeatureDesc> features) : features_(std::move(features)) {}

FeatureSchema FeatureSchema::kdd41() {
    std::vector<FeatureDesc> fs;
    fs.reserve(41);
    for (auto name : kKddFeatureNames) {
        FeatureDesc d;
        d.name = std::string(name);
        d.kind = is_categorical_slot(name) ? FeatureKind::categorical : FeatureKind::continuous;
        fs.push_back(std::move(d));
    }
    return FeatureSchema(std::move(fs));
}

std::vector<std::string> FeatureSchema::default_keep38() {
    static const std::set<std::string_view> dropped = {"num_outbound_cmds", "is_host_login",
                                                       "urgent"};
    std::vector<std::string> keep;
    for (auto name : kKddFeatureNames)
        if (!dropped.count(name)) keep.emplace_back(name);
    return keep;
}

int FeatureSchema::index_of(std::string_view name) const {
    for (std::size_t i = 0; i < features_.size(); ++i)
        if (features_[i].name == name) return static_cast<int>(i);
    return -1;
}

void FeatureSchema::fit_vocabularies(std::span<const ConnectionRecord> train) {
    for (std::size_t f = 0; f < features_.size(); ++f) {
        if (features_[f].kind != FeatureKind::categorical) continue;
        std::set<std::string> values;
        for (const auto& rec : train) {
            if (rec.raw.size() != features_.size())
                throw SchemaError("record arity " + std::to_string(rec.raw.size()) +
                                  " does not match schema size " + std::to_string(features_.size()));
            values.insert(rec.raw[f]);
        }
        features_[f].vocabulary.assign(values.begin(), values.end());
    }
}

bool FeatureSchema::fitted() const {
    for (const auto& f : features_)
        if (f.kind == FeatureKind::categorical && f.vocabulary.empty()) return false;
    return true;
}

FeatureSchema FeatureSchema::subset(std::span<const std::string> keep) const {
    std::set<std::string_view> wanted;
    for (const auto& name : keep) {
        if (index_of(name) < 0) throw SchemaError("unknown feature name '" + name + "'");
        wanted.insert(name);
    }
    std::vector<FeatureDesc> fs;
    for (const auto& f : features_)
        if (wanted.count(f.name)) fs.push_back(f);
    return FeatureSchema(std::move(fs));
}

std::size_t FeatureSchema::encoded_width() const {
    std::size_t w = 0;
    for (const auto& f : features_)
        w += f.kind == FeatureKind::categorical ? f.vocabulary.size() : 1;
    return w;
}

std::vector<std::string> FeatureSchema::encoded_column_names() const {
    std::vector<std::string> names;
    names.reserve(encoded_width());
    for (const auto& f : features_) {
        if (f.kind == FeatureKind::categorical) {
            for (const auto& v : f.vocabulary) names.push_back(f.name + "=" + v);
        } else {
            names.push_back(f.name);
        }
    }
    return names;
}

std::uint64_t FeatureMatrix::schema_hash() const {
    Fnv1a h;
    h.update_u64(cols);
    for (const auto& c : col_names) h.update(c);
    h.update_u64(class_names.size());
    for (const auto& c : class_names) h.update(c);
    return h.digest();
}

std::vector<ConnectionRecord> parse_records(std::istream& in, const FeatureSchema& schema) {
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_records(std::string_view(text), schema);
}

std::vector<ConnectionRecord> parse_records(std::string_view text, const FeatureSchema& schema) {
    const std::size_t n_features = schema.size();
    std::vector<ConnectionRecord> records;
    std::vector<std::string_view> fields;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t eol = text.find('\n', pos);
        std::string_view line =
            eol == std::string_view::npos ? text.substr(pos) : text.substr(pos, eol - pos);
        pos = eol == std::string_view::npos ? text.size() : eol + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) throw ParseError(line_no, "empty line");

        split_csv(line, fields);
        if (fields.size() != n_features + 1 && fields.size() != n_features + 2)
            throw ParseError(line_no, "expected " + std::to_string(n_features + 1) + " or " +
                                          std::to_string(n_features + 2) + " fields, got " +
                                          std::to_string(fields.size()));

        ConnectionRecord rec;
        rec.raw.reserve(n_features);
        rec.continuous.assign(n_features, std::numeric_limits<double>::quiet_NaN());
        for (std::size_t f = 0; f < n_features; ++f) {
            const auto& desc = schema.features()[f];
            rec.raw.emplace_back(fields[f]);
            if (desc.kind == FeatureKind::continuous)
                rec.continuous[f] = parse_continuous(fields[f], line_no, desc.name);
        }
        rec.label = std::string(fields[n_features]);
        if (rec.label.empty()) throw ParseError(line_no, "empty label");
        if (fields.size() == n_features + 2) {
            int d = 0;
            auto fv = fields[n_features + 1];
            auto [ptr, ec] = std::from_chars(fv.data(), fv.data() + fv.size(), d);
            if (ec != std::errc() || ptr != fv.data() + fv.size())
                throw ParseError(line_no, "non-integer difficulty '" + std::string(fv) + "'");
            if (d < 0 || d > 21)
                throw ParseError(line_no, "difficulty " + std::to_string(d) + " out of range 0-21");
            rec.difficulty = d;
        }
        records.push_back(std::move(rec));
    }
    return records;
}

std::vector<ConnectionRecord> parse_file(const std::string& path, const FeatureSchema& schema) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open '" + path + "'");
    return parse_records(in, schema);
}

void encode_into(const ConnectionRecord& rec, const FeatureSchema& schema, std::span<double> out) {
    const auto& features = schema.features();
    if (rec.raw.size() != features.size())
        throw SchemaError("record arity " + std::to_string(rec.raw.size()) +
                          " does not match schema size " + std::to_string(features.size()));
    if (out.size() != schema.encoded_width()) throw SchemaError("output row width mismatch");
    std::size_t col = 0;
    for (std::size_t f = 0; f < features.size(); ++f) {
        const auto& desc = features[f];
        if (desc.kind == FeatureKind::categorical) {
            const auto& vocab = desc.vocabulary;
            auto it = std::lower_bound(vocab.begin(), vocab.end(), rec.raw[f]);
            const std::size_t hit =
                (it != vocab.end() && *it == rec.raw[f]) ? std::size_t(it - vocab.begin()) : vocab.size();
            for (std::size_t v = 0; v < vocab.size(); ++v) out[col + v] = (v == hit) ? 1.0 : 0.0;
            col += vocab.size();
        } else {
            double v = rec.continuous[f];
            if (std::isnan(v)) v = parse_continuous(rec.raw[f], 0, desc.name);
            out[col++] = v;
        }
    }
}

FeatureMatrix encode(std::span<const ConnectionRecord> records, const FeatureSchema& schema) {
    if (!schema.fitted())
        throw SchemaError("schema vocabularies not fitted; call fit_vocabularies on the training split");
    FeatureMatrix m;
    m.rows = records.size();
    m.cols = schema.encoded_width();
    m.col_names = schema.encoded_column_names();
    m.values.resize(m.rows * m.cols);
    for (std::size_t i = 0; i < records.size(); ++i) encode_into(records[i], schema, m.row(i));
    return m;
}

FeatureMatrix select_features(const FeatureMatrix& m, const FeatureSchema& schema,
                              std::span<const std::string> keep) {
    FeatureSchema reduced = schema.subset(keep);
    std::set<std::string> kept_cols;
    for (const auto& n : reduced.encoded_column_names()) kept_cols.insert(n);
    if (m.col_names.size() != m.cols)
        throw SchemaError("matrix lacks column names; cannot select features");

    std::vector<std::size_t> cols;
    std::vector<std::string> names;
    for (std::size_t c = 0; c < m.cols; ++c) {
        if (kept_cols.count(m.col_names[c])) {
            cols.push_back(c);
            names.push_back(m.col_names[c]);
        }
    }
    FeatureMatrix out;
    out.rows = m.rows;
    out.cols = cols.size();
    out.col_names = std::move(names);
    out.labels = m.labels;
    out.class_names = m.class_names;
    out.values.resize(out.rows * out.cols);
    for (std::size_t r = 0; r < m.rows; ++r) {
        auto src = m.row(r);
        auto dst = out.row(r);
        for (std::size_t j = 0; j < cols.size(); ++j) dst[j] = src[cols[j]];
    }
    return out;
}

std::string_view category_name(AttackCategory c) {
    switch (c) {
        case AttackCategory::dos: return "DoS";
        case AttackCategory::probe: return "Probe";
        case AttackCategory::r2l: return "R2L";
        case AttackCategory::u2r: return "U2R";
    }
    return "?";
}

namespace {

const std::map<std::string, AttackCategory>& builtin_category_table() {
    static const std::map<std::string, AttackCategory> table = {
        // denial of service
        {"neptune", AttackCategory::dos}, {"smurf", AttackCategory::dos},
        {"back", AttackCategory::dos}, {"teardrop", AttackCategory::dos},
        {"pod", AttackCategory::dos}, {"land", AttackCategory::dos},
        {"apache2", AttackCategory::dos}, {"udpstorm", AttackCategory::dos},
        {"processtable", AttackCategory::dos}, {"mailbomb", AttackCategory::dos},
        // probing / scanning
        {"satan", AttackCategory::probe}, {"ipsweep", AttackCategory::probe},
        {"nmap", AttackCategory::probe}, {"portsweep", AttackCategory::probe},
        {"mscan", AttackCategory::probe}, {"saint", AttackCategory::probe},
        // remote-to-local
        {"guess_passwd", AttackCategory::r2l}, {"ftp_write", AttackCategory::r2l},
        {"imap", AttackCategory::r2l}, {"phf", AttackCategory::r2l},
        {"multihop", AttackCategory::r2l}, {"warezmaster", AttackCategory::r2l},
        {"warezclient", AttackCategory::r2l}, {"spy", AttackCategory::r2l},
        {"xlock", AttackCategory::r2l}, {"xsnoop", AttackCategory::r2l},
        {"snmpguess", AttackCategory::r2l}, {"snmpgetattack", AttackCategory::r2l},
        {"httptunnel", AttackCategory::r2l}, {"sendmail", AttackCategory::r2l},
        {"named", AttackCategory::r2l}, {"worm", AttackCategory::r2l},
        // user-to-root
        {"buffer_overflow", AttackCategory::u2r}, {"loadmodule", AttackCategory::u2r},
        {"rootkit", AttackCategory::u2r}, {"perl", AttackCategory::u2r},
        {"sqlattack", AttackCategory::u2r}, {"xterm", AttackCategory::u2r},
        {"ps", AttackCategory::u2r},
    };
    return table;
}

std::optional<AttackCategory> category_from_name(std::string_view s) {
    if (s == "DoS" || s == "dos" || s == "DOS") return AttackCategory::dos;
    if (s == "Probe" || s == "probe") return AttackCategory::probe;
    if (s == "R2L" || s == "r2l") return AttackCategory::r2l;
    if (s == "U2R" || s == "u2r") return AttackCategory::u2r;
    return std::nullopt;
}

}  // namespace

CategoryMap CategoryMap::builtin() {
    CategoryMap m;
    m.table_ = builtin_category_table();
    return m;
}

CategoryMap CategoryMap::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open category map '" + path + "'");
    CategoryMap m;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        std::size_t sep = line.find_first_of("\t,");
        if (sep == std::string::npos)
            throw ParseError(line_no, "expected '<attack>\t<category>' in category map");
        std::string name = line.substr(0, sep);
        std::string cat = line.substr(sep + 1);
        auto c = category_from_name(cat);
        if (!c) throw ParseError(line_no, "unknown category '" + cat + "'");
        if (name == "normal") throw ParseError(line_no, "'normal' must not appear in the category map");
        auto [it, inserted] = m.table_.emplace(name, *c);
        if (!inserted && it->second != *c)
            throw ParseError(line_no, "attack '" + name + "' mapped to two categories");
    }
    if (m.table_.empty()) throw ParseError("category map '" + path + "' is empty");
    return m;
}

void CategoryMap::save(std::ostream& out) const {
    for (const auto& [name, cat] : table_) out << name << '\t' << category_name(cat) << '\n';
}

AttackCategory CategoryMap::category_of(const std::string& attack_name) const {
    auto it = table_.find(attack_name);
    if (it == table_.end())
        throw ParseError("unmapped attack name '" + attack_name + "'");
    return it->second;
}

std::vector<std::string> LabelTask::class_names() const {
    if (mode == Mode::binary) return {"normal", "attack"};
    return {"DoS", "Probe", "R2L", "U2R"};
}

std::vector<int> map_labels(std::span<const ConnectionRecord> records, const LabelTask& task) {
    std::vector<int> labels(records.size(), -1);
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& label = records[i].label;
        if (task.mode == LabelTask::Mode::binary) {
            if (label == "normal") {
                labels[i] = 0;
            } else {
                task.map.category_of(label);  // still validated
                labels[i] = 1;
            }
        } else {
            if (label == "normal") continue;  // excluded from the category task
            labels[i] = static_cast<int>(task.map.category_of(label));
        }
    }
    return labels;
}

FeatureMatrix build_matrix(std::span<const ConnectionRecord> records, const FeatureSchema& schema,
                           const LabelTask& task) {
    const std::vector<int> labels = map_labels(records, task);
    std::vector<std::size_t> keep;
    keep.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i)
        if (labels[i] >= 0) keep.push_back(i);

    FeatureMatrix m;
    m.cols = schema.encoded_width();
    m.rows = keep.size();
    m.col_names = schema.encoded_column_names();
    m.class_names = task.class_names();
    m.values.resize(m.rows * m.cols);
    m.labels.resize(m.rows);
    for (std::size_t j = 0; j < keep.size(); ++j) {
        encode_into(records[keep[j]], schema, m.row(j));
        m.labels[j] = labels[keep[j]];
    }
    return m;
}

std::map<std::string, std::size_t> class_counts(std::span<const ConnectionRecord> records,
                                                const LabelTask& task) {
    std::map<std::string, std::size_t> counts;
    const auto names = task.class_names();
    for (const auto& n : names) counts[n] = 0;
    const auto labels = map_labels(records, task);
    for (int l : labels)
        if (l >= 0) ++counts[names[static_cast<std::size_t>(l)]];
    return counts;
}

Normalizer::Normalizer(std::vector<double> mins, std::vector<double> maxs)
    : mins_(std::move(mins)), maxs_(std::move(maxs)) {
    if (mins_.size() != maxs_.size()) throw SchemaError("normalizer min/max size mismatch");
    for (std::size_t c = 0; c < mins_.size(); ++c)
        if (mins_[c] > maxs_[c]) throw SchemaError("normalizer min > max");
}

Normalizer Normalizer::fit(const FeatureMatrix& train) {
    if (train.rows == 0) throw SchemaError("cannot fit normalizer on an empty matrix");
    std::vector<double> mins(train.cols, std::numeric_limits<double>::infinity());
    std::vector<double> maxs(train.cols, -std::numeric_limits<double>::infinity());
    for (std::size_t r = 0; r < train.rows; ++r) {
        auto row = train.row(r);
        for (std::size_t c = 0; c < train.cols; ++c) {
            mins[c] = std::min(mins[c], row[c]);
            maxs[c] = std::max(maxs[c], row[c]);
        }
    }
    return Normalizer(std::move(mins), std::move(maxs));
}

void Normalizer::apply_row(std::span<double> row) const {
    if (row.size() != mins_.size())
        throw SchemaError("normalizer fitted on " + std::to_string(mins_.size()) +
                          " columns, matrix has " + std::to_string(row.size()));
    for (std::size_t c = 0; c < row.size(); ++c) {
        const double range = maxs_[c] - mins_[c];
        row[c] = range == 0.0 ? 0.0 : (row[c] - mins_[c]) / range;
    }
}

FeatureMatrix Normalizer::apply(const FeatureMatrix& m) const {
    if (m.cols != mins_.size())
        throw SchemaError("normalizer fitted on " + std::to_string(mins_.size()) +
                          " columns, matrix has " + std::to_string(m.cols));
    FeatureMatrix out = m;
    for (std::size_t r = 0; r < out.rows; ++r) apply_row(out.row(r));
    return out;
}

void write_matrix_csv(const FeatureMatrix& m, std::ostream& out) {
    for (std::size_t c = 0; c < m.col_names.size(); ++c) {
        if (c) out << ',';
        out << m.col_names[c];
    }
    if (!m.labels.empty()) out << ",label";
    out << '\n';
    char buf[64];
    for (std::size_t r = 0; r < m.rows; ++r) {
        auto row = m.row(r);
        for (std::size_t c = 0; c < m.cols; ++c) {
            if (c) out << ',';
            auto res = std::to_chars(buf, buf + sizeof(buf), row[c]);
            out.write(buf, res.ptr - buf);
        }
        if (!m.labels.empty()) {
            const int l = m.labels[r];
            out << ',' << (l >= 0 && l < static_cast<int>(m.class_names.size())
                               ? m.class_names[static_cast<std::size_t>(l)]
                               : std::to_string(l));
        }
        out << '\n';
    }
}

std::vector<std::string> load_keep_list(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open keep list '" + path + "'");
    std::vector<std::string> names;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        names.push_back(line);
    }
    return names;
}

}  // namespace fogids
