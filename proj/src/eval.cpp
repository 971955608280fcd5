#include "fogids/eval.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "nlohmann/json.hpp"

namespace fogids {

double Metrics::accuracy_from_confusion() const {
    std::size_t diag = 0, total = 0;
    for (std::size_t t = 0; t < n_classes; ++t)
        for (std::size_t p = 0; p < n_classes; ++p) {
            total += at(t, p);
            if (t == p) diag += at(t, p);
        }
    return total ? static_cast<double>(diag) / static_cast<double>(total) : 0.0;
}

Metrics metrics_from_predictions(std::span<const int> truth, std::span<const int> predicted,
                                 std::size_t n_classes) {
    if (truth.size() != predicted.size())
        throw std::invalid_argument("truth/prediction size mismatch");
    if (truth.empty()) throw std::invalid_argument("empty test set");

    Metrics m;
    m.n = truth.size();
    m.n_classes = n_classes;
    m.confusion.assign(n_classes * n_classes, 0);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const auto t = static_cast<std::size_t>(truth[i]);
        const auto p = static_cast<std::size_t>(predicted[i]);
        if (t >= n_classes || p >= n_classes) throw std::invalid_argument("label out of range");
        ++m.confusion[t * n_classes + p];
    }
    m.accuracy = m.accuracy_from_confusion();

    m.precision.assign(n_classes, 0.0);
    m.recall.assign(n_classes, 0.0);
    for (std::size_t c = 0; c < n_classes; ++c) {
        std::size_t tp = m.at(c, c), row = 0, col = 0;
        for (std::size_t j = 0; j < n_classes; ++j) {
            row += m.at(c, j);
            col += m.at(j, c);
        }
        m.precision[c] = col ? static_cast<double>(tp) / static_cast<double>(col) : 0.0;
        m.recall[c] = row ? static_cast<double>(tp) / static_cast<double>(row) : 0.0;
    }

    if (n_classes == 2) {
        // class 0 = normal, class 1 = attack
        const std::size_t normals = m.at(0, 0) + m.at(0, 1);
        m.false_positive_rate =
            normals ? static_cast<double>(m.at(0, 1)) / static_cast<double>(normals) : 0.0;
    }
    return m;
}

Metrics evaluate(const Model& model, const FeatureMatrix& test) {
    if (test.rows == 0) throw std::invalid_argument("empty test set");
    if (test.cols != model.input_width())
        throw SchemaError("test matrix width " + std::to_string(test.cols) +
                          " does not match model input width " +
                          std::to_string(model.input_width()));
    if (test.labels.size() != test.rows) throw std::invalid_argument("test labels missing");

    const auto t0 = std::chrono::steady_clock::now();
    const auto predicted = predict_labels(model, test);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    Metrics m = metrics_from_predictions(test.labels, predicted, model.n_classes());
    m.predict_seconds = secs;
    return m;
}

// --- model specs ----------------------------------------------------------

namespace {

using nlohmann::json;

json tree_to_json(const TreeParams& t) {
    return json{{"max_depth", t.max_depth},
                {"min_samples_split", t.min_samples_split},
                {"criterion", t.criterion == SplitCriterion::gini ? "gini" : "entropy"}};
}

TreeParams tree_from_json(const json& j) {
    TreeParams t;
    t.max_depth = j.value("max_depth", t.max_depth);
    t.min_samples_split = j.value("min_samples_split", t.min_samples_split);
    const std::string c = j.value("criterion", "gini");
    if (c != "gini" && c != "entropy") throw ParseError("criterion must be gini|entropy");
    t.criterion = c == "gini" ? SplitCriterion::gini : SplitCriterion::entropy;
    return t;
}

json spec_to_json(const ModelSpec& s) {
    json j{{"kind", s.kind}};
    if (s.kind == "dt" || s.kind == "bagging" || s.kind == "rf" || s.kind == "adaboost")
        j["tree"] = tree_to_json(s.tree);
    if (s.kind == "knn") j["k"] = s.knn.k;
    if (s.kind == "mlp") {
        j["hidden"] = s.mlp.hidden;
        j["learning_rate"] = s.mlp.learning_rate;
        j["epochs"] = s.mlp.epochs;
        j["batch_size"] = s.mlp.batch_size;
        j["grad_clip"] = s.mlp.grad_clip;
    }
    if (s.kind == "bagging" || s.kind == "rf" || s.kind == "adaboost")
        j["n_estimators"] = s.n_estimators;
    if (s.kind == "bagging") j["bootstrap"] = s.bootstrap;
    if (s.kind == "rf") j["m_features"] = s.m_features;
    if (s.kind == "voting") {
        j["rule"] = std::string(fusion_rule_name(s.rule));
        json members = json::array();
        for (const auto& m : s.members) members.push_back(spec_to_json(m));
        j["members"] = members;
    }
    return j;
}

ModelSpec spec_from_json(const json& j) {
    ModelSpec s;
    s.kind = j.value("kind", "bagging");
    if (j.contains("tree")) s.tree = tree_from_json(j["tree"]);
    if (j.contains("k")) s.knn.k = j["k"].get<int>();
    if (j.contains("hidden")) s.mlp.hidden = j["hidden"].get<std::vector<int>>();
    s.mlp.learning_rate = j.value("learning_rate", s.mlp.learning_rate);
    s.mlp.epochs = j.value("epochs", s.mlp.epochs);
    s.mlp.batch_size = j.value("batch_size", s.mlp.batch_size);
    s.mlp.grad_clip = j.value("grad_clip", s.mlp.grad_clip);
    s.n_estimators = j.value("n_estimators", s.n_estimators);
    s.bootstrap = j.value("bootstrap", s.bootstrap);
    s.m_features = j.value("m_features", s.m_features);
    if (j.contains("rule")) {
        const auto r = fusion_rule_from_name(j["rule"].get<std::string>());
        if (!r) throw ParseError("unknown fusion rule '" + j["rule"].get<std::string>() + "'");
        s.rule = *r;
    }
    if (j.contains("members"))
        for (const auto& m : j["members"]) s.members.push_back(spec_from_json(m));
    return s;
}

}  // namespace

ModelSpec ModelSpec::from_json_text(const std::string& text) {
    try {
        return spec_from_json(json::parse(text));
    } catch (const json::exception& e) {
        throw ParseError(std::string("model spec: ") + e.what());
    }
}

std::string ModelSpec::to_json_text() const { return spec_to_json(*this).dump(); }

std::string ModelSpec::describe() const {
    std::ostringstream os;
    if (kind == "dt") {
        os << "depth=" << tree.max_depth << " min_split=" << tree.min_samples_split;
    } else if (kind == "knn") {
        os << "k=" << knn.k;
    } else if (kind == "mlp") {
        os << "hidden=";
        for (std::size_t i = 0; i < mlp.hidden.size(); ++i)
            os << (i ? "x" : "") << mlp.hidden[i];
        os << " lr=" << mlp.learning_rate << " epochs=" << mlp.epochs;
    } else if (kind == "bagging") {
        os << "n=" << n_estimators << " depth=" << tree.max_depth
           << (bootstrap ? "" : " no-bootstrap");
    } else if (kind == "rf") {
        os << "n=" << n_estimators << " m=" << m_features << " depth=" << tree.max_depth;
    } else if (kind == "adaboost") {
        os << "n=" << n_estimators << " depth=" << tree.max_depth;
    } else if (kind == "voting") {
        os << "rule=" << fusion_rule_name(rule) << " members=";
        for (std::size_t i = 0; i < members.size(); ++i)
            os << (i ? "+" : "") << members[i].kind;
    }
    return os.str();
}

std::shared_ptr<Model> train_any(const FeatureMatrix& train, const ModelSpec& spec,
                                 std::uint64_t seed) {
    if (spec.kind == "dt") return train_tree(train, spec.tree);
    if (spec.kind == "knn") return train_knn(train, spec.knn);
    if (spec.kind == "mlp") {
        MlpParams p = spec.mlp;
        p.seed = seed;
        return train_mlp(train, p);
    }
    if (spec.kind == "bagging")
        return train_bagging(train, BaggingParams{spec.tree, spec.n_estimators, spec.bootstrap},
                             seed);
    if (spec.kind == "rf")
        return train_random_forest(
            train, RandomForestParams{spec.tree, spec.n_estimators, spec.m_features}, seed);
    if (spec.kind == "adaboost")
        return train_adaboost(train, AdaBoostParams{spec.tree, spec.n_estimators}, seed);
    if (spec.kind == "voting") {
        if (spec.members.size() < 2) throw TrainingError("voting spec needs >= 2 members");
        std::vector<std::shared_ptr<Model>> members;
        for (std::size_t i = 0; i < spec.members.size(); ++i)
            members.push_back(train_any(train, spec.members[i], splitmix64(seed ^ (i + 1))));
        return train_voting(std::move(members), spec.rule);
    }
    throw TrainingError("unknown model kind '" + spec.kind + "'");
}

// --- experiments ------------------------------------------------------------

std::vector<ReportRow> run_experiment_on(const ExperimentSpec& spec, const FeatureMatrix& train,
                                         std::span<const NamedMatrix> tests) {
    std::vector<ReportRow> rows;
    ReportRow base;
    base.experiment = spec.name;
    base.model = spec.model.kind;
    base.hyperparameters = spec.model.describe();
    base.seed = spec.seed;

    std::shared_ptr<Model> model;
    double train_seconds = 0.0;
    try {
        const auto t0 = std::chrono::steady_clock::now();
        model = train_any(train, spec.model, spec.seed);
        train_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    } catch (const std::exception& e) {
        base.error = e.what();
        rows.push_back(base);
        return rows;
    }

    const bool sweep =
        spec.rule_sweep && spec.model.kind == "voting" && spec.model.rule != FusionRule::weighted_sum;
    auto* voting = dynamic_cast<EnsembleModel*>(model.get());

    for (const auto& test : tests) {
        auto eval_one = [&](const Model& m, std::string_view rule_name) {
            ReportRow row = base;
            row.dataset = test.name;
            row.rule = std::string(rule_name);
            row.train_seconds = train_seconds;
            try {
                const Metrics metrics = evaluate(m, test.matrix);
                row.accuracy = metrics.accuracy;
                row.false_positive_rate = metrics.false_positive_rate;
                row.predict_seconds = metrics.predict_seconds;
            } catch (const std::exception& e) {
                row.error = e.what();
            }
            rows.push_back(std::move(row));
        };

        if (sweep && voting) {
            for (FusionRule rule : kAllFusionRules) {
                if (rule == FusionRule::weighted_sum) continue;  // needs explicit weights
                auto variant = train_voting(voting->members(), rule);
                eval_one(*variant, fusion_rule_name(rule));
            }
        } else {
            eval_one(*model,
                     spec.model.kind == "voting" ? fusion_rule_name(spec.model.rule) : "");
        }
    }
    return rows;
}

std::vector<ReportRow> run_experiment(const ExperimentSpec& spec) {
    const FeatureSchema base = FeatureSchema::kdd41();
    const LabelTask task =
        spec.task == LabelTask::Mode::binary ? LabelTask::binary() : LabelTask::category();

    const auto train_records = parse_file(spec.train_file, base);
    const auto pre = StagePreprocessor::fit(train_records, base, spec.preprocess.keep_list,
                                            spec.preprocess.normalize, task);
    const FeatureMatrix train = pre.transform(train_records);

    std::vector<NamedMatrix> tests;
    for (const auto& f : spec.test_files) {
        const auto records = parse_file(f, base);
        tests.push_back({f, pre.transform(records)});
    }
    return run_experiment_on(spec, train, tests);
}

// --- reports ------------------------------------------------------------------

namespace {

std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

std::vector<std::string> csv_split(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(std::move(cur));
    return out;
}

std::string num(double v) {
    if (std::isnan(v)) return "";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

constexpr std::string_view kCsvHeader =
    "experiment,model,hyperparameters,seed,dataset,rule,accuracy,fpr,train_seconds,"
    "predict_seconds,error";

}  // namespace

void write_report_csv(std::span<const ReportRow> rows, std::ostream& out) {
    out << kCsvHeader << '\n';
    for (const auto& r : rows) {
        out << csv_escape(r.experiment) << ',' << csv_escape(r.model) << ','
            << csv_escape(r.hyperparameters) << ',' << r.seed << ',' << csv_escape(r.dataset)
            << ',' << csv_escape(r.rule) << ',' << num(r.accuracy) << ','
            << num(r.false_positive_rate) << ',' << num(r.train_seconds) << ','
            << num(r.predict_seconds) << ',' << csv_escape(r.error) << '\n';
    }
}

std::vector<ReportRow> read_report_csv(std::istream& in) {
    std::vector<ReportRow> rows;
    std::string line;
    if (!std::getline(in, line)) return rows;
    if (line != kCsvHeader) throw ParseError("unexpected report header");
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto f = csv_split(line);
        if (f.size() != 11) throw ParseError(line_no, "expected 11 report columns");
        ReportRow r;
        r.experiment = f[0];
        r.model = f[1];
        r.hyperparameters = f[2];
        r.seed = std::stoull(f[3]);
        r.dataset = f[4];
        r.rule = f[5];
        r.accuracy = f[6].empty() ? 0.0 : std::stod(f[6]);
        r.false_positive_rate =
            f[7].empty() ? std::numeric_limits<double>::quiet_NaN() : std::stod(f[7]);
        r.train_seconds = f[8].empty() ? 0.0 : std::stod(f[8]);
        r.predict_seconds = f[9].empty() ? 0.0 : std::stod(f[9]);
        r.error = f[10];
        rows.push_back(std::move(r));
    }
    return rows;
}

void write_report_summary(std::span<const ReportRow> rows, std::ostream& out) {
    out << "| model | hyperparameters | dataset | rule | accuracy | fpr | train s | predict s |\n";
    out << "|---|---|---|---|---|---|---|---|\n";
    for (const auto& r : rows) {
        out << "| " << r.model << " | " << r.hyperparameters << " | " << r.dataset << " | "
            << r.rule << " | ";
        if (r.failed())
            out << "FAILED: " << r.error << " | | | |\n";
        else
            out << num(r.accuracy * 100.0) << "% | " << num(r.false_positive_rate) << " | "
                << num(r.train_seconds) << " | " << num(r.predict_seconds) << " |\n";
    }
}

void write_accuracy_data(std::span<const ReportRow> rows, std::ostream& out) {
    for (const auto& r : rows) {
        if (r.failed()) {
            out << r.model << (r.rule.empty() ? "" : "_" + r.rule) << " failed\n";
            continue;
        }
        out << r.model << (r.rule.empty() ? "" : "_" + r.rule) << ' ' << num(r.accuracy * 100.0)
            << '\n';
    }
}

}  // namespace fogids
