#include <filesystem>
#include <fstream>
#include <future>
#include <set>

#include "doctest.h"
#include "fixture_models.hpp"
#include "fogids/netsvc.hpp"
#include "testutil.hpp"

using namespace fogids;
using testutil::FixtureData;

TEST_SUITE_BEGIN("netsvc");

namespace {

WireMessage random_message(Rng& rng) {
    WireMessage m;
    const auto kinds = std::vector<MsgKind>{MsgKind::record_submit, MsgKind::anomaly_forward,
                                            MsgKind::classify_response, MsgKind::detect_response,
                                            MsgKind::alert_event, MsgKind::health, MsgKind::error};
    m.kind = kinds[rng.below(kinds.size())];
    m.record_id = rng.next_u64() % 1000000;

    auto random_text = [&rng] {
        static const std::string alphabet =
            "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 =\\\t\r\n_.,:-";
        std::string s;
        const auto len = rng.below(24);
        for (std::size_t i = 0; i < len; ++i) s += alphabet[rng.below(alphabet.size())];
        return s;
    };

    switch (m.kind) {
        case MsgKind::record_submit:
        case MsgKind::anomaly_forward:
            m.fields["features"] = random_text();
            break;
        case MsgKind::classify_response: {
            m.fields["category"] = "DoS";
            std::string scores;
            for (int c = 0; c < 4; ++c) {
                if (c) scores += ',';
                scores += format_double(rng.unit());
            }
            m.fields["scores"] = scores;
            break;
        }
        case MsgKind::detect_response:
            m.fields["decision"] = rng.below(2) ? "anomaly" : "normal";
            m.fields["score"] = format_double(rng.unit());
            break;
        case MsgKind::alert_event:
            m.fields["level"] = "categorized";
            m.fields["category"] = "Probe";
            m.fields["ts"] = iso8601_now();
            m.fields["model"] = random_text();
            break;
        case MsgKind::health:
            break;
        case MsgKind::error:
            m.fields["code"] = std::string(wire_error_name(WireErrorCode::retry));
            m.fields["detail"] = random_text();
            break;
    }
    // sprinkle metadata with awkward characters
    const auto extras = rng.below(3);
    for (std::size_t i = 0; i < extras; ++i)
        m.fields["meta" + std::to_string(i)] = random_text();
    return m;
}

struct TempSinks {
    std::filesystem::path dir = testutil::temp_dir("netsvc");
    std::string fog_alerts = (dir / "fog_alerts.log").string();
    std::string cloud_alerts = (dir / "cloud_alerts.log").string();
    ~TempSinks() { std::filesystem::remove_all(dir); }
};

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
}

WireErrorCode code_of(const WireMessage& reply) {
    REQUIRE(reply.kind == MsgKind::error);
    const auto code = wire_error_from_name(reply.field("code"));
    REQUIRE(code.has_value());
    return *code;
}

WireMessage submit_record(const ConnectionRecord& rec, std::uint64_t id, const std::string& host,
                          std::uint16_t port) {
    WireMessage m;
    m.kind = MsgKind::record_submit;
    m.record_id = id;
    m.fields["features"] = join_features(rec);
    return request_once(host, port, m);
}

}  // namespace

TEST_CASE("wire: health message round-trips byte-identically") {
    WireMessage m;
    m.kind = MsgKind::health;
    m.record_id = 0;
    const auto bytes = encode_message(m);
    CHECK(bytes == "FOGIDS/1 HEALTH 0");
    const auto back = decode_message(bytes);
    CHECK(back == m);
    CHECK(encode_message(back) == bytes);
}

TEST_CASE("wire: random valid messages round-trip exactly") {
    Rng rng(404);
    for (int i = 0; i < 500; ++i) {
        const auto m = random_message(rng);
        const auto bytes = encode_message(m);
        const auto back = decode_message(bytes);
        CHECK(back == m);
        CHECK(encode_message(back) == bytes);  // canonical: one byte sequence per message
    }
}

TEST_CASE("wire: escaping handles every special character") {
    const std::string nasty = "a b\\c=d\te\rf\ng,h";
    const auto escaped = escape_value(nasty);
    CHECK(escaped.find(' ') == std::string::npos);
    CHECK(escaped.find('\n') == std::string::npos);
    CHECK(unescape_value(escaped) == nasty);
}

TEST_CASE("wire: size boundary is exact") {
    WireMessage m;
    m.kind = MsgKind::health;
    m.record_id = 123456;
    m.fields["pad"] = "";
    const std::size_t prefix = encode_message(m).size();
    const std::size_t limit = 128;
    m.fields["pad"] = std::string(limit - prefix, 'x');
    std::string bytes = encode_message(m);
    REQUIRE(bytes.size() == limit);
    CHECK(decode_message(bytes, limit).fields.at("pad").size() == limit - prefix);

    m.fields["pad"] += "x";
    const auto over = encode_message(m);
    REQUIRE(over.size() == limit + 1);
    try {
        decode_message(over, limit);
        FAIL("expected oversize");
    } catch (const WireError& e) {
        CHECK(e.code() == WireErrorCode::oversize);
    }
}

TEST_CASE("wire: each malformed shape has its own error code") {
    auto code_for = [](const std::string& line) {
        try {
            decode_message(line);
            return WireErrorCode{};
        } catch (const WireError& e) {
            return e.code();
        }
    };
    CHECK(code_for("GARBAGE/1 HEALTH 0") == WireErrorCode::bad_magic);
    CHECK(code_for("") == WireErrorCode::bad_magic);
    CHECK(code_for("FOGIDS/2 HEALTH 0") == WireErrorCode::bad_version);
    CHECK(code_for("FOGIDS/1 NO_SUCH_KIND 0") == WireErrorCode::unknown_kind);
    CHECK(code_for("FOGIDS/1 HEALTH abc") == WireErrorCode::bad_id);
    CHECK(code_for("FOGIDS/1 HEALTH 0 k=\\q") == WireErrorCode::bad_escape);
    CHECK(code_for("FOGIDS/1 HEALTH 0 k=a\\") == WireErrorCode::bad_escape);
    CHECK(code_for("FOGIDS/1 DETECT_RESPONSE 0 decision=normal") == WireErrorCode::missing_field);
    CHECK(code_for("FOGIDS/1 HEALTH 0 k=1 k=2") == WireErrorCode::duplicate_key);
    CHECK(code_for("FOGIDS/1 HEALTH 0 k=a=b") == WireErrorCode::bad_value);
    CHECK(code_for("FOGIDS/1 DETECT_RESPONSE 0 decision=maybe score=0.5") ==
          WireErrorCode::bad_value);
    CHECK(code_for("FOGIDS/1 RECORD_SUBMIT 7 features=1,2,3") == WireErrorCode{});  // valid
}

TEST_CASE("wire: doubles survive the shortest round-trip format bit for bit") {
    Rng rng(11);
    for (int i = 0; i < 1000; ++i) {
        const double v = (rng.unit() - 0.5) * std::pow(10.0, double(rng.below(17)) - 8.0);
        CHECK(parse_double(format_double(v)) == v);
    }
    CHECK(parse_double(format_double(0.0)) == 0.0);
}

TEST_CASE("services: offline and online decisions are bit-identical") {
    TempSinks sinks;
    const auto& stage1 = testutil::shared_stage1();
    const auto& stage2 = testutil::shared_stage2();

    ServiceConfig cloud_cfg;
    cloud_cfg.alert_path = sinks.cloud_alerts;
    CloudService cloud(cloud_cfg, stage2);
    cloud.start();

    ServiceConfig fog_cfg;
    fog_cfg.peer_host = "127.0.0.1";
    fog_cfg.peer_port = cloud.port();
    fog_cfg.alert_path = sinks.fog_alerts;
    FogService fog(fog_cfg, stage1);
    fog.start();

    std::vector<ConnectionRecord> records(FixtureData::get().testp.begin(),
                                          FixtureData::get().testp.begin() + 300);
    const auto offline = run_pipeline(records, {}, stage1, stage2);
    const auto summary = replay_records(records, "127.0.0.1", fog.port());

    CHECK_FALSE(summary.partial);
    REQUIRE(summary.submitted == records.size());
    REQUIRE(summary.decisions.size() == records.size());
    std::size_t offline_anomalies = 0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        CHECK(summary.decisions[i].record_id == offline[i].record_id);
        CHECK(summary.decisions[i].anomaly == offline[i].stage1.anomaly);
        CHECK(summary.decisions[i].attack_score == offline[i].stage1.attack_score);
        if (offline[i].stage1.anomaly) ++offline_anomalies;
    }
    CHECK(summary.anomaly == offline_anomalies);
    CHECK(summary.normal == records.size() - offline_anomalies);
    CHECK(summary.categorized == offline_anomalies);

    // cloud alert sink carries one categorized alert per anomaly, matching
    // the offline categories
    std::map<std::uint64_t, std::string> offline_cat;
    for (const auto& v : offline)
        if (v.stage2)
            offline_cat[v.record_id] =
                stage2.pre.class_names()[static_cast<std::size_t>(v.stage2->category)];
    const auto cloud_lines = read_lines(sinks.cloud_alerts);
    CHECK(cloud_lines.size() == offline_anomalies);
    for (const auto& line : cloud_lines) {
        const auto msg = decode_message(line);
        CHECK(msg.kind == MsgKind::alert_event);
        CHECK(msg.field("level") == "categorized");
        CHECK(msg.field("category") == offline_cat.at(msg.record_id));
    }
    const auto fog_lines = read_lines(sinks.fog_alerts);
    CHECK(fog_lines.size() == offline_anomalies);

    fog.stop();
    cloud.stop();
}

TEST_CASE("services: known-normal record is answered and never forwarded") {
    TempSinks sinks;
    const auto& stage1 = testutil::shared_stage1();

    // pick a record the model classifies normal, offline
    const ConnectionRecord* normal_rec = nullptr;
    for (const auto& rec : FixtureData::get().testp) {
        if (!stage1_detect(stage1, rec).anomaly) {
            normal_rec = &rec;
            break;
        }
    }
    REQUIRE(normal_rec != nullptr);

    ServiceConfig fog_cfg;
    fog_cfg.peer_host = "127.0.0.1";
    fog_cfg.peer_port = 1;  // nothing listens there; must not matter for normals
    fog_cfg.alert_path = sinks.fog_alerts;
    FogService fog(fog_cfg, stage1);
    fog.start();

    const auto reply = submit_record(*normal_rec, 9, "127.0.0.1", fog.port());
    CHECK(reply.kind == MsgKind::detect_response);
    CHECK(reply.field("decision") == "normal");

    const auto counters = fog.counters();
    CHECK(counters.submitted == 1);
    CHECK(counters.normal == 1);
    CHECK(counters.anomaly == 0);
    CHECK(counters.forwarded == 0);
    CHECK(read_lines(sinks.fog_alerts).empty());
    fog.stop();
}

TEST_CASE("services: wrong protocol version gets a version error reply") {
    TempSinks sinks;
    ServiceConfig fog_cfg;
    fog_cfg.peer_host = "127.0.0.1";
    fog_cfg.peer_port = 1;
    fog_cfg.alert_path = sinks.fog_alerts;
    FogService fog(fog_cfg, testutil::shared_stage1());
    fog.start();

    WireMessage m;
    m.kind = MsgKind::health;
    m.version = 2;
    const auto reply = request_once("127.0.0.1", fog.port(), m);
    CHECK(code_of(reply) == WireErrorCode::bad_version);
    fog.stop();
}

TEST_CASE("services: cloud down still alerts locally and queues the forward") {
    TempSinks sinks;
    const auto& stage1 = testutil::shared_stage1();

    const ConnectionRecord* anomalous = nullptr;
    for (const auto& rec : FixtureData::get().testp) {
        if (stage1_detect(stage1, rec).anomaly) {
            anomalous = &rec;
            break;
        }
    }
    REQUIRE(anomalous != nullptr);

    ServiceConfig fog_cfg;
    fog_cfg.peer_host = "127.0.0.1";
    fog_cfg.peer_port = 1;  // dead peer
    fog_cfg.alert_path = sinks.fog_alerts;
    FogService fog(fog_cfg, stage1);
    fog.start();

    const auto reply = submit_record(*anomalous, 41, "127.0.0.1", fog.port());
    CHECK(reply.kind == MsgKind::detect_response);
    CHECK(reply.field("decision") == "anomaly");

    // alert written even though the forward cannot be delivered
    CHECK(read_lines(sinks.fog_alerts).size() == 1);
    const auto msg = decode_message(read_lines(sinks.fog_alerts)[0]);
    CHECK(msg.record_id == 41);
    CHECK(msg.field("level") == "anomaly");

    const auto counters = fog.counters();
    CHECK(counters.anomaly == 1);
    CHECK(counters.categorized == 0);
    fog.stop();
}

TEST_CASE("services: full forward queue refuses submissions with a retry error") {
    TempSinks sinks;
    const auto& stage1 = testutil::shared_stage1();

    const ConnectionRecord* anomalous = nullptr;
    for (const auto& rec : FixtureData::get().testp) {
        if (stage1_detect(stage1, rec).anomaly) {
            anomalous = &rec;
            break;
        }
    }
    REQUIRE(anomalous != nullptr);

    ServiceConfig fog_cfg;
    fog_cfg.peer_host = "127.0.0.1";
    fog_cfg.peer_port = 1;  // dead peer: the queue can only grow
    fog_cfg.alert_path = sinks.fog_alerts;
    fog_cfg.queue_capacity = 2;
    FogService fog(fog_cfg, stage1);
    fog.start();

    CHECK(submit_record(*anomalous, 1, "127.0.0.1", fog.port()).kind ==
          MsgKind::detect_response);
    CHECK(submit_record(*anomalous, 2, "127.0.0.1", fog.port()).kind ==
          MsgKind::detect_response);
    const auto refused = submit_record(*anomalous, 3, "127.0.0.1", fog.port());
    CHECK(code_of(refused) == WireErrorCode::retry);
    CHECK(fog.counters().refused == 1);
    CHECK(read_lines(sinks.fog_alerts).size() == 2);  // the refused record was not processed
    fog.stop();
}

TEST_CASE("services: concurrent clients see no cross-talk") {
    TempSinks sinks;
    const auto& stage1 = testutil::shared_stage1();
    const auto& stage2 = testutil::shared_stage2();

    ServiceConfig cloud_cfg;
    cloud_cfg.alert_path = sinks.cloud_alerts;
    CloudService cloud(cloud_cfg, stage2);
    cloud.start();

    ServiceConfig fog_cfg;
    fog_cfg.peer_host = "127.0.0.1";
    fog_cfg.peer_port = cloud.port();
    fog_cfg.alert_path = sinks.fog_alerts;
    FogService fog(fog_cfg, stage1);
    fog.start();

    const auto& records = FixtureData::get().testp;
    const auto offline = run_pipeline(std::span(records.data(), 200), {}, stage1, stage2);

    auto worker = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const auto reply = submit_record(records[i], i + 1, "127.0.0.1", fog.port());
            if (reply.kind != MsgKind::detect_response) return false;
            if (reply.record_id != i + 1) return false;
            const bool anomaly = reply.field("decision") == "anomaly";
            if (anomaly != offline[i].stage1.anomaly) return false;
        }
        return true;
    };
    auto a = std::async(std::launch::async, worker, std::size_t(0), std::size_t(100));
    auto b = std::async(std::launch::async, worker, std::size_t(100), std::size_t(200));
    CHECK(a.get());
    CHECK(b.get());
    fog.stop();
    cloud.stop();
}

TEST_CASE("services: malformed input never kills the connection or the service") {
    TempSinks sinks;
    ServiceConfig cloud_cfg;
    cloud_cfg.alert_path = sinks.cloud_alerts;
    CloudService cloud(cloud_cfg, testutil::shared_stage2());
    cloud.start();

    // one connection, a parade of malformed lines, each with its own error
    // code, then a healthy health check on the same connection
    const std::vector<std::pair<std::string, WireErrorCode>> cases = {
        {"GARBAGE/1 HEALTH 0", WireErrorCode::bad_magic},
        {"FOGIDS/9 HEALTH 0", WireErrorCode::bad_version},
        {"FOGIDS/1 WHAT 0", WireErrorCode::unknown_kind},
        {"FOGIDS/1 HEALTH xyz", WireErrorCode::bad_id},
        {"FOGIDS/1 HEALTH 0 k=\\z", WireErrorCode::bad_escape},
        {"FOGIDS/1 ANOMALY_FORWARD 4", WireErrorCode::missing_field},
        {"FOGIDS/1 HEALTH 0 a=1 a=2", WireErrorCode::duplicate_key},
    };
    RawClient client("127.0.0.1", cloud.port());
    for (const auto& [bad, code] : cases) {
        const auto reply = decode_message(client.round_trip(bad));
        CHECK(code_of(reply) == code);
    }
    WireMessage health;
    health.kind = MsgKind::health;
    const auto echo = client.request(health);
    CHECK(echo.kind == MsgKind::health);
    CHECK(echo.field("role") == "cloud");
    CHECK(cloud.counters().protocol_errors == cases.size());
    cloud.stop();
}

TEST_CASE("services: health echo reports fog counters") {
    TempSinks sinks;
    ServiceConfig fog_cfg;
    fog_cfg.peer_host = "127.0.0.1";
    fog_cfg.peer_port = 1;
    fog_cfg.alert_path = sinks.fog_alerts;
    FogService fog(fog_cfg, testutil::shared_stage1());
    fog.start();

    WireMessage m;
    m.kind = MsgKind::health;
    m.record_id = 77;
    const auto reply = request_once("127.0.0.1", fog.port(), m);
    CHECK(reply.kind == MsgKind::health);
    CHECK(reply.record_id == 77);
    CHECK(reply.field("role") == "fog");
    CHECK(reply.field("submitted") == "0");
    CHECK(reply.field("queued") == "0");
    fog.stop();
}

TEST_CASE("replay: zero records yields an all-zero summary") {
    TempSinks sinks;
    ServiceConfig fog_cfg;
    fog_cfg.peer_host = "127.0.0.1";
    fog_cfg.peer_port = 1;
    fog_cfg.alert_path = sinks.fog_alerts;
    FogService fog(fog_cfg, testutil::shared_stage1());
    fog.start();

    const auto summary = replay_records({}, "127.0.0.1", fog.port());
    CHECK(summary.submitted == 0);
    CHECK(summary.normal == 0);
    CHECK(summary.anomaly == 0);
    CHECK(summary.categorized == 0);
    CHECK_FALSE(summary.partial);
    fog.stop();
}

TEST_CASE("replay: constant-normal stub produces zero anomalies") {
    TempSinks sinks;
    const auto& data = FixtureData::get();
    StageBundle stub;
    stub.pre = StagePreprocessor::fit(data.train, FeatureSchema::kdd41(),
                                      FeatureSchema::default_keep38(), false,
                                      LabelTask::binary());
    const auto train = stub.pre.transform(data.train);
    FeatureMatrix toy;
    toy.cols = train.cols;
    toy.col_names = train.col_names;
    toy.class_names = train.class_names;
    toy.rows = 2;
    toy.values.assign(toy.rows * toy.cols, 0.0);
    toy.labels = {0, 0};
    stub.model = train_tree(toy, TreeParams{.max_depth = 0});
    stub.model_id = "stub-normal";

    ServiceConfig fog_cfg;
    fog_cfg.peer_host = "127.0.0.1";
    fog_cfg.peer_port = 1;
    fog_cfg.alert_path = sinks.fog_alerts;
    FogService fog(fog_cfg, stub);
    fog.start();

    std::vector<ConnectionRecord> records(data.testp.begin(), data.testp.begin() + 100);
    const auto summary = replay_records(records, "127.0.0.1", fog.port());
    CHECK(summary.submitted == 100);
    CHECK(summary.anomaly == 0);
    CHECK(summary.normal == 100);
    CHECK(summary.categorized == 0);
    fog.stop();
}

TEST_SUITE_END();
