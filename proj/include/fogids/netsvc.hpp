#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "fogids/pipeline.hpp"

namespace fogids {

// --- wire protocol ----------------------------------------------------------
//
// One message per line:
//
//   FOGIDS/<version> <KIND> <record id> key=value key=value ...
//
// Keys are [A-Za-z0-9_.-]+, emitted in sorted order; values escape
// backslash, space, '=', tab, CR and LF, so the encoding of a message is a
// single canonical byte sequence and round-trips exactly.

inline constexpr int kWireVersion = 1;
inline constexpr std::size_t kDefaultMaxMessage = 64 * 1024;

enum class MsgKind {
    record_submit,
    anomaly_forward,
    classify_response,
    detect_response,
    alert_event,
    health,
    error,
};

std::string_view msg_kind_name(MsgKind k);

enum class WireErrorCode {
    oversize = 1,
    bad_magic = 2,
    bad_version = 3,
    unknown_kind = 4,
    bad_id = 5,
    bad_escape = 6,
    missing_field = 7,
    duplicate_key = 8,
    bad_value = 9,
    retry = 10,  // service back-pressure, not a decode failure
};

std::string_view wire_error_name(WireErrorCode c);
std::optional<WireErrorCode> wire_error_from_name(std::string_view name);

class WireError : public std::runtime_error {
public:
    WireError(WireErrorCode code, const std::string& what)
        : std::runtime_error(std::string(wire_error_name(code)) + ": " + what), code_(code) {}
    WireErrorCode code() const { return code_; }

private:
    WireErrorCode code_;
};

struct WireMessage {
    int version = kWireVersion;
    MsgKind kind = MsgKind::health;
    std::uint64_t record_id = 0;
    std::map<std::string, std::string> fields;

    const std::string& field(const std::string& key) const;  // WireError missing_field
    bool operator==(const WireMessage&) const = default;
};

std::string escape_value(std::string_view raw);
std::string unescape_value(std::string_view escaped);  // WireError bad_escape

// Canonical encoding, no trailing newline.
std::string encode_message(const WireMessage& m);

// Rejects oversize input and structural violations with typed WireErrors;
// validates the per-kind required fields.
WireMessage decode_message(std::string_view line, std::size_t max_size = kDefaultMaxMessage);

WireMessage make_error_reply(std::uint64_t record_id, WireErrorCode code, std::string_view detail);

// Shortest round-trip text for doubles; parses back bit-exactly.
std::string format_double(double v);
double parse_double(std::string_view s);  // WireError bad_value

// --- record <-> wire --------------------------------------------------------

std::string join_features(const ConnectionRecord& rec);
ConnectionRecord record_from_features(std::string_view joined, std::size_t expect_arity);

// --- services ---------------------------------------------------------------

struct ServiceConfig {
    std::string listen_host = "127.0.0.1";
    std::uint16_t listen_port = 0;  // 0 = pick an ephemeral port
    std::string peer_host;          // fog only: classification peer
    std::uint16_t peer_port = 0;
    std::string model_path;
    std::string alert_path;
    std::size_t max_message = kDefaultMaxMessage;
    std::size_t queue_capacity = 10000;  // fog forward queue bound
    std::uint64_t expect_schema_hash = 0;
};

ServiceConfig load_service_config(const std::string& path);

struct FogCounters {
    std::uint64_t submitted = 0;
    std::uint64_t normal = 0;
    std::uint64_t anomaly = 0;
    std::uint64_t forwarded = 0;
    std::uint64_t categorized = 0;
    std::uint64_t refused = 0;
    std::uint64_t protocol_errors = 0;
};

class TcpListener;

// Stage-1 daemon: detects per submitted record, alerts and forwards
// anomalies to the classification peer, answers HEALTH with counters.
class FogService {
public:
    FogService(ServiceConfig config, StageBundle stage1);
    ~FogService();

    void start();
    void stop();
    std::uint16_t port() const { return port_; }
    FogCounters counters() const;

private:
    void accept_loop();
    void serve_connection(int fd);
    void forward_loop();
    std::string handle_line(const std::string& line);
    void write_alert(const Alert& a);

    ServiceConfig config_;
    StageBundle stage1_;
    std::unique_ptr<TcpListener> listener_;
    std::uint16_t port_ = 0;
    std::thread accept_thread_, forward_thread_;
    std::vector<std::thread> conn_threads_;
    std::mutex conn_mu_;
    std::vector<int> conn_fds_;

    std::deque<WireMessage> queue_;
    mutable std::mutex queue_mu_;
    std::condition_variable queue_cv_;

    std::mutex alert_mu_;
    std::atomic<bool> stopping_{false};
    mutable std::mutex counters_mu_;
    FogCounters counters_;
};

struct CloudCounters {
    std::uint64_t forwards = 0;
    std::uint64_t categorized = 0;
    std::uint64_t protocol_errors = 0;
};

// Stage-2 daemon: classifies forwarded anomalies into attack categories.
class CloudService {
public:
    CloudService(ServiceConfig config, StageBundle stage2);
    ~CloudService();

    void start();
    void stop();
    std::uint16_t port() const { return port_; }
    CloudCounters counters() const;

private:
    void accept_loop();
    void serve_connection(int fd);
    std::string handle_line(const std::string& line);
    void write_alert(const Alert& a);

    ServiceConfig config_;
    StageBundle stage2_;
    std::unique_ptr<TcpListener> listener_;
    std::uint16_t port_ = 0;
    std::thread accept_thread_;
    std::vector<std::thread> conn_threads_;
    std::mutex conn_mu_;
    std::vector<int> conn_fds_;
    std::mutex alert_mu_;
    std::atomic<bool> stopping_{false};
    mutable std::mutex counters_mu_;
    CloudCounters counters_;
};

// --- replay -----------------------------------------------------------------

struct ReplayOptions {
    double rate = 0.0;        // records per second; 0 = unthrottled
    int max_retries = 50;     // per record, on back-pressure
    double drain_timeout_s = 30.0;  // wait for forwards to be classified
};

struct ReplayDecision {
    std::uint64_t record_id = 0;
    bool anomaly = false;
    double attack_score = 0.0;
    std::int64_t latency_us = 0;
};

struct ReplaySummary {
    std::uint64_t submitted = 0;
    std::uint64_t normal = 0;
    std::uint64_t anomaly = 0;
    std::uint64_t categorized = 0;  // from the fog's final HEALTH counters
    std::uint64_t retries = 0;
    bool partial = false;
    std::uint64_t last_record_id = 0;
    double latency_us_p50 = 0.0, latency_us_p90 = 0.0, latency_us_p99 = 0.0;
    double wall_seconds = 0.0;
    std::vector<ReplayDecision> decisions;
};

// Streams records as RECORD_SUBMIT at the configured rate (record id =
// 1-based file line number) and reconciles counters afterwards.
ReplaySummary replay_records(std::span<const ConnectionRecord> records, const std::string& host,
                             std::uint16_t port, const ReplayOptions& options = {});
ReplaySummary replay_file(const std::string& path, const std::string& host, std::uint16_t port,
                          const ReplayOptions& options = {});

// One blocking request/response on a fresh connection (health checks, tests).
WireMessage request_once(const std::string& host, std::uint16_t port, const WireMessage& m,
                         std::size_t max_message = kDefaultMaxMessage);

// Persistent connection speaking raw lines; lets callers exercise the
// protocol with arbitrary bytes.
class RawClient {
public:
    RawClient(const std::string& host, std::uint16_t port,
              std::size_t max_message = kDefaultMaxMessage);
    ~RawClient();
    RawClient(const RawClient&) = delete;
    RawClient& operator=(const RawClient&) = delete;

    // Sends `line` + newline, returns the reply line (without newline).
    // Throws on connection failure.
    std::string round_trip(std::string_view line);
    WireMessage request(const WireMessage& m);

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace fogids
