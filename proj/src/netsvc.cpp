#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstring>
#include <fstream>

#include "fogids/netsvc.hpp"

namespace fogids {

namespace {

struct Fd {
    int fd = -1;
    Fd() = default;
    explicit Fd(int f) : fd(f) {}
    Fd(const Fd&) = delete;
    Fd& operator=(const Fd&) = delete;
    Fd(Fd&& o) noexcept : fd(o.fd) { o.fd = -1; }
    Fd& operator=(Fd&& o) noexcept {
        if (this != &o) {
            reset();
            fd = o.fd;
            o.fd = -1;
        }
        return *this;
    }
    ~Fd() { reset(); }
    void reset() {
        if (fd >= 0) ::close(fd);
        fd = -1;
    }
    explicit operator bool() const { return fd >= 0; }
};

bool send_all(int fd, std::string_view data) {
    std::size_t sent = 0;
    while (sent < data.size()) {
        const auto n = ::send(fd, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
        if (n <= 0) return false;
        sent += static_cast<std::size_t>(n);
    }
    return true;
}

bool send_line(int fd, std::string_view line) {
    std::string framed(line);
    framed += '\n';
    return send_all(fd, framed);
}

enum class ReadStatus { ok, eof, oversize };

// Buffered line reader; an over-limit line is discarded up to its newline so
// the connection stays usable.
class LineReader {
public:
    LineReader(int fd, std::size_t max_line) : fd_(fd), max_(max_line) {}

    ReadStatus read_line(std::string& line) {
        line.clear();
        bool discarding = false;
        while (true) {
            const auto nl = buf_.find('\n', scan_);
            if (nl != std::string::npos) {
                if (!discarding && nl <= max_) {
                    line = buf_.substr(0, nl);
                    buf_.erase(0, nl + 1);
                    scan_ = 0;
                    return ReadStatus::ok;
                }
                buf_.erase(0, nl + 1);
                scan_ = 0;
                return ReadStatus::oversize;
            }
            scan_ = buf_.size();
            if (buf_.size() > max_ && !discarding) {
                discarding = true;
            }
            if (discarding && buf_.size() > max_) {
                // keep memory bounded while skipping to the newline
                buf_.clear();
                scan_ = 0;
            }
            char chunk[4096];
            const auto n = ::recv(fd_, chunk, sizeof(chunk), 0);
            if (n <= 0) return ReadStatus::eof;
            buf_.append(chunk, static_cast<std::size_t>(n));
        }
    }

private:
    int fd_;
    std::size_t max_;
    std::string buf_;
    std::size_t scan_ = 0;
};

Fd connect_to(const std::string& host, std::uint16_t port) {
    Fd fd(::socket(AF_INET, SOCK_STREAM, 0));
    if (!fd) return {};
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) return {};
    if (::connect(fd.fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) return {};
    const int one = 1;
    ::setsockopt(fd.fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    return fd;
}

}  // namespace

class TcpListener {
public:
    TcpListener(const std::string& host, std::uint16_t port) : fd_(::socket(AF_INET, SOCK_STREAM, 0)) {
        if (!fd_) throw std::runtime_error("socket() failed");
        const int one = 1;
        ::setsockopt(fd_.fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(port);
        if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1)
            throw std::runtime_error("bad listen address '" + host + "'");
        if (::bind(fd_.fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0)
            throw std::runtime_error("bind to " + host + ":" + std::to_string(port) + " failed: " +
                                     std::strerror(errno));
        if (::listen(fd_.fd, 64) != 0) throw std::runtime_error("listen failed");
        sockaddr_in bound{};
        socklen_t len = sizeof(bound);
        ::getsockname(fd_.fd, reinterpret_cast<sockaddr*>(&bound), &len);
        port_ = ntohs(bound.sin_port);
    }

    int accept_fd() {
        return ::accept(fd_.fd, nullptr, nullptr);
    }

    void shutdown() {
        if (fd_) ::shutdown(fd_.fd, SHUT_RDWR);
        fd_.reset();
    }

    std::uint16_t port() const { return port_; }

private:
    Fd fd_;
    std::uint16_t port_ = 0;
};

// --- fog service ------------------------------------------------------------

FogService::FogService(ServiceConfig config, StageBundle stage1)
    : config_(std::move(config)), stage1_(std::move(stage1)) {
    stage1_.validate();
    if (config_.expect_schema_hash != 0 && stage1_.pre.schema_hash() != config_.expect_schema_hash)
        throw SchemaError("configured schema hash does not match the stage-1 model");
}

FogService::~FogService() { stop(); }

void FogService::start() {
    listener_ = std::make_unique<TcpListener>(config_.listen_host, config_.listen_port);
    port_ = listener_->port();
    stopping_ = false;
    accept_thread_ = std::thread([this] { accept_loop(); });
    forward_thread_ = std::thread([this] { forward_loop(); });
}

void FogService::stop() {
    if (stopping_.exchange(true)) {
        if (accept_thread_.joinable()) accept_thread_.join();
        if (forward_thread_.joinable()) forward_thread_.join();
        return;
    }
    if (listener_) listener_->shutdown();
    queue_cv_.notify_all();
    {
        std::lock_guard lock(conn_mu_);
        for (int fd : conn_fds_) ::shutdown(fd, SHUT_RDWR);
    }
    if (accept_thread_.joinable()) accept_thread_.join();
    if (forward_thread_.joinable()) forward_thread_.join();
    for (auto& t : conn_threads_) t.join();
    conn_threads_.clear();
}

void FogService::accept_loop() {
    while (!stopping_) {
        const int fd = listener_->accept_fd();
        if (fd < 0) {
            if (stopping_) return;
            continue;
        }
        std::lock_guard lock(conn_mu_);
        conn_fds_.push_back(fd);
        conn_threads_.emplace_back([this, fd] { serve_connection(fd); });
    }
}

void FogService::serve_connection(int fd) {
    LineReader reader(fd, config_.max_message);
    std::string line;
    while (!stopping_) {
        const auto status = reader.read_line(line);
        if (status == ReadStatus::eof) break;
        std::string reply;
        if (status == ReadStatus::oversize) {
            {
                std::lock_guard lock(counters_mu_);
                ++counters_.protocol_errors;
            }
            reply = encode_message(make_error_reply(0, WireErrorCode::oversize,
                                                    "line exceeds max message size"));
        } else {
            reply = handle_line(line);
        }
        if (!send_line(fd, reply)) break;
    }
    std::lock_guard lock(conn_mu_);
    std::erase(conn_fds_, fd);
    ::close(fd);
}

std::string FogService::handle_line(const std::string& line) {
    WireMessage msg;
    try {
        msg = decode_message(line, config_.max_message);
    } catch (const WireError& e) {
        std::lock_guard lock(counters_mu_);
        ++counters_.protocol_errors;
        return encode_message(make_error_reply(0, e.code(), e.what()));
    }

    switch (msg.kind) {
        case MsgKind::record_submit: {
            {
                std::lock_guard lock(queue_mu_);
                if (queue_.size() >= config_.queue_capacity) {
                    std::lock_guard clock(counters_mu_);
                    ++counters_.refused;
                    return encode_message(make_error_reply(
                        msg.record_id, WireErrorCode::retry, "forward queue full, retry later"));
                }
            }
            Stage1Result res;
            try {
                const ConnectionRecord rec =
                    record_from_features(msg.field("features"), stage1_.pre.base_size());
                res = stage1_detect(stage1_, rec);
            } catch (const WireError& e) {
                std::lock_guard lock(counters_mu_);
                ++counters_.protocol_errors;
                return encode_message(make_error_reply(msg.record_id, e.code(), e.what()));
            } catch (const std::exception& e) {
                std::lock_guard lock(counters_mu_);
                ++counters_.protocol_errors;
                return encode_message(
                    make_error_reply(msg.record_id, WireErrorCode::bad_value, e.what()));
            }

            {
                std::lock_guard lock(counters_mu_);
                ++counters_.submitted;
                ++(res.anomaly ? counters_.anomaly : counters_.normal);
            }

            if (res.anomaly) {
                write_alert(Alert{Alert::Level::anomaly, msg.record_id, "", iso8601_now(),
                                  stage1_.model_id});
                WireMessage fwd;
                fwd.kind = MsgKind::anomaly_forward;
                fwd.record_id = msg.record_id;
                fwd.fields["features"] = msg.field("features");
                {
                    std::lock_guard lock(queue_mu_);
                    queue_.push_back(std::move(fwd));
                }
                queue_cv_.notify_one();
            }

            WireMessage reply;
            reply.kind = MsgKind::detect_response;
            reply.record_id = msg.record_id;
            reply.fields["decision"] = res.anomaly ? "anomaly" : "normal";
            reply.fields["score"] = format_double(res.attack_score);
            return encode_message(reply);
        }

        case MsgKind::health: {
            const FogCounters c = counters();
            WireMessage reply;
            reply.kind = MsgKind::health;
            reply.record_id = msg.record_id;
            reply.fields["role"] = "fog";
            reply.fields["submitted"] = std::to_string(c.submitted);
            reply.fields["normal"] = std::to_string(c.normal);
            reply.fields["anomaly"] = std::to_string(c.anomaly);
            reply.fields["forwarded"] = std::to_string(c.forwarded);
            reply.fields["categorized"] = std::to_string(c.categorized);
            reply.fields["refused"] = std::to_string(c.refused);
            reply.fields["protocol_errors"] = std::to_string(c.protocol_errors);
            {
                std::lock_guard lock(queue_mu_);
                reply.fields["queued"] = std::to_string(queue_.size());
            }
            return encode_message(reply);
        }

        default: {
            std::lock_guard lock(counters_mu_);
            ++counters_.protocol_errors;
            return encode_message(make_error_reply(
                msg.record_id, WireErrorCode::bad_value,
                std::string(msg_kind_name(msg.kind)) + " is not accepted by the fog service"));
        }
    }
}

void FogService::forward_loop() {
    Fd cloud;
    std::unique_ptr<LineReader> reader;
    std::string reply_line;

    while (true) {
        WireMessage msg;
        {
            std::unique_lock lock(queue_mu_);
            queue_cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
            if (stopping_) return;
            // copy, don't pop: an undelivered message keeps its queue slot,
            // so the capacity bound holds and nothing is dropped on stop
            msg = queue_.front();
        }

        bool delivered = false;
        while (!delivered && !stopping_) {
            if (!cloud) {
                cloud = connect_to(config_.peer_host, config_.peer_port);
                if (!cloud) {
                    std::this_thread::sleep_for(std::chrono::milliseconds(50));
                    continue;
                }
                reader = std::make_unique<LineReader>(cloud.fd, config_.max_message);
            }
            if (!send_line(cloud.fd, encode_message(msg)) ||
                reader->read_line(reply_line) != ReadStatus::ok) {
                cloud.reset();
                reader.reset();
                continue;
            }
            delivered = true;
        }
        if (!delivered) return;  // stopping; the message is still queued
        {
            std::lock_guard lock(queue_mu_);
            queue_.pop_front();
        }

        {
            std::lock_guard lock(counters_mu_);
            ++counters_.forwarded;
        }
        try {
            const WireMessage reply = decode_message(reply_line, config_.max_message);
            std::lock_guard lock(counters_mu_);
            if (reply.kind == MsgKind::classify_response)
                ++counters_.categorized;
            else
                ++counters_.protocol_errors;
        } catch (const WireError&) {
            std::lock_guard lock(counters_mu_);
            ++counters_.protocol_errors;
        }
    }
}

void FogService::write_alert(const Alert& a) {
    std::lock_guard lock(alert_mu_);
    std::ofstream out(config_.alert_path, std::ios::app);
    if (out) out << format_alert_line(a) << '\n';
}

FogCounters FogService::counters() const {
    std::lock_guard lock(counters_mu_);
    return counters_;
}

// --- cloud service ------------------------------------------------------------

CloudService::CloudService(ServiceConfig config, StageBundle stage2)
    : config_(std::move(config)), stage2_(std::move(stage2)) {
    stage2_.validate();
    if (config_.expect_schema_hash != 0 && stage2_.pre.schema_hash() != config_.expect_schema_hash)
        throw SchemaError("configured schema hash does not match the stage-2 model");
}

CloudService::~CloudService() { stop(); }

void CloudService::start() {
    listener_ = std::make_unique<TcpListener>(config_.listen_host, config_.listen_port);
    port_ = listener_->port();
    stopping_ = false;
    accept_thread_ = std::thread([this] { accept_loop(); });
}

void CloudService::stop() {
    if (stopping_.exchange(true)) {
        if (accept_thread_.joinable()) accept_thread_.join();
        return;
    }
    if (listener_) listener_->shutdown();
    {
        std::lock_guard lock(conn_mu_);
        for (int fd : conn_fds_) ::shutdown(fd, SHUT_RDWR);
    }
    if (accept_thread_.joinable()) accept_thread_.join();
    for (auto& t : conn_threads_) t.join();
    conn_threads_.clear();
}

void CloudService::accept_loop() {
    while (!stopping_) {
        const int fd = listener_->accept_fd();
        if (fd < 0) {
            if (stopping_) return;
            continue;
        }
        std::lock_guard lock(conn_mu_);
        conn_fds_.push_back(fd);
        conn_threads_.emplace_back([this, fd] { serve_connection(fd); });
    }
}

void CloudService::serve_connection(int fd) {
    LineReader reader(fd, config_.max_message);
    std::string line;
    while (!stopping_) {
        const auto status = reader.read_line(line);
        if (status == ReadStatus::eof) break;
        std::string reply;
        if (status == ReadStatus::oversize) {
            {
                std::lock_guard lock(counters_mu_);
                ++counters_.protocol_errors;
            }
            reply = encode_message(make_error_reply(0, WireErrorCode::oversize,
                                                    "line exceeds max message size"));
        } else {
            reply = handle_line(line);
        }
        if (!send_line(fd, reply)) break;
    }
    std::lock_guard lock(conn_mu_);
    std::erase(conn_fds_, fd);
    ::close(fd);
}

std::string CloudService::handle_line(const std::string& line) {
    WireMessage msg;
    try {
        msg = decode_message(line, config_.max_message);
    } catch (const WireError& e) {
        std::lock_guard lock(counters_mu_);
        ++counters_.protocol_errors;
        return encode_message(make_error_reply(0, e.code(), e.what()));
    }

    switch (msg.kind) {
        case MsgKind::anomaly_forward: {
            Stage2Result res;
            try {
                const ConnectionRecord rec =
                    record_from_features(msg.field("features"), stage2_.pre.base_size());
                res = stage2_classify(stage2_, rec);
            } catch (const WireError& e) {
                std::lock_guard lock(counters_mu_);
                ++counters_.protocol_errors;
                return encode_message(make_error_reply(msg.record_id, e.code(), e.what()));
            } catch (const std::exception& e) {
                std::lock_guard lock(counters_mu_);
                ++counters_.protocol_errors;
                return encode_message(
                    make_error_reply(msg.record_id, WireErrorCode::bad_value, e.what()));
            }

            const auto& categories = stage2_.pre.class_names();
            const std::string category = categories[static_cast<std::size_t>(res.category)];
            {
                std::lock_guard lock(counters_mu_);
                ++counters_.forwards;
                ++counters_.categorized;
            }
            write_alert(Alert{Alert::Level::categorized, msg.record_id, category, iso8601_now(),
                              stage2_.model_id});

            WireMessage reply;
            reply.kind = MsgKind::classify_response;
            reply.record_id = msg.record_id;
            reply.fields["category"] = category;
            std::string scores;
            for (std::size_t c = 0; c < res.dist.scores.size(); ++c) {
                if (c) scores += ',';
                scores += format_double(res.dist.scores[c]);
            }
            reply.fields["scores"] = scores;
            return encode_message(reply);
        }

        case MsgKind::health: {
            const CloudCounters c = counters();
            WireMessage reply;
            reply.kind = MsgKind::health;
            reply.record_id = msg.record_id;
            reply.fields["role"] = "cloud";
            reply.fields["forwards"] = std::to_string(c.forwards);
            reply.fields["categorized"] = std::to_string(c.categorized);
            reply.fields["protocol_errors"] = std::to_string(c.protocol_errors);
            return encode_message(reply);
        }

        default: {
            std::lock_guard lock(counters_mu_);
            ++counters_.protocol_errors;
            return encode_message(make_error_reply(
                msg.record_id, WireErrorCode::bad_value,
                std::string(msg_kind_name(msg.kind)) + " is not accepted by the cloud service"));
        }
    }
}

void CloudService::write_alert(const Alert& a) {
    std::lock_guard lock(alert_mu_);
    std::ofstream out(config_.alert_path, std::ios::app);
    if (out) out << format_alert_line(a) << '\n';
}

CloudCounters CloudService::counters() const {
    std::lock_guard lock(counters_mu_);
    return counters_;
}

// --- replay client ------------------------------------------------------------

WireMessage request_once(const std::string& host, std::uint16_t port, const WireMessage& m,
                         std::size_t max_message) {
    Fd fd = connect_to(host, port);
    if (!fd) throw std::runtime_error("cannot connect to " + host + ":" + std::to_string(port));
    if (!send_line(fd.fd, encode_message(m))) throw std::runtime_error("send failed");
    LineReader reader(fd.fd, max_message);
    std::string line;
    if (reader.read_line(line) != ReadStatus::ok) throw std::runtime_error("no reply");
    return decode_message(line, max_message);
}

struct RawClient::Impl {
    Fd fd;
    std::unique_ptr<LineReader> reader;
    std::size_t max_message;
};

RawClient::RawClient(const std::string& host, std::uint16_t port, std::size_t max_message)
    : impl_(std::make_unique<Impl>()) {
    impl_->fd = connect_to(host, port);
    if (!impl_->fd)
        throw std::runtime_error("cannot connect to " + host + ":" + std::to_string(port));
    impl_->reader = std::make_unique<LineReader>(impl_->fd.fd, max_message);
    impl_->max_message = max_message;
}

RawClient::~RawClient() = default;

std::string RawClient::round_trip(std::string_view line) {
    if (!send_line(impl_->fd.fd, line)) throw std::runtime_error("send failed");
    std::string reply;
    if (impl_->reader->read_line(reply) != ReadStatus::ok)
        throw std::runtime_error("connection closed");
    return reply;
}

WireMessage RawClient::request(const WireMessage& m) {
    return decode_message(round_trip(encode_message(m)), impl_->max_message);
}

ReplaySummary replay_records(std::span<const ConnectionRecord> records, const std::string& host,
                             std::uint16_t port, const ReplayOptions& options) {
    ReplaySummary summary;
    const auto wall0 = std::chrono::steady_clock::now();

    Fd fd = connect_to(host, port);
    if (!fd) {
        summary.partial = !records.empty();
        return summary;
    }
    LineReader reader(fd.fd, kDefaultMaxMessage);
    std::string reply_line;
    std::vector<std::int64_t> latencies;
    latencies.reserve(records.size());

    const auto pace = options.rate > 0.0
                          ? std::chrono::nanoseconds(static_cast<std::int64_t>(1e9 / options.rate))
                          : std::chrono::nanoseconds(0);
    auto next_send = std::chrono::steady_clock::now();

    for (std::size_t i = 0; i < records.size(); ++i) {
        const std::uint64_t id = i + 1;
        WireMessage m;
        m.kind = MsgKind::record_submit;
        m.record_id = id;
        m.fields["features"] = join_features(records[i]);
        const std::string line = encode_message(m);

        if (pace.count() > 0) {
            std::this_thread::sleep_until(next_send);
            next_send += pace;
        }

        bool answered = false;
        for (int attempt = 0; attempt <= options.max_retries; ++attempt) {
            const auto t0 = std::chrono::steady_clock::now();
            if (!send_line(fd.fd, line) || reader.read_line(reply_line) != ReadStatus::ok) {
                summary.partial = true;
                break;
            }
            const auto t1 = std::chrono::steady_clock::now();

            WireMessage reply;
            try {
                reply = decode_message(reply_line, kDefaultMaxMessage);
            } catch (const WireError&) {
                summary.partial = true;
                break;
            }
            if (reply.kind == MsgKind::error) {
                const auto code = wire_error_from_name(reply.field("code"));
                if (code == WireErrorCode::retry && attempt < options.max_retries) {
                    ++summary.retries;
                    std::this_thread::sleep_for(std::chrono::milliseconds(10));
                    continue;
                }
                summary.partial = true;
                break;
            }
            if (reply.kind != MsgKind::detect_response || reply.record_id != id) {
                summary.partial = true;
                break;
            }

            const auto us =
                std::chrono::duration_cast<std::chrono::microseconds>(t1 - t0).count();
            ReplayDecision d;
            d.record_id = id;
            d.anomaly = reply.field("decision") == "anomaly";
            d.attack_score = parse_double(reply.field("score"));
            d.latency_us = us;
            summary.decisions.push_back(d);
            latencies.push_back(us);
            ++summary.submitted;
            ++(d.anomaly ? summary.anomaly : summary.normal);
            summary.last_record_id = id;
            answered = true;
            break;
        }
        if (!answered) {
            summary.partial = true;
            break;
        }
    }

    // wait for the forward queue to drain so categorized counts settle
    const auto deadline =
        std::chrono::steady_clock::now() +
        std::chrono::milliseconds(static_cast<std::int64_t>(options.drain_timeout_s * 1000));
    while (std::chrono::steady_clock::now() < deadline) {
        try {
            WireMessage health;
            health.kind = MsgKind::health;
            const WireMessage reply = request_once(host, port, health);
            const auto anomalies = std::stoull(reply.field("anomaly"));
            const auto categorized = std::stoull(reply.field("categorized"));
            summary.categorized = categorized;
            if (categorized >= anomalies) break;
        } catch (const std::exception&) {
            break;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }

    if (!latencies.empty()) {
        std::sort(latencies.begin(), latencies.end());
        auto pick = [&](double q) {
            const auto idx = static_cast<std::size_t>(q * static_cast<double>(latencies.size() - 1));
            return static_cast<double>(latencies[idx]);
        };
        summary.latency_us_p50 = pick(0.50);
        summary.latency_us_p90 = pick(0.90);
        summary.latency_us_p99 = pick(0.99);
    }
    summary.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
    return summary;
}

ReplaySummary replay_file(const std::string& path, const std::string& host, std::uint16_t port,
                          const ReplayOptions& options) {
    const auto records = parse_file(path, FeatureSchema::kdd41());
    return replay_records(records, host, port, options);
}

}  // namespace fogids
