#include <charconv>
#include <fstream>

#include "fogids/netsvc.hpp"
#include "nlohmann/json.hpp"

namespace fogids {

std::string_view msg_kind_name(MsgKind k) {
    switch (k) {
        case MsgKind::record_submit: return "RECORD_SUBMIT";
        case MsgKind::anomaly_forward: return "ANOMALY_FORWARD";
        case MsgKind::classify_response: return "CLASSIFY_RESPONSE";
        case MsgKind::detect_response: return "DETECT_RESPONSE";
        case MsgKind::alert_event: return "ALERT_EVENT";
        case MsgKind::health: return "HEALTH";
        case MsgKind::error: return "ERROR";
    }
    return "?";
}

namespace {

std::optional<MsgKind> kind_from_name(std::string_view s) {
    for (MsgKind k : {MsgKind::record_submit, MsgKind::anomaly_forward, MsgKind::classify_response,
                      MsgKind::detect_response, MsgKind::alert_event, MsgKind::health,
                      MsgKind::error})
        if (msg_kind_name(k) == s) return k;
    return std::nullopt;
}

bool valid_key(std::string_view k) {
    if (k.empty()) return false;
    for (char c : k) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                        (c >= '0' && c <= '9') || c == '_' || c == '.' || c == '-';
        if (!ok) return false;
    }
    return true;
}

}  // namespace

std::string_view wire_error_name(WireErrorCode c) {
    switch (c) {
        case WireErrorCode::oversize: return "oversize";
        case WireErrorCode::bad_magic: return "bad_magic";
        case WireErrorCode::bad_version: return "bad_version";
        case WireErrorCode::unknown_kind: return "unknown_kind";
        case WireErrorCode::bad_id: return "bad_id";
        case WireErrorCode::bad_escape: return "bad_escape";
        case WireErrorCode::missing_field: return "missing_field";
        case WireErrorCode::duplicate_key: return "duplicate_key";
        case WireErrorCode::bad_value: return "bad_value";
        case WireErrorCode::retry: return "retry";
    }
    return "?";
}

std::optional<WireErrorCode> wire_error_from_name(std::string_view name) {
    for (auto c : {WireErrorCode::oversize, WireErrorCode::bad_magic, WireErrorCode::bad_version,
                   WireErrorCode::unknown_kind, WireErrorCode::bad_id, WireErrorCode::bad_escape,
                   WireErrorCode::missing_field, WireErrorCode::duplicate_key,
                   WireErrorCode::bad_value, WireErrorCode::retry})
        if (wire_error_name(c) == name) return c;
    return std::nullopt;
}

const std::string& WireMessage::field(const std::string& key) const {
    auto it = fields.find(key);
    if (it == fields.end())
        throw WireError(WireErrorCode::missing_field,
                        "message " + std::string(msg_kind_name(kind)) + " lacks field '" + key + "'");
    return it->second;
}

std::string escape_value(std::string_view raw) {
    std::string out;
    out.reserve(raw.size());
    for (char c : raw) {
        switch (c) {
            case '\\': out += "\\\\"; break;
            case ' ': out += "\\s"; break;
            case '=': out += "\\e"; break;
            case '\t': out += "\\t"; break;
            case '\r': out += "\\r"; break;
            case '\n': out += "\\n"; break;
            default: out += c;
        }
    }
    return out;
}

std::string unescape_value(std::string_view escaped) {
    std::string out;
    out.reserve(escaped.size());
    for (std::size_t i = 0; i < escaped.size(); ++i) {
        const char c = escaped[i];
        if (c != '\\') {
            out += c;
            continue;
        }
        if (i + 1 >= escaped.size())
            throw WireError(WireErrorCode::bad_escape, "trailing backslash");
        switch (escaped[++i]) {
            case '\\': out += '\\'; break;
            case 's': out += ' '; break;
            case 'e': out += '='; break;
            case 't': out += '\t'; break;
            case 'r': out += '\r'; break;
            case 'n': out += '\n'; break;
            default:
                throw WireError(WireErrorCode::bad_escape,
                                std::string("unknown escape '\\") + escaped[i] + "'");
        }
    }
    return out;
}

std::string encode_message(const WireMessage& m) {
    std::string out = "FOGIDS/" + std::to_string(m.version);
    out += ' ';
    out += msg_kind_name(m.kind);
    out += ' ';
    out += std::to_string(m.record_id);
    for (const auto& [k, v] : m.fields) {  // std::map: keys already sorted
        out += ' ';
        out += k;
        out += '=';
        out += escape_value(v);
    }
    return out;
}

namespace {

void require_fields(const WireMessage& m, std::initializer_list<const char*> keys) {
    for (const char* k : keys) (void)m.field(k);
}

void validate_payload(const WireMessage& m) {
    switch (m.kind) {
        case MsgKind::record_submit:
        case MsgKind::anomaly_forward:
            require_fields(m, {"features"});
            break;
        case MsgKind::classify_response: {
            require_fields(m, {"category", "scores"});
            const auto& scores = m.field("scores");
            std::size_t count = 1;
            for (char c : scores)
                if (c == ',') ++count;
            std::size_t start = 0;
            for (std::size_t i = 0; i < count; ++i) {
                const auto end = scores.find(',', start);
                parse_double(std::string_view(scores).substr(
                    start, end == std::string::npos ? std::string::npos : end - start));
                start = end == std::string::npos ? scores.size() : end + 1;
            }
            break;
        }
        case MsgKind::detect_response: {
            require_fields(m, {"decision", "score"});
            const auto& d = m.field("decision");
            if (d != "normal" && d != "anomaly")
                throw WireError(WireErrorCode::bad_value, "decision must be normal|anomaly");
            parse_double(m.field("score"));
            break;
        }
        case MsgKind::alert_event: {
            require_fields(m, {"level", "ts", "model"});
            const auto& level = m.field("level");
            if (level != "anomaly" && level != "categorized")
                throw WireError(WireErrorCode::bad_value, "level must be anomaly|categorized");
            if (level == "categorized") require_fields(m, {"category"});
            break;
        }
        case MsgKind::health:
            break;
        case MsgKind::error:
            require_fields(m, {"code"});
            break;
    }
}

}  // namespace

WireMessage decode_message(std::string_view line, std::size_t max_size) {
    if (line.size() > max_size)
        throw WireError(WireErrorCode::oversize, "message of " + std::to_string(line.size()) +
                                                     " bytes exceeds limit " +
                                                     std::to_string(max_size));
    if (line.empty()) throw WireError(WireErrorCode::bad_magic, "empty message");

    std::vector<std::string_view> tokens;
    std::size_t start = 0;
    while (start <= line.size()) {
        const auto pos = line.find(' ', start);
        if (pos == std::string_view::npos) {
            tokens.push_back(line.substr(start));
            break;
        }
        tokens.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    if (tokens.size() < 3) throw WireError(WireErrorCode::bad_magic, "too few tokens");

    constexpr std::string_view prefix = "FOGIDS/";
    if (!tokens[0].starts_with(prefix))
        throw WireError(WireErrorCode::bad_magic, "bad protocol tag");
    const auto ver_text = tokens[0].substr(prefix.size());
    int version = 0;
    {
        auto [p, ec] = std::from_chars(ver_text.data(), ver_text.data() + ver_text.size(), version);
        if (ec != std::errc() || p != ver_text.data() + ver_text.size())
            throw WireError(WireErrorCode::bad_magic, "bad protocol tag");
    }
    if (version != kWireVersion)
        throw WireError(WireErrorCode::bad_version,
                        "version " + std::to_string(version) + " not supported");

    WireMessage m;
    m.version = version;
    const auto kind = kind_from_name(tokens[1]);
    if (!kind)
        throw WireError(WireErrorCode::unknown_kind, "unknown kind '" + std::string(tokens[1]) + "'");
    m.kind = *kind;

    {
        const auto t = tokens[2];
        auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), m.record_id);
        if (ec != std::errc() || p != t.data() + t.size() || t.empty())
            throw WireError(WireErrorCode::bad_id, "record id '" + std::string(t) + "' is not a u64");
    }

    for (std::size_t i = 3; i < tokens.size(); ++i) {
        const auto tok = tokens[i];
        const auto eq = tok.find('=');
        if (tok.empty() || eq == std::string_view::npos)
            throw WireError(WireErrorCode::bad_value, "expected key=value, got '" + std::string(tok) + "'");
        const auto key = tok.substr(0, eq);
        const auto val = tok.substr(eq + 1);
        if (!valid_key(key))
            throw WireError(WireErrorCode::bad_value, "invalid key '" + std::string(key) + "'");
        if (val.find('=') != std::string_view::npos)
            throw WireError(WireErrorCode::bad_value, "unescaped '=' in value of '" + std::string(key) + "'");
        auto [it, inserted] = m.fields.emplace(std::string(key), unescape_value(val));
        if (!inserted)
            throw WireError(WireErrorCode::duplicate_key, "duplicate key '" + std::string(key) + "'");
    }

    validate_payload(m);
    return m;
}

WireMessage make_error_reply(std::uint64_t record_id, WireErrorCode code, std::string_view detail) {
    WireMessage m;
    m.kind = MsgKind::error;
    m.record_id = record_id;
    m.fields["code"] = std::string(wire_error_name(code));
    if (!detail.empty()) m.fields["detail"] = std::string(detail);
    return m;
}

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

double parse_double(std::string_view s) {
    double v = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || s.empty())
        throw WireError(WireErrorCode::bad_value, "'" + std::string(s) + "' is not a number");
    return v;
}

std::string join_features(const ConnectionRecord& rec) {
    std::string out;
    for (std::size_t i = 0; i < rec.raw.size(); ++i) {
        if (i) out += ',';
        out += rec.raw[i];
    }
    return out;
}

ConnectionRecord record_from_features(std::string_view joined, std::size_t expect_arity) {
    ConnectionRecord rec;
    std::size_t start = 0;
    while (true) {
        const auto pos = joined.find(',', start);
        if (pos == std::string_view::npos) {
            rec.raw.emplace_back(joined.substr(start));
            break;
        }
        rec.raw.emplace_back(joined.substr(start, pos - start));
        start = pos + 1;
    }
    if (rec.raw.size() != expect_arity)
        throw WireError(WireErrorCode::bad_value,
                        "expected " + std::to_string(expect_arity) + " feature fields, got " +
                            std::to_string(rec.raw.size()));
    rec.continuous.assign(rec.raw.size(), std::numeric_limits<double>::quiet_NaN());
    return rec;
}

// --- log lines (same escaping as the wire, VERDICT is log-only) -----------

std::string format_alert_line(const Alert& a) {
    WireMessage m;
    m.kind = MsgKind::alert_event;
    m.record_id = a.record_id;
    m.fields["level"] = a.level == Alert::Level::anomaly ? "anomaly" : "categorized";
    if (a.level == Alert::Level::categorized) m.fields["category"] = a.category;
    m.fields["ts"] = a.timestamp;
    m.fields["model"] = a.model_id;
    return encode_message(m);
}

std::string format_verdict_line(const PipelineVerdict& v, std::span<const std::string> categories) {
    std::string out = "VERDICT " + std::to_string(v.record_id);
    out += " stage1=";
    out += v.stage1.anomaly ? "anomaly" : "normal";
    out += " score=" + format_double(v.stage1.attack_score);
    out += " stage1_ns=" + std::to_string(v.stage1.elapsed_ns);
    if (v.stage2) {
        out += " category=" +
               escape_value(categories[static_cast<std::size_t>(v.stage2->category)]);
        out += " scores=";
        for (std::size_t c = 0; c < v.stage2->dist.scores.size(); ++c) {
            if (c) out += ',';
            out += format_double(v.stage2->dist.scores[c]);
        }
        out += " stage2_ns=" + std::to_string(v.stage2->elapsed_ns);
    }
    return out;
}

ServiceConfig load_service_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open service config '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("service config '" + path + "': " + e.what());
    }
    ServiceConfig c;
    c.listen_host = j.value("listen_host", c.listen_host);
    c.listen_port = j.value("listen_port", c.listen_port);
    c.peer_host = j.value("peer_host", c.peer_host);
    c.peer_port = j.value("peer_port", c.peer_port);
    c.model_path = j.value("model", c.model_path);
    c.alert_path = j.value("alert_sink", c.alert_path);
    c.max_message = j.value("max_message", c.max_message);
    c.queue_capacity = j.value("queue_capacity", c.queue_capacity);
    if (j.contains("schema_hash"))
        c.expect_schema_hash = std::stoull(j["schema_hash"].get<std::string>(), nullptr, 16);
    if (c.max_message == 0 || c.queue_capacity == 0)
        throw ParseError("service config limits must be positive");
    return c;
}

}  // namespace fogids
