#include "simsync/protocol.hpp"

#include <algorithm>
#include <sstream>

namespace simsync {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void write_pose(ByteWriter& w, const Pose& p) {
    w.f64(p.location.x);
    w.f64(p.location.y);
    w.f64(p.location.z);
    w.f64(p.rotation.roll);
    w.f64(p.rotation.pitch);
    w.f64(p.rotation.yaw);
}

void write_vec(ByteWriter& w, const Vec3& v) {
    w.f64(v.x);
    w.f64(v.y);
    w.f64(v.z);
}

Vec3 read_vec(ByteReader& r) {
    Vec3 v;
    v.x = r.f64();
    v.y = r.f64();
    v.z = r.f64();
    return v;
}

Pose read_pose(ByteReader& r) {
    Pose p;
    p.location = read_vec(r);
    p.rotation.roll = r.f64();
    p.rotation.pitch = r.f64();
    p.rotation.yaw = r.f64();
    return p;
}

void write_body(const Message& m, ByteWriter& w) {
    std::visit(Overloaded{
                   [&](const HelloMsg& h) {
                       w.u8(h.version);
                       w.u64(h.config_digest);
                       w.u32(h.episode);
                   },
                   [&](const TickReqMsg&) {},
                   [&](const TickRespMsg& t) { w.u64(t.frame_id); },
                   [&](const SensorPayloadMsg& s) {
                       w.str(s.sensor_id);
                       w.u64(s.frame_id);
                       w.u8(s.payload_kind);
                       w.bytes(s.payload);
                   },
                   [&](const ActorSnapshotMsg& s) {
                       w.u64(s.frame_id);
                       w.f64(s.sim_time_s);
                       w.u32(static_cast<std::uint32_t>(s.actors.size()));
                       for (const auto& a : s.actors) {
                           w.u32(a.actor_id);
                           w.u8(a.cls);
                           write_pose(w, a.pose);
                           write_vec(w, a.velocity);
                           w.f64(a.yaw_rate);
                           write_vec(w, a.extent);
                       }
                   },
                   [&](const ShutdownMsg&) {},
                   [&](const ErrorMsg& e) { w.str(e.message); },
               },
               m);
}

ActorSnapshotMsg read_snapshot(ByteReader& r) {
    ActorSnapshotMsg s;
    s.frame_id = r.u64();
    s.sim_time_s = r.f64();
    const std::uint32_t count = r.u32();
    constexpr std::size_t kRecordSize = 4 + 1 + 6 * 8 + 3 * 8 + 8 + 3 * 8;
    if (count > r.remaining() / kRecordSize) {
        throw DecodeError("actor count exceeds body length");
    }
    s.actors.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        ActorRecord a;
        a.actor_id = r.u32();
        a.cls = r.u8();
        a.pose = read_pose(r);
        a.velocity = read_vec(r);
        a.yaw_rate = r.f64();
        a.extent = read_vec(r);
        s.actors.push_back(a);
    }
    return s;
}

Message read_body(MessageKind kind, std::span<const std::uint8_t> body) {
    ByteReader r(body);
    Message m;
    switch (kind) {
        case MessageKind::Hello: {
            HelloMsg h;
            h.version = r.u8();
            h.config_digest = r.u64();
            h.episode = r.u32();
            m = h;
            break;
        }
        case MessageKind::TickReq: m = TickReqMsg{}; break;
        case MessageKind::TickResp: m = TickRespMsg{r.u64()}; break;
        case MessageKind::SensorPayload: {
            SensorPayloadMsg s;
            s.sensor_id = r.str();
            s.frame_id = r.u64();
            s.payload_kind = r.u8();
            const auto rest = r.rest();
            s.payload.assign(rest.begin(), rest.end());
            m = std::move(s);
            break;
        }
        case MessageKind::ActorSnapshot: m = read_snapshot(r); break;
        case MessageKind::Shutdown: m = ShutdownMsg{}; break;
        case MessageKind::Error: m = ErrorMsg{r.str()}; break;
    }
    if (r.remaining() != 0) {
        throw DecodeError(std::to_string(r.remaining()) + " trailing bytes in body");
    }
    return m;
}

bool known_kind(std::uint8_t tag) {
    return tag >= 0x01 && tag <= 0x07;
}

}  // namespace

MessageKind kind_of(const Message& m) {
    return static_cast<MessageKind>(m.index() + 1);
}

void append_message(const Message& m, std::vector<std::uint8_t>& out) {
    const std::size_t start = out.size();
    out.resize(start + kHeaderSize);
    ByteWriter w(out);
    write_body(m, w);
    const std::uint64_t body = out.size() - start - kHeaderSize;
    if (body > kMaxBodyLength) {
        out.resize(start);
        throw ProtocolError("message body of " + std::to_string(body) + " bytes exceeds the 2^31 limit");
    }
    for (int i = 0; i < 4; ++i) {
        out[start + i] = static_cast<std::uint8_t>(body >> (8 * i));
    }
    out[start + 4] = static_cast<std::uint8_t>(kind_of(m));
}

std::vector<std::uint8_t> encode_message(const Message& m) {
    std::vector<std::uint8_t> out;
    append_message(m, out);
    return out;
}

std::vector<std::uint8_t> encode_snapshot_body(const ActorSnapshotMsg& m) {
    std::vector<std::uint8_t> out;
    ByteWriter w(out);
    write_body(m, w);
    return out;
}

ActorSnapshotMsg decode_snapshot_body(std::span<const std::uint8_t> body) {
    ByteReader r(body);
    auto s = read_snapshot(r);
    if (r.remaining() != 0) {
        throw DecodeError("trailing bytes after snapshot");
    }
    return s;
}

ActorSnapshotMsg snapshot_of(const WorldState& w) {
    ActorSnapshotMsg s;
    s.frame_id = static_cast<std::uint64_t>(w.frame_id);
    s.sim_time_s = w.sim_time_s;
    s.actors.reserve(w.actors.size());
    for (const auto& a : w.actors) {
        s.actors.push_back({a.actor_id, static_cast<std::uint8_t>(a.cls), a.pose, a.velocity, a.yaw_rate, a.extent});
    }
    return s;
}

ActorState to_actor_state(const ActorRecord& r) {
    ActorState a;
    a.actor_id = r.actor_id;
    a.cls = static_cast<ActorClass>(r.cls);
    a.pose = r.pose;
    a.velocity = r.velocity;
    a.yaw_rate = r.yaw_rate;
    a.extent = r.extent;
    return a;
}

std::variant<Decoded, NeedMoreBytes> decode_message(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kHeaderSize) {
        // The kind byte is checked as soon as it is available.
        return NeedMoreBytes{};
    }
    std::uint64_t length = 0;
    for (int i = 0; i < 4; ++i) {
        length |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    }
    const std::uint8_t tag = bytes[4];
    if (!known_kind(tag)) {
        std::ostringstream msg;
        msg << "unknown message kind 0x" << std::hex << static_cast<int>(tag);
        throw ProtocolError(msg.str());
    }
    if (length > kMaxBodyLength) {
        throw ProtocolError("declared body length " + std::to_string(length) + " exceeds the 2^31 limit");
    }
    if (bytes.size() - kHeaderSize < length) {
        return NeedMoreBytes{};
    }
    try {
        return Decoded{read_body(static_cast<MessageKind>(tag), bytes.subspan(kHeaderSize, length)),
                       kHeaderSize + static_cast<std::size_t>(length)};
    } catch (const DecodeError& e) {
        throw ProtocolError(std::string("malformed body: ") + e.what());
    }
}

void StreamDecoder::feed(std::span<const std::uint8_t> bytes) {
    if (read_pos_ > 0 && read_pos_ == buffer_.size()) {
        buffer_.clear();
        read_pos_ = 0;
    } else if (read_pos_ > (1U << 20) && read_pos_ * 2 > buffer_.size()) {
        buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(read_pos_));
        read_pos_ = 0;
    }
    buffer_.insert(buffer_.end(), bytes.begin(), bytes.end());
}

std::optional<Message> StreamDecoder::next() {
    auto result = decode_message(std::span(buffer_).subspan(read_pos_));
    if (auto* decoded = std::get_if<Decoded>(&result)) {
        read_pos_ += decoded->consumed;
        return std::move(decoded->message);
    }
    return std::nullopt;
}

void StreamDecoder::finish() const {
    if (buffered() != 0) {
        throw ProtocolError("stream closed with " + std::to_string(buffered()) + " bytes of a partial frame");
    }
}

}  // namespace simsync
