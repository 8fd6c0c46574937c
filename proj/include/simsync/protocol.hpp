#pragma once

// Wire format: [u32 LE body length][u8 kind][body]. The length counts the
// body only, not the kind byte. Integers are little-endian, reals are
// IEEE-754 binary64 little-endian, strings are u16 length + UTF-8.
//
//   HELLO           u8 version, u64 config digest, u32 episode
//   TICK_REQ        (empty)
//   TICK_RESP       u64 frame_id
//   SENSOR_PAYLOAD  str sensor_id, u64 frame_id, u8 payload_kind, payload bytes (rest of body)
//   ACTOR_SNAPSHOT  u64 frame_id, f64 sim_time_s, u32 count, count x actor record
//                   (u32 id, u8 class, 6 x f64 pose, 3 x f64 velocity, f64 yaw_rate, 3 x f64 extent)
//   SHUTDOWN        (empty)
//   ERROR           str message

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "simsync/bytes.hpp"
#include "simsync/geometry.hpp"
#include "simsync/world.hpp"

namespace simsync {

inline constexpr std::uint8_t kProtocolVersion = 1;
inline constexpr std::size_t kHeaderSize = 5;
inline constexpr std::uint64_t kMaxBodyLength = 1ULL << 31;

enum class MessageKind : std::uint8_t {
    Hello = 0x01,
    TickReq = 0x02,
    TickResp = 0x03,
    SensorPayload = 0x04,
    ActorSnapshot = 0x05,
    Shutdown = 0x06,
    Error = 0x07,
};

struct HelloMsg {
    std::uint8_t version = kProtocolVersion;
    std::uint64_t config_digest = 0;
    std::uint32_t episode = 0;
    bool operator==(const HelloMsg&) const = default;
};

struct TickReqMsg {
    bool operator==(const TickReqMsg&) const = default;
};

struct TickRespMsg {
    std::uint64_t frame_id = 0;
    bool operator==(const TickRespMsg&) const = default;
};

struct SensorPayloadMsg {
    std::string sensor_id;
    std::uint64_t frame_id = 0;
    std::uint8_t payload_kind = 0;
    std::vector<std::uint8_t> payload;
    bool operator==(const SensorPayloadMsg&) const = default;
};

struct ActorRecord {
    std::uint32_t actor_id = 0;
    std::uint8_t cls = 0;
    Pose pose;
    Vec3 velocity;
    double yaw_rate = 0.0;
    Vec3 extent;
    bool operator==(const ActorRecord&) const = default;
};

struct ActorSnapshotMsg {
    std::uint64_t frame_id = 0;
    double sim_time_s = 0.0;
    std::vector<ActorRecord> actors;
    bool operator==(const ActorSnapshotMsg&) const = default;
};

struct ShutdownMsg {
    bool operator==(const ShutdownMsg&) const = default;
};

struct ErrorMsg {
    std::string message;
    bool operator==(const ErrorMsg&) const = default;
};

using Message = std::variant<HelloMsg, TickReqMsg, TickRespMsg, SensorPayloadMsg, ActorSnapshotMsg,
                             ShutdownMsg, ErrorMsg>;

MessageKind kind_of(const Message& m);

class ProtocolError : public std::runtime_error {
public:
    explicit ProtocolError(const std::string& what) : std::runtime_error(what) {}
};

// Throws ProtocolError when the body would exceed kMaxBodyLength.
std::vector<std::uint8_t> encode_message(const Message& m);
void append_message(const Message& m, std::vector<std::uint8_t>& out);

// Body encoding for a snapshot, also used as the stored ground-truth record.
std::vector<std::uint8_t> encode_snapshot_body(const ActorSnapshotMsg& m);
ActorSnapshotMsg decode_snapshot_body(std::span<const std::uint8_t> body);

ActorSnapshotMsg snapshot_of(const WorldState& w);
ActorState to_actor_state(const ActorRecord& r);

struct NeedMoreBytes {};

struct Decoded {
    Message message;
    std::size_t consumed = 0;
};

// Decodes one frame from the front of `bytes`. Returns NeedMoreBytes when the
// frame is incomplete; throws ProtocolError on an unknown kind, an oversize
// length, or a malformed body.
std::variant<Decoded, NeedMoreBytes> decode_message(std::span<const std::uint8_t> bytes);

// Incremental decoder over a byte stream.
class StreamDecoder {
public:
    void feed(std::span<const std::uint8_t> bytes);
    // nullopt means more bytes are needed.
    std::optional<Message> next();
    // Throws ProtocolError if the stream closed inside a frame.
    void finish() const;
    std::size_t buffered() const { return buffer_.size() - read_pos_; }

private:
    std::vector<std::uint8_t> buffer_;
    std::size_t read_pos_ = 0;
};

}  // namespace simsync
