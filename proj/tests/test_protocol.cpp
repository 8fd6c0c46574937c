#include <gtest/gtest.h>

#include <cstring>
#include <thread>

#include "simsync/protocol.hpp"
#include "simsync/rng.hpp"
#include "simsync/transport.hpp"

using namespace simsync;

namespace {

using ByteVec = std::vector<std::uint8_t>;

// Little-endian writers written out by hand for the expected-bytes oracle.
void put_u32(ByteVec& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u64(ByteVec& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_f64(ByteVec& out, double d) {
    std::uint64_t v;
    std::memcpy(&v, &d, 8);
    put_u64(out, v);
}

ActorRecord random_record(SplitMix64& rng) {
    ActorRecord r;
    r.actor_id = static_cast<std::uint32_t>(rng.below(65536));
    r.cls = static_cast<std::uint8_t>(rng.below(3));
    r.pose = {{rng.uniform(-60, 60), rng.uniform(-60, 60), rng.uniform(0, 2)},
              {rng.uniform(-180, 180), rng.uniform(-90, 90), rng.uniform(-180, 180)}};
    r.velocity = {rng.uniform(-30, 30), rng.uniform(-1, 1), 0};
    r.yaw_rate = rng.uniform(-30, 30);
    r.extent = {rng.uniform(0.2, 3), rng.uniform(0.2, 2), rng.uniform(0.5, 2)};
    return r;
}

Message random_message(SplitMix64& rng) {
    switch (rng.below(7)) {
        case 0: return HelloMsg{kProtocolVersion, rng.next(), static_cast<std::uint32_t>(rng.next())};
        case 1: return TickReqMsg{};
        case 2: return TickRespMsg{rng.next()};
        case 3: {
            SensorPayloadMsg m;
            m.sensor_id = "sensor_" + std::to_string(rng.below(1000));
            m.frame_id = rng.next();
            m.payload_kind = static_cast<std::uint8_t>(1 + rng.below(6));
            m.payload.resize(rng.below(5000));
            for (auto& b : m.payload) b = static_cast<std::uint8_t>(rng.next());
            return m;
        }
        case 4: {
            ActorSnapshotMsg m;
            m.frame_id = rng.next();
            m.sim_time_s = rng.uniform(0, 1000);
            const auto n = rng.below(20);
            for (std::uint64_t i = 0; i < n; ++i) m.actors.push_back(random_record(rng));
            return m;
        }
        case 5: return ShutdownMsg{};
        default: return ErrorMsg{"bad thing " + std::to_string(rng.below(100))};
    }
}

}  // namespace

TEST(ProtocolBytes, TickReqIsHeaderOnly) {
    EXPECT_EQ(encode_message(TickReqMsg{}), (ByteVec{0x00, 0x00, 0x00, 0x00, 0x02}));
}

TEST(ProtocolBytes, TickRespCarriesFrameId) {
    EXPECT_EQ(encode_message(TickRespMsg{1}),
              (ByteVec{0x08, 0x00, 0x00, 0x00, 0x03, 0x01, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}));
}

TEST(ProtocolBytes, HelloLayout) {
    ByteVec expected;
    put_u32(expected, 1 + 8 + 4);
    expected.push_back(0x01);
    expected.push_back(kProtocolVersion);
    put_u64(expected, 0x1122334455667788ULL);
    put_u32(expected, 3);
    EXPECT_EQ(encode_message(HelloMsg{kProtocolVersion, 0x1122334455667788ULL, 3}), expected);
}

TEST(ProtocolBytes, SensorPayloadLayout) {
    SensorPayloadMsg m{"cam0", 42, 1, {9, 8, 7}};
    ByteVec expected;
    put_u32(expected, 2 + 4 + 8 + 1 + 3);
    expected.push_back(0x04);
    expected.push_back(4);
    expected.push_back(0);
    for (char c : std::string("cam0")) expected.push_back(static_cast<std::uint8_t>(c));
    put_u64(expected, 42);
    expected.push_back(1);
    expected.insert(expected.end(), {9, 8, 7});
    EXPECT_EQ(encode_message(m), expected);
}

TEST(ProtocolBytes, SnapshotLayout) {
    ActorSnapshotMsg m;
    m.frame_id = 5;
    m.sim_time_s = 0.5;
    ActorRecord r;
    r.actor_id = 258;
    r.cls = 1;
    r.pose = {{1, 2, 3}, {4, 5, 6}};
    r.velocity = {7, 8, 9};
    r.yaw_rate = 10;
    r.extent = {11, 12, 13};
    m.actors = {r};
    ByteVec expected;
    put_u32(expected, 8 + 8 + 4 + (4 + 1 + 13 * 8));
    expected.push_back(0x05);
    put_u64(expected, 5);
    put_f64(expected, 0.5);
    put_u32(expected, 1);
    put_u32(expected, 258);
    expected.push_back(1);
    for (double d : {1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0, 13.0}) put_f64(expected, d);
    EXPECT_EQ(encode_message(m), expected);
}

TEST(ProtocolDecode, UnknownKindIsRejected) {
    const ByteVec bytes{0x00, 0x00, 0x00, 0x00, 0x7f};
    try {
        decode_message(bytes);
        FAIL() << "expected ProtocolError";
    } catch (const ProtocolError& e) {
        EXPECT_NE(std::string(e.what()).find("0x7f"), std::string::npos) << e.what();
    }
}

TEST(ProtocolDecode, IncompleteFramesNeedMoreBytes) {
    const ByteVec full = encode_message(TickRespMsg{77});
    for (std::size_t n = 0; n < full.size(); ++n) {
        const auto r = decode_message(std::span(full).first(n));
        EXPECT_TRUE(std::holds_alternative<NeedMoreBytes>(r)) << n;
    }
    const auto r = decode_message(full);
    ASSERT_TRUE(std::holds_alternative<Decoded>(r));
    EXPECT_EQ(std::get<Decoded>(r).consumed, full.size());
    EXPECT_EQ(std::get<Decoded>(r).message, Message(TickRespMsg{77}));
}

TEST(ProtocolDecode, MalformedBodiesAreRejected) {
    // TICK_REQ with a one-byte body.
    EXPECT_THROW(decode_message(ByteVec{0x01, 0x00, 0x00, 0x00, 0x02, 0x00}), ProtocolError);
    // TICK_RESP with a short body.
    EXPECT_THROW(decode_message(ByteVec{0x04, 0x00, 0x00, 0x00, 0x03, 1, 2, 3, 4}), ProtocolError);
    // Length beyond the cap is rejected from the header alone.
    EXPECT_THROW(decode_message(ByteVec{0xff, 0xff, 0xff, 0xff, 0x04}), ProtocolError);
    // Snapshot whose count overruns the body.
    ByteVec snap;
    put_u32(snap, 20);
    snap.push_back(0x05);
    put_u64(snap, 1);
    put_f64(snap, 0.0);
    put_u32(snap, 5);
    EXPECT_THROW(decode_message(snap), ProtocolError);
}

TEST(ProtocolProperty, RoundTripRandomMessages) {
    SplitMix64 rng(31);
    ByteVec stream;
    std::vector<Message> sent;
    for (int i = 0; i < 500; ++i) {
        const Message m = random_message(rng);
        const ByteVec bytes = encode_message(m);
        const auto r = decode_message(bytes);
        ASSERT_TRUE(std::holds_alternative<Decoded>(r));
        ASSERT_EQ(std::get<Decoded>(r).message, m);
        ASSERT_EQ(std::get<Decoded>(r).consumed, bytes.size());
        append_message(m, stream);
        sent.push_back(m);
    }
    // Feeding the concatenated stream in random-sized chunks yields the same sequence.
    StreamDecoder dec;
    std::vector<Message> received;
    std::size_t pos = 0;
    while (pos < stream.size()) {
        const std::size_t n = std::min<std::size_t>(stream.size() - pos, 1 + rng.below(700));
        dec.feed(std::span(stream).subspan(pos, n));
        pos += n;
        while (auto m = dec.next()) received.push_back(std::move(*m));
    }
    EXPECT_EQ(received, sent);
    EXPECT_NO_THROW(dec.finish());
}

TEST(ProtocolStream, FinishInsideAFrameThrows) {
    StreamDecoder dec;
    const ByteVec bytes = encode_message(TickRespMsg{3});
    dec.feed(std::span(bytes).first(7));
    EXPECT_FALSE(dec.next());
    EXPECT_THROW(dec.finish(), ProtocolError);
}

TEST(ProtocolSnapshot, WorldRoundTrip) {
    WorldState w;
    w.frame_id = 12;
    w.sim_time_s = 0.4;
    SplitMix64 rng(4);
    for (std::uint32_t i = 1; i <= 5; ++i) {
        ActorRecord r = random_record(rng);
        r.actor_id = i;
        w.actors.push_back(to_actor_state(r));
    }
    const auto snap = snapshot_of(w);
    EXPECT_EQ(snap.frame_id, 12u);
    ASSERT_EQ(snap.actors.size(), 5u);
    for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_EQ(to_actor_state(snap.actors[i]), w.actors[i]);
    }
    EXPECT_EQ(decode_snapshot_body(encode_snapshot_body(snap)), snap);
}

TEST(Transport, PairCarriesMessagesAndSignalsEof) {
    auto [a, b] = connection_pair();
    std::thread writer([&a = a] {
        for (std::uint64_t i = 1; i <= 100; ++i) a.send(TickRespMsg{i});
        a.send(SensorPayloadMsg{"big", 1, 1, ByteVec(1 << 20, 0xab)});
        a.shutdown_write();
    });
    for (std::uint64_t i = 1; i <= 100; ++i) {
        auto m = b.receive();
        ASSERT_TRUE(m);
        ASSERT_EQ(*m, Message(TickRespMsg{i}));
    }
    auto big = b.receive();
    ASSERT_TRUE(big);
    EXPECT_EQ(std::get<SensorPayloadMsg>(*big).payload.size(), 1u << 20);
    EXPECT_FALSE(b.receive());
    writer.join();
}

TEST(Transport, EofInsideAFrameThrows) {
    auto [a, b] = connection_pair();
    const ByteVec bytes = encode_message(TickRespMsg{3});
    a.send_bytes(std::span(bytes).first(6));
    a.shutdown_write();
    EXPECT_THROW(b.receive(), ProtocolError);
}
