#pragma once

#include <chrono>
#include <span>
#include <string>
#include <utility>

#include "simsync/protocol.hpp"

namespace simsync {

class TransportError : public std::runtime_error {
public:
    explicit TransportError(const std::string& what) : std::runtime_error(what) {}
};

// Owns one connected stream socket. Blocking; not shared between threads
// except that one thread may send while another receives.
class Connection {
public:
    Connection() = default;
    explicit Connection(int fd) : fd_(fd) {}
    ~Connection();
    Connection(Connection&& other) noexcept : fd_(std::exchange(other.fd_, -1)), decoder_(std::move(other.decoder_)) {}
    Connection& operator=(Connection&& other) noexcept;
    Connection(const Connection&) = delete;
    Connection& operator=(const Connection&) = delete;

    bool valid() const { return fd_ >= 0; }
    int fd() const { return fd_; }

    void send(const Message& m);
    void send_bytes(std::span<const std::uint8_t> bytes);

    // Blocks until a full message arrives. Returns nullopt on a clean EOF at a
    // frame boundary; throws ProtocolError on EOF inside a frame.
    std::optional<Message> receive();

    // Half-close: no more sends from this side.
    void shutdown_write();
    void close();

private:
    int fd_ = -1;
    StreamDecoder decoder_;
};

// A connected pair, used to run a server and a collector in one process tree.
std::pair<Connection, Connection> connection_pair();

// Endpoints are filesystem paths of unix-domain sockets ("unix:" prefix optional).
class Listener {
public:
    explicit Listener(const std::string& endpoint);
    ~Listener();
    Listener(const Listener&) = delete;
    Listener& operator=(const Listener&) = delete;

    Connection accept();
    const std::string& path() const { return path_; }

private:
    int fd_ = -1;
    std::string path_;
};

// Retries until the endpoint accepts or the timeout elapses.
Connection connect_to(const std::string& endpoint, std::chrono::milliseconds timeout = std::chrono::seconds(10));

}  // namespace simsync
