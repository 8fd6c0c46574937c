#include "simsync/transport.hpp"

#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <array>
#include <cerrno>
#include <cstring>
#include <thread>

namespace simsync {

namespace {

std::string strip_scheme(const std::string& endpoint) {
    constexpr std::string_view kScheme = "unix:";
    if (endpoint.starts_with(kScheme)) {
        return endpoint.substr(kScheme.size());
    }
    return endpoint;
}

sockaddr_un make_address(const std::string& path) {
    sockaddr_un addr{};
    addr.sun_family = AF_UNIX;
    if (path.size() >= sizeof(addr.sun_path)) {
        throw TransportError("socket path too long: " + path);
    }
    std::memcpy(addr.sun_path, path.c_str(), path.size() + 1);
    return addr;
}

std::string errno_text(const std::string& what) {
    return what + ": " + std::strerror(errno);
}

}  // namespace

Connection::~Connection() {
    close();
}

Connection& Connection::operator=(Connection&& other) noexcept {
    if (this != &other) {
        close();
        fd_ = std::exchange(other.fd_, -1);
        decoder_ = std::move(other.decoder_);
    }
    return *this;
}

void Connection::send(const Message& m) {
    send_bytes(encode_message(m));
}

void Connection::send_bytes(std::span<const std::uint8_t> bytes) {
    std::size_t sent = 0;
    while (sent < bytes.size()) {
        const ssize_t n = ::send(fd_, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) {
                continue;
            }
            throw TransportError(errno_text("send failed"));
        }
        sent += static_cast<std::size_t>(n);
    }
}

std::optional<Message> Connection::receive() {
    std::array<std::uint8_t, 1 << 16> chunk{};
    while (true) {
        if (auto m = decoder_.next()) {
            return m;
        }
        const ssize_t n = ::recv(fd_, chunk.data(), chunk.size(), 0);
        if (n < 0) {
            if (errno == EINTR) {
                continue;
            }
            throw TransportError(errno_text("recv failed"));
        }
        if (n == 0) {
            decoder_.finish();
            return std::nullopt;
        }
        decoder_.feed(std::span(chunk.data(), static_cast<std::size_t>(n)));
    }
}

void Connection::shutdown_write() {
    if (fd_ >= 0) {
        ::shutdown(fd_, SHUT_WR);
    }
}

void Connection::close() {
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
    }
}

std::pair<Connection, Connection> connection_pair() {
    int fds[2];
    if (::socketpair(AF_UNIX, SOCK_STREAM, 0, fds) != 0) {
        throw TransportError(errno_text("socketpair failed"));
    }
    return {Connection(fds[0]), Connection(fds[1])};
}

Listener::Listener(const std::string& endpoint) : path_(strip_scheme(endpoint)) {
    fd_ = ::socket(AF_UNIX, SOCK_STREAM, 0);
    if (fd_ < 0) {
        throw TransportError(errno_text("socket failed"));
    }
    ::unlink(path_.c_str());
    const auto addr = make_address(path_);
    if (::bind(fd_, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0 || ::listen(fd_, 4) != 0) {
        const auto message = errno_text("cannot listen on " + path_);
        ::close(fd_);
        throw TransportError(message);
    }
}

Listener::~Listener() {
    if (fd_ >= 0) {
        ::close(fd_);
        ::unlink(path_.c_str());
    }
}

Connection Listener::accept() {
    while (true) {
        const int fd = ::accept(fd_, nullptr, nullptr);
        if (fd >= 0) {
            return Connection(fd);
        }
        if (errno != EINTR) {
            throw TransportError(errno_text("accept failed"));
        }
    }
}

Connection connect_to(const std::string& endpoint, std::chrono::milliseconds timeout) {
    const std::string path = strip_scheme(endpoint);
    const auto addr = make_address(path);
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    while (true) {
        const int fd = ::socket(AF_UNIX, SOCK_STREAM, 0);
        if (fd < 0) {
            throw TransportError(errno_text("socket failed"));
        }
        if (::connect(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) == 0) {
            return Connection(fd);
        }
        const int err = errno;
        ::close(fd);
        if (std::chrono::steady_clock::now() >= deadline) {
            errno = err;
            throw TransportError(errno_text("cannot connect to " + path));
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
}

}  // namespace simsync
