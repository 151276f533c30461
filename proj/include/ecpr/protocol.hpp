#pragma once

// Client side of the external denoiser wire protocol.
//
// Frame: "ECPR" | version u8 = 0x01 | type u8 | payload length u32 LE | payload
//   0x01 request   h u32 | w u32 | c u32 | variance f64 | h*w*c f32 pixels
//   0x02 response  h u32 | w u32 | c u32 | h*w*c f32 pixels
//   0x03 error     UTF-8 message
//   0x04 ping, 0x05 pong (empty)
// All integers and floats are little-endian; pixels are row-major and
// channel-planar. One request is in flight per connection.

#include "ecpr/core.hpp"
#include "ecpr/denoisers.hpp"
#include "ecpr/io.hpp"

#include <cerrno>
#include <chrono>
#include <memory>

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

namespace ecpr {

class ConnectionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ProtocolError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class RemoteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class FrameType : std::uint8_t { Request = 0x01, Response = 0x02, Error = 0x03, Ping = 0x04, Pong = 0x05 };

inline constexpr std::uint8_t kProtocolVersion = 0x01;
inline constexpr std::size_t kFrameHeaderSize = 10;
inline constexpr std::uint32_t kMaxPayload = 1u << 30;

struct Frame {
    FrameType type = FrameType::Ping;
    std::string payload;
};

inline std::string encode_frame(const Frame& f)
{
    if (f.payload.size() > kMaxPayload) throw ArgumentError("frame payload too large");
    std::string out = "ECPR";
    out.push_back(static_cast<char>(kProtocolVersion));
    out.push_back(static_cast<char>(f.type));
    detail::put_u32(out, static_cast<std::uint32_t>(f.payload.size()));
    out += f.payload;
    return out;
}

/// Validates a 10-byte header and returns (type, payload length).
inline std::pair<FrameType, std::uint32_t> decode_frame_header(const unsigned char* h)
{
    if (std::memcmp(h, "ECPR", 4) != 0) throw ProtocolError("bad frame magic");
    if (h[4] != kProtocolVersion) throw ProtocolError("unsupported protocol version " + std::to_string(h[4]));
    if (h[5] < 0x01 || h[5] > 0x05) throw ProtocolError("unknown frame type " + std::to_string(h[5]));
    const auto len = detail::get_u32(h + 6);
    if (len > kMaxPayload) throw ProtocolError("frame payload length " + std::to_string(len) + " exceeds the limit");
    return {static_cast<FrameType>(h[5]), len};
}

/// Parses one complete frame; the buffer must hold exactly one frame.
inline Frame decode_frame(const std::string& bytes)
{
    if (bytes.size() < kFrameHeaderSize) throw ProtocolError("truncated frame header");
    const auto [type, len] = decode_frame_header(reinterpret_cast<const unsigned char*>(bytes.data()));
    if (bytes.size() != kFrameHeaderSize + len) throw ProtocolError("frame length does not match its header");
    return Frame{type, bytes.substr(kFrameHeaderSize)};
}

namespace detail {
inline void put_image(std::string& out, const Image& x)
{
    for (double p : x.pixels()) put_f32(out, static_cast<float>(p));
}

inline std::string shape_prefix(const Shape& s)
{
    std::string out;
    put_u32(out, static_cast<std::uint32_t>(s.height));
    put_u32(out, static_cast<std::uint32_t>(s.width));
    put_u32(out, static_cast<std::uint32_t>(s.channels));
    return out;
}

inline Shape parse_shape(const unsigned char* p)
{
    return Shape{get_u32(p), get_u32(p + 4), get_u32(p + 8)};
}

inline Image parse_pixels(const Shape& s, const unsigned char* p)
{
    RealVector v(s.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = get_f32(p + 4 * i);
    return Image(s, std::move(v));
}

inline void check_wire_shape(const Shape& s)
{
    if (s.height == 0 || s.width == 0 || (s.channels != 1 && s.channels != 3))
        throw ProtocolError("invalid image shape " + to_string(s));
}
} // namespace detail

struct DenoiseRequest {
    Image image;
    double variance = 0.0;
};

inline Frame make_request_frame(const Image& x, double variance)
{
    Frame f{FrameType::Request, detail::shape_prefix(x.shape())};
    detail::put_f64(f.payload, variance);
    detail::put_image(f.payload, x);
    return f;
}

inline Frame make_response_frame(const Image& x)
{
    Frame f{FrameType::Response, detail::shape_prefix(x.shape())};
    detail::put_image(f.payload, x);
    return f;
}

inline Frame make_error_frame(const std::string& message)
{
    return Frame{FrameType::Error, message};
}

inline DenoiseRequest parse_request(const Frame& f)
{
    if (f.type != FrameType::Request) throw ProtocolError("expected a denoise request frame");
    if (f.payload.size() < 20) throw ProtocolError("request payload too short");
    const auto* p = reinterpret_cast<const unsigned char*>(f.payload.data());
    const auto s = detail::parse_shape(p);
    detail::check_wire_shape(s);
    if (f.payload.size() != 20 + 4 * s.size()) throw ProtocolError("request payload size does not match its shape");
    return DenoiseRequest{detail::parse_pixels(s, p + 20), detail::get_f64(p + 12)};
}

inline Image parse_response(const Frame& f)
{
    if (f.type != FrameType::Response) throw ProtocolError("expected a denoise response frame");
    if (f.payload.size() < 12) throw ProtocolError("response payload too short");
    const auto* p = reinterpret_cast<const unsigned char*>(f.payload.data());
    const auto s = detail::parse_shape(p);
    detail::check_wire_shape(s);
    if (f.payload.size() != 12 + 4 * s.size()) throw ProtocolError("response payload size does not match its shape");
    return detail::parse_pixels(s, p + 12);
}

/// A bidirectional byte stream with a per-operation timeout.
class Transport {
public:
    virtual ~Transport() = default;
    virtual void write_all(const std::string& bytes) = 0;
    virtual std::string read_exact(std::size_t n) = 0;
    virtual void close() = 0;
    virtual bool is_open() const = 0;
};

namespace detail {

inline void wait_fd(int fd, short events, std::chrono::milliseconds timeout, const char* what)
{
    pollfd p{fd, events, 0};
    for (;;) {
        const int rc = ::poll(&p, 1, static_cast<int>(timeout.count()));
        if (rc > 0) return;
        if (rc == 0) throw ConnectionError(std::string("timed out while ") + what);
        if (errno != EINTR) throw ConnectionError(std::string("poll failed while ") + what + ": " + std::strerror(errno));
    }
}

inline void write_fd(int fd, const std::string& bytes, std::chrono::milliseconds timeout)
{
    std::size_t done = 0;
    while (done < bytes.size()) {
        wait_fd(fd, POLLOUT, timeout, "writing");
        const auto n = ::write(fd, bytes.data() + done, bytes.size() - done);
        if (n < 0) {
            if (errno == EINTR || errno == EAGAIN) continue;
            throw ConnectionError(std::string("write failed: ") + std::strerror(errno));
        }
        done += static_cast<std::size_t>(n);
    }
}

inline std::string read_fd(int fd, std::size_t count, std::chrono::milliseconds timeout)
{
    std::string out(count, '\0');
    std::size_t done = 0;
    while (done < count) {
        wait_fd(fd, POLLIN, timeout, "reading");
        const auto n = ::read(fd, out.data() + done, count - done);
        if (n == 0) throw ConnectionError("connection closed by peer");
        if (n < 0) {
            if (errno == EINTR || errno == EAGAIN) continue;
            throw ConnectionError(std::string("read failed: ") + std::strerror(errno));
        }
        done += static_cast<std::size_t>(n);
    }
    return out;
}

inline void ignore_sigpipe()
{
    static const bool once = [] {
        ::signal(SIGPIPE, SIG_IGN);
        return true;
    }();
    (void)once;
}

} // namespace detail

class TcpTransport final : public Transport {
public:
    TcpTransport(const std::string& host, std::uint16_t port, std::chrono::milliseconds timeout) : timeout_(timeout)
    {
        detail::ignore_sigpipe();
        addrinfo hints{};
        hints.ai_family = AF_UNSPEC;
        hints.ai_socktype = SOCK_STREAM;
        addrinfo* res = nullptr;
        const auto port_str = std::to_string(port);
        if (const int rc = ::getaddrinfo(host.c_str(), port_str.c_str(), &hints, &res); rc != 0)
            throw ConnectionError("cannot resolve '" + host + "': " + ::gai_strerror(rc));
        std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(res, &::freeaddrinfo);
        std::string last = "no addresses";
        for (auto* a = res; a != nullptr; a = a->ai_next) {
            const int fd = ::socket(a->ai_family, a->ai_socktype | SOCK_CLOEXEC, a->ai_protocol);
            if (fd < 0) continue;
            ::fcntl(fd, F_SETFL, ::fcntl(fd, F_GETFL) | O_NONBLOCK);
            int rc = ::connect(fd, a->ai_addr, a->ai_addrlen);
            if (rc != 0 && errno == EINPROGRESS) {
                pollfd p{fd, POLLOUT, 0};
                rc = ::poll(&p, 1, static_cast<int>(timeout.count()));
                if (rc == 0) {
                    ::close(fd);
                    last = "connect timed out";
                    continue;
                }
                int err = 0;
                socklen_t len = sizeof err;
                ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
                rc = err == 0 ? 0 : -1;
                errno = err;
            }
            if (rc == 0) {
                int one = 1;
                ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
                fd_ = fd;
                return;
            }
            last = std::strerror(errno);
            ::close(fd);
        }
        throw ConnectionError("cannot connect to " + host + ":" + port_str + ": " + last);
    }

    ~TcpTransport() override { close(); }
    TcpTransport(const TcpTransport&) = delete;
    TcpTransport& operator=(const TcpTransport&) = delete;

    void write_all(const std::string& bytes) override
    {
        require_open();
        detail::write_fd(fd_, bytes, timeout_);
    }

    std::string read_exact(std::size_t n) override
    {
        require_open();
        return detail::read_fd(fd_, n, timeout_);
    }

    void close() override
    {
        if (fd_ >= 0) ::close(fd_);
        fd_ = -1;
    }

    bool is_open() const override { return fd_ >= 0; }

private:
    void require_open() const
    {
        if (fd_ < 0) throw ConnectionError("connection is closed");
    }

    int fd_ = -1;
    std::chrono::milliseconds timeout_;
};

/// Runs `sh -c command` and talks to it over its stdin/stdout.
class StdioTransport final : public Transport {
public:
    StdioTransport(const std::string& command, std::chrono::milliseconds timeout) : timeout_(timeout)
    {
        detail::ignore_sigpipe();
        int to_child[2];
        int from_child[2];
        if (::pipe2(to_child, O_CLOEXEC) != 0) throw ConnectionError("pipe failed");
        if (::pipe2(from_child, O_CLOEXEC) != 0) {
            ::close(to_child[0]);
            ::close(to_child[1]);
            throw ConnectionError("pipe failed");
        }
        pid_ = ::fork();
        if (pid_ < 0) throw ConnectionError("fork failed");
        if (pid_ == 0) {
            ::dup2(to_child[0], STDIN_FILENO);
            ::dup2(from_child[1], STDOUT_FILENO);
            ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
            ::_exit(127);
        }
        ::close(to_child[0]);
        ::close(from_child[1]);
        write_fd_ = to_child[1];
        read_fd_ = from_child[0];
    }

    ~StdioTransport() override { close(); }
    StdioTransport(const StdioTransport&) = delete;
    StdioTransport& operator=(const StdioTransport&) = delete;

    void write_all(const std::string& bytes) override
    {
        require_open();
        detail::write_fd(write_fd_, bytes, timeout_);
    }

    std::string read_exact(std::size_t n) override
    {
        require_open();
        return detail::read_fd(read_fd_, n, timeout_);
    }

    void close() override
    {
        if (write_fd_ >= 0) ::close(write_fd_);
        if (read_fd_ >= 0) ::close(read_fd_);
        write_fd_ = read_fd_ = -1;
        if (pid_ > 0) {
            int status = 0;
            if (::waitpid(pid_, &status, WNOHANG) == 0) {
                ::kill(pid_, SIGTERM);
                ::waitpid(pid_, &status, 0);
            }
            pid_ = -1;
        }
    }

    bool is_open() const override { return write_fd_ >= 0; }

private:
    void require_open() const
    {
        if (write_fd_ < 0) throw ConnectionError("connection is closed");
    }

    pid_t pid_ = -1;
    int write_fd_ = -1;
    int read_fd_ = -1;
    std::chrono::milliseconds timeout_;
};

/// Parsed form of an endpoint string: "HOST:PORT" or "stdio:COMMAND".
struct Endpoint {
    enum class Kind { Tcp, Stdio } kind = Kind::Tcp;
    std::string host;
    std::uint16_t port = 0;
    std::string command;
};

inline Endpoint parse_endpoint(const std::string& text)
{
    Endpoint e;
    if (text.rfind("stdio:", 0) == 0) {
        e.kind = Endpoint::Kind::Stdio;
        e.command = text.substr(6);
        if (e.command.empty()) throw ArgumentError("stdio endpoint needs a command");
        return e;
    }
    const auto colon = text.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == text.size())
        throw ArgumentError("endpoint '" + text + "' is not HOST:PORT or stdio:COMMAND");
    e.host = text.substr(0, colon);
    unsigned long port = 0;
    try {
        std::size_t used = 0;
        port = std::stoul(text.substr(colon + 1), &used);
        if (used != text.size() - colon - 1) throw std::invalid_argument("port");
    } catch (const std::exception&) {
        throw ArgumentError("endpoint '" + text + "' has an invalid port");
    }
    if (port == 0 || port > 65535) throw ArgumentError("endpoint '" + text + "' has an invalid port");
    e.port = static_cast<std::uint16_t>(port);
    return e;
}

inline std::unique_ptr<Transport> connect_endpoint(const Endpoint& e, std::chrono::milliseconds timeout)
{
    if (e.kind == Endpoint::Kind::Stdio) return std::make_unique<StdioTransport>(e.command, timeout);
    return std::make_unique<TcpTransport>(e.host, e.port, timeout);
}

/// One connection to a denoiser server. Not thread-safe; one request in
/// flight. Any transport or protocol failure closes the connection.
class RemoteDenoiser {
public:
    explicit RemoteDenoiser(std::unique_ptr<Transport> transport) : transport_(std::move(transport)) {}

    RemoteDenoiser(const Endpoint& endpoint, std::chrono::milliseconds timeout = std::chrono::seconds(10))
        : transport_(connect_endpoint(endpoint, timeout))
    {
    }

    bool is_open() const { return transport_ && transport_->is_open(); }

    void ping()
    {
        const auto reply = round_trip(Frame{FrameType::Ping, {}});
        if (reply.type != FrameType::Pong) fail<ProtocolError>("expected a pong frame");
    }

    Image denoise(const Image& r, double v_in)
    {
        const auto reply = round_trip(make_request_frame(r, v_in));
        Image out;
        try {
            out = parse_response(reply);
        } catch (const ProtocolError&) {
            transport_->close();
            throw;
        }
        if (out.shape() != r.shape())
            fail<ProtocolError>("response shape " + to_string(out.shape()) + " does not match request shape "
                                + to_string(r.shape()));
        return out;
    }

    void close()
    {
        if (transport_) transport_->close();
    }

private:
    template <typename E>
    [[noreturn]] void fail(const std::string& msg)
    {
        transport_->close();
        throw E(msg);
    }

    Frame round_trip(const Frame& request)
    {
        if (!is_open()) throw ConnectionError("connection is closed");
        Frame reply;
        try {
            transport_->write_all(encode_frame(request));
            const auto header = transport_->read_exact(kFrameHeaderSize);
            const auto [type, len] = decode_frame_header(reinterpret_cast<const unsigned char*>(header.data()));
            reply.type = type;
            reply.payload = transport_->read_exact(len);
        } catch (const ConnectionError&) {
            transport_->close();
            throw;
        } catch (const ProtocolError&) {
            transport_->close();
            throw;
        }
        if (reply.type == FrameType::Error) throw RemoteError("denoiser server error: " + reply.payload);
        return reply;
    }

    std::unique_ptr<Transport> transport_;
};

/// Wraps a connection as a DenoiserSpec. The spec shares the connection, so
/// it must not be used from more than one thread.
inline DenoiserSpec remote_denoiser_spec(std::shared_ptr<RemoteDenoiser> client, double beta, SdRange range = {})
{
    DenoiserSpec spec;
    spec.name = "remote";
    spec.fn = [client](const Image& r, double v_in) { return client->denoise(r, v_in); };
    spec.beta = beta;
    spec.sd_range = range;
    return spec;
}

} // namespace ecpr
