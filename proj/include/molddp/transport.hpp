#pragma once

// Point-to-point message transport for SPMD workers. Frames on the wire:
//
//   u32 length (of everything after this field)
//   u8 version | u8 type | u16 reserved | i32 source rank | u64 sequence |
//   u32 ndim | u64 dims[ndim] | payload | u32 crc32(version .. payload)
//
// Two implementations: an in-process mesh for threads and TCP sockets with a
// rank-0 rendezvous.

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <condition_variable>
#include <deque>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "molddp/binio.hpp"
#include "molddp/error.hpp"

namespace molddp {

inline constexpr std::uint8_t kWireVersion = 1;

enum class WireType : std::uint8_t { Control = 0, F32 = 1, F64 = 2, I64 = 3, U8 = 4, Abort = 255 };

template <class T>
constexpr WireType wire_type_of() {
  if constexpr (std::is_same_v<T, float>) return WireType::F32;
  else if constexpr (std::is_same_v<T, double>) return WireType::F64;
  else if constexpr (std::is_same_v<T, std::int64_t>) return WireType::I64;
  else {
    static_assert(std::is_same_v<T, std::uint8_t>, "unsupported wire element type");
    return WireType::U8;
  }
}

struct Frame {
  WireType type = WireType::Control;
  std::int32_t src = 0;
  std::uint64_t seq = 0;
  std::vector<std::uint64_t> dims;
  Bytes payload;
};

inline Bytes encode_frame(const Frame& f) {
  ByteWriter body;
  body.put(kWireVersion);
  body.put(static_cast<std::uint8_t>(f.type));
  body.put(std::uint16_t{0});
  body.put(f.src);
  body.put(f.seq);
  body.put(static_cast<std::uint32_t>(f.dims.size()));
  for (auto d : f.dims) body.put(d);
  body.put_bytes(f.payload);
  const std::uint32_t crc = crc32(body.bytes());
  ByteWriter out;
  out.put(static_cast<std::uint32_t>(body.size() + 4));
  out.put_bytes(body.bytes());
  out.put(crc);
  return out.take();
}

/// Decodes the bytes that follow the length field.
inline Frame decode_frame(std::span<const std::byte> bytes) {
  require(bytes.size() >= 24, ErrorKind::TransportFailure, "frame too short");
  const auto body = bytes.first(bytes.size() - 4);
  ByteReader tail(bytes.last(4), ErrorKind::TransportFailure);
  require(tail.get<std::uint32_t>() == crc32(body), ErrorKind::TransportFailure, "frame checksum mismatch");
  ByteReader r(body, ErrorKind::TransportFailure);
  require(r.get<std::uint8_t>() == kWireVersion, ErrorKind::TransportFailure, "unsupported wire version");
  Frame f;
  f.type = static_cast<WireType>(r.get<std::uint8_t>());
  r.get<std::uint16_t>();
  f.src = r.get<std::int32_t>();
  f.seq = r.get<std::uint64_t>();
  const auto ndim = r.get<std::uint32_t>();
  require(ndim <= 8, ErrorKind::TransportFailure, "too many frame dimensions");
  for (std::uint32_t i = 0; i < ndim; ++i) f.dims.push_back(r.get<std::uint64_t>());
  const auto rest = r.get_span(r.remaining());
  f.payload.assign(rest.begin(), rest.end());
  return f;
}

/// Queue of frames from one peer.
class Mailbox {
 public:
  void push(Frame f) {
    {
      std::lock_guard lk(mu_);
      q_.push_back(std::move(f));
    }
    cv_.notify_all();
  }

  void close(std::string reason) {
    {
      std::lock_guard lk(mu_);
      if (closed_) return;
      closed_ = true;
      reason_ = std::move(reason);
    }
    cv_.notify_all();
  }

  Frame pop(std::chrono::milliseconds timeout, int peer) {
    std::unique_lock lk(mu_);
    if (!cv_.wait_for(lk, timeout, [&] { return !q_.empty() || closed_; }))
      fail(ErrorKind::Timeout, "no message from rank " + std::to_string(peer) + " within " +
                                   std::to_string(timeout.count()) + " ms");
    if (q_.empty()) fail(ErrorKind::TransportFailure, reason_);
    Frame f = std::move(q_.front());
    q_.pop_front();
    return f;
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Frame> q_;
  bool closed_ = false;
  std::string reason_;
};

class Transport {
 public:
  Transport(int rank, int world_size) : rank_(rank), world_(world_size) {
    require(world_size >= 1 && rank >= 0 && rank < world_size, ErrorKind::InvalidArgument,
            "need 0 <= rank < world_size");
  }
  virtual ~Transport() = default;
  Transport(const Transport&) = delete;
  Transport& operator=(const Transport&) = delete;

  int rank() const { return rank_; }
  int world_size() const { return world_; }

  /// Sends `f` to `dst`; the source rank is filled in.
  virtual void send(int dst, Frame f) = 0;

  Frame recv(int src, std::chrono::milliseconds timeout) {
    check_peer(src);
    return inbox(src).pop(timeout, src);
  }

 protected:
  void check_peer(int peer) const {
    require(peer >= 0 && peer < world_ && peer != rank_, ErrorKind::InvalidArgument,
            "invalid peer rank " + std::to_string(peer));
  }
  virtual Mailbox& inbox(int src) = 0;

 private:
  int rank_;
  int world_;
};

/// Endpoints that exchange frames through shared memory queues. Frames are
/// still encoded and decoded so the wire codec is exercised.
class InProcessTransport final : public Transport {
 public:
  using Grid = std::vector<std::vector<std::shared_ptr<Mailbox>>>;  // [dst][src]

  InProcessTransport(int rank, std::shared_ptr<Grid> grid)
      : Transport(rank, static_cast<int>(grid->size())), grid_(std::move(grid)) {}

  void send(int dst, Frame f) override {
    check_peer(dst);
    f.src = rank();
    const Bytes wire = encode_frame(f);
    (*grid_)[static_cast<std::size_t>(dst)][static_cast<std::size_t>(rank())]->push(
        decode_frame(std::span(wire).subspan(4)));
  }

 protected:
  Mailbox& inbox(int src) override {
    return *(*grid_)[static_cast<std::size_t>(rank())][static_cast<std::size_t>(src)];
  }

 private:
  std::shared_ptr<Grid> grid_;
};

inline std::vector<std::unique_ptr<Transport>> make_inprocess_mesh(int world_size) {
  require(world_size >= 1, ErrorKind::InvalidArgument, "world_size must be >= 1");
  auto grid = std::make_shared<InProcessTransport::Grid>(static_cast<std::size_t>(world_size));
  for (auto& row : *grid)
    for (int s = 0; s < world_size; ++s) row.push_back(std::make_shared<Mailbox>());
  std::vector<std::unique_ptr<Transport>> out;
  for (int r = 0; r < world_size; ++r) out.push_back(std::make_unique<InProcessTransport>(r, grid));
  return out;
}

struct Endpoint {
  std::string host;
  std::uint16_t port = 0;
};

inline Endpoint parse_endpoint(std::string_view text) {
  const auto colon = text.rfind(':');
  require(colon != std::string_view::npos && colon > 0 && colon + 1 < text.size(), ErrorKind::InvalidArgument,
          "expected host:port, got '" + std::string(text) + "'");
  const std::string port(text.substr(colon + 1));
  char* end = nullptr;
  const long p = std::strtol(port.c_str(), &end, 10);
  require(*end == '\0' && p > 0 && p < 65536, ErrorKind::InvalidArgument, "bad port '" + port + "'");
  return {std::string(text.substr(0, colon)), static_cast<std::uint16_t>(p)};
}

namespace detail {

inline void write_all(int fd, std::span<const std::byte> data) {
  std::size_t done = 0;
  while (done < data.size()) {
    const ssize_t n = ::send(fd, data.data() + done, data.size() - done, MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) fail(ErrorKind::TransportFailure, std::string("send failed: ") + std::strerror(errno));
    done += static_cast<std::size_t>(n);
  }
}

inline bool read_all(int fd, std::span<std::byte> out) {
  std::size_t done = 0;
  while (done < out.size()) {
    const ssize_t n = ::recv(fd, out.data() + done, out.size() - done, 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return false;
    done += static_cast<std::size_t>(n);
  }
  return true;
}

inline Frame read_frame(int fd) {
  std::array<std::byte, 4> len_raw{};
  if (!read_all(fd, len_raw)) fail(ErrorKind::TransportFailure, "connection closed");
  ByteReader lr(len_raw, ErrorKind::TransportFailure);
  const auto len = lr.get<std::uint32_t>();
  require(len >= 24, ErrorKind::TransportFailure, "frame length too small");
  Bytes body(len);
  if (!read_all(fd, body)) fail(ErrorKind::TransportFailure, "connection closed mid-frame");
  return decode_frame(body);
}

inline void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

inline sockaddr_in resolve(const Endpoint& ep) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(ep.host.c_str(), nullptr, &hints, &res) != 0 || !res)
    fail(ErrorKind::TransportFailure, "cannot resolve host '" + ep.host + "'");
  sockaddr_in addr = *reinterpret_cast<sockaddr_in*>(res->ai_addr);
  ::freeaddrinfo(res);
  addr.sin_port = htons(ep.port);
  return addr;
}

inline FileHandle listen_on(sockaddr_in addr) {
  FileHandle fd(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
  if (!fd) fail(ErrorKind::TransportFailure, "socket() failed");
  int one = 1;
  ::setsockopt(fd.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  if (::bind(fd.get(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
    fail(ErrorKind::TransportFailure, std::string("bind failed: ") + std::strerror(errno));
  if (::listen(fd.get(), 128) != 0) fail(ErrorKind::TransportFailure, "listen failed");
  return fd;
}

inline FileHandle accept_before(int listener, std::chrono::steady_clock::time_point deadline) {
  for (;;) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) fail(ErrorKind::Timeout, "rendezvous: not all ranks connected in time");
    pollfd p{listener, POLLIN, 0};
    const int rc = ::poll(&p, 1, static_cast<int>(std::min<std::int64_t>(left.count(), 1000)));
    if (rc < 0 && errno == EINTR) continue;
    if (rc <= 0) continue;
    FileHandle fd(::accept4(listener, nullptr, nullptr, SOCK_CLOEXEC));
    if (fd) {
      set_nodelay(fd.get());
      return fd;
    }
  }
}

inline FileHandle connect_before(sockaddr_in addr, std::chrono::steady_clock::time_point deadline) {
  for (;;) {
    FileHandle fd(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
    if (!fd) fail(ErrorKind::TransportFailure, "socket() failed");
    if (::connect(fd.get(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0) {
      set_nodelay(fd.get());
      return fd;
    }
    if (std::chrono::steady_clock::now() >= deadline)
      fail(ErrorKind::Timeout, "rendezvous: could not connect to " + std::string(::inet_ntoa(addr.sin_addr)) + ":" +
                                   std::to_string(ntohs(addr.sin_port)));
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
}

inline std::uint16_t local_port(int fd) {
  sockaddr_in a{};
  socklen_t len = sizeof a;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&a), &len);
  return ntohs(a.sin_port);
}

}  // namespace detail

/// Full mesh of TCP connections. Rank 0 listens on the rendezvous address,
/// collects every rank's listening port and hands out the peer table; each
/// rank then connects to all lower ranks. A reader thread per link feeds the
/// mailboxes.
class TcpTransport final : public Transport {
 public:
  TcpTransport(int rank, int world_size, const Endpoint& rendezvous,
               std::chrono::milliseconds timeout = std::chrono::seconds(60))
      : Transport(rank, world_size) {
    const int W = world_size;
    for (int s = 0; s < W; ++s) boxes_.push_back(std::make_unique<Mailbox>());
    links_.resize(static_cast<std::size_t>(W));
    if (W == 1) return;
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    const sockaddr_in root = detail::resolve(rendezvous);

    if (rank == 0) {
      FileHandle listener = detail::listen_on(root);
      std::vector<std::pair<std::string, std::uint16_t>> table(static_cast<std::size_t>(W));
      for (int k = 1; k < W; ++k) {
        FileHandle fd = detail::accept_before(listener.get(), deadline);
        const Frame hello = detail::read_frame(fd.get());
        require(hello.type == WireType::Control && hello.dims.size() == 2, ErrorKind::TransportFailure,
                "rendezvous: bad hello");
        const int peer = hello.src;
        require(peer > 0 && peer < W && !links_[static_cast<std::size_t>(peer)], ErrorKind::TransportFailure,
                "rendezvous: duplicate or invalid rank " + std::to_string(peer));
        require(static_cast<int>(hello.dims[0]) == W, ErrorKind::TransportFailure,
                "rendezvous: world size disagreement with rank " + std::to_string(peer));
        sockaddr_in pa{};
        socklen_t len = sizeof pa;
        ::getpeername(fd.get(), reinterpret_cast<sockaddr*>(&pa), &len);
        table[static_cast<std::size_t>(peer)] = {::inet_ntoa(pa.sin_addr), static_cast<std::uint16_t>(hello.dims[1])};
        links_[static_cast<std::size_t>(peer)] = std::make_unique<Link>(std::move(fd));
      }
      ByteWriter w;
      for (const auto& [host, port] : table) {
        w.put_string(host);
        w.put(port);
      }
      Frame tf;
      tf.src = 0;
      tf.payload = w.take();
      for (int k = 1; k < W; ++k) detail::write_all(links_[k]->fd.get(), encode_frame(tf));
    } else {
      sockaddr_in any{};
      any.sin_family = AF_INET;
      any.sin_addr.s_addr = htonl(INADDR_ANY);
      FileHandle listener = detail::listen_on(any);
      FileHandle fd = detail::connect_before(root, deadline);
      Frame hello;
      hello.src = rank;
      hello.dims = {static_cast<std::uint64_t>(W), detail::local_port(listener.get())};
      detail::write_all(fd.get(), encode_frame(hello));
      const Frame tf = detail::read_frame(fd.get());
      links_[0] = std::make_unique<Link>(std::move(fd));
      ByteReader r(tf.payload, ErrorKind::TransportFailure);
      std::vector<Endpoint> table;
      for (int k = 0; k < W; ++k) {
        Endpoint ep;
        ep.host = r.get_string();
        ep.port = r.get<std::uint16_t>();
        table.push_back(ep);
      }
      for (int k = 1; k < rank; ++k) {
        FileHandle c = detail::connect_before(detail::resolve(table[static_cast<std::size_t>(k)]), deadline);
        Frame h;
        h.src = rank;
        h.dims = {static_cast<std::uint64_t>(W), 0};
        detail::write_all(c.get(), encode_frame(h));
        links_[static_cast<std::size_t>(k)] = std::make_unique<Link>(std::move(c));
      }
      for (int k = rank + 1; k < W; ++k) {
        FileHandle c = detail::accept_before(listener.get(), deadline);
        const Frame h = detail::read_frame(c.get());
        const int peer = h.src;
        require(peer > rank && peer < W && !links_[static_cast<std::size_t>(peer)], ErrorKind::TransportFailure,
                "mesh: unexpected rank " + std::to_string(peer));
        links_[static_cast<std::size_t>(peer)] = std::make_unique<Link>(std::move(c));
      }
    }
    for (int p = 0; p < W; ++p)
      if (p != rank) start_reader(p);
  }

  ~TcpTransport() override {
    for (auto& l : links_)
      if (l) ::shutdown(l->fd.get(), SHUT_RDWR);
    for (auto& l : links_)
      if (l && l->reader.joinable()) l->reader.join();
  }

  void send(int dst, Frame f) override {
    check_peer(dst);
    f.src = rank();
    auto& link = *links_[static_cast<std::size_t>(dst)];
    const Bytes wire = encode_frame(f);
    std::lock_guard lk(link.write_mu);
    detail::write_all(link.fd.get(), wire);
  }

 protected:
  Mailbox& inbox(int src) override { return *boxes_[static_cast<std::size_t>(src)]; }

 private:
  struct Link {
    explicit Link(FileHandle f) : fd(std::move(f)) {}
    FileHandle fd;
    std::mutex write_mu;
    std::thread reader;
  };

  void start_reader(int peer) {
    auto& link = *links_[static_cast<std::size_t>(peer)];
    link.reader = std::thread([this, peer, fd = link.fd.get()] {
      auto& box = *boxes_[static_cast<std::size_t>(peer)];
      try {
        for (;;) {
          Frame f = detail::read_frame(fd);
          require(f.src == peer, ErrorKind::TransportFailure, "frame source does not match link");
          box.push(std::move(f));
        }
      } catch (const std::exception& e) {
        box.close("link to rank " + std::to_string(peer) + " lost: " + e.what());
      }
    });
  }

  std::vector<std::unique_ptr<Mailbox>> boxes_;
  std::vector<std::unique_ptr<Link>> links_;
};

}  // namespace molddp
