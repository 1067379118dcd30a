#pragma once

#include <chrono>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "molddp/transport.hpp"

namespace molddp {

enum class AllreduceAlgo { Ring, Naive };

/// Collective operations over a Transport. Every rank must issue the same
/// collectives in the same order; a per-communicator sequence number checks
/// this on every frame.
class Communicator {
 public:
  explicit Communicator(Transport& t, std::chrono::milliseconds timeout = std::chrono::seconds(120))
      : t_(&t), timeout_(timeout) {}

  int rank() const { return t_->rank(); }
  int world_size() const { return t_->world_size(); }
  std::chrono::milliseconds timeout() const { return timeout_; }
  void set_timeout(std::chrono::milliseconds t) { timeout_ = t; }

  void barrier() {
    const auto seq = next_seq();
    if (world_size() == 1) return;
    if (rank() == 0) {
      for (int r = 1; r < world_size(); ++r) expect(r, WireType::Control, seq);
      for (int r = 1; r < world_size(); ++r) send_control(r, seq);
    } else {
      send_control(0, seq);
      expect(0, WireType::Control, seq);
    }
  }

  /// Copies root's data into every rank's buffer, then synchronises so an
  /// absent rank surfaces as Timeout on the root as well.
  template <class T>
  void broadcast(std::span<T> data, int root = 0) {
    check_root(root);
    const auto seq = next_seq();
    if (world_size() == 1) return;
    if (rank() == root) {
      for (int r = 0; r < world_size(); ++r)
        if (r != root) send_tensor<T>(r, seq, data, {data.size()});
    } else {
      Frame f = expect(root, wire_type_of<T>(), seq);
      unpack<T>(f, data, "broadcast");
    }
    barrier();
  }

  /// Replaces `data` on every rank with the elementwise mean over ranks.
  template <class T>
  void allreduce_mean(std::span<T> data, AllreduceAlgo algo = AllreduceAlgo::Ring) {
    const auto seq = next_seq();
    if (world_size() == 1) return;
    if (algo == AllreduceAlgo::Naive) naive_mean(data, seq);
    else ring_mean(data, seq);
  }

  /// Root receives every rank's vector (its own included) in rank order;
  /// other ranks get an empty result.
  template <class T>
  std::vector<std::vector<T>> gather(std::span<const T> data, int root = 0) {
    check_root(root);
    const auto seq = next_seq();
    std::vector<std::vector<T>> out;
    if (rank() != root) {
      send_tensor<const T>(root, seq, data, {data.size()});
      return out;
    }
    for (int r = 0; r < world_size(); ++r) {
      if (r == root) {
        out.emplace_back(data.begin(), data.end());
        continue;
      }
      Frame f = expect(r, wire_type_of<T>(), seq);
      std::vector<T> v(f.payload.size() / sizeof(T));
      require(v.size() * sizeof(T) == f.payload.size(), ErrorKind::TransportFailure, "gather payload size");
      if (!v.empty()) std::memcpy(v.data(), f.payload.data(), f.payload.size());
      out.push_back(std::move(v));
    }
    return out;
  }

  /// Best-effort notice to every peer that this rank is failing.
  void abort(const std::string& reason) noexcept {
    for (int r = 0; r < world_size(); ++r) {
      if (r == rank()) continue;
      try {
        Frame f;
        f.type = WireType::Abort;
        f.payload.resize(reason.size());
        std::memcpy(f.payload.data(), reason.data(), reason.size());
        t_->send(r, std::move(f));
      } catch (...) {
      }
    }
  }

 private:
  std::uint64_t next_seq() { return ++seq_; }

  void check_root(int root) const {
    require(root >= 0 && root < world_size(), ErrorKind::InvalidArgument, "invalid root rank");
  }

  void send_control(int dst, std::uint64_t seq) {
    Frame f;
    f.type = WireType::Control;
    f.seq = seq;
    t_->send(dst, std::move(f));
  }

  template <class T>
  void send_tensor(int dst, std::uint64_t seq, std::span<T> data, std::vector<std::uint64_t> dims) {
    using V = std::remove_const_t<T>;
    Frame f;
    f.type = wire_type_of<V>();
    f.seq = seq;
    f.dims = std::move(dims);
    f.payload.resize(data.size_bytes());
    if (!data.empty()) std::memcpy(f.payload.data(), data.data(), data.size_bytes());
    t_->send(dst, std::move(f));
  }

  Frame expect(int src, WireType type, std::uint64_t seq) {
    Frame f = t_->recv(src, timeout_);
    if (f.type == WireType::Abort)
      fail(ErrorKind::TransportFailure,
           "rank " + std::to_string(src) + " aborted: " +
               std::string(reinterpret_cast<const char*>(f.payload.data()), f.payload.size()));
    if (f.seq != seq || f.type != type)
      fail(ErrorKind::TransportFailure, "collective mismatch with rank " + std::to_string(src) + " (sequence " +
                                            std::to_string(f.seq) + ", expected " + std::to_string(seq) + ")");
    return f;
  }

  template <class T>
  void unpack(const Frame& f, std::span<T> out, const char* what) {
    if (f.payload.size() != out.size_bytes() || f.dims.empty() || f.dims[0] != out.size()) {
      const std::string msg = std::string(what) + ": tensor of " + std::to_string(f.dims.empty() ? 0 : f.dims[0]) +
                              " elements from rank " + std::to_string(f.src) + ", expected " +
                              std::to_string(out.size());
      abort(msg);
      fail(ErrorKind::ShapeMismatch, msg);
    }
    if (!out.empty()) std::memcpy(out.data(), f.payload.data(), f.payload.size());
  }

  // Root sums contributions in rank-ascending order, divides, and sends
  // the result back.
  template <class T>
  void naive_mean(std::span<T> data, std::uint64_t seq) {
    const int W = world_size();
    if (rank() != 0) {
      send_tensor<T>(0, seq, data, {data.size()});
      Frame f = expect(0, wire_type_of<T>(), seq);
      unpack<T>(f, data, "allreduce");
      return;
    }
    std::vector<T> acc(data.begin(), data.end()), part(data.size());
    for (int r = 1; r < W; ++r) {
      Frame f = expect(r, wire_type_of<T>(), seq);
      unpack<T>(f, std::span<T>(part), "allreduce");
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += part[i];
    }
    for (std::size_t i = 0; i < acc.size(); ++i) data[i] = acc[i] / static_cast<T>(W);
    for (int r = 1; r < W; ++r) send_tensor<T>(r, seq, data, {data.size()});
  }

  // Reduce-scatter then all-gather around the ring r -> r+1.
  template <class T>
  void ring_mean(std::span<T> data, std::uint64_t seq) {
    const int W = world_size(), r = rank();
    const std::size_t n = data.size();
    auto lo = [&](int c) { return n * static_cast<std::size_t>(c) / static_cast<std::size_t>(W); };
    auto chunk = [&](int c) { return data.subspan(lo(c), lo(c + 1) - lo(c)); };
    const int right = (r + 1) % W, left = (r + W - 1) % W;
    auto mod = [&](int v) { return ((v % W) + W) % W; };
    std::vector<T> buf;

    auto recv_chunk = [&](int c) {
      Frame f = expect(left, wire_type_of<T>(), seq);
      const std::size_t len = lo(c + 1) - lo(c);
      if (f.dims.size() != 2 || f.dims[0] != n || f.dims[1] != static_cast<std::uint64_t>(c) ||
          f.payload.size() != len * sizeof(T)) {
        const std::string msg = "allreduce: rank " + std::to_string(left) + " sent a tensor of " +
                                std::to_string(f.dims.empty() ? 0 : f.dims[0]) + " elements, expected " +
                                std::to_string(n);
        abort(msg);
        fail(ErrorKind::ShapeMismatch, msg);
      }
      buf.resize(len);
      if (len) std::memcpy(buf.data(), f.payload.data(), f.payload.size());
    };

    for (int k = 0; k < W - 1; ++k) {
      const int sc = mod(r - k), rc = mod(r - k - 1);
      send_tensor<T>(right, seq, chunk(sc), {n, static_cast<std::uint64_t>(sc)});
      recv_chunk(rc);
      auto dst = chunk(rc);
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += buf[i];
    }
    for (auto& v : chunk(mod(r + 1))) v /= static_cast<T>(W);
    for (int k = 0; k < W - 1; ++k) {
      const int sc = mod(r + 1 - k), rc = mod(r - k);
      send_tensor<T>(right, seq, chunk(sc), {n, static_cast<std::uint64_t>(sc)});
      recv_chunk(rc);
      auto dst = chunk(rc);
      std::copy(buf.begin(), buf.end(), dst.begin());
    }
  }

  Transport* t_;
  std::chrono::milliseconds timeout_;
  std::uint64_t seq_ = 0;
};

}  // namespace molddp
