#pragma once

// Little-endian encoding, CRC32 and a few POSIX file helpers shared by the
// on-disk formats and the wire protocol.

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cerrno>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

#include "molddp/error.hpp"

namespace molddp {

using Bytes = std::vector<std::byte>;

inline std::uint32_t crc32(std::span<const std::byte> data, std::uint32_t seed = 0) {
  uLong crc = seed;
  const auto* p = reinterpret_cast<const Bytef*>(data.data());
  std::size_t left = data.size();
  while (left > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(left, 1u << 30));
    crc = ::crc32(crc, p, chunk);
    p += chunk;
    left -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

namespace detail {

template <class T>
T byteswap_value(T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  auto raw = std::bit_cast<std::array<std::byte, sizeof(T)>>(v);
  std::reverse(raw.begin(), raw.end());
  return std::bit_cast<T>(raw);
}

template <class T>
T to_le(T v) {
  if constexpr (std::endian::native == std::endian::little || sizeof(T) == 1) return v;
  else return byteswap_value(v);
}

}  // namespace detail

/// Appends little-endian scalars and arrays to a growing byte buffer.
class ByteWriter {
 public:
  template <class T>
  void put(T v) {
    static_assert(std::is_arithmetic_v<T>);
    v = detail::to_le(v);
    const auto* p = reinterpret_cast<const std::byte*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }

  template <class T>
  void put_array(std::span<const T> values) {
    static_assert(std::is_arithmetic_v<T>);
    if constexpr (std::endian::native == std::endian::little) {
      const auto* p = reinterpret_cast<const std::byte*>(values.data());
      buf_.insert(buf_.end(), p, p + values.size_bytes());
    } else {
      for (T v : values) put(v);
    }
  }

  void put_bytes(std::span<const std::byte> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }

  void put_tag(std::string_view tag) {
    const auto* p = reinterpret_cast<const std::byte*>(tag.data());
    buf_.insert(buf_.end(), p, p + tag.size());
  }

  void put_string(std::string_view s) {
    put(static_cast<std::uint32_t>(s.size()));
    put_tag(s);
  }

  std::size_t size() const { return buf_.size(); }
  Bytes& bytes() { return buf_; }
  const Bytes& bytes() const { return buf_; }
  Bytes take() { return std::move(buf_); }

 private:
  Bytes buf_;
};

/// Bounds-checked little-endian reader. Running off the end raises the
/// caller-chosen error kind.
class ByteReader {
 public:
  ByteReader(std::span<const std::byte> data, ErrorKind on_error) : data_(data), kind_(on_error) {}

  template <class T>
  T get() {
    static_assert(std::is_arithmetic_v<T>);
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return detail::to_le(v);
  }

  template <class T>
  void get_array(std::span<T> out) {
    need(out.size_bytes());
    std::memcpy(out.data(), data_.data() + pos_, out.size_bytes());
    pos_ += out.size_bytes();
    if constexpr (std::endian::native != std::endian::little)
      for (auto& v : out) v = detail::byteswap_value(v);
  }

  template <class T>
  std::vector<T> get_vector(std::size_t n) {
    if (n > remaining() / sizeof(T)) fail(kind_, "array length exceeds buffer");
    std::vector<T> v(n);
    get_array(std::span<T>(v));
    return v;
  }

  std::string get_tag(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::string get_string() { return get_tag(get<std::uint32_t>()); }

  std::span<const std::byte> get_span(std::size_t n) {
    need(n);
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (n > data_.size() - pos_) fail(kind_, "unexpected end of data");
  }

  std::span<const std::byte> data_;
  std::size_t pos_ = 0;
  ErrorKind kind_;
};

/// Owning POSIX file descriptor.
class FileHandle {
 public:
  FileHandle() = default;
  explicit FileHandle(int fd) : fd_(fd) {}
  FileHandle(const FileHandle&) = delete;
  FileHandle& operator=(const FileHandle&) = delete;
  FileHandle(FileHandle&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  FileHandle& operator=(FileHandle&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  ~FileHandle() { reset(); }

  static FileHandle open_read(const std::filesystem::path& p) {
    int fd = ::open(p.c_str(), O_RDONLY | O_CLOEXEC);
    return FileHandle(fd);
  }

  int get() const { return fd_; }
  explicit operator bool() const { return fd_ >= 0; }

  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

  /// Reads exactly out.size() bytes at offset; returns false on short read.
  bool pread_exact(std::span<std::byte> out, std::uint64_t offset) const {
    std::size_t done = 0;
    while (done < out.size()) {
      ssize_t r = ::pread(fd_, out.data() + done, out.size() - done, static_cast<off_t>(offset + done));
      if (r < 0 && errno == EINTR) continue;
      if (r <= 0) return false;
      done += static_cast<std::size_t>(r);
    }
    return true;
  }

 private:
  int fd_ = -1;
};

/// Read-only mapping of a whole file, faulted in up front.
class MappedFile {
 public:
  MappedFile() = default;
  MappedFile(const FileHandle& fh, std::size_t size) : size_(size) {
    if (size_ == 0) return;
    void* p = ::mmap(nullptr, size_, PROT_READ, MAP_PRIVATE | MAP_POPULATE, fh.get(), 0);
    if (p == MAP_FAILED) fail(ErrorKind::Io, std::string("mmap failed: ") + std::strerror(errno));
    data_ = static_cast<const std::byte*>(p);
  }
  MappedFile(const MappedFile&) = delete;
  MappedFile& operator=(const MappedFile&) = delete;
  MappedFile(MappedFile&& o) noexcept : data_(std::exchange(o.data_, nullptr)), size_(std::exchange(o.size_, 0)) {}
  MappedFile& operator=(MappedFile&& o) noexcept {
    if (this != &o) {
      reset();
      data_ = std::exchange(o.data_, nullptr);
      size_ = std::exchange(o.size_, 0);
    }
    return *this;
  }
  ~MappedFile() { reset(); }

  std::span<const std::byte> bytes() const { return {data_, size_}; }

 private:
  void reset() {
    if (data_) ::munmap(const_cast<std::byte*>(data_), size_);
    data_ = nullptr;
  }
  const std::byte* data_ = nullptr;
  std::size_t size_ = 0;
};

inline Bytes read_file(const std::filesystem::path& p, ErrorKind on_error = ErrorKind::Io) {
  std::ifstream in(p, std::ios::binary);
  if (!in) fail(on_error, "cannot open " + p.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  Bytes data(size);
  if (size > 0 && !in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(size)))
    fail(on_error, "short read on " + p.string());
  return data;
}

inline void write_file(const std::filesystem::path& p, std::span<const std::byte> data) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot create " + p.string());
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) fail(ErrorKind::Io, "write failed on " + p.string());
}

/// Allocated bytes on disk (the figure `du` reports), summed recursively.
inline std::uint64_t disk_usage(const std::filesystem::path& p) {
  namespace fs = std::filesystem;
  auto one = [](const fs::path& f) -> std::uint64_t {
    struct stat st {};
    if (::lstat(f.c_str(), &st) != 0) return 0;
    return static_cast<std::uint64_t>(st.st_blocks) * 512u;
  };
  std::uint64_t total = one(p);
  if (fs::is_directory(p))
    for (const auto& e : fs::recursive_directory_iterator(p)) total += one(e.path());
  return total;
}

/// Sum of logical file sizes, recursively.
inline std::uint64_t logical_size(const std::filesystem::path& p) {
  namespace fs = std::filesystem;
  if (fs::is_regular_file(p)) return fs::file_size(p);
  std::uint64_t total = 0;
  if (fs::is_directory(p))
    for (const auto& e : fs::recursive_directory_iterator(p))
      if (e.is_regular_file()) total += e.file_size();
  return total;
}

/// Evicts the page cache: system-wide when permitted, otherwise per file via
/// posix_fadvise on everything under `p`. Returns true if the system-wide
/// drop succeeded.
inline bool drop_caches(const std::filesystem::path& p) {
  namespace fs = std::filesystem;
  ::sync();
  bool global = false;
  if (int fd = ::open("/proc/sys/vm/drop_caches", O_WRONLY | O_CLOEXEC); fd >= 0) {
    global = ::write(fd, "3\n", 2) == 2;
    ::close(fd);
  }
  auto advise = [](const fs::path& f) {
    int fd = ::open(f.c_str(), O_RDONLY | O_CLOEXEC);
    if (fd < 0) return;
    ::fdatasync(fd);
    ::posix_fadvise(fd, 0, 0, POSIX_FADV_DONTNEED);
    ::close(fd);
  };
  if (fs::is_regular_file(p)) {
    advise(p);
  } else if (fs::is_directory(p)) {
    for (const auto& e : fs::recursive_directory_iterator(p))
      if (e.is_regular_file()) advise(e.path());
  }
  return global;
}

}  // namespace molddp
