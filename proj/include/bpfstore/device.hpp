#pragma once

// Byte-addressable storage devices behind the service.

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <system_error>
#include <thread>
#include <utility>
#include <vector>

namespace bpfstore {

class DeviceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Concurrent reads and non-overlapping concurrent writes must be safe.
class Device {
 public:
  virtual ~Device() = default;
  virtual uint64_t size() const = 0;
  virtual void read(uint64_t offset, std::span<uint8_t> out) = 0;
  virtual void write(uint64_t offset, std::span<const uint8_t> in) = 0;

  bool in_range(uint64_t offset, uint64_t len) const {
    return offset <= size() && len <= size() - offset;
  }

 protected:
  void check_range(uint64_t offset, uint64_t len) const {
    if (!in_range(offset, len)) {
      throw DeviceError("device access [" + std::to_string(offset) + ", +" + std::to_string(len) +
                        ") beyond size " + std::to_string(size()));
    }
  }
};

class MemoryDevice final : public Device {
 public:
  explicit MemoryDevice(uint64_t size) : bytes_(size) {}

  uint64_t size() const override { return bytes_.size(); }

  void read(uint64_t offset, std::span<uint8_t> out) override {
    check_range(offset, out.size());
    std::memcpy(out.data(), bytes_.data() + offset, out.size());
  }

  void write(uint64_t offset, std::span<const uint8_t> in) override {
    check_range(offset, in.size());
    std::memcpy(bytes_.data() + offset, in.data(), in.size());
  }

  std::span<uint8_t> bytes() { return bytes_; }

 private:
  std::vector<uint8_t> bytes_;
};

// File-backed store using positional I/O; the file is created and sized on
// open if needed.
class FileBlockStore final : public Device {
 public:
  FileBlockStore(std::string path, uint64_t size) : path_(std::move(path)) {
    fd_ = ::open(path_.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
    if (fd_ < 0) throw std::system_error(errno, std::generic_category(), "open " + path_);
    struct stat st {};
    if (::fstat(fd_, &st) != 0) {
      int err = errno;
      ::close(fd_);
      throw std::system_error(err, std::generic_category(), "stat " + path_);
    }
    size_ = size == 0 ? static_cast<uint64_t>(st.st_size) : size;
    if (static_cast<uint64_t>(st.st_size) < size_ && ::ftruncate(fd_, static_cast<off_t>(size_)) != 0) {
      int err = errno;
      ::close(fd_);
      throw std::system_error(err, std::generic_category(), "resize " + path_);
    }
  }

  FileBlockStore(const FileBlockStore&) = delete;
  FileBlockStore& operator=(const FileBlockStore&) = delete;

  ~FileBlockStore() override {
    if (fd_ >= 0) ::close(fd_);
  }

  uint64_t size() const override { return size_; }
  const std::string& path() const { return path_; }

  void read(uint64_t offset, std::span<uint8_t> out) override {
    check_range(offset, out.size());
    std::size_t done = 0;
    while (done < out.size()) {
      ssize_t n = ::pread(fd_, out.data() + done, out.size() - done, static_cast<off_t>(offset + done));
      if (n < 0 && errno == EINTR) continue;
      if (n < 0) throw DeviceError("pread " + path_ + ": " + std::strerror(errno));
      if (n == 0) {
        // sparse tail past the end of a short file reads as zeros
        std::memset(out.data() + done, 0, out.size() - done);
        break;
      }
      done += static_cast<std::size_t>(n);
    }
  }

  void write(uint64_t offset, std::span<const uint8_t> in) override {
    check_range(offset, in.size());
    std::size_t done = 0;
    while (done < in.size()) {
      ssize_t n = ::pwrite(fd_, in.data() + done, in.size() - done, static_cast<off_t>(offset + done));
      if (n < 0 && errno == EINTR) continue;
      if (n < 0) throw DeviceError("pwrite " + path_ + ": " + std::strerror(errno));
      done += static_cast<std::size_t>(n);
    }
  }

 private:
  std::string path_;
  int fd_ = -1;
  uint64_t size_ = 0;
};

// Sleeps for d with microsecond precision: coarse sleep, then spin.
inline void precise_sleep(std::chrono::microseconds d) {
  using clock = std::chrono::steady_clock;
  if (d.count() <= 0) return;
  const auto deadline = clock::now() + d;
  constexpr auto kSpin = std::chrono::microseconds(120);
  if (d > kSpin) std::this_thread::sleep_for(d - kSpin);
  while (clock::now() < deadline) {
    std::this_thread::yield();
  }
}

// Adds a fixed latency to every access of the wrapped device.
class DelayedDevice final : public Device {
 public:
  DelayedDevice(Device& inner, std::chrono::microseconds read_delay, std::chrono::microseconds write_delay)
      : inner_(inner), read_delay_(read_delay), write_delay_(write_delay) {}

  uint64_t size() const override { return inner_.size(); }

  void read(uint64_t offset, std::span<uint8_t> out) override {
    precise_sleep(read_delay_);
    inner_.read(offset, out);
  }

  void write(uint64_t offset, std::span<const uint8_t> in) override {
    precise_sleep(write_delay_);
    inner_.write(offset, in);
  }

 private:
  Device& inner_;
  std::chrono::microseconds read_delay_;
  std::chrono::microseconds write_delay_;
};

}  // namespace bpfstore
