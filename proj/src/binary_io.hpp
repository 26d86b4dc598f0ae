#pragma once

// Little-endian binary encoding shared by the checkpoint and buffer dumps.

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>

#include "owmmd/diff.hpp"

namespace owmmd::binary {

static_assert(std::endian::native == std::endian::little, "binary dumps assume a little-endian host");

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary | std::ios::trunc), path_(path) {
    require(out_.good(), ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  }

  void magic(std::string_view tag, std::uint32_t version) {
    out_.write(tag.data(), static_cast<std::streamsize>(tag.size()));
    u32(version);
  }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void i64(std::int64_t v) { raw(&v, sizeof v); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
  void tensor(const Tensor& t) {
    u64(static_cast<std::uint64_t>(t.rows()));
    u64(static_cast<std::uint64_t>(t.cols()));
    for (Eigen::Index i = 0; i < t.size(); ++i) f64(t.data()[i]);
  }
  void finish() {
    out_.flush();
    require(out_.good(), ErrorCode::IoError, "write failed for " + path_.string());
  }

 private:
  void raw(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }

  std::ofstream out_;
  std::filesystem::path path_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : in_(path, std::ios::binary), path_(path) {
    require(in_.good(), ErrorCode::IoError, "cannot open " + path.string());
  }

  void expect_magic(std::string_view tag, std::uint32_t version) {
    std::string got(tag.size(), '\0');
    raw(got.data(), got.size());
    require(got == tag, ErrorCode::IoError, path_.string() + ": bad magic");
    const std::uint32_t v = u32();
    require(v == version, ErrorCode::IoError,
            path_.string() + ": unsupported version " + std::to_string(v));
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    raw(&v, sizeof v);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    raw(&v, sizeof v);
    return v;
  }
  std::int64_t i64() {
    std::int64_t v = 0;
    raw(&v, sizeof v);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint64_t n = u64();
    require(n < (1ull << 32), ErrorCode::IoError, path_.string() + ": corrupt string length");
    std::string s(n, '\0');
    raw(s.data(), s.size());
    return s;
  }
  Tensor tensor() {
    const std::uint64_t rows = u64();
    const std::uint64_t cols = u64();
    require(rows < (1ull << 31) && cols < (1ull << 31), ErrorCode::IoError, path_.string() + ": corrupt shape");
    Tensor t(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = f64();
    return t;
  }
  void expect_end() {
    in_.peek();
    require(in_.eof(), ErrorCode::IoError, path_.string() + ": trailing bytes");
  }

 private:
  void raw(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    require(static_cast<std::size_t>(in_.gcount()) == n, ErrorCode::IoError, path_.string() + ": truncated file");
  }

  std::ifstream in_;
  std::filesystem::path path_;
};

}  // namespace owmmd::binary
