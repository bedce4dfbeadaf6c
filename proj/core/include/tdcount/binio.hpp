#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "tdcount/tensor.hpp"

namespace tdc::binio {

// Little-endian encoder into an in-memory buffer.
class Writer {
 public:
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f32(float v);
  void f64(double v);
  void bytes(std::string_view b);
  void str(std::string_view s);  // u32 length + bytes
  void tensor(const Tensor& t);  // rank, dims, f64 values

  const std::string& buffer() const { return buf_; }
  void save(const std::filesystem::path& path) const;

 private:
  std::string buf_;
};

// Little-endian decoder; every short read throws ParseError naming `source`.
class Reader {
 public:
  Reader(std::string data, std::string source);
  static Reader open(const std::filesystem::path& path);

  std::uint32_t u32();
  std::uint64_t u64();
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  float f32();
  double f64();
  std::string bytes(std::size_t n);
  std::string str();
  Tensor tensor();

  bool at_end() const { return pos_ == data_.size(); }
  const std::string& source() const { return source_; }
  [[noreturn]] void fail(const std::string& what) const;

 private:
  void need(std::size_t n) const;

  std::string data_;
  std::string source_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace tdc::binio
