#include "tdcount/binio.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "tdcount/errors.hpp"

namespace tdc::binio {
namespace {

template <typename T>
void put_le(std::string& buf, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i)
    buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

constexpr std::uint32_t kMaxRank = 8;

}  // namespace

void Writer::u32(std::uint32_t v) { put_le(buf_, v); }
void Writer::u64(std::uint64_t v) { put_le(buf_, v); }
void Writer::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
void Writer::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
void Writer::bytes(std::string_view b) { buf_.append(b); }

void Writer::str(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  bytes(s);
}

void Writer::tensor(const Tensor& t) {
  u32(static_cast<std::uint32_t>(t.rank()));
  for (int d : t.shape()) u32(static_cast<std::uint32_t>(d));
  for (double v : t.values()) f64(v);
}

void Writer::save(const std::filesystem::path& path) const { write_file(path, buf_); }

Reader::Reader(std::string data, std::string source)
    : data_(std::move(data)), source_(std::move(source)) {}

Reader Reader::open(const std::filesystem::path& path) {
  return Reader(read_file(path), path.string());
}

void Reader::fail(const std::string& what) const {
  throw ParseError(source_ + ": " + what + " (offset " + std::to_string(pos_) + ")");
}

void Reader::need(std::size_t n) const {
  if (data_.size() - pos_ < n) fail("unexpected end of file");
}

std::uint32_t Reader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i)
    v = (v << 8) | static_cast<unsigned char>(data_[pos_ + static_cast<std::size_t>(i)]);
  pos_ += 4;
  return v;
}

std::uint64_t Reader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i)
    v = (v << 8) | static_cast<unsigned char>(data_[pos_ + static_cast<std::size_t>(i)]);
  pos_ += 8;
  return v;
}

float Reader::f32() { return std::bit_cast<float>(u32()); }
double Reader::f64() { return std::bit_cast<double>(u64()); }

std::string Reader::bytes(std::size_t n) {
  need(n);
  std::string out = data_.substr(pos_, n);
  pos_ += n;
  return out;
}

std::string Reader::str() { return bytes(u32()); }

Tensor Reader::tensor() {
  const std::uint32_t rank = u32();
  if (rank > kMaxRank) fail("implausible tensor rank " + std::to_string(rank));
  std::vector<int> shape(rank);
  std::size_t n = 1;
  for (auto& d : shape) {
    const std::uint32_t v = u32();
    if (v > (1u << 26)) fail("implausible tensor dimension");
    d = static_cast<int>(v);
    n *= v;
  }
  need(n * 8);
  std::vector<double> vals(n);
  for (auto& v : vals) v = f64();
  return Tensor::from(std::move(shape), std::move(vals));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace tdc::binio
