#include "wfm/tensor_io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <limits>
#include <memory>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "WFM tensor I/O assumes a little-endian host");

namespace wfm {
namespace {

constexpr std::uint8_t kMagic[4] = {0x57, 0x46, 0x4D, 0x54};  // "WFMT"
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kMaxRank = 8;

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::uint64_t checked_product(std::span<const std::uint64_t> dims) {
  std::uint64_t n = 1;
  for (std::uint64_t d : dims) {
    if (d == 0) throw std::runtime_error("tensor file: zero dimension");
    if (d > std::numeric_limits<std::uint64_t>::max() / n)
      throw std::runtime_error("tensor file: shape overflow");
    n *= d;
  }
  return n;
}

void write_raw(std::FILE* f, const void* p, std::size_t bytes, const std::string& path) {
  if (std::fwrite(p, 1, bytes, f) != bytes)
    throw std::runtime_error("tensor file: short write to " + path);
}

void read_raw(std::FILE* f, void* p, std::size_t bytes, const std::string& path) {
  if (std::fread(p, 1, bytes, f) != bytes)
    throw std::runtime_error("tensor file: truncated file " + path);
}

template <typename T>
void write_impl(const std::string& path, std::span<const std::uint64_t> shape,
                std::span<const T> data, Dtype dtype) {
  if (shape.empty() || shape.size() > kMaxRank)
    throw std::invalid_argument("tensor file: rank must be in [1,8]");
  const std::uint64_t n = checked_product(shape);
  if (n != data.size())
    throw std::invalid_argument("tensor file: shape product != data length");

  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw std::runtime_error("tensor file: cannot open for write: " + path);
  write_raw(f.get(), kMagic, 4, path);
  const std::uint32_t ver = kVersion;
  const std::uint32_t dt = static_cast<std::uint32_t>(dtype);
  const std::uint32_t rank = static_cast<std::uint32_t>(shape.size());
  write_raw(f.get(), &ver, 4, path);
  write_raw(f.get(), &dt, 4, path);
  write_raw(f.get(), &rank, 4, path);
  write_raw(f.get(), shape.data(), 8 * shape.size(), path);
  write_raw(f.get(), data.data(), sizeof(T) * data.size(), path);
  if (std::fflush(f.get()) != 0)
    throw std::runtime_error("tensor file: flush failed: " + path);
}

}  // namespace

std::uint64_t TensorFile::element_count() const { return checked_product(shape); }

std::vector<double> TensorFile::as_f64() const {
  if (dtype == Dtype::F64) return f64;
  return std::vector<double>(f32.begin(), f32.end());
}

void write_tensor(const std::string& path, std::span<const std::uint64_t> shape,
                  std::span<const float> data) {
  write_impl(path, shape, data, Dtype::F32);
}

void write_tensor(const std::string& path, std::span<const std::uint64_t> shape,
                  std::span<const double> data) {
  write_impl(path, shape, data, Dtype::F64);
}

TensorFile read_tensor(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw std::runtime_error("tensor file: cannot open: " + path);

  std::uint8_t magic[4];
  read_raw(f.get(), magic, 4, path);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("tensor file: bad magic in " + path);

  std::uint32_t ver = 0, dt = 0, rank = 0;
  read_raw(f.get(), &ver, 4, path);
  if (ver != kVersion) throw std::runtime_error("tensor file: unsupported version in " + path);
  read_raw(f.get(), &dt, 4, path);
  if (dt != 1 && dt != 2) throw std::runtime_error("tensor file: unknown dtype tag in " + path);
  read_raw(f.get(), &rank, 4, path);
  if (rank < 1 || rank > kMaxRank)
    throw std::runtime_error("tensor file: rank out of range in " + path);

  TensorFile t;
  t.dtype = static_cast<Dtype>(dt);
  t.shape.resize(rank);
  read_raw(f.get(), t.shape.data(), 8 * rank, path);
  const std::uint64_t n = checked_product(t.shape);

  if (t.dtype == Dtype::F32) {
    t.f32.resize(n);
    read_raw(f.get(), t.f32.data(), 4 * n, path);
  } else {
    t.f64.resize(n);
    read_raw(f.get(), t.f64.data(), 8 * n, path);
  }
  // trailing bytes mean the file was not produced by this writer
  std::uint8_t extra;
  if (std::fread(&extra, 1, 1, f.get()) == 1)
    throw std::runtime_error("tensor file: trailing bytes in " + path);
  return t;
}

}  // namespace wfm
