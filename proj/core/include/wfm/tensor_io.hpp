// WFM tensor file: the bit-exact binary format shared by every module.
//
// Layout (little-endian, no padding, no footer):
//   magic   4 bytes  "WFMT" (57 46 4D 54)
//   version u32      1
//   dtype   u32      1 = f32, 2 = f64
//   rank    u32      in [1, 8]
//   dims    rank x u64
//   payload product(dims) elements, row-major

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace wfm {

enum class Dtype : std::uint32_t { F32 = 1, F64 = 2 };

struct TensorFile {
  Dtype dtype = Dtype::F64;
  std::vector<std::uint64_t> shape;
  std::vector<float> f32;   // filled when dtype == F32
  std::vector<double> f64;  // filled when dtype == F64

  std::uint64_t element_count() const;
  // Widening view: returns f64 payload regardless of stored dtype.
  std::vector<double> as_f64() const;
};

void write_tensor(const std::string& path, std::span<const std::uint64_t> shape,
                  std::span<const float> data);
void write_tensor(const std::string& path, std::span<const std::uint64_t> shape,
                  std::span<const double> data);

TensorFile read_tensor(const std::string& path);

}  // namespace wfm
