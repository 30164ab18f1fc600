#pragma once

// Binary cache format for coefficient tensors (all fields little-endian):
//
//   offset  size  field
//   0       8     magic "QIMGTNS1"
//   8       4     u32 format version (1)
//   12      4     u32 detectors D
//   16      4     u32 pixels M
//   20      4     u32 sub-points S
//   24      4     u32 correlation order the tensor was cached for (0 = any)
//   28      1     u8 source kind (0 thermal, 1 SPDC)
//   29      1     u8 pixel integration (0 small-pixel, 1 Gauss-Legendre)
//   30      2     u16 quadrature points per axis
//   32      8     u64 FNV-1a checksum of the body
//   40      ...   body:
//                 D*S weights, row-major, each (re f64, im f64)
//                 S*S kernel, row-major, each (re f64, im f64) with im = 0
//                 S   u32 owning pixel of each sub-point
//
// The pairwise table D^(ij)(l, m) is recovered from the factored body; the
// CSV dump writes it out explicitly for inspection.

#include <cstdint>
#include <iosfwd>
#include <string>

#include "qimg/forward.hpp"

namespace qimg {

void write_tensor(std::ostream& out, const CoefficientTensor& tensor, int order = 0);
/// Throws ModelError on a bad magic, version, size or checksum.
CoefficientTensor read_tensor(std::istream& in, int* order = nullptr);

void save_tensor(const std::string& path, const CoefficientTensor& tensor, int order = 0);
CoefficientTensor load_tensor(const std::string& path, int* order = nullptr);

/// Rows "i,j,l,m,re,im" for every detector pair and pixel pair.
void dump_tensor_csv(std::ostream& out, const CoefficientTensor& tensor);

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed = 14695981039346656037ULL);

}  // namespace qimg
