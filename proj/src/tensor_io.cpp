#include "qimg/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <vector>

namespace qimg {

namespace {

static_assert(std::endian::native == std::endian::little, "tensor I/O assumes a little-endian host");

constexpr std::array<char, 8> kMagic{'Q', 'I', 'M', 'G', 'T', 'N', 'S', '1'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::vector<unsigned char>& buf, T v) {
  const auto* p = reinterpret_cast<const unsigned char*>(&v);
  buf.insert(buf.end(), p, p + sizeof(T));
}

template <class T>
T take(const std::vector<unsigned char>& buf, std::size_t& at) {
  if (at + sizeof(T) > buf.size()) throw ModelError("tensor file: truncated body");
  T v;
  std::memcpy(&v, buf.data() + at, sizeof(T));
  at += sizeof(T);
  return v;
}

template <class T>
T read_pod(std::istream& in) {
  T v;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw ModelError("tensor file: truncated header");
  return v;
}

}  // namespace

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

void write_tensor(std::ostream& out, const CoefficientTensor& t, int order) {
  std::vector<unsigned char> body;
  const int nd = t.num_detectors();
  const int ns = t.num_subpoints();
  body.reserve(static_cast<std::size_t>(nd + ns) * ns * 16 + ns * 4);
  for (int i = 0; i < nd; ++i) {
    for (int p = 0; p < ns; ++p) {
      put(body, t.weights()(i, p).real());
      put(body, t.weights()(i, p).imag());
    }
  }
  for (int p = 0; p < ns; ++p) {
    for (int q = 0; q < ns; ++q) {
      put(body, t.kernel()(p, q));
      put(body, 0.0);
    }
  }
  for (int pix : t.subpoint_pixel()) put(body, static_cast<std::uint32_t>(pix));

  std::vector<unsigned char> head;
  head.insert(head.end(), kMagic.begin(), kMagic.end());
  put(head, kVersion);
  put(head, static_cast<std::uint32_t>(nd));
  put(head, static_cast<std::uint32_t>(t.num_pixels()));
  put(head, static_cast<std::uint32_t>(ns));
  put(head, static_cast<std::uint32_t>(order));
  put(head, static_cast<std::uint8_t>(t.source_kind()));
  put(head, static_cast<std::uint8_t>(t.options().integration));
  put(head, static_cast<std::uint16_t>(t.options().quadrature_points));
  put(head, fnv1a(body.data(), body.size()));
  out.write(reinterpret_cast<const char*>(head.data()), static_cast<std::streamsize>(head.size()));
  out.write(reinterpret_cast<const char*>(body.data()), static_cast<std::streamsize>(body.size()));
  if (!out) throw ModelError("tensor file: write failed");
}

CoefficientTensor read_tensor(std::istream& in, int* order) {
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) throw ModelError("tensor file: bad magic");
  if (read_pod<std::uint32_t>(in) != kVersion) throw ModelError("tensor file: unsupported version");
  const auto nd = read_pod<std::uint32_t>(in);
  const auto np = read_pod<std::uint32_t>(in);
  const auto ns = read_pod<std::uint32_t>(in);
  const auto ord = read_pod<std::uint32_t>(in);
  const auto kind = read_pod<std::uint8_t>(in);
  const auto integ = read_pod<std::uint8_t>(in);
  const auto q = read_pod<std::uint16_t>(in);
  const auto checksum = read_pod<std::uint64_t>(in);
  if (kind > 1 || integ > 1) throw ModelError("tensor file: bad source kind or integration tag");
  if (nd == 0 || np == 0 || ns == 0 || ns > (1u << 20) || nd > (1u << 20)) {
    throw ModelError("tensor file: implausible dimensions");
  }
  const std::size_t body_size = (static_cast<std::size_t>(nd) + ns) * ns * 16 + static_cast<std::size_t>(ns) * 4;
  std::vector<unsigned char> body(body_size);
  if (!in.read(reinterpret_cast<char*>(body.data()), static_cast<std::streamsize>(body_size))) {
    throw ModelError("tensor file: truncated body");
  }
  if (fnv1a(body.data(), body.size()) != checksum) throw ModelError("tensor file: checksum mismatch");

  std::size_t at = 0;
  Eigen::MatrixXcd w(nd, ns);
  for (std::uint32_t i = 0; i < nd; ++i) {
    for (std::uint32_t p = 0; p < ns; ++p) {
      const double re = take<double>(body, at);
      const double im = take<double>(body, at);
      w(i, p) = {re, im};
    }
  }
  Eigen::MatrixXd k(ns, ns);
  for (std::uint32_t p = 0; p < ns; ++p) {
    for (std::uint32_t qq = 0; qq < ns; ++qq) {
      k(p, qq) = take<double>(body, at);
      take<double>(body, at);
    }
  }
  std::vector<int> owner(ns);
  for (auto& o : owner) o = static_cast<int>(take<std::uint32_t>(body, at));
  if (order) *order = static_cast<int>(ord);
  TensorOptions opt{static_cast<PixelIntegration>(integ), static_cast<int>(q)};
  return CoefficientTensor(static_cast<SourceKind>(kind), opt, static_cast<int>(np), std::move(w),
                           std::move(k), std::move(owner));
}

void save_tensor(const std::string& path, const CoefficientTensor& tensor, int order) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ModelError("cannot open " + path + " for writing");
  write_tensor(out, tensor, order);
}

CoefficientTensor load_tensor(const std::string& path, int* order) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelError("cannot open " + path);
  return read_tensor(in, order);
}

void dump_tensor_csv(std::ostream& out, const CoefficientTensor& t) {
  out << "i,j,l,m,re,im\n";
  out.precision(17);
  for (int i = 0; i < t.num_detectors(); ++i) {
    for (int j = 0; j < t.num_detectors(); ++j) {
      for (int l = 0; l < t.num_pixels(); ++l) {
        for (int m = 0; m < t.num_pixels(); ++m) {
          const auto v = t.pair(i, j, l, m);
          out << i << ',' << j << ',' << l << ',' << m << ',' << v.real() << ',' << v.imag() << '\n';
        }
      }
    }
  }
}

}  // namespace qimg
