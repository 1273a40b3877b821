#include "bdg/serialize.hpp"

#include <bit>
#include <cstring>
#include <istream>
#include <ostream>

namespace bdg {

namespace {

constexpr char kTensorMagic[4] = {'B', 'D', 'G', 'T'};

template <typename U>
void put_le(std::ostream& os, U v) {
  char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(buf, sizeof(U));
}

template <typename U>
U get_le(std::istream& is, const char* what) {
  unsigned char buf[sizeof(U)];
  read_exact(is, reinterpret_cast<char*>(buf), sizeof(U), what);
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

template <typename F, typename U>
void write_values(std::ostream& os, std::span<const F> values) {
  for (F v : values) put_le<U>(os, std::bit_cast<U>(v));
}

template <typename F, typename U, typename T>
void read_values(std::istream& is, std::span<T> dst) {
  for (T& v : dst) v = static_cast<T>(std::bit_cast<F>(get_le<U>(is, "tensor payload")));
}

}  // namespace

void read_exact(std::istream& is, char* dst, std::size_t n, const char* what) {
  is.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) throw DataError(std::string("truncated ") + what);
}

void write_u16(std::ostream& os, std::uint16_t v) { put_le(os, v); }
void write_u32(std::ostream& os, std::uint32_t v) { put_le(os, v); }
std::uint16_t read_u16(std::istream& is) { return get_le<std::uint16_t>(is, "u16 field"); }
std::uint32_t read_u32(std::istream& is) { return get_le<std::uint32_t>(is, "u32 field"); }

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
  os.write(kTensorMagic, 4);
  os.put(static_cast<char>(dtype_of<T>()));
  const Shape& s = t.shape();
  for (std::int64_t d : {s.n, s.c, s.h, s.w}) put_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  if constexpr (std::is_same_v<T, float>) {
    write_values<float, std::uint32_t>(os, t.data());
  } else {
    write_values<double, std::uint64_t>(os, t.data());
  }
  if (!os) throw DataError("failed writing tensor record");
}

template <typename T>
Tensor<T> read_tensor(std::istream& is) {
  char magic[4];
  read_exact(is, magic, 4, "tensor magic");
  if (std::memcmp(magic, kTensorMagic, 4) != 0) throw DataError("bad tensor magic, expected BDGT");
  char code = 0;
  read_exact(is, &code, 1, "tensor dtype");
  Shape s;
  s.n = get_le<std::uint32_t>(is, "tensor shape");
  s.c = get_le<std::uint32_t>(is, "tensor shape");
  s.h = get_le<std::uint32_t>(is, "tensor shape");
  s.w = get_le<std::uint32_t>(is, "tensor shape");
  if (!s.valid()) throw DataError("tensor record has zero-sized shape " + s.str());
  Tensor<T> t(s);
  switch (static_cast<DType>(code)) {
    case DType::kF32:
      read_values<float, std::uint32_t>(is, t.data_mut());
      break;
    case DType::kF64:
      read_values<double, std::uint64_t>(is, t.data_mut());
      break;
    default:
      throw DataError("unknown tensor dtype code " + std::to_string(static_cast<int>(code)));
  }
  return t;
}

template void write_tensor<float>(std::ostream&, const Tensor<float>&);
template void write_tensor<double>(std::ostream&, const Tensor<double>&);
template Tensor<float> read_tensor<float>(std::istream&);
template Tensor<double> read_tensor<double>(std::istream&);

}  // namespace bdg
