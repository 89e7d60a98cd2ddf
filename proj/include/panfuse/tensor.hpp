// Copyright 2026 The Panfuse Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//
// Dense row-major tensors and the PFTN binary file format.
//
// PFTN layout, all integers little-endian:
//   bytes 0..3   magic "PFTN"
//   byte  4      format version (1)
//   byte  5      element type (0 = float32, 1 = uint16, 2 = uint8)
//   byte  6      rank (1..4)
//   then         rank * uint32 dimensions
//   then         raw elements in C order

#ifndef PANFUSE_TENSOR_HPP_
#define PANFUSE_TENSOR_HPP_

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "panfuse/errors.hpp"

namespace panfuse {

enum class ElemType : std::uint8_t { kFloat32 = 0, kUint16 = 1, kUint8 = 2 };

inline std::size_t elem_size(ElemType t) {
  switch (t) {
    case ElemType::kFloat32: return 4;
    case ElemType::kUint16: return 2;
    case ElemType::kUint8: return 1;
  }
  throw FormatError("unknown element type");
}

inline const char* elem_type_name(ElemType t) {
  switch (t) {
    case ElemType::kFloat32: return "float32";
    case ElemType::kUint16: return "uint16";
    case ElemType::kUint8: return "uint8";
  }
  return "?";
}

// Rank 1..4 row-major tensor over float32/uint16/uint8 elements.
class Tensor {
 public:
  static constexpr int kMaxRank = 4;

  Tensor() = default;

  Tensor(ElemType type, std::vector<std::uint32_t> dims)
      : elem_type_(type), dims_(std::move(dims)) {
    data_.resize(element_count() * elem_size(elem_type_));
    check_rank();
  }

  Tensor(ElemType type, std::vector<std::uint32_t> dims,
         std::vector<std::uint8_t> raw)
      : elem_type_(type), dims_(std::move(dims)), data_(std::move(raw)) {
    check_rank();
    if (data_.size() != element_count() * elem_size(elem_type_)) {
      throw ShapeError("tensor buffer size does not match dims");
    }
  }

  static Tensor from_floats(std::vector<std::uint32_t> dims,
                            std::span<const float> values) {
    Tensor t(ElemType::kFloat32, std::move(dims));
    if (values.size() != t.element_count()) {
      throw ShapeError("float payload does not match dims");
    }
    std::memcpy(t.data_.data(), values.data(), values.size_bytes());
    return t;
  }

  ElemType elem_type() const { return elem_type_; }
  int rank() const { return static_cast<int>(dims_.size()); }
  const std::vector<std::uint32_t>& dims() const { return dims_; }
  std::uint32_t dim(int i) const { return dims_.at(static_cast<std::size_t>(i)); }

  std::size_t element_count() const {
    std::size_t n = 1;
    for (std::uint32_t d : dims_) {
      if (d == 0) throw ShapeError("tensor dimension must be positive");
      if (n > std::numeric_limits<std::size_t>::max() / d) {
        throw ShapeError("tensor element count overflows");
      }
      n *= d;
    }
    return n;
  }

  std::span<const std::uint8_t> raw() const { return data_; }
  std::span<std::uint8_t> raw() { return data_; }

  std::span<const float> as_f32() const {
    require_type(ElemType::kFloat32);
    return {reinterpret_cast<const float*>(data_.data()), element_count()};
  }
  std::span<float> as_f32() {
    require_type(ElemType::kFloat32);
    return {reinterpret_cast<float*>(data_.data()), element_count()};
  }
  std::span<const std::uint16_t> as_u16() const {
    require_type(ElemType::kUint16);
    return {reinterpret_cast<const std::uint16_t*>(data_.data()), element_count()};
  }
  std::span<const std::uint8_t> as_u8() const {
    require_type(ElemType::kUint8);
    return {data_.data(), element_count()};
  }

  bool operator==(const Tensor& other) const {
    return elem_type_ == other.elem_type_ && dims_ == other.dims_ &&
           data_ == other.data_;
  }

 private:
  void check_rank() const {
    if (dims_.empty() || dims_.size() > kMaxRank) {
      throw ShapeError("tensor rank must be 1..4");
    }
    element_count();  // validates positive dims
  }

  void require_type(ElemType t) const {
    if (elem_type_ != t) {
      throw ShapeError(std::string("tensor holds ") + elem_type_name(elem_type_) +
                       ", expected " + elem_type_name(t));
    }
  }

  ElemType elem_type_ = ElemType::kFloat32;
  std::vector<std::uint32_t> dims_;
  std::vector<std::uint8_t> data_;
};

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "PFTN I/O below assumes a little-endian host");

inline void put_u32le(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
}

inline std::uint32_t get_u32le(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) |
         (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

inline constexpr char kPftnMagic[4] = {'P', 'F', 'T', 'N'};
inline constexpr std::uint8_t kPftnVersion = 1;

inline void write_tensor(const Tensor& t, const std::filesystem::path& path) {
  std::vector<std::uint8_t> header;
  header.reserve(7 + 4 * static_cast<std::size_t>(t.rank()));
  header.insert(header.end(), kPftnMagic, kPftnMagic + 4);
  header.push_back(kPftnVersion);
  header.push_back(static_cast<std::uint8_t>(t.elem_type()));
  header.push_back(static_cast<std::uint8_t>(t.rank()));
  for (std::uint32_t d : t.dims()) detail::put_u32le(header, d);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(header.data()),
            static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(t.raw().data()),
            static_cast<std::streamsize>(t.raw().size()));
  if (!out) throw InputError("write failed: " + path.string());
}

inline Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open tensor file: " + path.string());

  std::uint8_t fixed[7];
  in.read(reinterpret_cast<char*>(fixed), sizeof(fixed));
  if (in.gcount() != sizeof(fixed)) {
    throw TruncatedError("tensor file shorter than fixed header: " + path.string());
  }
  if (std::memcmp(fixed, kPftnMagic, 4) != 0) {
    throw BadMagicError("not a PFTN file: " + path.string());
  }
  if (fixed[4] != kPftnVersion) {
    throw FormatError("unsupported PFTN version " + std::to_string(fixed[4]));
  }
  if (fixed[5] > static_cast<std::uint8_t>(ElemType::kUint8)) {
    throw FormatError("unknown PFTN element type " + std::to_string(fixed[5]));
  }
  const auto type = static_cast<ElemType>(fixed[5]);
  const int rank = fixed[6];
  if (rank < 1 || rank > Tensor::kMaxRank) {
    throw FormatError("PFTN rank out of range: " + std::to_string(rank));
  }

  std::vector<std::uint8_t> dim_bytes(static_cast<std::size_t>(rank) * 4);
  in.read(reinterpret_cast<char*>(dim_bytes.data()),
          static_cast<std::streamsize>(dim_bytes.size()));
  if (static_cast<std::size_t>(in.gcount()) != dim_bytes.size()) {
    throw TruncatedError("tensor file shorter than dim table: " + path.string());
  }
  std::vector<std::uint32_t> dims(static_cast<std::size_t>(rank));
  std::size_t count = 1;
  for (int i = 0; i < rank; ++i) {
    dims[static_cast<std::size_t>(i)] = detail::get_u32le(&dim_bytes[static_cast<std::size_t>(i) * 4]);
    const std::uint32_t d = dims[static_cast<std::size_t>(i)];
    if (d == 0) throw FormatError("PFTN dimension must be positive");
    if (count > std::numeric_limits<std::size_t>::max() / d) {
      throw ShapeError("PFTN element count overflows");
    }
    count *= d;
  }

  const std::size_t payload = count * elem_size(type);
  std::vector<std::uint8_t> data(payload);
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(payload));
  if (static_cast<std::size_t>(in.gcount()) != payload) {
    throw TruncatedError("tensor payload truncated: " + path.string());
  }
  // Trailing bytes mean the dims and the stored element count disagree.
  char extra;
  if (in.read(&extra, 1); in.gcount() == 1) {
    throw ShapeError("tensor payload longer than dims imply: " + path.string());
  }
  return Tensor(type, std::move(dims), std::move(data));
}

}  // namespace panfuse

#endif  // PANFUSE_TENSOR_HPP_
