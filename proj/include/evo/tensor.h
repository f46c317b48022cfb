// Copyright 2026 The Evoengine Authors. All Rights Reserved.
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

#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "evo/ledger.h"

namespace evo {

enum class DType : std::uint8_t { kF32, kBF16 };

std::size_t dtype_size(DType dtype);
const char* dtype_name(DType dtype);
DType parse_dtype(const std::string& name);
// Activation-precision promotion: a BF16 operand makes the result BF16.
DType promote(DType a, DType b);

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

inline constexpr int kMaxRank = 5;

// Ledgered backing store. Values are always held as float; BF16 tensors keep
// every value exactly on the bfloat16 grid, so storage accounting (not the
// host representation) is what halves.
class Buffer {
 public:
  Buffer(std::int64_t elements, std::int64_t bytes, const Shape& shape);
  ~Buffer();
  Buffer(const Buffer&) = delete;
  Buffer& operator=(const Buffer&) = delete;

  std::vector<float>& values() { return values_; }
  const std::vector<float>& values() const { return values_; }
  std::uint64_t id() const { return id_; }
  std::int64_t bytes() const { return bytes_; }

 private:
  std::vector<float> values_;
  std::int64_t bytes_;
  std::uint64_t id_;
  MemoryLedger* ledger_;
};

// Dense row-major tensor of rank <= 5. Copies are deep (a new ledgered
// buffer); moves transfer the buffer. `alias` builds a non-owning view onto a
// shared buffer (used for fused parameter regions and free reshapes).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, DType dtype = DType::kF32);
  Tensor(Shape shape, std::vector<float> values, DType dtype = DType::kF32);

  static Tensor full(Shape shape, float value, DType dtype = DType::kF32);
  static Tensor scalar(float value) { return Tensor(Shape{}, {value}); }
  static Tensor alias(std::shared_ptr<Buffer> buffer, std::int64_t offset, Shape shape,
                      DType dtype);

  Tensor(const Tensor& other);
  Tensor& operator=(const Tensor& other);
  Tensor(Tensor&&) noexcept = default;
  Tensor& operator=(Tensor&&) noexcept = default;
  ~Tensor() = default;

  bool defined() const { return buffer_ != nullptr; }
  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  // Negative indices count from the back.
  std::int64_t dim(int i) const;
  std::int64_t numel() const { return numel_; }
  std::int64_t bytes() const { return numel_ * static_cast<std::int64_t>(dtype_size(dtype_)); }
  DType dtype() const { return dtype_; }
  std::uint64_t buffer_id() const;
  const std::shared_ptr<Buffer>& buffer() const { return buffer_; }
  std::int64_t offset() const { return offset_; }

  std::span<float> data();
  std::span<const float> data() const;
  float item() const;

  // Another handle onto the same buffer; keeps it alive without a copy.
  Tensor shared() const;
  // Same buffer, new shape (element counts must agree).
  Tensor view_as(Shape shape) const;
  // Rounds every value onto the storage grid after raw writes.
  void canonicalize();

 private:
  std::shared_ptr<Buffer> buffer_;
  std::int64_t offset_ = 0;
  std::int64_t numel_ = 0;
  Shape shape_;
  DType dtype_ = DType::kF32;
};

// Builds a list by moving each handle in. A braced list would copy the
// elements, and copying a Tensor duplicates its buffer.
template <typename... Ts>
std::vector<Tensor> tensor_list(Ts&&... ts) {
  std::vector<Tensor> out;
  out.reserve(sizeof...(Ts));
  (out.push_back(std::forward<Ts>(ts)), ...);
  return out;
}

}  // namespace evo
