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

#include "evo/tensor.h"

#include <sstream>

#include "evo/bf16.h"
#include "evo/errors.h"

namespace evo {

std::size_t dtype_size(DType dtype) { return dtype == DType::kBF16 ? 2 : 4; }

const char* dtype_name(DType dtype) { return dtype == DType::kBF16 ? "bf16" : "f32"; }

DType parse_dtype(const std::string& name) {
  if (name == "f32" || name == "F32" || name == "float32") return DType::kF32;
  if (name == "bf16" || name == "BF16" || name == "bfloat16") return DType::kBF16;
  throw std::invalid_argument("unknown dtype '" + name + "'");
}

DType promote(DType a, DType b) {
  return (a == DType::kBF16 || b == DType::kBF16) ? DType::kBF16 : DType::kF32;
}

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (std::int64_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.size() > static_cast<std::size_t>(kMaxRank)) {
    throw DimensionError("rank " + std::to_string(shape.size()) + " exceeds 5: " +
                         shape_str(shape));
  }
  for (std::int64_t d : shape) {
    if (d < 1) throw DimensionError("non-positive extent in shape " + shape_str(shape));
  }
}

std::shared_ptr<Buffer> make_buffer(const Shape& shape, DType dtype) {
  const std::int64_t n = shape_numel(shape);
  return std::make_shared<Buffer>(n, n * static_cast<std::int64_t>(dtype_size(dtype)), shape);
}

}  // namespace

Buffer::Buffer(std::int64_t elements, std::int64_t bytes, const Shape& shape)
    : values_(static_cast<std::size_t>(elements), 0.0f),
      bytes_(bytes),
      ledger_(&MemoryLedger::current()) {
  id_ = ledger_->on_alloc(bytes_, shape);
}

Buffer::~Buffer() { ledger_->on_free(id_); }

Tensor::Tensor(Shape shape, DType dtype)
    : numel_(shape_numel(shape)), shape_(std::move(shape)), dtype_(dtype) {
  check_shape(shape_);
  buffer_ = make_buffer(shape_, dtype_);
}

Tensor::Tensor(Shape shape, std::vector<float> values, DType dtype)
    : numel_(shape_numel(shape)), shape_(std::move(shape)), dtype_(dtype) {
  check_shape(shape_);
  if (static_cast<std::int64_t>(values.size()) != numel_) {
    throw DimensionError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape_));
  }
  buffer_ = make_buffer(shape_, dtype_);
  buffer_->values() = std::move(values);
  canonicalize();
}

Tensor Tensor::full(Shape shape, float value, DType dtype) {
  Tensor t(std::move(shape), dtype);
  std::fill(t.data().begin(), t.data().end(), value);
  t.canonicalize();
  return t;
}

Tensor Tensor::alias(std::shared_ptr<Buffer> buffer, std::int64_t offset, Shape shape,
                     DType dtype) {
  check_shape(shape);
  Tensor t;
  t.numel_ = shape_numel(shape);
  if (offset < 0 ||
      offset + t.numel_ > static_cast<std::int64_t>(buffer->values().size())) {
    throw DimensionError("alias " + shape_str(shape) + " at offset " + std::to_string(offset) +
                         " exceeds buffer");
  }
  t.buffer_ = std::move(buffer);
  t.offset_ = offset;
  t.shape_ = std::move(shape);
  t.dtype_ = dtype;
  return t;
}

Tensor::Tensor(const Tensor& other)
    : numel_(other.numel_), shape_(other.shape_), dtype_(other.dtype_) {
  if (other.buffer_) {
    buffer_ = make_buffer(shape_, dtype_);
    auto src = other.data();
    std::copy(src.begin(), src.end(), buffer_->values().begin());
  }
}

Tensor& Tensor::operator=(const Tensor& other) {
  if (this != &other) {
    Tensor copy(other);
    *this = std::move(copy);
  }
  return *this;
}

std::int64_t Tensor::dim(int i) const {
  const int r = rank();
  const int idx = i < 0 ? r + i : i;
  if (idx < 0 || idx >= r) {
    throw DimensionError("dim " + std::to_string(i) + " out of range for " + shape_str(shape_));
  }
  return shape_[static_cast<std::size_t>(idx)];
}

std::uint64_t Tensor::buffer_id() const { return buffer_ ? buffer_->id() : 0; }

std::span<float> Tensor::data() {
  if (!buffer_) return {};
  return std::span<float>(buffer_->values().data() + offset_, static_cast<std::size_t>(numel_));
}

std::span<const float> Tensor::data() const {
  if (!buffer_) return {};
  return std::span<const float>(buffer_->values().data() + offset_,
                                static_cast<std::size_t>(numel_));
}

float Tensor::item() const {
  if (numel_ != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape_));
  return data()[0];
}

Tensor Tensor::shared() const {
  if (!buffer_) return {};
  return alias(buffer_, offset_, shape_, dtype_);
}

Tensor Tensor::view_as(Shape shape) const {
  if (shape_numel(shape) != numel_) {
    throw DimensionError("cannot view " + shape_str(shape_) + " as " + shape_str(shape));
  }
  return alias(buffer_, offset_, std::move(shape), dtype_);
}

void Tensor::canonicalize() {
  if (dtype_ != DType::kBF16) return;
  for (float& v : data()) v = bf16::round(v);
}

}  // namespace evo
