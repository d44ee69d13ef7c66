#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "uniemo/tensor.hpp"

namespace uniemo {

/// A named learnable array and its accumulated gradient.
///
/// Names are dotted paths (e.g. "encoder.block3.attn.qkv.weight"); the
/// first segment is the parameter group used for transfer and checkpoint
/// addressing.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  std::string_view group() const;
};

/// Owns parameters in registration order. Addresses are stable for the
/// lifetime of the store, so modules may keep Parameter pointers.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) = default;
  ParameterStore& operator=(ParameterStore&&) = default;

  Parameter& add(std::string name, Tensor init);
  Parameter* find(std::string_view name);
  const Parameter* find(std::string_view name) const;
  Parameter& at(std::string_view name);
  const Parameter& at(std::string_view name) const;

  std::vector<Parameter*> all() const;
  /// Parameters whose name starts with `prefix`.
  std::vector<Parameter*> with_prefix(std::string_view prefix) const;
  std::size_t size() const noexcept { return params_.size(); }
  std::size_t element_count() const;

  void zero_grad();

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

}  // namespace uniemo
