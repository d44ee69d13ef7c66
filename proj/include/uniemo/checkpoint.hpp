#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "uniemo/optim.hpp"
#include "uniemo/params.hpp"
#include "uniemo/tensor.hpp"

namespace uniemo {

/// Serialized training state.
///
/// File layout (little-endian):
///   8 bytes  magic "UNIEMOCK"
///   u32      format version
///   u64      header length H
///   H bytes  JSON header: kind, step, rng_state, config text and the array
///            directory (name, dtype "f64", shape, offset, byte length, crc32)
///   u32      CRC-32 of the header
///   ...      raw array data, offsets relative to the end of the header CRC
struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  std::uint32_t format_version = kFormatVersion;
  std::string kind;         // "pretrain" or "finetune"
  std::int64_t step = 0;
  std::string config_text;  // resolved Config::to_text()
  std::string rng_state;
  std::vector<std::pair<std::string, Tensor>> arrays;

  const Tensor* find(std::string_view name) const;
  const Tensor& at(std::string_view name) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Parameters are stored as "param/<name>", AdamW moments as
/// "adam.m/<name>" and "adam.v/<name>".
void store_parameters(Checkpoint& ckpt, const ParameterStore& store);
void store_optimizer(Checkpoint& ckpt, const AdamW& opt);
/// Loads every parameter of `store` whose name starts with `prefix`. Each
/// one must be present in the checkpoint with the same shape. Returns the
/// number of parameters loaded.
std::size_t restore_parameters(const Checkpoint& ckpt, ParameterStore& store,
                               std::string_view prefix = "");
void restore_optimizer(const Checkpoint& ckpt, AdamW& opt);

}  // namespace uniemo
