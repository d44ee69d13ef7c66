#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "uniemo/backbone.hpp"
#include "uniemo/fusion.hpp"

namespace uniemo {

/// Flat key = value configuration restricted to a documented key set.
///
/// File syntax: one `key = value` per line, `#` starts a comment, blank
/// lines are ignored. Unknown keys and malformed values are errors.
class Config {
 public:
  /// Every key at its default value.
  Config();

  static Config from_file(const std::filesystem::path& path);
  static Config from_text(std::string_view text, std::string_view source = "<memory>");

  /// Sets a documented key after validating the value against its type.
  void set(std::string_view key, std::string_view value);
  /// Parses "key=value".
  void set_assignment(std::string_view assignment);

  const std::string& get(std::string_view key) const;
  std::int64_t get_int(std::string_view key) const;
  std::uint64_t get_uint(std::string_view key) const;
  double get_double(std::string_view key) const;
  bool get_bool(std::string_view key) const;

  /// Canonical text form, keys sorted; parses back to an equal Config.
  std::string to_text() const;

  friend bool operator==(const Config&, const Config&) = default;

 private:
  std::map<std::string, std::string, std::less<>> values_;
};

/// One documented key.
struct ConfigKey {
  std::string_view name;
  std::string_view type;  // int, uint, double, bool, string or enum choices "a|b"
  std::string_view default_value;
  std::string_view help;
};

std::span<const ConfigKey> config_keys();

/// Applies sources in increasing precedence: defaults, file, the
/// UNIEMO_SEED environment variable, --set overrides, then --seed.
Config resolve_config(const std::optional<std::filesystem::path>& file,
                      std::span<const std::string> overrides,
                      const std::optional<std::uint64_t>& seed_flag);

struct OptimConfig {
  double base_lr = 1.5e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 0.05;
  double eps = 1e-8;
  std::int64_t warmup_steps = 0;
  std::int64_t total_steps = 0;
  bool cosine = true;
  std::size_t batch_size = 8;
};

enum class PoolMode { kMean, kCls };

struct TrainConfig {
  std::uint64_t seed = 0;
  BackboneConfig backbone;
  FusionConfig fusion;
  std::string teacher_kind = "stub";
  std::uint64_t teacher_seed = 0;
  std::string teacher_features;
  /// Norm floor for the row normalizations of the distillation losses; 0
  /// makes degenerate rows an error.
  double norm_floor = 0.0;
  double loss_w1 = 1.0, loss_w2 = 1.0, loss_w3 = 1.0;
  OptimConfig pretrain;
  std::int64_t checkpoint_every = 0;

  OptimConfig finetune;
  std::size_t num_classes = 8;
  bool mixup = true;
  double mixup_alpha = 0.8;
  PoolMode pool = PoolMode::kMean;
  bool probe = false;

  void validate() const;
};

/// Typed view of a resolved Config.
TrainConfig train_config(const Config& config);

}  // namespace uniemo
