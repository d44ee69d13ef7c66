#include "uniemo/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace uniemo {

namespace {

constexpr ConfigKey kKeys[] = {
    {"seed", "uint", "0", "base seed for initialization, masking, batching and mixup"},
    {"precision", "double|single", "double", "arithmetic precision; only double is implemented"},
    {"data.manifest", "string", "", "JSON Lines manifest of training images"},
    {"data.split_plan", "string", "", "split plan file selecting train/val/test records"},
    {"data.hist_bins", "uint", "16", "color histogram bins per channel for split selection"},
    {"split.candidates", "uint", "20", "number of seeded split candidates"},
    {"model.image_size", "uint", "64", "input resolution (square)"},
    {"model.patch", "uint", "8", "patch edge length"},
    {"model.channels", "uint", "3", "image channels"},
    {"model.width", "uint", "128", "encoder token width"},
    {"model.depth", "uint", "4", "encoder blocks"},
    {"model.heads", "uint", "4", "encoder attention heads"},
    {"model.mlp_ratio", "uint", "4", "MLP hidden width as a multiple of the token width"},
    {"model.decoder_width", "uint", "64", "decoder token width"},
    {"model.decoder_depth", "uint", "2", "decoder blocks"},
    {"model.decoder_heads", "uint", "4", "decoder attention heads"},
    {"model.embed_dim", "uint", "64", "projected CLS width; must equal the teacher width"},
    {"model.mask_ratio", "double", "0.75", "fraction of patches masked during pretraining"},
    {"model.norm_pix_loss", "bool", "false", "reconstruct per-patch standardized pixels"},
    {"fusion.strategy", "gamma1|gamma2|gamma3|gamma4", "gamma1", "scene/person fusion strategy"},
    {"fusion.kappa", "uint", "4", "fusion heads"},
    {"fusion.epsilon", "double", "1e-6", "constant added to the fused representation"},
    {"teacher.kind", "stub|external", "stub", "teacher implementation"},
    {"teacher.seed", "uint", "0", "stub teacher seed"},
    {"teacher.features", "string", "", "feature file for the external teacher"},
    {"distill.norm_floor", "double", "0", "clamp row norms to this floor (0 = degenerate rows are errors)"},
    {"loss.w1", "double", "1", "weight of the reconstruction loss"},
    {"loss.w2", "double", "1", "weight of the similarity contrastive loss"},
    {"loss.w3", "double", "1", "weight of the visual feature similarity loss"},
    {"pretrain.base_lr", "double", "1.5e-4", "peak learning rate"},
    {"pretrain.beta1", "double", "0.9", "first moment decay"},
    {"pretrain.beta2", "double", "0.95", "second moment decay"},
    {"pretrain.weight_decay", "double", "0.05", "decoupled weight decay"},
    {"pretrain.warmup_steps", "uint", "20", "linear warmup steps"},
    {"pretrain.total_steps", "uint", "300", "optimizer steps"},
    {"pretrain.schedule", "cosine|constant", "cosine", "learning rate schedule after warmup"},
    {"pretrain.batch_size", "uint", "8", "samples per step"},
    {"pretrain.checkpoint_every", "uint", "0", "write a checkpoint every k steps (0 = only at the end)"},
    {"finetune.base_lr", "double", "1e-4", "peak learning rate"},
    {"finetune.beta1", "double", "0.9", "first moment decay"},
    {"finetune.beta2", "double", "0.999", "second moment decay"},
    {"finetune.weight_decay", "double", "0.05", "decoupled weight decay"},
    {"finetune.warmup_steps", "uint", "10", "linear warmup steps"},
    {"finetune.total_steps", "uint", "200", "optimizer steps"},
    {"finetune.schedule", "cosine|constant", "cosine", "learning rate schedule after warmup"},
    {"finetune.batch_size", "uint", "16", "samples per step"},
    {"finetune.num_classes", "uint", "8", "classifier outputs"},
    {"finetune.mixup", "bool", "true", "mix pairs of samples with Beta-distributed weights"},
    {"finetune.mixup_alpha", "double", "0.8", "Beta(alpha, alpha) parameter"},
    {"finetune.pool", "mean|cls", "mean", "token pooling feeding the classification head"},
    {"finetune.probe", "bool", "false", "freeze the encoder and train only the head"},
    {"eval.split", "train|val|test|all", "test", "records evaluated by the eval command"},
};

const ConfigKey* find_key(std::string_view name) {
  for (const ConfigKey& k : kKeys) {
    if (k.name == name) return &k;
  }
  return nullptr;
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  const char* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && p == end;
}

bool parse_bool(std::string_view s, bool& out) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") {
    out = true;
    return true;
  }
  if (s == "false" || s == "0" || s == "no" || s == "off") {
    out = false;
    return true;
  }
  return false;
}

void validate_value(const ConfigKey& key, std::string_view value) {
  bool ok = true;
  if (key.type == "int") {
    std::int64_t v;
    ok = parse_number(value, v);
  } else if (key.type == "uint") {
    std::uint64_t v;
    ok = parse_number(value, v);
  } else if (key.type == "double") {
    double v;
    ok = parse_number(value, v);
  } else if (key.type == "bool") {
    bool v;
    ok = parse_bool(value, v);
  } else if (key.type != "string") {
    ok = false;
    std::string_view choices = key.type;
    while (!choices.empty()) {
      const auto bar = choices.find('|');
      if (choices.substr(0, bar) == value) ok = true;
      if (bar == std::string_view::npos) break;
      choices.remove_prefix(bar + 1);
    }
  }
  if (!ok) {
    throw Error("config key " + std::string(key.name) + " expects " + std::string(key.type) +
                ", got '" + std::string(value) + "'");
  }
}

OptimConfig optim_config(const Config& c, const std::string& prefix) {
  OptimConfig o;
  o.base_lr = c.get_double(prefix + ".base_lr");
  o.beta1 = c.get_double(prefix + ".beta1");
  o.beta2 = c.get_double(prefix + ".beta2");
  o.weight_decay = c.get_double(prefix + ".weight_decay");
  o.warmup_steps = static_cast<std::int64_t>(c.get_uint(prefix + ".warmup_steps"));
  o.total_steps = static_cast<std::int64_t>(c.get_uint(prefix + ".total_steps"));
  o.cosine = c.get(prefix + ".schedule") == "cosine";
  o.batch_size = c.get_uint(prefix + ".batch_size");
  return o;
}

void validate_optim(const OptimConfig& o, const char* name) {
  const std::string p(name);
  if (o.warmup_steps < 0 || o.total_steps < 0) throw Error(p + ": step counts must be non-negative");
  if (o.batch_size == 0) throw Error(p + ": batch_size must be positive");
  if (o.base_lr < 0.0) throw Error(p + ": base_lr must be non-negative");
  if (o.beta1 < 0.0 || o.beta1 >= 1.0 || o.beta2 < 0.0 || o.beta2 >= 1.0) {
    throw Error(p + ": betas must lie in [0, 1)");
  }
}

}  // namespace

std::span<const ConfigKey> config_keys() { return kKeys; }

Config::Config() {
  for (const ConfigKey& k : kKeys) values_.emplace(std::string(k.name), std::string(k.default_value));
}

Config Config::from_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open config file " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return from_text(ss.str(), path.string());
}

Config Config::from_text(std::string_view text, std::string_view source) {
  Config c;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      c.set_assignment(line);
    } catch (const Error& e) {
      throw Error(std::string(source) + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return c;
}

void Config::set(std::string_view key, std::string_view value) {
  const ConfigKey* k = find_key(key);
  if (k == nullptr) throw Error("unknown config key '" + std::string(key) + "'");
  value = trim(value);
  validate_value(*k, value);
  values_[std::string(key)] = std::string(value);
}

void Config::set_assignment(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw Error("expected key=value, got '" + std::string(assignment) + "'");
  }
  set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

const std::string& Config::get(std::string_view key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw Error("unknown config key '" + std::string(key) + "'");
  return it->second;
}

std::int64_t Config::get_int(std::string_view key) const {
  std::int64_t v = 0;
  if (!parse_number(std::string_view(get(key)), v)) throw Error("config key " + std::string(key) + " is not an integer");
  return v;
}

std::uint64_t Config::get_uint(std::string_view key) const {
  std::uint64_t v = 0;
  if (!parse_number(std::string_view(get(key)), v)) {
    throw Error("config key " + std::string(key) + " is not an unsigned integer");
  }
  return v;
}

double Config::get_double(std::string_view key) const {
  double v = 0;
  if (!parse_number(std::string_view(get(key)), v)) throw Error("config key " + std::string(key) + " is not a number");
  return v;
}

bool Config::get_bool(std::string_view key) const {
  bool v = false;
  if (!parse_bool(get(key), v)) throw Error("config key " + std::string(key) + " is not a boolean");
  return v;
}

std::string Config::to_text() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

Config resolve_config(const std::optional<std::filesystem::path>& file,
                      std::span<const std::string> overrides,
                      const std::optional<std::uint64_t>& seed_flag) {
  Config c = file ? Config::from_file(*file) : Config();
  if (const char* env = std::getenv("UNIEMO_SEED"); env != nullptr && *env != '\0') {
    try {
      c.set("seed", env);
    } catch (const Error& e) {
      throw Error(std::string("UNIEMO_SEED: ") + e.what());
    }
  }
  for (const std::string& o : overrides) c.set_assignment(o);
  if (seed_flag) c.set("seed", std::to_string(*seed_flag));
  return c;
}

void TrainConfig::validate() const {
  backbone.validate();
  if (fusion.dim != backbone.cls_proj_dim) throw Error("fusion width must equal model.embed_dim");
  if (fusion.kappa == 0) throw Error("fusion.kappa must be positive");
  if (teacher_kind == "external" && teacher_features.empty()) {
    throw Error("teacher.kind=external needs teacher.features");
  }
  validate_optim(pretrain, "pretrain");
  validate_optim(finetune, "finetune");
  if (num_classes < 2) throw Error("finetune.num_classes must be at least 2");
  if (mixup && finetune.batch_size < 2) throw Error("finetune.batch_size must be >= 2 with mixup");
  if (mixup_alpha <= 0.0) throw Error("finetune.mixup_alpha must be positive");
  if (norm_floor < 0.0) throw Error("distill.norm_floor must be non-negative");
}

TrainConfig train_config(const Config& c) {
  if (c.get("precision") != "double") {
    throw Error("precision=" + c.get("precision") + " is not supported; use precision=double");
  }
  TrainConfig t;
  t.seed = c.get_uint("seed");
  BackboneConfig& b = t.backbone;
  b.image_size = c.get_uint("model.image_size");
  b.patch = c.get_uint("model.patch");
  b.in_channels = c.get_uint("model.channels");
  b.encoder_width = c.get_uint("model.width");
  b.encoder_depth = c.get_uint("model.depth");
  b.encoder_heads = c.get_uint("model.heads");
  b.mlp_ratio = c.get_uint("model.mlp_ratio");
  b.decoder_width = c.get_uint("model.decoder_width");
  b.decoder_depth = c.get_uint("model.decoder_depth");
  b.decoder_heads = c.get_uint("model.decoder_heads");
  b.cls_proj_dim = c.get_uint("model.embed_dim");
  b.mask_ratio = c.get_double("model.mask_ratio");
  b.norm_pix_loss = c.get_bool("model.norm_pix_loss");
  t.fusion.strategy = parse_fusion_strategy(c.get("fusion.strategy"));
  t.fusion.kappa = c.get_uint("fusion.kappa");
  t.fusion.epsilon = c.get_double("fusion.epsilon");
  t.fusion.dim = b.cls_proj_dim;
  t.teacher_kind = c.get("teacher.kind");
  t.teacher_seed = c.get_uint("teacher.seed");
  t.teacher_features = c.get("teacher.features");
  t.norm_floor = c.get_double("distill.norm_floor");
  t.loss_w1 = c.get_double("loss.w1");
  t.loss_w2 = c.get_double("loss.w2");
  t.loss_w3 = c.get_double("loss.w3");
  t.pretrain = optim_config(c, "pretrain");
  t.checkpoint_every = static_cast<std::int64_t>(c.get_uint("pretrain.checkpoint_every"));
  t.finetune = optim_config(c, "finetune");
  t.num_classes = c.get_uint("finetune.num_classes");
  t.mixup = c.get_bool("finetune.mixup");
  t.mixup_alpha = c.get_double("finetune.mixup_alpha");
  t.pool = c.get("finetune.pool") == "cls" ? PoolMode::kCls : PoolMode::kMean;
  t.probe = c.get_bool("finetune.probe");
  t.validate();
  return t;
}

}  // namespace uniemo
