#include "uniemo/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <zlib.h>

#include "json.hpp"

namespace uniemo {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'U', 'N', 'I', 'E', 'M', 'O', 'C', 'K'};

std::uint32_t crc32_of(const void* data, std::size_t size) {
  uLong crc = crc32(0L, Z_NULL, 0);
  const auto* p = static_cast<const Bytef*>(data);
  while (size > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
    crc = crc32(crc, p, chunk);
    p += chunk;
    size -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::string& what) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw Error("truncated checkpoint (" + what + ")");
  return v;
}

const std::string kParam = "param/";
const std::string kMoment1 = "adam.m/";
const std::string kMoment2 = "adam.v/";

}  // namespace

const Tensor* Checkpoint::find(std::string_view name) const {
  for (const auto& [n, t] : arrays) {
    if (n == name) return &t;
  }
  return nullptr;
}

const Tensor& Checkpoint::at(std::string_view name) const {
  const Tensor* t = find(name);
  if (t == nullptr) throw Error("checkpoint has no array " + std::string(name));
  return *t;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  nlohmann::ordered_json header;
  header["kind"] = ckpt.kind;
  header["step"] = ckpt.step;
  header["rng_state"] = ckpt.rng_state;
  header["config"] = ckpt.config_text;
  auto dir = nlohmann::ordered_json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.arrays) {
    const std::uint64_t bytes = t.size() * sizeof(double);
    dir.push_back({{"name", name},
                   {"dtype", "f64"},
                   {"shape", t.shape()},
                   {"offset", offset},
                   {"bytes", bytes},
                   {"crc32", crc32_of(t.ptr(), bytes)}});
    offset += bytes;
  }
  header["arrays"] = std::move(dir);
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot write checkpoint " + path.string());
    os.write(kMagic, sizeof(kMagic));
    write_pod<std::uint32_t>(os, ckpt.format_version);
    write_pod<std::uint64_t>(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    write_pod<std::uint32_t>(os, crc32_of(text.data(), text.size()));
    for (const auto& entry : ckpt.arrays) {
      const Tensor& t = entry.second;
      os.write(reinterpret_cast<const char*>(t.ptr()),
               static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!os.flush()) throw Error("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint " + path.string());
  char magic[sizeof(kMagic)];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw Error(path.string() + " is not a checkpoint file");
  }
  Checkpoint ckpt;
  ckpt.format_version = read_pod<std::uint32_t>(is, "version");
  if (ckpt.format_version != Checkpoint::kFormatVersion) {
    throw Error("checkpoint format version " + std::to_string(ckpt.format_version) +
                " is not supported (expected version " +
                std::to_string(Checkpoint::kFormatVersion) + ")");
  }
  const auto header_len = read_pod<std::uint64_t>(is, "header length");
  if (header_len > (1ull << 32)) throw Error("corrupt checkpoint: implausible header length");
  std::string text(header_len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(header_len))) {
    throw Error("truncated checkpoint (header)");
  }
  if (read_pod<std::uint32_t>(is, "header checksum") != crc32_of(text.data(), text.size())) {
    throw Error("corrupt checkpoint: header checksum mismatch");
  }
  const auto header = nlohmann::json::parse(text);
  ckpt.kind = header.at("kind").get<std::string>();
  ckpt.step = header.at("step").get<std::int64_t>();
  ckpt.rng_state = header.at("rng_state").get<std::string>();
  ckpt.config_text = header.at("config").get<std::string>();
  for (const auto& entry : header.at("arrays")) {
    const auto name = entry.at("name").get<std::string>();
    if (entry.at("dtype") != "f64") throw Error("checkpoint array " + name + " has unsupported dtype");
    Tensor t(entry.at("shape").get<Shape>());
    const auto bytes = entry.at("bytes").get<std::uint64_t>();
    if (bytes != t.size() * sizeof(double)) throw Error("corrupt checkpoint: size of " + name);
    if (!is.read(reinterpret_cast<char*>(t.ptr()), static_cast<std::streamsize>(bytes))) {
      throw Error("truncated checkpoint (array " + name + ")");
    }
    if (crc32_of(t.ptr(), bytes) != entry.at("crc32").get<std::uint32_t>()) {
      throw Error("corrupt checkpoint: checksum mismatch in array " + name);
    }
    ckpt.arrays.emplace_back(name, std::move(t));
  }
  return ckpt;
}

void store_parameters(Checkpoint& ckpt, const ParameterStore& store) {
  for (const Parameter* p : store.all()) ckpt.arrays.emplace_back(kParam + p->name, p->value);
}

void store_optimizer(Checkpoint& ckpt, const AdamW& opt) {
  const auto& params = opt.params();
  for (std::size_t k = 0; k < params.size(); ++k) {
    ckpt.arrays.emplace_back(kMoment1 + params[k]->name, opt.first_moments()[k]);
    ckpt.arrays.emplace_back(kMoment2 + params[k]->name, opt.second_moments()[k]);
  }
}

std::size_t restore_parameters(const Checkpoint& ckpt, ParameterStore& store,
                               std::string_view prefix) {
  std::size_t loaded = 0;
  for (Parameter* p : store.with_prefix(prefix)) {
    const Tensor* t = ckpt.find(kParam + p->name);
    if (t == nullptr) throw Error("checkpoint is missing parameter " + p->name);
    if (t->shape() != p->value.shape()) {
      throw Error("checkpoint parameter " + p->name + " has shape " + shape_str(t->shape()) +
                  ", model expects " + shape_str(p->value.shape()));
    }
    p->value = *t;
    ++loaded;
  }
  return loaded;
}

void restore_optimizer(const Checkpoint& ckpt, AdamW& opt) {
  const auto& params = opt.params();
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Tensor& m = ckpt.at(kMoment1 + params[k]->name);
    const Tensor& v = ckpt.at(kMoment2 + params[k]->name);
    if (m.shape() != opt.first_moments()[k].shape() || v.shape() != m.shape()) {
      throw Error("optimizer state shape mismatch for " + params[k]->name);
    }
    opt.first_moments()[k] = m;
    opt.second_moments()[k] = v;
  }
  opt.set_steps_taken(ckpt.step);
}

}  // namespace uniemo
