#include "uniemo/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "uniemo/image.hpp"

namespace uniemo {

namespace {

using ojson = nlohmann::ordered_json;

[[noreturn]] void fail_at(std::string_view source, std::size_t line, const std::string& what) {
  throw Error(std::string(source) + ":" + std::to_string(line) + ": " + what);
}

ManifestRecord parse_record(const std::string& text, std::string_view source, std::size_t line) {
  ojson j;
  try {
    j = ojson::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    fail_at(source, line, std::string("malformed record: ") + e.what());
  }
  if (!j.is_object()) fail_at(source, line, "malformed record: expected a JSON object");
  ManifestRecord r;
  r.line = line;
  if (!j.contains("image_path") || !j["image_path"].is_string() ||
      j["image_path"].get<std::string>().empty()) {
    fail_at(source, line, "missing field image_path");
  }
  r.image_path = j["image_path"].get<std::string>();
  if (j.contains("label") && !j["label"].is_null()) {
    if (!j["label"].is_number_integer() || j["label"].get<long long>() < 0) {
      fail_at(source, line, "label must be a non-negative integer");
    }
    r.label = j["label"].get<int>();
  }
  if (j.contains("attributes") && !j["attributes"].is_null()) {
    if (!j["attributes"].is_object()) fail_at(source, line, "attributes must be an object");
    for (const auto& [k, v] : j["attributes"].items()) {
      if (!v.is_string()) fail_at(source, line, "attribute " + k + " must be a string");
      r.attributes.emplace_back(k, v.get<std::string>());
    }
  }
  if (j.contains("person_box") && !j["person_box"].is_null()) {
    const auto& b = j["person_box"];
    if (!b.is_array() || b.size() != 4 ||
        !std::all_of(b.begin(), b.end(), [](const ojson& v) { return v.is_number(); })) {
      fail_at(source, line, "invalid box at line " + std::to_string(line));
    }
    double c[4];
    for (int i = 0; i < 4; ++i) c[i] = b[i].get<double>();
    if (c[0] < 0 || c[1] < 0 || c[2] <= c[0] || c[3] <= c[1] ||
        std::any_of(std::begin(c), std::end(c), [](double v) { return v != std::floor(v); })) {
      fail_at(source, line, "invalid box at line " + std::to_string(line));
    }
    r.person_box = PersonBox{static_cast<std::size_t>(c[0]), static_cast<std::size_t>(c[1]),
                             static_cast<std::size_t>(c[2]), static_cast<std::size_t>(c[3])};
  }
  if (j.contains("split_hint") && j["split_hint"].is_string()) {
    r.split_hint = j["split_hint"].get<std::string>();
  }
  if (j.contains("caption") && j["caption"].is_string()) r.caption = j["caption"].get<std::string>();
  return r;
}

}  // namespace

std::vector<ManifestRecord> parse_manifest(std::string_view text, std::string_view source) {
  std::vector<ManifestRecord> out;
  std::istringstream is{std::string(text)};
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    out.push_back(parse_record(line, source, n));
  }
  return out;
}

std::vector<ManifestRecord> load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("manifest not found: " + path.string());
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_manifest(buf.str(), path.string());
}

void write_manifest(const std::filesystem::path& path, std::span<const ManifestRecord> records) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write manifest " + path.string());
  for (const auto& r : records) {
    ojson j;
    j["image_path"] = r.image_path;
    if (r.label) j["label"] = *r.label;
    if (!r.attributes.empty()) {
      ojson attrs = ojson::object();
      for (const auto& [k, v] : r.attributes) attrs[k] = v;
      j["attributes"] = attrs;
    }
    if (r.person_box) {
      j["person_box"] = {r.person_box->x0, r.person_box->y0, r.person_box->x1, r.person_box->y1};
    }
    if (r.split_hint) j["split_hint"] = *r.split_hint;
    if (r.caption) j["caption"] = *r.caption;
    os << j.dump() << '\n';
  }
  if (!os) throw Error("cannot write manifest " + path.string());
}

std::string build_caption(const Attributes& attributes) {
  auto lookup = [&](std::string_view key) -> const std::string* {
    for (const auto& [k, v] : attributes) {
      if (k == key) return &v;
    }
    return nullptr;
  };
  const std::string* emotion = lookup("emotion");
  if (emotion == nullptr) throw Error("caption needs an \"emotion\" attribute");
  std::string out = "A photo evoking " + *emotion;
  if (const std::string* object = lookup("object")) out += ", featuring " + *object;
  if (const std::string* scene = lookup("scene")) out += ", in a " + *scene + " scene";
  for (const auto& [k, v] : attributes) {
    if (k == "emotion" || k == "object" || k == "scene") continue;
    out += ", with " + k + " " + v;
  }
  return out;
}

Tensor derive_person_map(const Tensor& pixels, const std::optional<PersonBox>& box) {
  if (!box) return pixels;
  const std::size_t h = pixels.dim(0), w = pixels.dim(1);
  if (!(box->x0 < box->x1 && box->x1 <= w && box->y0 < box->y1 && box->y1 <= h)) {
    throw Error("person box out of range for a " + std::to_string(w) + "x" + std::to_string(h) +
                " image");
  }
  return resize_bilinear(crop(pixels, box->x0, box->y0, box->x1, box->y1), h, w);
}

std::vector<double> color_histogram(const Tensor& pixels, std::size_t bins_per_channel) {
  if (bins_per_channel < 1) throw Error("histogram needs at least one bin");
  if (pixels.rank() != 3) throw Error("color_histogram expects an H x W x C tensor");
  const std::size_t c = pixels.dim(2);
  const std::size_t count = pixels.size() / c;
  std::vector<double> hist(c * bins_per_channel, 0.0);
  if (count == 0) return hist;
  const double b = static_cast<double>(bins_per_channel);
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double v = std::clamp(pixels[i * c + ch], 0.0, 1.0);
      const std::size_t bin = std::min(static_cast<std::size_t>(v * b), bins_per_channel - 1);
      hist[ch * bins_per_channel + bin] += 1.0;
    }
  }
  for (double& h : hist) h /= static_cast<double>(count);
  return hist;
}

ImageSample load_sample(const ManifestRecord& record, const std::filesystem::path& base_dir,
                        std::size_t image_size, std::size_t channels) {
  std::filesystem::path p(record.image_path);
  if (p.is_relative()) p = base_dir / p;
  ImageSample s;
  Tensor full;
  try {
    full = read_image(p, channels);
    s.person_pixels = resize_bilinear(derive_person_map(full, record.person_box), image_size, image_size);
  } catch (const Error& e) {
    if (record.line == 0) throw;
    throw Error("manifest line " + std::to_string(record.line) + ": " + e.what());
  }
  s.pixels = resize_bilinear(full, image_size, image_size);
  if (record.caption) {
    s.caption = *record.caption;
  } else if (std::any_of(record.attributes.begin(), record.attributes.end(),
                         [](const auto& kv) { return kv.first == "emotion"; })) {
    s.caption = build_caption(record.attributes);
  }
  s.label = record.label;
  s.source = record.image_path;
  return s;
}

std::vector<ImageSample> load_samples(std::span<const ManifestRecord> records,
                                      const std::filesystem::path& base_dir,
                                      std::size_t image_size, std::size_t channels) {
  std::vector<ImageSample> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(load_sample(r, base_dir, image_size, channels));
  return out;
}

Tensor stack_pixels(std::span<const ImageSample* const> samples, bool person) {
  if (samples.empty()) throw Error("cannot stack an empty batch");
  const Tensor& first = person ? samples.front()->person_pixels : samples.front()->pixels;
  Shape shape = first.shape();
  shape.insert(shape.begin(), samples.size());
  Tensor out(shape);
  for (std::size_t n = 0; n < samples.size(); ++n) {
    const Tensor& src = person ? samples[n]->person_pixels : samples[n]->pixels;
    if (src.shape() != first.shape()) throw Error("batch images differ in shape");
    std::copy(src.data().begin(), src.data().end(), out.ptr() + n * first.size());
  }
  return out;
}

Tensor stack_pixels(std::span<const ImageSample> samples, bool person) {
  std::vector<const ImageSample*> ptrs;
  ptrs.reserve(samples.size());
  for (const auto& s : samples) ptrs.push_back(&s);
  return stack_pixels(std::span<const ImageSample* const>(ptrs), person);
}

MixupBatch mixup_with(const Tensor& x, std::span<const int> y, double lambda,
                      std::vector<std::size_t> permutation) {
  const std::size_t n = y.size();
  if (n < 2) throw Error("mixup needs a batch of at least 2");
  if (x.rank() == 0 || x.dim(0) != n) throw Error("mixup: leading axis must match label count");
  if (permutation.size() != n) throw Error("mixup: permutation length mismatch");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw Error("mixup: lambda outside [0, 1]");
  MixupBatch out;
  out.lambda = lambda;
  out.x = Tensor(x.shape());
  const std::size_t per = x.size() / n;
  for (std::size_t i = 0; i < n; ++i) {
    const double* a = x.ptr() + i * per;
    const double* b = x.ptr() + permutation[i] * per;
    double* dst = out.x.ptr() + i * per;
    for (std::size_t k = 0; k < per; ++k) dst[k] = lambda * a[k] + (1.0 - lambda) * b[k];
    out.y_a.push_back(y[i]);
    out.y_b.push_back(y[permutation[i]]);
  }
  out.permutation = std::move(permutation);
  return out;
}

MixupBatch mixup_batch(const Tensor& x, std::span<const int> y, double alpha, Rng& rng) {
  if (!(alpha > 0.0)) throw Error("mixup alpha must be positive");
  if (y.size() < 2) throw Error("mixup needs a batch of at least 2");
  const double lambda = rng.beta(alpha, alpha);
  return mixup_with(x, y, lambda, rng.permutation(y.size()));
}

}  // namespace uniemo
