#include "uniemo/image.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

namespace uniemo {

namespace {

std::string lower_ext(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext;
}

Tensor from_bytes(const std::vector<std::uint8_t>& bytes, std::size_t h, std::size_t w,
                  std::size_t src_channels, std::size_t channels, double maxval) {
  Tensor out({h, w, channels});
  for (std::size_t i = 0; i < h * w; ++i) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t sc = src_channels == 1 ? 0 : std::min(c, src_channels - 1);
      out[i * channels + c] = bytes[i * src_channels + sc] / maxval;
    }
  }
  return out;
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

// Skips whitespace and '#' comments in a PNM header.
std::size_t read_pnm_int(std::istream& is) {
  int ch = is.peek();
  while (ch != EOF) {
    if (ch == '#') {
      std::string line;
      std::getline(is, line);
    } else if (std::isspace(ch)) {
      is.get();
    } else {
      break;
    }
    ch = is.peek();
  }
  std::size_t v = 0;
  if (!(is >> v)) throw Error("malformed PNM header");
  return v;
}

Tensor read_pnm(const std::filesystem::path& path, std::size_t channels) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open image " + path.string());
  std::string magic(2, '\0');
  is.read(magic.data(), 2);
  const bool ascii = magic == "P2" || magic == "P3";
  const bool gray = magic == "P2" || magic == "P5";
  if (!(ascii || magic == "P5" || magic == "P6")) {
    throw Error("unsupported PNM variant in " + path.string());
  }
  const std::size_t w = read_pnm_int(is);
  const std::size_t h = read_pnm_int(is);
  const std::size_t maxval = read_pnm_int(is);
  if (w == 0 || h == 0 || maxval == 0 || maxval > 65535) {
    throw Error("malformed PNM header in " + path.string());
  }
  const std::size_t src_channels = gray ? 1 : 3;
  const std::size_t count = w * h * src_channels;
  std::vector<double> values(count);
  if (ascii) {
    for (auto& v : values) v = static_cast<double>(read_pnm_int(is));
  } else {
    is.get();  // single whitespace byte after maxval
    const std::size_t bpp = maxval > 255 ? 2 : 1;
    std::vector<unsigned char> raw(count * bpp);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(is.gcount()) != raw.size()) {
      throw Error("truncated image data in " + path.string());
    }
    for (std::size_t i = 0; i < count; ++i) {
      values[i] = bpp == 1 ? raw[i] : static_cast<double>((raw[2 * i] << 8) | raw[2 * i + 1]);
    }
  }
  Tensor out({h, w, channels});
  for (std::size_t i = 0; i < h * w; ++i) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t sc = src_channels == 1 ? 0 : std::min(c, src_channels - 1);
      out[i * channels + c] = values[i * src_channels + sc] / static_cast<double>(maxval);
    }
  }
  return out;
}

Tensor read_png(const std::filesystem::path& path, std::size_t channels) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw Error("cannot read PNG " + path.string() + ": " + img.message);
  }
  const bool gray = channels == 1;
  img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw Error("cannot decode PNG " + path.string() + ": " + msg);
  }
  return from_bytes(buf, img.height, img.width, gray ? 1 : 3, channels, 255.0);
}

void write_png(const std::filesystem::path& path, const Tensor& image) {
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  if (c != 1 && c != 3) throw Error("PNG export supports 1 or 3 channels");
  std::vector<std::uint8_t> buf(h * w * c);
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = to_byte(image[i]);
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = c == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr)) {
    throw Error("cannot write PNG " + path.string() + ": " + img.message);
  }
}

void write_pnm(const std::filesystem::path& path, const Tensor& image) {
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  if (c != 1 && c != 3) throw Error("PNM export supports 1 or 3 channels");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write image " + path.string());
  os << (c == 1 ? "P5" : "P6") << '\n' << w << ' ' << h << "\n255\n";
  std::vector<char> buf(h * w * c);
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<char>(to_byte(image[i]));
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!os) throw Error("cannot write image " + path.string());
}

}  // namespace

Tensor read_image(const std::filesystem::path& path, std::size_t channels) {
  if (channels == 0) throw Error("image channel count must be positive");
  if (!std::filesystem::exists(path)) throw Error("image not found: " + path.string());
  const std::string ext = lower_ext(path);
  if (ext == ".png") return read_png(path, channels);
  if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm") return read_pnm(path, channels);
  throw Error("unsupported image format: " + path.string());
}

void write_image(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3) throw Error("write_image expects an H x W x C tensor");
  const std::string ext = lower_ext(path);
  if (ext == ".png") {
    write_png(path, image);
  } else if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm") {
    write_pnm(path, image);
  } else {
    throw Error("unsupported image format: " + path.string());
  }
}

Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w) {
  if (image.rank() != 3) throw Error("resize_bilinear expects an H x W x C tensor");
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  if (out_h == 0 || out_w == 0 || h == 0 || w == 0) throw Error("resize to/from empty image");
  if (h == out_h && w == out_w) return image;
  Tensor out({out_h, out_w, c});
  const double sy = static_cast<double>(h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(w) / static_cast<double>(out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0,
                                 static_cast<double>(h - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0,
                                   static_cast<double>(w - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double a = image[(y0 * w + x0) * c + ch];
        const double b = image[(y0 * w + x1) * c + ch];
        const double d = image[(y1 * w + x0) * c + ch];
        const double e = image[(y1 * w + x1) * c + ch];
        const double top = a + (b - a) * wx;
        const double bot = d + (e - d) * wx;
        out[(y * out_w + x) * c + ch] = top + (bot - top) * wy;
      }
    }
  }
  return out;
}

Tensor crop(const Tensor& image, std::size_t x0, std::size_t y0, std::size_t x1, std::size_t y1) {
  if (image.rank() != 3) throw Error("crop expects an H x W x C tensor");
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  if (!(x0 < x1 && x1 <= w && y0 < y1 && y1 <= h)) throw Error("crop box out of range");
  Tensor out({y1 - y0, x1 - x0, c});
  for (std::size_t y = y0; y < y1; ++y) {
    std::copy_n(image.ptr() + (y * w + x0) * c, (x1 - x0) * c,
                out.ptr() + (y - y0) * (x1 - x0) * c);
  }
  return out;
}

Tensor quantize_8bit(const Tensor& image) {
  Tensor out = image;
  for (double& v : out.data()) v = to_byte(v) / 255.0;
  return out;
}

}  // namespace uniemo
