#include "lapmamba/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

namespace lapmamba::imageio {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

Tensor from_rgb8(const std::vector<unsigned char>& rgb, std::int64_t h, std::int64_t w) {
  Tensor t = Tensor::zeros({1, 3, h, w});
  auto& d = t.data();
  for (std::int64_t i = 0; i < h * w; ++i) {
    for (int c = 0; c < 3; ++c) {
      d[static_cast<size_t>(c * h * w + i)] =
          rgb[static_cast<size_t>(3 * i + c)] / 255.0;
    }
  }
  return t;
}

Tensor read_png(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw FormatError("cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("failed to decode PNG " + path);
  }
  png_init_io(png, f.get());
  png_read_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);

  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  std::vector<unsigned char> rgb(static_cast<size_t>(w) * h * 3);
  std::vector<png_bytep> rows(h);
  for (png_uint_32 i = 0; i < h; ++i) rows[i] = rgb.data() + static_cast<size_t>(i) * w * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return from_rgb8(rgb, h, w);
}

Tensor read_ppm(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw FormatError("cannot open " + path);
  auto next_token = [&]() {
    std::string tok;
    int c;
    while ((c = std::fgetc(f.get())) != EOF) {
      if (c == '#') {  // comment to end of line
        while ((c = std::fgetc(f.get())) != EOF && c != '\n') {
        }
        continue;
      }
      if (std::isspace(c)) {
        if (!tok.empty()) break;
        continue;
      }
      tok.push_back(static_cast<char>(c));
    }
    if (tok.empty()) throw FormatError("truncated PPM header in " + path);
    return tok;
  };
  if (next_token() != "P6") throw FormatError(path + " is not a binary (P6) PPM");
  const long w = std::stol(next_token());
  const long h = std::stol(next_token());
  const long maxval = std::stol(next_token());
  if (w < 1 || h < 1 || maxval != 255) {
    throw FormatError("unsupported PPM geometry/maxval in " + path);
  }
  std::vector<unsigned char> rgb(static_cast<size_t>(w) * static_cast<size_t>(h) * 3);
  if (std::fread(rgb.data(), 1, rgb.size(), f.get()) != rgb.size()) {
    throw FormatError("truncated PPM pixel data in " + path);
  }
  return from_rgb8(rgb, h, w);
}

std::vector<unsigned char> to_rgb8(const Tensor& img, std::int64_t& h, std::int64_t& w) {
  Shape s = img.shape();
  if (s.size() == 4 && s[0] == 1) s.erase(s.begin());
  if (s.size() != 3 || (s[0] != 1 && s[0] != 3)) {
    throw DimensionError("write_image: expected (1|3,H,W) or (1,1|3,H,W), got " +
                         shape_str(img.shape()));
  }
  const std::int64_t c = s[0];
  h = s[1];
  w = s[2];
  const auto& d = img.data();
  std::vector<unsigned char> rgb(static_cast<size_t>(h * w) * 3);
  for (std::int64_t i = 0; i < h * w; ++i) {
    for (int k = 0; k < 3; ++k) {
      const std::int64_t src = (c == 3 ? k : 0) * h * w + i;
      const double v = std::clamp(d[static_cast<size_t>(src)], 0.0, 1.0);
      rgb[static_cast<size_t>(3 * i + k)] =
          static_cast<unsigned char>(std::lround(v * 255.0));
    }
  }
  return rgb;
}

void write_png(const std::string& path, const Tensor& img) {
  std::int64_t h = 0, w = 0;
  const auto rgb = to_rgb8(img, h, w);
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw FormatError("cannot open " + path + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw FormatError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw FormatError("failed to encode PNG " + path);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(static_cast<size_t>(h));
  for (std::int64_t i = 0; i < h; ++i) {
    rows[static_cast<size_t>(i)] =
        const_cast<png_bytep>(rgb.data() + static_cast<size_t>(i) * w * 3);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void write_ppm(const std::string& path, const Tensor& img) {
  std::int64_t h = 0, w = 0;
  const auto rgb = to_rgb8(img, h, w);
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw FormatError("cannot open " + path + " for writing");
  std::fprintf(f.get(), "P6\n%lld %lld\n255\n", static_cast<long long>(w),
               static_cast<long long>(h));
  if (std::fwrite(rgb.data(), 1, rgb.size(), f.get()) != rgb.size()) {
    throw FormatError("short write to " + path);
  }
}

}  // namespace

Tensor read_image(const std::string& path) {
  if (ends_with(path, ".png")) return read_png(path);
  if (ends_with(path, ".ppm")) return read_ppm(path);
  throw FormatError("unsupported image extension on " + path + " (expected .png or .ppm)");
}

void write_image(const std::string& path, const Tensor& img) {
  if (ends_with(path, ".png")) return write_png(path, img);
  if (ends_with(path, ".ppm")) return write_ppm(path, img);
  throw FormatError("unsupported image extension on " + path + " (expected .png or .ppm)");
}

}  // namespace lapmamba::imageio
