#pragma once

#include <png.h>

#include <array>
#include <cstdio>
#include <cstring>
#include <string>

#include "tgda/tensor.hpp"

namespace tgda::img {

// Images are float CHW tensors in [0, 1], 3 channels.
using Image = Tensor<float>;

namespace detail {
struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;
}  // namespace detail

inline Image decode_png(const std::string& path) {
  detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
  check(fp != nullptr, ErrorKind::kData, "cannot open image file: " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  check(png != nullptr, ErrorKind::kData, "libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail(ErrorKind::kData, "libpng info init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::kData, "unreadable or corrupt png: " + path);
  }
  png_init_io(png, fp.get());
  png_read_png(png, info,
               PNG_TRANSFORM_STRIP_16 | PNG_TRANSFORM_STRIP_ALPHA | PNG_TRANSFORM_EXPAND |
                   PNG_TRANSFORM_GRAY_TO_RGB,
               nullptr);
  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const png_byte channels = png_get_channels(png, info);
  if (channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::kData, "png is not decodable to rgb: " + path);
  }
  png_bytepp rows = png_get_rows(png, info);
  Image out(Shape{3, static_cast<int64_t>(h), static_cast<int64_t>(w)});
  float* d = out.data();
  const int64_t hw = static_cast<int64_t>(h) * w;
  for (png_uint_32 y = 0; y < h; ++y) {
    const png_bytep row = rows[y];
    for (png_uint_32 x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        d[c * hw + static_cast<int64_t>(y) * w + x] =
            static_cast<float>(row[x * 3 + static_cast<png_uint_32>(c)]) / 255.0f;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

inline void encode_png(const std::string& path, const Image& image) {
  check(image.ndim() == 3 && image.shape()[0] == 3, ErrorKind::kData,
        "encode_png: expects a [3,H,W] image");
  const int64_t h = image.shape()[1], w = image.shape()[2];
  detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
  check(fp != nullptr, ErrorKind::kData, "cannot write image file: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  check(png != nullptr, ErrorKind::kData, "libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail(ErrorKind::kData, "libpng info init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorKind::kData, "png write failed: " + path);
  }
  png_init_io(png, fp.get());
  // fixed settings keep the emitted bytes reproducible
  png_set_compression_level(png, 6);
  png_set_filter(png, 0, PNG_FILTER_NONE);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  std::vector<png_byte> rowbuf(static_cast<size_t>(w) * 3);
  const float* d = image.data();
  const int64_t hw = h * w;
  png_write_info(png, info);
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        float v = d[c * hw + y * w + x];
        if (v < 0.0f) v = 0.0f;
        if (v > 1.0f) v = 1.0f;
        rowbuf[static_cast<size_t>(x * 3 + c)] =
            static_cast<png_byte>(v * 255.0f + 0.5f);
      }
    png_write_row(png, rowbuf.data());
  }
  png_write_end(png, info);
  png_destroy_write_struct(&png, &info);
}

// Planar f32 sidecar format for codec-free tests: magic, u32 c/h/w, payload.
constexpr char kRawMagic[9] = "TGDARAWF";

inline void write_rawf(const std::string& path, const Image& image) {
  detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
  check(fp != nullptr, ErrorKind::kData, "cannot write raw image: " + path);
  std::fwrite(kRawMagic, 1, 8, fp.get());
  const uint32_t dims[3] = {static_cast<uint32_t>(image.shape()[0]),
                            static_cast<uint32_t>(image.shape()[1]),
                            static_cast<uint32_t>(image.shape()[2])};
  std::fwrite(dims, sizeof(uint32_t), 3, fp.get());
  std::fwrite(image.data(), sizeof(float), static_cast<size_t>(image.numel()), fp.get());
}

inline Image read_rawf(const std::string& path) {
  detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
  check(fp != nullptr, ErrorKind::kData, "cannot open raw image: " + path);
  char magic[8];
  uint32_t dims[3];
  check(std::fread(magic, 1, 8, fp.get()) == 8 && std::memcmp(magic, kRawMagic, 8) == 0,
        ErrorKind::kData, "bad raw image magic: " + path);
  check(std::fread(dims, sizeof(uint32_t), 3, fp.get()) == 3, ErrorKind::kData,
        "truncated raw image header: " + path);
  Image out(Shape{dims[0], dims[1], dims[2]});
  check(std::fread(out.data(), sizeof(float), static_cast<size_t>(out.numel()), fp.get()) ==
            static_cast<size_t>(out.numel()),
        ErrorKind::kData, "truncated raw image payload: " + path);
  return out;
}

inline Image load_image(const std::string& path) {
  if (path.size() >= 5 && path.compare(path.size() - 5, 5, ".rawf") == 0) return read_rawf(path);
  return decode_png(path);
}

// ---------------------------------------------------------------------------
// warping / photometric helpers for augmentation (plain data path, no tape)
// ---------------------------------------------------------------------------

// Inverse-mapped bilinear warp: for each destination pixel, sample the source
// at inv * (dst - center) + center. Out-of-range samples clamp to the edge.
// The identity matrix reproduces the input exactly.
inline Image affine_bilinear(const Image& src, const std::array<double, 4>& inv_mat,
                             double shift_x, double shift_y) {
  const int64_t c = src.shape()[0], h = src.shape()[1], w = src.shape()[2];
  Image out(src.shape());
  const double cy = 0.5 * static_cast<double>(h - 1);
  const double cx = 0.5 * static_cast<double>(w - 1);
  const float* sp = src.data();
  float* dp = out.data();
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      const double rx = static_cast<double>(x) - cx - shift_x;
      const double ry = static_cast<double>(y) - cy - shift_y;
      double sx = inv_mat[0] * rx + inv_mat[1] * ry + cx;
      double sy = inv_mat[2] * rx + inv_mat[3] * ry + cy;
      if (sx < 0) sx = 0;
      if (sx > static_cast<double>(w - 1)) sx = static_cast<double>(w - 1);
      if (sy < 0) sy = 0;
      if (sy > static_cast<double>(h - 1)) sy = static_cast<double>(h - 1);
      const auto x0 = static_cast<int64_t>(sx);
      const auto y0 = static_cast<int64_t>(sy);
      const int64_t x1 = std::min(x0 + 1, w - 1);
      const int64_t y1 = std::min(y0 + 1, h - 1);
      const double fx = sx - static_cast<double>(x0);
      const double fy = sy - static_cast<double>(y0);
      for (int64_t ch = 0; ch < c; ++ch) {
        const float* plane = sp + ch * h * w;
        const double v =
            (1 - fy) * ((1 - fx) * plane[y0 * w + x0] + fx * plane[y0 * w + x1]) +
            fy * ((1 - fx) * plane[y1 * w + x0] + fx * plane[y1 * w + x1]);
        dp[(ch * h + y) * w + x] = static_cast<float>(v);
      }
    }
  return out;
}

inline Image box_blur3(const Image& src) {
  const int64_t c = src.shape()[0], h = src.shape()[1], w = src.shape()[2];
  Image out(src.shape());
  const float* sp = src.data();
  float* dp = out.data();
  for (int64_t ch = 0; ch < c; ++ch) {
    const float* plane = sp + ch * h * w;
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        float acc = 0;
        int cnt = 0;
        for (int64_t dy = -1; dy <= 1; ++dy)
          for (int64_t dx = -1; dx <= 1; ++dx) {
            const int64_t yy = y + dy, xx = x + dx;
            if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
            acc += plane[yy * w + xx];
            ++cnt;
          }
        dp[(ch * h + y) * w + x] = acc / static_cast<float>(cnt);
      }
  }
  return out;
}

}  // namespace tgda::img
