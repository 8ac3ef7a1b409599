#pragma once

// 8-bit PNG/JPEG decoding and PNG encoding, plus conversion between 8-bit
// RGB images and [0,1] float tensors.

#include <jpeglib.h>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "introvae/errors.hpp"
#include "introvae/tensor.hpp"

namespace introvae {

// Interleaved 8-bit RGB, row-major.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_file(const std::filesystem::path& p, const char* mode) {
  FilePtr f(std::fopen(p.c_str(), mode));
  if (!f) throw LoadError("cannot open " + p.string());
  return f;
}

inline RgbImage read_png(const std::filesystem::path& path) {
  auto f = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw LoadError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  RgbImage img;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw LoadError("corrupt PNG: " + path.string());
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  const auto depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  if (png_get_rowbytes(png, info) != std::size_t(img.width) * 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw LoadError("unsupported PNG layout: " + path.string());
  }
  img.pixels.resize(std::size_t(img.width) * img.height * 3);
  rows.resize(std::size_t(img.height));
  for (int y = 0; y < img.height; ++y) rows[std::size_t(y)] = img.pixels.data() + std::size_t(y) * img.width * 3;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

struct JpegErrorMgr {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
  std::longjmp(err->jump, 1);
}

inline RgbImage read_jpeg(const std::filesystem::path& path) {
  auto f = open_file(path, "rb");
  jpeg_decompress_struct cinfo{};
  JpegErrorMgr err{};
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = jpeg_error_exit;
  RgbImage img;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw LoadError("corrupt JPEG: " + path.string());
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, f.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  img.width = static_cast<int>(cinfo.output_width);
  img.height = static_cast<int>(cinfo.output_height);
  img.pixels.resize(std::size_t(img.width) * img.height * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = img.pixels.data() + std::size_t(cinfo.output_scanline) * img.width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return img;
}

}  // namespace detail

// Decodes a PNG or JPEG file, sniffing the format from its magic bytes.
inline RgbImage read_image(const std::filesystem::path& path) {
  unsigned char magic[8] = {};
  {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open " + path.string());
    in.read(reinterpret_cast<char*>(magic), 8);
    if (in.gcount() < 3) throw LoadError("not an image: " + path.string());
  }
  static const unsigned char png_sig[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  if (std::equal(magic, magic + 8, png_sig)) return detail::read_png(path);
  if (magic[0] == 0xFF && magic[1] == 0xD8 && magic[2] == 0xFF) return detail::read_jpeg(path);
  throw LoadError("not a PNG or JPEG file: " + path.string());
}

inline void write_png(const std::filesystem::path& path, const RgbImage& img) {
  auto f = detail::open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw TrainingAbort("failed writing PNG: " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y)
    png_write_row(png, const_cast<png_bytep>(img.pixels.data() + std::size_t(y) * img.width * 3));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fflush(f.get()) != 0) throw TrainingAbort("failed flushing " + path.string());
}

// Center-crops to a square and resamples to size x size with area averaging
// (box filter over the exact source footprint of each output pixel).
inline RgbImage center_crop_resize(const RgbImage& src, int size) {
  const int side = std::min(src.width, src.height);
  const int x0 = (src.width - side) / 2, y0 = (src.height - side) / 2;
  RgbImage out{size, size, std::vector<std::uint8_t>(std::size_t(size) * size * 3)};
  const double scale = double(side) / size;
  for (int oy = 0; oy < size; ++oy) {
    const double sy0 = oy * scale, sy1 = (oy + 1) * scale;
    for (int ox = 0; ox < size; ++ox) {
      const double sx0 = ox * scale, sx1 = (ox + 1) * scale;
      double acc[3] = {0, 0, 0};
      double area = 0;
      for (int y = int(sy0); y < int(std::ceil(sy1)) && y < side; ++y) {
        const double wy = std::min<double>(y + 1, sy1) - std::max<double>(y, sy0);
        if (wy <= 0) continue;
        for (int x = int(sx0); x < int(std::ceil(sx1)) && x < side; ++x) {
          const double wx = std::min<double>(x + 1, sx1) - std::max<double>(x, sx0);
          if (wx <= 0) continue;
          const auto* p = src.pixels.data() + (std::size_t(y0 + y) * src.width + (x0 + x)) * 3;
          for (int c = 0; c < 3; ++c) acc[c] += wx * wy * p[c];
          area += wx * wy;
        }
      }
      auto* q = out.pixels.data() + (std::size_t(oy) * size + ox) * 3;
      for (int c = 0; c < 3; ++c) q[c] = static_cast<std::uint8_t>(std::clamp(std::lround(acc[c] / area), 0L, 255L));
    }
  }
  return out;
}

// RGB image -> (3, H, W) planar floats in [0,1].
template <class T>
std::vector<T> to_planar(const RgbImage& img) {
  const std::size_t plane = std::size_t(img.width) * img.height;
  std::vector<T> out(3 * plane);
  for (std::size_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c) out[std::size_t(c) * plane + i] = static_cast<T>(img.pixels[i * 3 + c] / 255.0);
  return out;
}

// (C, H, W) planar values -> 8-bit RGB, clamped to [0,1]. Single-channel
// input is replicated to gray.
template <class T>
RgbImage from_planar(std::span<const T> planar, int channels, int height, int width) {
  RgbImage img{width, height, std::vector<std::uint8_t>(std::size_t(width) * height * 3)};
  const std::size_t plane = std::size_t(width) * height;
  for (std::size_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c) {
      const double v = static_cast<double>(planar[std::size_t(channels == 3 ? c : 0) * plane + i]);
      img.pixels[i * 3 + c] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    }
  return img;
}

// Tiles a batch (N, C, H, W) into a cols-wide grid.
template <class T>
RgbImage montage(const Tensor<T>& batch, int cols) {
  const int n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  cols = std::max(1, std::min(cols, n));
  const int rows = (n + cols - 1) / cols;
  RgbImage grid{cols * w, rows * h, std::vector<std::uint8_t>(std::size_t(cols) * w * rows * h * 3, 0)};
  for (int i = 0; i < n; ++i) {
    const auto tile = from_planar<T>(batch.slice(i), c, h, w);
    const int gx = (i % cols) * w, gy = (i / cols) * h;
    for (int y = 0; y < h; ++y)
      std::copy_n(tile.pixels.data() + std::size_t(y) * w * 3, std::size_t(w) * 3,
                  grid.pixels.data() + (std::size_t(gy + y) * grid.width + gx) * 3);
  }
  return grid;
}

}  // namespace introvae
