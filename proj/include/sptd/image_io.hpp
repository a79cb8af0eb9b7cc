#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

extern "C" {
#include <jpeglib.h>
}

#include "sptd/error.hpp"
#include "sptd/tensor.hpp"
#include "sptd/tensor_io.hpp"

namespace sptd {

namespace detail {

inline bool has_extension(const std::filesystem::path& p, std::initializer_list<const char*> exts) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return std::any_of(exts.begin(), exts.end(), [&](const char* x) { return e == x; });
}

inline std::vector<std::uint8_t> decode_png(const std::string& bytes, std::uint32_t format, std::size_t& h,
                                            std::size_t& w, const std::string& name) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
    fail(ErrorCode::UnreadableImage, name + ": " + image.message);
  image.format = format;
  std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    fail(ErrorCode::UnreadableImage, name + ": " + image.message);
  }
  h = image.height;
  w = image.width;
  return pixels;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
};

inline std::vector<std::uint8_t> decode_jpeg(const std::string& bytes, std::size_t& h, std::size_t& w,
                                             const std::string& name) {
  jpeg_decompress_struct info{};
  JpegErrorManager err{};
  info.err = jpeg_std_error(&err.base);
  err.base.error_exit = [](j_common_ptr cinfo) {
    std::longjmp(reinterpret_cast<JpegErrorManager*>(cinfo->err)->jump, 1);
  };
  std::vector<std::uint8_t> pixels;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&info);
    fail(ErrorCode::UnreadableImage, name + ": corrupt JPEG");
  }
  jpeg_create_decompress(&info);
  jpeg_mem_src(&info, reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&info, TRUE);
  info.out_color_space = JCS_RGB;
  jpeg_start_decompress(&info);
  h = info.output_height;
  w = info.output_width;
  pixels.resize(h * w * 3);
  while (info.output_scanline < info.output_height) {
    JSAMPROW row = pixels.data() + static_cast<std::size_t>(info.output_scanline) * w * 3;
    jpeg_read_scanlines(&info, &row, 1);
  }
  jpeg_finish_decompress(&info);
  jpeg_destroy_decompress(&info);
  return pixels;
}

inline std::string encode_png(const std::vector<std::uint8_t>& pixels, std::size_t h, std::size_t w,
                              std::uint32_t format) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(w);
  image.height = static_cast<png_uint_32>(h);
  image.format = format;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, pixels.data(), 0, nullptr))
    fail(ErrorCode::IoError, std::string("png encode: ") + image.message);
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, pixels.data(), 0, nullptr))
    fail(ErrorCode::IoError, std::string("png encode: ") + image.message);
  out.resize(size);
  return out;
}

inline std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

}  // namespace detail

// Decodes a PNG or JPEG file into an H x W x 3 tensor in [0, 1].
inline Tensor load_image(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const Error&) {
    fail(ErrorCode::UnreadableImage, "cannot read " + path.string());
  }
  std::size_t h = 0, w = 0;
  std::vector<std::uint8_t> px;
  const bool is_png = bytes.size() >= 8 && png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) == 0;
  if (is_png)
    px = detail::decode_png(bytes, PNG_FORMAT_RGB, h, w, path.string());
  else if (detail::has_extension(path, {".jpg", ".jpeg"}) ||
           (bytes.size() > 2 && static_cast<unsigned char>(bytes[0]) == 0xff && static_cast<unsigned char>(bytes[1]) == 0xd8))
    px = detail::decode_jpeg(bytes, h, w, path.string());
  else
    fail(ErrorCode::UnreadableImage, path.string() + ": not a PNG or JPEG file");
  std::vector<float> data(px.size());
  std::transform(px.begin(), px.end(), data.begin(), [](std::uint8_t v) { return static_cast<float>(v) / 255.0f; });
  return Tensor({h, w, 3}, std::move(data));
}

// Writes an H x W x 3 tensor in [0, 1] as an 8-bit RGB PNG (no timestamps).
inline void save_image_png(const std::filesystem::path& path, const Tensor& rgb) {
  if (rgb.rank() != 3 || rgb.dim(2) != 3) fail(ErrorCode::ShapeMismatch, "expected H x W x 3 image");
  std::vector<std::uint8_t> px(rgb.size());
  std::transform(rgb.values().begin(), rgb.values().end(), px.begin(), detail::to_byte);
  write_file(path, detail::encode_png(px, rgb.dim(0), rgb.dim(1), PNG_FORMAT_RGB));
}

// Masks: 8-bit grayscale PNG with 0 = background and 255 = trace. Any other
// value is rejected.
inline BinaryMask load_mask(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const Error&) {
    fail(ErrorCode::UnreadableImage, "cannot read " + path.string());
  }
  std::size_t h = 0, w = 0;
  auto px = detail::decode_png(bytes, PNG_FORMAT_GRAY, h, w, path.string());
  Tensor t({h, w});
  for (std::size_t i = 0; i < px.size(); ++i) {
    if (px[i] != 0 && px[i] != 255)
      fail(ErrorCode::InvalidMask, path.string() + ": mask value " + std::to_string(px[i]) + " is neither 0 nor 255");
    t[i] = px[i] == 255 ? 1.0f : 0.0f;
  }
  return BinaryMask(std::move(t));
}

inline void save_mask(const std::filesystem::path& path, const BinaryMask& mask) {
  std::vector<std::uint8_t> px(mask.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = mask.test(i) ? 255 : 0;
  write_file(path, detail::encode_png(px, mask.height(), mask.width(), PNG_FORMAT_GRAY));
}

// Piecewise-linear "jet" colormap.
inline void jet(float v, float rgb[3]) {
  v = std::clamp(v, 0.0f, 1.0f);
  rgb[0] = std::clamp(1.5f - std::abs(4.0f * v - 3.0f), 0.0f, 1.0f);
  rgb[1] = std::clamp(1.5f - std::abs(4.0f * v - 2.0f), 0.0f, 1.0f);
  rgb[2] = std::clamp(1.5f - std::abs(4.0f * v - 1.0f), 0.0f, 1.0f);
}

// Blends a colormapped H x W heatmap over an H x W x 3 image.
inline Tensor render_overlay(const Tensor& image, const Tensor& heatmap, float alpha = 0.5f) {
  if (image.rank() != 3 || heatmap.rank() != 2 || image.dim(0) != heatmap.dim(0) || image.dim(1) != heatmap.dim(1))
    fail(ErrorCode::DimMismatch, "overlay needs an image and heatmap of equal size");
  Tensor out(image.shape());
  for (std::size_t p = 0; p < heatmap.size(); ++p) {
    float c[3];
    jet(heatmap[p], c);
    for (int ch = 0; ch < 3; ++ch) out[3 * p + ch] = (1.0f - alpha) * image[3 * p + ch] + alpha * c[ch];
  }
  return out;
}

}  // namespace sptd
