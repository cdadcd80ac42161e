#pragma once

#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <jpeglib.h>
#include <png.h>

#include "mareval/util.hpp"

namespace mareval {

/// An RGB8 raster, rows top to bottom, pixels.size() == 3 * width * height.
struct RasterImage {
  int width = 0;
  int height = 0;
  std::vector<unsigned char> pixels;

  bool empty() const { return width == 0 || height == 0; }

  unsigned char* at(int x, int y) { return pixels.data() + 3 * (std::size_t(y) * width + x); }
  const unsigned char* at(int x, int y) const {
    return pixels.data() + 3 * (std::size_t(y) * width + x);
  }

  static RasterImage solid(int w, int h, unsigned char r, unsigned char g,
                           unsigned char b) {
    RasterImage img;
    img.width = w;
    img.height = h;
    img.pixels.resize(std::size_t(3) * w * h);
    for (std::size_t i = 0; i < img.pixels.size(); i += 3) {
      img.pixels[i] = r;
      img.pixels[i + 1] = g;
      img.pixels[i + 2] = b;
    }
    return img;
  }
};

namespace detail {

inline std::vector<unsigned char> slurp_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open image file: " + path.string());
  std::vector<unsigned char> data((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return data;
}

inline RasterImage decode_png(const unsigned char* data, std::size_t size,
                              const std::string& origin) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, data, size))
    throw Error(ErrorKind::parse, "bad PNG (" + origin + "): " + img.message);
  img.format = PNG_FORMAT_RGB;
  RasterImage out;
  out.width = int(img.width);
  out.height = int(img.height);
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  // Alpha is flattened against white so transparent padding stays blank.
  png_color white{0xff, 0xff, 0xff};
  if (!png_image_finish_read(&img, &white, out.pixels.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw Error(ErrorKind::parse, "bad PNG (" + origin + "): " + msg);
  }
  return out;
}

struct JpegErrorMgr {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

inline void jpeg_error_trampoline(j_common_ptr cinfo) {
  auto* mgr = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, mgr->message);
  std::longjmp(mgr->jump, 1);
}

inline RasterImage decode_jpeg(const unsigned char* data, std::size_t size,
                               const std::string& origin) {
  jpeg_decompress_struct cinfo;
  JpegErrorMgr err;
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = jpeg_error_trampoline;
  if (setjmp(err.jump)) {
    std::string msg = err.message;
    jpeg_destroy_decompress(&cinfo);
    throw Error(ErrorKind::parse, "bad JPEG (" + origin + "): " + msg);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, data, static_cast<unsigned long>(size));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  RasterImage out;
  out.width = int(cinfo.output_width);
  out.height = int(cinfo.output_height);
  out.pixels.resize(std::size_t(3) * out.width * out.height);
  while (cinfo.output_scanline < cinfo.output_height) {
    unsigned char* row = out.at(0, int(cinfo.output_scanline));
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return out;
}

}  // namespace detail

/// Decodes a PNG or JPEG buffer, sniffing the format from magic bytes.
inline RasterImage decode_image(const unsigned char* data, std::size_t size,
                                const std::string& origin = "<memory>") {
  if (size >= 8 && data[0] == 0x89 && data[1] == 'P' && data[2] == 'N' &&
      data[3] == 'G')
    return detail::decode_png(data, size, origin);
  if (size >= 2 && data[0] == 0xff && data[1] == 0xd8)
    return detail::decode_jpeg(data, size, origin);
  throw Error(ErrorKind::parse, "unrecognized image format (" + origin + ")");
}

inline RasterImage load_image(const std::filesystem::path& path) {
  auto data = detail::slurp_binary(path);
  if (data.empty()) throw Error(ErrorKind::parse, "empty image file: " + path.string());
  return decode_image(data.data(), data.size(), path.string());
}

inline std::vector<unsigned char> encode_png(const RasterImage& img) {
  if (img.empty()) throw Error(ErrorKind::invalid_argument, "cannot encode empty image");
  png_image meta;
  std::memset(&meta, 0, sizeof(meta));
  meta.version = PNG_IMAGE_VERSION;
  meta.width = png_uint_32(img.width);
  meta.height = png_uint_32(img.height);
  meta.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&meta, nullptr, &size, 0, img.pixels.data(), 0,
                                 nullptr))
    throw Error(ErrorKind::io, std::string("PNG encode failed: ") + meta.message);
  std::vector<unsigned char> out(size);
  if (!png_image_write_to_memory(&meta, out.data(), &size, 0, img.pixels.data(), 0,
                                 nullptr))
    throw Error(ErrorKind::io, std::string("PNG encode failed: ") + meta.message);
  out.resize(size);
  return out;
}

inline void save_png(const RasterImage& img, const std::filesystem::path& path) {
  auto bytes = encode_png(img);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write image file: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            std::streamsize(bytes.size()));
}

/// Aspect-preserving nearest-neighbour resize to the given height. The width
/// rounds half up and never drops below one pixel.
inline RasterImage scale_to_height(const RasterImage& src, int target_height) {
  if (src.empty()) throw Error(ErrorKind::invalid_argument, "cannot scale empty image");
  if (target_height <= 0)
    throw Error(ErrorKind::invalid_argument, "target height must be positive");
  if (src.height == target_height) return src;
  const std::int64_t w = src.width, h = src.height, th = target_height;
  const int target_width = int(std::max<std::int64_t>(1, (2 * w * th + h) / (2 * h)));
  RasterImage out;
  out.width = target_width;
  out.height = target_height;
  out.pixels.resize(std::size_t(3) * target_width * target_height);
  for (int y = 0; y < target_height; ++y) {
    // Sample at pixel centres: floor(((2*y + 1) * h) / (2 * th)).
    int sy = int(((2 * std::int64_t(y) + 1) * h) / (2 * th));
    sy = std::min(sy, src.height - 1);
    for (int x = 0; x < target_width; ++x) {
      int sx = int(((2 * std::int64_t(x) + 1) * w) / (2 * std::int64_t(target_width)));
      sx = std::min(sx, src.width - 1);
      std::memcpy(out.at(x, y), src.at(sx, sy), 3);
    }
  }
  return out;
}

/// Side-by-side combination: every input is scaled to the tallest input's
/// height, then the results are laid out left to right in argument order.
inline RasterImage combine_images(const std::vector<RasterImage>& inputs) {
  if (inputs.empty())
    throw Error(ErrorKind::empty_input, "combine requires at least one image");
  int max_h = 0;
  for (const auto& img : inputs) {
    if (img.empty())
      throw Error(ErrorKind::invalid_argument, "combine received an empty image");
    max_h = std::max(max_h, img.height);
  }
  std::vector<RasterImage> scaled;
  scaled.reserve(inputs.size());
  std::int64_t total_w = 0;
  for (const auto& img : inputs) {
    scaled.push_back(scale_to_height(img, max_h));
    total_w += scaled.back().width;
  }
  RasterImage out;
  out.width = int(total_w);
  out.height = max_h;
  out.pixels.resize(std::size_t(3) * out.width * out.height);
  int x_off = 0;
  for (const auto& img : scaled) {
    for (int y = 0; y < max_h; ++y)
      std::memcpy(out.at(x_off, y), img.at(0, y), std::size_t(3) * img.width);
    x_off += img.width;
  }
  return out;
}

inline RasterImage combine_files(const std::vector<std::filesystem::path>& paths) {
  std::vector<RasterImage> imgs;
  imgs.reserve(paths.size());
  for (const auto& p : paths) imgs.push_back(load_image(p));
  return combine_images(imgs);
}

/// Renders the image as a data URL suitable for a chat-completions image part.
inline std::string encode_for_wire(const RasterImage& img) {
  return "data:image/png;base64," + base64_encode(encode_png(img));
}

/// Parses a PNG data URL back into a raster (test support for wire payloads).
inline RasterImage decode_wire(const std::string& data_url) {
  const std::string prefix = "data:image/png;base64,";
  if (data_url.rfind(prefix, 0) != 0)
    throw Error(ErrorKind::parse, "not a PNG data URL");
  auto bytes = base64_decode(data_url.substr(prefix.size()));
  return decode_image(bytes.data(), bytes.size(), "<data-url>");
}

}  // namespace mareval
