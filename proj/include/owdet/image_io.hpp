#pragma once

#include <png.h>

#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "owdet/error.hpp"
#include "owdet/image.hpp"

// Raster IO: 8-bit grayscale/RGB PNG (libpng), binary PGM/PPM, and "SALF"
// raw float planes (16-byte header: magic "SALF", u32 width, u32 height,
// u32 reserved = 0, then width*height little-endian f32 row-major).

namespace owdet {

namespace detail {

inline std::uint8_t to_byte(double v) {
  const double s = std::lround(255.0 * std::clamp(v, 0.0, 1.0));
  return static_cast<std::uint8_t>(s);
}

// FILE* wrapper so libpng error longjmps cannot leak the handle.
struct FileHandle {
  std::FILE* f = nullptr;
  explicit FileHandle(const std::string& path, const char* mode)
      : f(std::fopen(path.c_str(), mode)) {}
  ~FileHandle() {
    if (f) std::fclose(f);
  }
  FileHandle(const FileHandle&) = delete;
  FileHandle& operator=(const FileHandle&) = delete;
};

inline void put_u32_le(std::ostream& os, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xff),
                         static_cast<char>((v >> 8) & 0xff),
                         static_cast<char>((v >> 16) & 0xff),
                         static_cast<char>((v >> 24) & 0xff)};
  os.write(bytes, 4);
}

inline std::uint32_t get_u32_le(std::istream& is) {
  unsigned char bytes[4];
  is.read(reinterpret_cast<char*>(bytes), 4);
  return static_cast<std::uint32_t>(bytes[0]) |
         (static_cast<std::uint32_t>(bytes[1]) << 8) |
         (static_cast<std::uint32_t>(bytes[2]) << 16) |
         (static_cast<std::uint32_t>(bytes[3]) << 24);
}

// PNM token reader: skips whitespace and '#' comment lines.
inline long pnm_token(std::istream& is, const std::string& path) {
  int c = is.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = is.get();
    } else if (std::isspace(c)) {
      c = is.get();
    } else {
      break;
    }
  }
  if (c == EOF || !std::isdigit(c)) {
    throw Error(ErrorCode::parse_error, path + ": malformed PNM header");
  }
  long v = 0;
  while (c != EOF && std::isdigit(c)) {
    v = v * 10 + (c - '0');
    c = is.get();
  }
  return v;
}

}  // namespace detail

inline ImageBuffer load_png(const std::string& path) {
  detail::FileHandle fh(path, "rb");
  if (!fh.f) throw Error(ErrorCode::io_error, "cannot open " + path);
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error(ErrorCode::io_error, "libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw Error(ErrorCode::io_error, "libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::parse_error, path + ": PNG decode failed");
  }
  png_init_io(png, fh.f);
  png_read_info(png, info);

  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (depth == 16) png_set_strip_16(png);
  if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS))
    png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const int channels = static_cast<int>(png_get_channels(png, info));
  if (channels != 1 && channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::parse_error,
                path + ": unsupported channel count " + std::to_string(channels));
  }
  std::vector<png_byte> row(static_cast<std::size_t>(width) * channels);
  ImageBuffer img(width, height, channels);
  for (int y = 0; y < height; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (std::size_t i = 0; i < row.size(); ++i) {
      img.data[static_cast<std::size_t>(y) * row.size() + i] = row[i] / 255.0;
    }
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

inline void save_png(const std::string& path, const ImageBuffer& img) {
  if (img.channels != 1 && img.channels != 3) {
    throw Error(ErrorCode::size_mismatch,
                "PNG writer supports 1 or 3 channels, got " +
                    std::to_string(img.channels));
  }
  detail::FileHandle fh(path, "wb");
  if (!fh.f) throw Error(ErrorCode::io_error, "cannot open " + path);
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error(ErrorCode::io_error, "libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error(ErrorCode::io_error, "libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::io_error, path + ": PNG encode failed");
  }
  png_init_io(png, fh.f);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8,
               img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(static_cast<std::size_t>(img.width) * img.channels);
  for (int y = 0; y < img.height; ++y) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      row[i] = detail::to_byte(img.data[static_cast<std::size_t>(y) * row.size() + i]);
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// Saliency written as 8-bit gray, value = round(255 * s).
inline void save_saliency_png(const std::string& path, const SaliencyMap& map) {
  ImageBuffer img(map.width, map.height, 1);
  img.data = map.data;
  save_png(path, img);
}

inline ImageBuffer load_pnm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::io_error, "cannot open " + path);
  char m0 = 0, m1 = 0;
  is.get(m0);
  is.get(m1);
  if (m0 != 'P' || (m1 != '5' && m1 != '6')) {
    throw Error(ErrorCode::parse_error, path + ": not a binary PGM/PPM");
  }
  const int channels = m1 == '5' ? 1 : 3;
  const long width = detail::pnm_token(is, path);
  const long height = detail::pnm_token(is, path);
  const long maxval = detail::pnm_token(is, path);
  if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 255) {
    throw Error(ErrorCode::parse_error, path + ": unsupported PNM geometry");
  }
  // pnm_token consumed exactly one whitespace byte after maxval (the digit
  // loop stops on it), so the stream now sits at the first sample.
  const std::size_t count =
      static_cast<std::size_t>(width) * height * channels;
  std::vector<unsigned char> raw(count);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(count));
  if (static_cast<std::size_t>(is.gcount()) != count) {
    throw Error(ErrorCode::parse_error, path + ": truncated PNM payload");
  }
  ImageBuffer img(static_cast<int>(width), static_cast<int>(height), channels);
  for (std::size_t i = 0; i < count; ++i) {
    img.data[i] = raw[i] / static_cast<double>(maxval);
  }
  return img;
}

inline void save_pnm(const std::string& path, const ImageBuffer& img) {
  if (img.channels != 1 && img.channels != 3) {
    throw Error(ErrorCode::size_mismatch,
                "PNM writer supports 1 or 3 channels, got " +
                    std::to_string(img.channels));
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::io_error, "cannot open " + path);
  os << (img.channels == 1 ? "P5" : "P6") << "\n"
     << img.width << " " << img.height << "\n255\n";
  std::vector<char> raw(img.data.size());
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    raw[i] = static_cast<char>(detail::to_byte(img.data[i]));
  }
  os.write(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (!os) throw Error(ErrorCode::io_error, path + ": write failed");
}

// Dispatch on content magic, not extension.
inline ImageBuffer load_image(const std::string& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw Error(ErrorCode::io_error, "cannot open " + path);
  char head[2] = {0, 0};
  probe.read(head, 2);
  probe.close();
  if (head[0] == 'P' && (head[1] == '5' || head[1] == '6')) return load_pnm(path);
  return load_png(path);
}

inline void save_salf(const std::string& path, const Plane& map) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::io_error, "cannot open " + path);
  os.write("SALF", 4);
  detail::put_u32_le(os, static_cast<std::uint32_t>(map.width));
  detail::put_u32_le(os, static_cast<std::uint32_t>(map.height));
  detail::put_u32_le(os, 0);
  for (double v : map.data) {
    const float f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    detail::put_u32_le(os, bits);
  }
  if (!os) throw Error(ErrorCode::io_error, path + ": write failed");
}

inline Plane load_salf(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::io_error, "cannot open " + path);
  char magic[4] = {0, 0, 0, 0};
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "SALF", 4) != 0) {
    throw Error(ErrorCode::parse_error, path + ": bad SALF magic");
  }
  const std::uint32_t w = detail::get_u32_le(is);
  const std::uint32_t h = detail::get_u32_le(is);
  const std::uint32_t reserved = detail::get_u32_le(is);
  if (!is || reserved != 0 || w == 0 || h == 0) {
    throw Error(ErrorCode::parse_error, path + ": bad SALF header");
  }
  Plane map(static_cast<int>(w), static_cast<int>(h));
  for (auto& v : map.data) {
    const std::uint32_t bits = detail::get_u32_le(is);
    if (!is) throw Error(ErrorCode::parse_error, path + ": truncated SALF payload");
    float f;
    std::memcpy(&f, &bits, 4);
    v = f;
  }
  return map;
}

}  // namespace owdet
