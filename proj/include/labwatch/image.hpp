#pragma once

#include <cstddef>
#include <cstdio>

#include <algorithm>
#include <csetjmp>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <string>
#include <string_view>
#include <vector>

#include <jpeglib.h>

#include "labwatch/detail/strings.hpp"
#include "labwatch/error.hpp"

namespace labwatch {

// Observations are normalized to this resolution before being sent.
inline constexpr int kTargetWidth = 640;
inline constexpr int kTargetHeight = 480;

struct DecodedImage {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> rgb;  // row-major, 3 bytes per pixel
};

namespace detail {

struct JpegErrorTrap {
  jpeg_error_mgr mgr;
  jmp_buf jump;
  char message[JMSG_LENGTH_MAX] = {};
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
  auto* trap = reinterpret_cast<JpegErrorTrap*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, trap->message);
  longjmp(trap->jump, 1);
}

// Warnings surface through the thrown Error on failure; keep stderr quiet.
inline void jpeg_swallow_message(j_common_ptr) {}

inline bool looks_like_jpeg(std::string_view bytes) {
  return bytes.size() >= 2 && static_cast<uint8_t>(bytes[0]) == 0xff &&
         static_cast<uint8_t>(bytes[1]) == 0xd8;
}

inline bool looks_like_ppm(std::string_view bytes) {
  return bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6';
}

inline DecodedImage decode_jpeg(std::string_view bytes) {
  // Non-trivial locals live above the setjmp point so the longjmp/throw path
  // unwinds them normally.
  DecodedImage img;
  jpeg_decompress_struct cinfo;
  JpegErrorTrap trap;
  cinfo.err = jpeg_std_error(&trap.mgr);
  trap.mgr.error_exit = jpeg_error_exit;
  trap.mgr.output_message = jpeg_swallow_message;
  if (setjmp(trap.jump)) {
    jpeg_destroy_decompress(&cinfo);
    fail(ErrorKind::Decode, std::string("jpeg decode failed: ") + trap.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, reinterpret_cast<const unsigned char*>(bytes.data()),
               static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);

  img.width = static_cast<int>(cinfo.output_width);
  img.height = static_cast<int>(cinfo.output_height);
  img.rgb.resize(static_cast<size_t>(img.width) * img.height * 3);
  size_t stride = static_cast<size_t>(img.width) * 3;
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = img.rgb.data() + cinfo.output_scanline * stride;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return img;
}

// Binary PPM (P6), maxval up to 255. Handy as a lossless fixture format.
inline DecodedImage decode_ppm(std::string_view bytes) {
  size_t pos = 2;  // past "P6"
  auto skip_ws_and_comments = [&]() {
    while (pos < bytes.size()) {
      char c = bytes[pos];
      if (c == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&]() -> long {
    skip_ws_and_comments();
    if (pos >= bytes.size() || bytes[pos] < '0' || bytes[pos] > '9')
      fail(ErrorKind::Decode, "ppm decode failed: expected integer in header");
    long value = 0;
    while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
      value = value * 10 + (bytes[pos] - '0');
      if (value > 1000000) fail(ErrorKind::Decode, "ppm decode failed: header value too large");
      ++pos;
    }
    return value;
  };

  long width = read_int();
  long height = read_int();
  long maxval = read_int();
  if (width <= 0 || height <= 0)
    fail(ErrorKind::Decode, "ppm decode failed: non-positive dimensions");
  if (maxval <= 0 || maxval > 255)
    fail(ErrorKind::Decode, "ppm decode failed: unsupported maxval " + std::to_string(maxval));
  if (pos >= bytes.size() || !is_space(bytes[pos]))
    fail(ErrorKind::Decode, "ppm decode failed: missing header terminator");
  ++pos;  // single whitespace after maxval

  size_t need = static_cast<size_t>(width) * static_cast<size_t>(height) * 3;
  if (bytes.size() - pos < need)
    fail(ErrorKind::Decode, "ppm decode failed: truncated pixel data");
  DecodedImage img;
  img.width = static_cast<int>(width);
  img.height = static_cast<int>(height);
  img.rgb.assign(bytes.begin() + pos, bytes.begin() + pos + need);
  if (maxval != 255) {
    for (auto& v : img.rgb)
      v = static_cast<uint8_t>((static_cast<int>(v) * 255 + maxval / 2) / maxval);
  }
  return img;
}

}  // namespace detail

inline DecodedImage decode_image(std::string_view bytes) {
  if (detail::looks_like_jpeg(bytes)) return detail::decode_jpeg(bytes);
  if (detail::looks_like_ppm(bytes)) return detail::decode_ppm(bytes);
  fail(ErrorKind::Decode, "unsupported or corrupt image (expected JPEG or binary PPM)");
}

// Area-weighted resample. Pure integer-ratio box averaging for downscales
// like 1280x960 -> 640x480; fractional coverage otherwise. Deterministic.
inline DecodedImage resize_rgb(const DecodedImage& src, int dst_width, int dst_height) {
  if (src.width <= 0 || src.height <= 0)
    fail(ErrorKind::Decode, "cannot resize an empty image");
  DecodedImage dst;
  dst.width = dst_width;
  dst.height = dst_height;
  dst.rgb.resize(static_cast<size_t>(dst_width) * dst_height * 3);

  double x_scale = static_cast<double>(src.width) / dst_width;
  double y_scale = static_cast<double>(src.height) / dst_height;

  for (int dy = 0; dy < dst_height; ++dy) {
    double sy0 = dy * y_scale;
    double sy1 = (dy + 1) * y_scale;
    int iy0 = static_cast<int>(sy0);
    int iy1 = std::min(static_cast<int>(std::ceil(sy1)), src.height);
    for (int dx = 0; dx < dst_width; ++dx) {
      double sx0 = dx * x_scale;
      double sx1 = (dx + 1) * x_scale;
      int ix0 = static_cast<int>(sx0);
      int ix1 = std::min(static_cast<int>(std::ceil(sx1)), src.width);
      double acc[3] = {0, 0, 0};
      double area = 0;
      for (int sy = iy0; sy < iy1; ++sy) {
        double hy = std::min(sy1, sy + 1.0) - std::max(sy0, static_cast<double>(sy));
        for (int sx = ix0; sx < ix1; ++sx) {
          double wx = std::min(sx1, sx + 1.0) - std::max(sx0, static_cast<double>(sx));
          double weight = hy * wx;
          const uint8_t* px =
              src.rgb.data() + (static_cast<size_t>(sy) * src.width + sx) * 3;
          acc[0] += weight * px[0];
          acc[1] += weight * px[1];
          acc[2] += weight * px[2];
          area += weight;
        }
      }
      uint8_t* out = dst.rgb.data() + (static_cast<size_t>(dy) * dst_width + dx) * 3;
      for (int c = 0; c < 3; ++c) {
        double v = acc[c] / area;
        long rounded = std::lround(v);
        out[c] = static_cast<uint8_t>(std::clamp(rounded, 0L, 255L));
      }
    }
  }
  return dst;
}

inline std::string encode_jpeg(const DecodedImage& img, int quality = 90) {
  std::string out;
  std::vector<uint8_t> row;
  jpeg_compress_struct cinfo;
  detail::JpegErrorTrap trap;
  cinfo.err = jpeg_std_error(&trap.mgr);
  trap.mgr.error_exit = detail::jpeg_error_exit;
  trap.mgr.output_message = detail::jpeg_swallow_message;
  unsigned char* buffer = nullptr;
  unsigned long size = 0;
  if (setjmp(trap.jump)) {
    jpeg_destroy_compress(&cinfo);
    free(buffer);
    fail(ErrorKind::Decode, std::string("jpeg encode failed: ") + trap.message);
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, &buffer, &size);
  cinfo.image_width = static_cast<JDIMENSION>(img.width);
  cinfo.image_height = static_cast<JDIMENSION>(img.height);
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  size_t stride = static_cast<size_t>(img.width) * 3;
  row.resize(stride);
  while (cinfo.next_scanline < cinfo.image_height) {
    std::copy_n(img.rgb.data() + cinfo.next_scanline * stride, stride, row.data());
    JSAMPROW rows[1] = {row.data()};
    jpeg_write_scanlines(&cinfo, rows, 1);
  }
  jpeg_finish_compress(&cinfo);
  out.assign(reinterpret_cast<char*>(buffer), size);
  jpeg_destroy_compress(&cinfo);
  free(buffer);
  return out;
}

// Normalize raw camera bytes into the canonical wire image: RGB JPEG at
// exactly 640x480. A JPEG that is already 640x480 passes through unchanged,
// which makes normalization idempotent byte-for-byte.
inline std::string preprocess_image(std::string_view raw) {
  bool was_jpeg = detail::looks_like_jpeg(raw);
  DecodedImage img = decode_image(raw);
  if (was_jpeg && img.width == kTargetWidth && img.height == kTargetHeight)
    return std::string(raw);
  if (img.width != kTargetWidth || img.height != kTargetHeight)
    img = resize_rgb(img, kTargetWidth, kTargetHeight);
  return encode_jpeg(img, 90);
}

inline std::string encode_ppm(const DecodedImage& img) {
  std::string out = "P6\n" + std::to_string(img.width) + " " +
                    std::to_string(img.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.rgb.data()), img.rgb.size());
  return out;
}

}  // namespace labwatch
