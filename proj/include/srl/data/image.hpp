#pragma once

#include <png.h>

#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "srl/core/array.hpp"
#include "srl/core/error.hpp"
#include "srl/core/serialize.hpp"

namespace srl {

/// 8-bit interleaved RGB image.
struct ImageU8 {
  int width = 0;
  int height = 0;
  std::vector<unsigned char> rgb;  // 3 * width * height

  unsigned char* pixel(int y, int x) {
    return rgb.data() + 3 * (static_cast<std::size_t>(y) * width + x);
  }
  const unsigned char* pixel(int y, int x) const {
    return rgb.data() + 3 * (static_cast<std::size_t>(y) * width + x);
  }
};

namespace detail {

struct PngReadCtx {
  png_structp png = nullptr;
  png_infop info = nullptr;
  std::FILE* fp = nullptr;
  ~PngReadCtx() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    if (fp) std::fclose(fp);
  }
};

struct PngWriteCtx {
  png_structp png = nullptr;
  png_infop info = nullptr;
  std::FILE* fp = nullptr;
  ~PngWriteCtx() {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    if (fp) std::fclose(fp);
  }
};

}  // namespace detail

/// Decodes a PNG to 8-bit RGB. Grayscale and palette images are expanded,
/// 16-bit depth is reduced, alpha is stripped.
inline ImageU8 load_png(const std::string& path) {
  detail::PngReadCtx ctx;
  ctx.fp = std::fopen(path.c_str(), "rb");
  if (!ctx.fp) throw IoError("cannot open image: " + path);
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, ctx.fp) != 8 || png_sig_cmp(sig, 0, 8))
    throw IoError("not a PNG file: " + path);
  ctx.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  ctx.info = png_create_info_struct(ctx.png);
  if (!ctx.png || !ctx.info) throw IoError("libpng init failed for " + path);
  if (setjmp(png_jmpbuf(ctx.png)))
    throw IoError("truncated or corrupt PNG: " + path);
  png_init_io(ctx.png, ctx.fp);
  png_set_sig_bytes(ctx.png, 8);
  png_read_info(ctx.png, ctx.info);

  png_set_expand(ctx.png);                 // palette/low-depth gray -> 8 bit
  png_set_strip_16(ctx.png);
  png_set_strip_alpha(ctx.png);
  png_set_gray_to_rgb(ctx.png);
  png_read_update_info(ctx.png, ctx.info);

  ImageU8 img;
  img.width = static_cast<int>(png_get_image_width(ctx.png, ctx.info));
  img.height = static_cast<int>(png_get_image_height(ctx.png, ctx.info));
  if (png_get_channels(ctx.png, ctx.info) != 3)
    throw IoError("unsupported PNG channel layout: " + path);
  img.rgb.resize(3 * static_cast<std::size_t>(img.width) * img.height);
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
  for (int y = 0; y < img.height; ++y)
    rows[static_cast<std::size_t>(y)] = img.rgb.data() + 3 * static_cast<std::size_t>(y) * img.width;
  png_read_image(ctx.png, rows.data());
  png_read_end(ctx.png, nullptr);
  return img;
}

inline void save_png(const std::string& path, const ImageU8& img) {
  detail::PngWriteCtx ctx;
  ctx.fp = std::fopen(path.c_str(), "wb");
  if (!ctx.fp) throw IoError("cannot open for writing: " + path);
  ctx.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  ctx.info = png_create_info_struct(ctx.png);
  if (!ctx.png || !ctx.info) throw IoError("libpng init failed for " + path);
  if (setjmp(png_jmpbuf(ctx.png))) throw IoError("PNG write failed: " + path);
  png_init_io(ctx.png, ctx.fp);
  png_set_IHDR(ctx.png, ctx.info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(ctx.png, ctx.info);
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
  for (int y = 0; y < img.height; ++y)
    rows[static_cast<std::size_t>(y)] =
        const_cast<png_bytep>(img.rgb.data() + 3 * static_cast<std::size_t>(y) * img.width);
  png_write_image(ctx.png, rows.data());
  png_write_end(ctx.png, nullptr);
}

/// Binary PPM (P6), 8 bits per channel. Deterministic byte-for-byte.
inline void save_ppm(const std::string& path, const ImageU8& img) {
  std::FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw IoError("cannot open for writing: " + path);
  std::string header = "P6\n" + std::to_string(img.width) + " " +
                       std::to_string(img.height) + "\n255\n";
  bool ok = std::fwrite(header.data(), 1, header.size(), fp) == header.size();
  ok = ok && std::fwrite(img.rgb.data(), 1, img.rgb.size(), fp) == img.rgb.size();
  std::fclose(fp);
  if (!ok) throw IoError("PPM write failed: " + path);
}

template <typename T>
Array<T> image_to_array(const ImageU8& img) {
  Array<T> out = Array<T>::zeros({3, img.height, img.width});
  const std::size_t plane = static_cast<std::size_t>(img.height) * img.width;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const unsigned char* p = img.pixel(y, x);
      const std::size_t i = static_cast<std::size_t>(y) * img.width + x;
      out.data()[0 * plane + i] = static_cast<T>(p[0]) / T(255);
      out.data()[1 * plane + i] = static_cast<T>(p[1]) / T(255);
      out.data()[2 * plane + i] = static_cast<T>(p[2]) / T(255);
    }
  return out;
}

template <typename T>
ImageU8 array_to_image(const Array<T>& a) {
  if (a.rank() != 3 || a.dim(0) != 3)
    throw ShapeError("array_to_image: expected 3 x H x W, got " +
                     shape_str(a.shape()));
  ImageU8 img;
  img.height = a.dim(1);
  img.width = a.dim(2);
  img.rgb.resize(3 * static_cast<std::size_t>(img.width) * img.height);
  const std::size_t plane = static_cast<std::size_t>(img.height) * img.width;
  for (std::size_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c) {
      double v = static_cast<double>(a.data()[static_cast<std::size_t>(c) * plane + i]);
      v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
      img.rgb[3 * i + static_cast<std::size_t>(c)] =
          static_cast<unsigned char>(v * 255.0 + 0.5);
    }
  return img;
}

/// Writes an image array to the raw container format (magic "SRLA").
template <typename T>
void save_array_container(const std::string& path, const Array<T>& a,
                          const std::string& name = "image") {
  ContainerWriter w("SRLA");
  w.add_array(name, a.shape(), a.values());
  w.write(path);
}

/// Loads 3 x H x W pixel values in [0, 1]. Supports PNG and the raw array
/// container (".srla").
template <typename T>
Array<T> load_image(const std::string& path) {
  const bool is_srla =
      path.size() > 5 && path.compare(path.size() - 5, 5, ".srla") == 0;
  if (is_srla) {
    ContainerReader r = ContainerReader::read(path, "SRLA");
    if (r.names().empty()) throw IoError(path + ": empty array container");
    const ContainerEntry& e = r.get(r.names().front());
    if (e.shape.size() != 3 || e.shape[0] != 3)
      throw IoError(path + ": container entry is not a 3 x H x W image");
    Array<T> out = Array<T>::zeros(e.shape);
    if (e.dtype == Dtype::F32) {
      std::vector<float> tmp(e.count());
      std::memcpy(tmp.data(), e.bytes.data(), e.bytes.size());
      for (std::size_t i = 0; i < tmp.size(); ++i)
        out.data()[i] = static_cast<T>(tmp[i]);
    } else if (e.dtype == Dtype::F64) {
      std::vector<double> tmp(e.count());
      std::memcpy(tmp.data(), e.bytes.data(), e.bytes.size());
      for (std::size_t i = 0; i < tmp.size(); ++i)
        out.data()[i] = static_cast<T>(tmp[i]);
    } else {
      throw IoError(path + ": unsupported container dtype");
    }
    return out;
  }
  return image_to_array<T>(load_png(path));
}

}  // namespace srl
