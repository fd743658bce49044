#pragma once

#include <png.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "roadfix/errors.hpp"
#include "roadfix/raster.hpp"

namespace roadfix {

namespace detail {

inline std::string describe_png_format(png_uint_32 format) {
  std::string what;
  if (format & PNG_FORMAT_FLAG_COLORMAP) what += "palette ";
  if (format & PNG_FORMAT_FLAG_LINEAR) what += "16-bit ";
  if (format & PNG_FORMAT_FLAG_COLOR) what += "colour ";
  if (format & PNG_FORMAT_FLAG_ALPHA) what += "alpha ";
  return what.empty() ? "gray" : what;
}

class PngImage {
 public:
  PngImage() {
    image_.version = PNG_IMAGE_VERSION;
    image_.opaque = nullptr;
  }
  ~PngImage() { png_image_free(&image_); }
  PngImage(const PngImage&) = delete;
  PngImage& operator=(const PngImage&) = delete;
  png_image* get() { return &image_; }
  png_image* operator->() { return &image_; }

 private:
  png_image image_{};
};

}  // namespace detail

inline std::uint8_t to_byte(float v) { return static_cast<std::uint8_t>(std::floor(v * 255.0f + 0.5f)); }

/// Reads an 8-bit single-channel PNG; value = byte / 255.
inline RoadRaster load_raster(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw CodecError("raster file not found: " + path.string());
  detail::PngImage image;
  if (!png_image_begin_read_from_file(image.get(), path.c_str())) {
    throw CodecError("cannot decode " + path.string() + ": " + image->message);
  }
  if (image->format != PNG_FORMAT_GRAY) {
    throw CodecError("unsupported raster layout in " + path.string() + ": " +
                     detail::describe_png_format(image->format) +
                     "(expected 8-bit single-channel grayscale)");
  }
  const int width = static_cast<int>(image->width), height = static_cast<int>(image->height);
  std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(*image.get()));
  if (!png_image_finish_read(image.get(), nullptr, bytes.data(), 0, nullptr)) {
    throw CodecError("cannot decode " + path.string() + ": " + image->message);
  }
  std::vector<float> values(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) values[i] = static_cast<float>(bytes[i]) / 255.0f;
  return RoadRaster(height, width, std::move(values));
}

/// Writes an 8-bit single-channel PNG; byte = round(value * 255), half-up.
inline void save_raster(const RoadRaster& r, const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes(r.pixel_count());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = to_byte(r.values()[i]);
  detail::PngImage image;
  image->width = static_cast<png_uint_32>(r.width());
  image->height = static_cast<png_uint_32>(r.height());
  image->format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(image.get(), path.c_str(), 0, bytes.data(), 0, nullptr)) {
    throw CodecError("cannot write " + path.string() + ": " + image->message);
  }
}

}  // namespace roadfix
