#pragma once

#include <png.h>

#include <cstring>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace sceneprobe {

class ImageIoError : public std::runtime_error {
 public:
  explicit ImageIoError(const std::string& msg) : std::runtime_error(msg) {}
};

struct RgbBuffer {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // height*width*3, row-major RGB
};

/// Reads any PNG into 8-bit RGB via libpng's simplified API.
inline RgbBuffer read_png(const std::string& path) {
  png_image im;
  std::memset(&im, 0, sizeof(im));
  im.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&im, path.c_str())) {
    throw ImageIoError("failed to open PNG " + path + ": " + im.message);
  }
  im.format = PNG_FORMAT_RGB;
  RgbBuffer out;
  out.width = static_cast<int>(im.width);
  out.height = static_cast<int>(im.height);
  out.pixels.resize(PNG_IMAGE_SIZE(im));
  if (!png_image_finish_read(&im, nullptr, out.pixels.data(),
                             static_cast<png_int_32>(im.width * 3), nullptr)) {
    throw ImageIoError("failed to decode PNG " + path + ": " + im.message);
  }
  return out;
}

inline void write_png(const std::string& path, int width, int height,
                      const std::vector<std::uint8_t>& pixels) {
  if (width <= 0 || height <= 0 ||
      pixels.size() != static_cast<std::size_t>(width) * height * 3) {
    throw ImageIoError("write_png: pixel buffer does not match dimensions");
  }
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  png_image im;
  std::memset(&im, 0, sizeof(im));
  im.version = PNG_IMAGE_VERSION;
  im.width = static_cast<png_uint_32>(width);
  im.height = static_cast<png_uint_32>(height);
  im.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&im, path.c_str(), 0, pixels.data(),
                               static_cast<png_int_32>(width * 3), nullptr)) {
    throw ImageIoError("failed to write PNG " + path + ": " + im.message);
  }
}

}  // namespace sceneprobe
