#include "bic/png_io.hpp"

#include <png.h>

#include <cstdio>

namespace bic {

void read_png_bytes(const std::string& path, std::vector<uint8_t>& out, int& w, int& h, int& c) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw UnreadableFile("read_png: " + path + ": " + image.message);
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  w = int(image.width);
  h = int(image.height);
  c = color ? 3 : 1;
  out.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.data(), 0, nullptr)) {
    png_image_free(&image);
    throw UnreadableFile("read_png: " + path + ": " + image.message);
  }
}

void write_png_bytes(const std::string& path, const uint8_t* data, int w, int h, int c) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = png_uint_32(w);
  image.height = png_uint_32(h);
  image.format = c == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.c_str(), 0, data, 0, nullptr))
    throw UnreadableFile("write_png: " + path + ": " + image.message);
}

}  // namespace bic
