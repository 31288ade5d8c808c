#pragma once
// 8-bit PNG read/write; values map to [0,1] by /255.

#include <cstdint>
#include <string>
#include <vector>

#include "bic/image.hpp"

namespace bic {

// byte-level backends (gray c=1 or rgb c=3), throw UnreadableFile
void read_png_bytes(const std::string& path, std::vector<uint8_t>& out, int& w, int& h, int& c);
void write_png_bytes(const std::string& path, const uint8_t* data, int w, int h, int c);

template <class S = float>
Image<S> read_png(const std::string& path) {
  std::vector<uint8_t> buf;
  int w = 0, h = 0, c = 0;
  read_png_bytes(path, buf, w, h, c);
  Image<S> img(h, w, c);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < c; ++k)
        img.ch[k](y, x) = S(buf[(size_t(y) * w + x) * c + k]) / S(255);
  return img;
}

template <class S>
void write_png(const std::string& path, const Image<S>& img) {
  const int c = img.channels == 3 ? 3 : 1;
  std::vector<uint8_t> buf(size_t(img.width) * img.height * c);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int k = 0; k < c; ++k) {
        double v = double(img.channels == 3 ? img.ch[k](y, x) : img.ch[0](y, x));
        v = v < 0 ? 0 : (v > 1 ? 1 : v);
        buf[(size_t(y) * img.width + x) * c + k] = uint8_t(std::lround(v * 255.0));
      }
  write_png_bytes(path, buf.data(), img.width, img.height, c);
}

}  // namespace bic
