#pragma once
// Square-image container and the geometric primitives: isotropic padding
// (with the adaptive corner-color mode), center rotation by inverse bilinear
// mapping, and integer translation.

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "bic/core.hpp"
#include "bic/tensor.hpp"

namespace bic {

template <class S>
struct Image {
  int width = 0, height = 0, channels = 0;
  int pad = 0;  // isotropic border already applied
  std::vector<Mat<S>> ch;  // each height x width

  Image() = default;
  Image(int h, int w, int c) : width(w), height(h), channels(c) {
    ch.assign(c, Mat<S>::Zero(h, w));
  }

  static Image constant(int h, int w, int c, S value) {
    Image img(h, w, c);
    for (auto& m : img.ch) m.setConstant(value);
    return img;
  }

  S& at(int r, int c, int k = 0) { return ch[k](r, c); }
  S at(int r, int c, int k = 0) const { return ch[k](r, c); }

  bool square() const { return width == height; }

  template <class T>
  Image<T> cast() const {
    Image<T> out(height, width, channels);
    out.pad = pad;
    for (int k = 0; k < channels; ++k) out.ch[k] = ch[k].template cast<T>();
    return out;
  }
};

enum class PadMode { Zero, CornerColor };
enum class Interp { Bilinear, Nearest };

// Lemma-style bound: rotating any in-image point about the center stays
// inside a border of ceil(W(sqrt(2)-1)/2).
inline int optimal_padding(int width) {
  if (width <= 0) return 0;
  return int(std::ceil(width * (std::sqrt(2.0) - 1.0) / 2.0));
}

template <class S>
Image<S> pad(const Image<S>& img, int delta, PadMode mode = PadMode::Zero) {
  Image<S> out(img.height + 2 * delta, img.width + 2 * delta, img.channels);
  out.pad = img.pad + delta;
  for (int k = 0; k < img.channels; ++k) {
    S fill = (mode == PadMode::CornerColor && img.height > 0 && img.width > 0)
                 ? img.ch[k](0, 0)
                 : S(0);
    out.ch[k].setConstant(fill);
    out.ch[k].block(delta, delta, img.height, img.width) = img.ch[k];
  }
  return out;
}

template <class S>
Image<S> to_gray(const Image<S>& img) {
  if (img.channels == 1) return img;
  Image<S> out(img.height, img.width, 1);
  out.pad = img.pad;
  for (int k = 0; k < img.channels; ++k) out.ch[0] += img.ch[k];
  out.ch[0] /= S(img.channels);
  return out;
}

// Center rotation, positive angle counter-clockwise. Inverse (pull) mapping
// about the exact geometric center (P-1)/2; out-of-grid source reads are 0.
template <class S>
Image<S> rotate(const Image<S>& img, double theta_deg, Interp interp = Interp::Bilinear) {
  if (!img.square()) throw NonSquareImage("rotate: image is " + std::to_string(img.width) + "x" + std::to_string(img.height));
  const int n = img.width;
  Image<S> out(n, n, img.channels);
  out.pad = img.pad;
  if (n == 0) return out;
  const double th = deg2rad(theta_deg);
  const double ct = std::cos(th), st = std::sin(th);
  const double c = (n - 1) / 2.0;
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      // math coords: u right, v up
      double u = x - c, v = c - y;
      double us = u * ct + v * st;
      double vs = -u * st + v * ct;
      double sx = c + us, sy = c - vs;
      if (interp == Interp::Nearest) {
        int xi = int(std::lround(sx)), yi = int(std::lround(sy));
        if (xi < 0 || xi >= n || yi < 0 || yi >= n) continue;
        for (int k = 0; k < img.channels; ++k) out.ch[k](y, x) = img.ch[k](yi, xi);
      } else {
        int x0 = int(std::floor(sx)), y0 = int(std::floor(sy));
        double wx = sx - x0, wy = sy - y0;
        for (int k = 0; k < img.channels; ++k) {
          double acc = 0.0;
          auto tap = [&](int yy, int xx, double w) {
            if (w != 0.0 && xx >= 0 && xx < n && yy >= 0 && yy < n)
              acc += w * double(img.ch[k](yy, xx));
          };
          tap(y0, x0, (1 - wx) * (1 - wy));
          tap(y0, x0 + 1, wx * (1 - wy));
          tap(y0 + 1, x0, (1 - wx) * wy);
          tap(y0 + 1, x0 + 1, wx * wy);
          out.ch[k](y, x) = S(acc);
        }
      }
    }
  }
  return out;
}

// Integer shift; dx moves content right, dy moves it down. Zero fill.
template <class S>
Image<S> translate(const Image<S>& img, int dx, int dy) {
  Image<S> out(img.height, img.width, img.channels);
  out.pad = img.pad;
  for (int y = 0; y < img.height; ++y) {
    int ys = y - dy;
    if (ys < 0 || ys >= img.height) continue;
    for (int x = 0; x < img.width; ++x) {
      int xs = x - dx;
      if (xs < 0 || xs >= img.width) continue;
      for (int k = 0; k < img.channels; ++k) out.ch[k](y, x) = img.ch[k](ys, xs);
    }
  }
  return out;
}

template <class S>
double total_mass(const Image<S>& img) {
  double m = 0.0;
  for (const auto& c : img.ch) m += double(c.template cast<double>().sum());
  return m;
}

template <class S>
double mean_abs_diff(const Image<S>& a, const Image<S>& b) {
  if (a.width != b.width || a.height != b.height || a.channels != b.channels)
    throw SizeMismatch("mean_abs_diff: shapes differ");
  double acc = 0.0;
  long long n = 0;
  for (int k = 0; k < a.channels; ++k) {
    acc += (a.ch[k].template cast<double>() - b.ch[k].template cast<double>()).cwiseAbs().sum();
    n += (long long)(a.width) * a.height;
  }
  return n ? acc / double(n) : 0.0;
}

}  // namespace bic
