#pragma once
// Radial beam overlay: deterministic thick-Bresenham construction, pure
// gather sampling, circular shift, and coverage analytics with an exact
// counting oracle.
//
// Conventions (all other modules inherit them):
//   beam 0 points straight up, indices increase clockwise;
//   beam i direction angle = 90 - i * (360/|B|) degrees;
//   a beam is D steps long starting one pixel off the center, each step
//   widened by eps neighbors per side perpendicular to the dominant axis.

#include <array>
#include <cfenv>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "bic/core.hpp"
#include "bic/image.hpp"
#include "bic/tensor.hpp"

namespace bic {

inline int max_beams(int length, int thickness) {
  return (8 * length) / (2 * thickness + 1);
}

struct BeamMask {
  int grid_size = 0;
  int num_beams = 0;
  int length = 0;     // D
  int thickness = 0;  // eps
  // per beam: length x (2eps+1) coordinates, flattened step-major
  std::vector<std::vector<std::array<int, 2>>> coords;

  int width() const { return 2 * thickness + 1; }
};

namespace detail {

// round half to even, matching the convention the pinned counts were
// derived with (lround's half-away tie break would differ)
inline long round_even(double x) { return long(std::nearbyint(x)); }

inline double beam_dir_deg(int i, int num_beams) {
  return 90.0 - i * (360.0 / num_beams);
}

// integer Bresenham from (r0,c0) toward (r1,c1), continued with the same
// stepping rule past the endpoint; returns nsteps pixels after the start
inline std::vector<std::array<int, 2>> bresenham_steps(int r0, int c0, int r1, int c1,
                                                       int nsteps) {
  long dr = std::abs(long(r1) - r0), dc = std::abs(long(c1) - c0);
  int sr = r1 >= r0 ? 1 : -1;
  int sc = c1 >= c0 ? 1 : -1;
  std::vector<std::array<int, 2>> out;
  out.reserve(nsteps);
  int r = r0, c = c0;
  if (dc >= dr) {
    long err = 2 * dr - dc;
    while (int(out.size()) < nsteps) {
      c += sc;
      if (err > 0) {
        r += sr;
        err -= 2 * dc;
      }
      err += 2 * dr;
      out.push_back({r, c});
    }
  } else {
    long err = 2 * dc - dr;
    while (int(out.size()) < nsteps) {
      r += sr;
      if (err > 0) {
        c += sc;
        err -= 2 * dr;
      }
      err += 2 * dc;
      out.push_back({r, c});
    }
  }
  return out;
}

inline std::vector<std::array<int, 2>> build_beam(int grid, int D, int eps, double ang_deg) {
  const int cr = center_pixel(grid), cc = center_pixel(grid);
  const double a = deg2rad(ang_deg);
  const int er = cr + int(round_even(-double(D) * std::sin(a)));
  const int ec = cc + int(round_even(double(D) * std::cos(a)));
  auto line = bresenham_steps(cr, cc, er, ec, D);
  const bool widen_rows = std::abs(ec - cc) >= std::abs(er - cr);
  std::vector<std::array<int, 2>> coords;
  coords.reserve(size_t(D) * (2 * eps + 1));
  for (const auto& [r, c] : line)
    for (int o = -eps; o <= eps; ++o)
      coords.push_back(widen_rows ? std::array<int, 2>{r + o, c}
                                  : std::array<int, 2>{r, c + o});
  return coords;
}

}  // namespace detail

inline BeamMask build_mask(int grid_size, int num_beams, int length, int thickness) {
  if (num_beams < 1 || length < 1 || thickness < 0)
    throw DomainError("build_mask: need |B| >= 1, D >= 1, eps >= 0");
  if (num_beams > max_beams(length, thickness))
    throw BeamBoundExceeded("build_mask: " + std::to_string(num_beams) + " beams exceed 8D/(2eps+1) = " +
                            std::to_string(max_beams(length, thickness)));
  const int c = center_pixel(grid_size);
  if (c - (length + thickness) < 0 || c + length + thickness > grid_size - 1)
    throw MaskOutOfGrid("build_mask: center +- (D+eps) leaves the " +
                        std::to_string(grid_size) + " grid");
  BeamMask m;
  m.grid_size = grid_size;
  m.num_beams = num_beams;
  m.length = length;
  m.thickness = thickness;
  m.coords.reserve(num_beams);
  for (int i = 0; i < num_beams; ++i)
    m.coords.push_back(detail::build_beam(grid_size, length, thickness,
                                          detail::beam_dir_deg(i, num_beams)));
  return m;
}

// |B| x (2eps+1) x D x C gather of image values; no interpolation
template <class S>
struct BeamTensor {
  int num_beams = 0, width = 0, length = 0, channels = 0;
  Tensor<S> data;  // dims {B, 2eps+1, D, C}

  long long index(int b, int w, int d, int c = 0) const {
    return ((static_cast<long long>(b) * width + w) * length + d) * channels + c;
  }
  S& at(int b, int w, int d, int c = 0) { return data.v[index(b, w, d, c)]; }
  S at(int b, int w, int d, int c = 0) const { return data.v[index(b, w, d, c)]; }
};

template <class S>
BeamTensor<S> sample(const Image<S>& img, const BeamMask& mask) {
  if (img.width != mask.grid_size || img.height != mask.grid_size)
    throw SizeMismatch("sample: image " + std::to_string(img.width) + "x" +
                       std::to_string(img.height) + " vs mask grid " +
                       std::to_string(mask.grid_size));
  BeamTensor<S> t;
  t.num_beams = mask.num_beams;
  t.width = mask.width();
  t.length = mask.length;
  t.channels = img.channels;
  t.data = Tensor<S>({t.num_beams, t.width, t.length, t.channels});
  for (int b = 0; b < t.num_beams; ++b)
    for (int d = 0; d < t.length; ++d)
      for (int w = 0; w < t.width; ++w) {
        auto [r, c] = mask.coords[b][size_t(d) * t.width + w];
        for (int k = 0; k < t.channels; ++k) t.at(b, w, d, k) = img.ch[k](r, c);
      }
  return t;
}

// beam i of the output is beam (i+k) of the input: a CCW image rotation by
// k*(360/|B|) matches shift by k under the clockwise beam indexing above
template <class S>
BeamTensor<S> circular_shift(const BeamTensor<S>& t, int k) {
  const int B = t.num_beams;
  k = ((k % B) + B) % B;
  BeamTensor<S> out = t;
  const long long stride = t.data.size() / B;
  for (int i = 0; i < B; ++i) {
    int src = (i + k) % B;
    out.data.v.segment(i * stride, stride) = t.data.v.segment(src * stride, stride);
  }
  return out;
}

inline double coverage_approx(int num_beams, int length, int thickness) {
  if (num_beams < 8) throw DomainError("coverage_approx: closed form needs |B| >= 8");
  const double B = num_beams, D = length, w = 2.0 * thickness + 1.0;
  const double g = 8.0 * D / B - w;
  return B * (4.0 * D * D / B - g * g / (2.0 * std::tan(deg2rad(360.0 / B))));
}

inline double overlap_approx(int num_beams, int length, int thickness) {
  if (num_beams < 8) throw DomainError("overlap_approx: closed form needs |B| >= 8");
  const double B = num_beams, D = length, w = 2.0 * thickness + 1.0;
  const double g = 8.0 * D / B - w;
  return B * (w * D - 4.0 * D * D / B + g * g / (2.0 * std::tan(deg2rad(360.0 / B))));
}

struct CoverageCount {
  long long covered = 0;  // pixels hit at least once
  long long overlap = 0;  // sum over pixels of (multiplicity - 1)
  std::map<int, long long> multiplicity_histogram;
};

inline CoverageCount exact_coverage(const BeamMask& mask) {
  std::vector<int> grid(size_t(mask.grid_size) * mask.grid_size, 0);
  for (const auto& beam : mask.coords) {
    // a beam's coordinates are distinct by construction; count each once
    for (const auto& [r, c] : beam) grid[size_t(r) * mask.grid_size + c] += 1;
  }
  CoverageCount cc;
  for (int m : grid) {
    if (m == 0) continue;
    cc.covered += 1;
    cc.overlap += m - 1;
    cc.multiplicity_histogram[m] += 1;
  }
  return cc;
}

}  // namespace bic
