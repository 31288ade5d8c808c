#pragma once
// Procedural datasets with a well-defined canonical orientation, plus
// directory loading. Generation is deterministic per seed; pixel values
// stay in [0,1].

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bic/core.hpp"
#include "bic/image.hpp"
#include "bic/png_io.hpp"

namespace bic {

enum class SyntheticKind { LitSphere, OrientedGlyph, GradientDisk };

inline SyntheticKind synthetic_kind_from_string(const std::string& s) {
  if (s == "lit_sphere") return SyntheticKind::LitSphere;
  if (s == "oriented_glyph") return SyntheticKind::OrientedGlyph;
  if (s == "gradient_disk") return SyntheticKind::GradientDisk;
  throw DomainError("unknown dataset kind: " + s);
}

inline std::string to_string(SyntheticKind k) {
  switch (k) {
    case SyntheticKind::LitSphere: return "lit_sphere";
    case SyntheticKind::OrientedGlyph: return "oriented_glyph";
    default: return "gradient_disk";
  }
}

struct SyntheticSpec {
  SyntheticKind kind = SyntheticKind::LitSphere;
  int image_size = 64;
  int count = 1;
  double light_azimuth = 90.0;  // lit_sphere / gradient_disk: 90 = brightest up
  double noise_std = 0.0;
  std::uint64_t seed = 0;
};

namespace detail {

inline void add_noise(Image<float>& img, double noise_std, Rng& rng) {
  if (noise_std <= 0.0) return;
  for (auto& plane : img.ch)
    for (int r = 0; r < img.height; ++r)
      for (int c = 0; c < img.width; ++c)
        plane(r, c) = std::clamp(plane(r, c) + float(rng.normal() * noise_std), 0.0f, 1.0f);
}

}  // namespace detail

// Lambertian hemisphere on a dark ground: intensity = max(0, n.l) for the
// light at the configured azimuth, elevation fixed at 45 degrees. Rotating
// the image by t matches shifting the azimuth by t up to resampling.
inline std::vector<Image<float>> gen_lit_sphere(const SyntheticSpec& spec) {
  if (spec.image_size < 32) throw DomainError("gen_lit_sphere: image_size must be >= 32");
  const int n = spec.image_size;
  const double cx = (n - 1) / 2.0, el = deg2rad(45.0);
  const std::uint64_t stream = stream_seed(spec.seed, 0x5be7e);
  std::vector<Image<float>> out;
  out.reserve(size_t(spec.count));
  for (int s = 0; s < spec.count; ++s) {
    // per-sample stream: sample s is the same no matter the generation order
    Rng rng(stream_seed(stream, std::uint64_t(s)));
    double R = 0.38 * n * rng.uniform(0.9, 1.0);
    double amp = rng.uniform(0.7, 1.0);
    double az = deg2rad(spec.light_azimuth);
    double lx = std::cos(az) * std::cos(el), ly = std::sin(az) * std::cos(el),
           lz = std::sin(el);
    Image<float> img(n, n, 1);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c) {
        double x = (c - cx) / R, y = (cx - r) / R;
        double rho2 = x * x + y * y;
        if (rho2 > 1.0) continue;
        double nz = std::sqrt(1.0 - rho2);
        double lum = amp * std::max(0.0, x * lx + y * ly + nz * lz);
        img.ch[0](r, c) = float(std::min(1.0, lum));
      }
    detail::add_noise(img, spec.noise_std, rng);
    out.push_back(std::move(img));
  }
  return out;
}

// Flat disk with a linear brightness ramp toward the light azimuth.
inline std::vector<Image<float>> gen_gradient_disk(const SyntheticSpec& spec) {
  if (spec.image_size < 32) throw DomainError("gen_gradient_disk: image_size must be >= 32");
  const int n = spec.image_size;
  const double cx = (n - 1) / 2.0;
  const std::uint64_t stream = stream_seed(spec.seed, 0x9d15c);
  std::vector<Image<float>> out;
  out.reserve(size_t(spec.count));
  for (int s = 0; s < spec.count; ++s) {
    Rng rng(stream_seed(stream, std::uint64_t(s)));
    double R = 0.38 * n * rng.uniform(0.9, 1.0);
    double amp = rng.uniform(0.7, 1.0);
    double az = deg2rad(spec.light_azimuth);
    double ux = std::cos(az), uy = std::sin(az);
    Image<float> img(n, n, 1);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c) {
        double x = (c - cx) / R, y = (cx - r) / R;
        if (x * x + y * y > 1.0) continue;
        img.ch[0](r, c) = float(std::clamp(amp * (0.5 + 0.5 * (x * ux + y * uy)), 0.0, 1.0));
      }
    detail::add_noise(img, spec.noise_std, rng);
    out.push_back(std::move(img));
  }
  return out;
}

namespace detail {

// even-odd rule; vertices in math coords (x right, y up)
inline bool point_in_polygon(double x, double y,
                             const std::vector<std::pair<double, double>>& poly) {
  bool inside = false;
  for (size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    auto [xi, yi] = poly[i];
    auto [xj, yj] = poly[j];
    if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi)
      inside = !inside;
  }
  return inside;
}

}  // namespace detail

// Asymmetric arrow, apex up at canonical orientation; labels are exact by
// construction. The unequal barbs rule out any rotational self-symmetry.
inline std::vector<Image<float>> gen_oriented_glyph(const SyntheticSpec& spec) {
  if (spec.image_size < 32) throw DomainError("gen_oriented_glyph: image_size must be >= 32");
  const int n = spec.image_size;
  const double cx = (n - 1) / 2.0;
  const std::uint64_t stream = stream_seed(spec.seed, 0x91f9);
  const std::vector<std::pair<double, double>> shape = {
      {0.00, 0.55},  {0.30, 0.10},  {0.10, 0.10},  {0.10, -0.50},
      {-0.10, -0.50}, {-0.10, 0.02}, {-0.45, 0.02},
  };
  std::vector<Image<float>> out;
  out.reserve(size_t(spec.count));
  for (int s = 0; s < spec.count; ++s) {
    Rng rng(stream_seed(stream, std::uint64_t(s)));
    double scale = 0.5 * n * rng.uniform(0.85, 1.0);
    double amp = rng.uniform(0.7, 1.0);
    Image<float> img(n, n, 1);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c) {
        int hits = 0;
        for (double fr : {0.25, 0.75})
          for (double fc : {0.25, 0.75}) {
            double x = (c - 0.5 + fc - cx) / scale;
            double y = (cx - (r - 0.5 + fr)) / scale;
            if (detail::point_in_polygon(x, y, shape)) ++hits;
          }
        if (hits > 0) img.ch[0](r, c) = float(amp * hits / 4.0);
      }
    detail::add_noise(img, spec.noise_std, rng);
    out.push_back(std::move(img));
  }
  return out;
}

inline std::vector<Image<float>> gen_dataset(const SyntheticSpec& spec) {
  switch (spec.kind) {
    case SyntheticKind::LitSphere: return gen_lit_sphere(spec);
    case SyntheticKind::OrientedGlyph: return gen_oriented_glyph(spec);
    default: return gen_gradient_disk(spec);
  }
}

// every .png in the directory, lexicographic by filename
inline std::vector<Image<float>> load_image_dir(const std::string& path) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(path, ec)) throw UnreadableFile("not a directory: " + path);
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(path))
    if (entry.is_regular_file() && entry.path().extension() == ".png")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });
  if (files.empty()) throw EmptyDataset("no .png files in " + path);
  std::vector<Image<float>> out;
  out.reserve(files.size());
  for (const auto& f : files) {
    Image<float> img = read_png<float>(f.string());
    if (img.width != img.height) throw MixedSizes(f.string() + " is not square");
    if (!out.empty() &&
        (img.width != out.front().width || img.channels != out.front().channels))
      throw MixedSizes(f.string() + " differs in size or channels from the first image");
    out.push_back(std::move(img));
  }
  return out;
}

}  // namespace bic
