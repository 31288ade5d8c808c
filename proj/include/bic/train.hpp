#pragma once
// Training and evaluation around the canonicalization model: rotation
// augmentation, Adam, the pair loss (circle term plus optional shift prior),
// metrics, saliency, translation-stability sweeps and embedding export.
// Everything is single-threaded and seed-deterministic.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "bic/angles.hpp"
#include "bic/beams.hpp"
#include "bic/core.hpp"
#include "bic/image.hpp"
#include "bic/net.hpp"
#include "bic/rbt.hpp"
#include "bic/tensor.hpp"
#include "bic/toeplitz.hpp"

namespace bic {

enum class Regime { Finite, Continuous };

inline Regime regime_from_string(const std::string& s) {
  if (s == "finite") return Regime::Finite;
  if (s == "continuous") return Regime::Continuous;
  throw DomainError("unknown rotation regime: " + s);
}

inline std::string to_string(Regime r) {
  return r == Regime::Finite ? "finite" : "continuous";
}

enum class BeamPreset { None, A, B, C };

inline BeamPreset beam_preset_from_string(const std::string& s) {
  if (s == "none") return BeamPreset::None;
  if (s == "a") return BeamPreset::A;
  if (s == "b") return BeamPreset::B;
  if (s == "c") return BeamPreset::C;
  throw DomainError("unknown beam preset: " + s);
}

inline std::string to_string(BeamPreset p) {
  switch (p) {
    case BeamPreset::None: return "none";
    case BeamPreset::A: return "a";
    case BeamPreset::B: return "b";
    default: return "c";
  }
}

struct TrainConfig {
  int batch_size = 128;
  int num_beams = 32;
  int beam_length = 64;
  int thickness = 1;
  int latent_dim = 128;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  LossMode loss_mode = LossMode::CircleOnly;
  Regime rotation_regime = Regime::Continuous;
  long long iterations = 500;
  std::uint64_t seed = 0;
  double split_fraction = 0.8;
  BeamPreset beam_preset = BeamPreset::None;  // a/b/c derive D from the image width
  double edge_factor = 0.5;

  void validate() const {
    if (batch_size < 1) throw DomainError("config: batch_size must be positive");
    if (iterations < 0) throw DomainError("config: iterations must be non-negative");
    if (!(split_fraction > 0.0) || !(split_fraction < 1.0))
      throw DomainError("config: split_fraction must lie in (0, 1)");
    if (!(learning_rate > 0.0)) throw DomainError("config: learning_rate must be positive");
    if (!(beta1 >= 0.0) || beta1 >= 1.0 || !(beta2 >= 0.0) || beta2 >= 1.0)
      throw DomainError("config: momentum terms must lie in [0, 1)");
  }
};

inline std::string to_text(const TrainConfig& c) {
  std::ostringstream os;
  os << "batch_size=" << c.batch_size << "\n"
     << "num_beams=" << c.num_beams << "\n"
     << "beam_length=" << c.beam_length << "\n"
     << "thickness=" << c.thickness << "\n"
     << "latent_dim=" << c.latent_dim << "\n"
     << "learning_rate=" << c.learning_rate << "\n"
     << "beta1=" << c.beta1 << "\n"
     << "beta2=" << c.beta2 << "\n"
     << "loss_mode=" << to_string(c.loss_mode) << "\n"
     << "rotation_regime=" << to_string(c.rotation_regime) << "\n"
     << "iterations=" << c.iterations << "\n"
     << "seed=" << c.seed << "\n"
     << "split_fraction=" << c.split_fraction << "\n"
     << "beam_preset=" << to_string(c.beam_preset) << "\n"
     << "edge_factor=" << c.edge_factor << "\n";
  return os.str();
}

// flat key=value lines; '#' starts a comment; unknown keys are errors
inline TrainConfig parse_train_config(const std::string& text) {
  TrainConfig c;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto notspace = [](unsigned char ch) { return !std::isspace(ch); };
    line.erase(line.begin(), std::find_if(line.begin(), line.end(), notspace));
    line.erase(std::find_if(line.rbegin(), line.rend(), notspace).base(), line.end());
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw DomainError("config line " + std::to_string(lineno) + ": expected key=value");
    auto trim = [&](std::string s) {
      s.erase(s.begin(), std::find_if(s.begin(), s.end(), notspace));
      s.erase(std::find_if(s.rbegin(), s.rend(), notspace).base(), s.end());
      return s;
    };
    std::string key = trim(line.substr(0, eq)), val = trim(line.substr(eq + 1));
    try {
      if (key == "batch_size") c.batch_size = std::stoi(val);
      else if (key == "num_beams") c.num_beams = std::stoi(val);
      else if (key == "beam_length") c.beam_length = std::stoi(val);
      else if (key == "thickness") c.thickness = std::stoi(val);
      else if (key == "latent_dim") c.latent_dim = std::stoi(val);
      else if (key == "learning_rate") c.learning_rate = std::stod(val);
      else if (key == "beta1") c.beta1 = std::stod(val);
      else if (key == "beta2") c.beta2 = std::stod(val);
      else if (key == "loss_mode") c.loss_mode = loss_mode_from_string(val);
      else if (key == "rotation_regime") c.rotation_regime = regime_from_string(val);
      else if (key == "iterations") c.iterations = std::stoll(val);
      else if (key == "seed") c.seed = std::stoull(val);
      else if (key == "split_fraction") c.split_fraction = std::stod(val);
      else if (key == "beam_preset") c.beam_preset = beam_preset_from_string(val);
      else if (key == "edge_factor") c.edge_factor = std::stod(val);
      else throw DomainError("unknown config key: " + key);
    } catch (const std::invalid_argument&) {
      throw DomainError("config key " + key + ": bad value '" + val + "'");
    } catch (const std::out_of_range&) {
      throw DomainError("config key " + key + ": value out of range");
    }
  }
  c.validate();
  return c;
}

// beam length for a W-wide image: presets bracket W/2 by W/8
inline int resolve_beam_length(const TrainConfig& c, int image_width) {
  switch (c.beam_preset) {
    case BeamPreset::None: return c.beam_length;
    case BeamPreset::A: return image_width / 2 - image_width / 8;
    case BeamPreset::B: return image_width / 2;
    default: return image_width / 2 + image_width / 8;
  }
}

// shared sampling geometry: pad for rotation containment, then the mask
struct Pipeline {
  BeamMask mask;
  int image_width = 0;
  int pad = 0;
  int padded = 0;
  int beam_length = 0;
  int channels = 1;
};

inline Pipeline make_pipeline(int image_width, int channels, const TrainConfig& c) {
  Pipeline p;
  p.image_width = image_width;
  p.pad = optimal_padding(image_width);
  p.padded = image_width + 2 * p.pad;
  p.beam_length = resolve_beam_length(c, image_width);
  p.channels = channels;
  p.mask = build_mask(p.padded, c.num_beams, p.beam_length, c.thickness);
  return p;
}

template <class S>
NetConfig<S> net_config(const TrainConfig& c, const Pipeline& p) {
  NetConfig<S> n;
  n.num_beams = c.num_beams;
  n.beam_length = p.beam_length;
  n.thickness = c.thickness;
  n.channels = p.channels;
  n.latent_dim = c.latent_dim;
  n.edge_factor = S(c.edge_factor);
  return n;
}

template <class S>
struct Augmented {
  Image<S> image;
  double theta = 0.0;
  int k = -1;  // subgroup index; -1 under the continuous regime
};

// draw a rotation: finite regime picks a subgroup element, continuous any angle
template <class S>
Augmented<S> augment(const Image<S>& img, Regime regime, int num_beams, Rng& rng) {
  Augmented<S> out;
  if (regime == Regime::Finite) {
    out.k = int(rng.below(uint64_t(num_beams)));
    out.theta = k_to_theta(out.k, num_beams);
  } else {
    out.theta = rng.uniform(0.0, 360.0);
  }
  out.image = rotate(img, out.theta);
  return out;
}

// nearest subgroup element, used as the prior target off the lattice
inline int nearest_shift(double theta_deg, int num_beams) {
  double delta = 360.0 / num_beams;
  long k = std::lround(normalize_deg(theta_deg) / delta);
  return int(k % num_beams);
}

struct AdamState {
  std::vector<Tensor<float>> m, v;
  long long t = 0;
};

inline void adam_step(ParamStore<float>& params, const std::vector<Tensor<float>>& grads,
                      AdamState& state, double lr, double beta1, double beta2) {
  if (grads.size() != params.values.size())
    throw ShapeMismatch("adam_step: gradient count differs from parameter count");
  if (state.m.empty()) {
    for (const auto& p : params.values) {
      state.m.push_back(Tensor<float>(p.dims));
      state.v.push_back(Tensor<float>(p.dims));
    }
  }
  state.t += 1;
  const double c1 = 1.0 - std::pow(beta1, double(state.t));
  const double c2 = 1.0 - std::pow(beta2, double(state.t));
  for (size_t p = 0; p < params.values.size(); ++p) {
    if (!params.values[p].same_shape(grads[p]))
      throw ShapeMismatch("adam_step: gradient shape differs for " + params.names[p]);
    auto& m = state.m[p].v;
    auto& v = state.v[p].v;
    const auto& g = grads[p].v;
    m = float(beta1) * m + float(1.0 - beta1) * g;
    v = float(beta2) * v + float(1.0 - beta2) * g * g;
    params.values[p].v -=
        float(lr) * (m / float(c1)) / ((v / float(c2)).sqrt() + 1e-8f);
  }
}

// deterministic shuffle split; sizes n*fraction / rest, disjoint by construction
struct Split {
  std::vector<int> train, test;
};

inline Split split_dataset(int n, double fraction, std::uint64_t seed) {
  if (n < 2) throw EmptyDataset("split: need at least 2 samples");
  Rng rng(stream_seed(seed, 0xda7a));
  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[size_t(i)] = i;
  shuffle_indices(order, rng);
  int cut = int(std::lround(fraction * n));
  cut = std::max(1, std::min(n - 1, cut));
  Split s;
  s.train.assign(order.begin(), order.begin() + cut);
  s.test.assign(order.begin() + cut, order.end());
  return s;
}

namespace detail {

template <class S>
void check_uniform_sizes(const std::vector<Image<S>>& ds) {
  if (ds.empty()) throw EmptyDataset("dataset is empty");
  for (const auto& im : ds) {
    if (im.width != im.height) throw NonSquareImage("dataset image is not square");
    if (im.width != ds.front().width || im.channels != ds.front().channels)
      throw MixedSizes("dataset images differ in size or channel count");
  }
}

}  // namespace detail

struct TrainOutcome {
  BicModel<float> model;
  std::vector<double> curve;  // loss per iteration
};

// one pass over the training split defines an epoch for the dynamic loss
inline int epoch_of(long long iteration, int batch, long long n) {
  return int(1 + ((iteration - 1) * batch) / std::max<long long>(1, n));
}

inline TrainOutcome train_model(BicModel<float> model, const TrainConfig& cfg,
                                const std::vector<Image<float>>& dataset,
                                const std::string& checkpoint_path = "") {
  cfg.validate();
  detail::check_uniform_sizes(dataset);
  Pipeline pipe = make_pipeline(dataset.front().width, dataset.front().channels, cfg);

  std::vector<Image<float>> padded;
  padded.reserve(dataset.size());
  for (const auto& im : dataset) padded.push_back(pad(im, pipe.pad));

  const int Nb = cfg.batch_size, B = cfg.num_beams, L = cfg.latent_dim;
  const bool with_prior = cfg.loss_mode != LossMode::CircleOnly;
  const long long n = (long long)padded.size();
  Rng rng(stream_seed(cfg.seed, 0x7241));

  TrainOutcome out;
  out.model = std::move(model);
  out.curve.reserve(size_t(cfg.iterations));
  AdamState adam;

  for (long long it = 1; it <= cfg.iterations; ++it) {
    std::vector<BeamTensor<float>> cur, ref;
    std::vector<double> thetas(static_cast<size_t>(Nb));
    std::vector<int> hot(static_cast<size_t>(Nb));
    cur.reserve(size_t(Nb));
    if (with_prior) ref.reserve(size_t(Nb));
    for (int s = 0; s < Nb; ++s) {
      const auto& base = padded[size_t(rng.below(uint64_t(n)))];
      auto aug = augment(base, cfg.rotation_regime, B, rng);
      thetas[size_t(s)] = aug.theta;
      hot[size_t(s)] = aug.k >= 0 ? aug.k : nearest_shift(aug.theta, B);
      cur.push_back(sample(aug.image, pipe.mask));
      if (with_prior) ref.push_back(sample(base, pipe.mask));
    }

    Tape<float> tape;
    auto pids = register_params(tape, out.model, true);
    int cur_in = tape.leaf(stack_beam_tensors(cur), false);
    auto fw = forward_graph(tape, out.model, pids, cur_in, Nb);

    Tensor<float> target({Nb, 2});
    for (int s = 0; s < Nb; ++s) {
      UnitVec u = unit(thetas[size_t(s)]);
      target.v[2 * s] = float(u.re);
      target.v[2 * s + 1] = float(u.im);
    }
    int diff = tape.sub(fw.z, tape.constant(std::move(target)));
    int circle = tape.scale(tape.sum_all(tape.mul(diff, diff)), 1.0f / float(Nb));

    int loss = circle;
    if (with_prior) {
      int ref_in = tape.leaf(stack_beam_tensors(ref), false);
      auto fw_ref = forward_graph(tape, out.model, pids, ref_in, Nb);
      int ref_rows = out.model.cfg.prior_on_context ? fw_ref.embeddings : fw_ref.encoder;
      int cur_rows = out.model.cfg.prior_on_context ? fw.embeddings : fw.encoder;
      int prior = -1;
      for (int s = 0; s < Nb; ++s) {
        int ce = tape.cross_entropy_logits(
            prior_logits_graph(tape, sample_rows(tape, ref_rows, s, B, L),
                               sample_rows(tape, cur_rows, s, B, L), B),
            hot[size_t(s)]);
        prior = s == 0 ? ce : tape.add(prior, ce);
      }
      prior = tape.scale(prior, 1.0f / float(Nb));
      if (cfg.loss_mode == LossMode::Sum) {
        loss = tape.add(circle, prior);
      } else {
        double w = 1.0 / double(epoch_of(it, Nb, n));
        loss = tape.add(tape.scale(circle, float(1.0 - w)), tape.scale(prior, float(w)));
      }
    }

    double value = double(tape.value(loss).v[0]);
    if (!std::isfinite(value))
      throw NonFiniteLoss("iteration " + std::to_string(it) + ": loss is not finite");
    tape.backward(loss);

    std::vector<Tensor<float>> grads;
    grads.reserve(pids.size());
    for (int id : pids) grads.push_back(tape.grad(id));
    adam_step(out.model.params, grads, adam, cfg.learning_rate, cfg.beta1, cfg.beta2);
    out.curve.push_back(value);
  }

  if (!checkpoint_path.empty())
    write_checkpoint(checkpoint_path, model_checkpoint(out.model, to_text(cfg)));
  return out;
}

inline TrainOutcome train(const TrainConfig& cfg, const std::vector<Image<float>>& dataset,
                          const std::string& checkpoint_path = "") {
  cfg.validate();
  detail::check_uniform_sizes(dataset);
  Pipeline pipe = make_pipeline(dataset.front().width, dataset.front().channels, cfg);
  auto model = init_model(net_config<float>(cfg, pipe), cfg.seed);
  return train_model(std::move(model), cfg, dataset, checkpoint_path);
}

struct EvalReport {
  double mean_loss = 0.0;
  double mean_angular_error_deg = 0.0;
  double mean_angular_error_from_loss_deg = 0.0;
  std::vector<long long> histogram = std::vector<long long>(18, 0);  // 10 degree bins
  long long count = 0;
};

// predict(padded rotated image, true angle) -> UnitVec; the true angle is
// only for oracle/test injection, real models must ignore it
template <class S, class Fn>
EvalReport evaluate_with(Fn&& predict, const std::vector<Image<S>>& dataset,
                         const TrainConfig& cfg, int draws_per_image, std::uint64_t seed) {
  detail::check_uniform_sizes(dataset);
  if (draws_per_image < 1) throw EmptyDataset("evaluate: need at least one draw per image");
  Pipeline pipe = make_pipeline(dataset.front().width, dataset.front().channels, cfg);
  Rng rng(stream_seed(seed, 0xe7a1));
  EvalReport rep;
  double sum_loss = 0, sum_err = 0, sum_err_from_loss = 0;
  for (const auto& im : dataset) {
    Image<S> padded = pad(im, pipe.pad);
    for (int d = 0; d < draws_per_image; ++d) {
      auto aug = augment(padded, cfg.rotation_regime, cfg.num_beams, rng);
      // renormalize in double so the loss and the angle describe the same point
      UnitVec z = predict(aug.image, aug.theta);
      z = normalized(z.re, z.im);
      double loss = circle_loss(aug.theta, z);
      double theta_hat = rad2deg(std::atan2(z.im, z.re));
      double err = std::abs(normalize_deg(theta_hat - aug.theta));
      if (err > 180.0) err = 360.0 - err;
      sum_loss += loss;
      sum_err += err;
      sum_err_from_loss += loss_to_degrees(std::min(4.0, std::max(0.0, loss)));
      rep.histogram[size_t(std::min(17, int(err / 10.0)))] += 1;
      rep.count += 1;
    }
  }
  rep.mean_loss = sum_loss / double(rep.count);
  rep.mean_angular_error_deg = sum_err / double(rep.count);
  rep.mean_angular_error_from_loss_deg = sum_err_from_loss / double(rep.count);
  return rep;
}

inline EvalReport evaluate(const BicModel<float>& model,
                           const std::vector<Image<float>>& dataset, const TrainConfig& cfg,
                           int draws_per_image, std::uint64_t seed) {
  detail::check_uniform_sizes(dataset);
  Pipeline pipe = make_pipeline(dataset.front().width, dataset.front().channels, cfg);
  return evaluate_with(
      [&](const Image<float>& rotated, double) {
        return forward(model, sample(rotated, pipe.mask)).z;
      },
      dataset, cfg, draws_per_image, seed);
}

// predicted angle in [0, 360)
template <class Fn>
double predict_angle_with(Fn&& predict, const Image<float>& img, const Pipeline& pipe) {
  Image<float> padded = pad(img, pipe.pad);
  UnitVec z = predict(padded);
  double theta = normalize_deg(rad2deg(std::atan2(z.im, z.re)));
  return theta < 0 ? theta + 360.0 : theta;
}

template <class Fn>
Image<float> canonicalize_with(Fn&& predict, const Image<float>& img,
                               const TrainConfig& cfg) {
  Pipeline pipe = make_pipeline(img.width, img.channels, cfg);
  double theta_hat = predict_angle_with(predict, img, pipe);
  return rotate(img, -theta_hat);
}

inline Image<float> canonicalize(const BicModel<float>& model, const Image<float>& img,
                                 const TrainConfig& cfg) {
  Pipeline pipe = make_pipeline(img.width, img.channels, cfg);
  return canonicalize_with(
      [&](const Image<float>& padded) { return forward(model, sample(padded, pipe.mask)).z; },
      img, cfg);
}

// |input gradient| of the circle loss against the canonical angle, max-scaled
// to [0,1]; identically zero off the sampled beam pixels
inline Image<float> saliency(const BicModel<float>& model, const Image<float>& img,
                             const TrainConfig& cfg, double target_theta_deg = 0.0) {
  Pipeline pipe = make_pipeline(img.width, img.channels, cfg);
  Image<float> padded = pad(img, pipe.pad);
  const int P = pipe.padded, C = padded.channels, B = cfg.num_beams;
  const int w = pipe.mask.width();
  const int D = pipe.beam_length;

  Tensor<float> pixels({P, P, C});
  for (int c = 0; c < C; ++c)
    for (int r = 0; r < P; ++r)
      for (int col = 0; col < P; ++col)
        pixels.v[(1LL * r * P + col) * C + c] = padded.ch[size_t(c)](r, col);

  Tape<float> tape;
  auto pids = register_params(tape, model, false);
  int img_leaf = tape.leaf(std::move(pixels), true);

  std::vector<long long> idx;
  idx.reserve(1LL * B * w * D * C);
  for (int b = 0; b < B; ++b)
    for (int j = 0; j < w; ++j)
      for (int d = 0; d < D; ++d) {
        auto rc = pipe.mask.coords[size_t(b)][size_t(d) * w + j];  // step-major
        for (int c = 0; c < C; ++c)
          idx.push_back((1LL * rc[0] * P + rc[1]) * C + c);
      }
  int input = tape.gather(img_leaf, std::make_shared<const std::vector<long long>>(idx),
                          {1, B, w, D, C});
  auto fw = forward_graph(tape, model, pids, input, 1);

  UnitVec t = unit(target_theta_deg);
  Tensor<float> target({1, 2});
  target.v[0] = float(t.re);
  target.v[1] = float(t.im);
  int diff = tape.sub(fw.z, tape.constant(std::move(target)));
  tape.backward(tape.sum_all(tape.mul(diff, diff)));

  Image<float> heat(P, P, 1);
  float peak = 0.0f;
  const auto& g = tape.grad(img_leaf).v;
  for (int r = 0; r < P; ++r)
    for (int col = 0; col < P; ++col) {
      float a = 0.0f;
      for (int c = 0; c < C; ++c) a += std::abs(g[(1LL * r * P + col) * C + c]);
      heat.ch[0](r, col) = a;
      peak = std::max(peak, a);
    }
  if (peak > 0.0f) heat.ch[0] /= peak;
  return heat;
}

struct StabilityRow {
  int dx = 0, dy = 0;
  double mean_deviation_deg = 0.0;
};

// mean |angle shift| against the unshifted prediction per integer offset
inline std::vector<StabilityRow> stability_sweep(const BicModel<float>& model,
                                                 const std::vector<Image<float>>& dataset,
                                                 const TrainConfig& cfg, int max_shift = 5) {
  detail::check_uniform_sizes(dataset);
  Pipeline pipe = make_pipeline(dataset.front().width, dataset.front().channels, cfg);
  std::vector<Image<float>> padded;
  std::vector<double> base;
  for (const auto& im : dataset) {
    padded.push_back(pad(im, pipe.pad));
    UnitVec z = forward(model, sample(padded.back(), pipe.mask)).z;
    base.push_back(normalize_deg(rad2deg(std::atan2(z.im, z.re))));
  }
  std::vector<StabilityRow> rows;
  for (int dx = -max_shift; dx <= max_shift; ++dx)
    for (int dy = -max_shift; dy <= max_shift; ++dy) {
      double sum = 0;
      for (size_t i = 0; i < padded.size(); ++i) {
        UnitVec z = forward(model, sample(translate(padded[i], dx, dy), pipe.mask)).z;
        double dev =
            std::abs(normalize_deg(rad2deg(std::atan2(z.im, z.re)) - base[i]));
        if (dev > 180.0) dev = 360.0 - dev;
        sum += dev;
      }
      rows.push_back({dx, dy, sum / double(padded.size())});
    }
  return rows;
}

// pre-context beam embeddings over a rotation orbit, |orbit|*|B| x L
inline Tensor<float> export_embeddings(const BicModel<float>& model,
                                       const Image<float>& img,
                                       const std::vector<double>& orbit,
                                       const TrainConfig& cfg) {
  if (orbit.empty()) throw EmptyDataset("export: empty orbit");
  Pipeline pipe = make_pipeline(img.width, img.channels, cfg);
  Image<float> padded = pad(img, pipe.pad);
  const int B = cfg.num_beams, L = cfg.latent_dim;
  Tensor<float> out({int(orbit.size()) * B, L});
  for (size_t a = 0; a < orbit.size(); ++a) {
    auto r = forward(model, sample(rotate(padded, orbit[a]), pipe.mask));
    out.mat().middleRows(int(a) * B, B) = r.encoder_embeddings.mat(B, L);
  }
  return out;
}

}  // namespace bic
