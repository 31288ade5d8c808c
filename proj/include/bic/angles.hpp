#pragma once
// SO(2) angle arithmetic, the finite subgroup C_|B|, the unit-circle
// regression loss with analytic gradients, and the prior/total losses.
// Degrees at the API boundary, radians internally.

#include <cmath>
#include <string>

#include "bic/core.hpp"
#include "bic/tensor.hpp"

namespace bic {

inline double normalize_deg(double d) {
  d = std::fmod(d, 360.0);
  if (d < 0) d += 360.0;
  return d;
}

inline double angle_add(double a_deg, double b_deg) { return normalize_deg(a_deg + b_deg); }

inline double k_to_theta(int k, int num_beams) {
  return normalize_deg(k * 360.0 / num_beams);
}

inline int theta_to_k(double theta_deg, int num_beams) {
  double t = normalize_deg(theta_deg) * num_beams / 360.0;
  long k = std::lround(t);
  if (std::abs(t - double(k)) > 1e-6)
    throw NotInSubgroup(std::to_string(theta_deg) + " deg is not a multiple of 360/" +
                        std::to_string(num_beams));
  return int(k % num_beams);
}

struct UnitVec {
  double re = 1.0, im = 0.0;
};

inline UnitVec unit(double theta_deg) {
  double t = deg2rad(theta_deg);
  return {std::cos(t), std::sin(t)};
}

inline UnitVec normalized(double re, double im) {
  double n = std::sqrt(re * re + im * im) + 1e-12;
  return {re / n, im / n};
}

// squared error between prediction and the target point on the unit circle;
// equals 2 - 2cos(delta) for unit-length predictions, so the range is [0,4]
inline double circle_loss(double theta_deg, const UnitVec& z) {
  double t = deg2rad(theta_deg);
  double dre = std::cos(t) - z.re, dim = std::sin(t) - z.im;
  return dre * dre + dim * dim;
}

struct CircleLossGrad {
  double dtheta;  // per radian
  double dre, dim;
};

inline CircleLossGrad circle_loss_grad(double theta_deg, const UnitVec& z) {
  double t = deg2rad(theta_deg);
  return {2.0 * (z.re * std::sin(t) - z.im * std::cos(t)),
          2.0 * (z.re - std::cos(t)),
          2.0 * (z.im - std::sin(t))};
}

// angular error whose perfect-magnitude prediction yields loss l
inline double loss_to_degrees(double l) {
  if (l < 0.0 || l > 4.0) throw DomainError("loss_to_degrees: loss outside [0,4]");
  double c = 1.0 - l / 2.0;
  c = c < -1.0 ? -1.0 : (c > 1.0 ? 1.0 : c);
  return rad2deg(std::acos(c));
}

// standard (nonnegative) cross entropy against a one-hot target
template <class S>
double prior_loss(const Vec<S>& p_true, const Vec<S>& p) {
  if (p_true.size() != p.size()) throw ShapeMismatch("prior_loss: length mismatch");
  if (std::abs(double(p.sum()) - 1.0) > 1e-6)
    throw DomainError("prior_loss: probabilities do not sum to 1");
  int hot = 0;
  p_true.maxCoeff(&hot);
  if (double(p[hot]) <= 0.0)
    throw DegenerateDistribution("prior_loss: zero mass at the true index");
  return -std::log(double(p[hot]));
}

enum class LossMode { CircleOnly, Sum, Dynamic };

inline LossMode loss_mode_from_string(const std::string& s) {
  if (s == "circle_only") return LossMode::CircleOnly;
  if (s == "sum") return LossMode::Sum;
  if (s == "dynamic") return LossMode::Dynamic;
  throw DomainError("unknown loss mode: " + s);
}

inline std::string to_string(LossMode m) {
  switch (m) {
    case LossMode::CircleOnly: return "circle_only";
    case LossMode::Sum: return "sum";
    default: return "dynamic";
  }
}

// dynamic mode anneals from the prior to the circle loss over epochs
inline double total_loss(double circle, double prior, LossMode mode, int epoch = 1) {
  switch (mode) {
    case LossMode::CircleOnly:
      return circle;
    case LossMode::Sum:
      return circle + prior;
    default: {
      if (epoch < 1) throw DomainError("total_loss: dynamic mode needs epoch >= 1");
      double w = 1.0 / double(epoch);
      return (1.0 - w) * circle + w * prior;
    }
  }
}

template <class S>
double total_loss(double theta_deg, const UnitVec& z, const Vec<S>& p_true, const Vec<S>& p,
                  LossMode mode, int epoch = 1) {
  double c = circle_loss(theta_deg, z);
  if (mode == LossMode::CircleOnly) return c;
  return total_loss(c, prior_loss(p_true, p), mode, epoch);
}

}  // namespace bic
