#pragma once
// Pairwise beam-embedding similarity, wrapped-diagonal extraction and the
// discrete prior over rotations. Diagonal k collects cells (i, i-k mod |B|):
// with similarity(reference, shifted-by-k) the all-ones diagonal is T_k,
// matching the circular_shift convention in beams.hpp.

#include <cmath>

#include "bic/angles.hpp"
#include "bic/core.hpp"
#include "bic/tensor.hpp"

namespace bic {

template <class S>
Mat<S> similarity(const Mat<S>& emb_a, const Mat<S>& emb_b) {
  if (emb_a.rows() != emb_b.rows() || emb_a.cols() != emb_b.cols())
    throw ShapeMismatch("similarity: embedding shapes differ");
  const int B = int(emb_a.rows());
  Mat<S> xi(B, B);
  for (int i = 0; i < B; ++i)
    for (int j = 0; j < B; ++j)
      xi(i, j) = S(1) / (S(1) + (emb_a.row(i) - emb_b.row(j)).norm());
  return xi;
}

struct ToeplitzExtractor {
  int num_beams;

  explicit ToeplitzExtractor(int b) : num_beams(b) {}

  // binary wrapped-diagonal mask T_k
  template <class S = double>
  Mat<S> mask(int k) const {
    Mat<S> t = Mat<S>::Zero(num_beams, num_beams);
    for (int i = 0; i < num_beams; ++i) t(i, ((i - k) % num_beams + num_beams) % num_beams) = S(1);
    return t;
  }

  double angle_of(int k) const { return k_to_theta(k, num_beams); }
};

template <class S>
Vec<S> toeplitz_logits(const Mat<S>& xi, const ToeplitzExtractor& t) {
  if (xi.rows() != t.num_beams || xi.cols() != t.num_beams)
    throw ShapeMismatch("toeplitz_logits: similarity matrix is not |B| x |B|");
  const int B = t.num_beams;
  Vec<S> logits = Vec<S>::Zero(B);
  for (int k = 0; k < B; ++k)
    for (int i = 0; i < B; ++i) logits[k] += xi(i, ((i - k) % B + B) % B);
  return logits;
}

template <class S>
Vec<S> prior_distribution(const Vec<S>& logits) {
  Vec<S> p = logits;
  S m = p.maxCoeff();
  p = (p.array() - m).exp();
  return p / p.sum();
}

}  // namespace bic
