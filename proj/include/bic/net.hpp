#pragma once
// The canonicalization network: per-beam conv encoder collapsing a
// (2e+1) x D x C beam to an L-vector, three context layers on a directed
// wheel graph (beam i feeds beam i+1; every beam feeds the hub, which is
// held back and re-added afterwards), a 3-layer gated recurrent decoder
// over beams in index order, and a 2-unit head normalized to the circle.
// Convolutions are valid (no padding) and lowered to gather + matmul.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "bic/angles.hpp"
#include "bic/autodiff.hpp"
#include "bic/beams.hpp"
#include "bic/core.hpp"
#include "bic/rbt.hpp"
#include "bic/tensor.hpp"

namespace bic {

struct ConvStage {
  int kernel = 1;
  int stride = 1;
  int out_channels = 1;
};

namespace detail {

inline int conv_out_len(int len, int kernel, int stride) {
  return (len - kernel) / stride + 1;
}

// Channel progressions ramp L/4 -> L/2 -> L; the stack must land on length 1.
inline std::vector<ConvStage> spatial_table(int beam_length, int L) {
  auto mk = [&](std::vector<int> k, std::vector<int> s, std::vector<int> div) {
    std::vector<ConvStage> p(k.size());
    for (size_t i = 0; i < k.size(); ++i) p[i] = {k[i], s[i], L / div[i]};
    return p;
  };
  switch (beam_length) {
    case 14:
      return mk({4, 4, 4, 3}, {1, 1, 1, 1}, {4, 2, 2, 1});
    case 16:
      return mk({4, 4, 4, 4, 2}, {1, 1, 1, 1, 1}, {4, 2, 2, 1, 1});
    case 32:
      return mk({5, 4, 4, 2}, {2, 2, 1, 1}, {4, 2, 2, 1});
    case 64:
      return mk({5, 4, 4, 4, 4, 3, 2}, {2, 2, 1, 1, 1, 1, 1}, {4, 4, 2, 2, 2, 1, 1});
    case 125:
      return mk({4, 3, 4, 4, 4, 4, 3, 2}, {2, 2, 2, 1, 1, 1, 1, 1},
                {4, 4, 4, 2, 2, 2, 1, 1});
    default:
      return {};
  }
}

}  // namespace detail

// Conv stack over the post-fusion sequence (length beam_length - 2). Known
// depths use fixed stage tables; anything else gets a planned stack that
// halves with stride-2 kernels, then shrinks by valid stride-1 kernels.
inline std::vector<ConvStage> spatial_plan(int beam_length, int latent_dim) {
  if (beam_length < 3) throw DomainError("spatial_plan: beam length must be at least 3");
  if (latent_dim % 8 != 0 || latent_dim <= 0)
    throw DomainError("spatial_plan: latent dim must be a positive multiple of 8");
  std::vector<ConvStage> plan = detail::spatial_table(beam_length, latent_dim);
  if (plan.empty()) {
    int len = beam_length - 2;
    std::vector<std::pair<int, int>> ks;
    while (len > 14) {
      ks.push_back({4, 2});
      len = detail::conv_out_len(len, 4, 2);
    }
    while (len > 4) {
      ks.push_back({4, 1});
      len -= 3;
    }
    ks.push_back({len, 1});
    const int n = int(ks.size());
    for (int i = 0; i < n; ++i) {
      double ratio = double(i + 1) / n;
      int ch = ratio <= 1.0 / 3 ? latent_dim / 4 : ratio <= 2.0 / 3 ? latent_dim / 2
                                                                    : latent_dim;
      plan.push_back({ks[i].first, ks[i].second, ch});
    }
  }
  int len = beam_length - 2;
  for (const auto& st : plan) {
    if (len < st.kernel) throw DomainError("spatial_plan: kernel exceeds sequence length");
    len = detail::conv_out_len(len, st.kernel, st.stride);
  }
  if (len != 1) throw DomainError("spatial_plan: stack does not reduce to length 1");
  if (plan.back().out_channels != latent_dim)
    throw DomainError("spatial_plan: final stage must emit the latent width");
  return plan;
}

template <class S>
struct NetConfig {
  int num_beams = 32;
  int beam_length = 64;
  int thickness = 1;
  int channels = 1;
  int latent_dim = 128;
  S edge_factor = S(0.5);
  bool add_center = true;       // re-add hub state to beam rows after context layers
  bool prior_on_context = true; // similarity over context embeddings vs raw encoder output

  int width() const { return 2 * thickness + 1; }

  void validate() const {
    if (num_beams < 1) throw DomainError("net config: num_beams must be positive");
    if (beam_length < 3) throw DomainError("net config: beam_length must be at least 3");
    if (thickness < 0) throw DomainError("net config: thickness must be non-negative");
    if (channels < 1) throw DomainError("net config: channels must be positive");
    if (latent_dim <= 0 || latent_dim % 8 != 0)
      throw DomainError("net config: latent_dim must be a positive multiple of 8");
    if (!(edge_factor > S(0)) || edge_factor > S(1))
      throw DomainError("net config: edge_factor must lie in (0, 1]");
  }
};

// Directed wheel: beam i -> beam (i+1) mod B and beam i -> hub (row B is the
// hub and emits nothing). Beam row sums are exactly 2.
template <class S>
Mat<S> wheel_adjacency(int num_beams) {
  const int B = num_beams;
  Mat<S> A = Mat<S>::Zero(B + 1, B + 1);
  for (int i = 0; i < B; ++i) {
    A(i, (i + 1) % B) = S(1);
    A(i, B) = S(1);
  }
  return A;
}

template <class S>
struct BicModel {
  NetConfig<S> cfg;
  std::vector<ConvStage> spatial;
  Mat<S> adjacency;  // (B+1) x (B+1)
  ParamStore<S> params;
};

// He-style fan-in init, biases exactly zero, one decorrelated stream per
// parameter so the draw order never depends on construction details.
template <class S>
BicModel<S> init_model(const NetConfig<S>& cfg, std::uint64_t seed) {
  cfg.validate();
  BicModel<S> m;
  m.cfg = cfg;
  m.spatial = spatial_plan(cfg.beam_length, cfg.latent_dim);
  m.adjacency = wheel_adjacency<S>(cfg.num_beams);

  const int L = cfg.latent_dim;
  auto weight = [&](std::string name, int rows, int cols) {
    m.params.add(std::move(name), Tensor<S>({rows, cols}));
  };
  auto bias = [&](std::string name, int n) { m.params.add(std::move(name), Tensor<S>({n})); };

  weight("prox.w", cfg.width() * 3 * cfg.channels, L / 8);
  bias("prox.b", L / 8);
  int ch_in = L / 8;
  for (size_t i = 0; i < m.spatial.size(); ++i) {
    weight("spatial" + std::to_string(i) + ".w", m.spatial[i].kernel * ch_in,
           m.spatial[i].out_channels);
    bias("spatial" + std::to_string(i) + ".b", m.spatial[i].out_channels);
    ch_in = m.spatial[i].out_channels;
  }
  for (int l = 0; l < 3; ++l) weight("ctx" + std::to_string(l) + ".w", L, L);
  for (int l = 0; l < 3; ++l) {
    weight("dec" + std::to_string(l) + ".wx", L, 4 * L);
    weight("dec" + std::to_string(l) + ".wh", L, 4 * L);
    bias("dec" + std::to_string(l) + ".b", 4 * L);
  }
  weight("head0.w", L, L / 2);
  bias("head0.b", L / 2);
  weight("head1.w", L / 2, L / 4);
  bias("head1.b", L / 4);
  weight("head2.w", L / 4, 2);
  bias("head2.b", 2);

  for (size_t p = 0; p < m.params.values.size(); ++p) {
    auto& t = m.params.values[p];
    if (t.dims.size() != 2) continue;  // biases stay zero
    Rng rng(stream_seed(seed, p));
    S sd = S(std::sqrt(2.0 / double(t.dims[0])));
    for (long long i = 0; i < t.size(); ++i) t.v[i] = S(rng.normal()) * sd;
  }
  return m;
}

// params as tape leaves, aligned with model.params order
template <class S>
std::vector<int> register_params(Tape<S>& tape, const BicModel<S>& m,
                                 bool requires_grad = true) {
  std::vector<int> ids;
  ids.reserve(m.params.values.size());
  for (const auto& t : m.params.values) ids.push_back(tape.leaf(t, requires_grad));
  return ids;
}

template <class S>
struct ForwardNodes {
  int input = -1;        // {N, B, 2e+1, D, C} leaf
  int encoder = -1;      // {N*B, L} beam embeddings before context
  int context_pre = -1;  // {N*B, L} after context layers, hub not yet added
  int embeddings = -1;   // {N*B, L} decoder input (hub added back when enabled)
  int z = -1;            // {N, 2} unit rows (re, im)
  int batch = 0;
};

namespace detail {

using IdxPtr = std::shared_ptr<const std::vector<long long>>;

inline IdxPtr make_idx(std::vector<long long> v) {
  return std::make_shared<const std::vector<long long>>(std::move(v));
}

// patches of the {N,B,w,D,C} input for the width x 3 fusion conv
inline IdxPtr fusion_patches(int N, int B, int w, int D, int C) {
  const int P = D - 2;
  std::vector<long long> idx;
  idx.reserve(1LL * N * B * P * w * 3 * C);
  for (int n = 0; n < N; ++n)
    for (int b = 0; b < B; ++b)
      for (int p = 0; p < P; ++p)
        for (int dw = 0; dw < w; ++dw)
          for (int dd = 0; dd < 3; ++dd)
            for (int c = 0; c < C; ++c)
              idx.push_back((((1LL * n * B + b) * w + dw) * D + (p + dd)) * C + c);
  return make_idx(std::move(idx));
}

// patches of a {G*len_in, ch} sequence stack for a 1-d valid conv
inline IdxPtr seq_patches(int G, int len_in, int ch, int kernel, int stride) {
  const int P = conv_out_len(len_in, kernel, stride);
  std::vector<long long> idx;
  idx.reserve(1LL * G * P * kernel * ch);
  for (int g = 0; g < G; ++g)
    for (int p = 0; p < P; ++p)
      for (int dk = 0; dk < kernel; ++dk)
        for (int c = 0; c < ch; ++c)
          idx.push_back((1LL * g * len_in + p * stride + dk) * ch + c);
  return make_idx(std::move(idx));
}

// rows b of sample n from an {N*(B+1), L} stack, dropping the hub row
inline IdxPtr drop_hub_rows(int N, int B, int L) {
  std::vector<long long> idx;
  idx.reserve(1LL * N * B * L);
  for (int n = 0; n < N; ++n)
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < L; ++c) idx.push_back((1LL * n * (B + 1) + b) * L + c);
  return make_idx(std::move(idx));
}

// each sample's hub row repeated B times
inline IdxPtr hub_rows(int N, int B, int L) {
  std::vector<long long> idx;
  idx.reserve(1LL * N * B * L);
  for (int n = 0; n < N; ++n)
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < L; ++c) idx.push_back((1LL * n * (B + 1) + B) * L + c);
  return make_idx(std::move(idx));
}

// step-t rows from an {N*B, cols} stack
inline IdxPtr step_rows(int N, int B, int t, int cols) {
  std::vector<long long> idx;
  idx.reserve(1LL * N * cols);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < cols; ++c) idx.push_back((1LL * n * B + t) * cols + c);
  return make_idx(std::move(idx));
}

// gate slice g of an {N, 4L} pre-activation block
inline IdxPtr gate_cols(int N, int L, int gate) {
  std::vector<long long> idx;
  idx.reserve(1LL * N * L);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < L; ++c) idx.push_back(1LL * n * 4 * L + gate * L + c);
  return make_idx(std::move(idx));
}

}  // namespace detail

template <class S>
ForwardNodes<S> forward_graph(Tape<S>& tape, const BicModel<S>& m,
                              const std::vector<int>& pids, int input_id, int batch) {
  const auto& cfg = m.cfg;
  const int N = batch, B = cfg.num_beams, w = cfg.width(), D = cfg.beam_length,
            C = cfg.channels, L = cfg.latent_dim;
  {
    const std::vector<int> want{N, B, w, D, C};
    if (tape.value(input_id).dims != want)
      throw ShapeMismatch("forward: input tensor shape does not match the model config");
  }
  auto pid = [&](const std::string& name) { return pids[m.params.index_of(name)]; };

  // fusion conv: width x 3 valid patches -> L/8 maps over length D-2
  int len = D - 2;
  int cols = tape.gather(input_id, detail::fusion_patches(N, B, w, D, C),
                         {N * B * len, w * 3 * C});
  int h = tape.leaky_relu(
      tape.add_broadcast_row(tape.matmul(cols, pid("prox.w")), pid("prox.b")));

  int ch = L / 8;
  for (size_t i = 0; i < m.spatial.size(); ++i) {
    const auto& st = m.spatial[i];
    int out_len = detail::conv_out_len(len, st.kernel, st.stride);
    int patches = tape.gather(h, detail::seq_patches(N * B, len, ch, st.kernel, st.stride),
                              {N * B * out_len, st.kernel * ch});
    std::string tag = "spatial" + std::to_string(i);
    h = tape.leaky_relu(
        tape.add_broadcast_row(tape.matmul(patches, pid(tag + ".w")), pid(tag + ".b")));
    len = out_len;
    ch = st.out_channels;
  }
  int encoder = h;  // {N*B, L}, len collapsed to 1

  // wheel context: hub starts as the mean beam embedding, three propagation
  // layers h <- leaky_relu(lambda * A^T h W) move state along directed edges
  Mat<S> lift = Mat<S>::Zero(B + 1, B);
  for (int i = 0; i < B; ++i) lift(i, i) = S(1);
  for (int i = 0; i < B; ++i) lift(B, i) = S(1) / S(B);
  int ctx = tape.const_matmul_left(lift, encoder, N);
  const Mat<S> flow = cfg.edge_factor * m.adjacency.transpose();
  for (int l = 0; l < 3; ++l) {
    int tag = l;
    ctx = tape.leaky_relu(tape.matmul(tape.const_matmul_left(flow, ctx, N),
                                      pid("ctx" + std::to_string(tag) + ".w")));
  }
  int context_pre = tape.gather(ctx, detail::drop_hub_rows(N, B, L), {N * B, L});
  int embeddings = context_pre;
  if (cfg.add_center) {
    int hub = tape.gather(ctx, detail::hub_rows(N, B, L), {N * B, L});
    embeddings = tape.add(context_pre, hub);
  }

  // stacked gated recurrence over beams in index order; gates i,f,o,g
  std::vector<int> hs(3), cs(3);
  for (int l = 0; l < 3; ++l) {
    hs[l] = tape.constant(Tensor<S>({N, L}));
    cs[l] = tape.constant(Tensor<S>({N, L}));
  }
  int last_h = hs[2];
  for (int t = 0; t < B; ++t) {
    int x = tape.gather(embeddings, detail::step_rows(N, B, t, L), {N, L});
    for (int l = 0; l < 3; ++l) {
      std::string tag = "dec" + std::to_string(l);
      int pre = tape.add_broadcast_row(
          tape.add(tape.matmul(x, pid(tag + ".wx")), tape.matmul(hs[l], pid(tag + ".wh"))),
          pid(tag + ".b"));
      int gi = tape.sigmoid(tape.gather(pre, detail::gate_cols(N, L, 0), {N, L}));
      int gf = tape.sigmoid(tape.gather(pre, detail::gate_cols(N, L, 1), {N, L}));
      int go = tape.sigmoid(tape.gather(pre, detail::gate_cols(N, L, 2), {N, L}));
      int gg = tape.tanh_op(tape.gather(pre, detail::gate_cols(N, L, 3), {N, L}));
      cs[l] = tape.add(tape.mul(gf, cs[l]), tape.mul(gi, gg));
      hs[l] = tape.mul(go, tape.tanh_op(cs[l]));
      x = hs[l];
    }
    last_h = hs[2];
  }

  int y = tape.leaky_relu(
      tape.add_broadcast_row(tape.matmul(last_h, pid("head0.w")), pid("head0.b")));
  y = tape.leaky_relu(tape.add_broadcast_row(tape.matmul(y, pid("head1.w")), pid("head1.b")));
  y = tape.add_broadcast_row(tape.matmul(y, pid("head2.w")), pid("head2.b"));
  int z = tape.l2_normalize_rows(y);

  ForwardNodes<S> out;
  out.input = input_id;
  out.encoder = encoder;
  out.context_pre = context_pre;
  out.embeddings = embeddings;
  out.z = z;
  out.batch = N;
  return out;
}

// one sample's {B, L} rows out of an {N*B, L} embedding stack
template <class S>
int sample_rows(Tape<S>& tape, int rows_id, int sample, int num_beams, int latent) {
  std::vector<long long> idx;
  idx.reserve(1LL * num_beams * latent);
  for (int b = 0; b < num_beams; ++b)
    for (int c = 0; c < latent; ++c)
      idx.push_back((1LL * sample * num_beams + b) * latent + c);
  return tape.gather(rows_id, detail::make_idx(std::move(idx)), {num_beams, latent});
}

// shift logits: logit_k sums the similarity diagonal j = i - k (mod B), so a
// k-shifted copy of the reference puts the mass at k
template <class S>
int prior_logits_graph(Tape<S>& tape, int ref_rows, int cur_rows, int num_beams) {
  const int B = num_beams;
  int xi = tape.pairwise_similarity(ref_rows, cur_rows);
  std::vector<long long> idx;
  idx.reserve(1LL * B * B);
  for (int k = 0; k < B; ++k)
    for (int i = 0; i < B; ++i) idx.push_back(1LL * i * B + (i - k + B) % B);
  int diags = tape.gather(xi, detail::make_idx(std::move(idx)), {B, B});
  return tape.matmul(diags, tape.constant(Tensor<S>::full({B, 1}, S(1))));  // {B,1}
}

template <class S>
Tensor<S> stack_beam_tensors(const std::vector<BeamTensor<S>>& batch) {
  if (batch.empty()) throw SizeMismatch("stack: empty batch");
  const auto& d0 = batch.front().data.dims;
  Tensor<S> out;
  out.dims = {int(batch.size()), d0[0], d0[1], d0[2], d0[3]};
  out.v = Arr<S>(numel(out.dims));
  long long per = batch.front().data.size(), at = 0;
  for (const auto& bt : batch) {
    if (bt.data.dims != d0) throw SizeMismatch("stack: beam tensors differ in shape");
    out.v.segment(at, per) = bt.data.v;
    at += per;
  }
  return out;
}

template <class S>
struct ForwardResult {
  UnitVec z;
  Tensor<S> embeddings;          // {B, L} decoder input
  Tensor<S> encoder_embeddings;  // {B, L} before context
};

template <class S>
ForwardResult<S> forward(const BicModel<S>& m, const BeamTensor<S>& bt) {
  Tape<S> tape;
  auto pids = register_params(tape, m, false);
  Tensor<S> input = bt.data;
  input.dims.insert(input.dims.begin(), 1);
  int in_id = tape.leaf(std::move(input), false);
  auto fw = forward_graph(tape, m, pids, in_id, 1);
  if (!tape.value(fw.z).all_finite() || !tape.value(fw.embeddings).all_finite())
    throw NonFiniteActivation("forward produced a non-finite value");
  ForwardResult<S> r;
  r.z = {double(tape.value(fw.z).v[0]), double(tape.value(fw.z).v[1])};
  r.embeddings = tape.value(fw.embeddings);
  r.embeddings.dims = {m.cfg.num_beams, m.cfg.latent_dim};
  r.encoder_embeddings = tape.value(fw.encoder);
  r.encoder_embeddings.dims = {m.cfg.num_beams, m.cfg.latent_dim};
  return r;
}

inline Checkpoint model_checkpoint(const BicModel<float>& m, std::string config_text) {
  Checkpoint ck;
  ck.config = std::move(config_text);
  for (size_t p = 0; p < m.params.values.size(); ++p)
    ck.params.emplace_back(m.params.names[p], m.params.values[p]);
  return ck;
}

template <class S>
void load_model_params(BicModel<S>& m, const Checkpoint& ck) {
  if (ck.params.size() != m.params.values.size())
    throw ShapeMismatch("checkpoint parameter count does not match the model");
  for (const auto& [name, t] : ck.params) {
    auto& dst = m.params.values[m.params.index_of(name)];
    if (t.dims != dst.dims) throw ShapeMismatch("checkpoint shape differs for " + name);
    dst = t.template cast<S>();
  }
}

}  // namespace bic
