#include <cmath>
#include <cstdio>
#include <vector>

#include "bic/net.hpp"
#include "bic/toeplitz.hpp"
#include "doctest.h"

using namespace bic;

namespace {

template <class S>
NetConfig<S> small_cfg(int B, int eps, int D, int C, int L) {
  NetConfig<S> cfg;
  cfg.num_beams = B;
  cfg.thickness = eps;
  cfg.beam_length = D;
  cfg.channels = C;
  cfg.latent_dim = L;
  return cfg;
}

template <class S>
Tensor<S> random_input(const NetConfig<S>& cfg, int batch, uint64_t seed) {
  Tensor<S> t({batch, cfg.num_beams, cfg.width(), cfg.beam_length, cfg.channels});
  Rng rng(seed);
  for (long long i = 0; i < t.size(); ++i) t.v[i] = S(rng.uniform());
  return t;
}

}  // namespace

TEST_SUITE("net") {

TEST_CASE("spatial plans land on length 1 with latent output width") {
  for (int D : {14, 16, 32, 64, 125, 20, 7, 3, 40}) {
    auto plan = spatial_plan(D, 128);
    int len = D - 2;
    for (const auto& st : plan) len = (len - st.kernel) / st.stride + 1;
    CHECK(len == 1);
    CHECK(plan.back().out_channels == 128);
  }
  CHECK(spatial_plan(16, 128).size() == 5);
  CHECK(spatial_plan(64, 128).size() == 7);
  CHECK(spatial_plan(125, 128).size() == 8);
  CHECK_THROWS_AS(spatial_plan(2, 128), DomainError);
  CHECK_THROWS_AS(spatial_plan(16, 100), DomainError);
}

TEST_CASE("config validation rejects bad edge factors and widths") {
  auto cfg = small_cfg<float>(8, 1, 16, 1, 64);
  CHECK_NOTHROW(cfg.validate());
  cfg.edge_factor = 0.0f;
  CHECK_THROWS_AS(cfg.validate(), DomainError);
  cfg.edge_factor = 1.5f;
  CHECK_THROWS_AS(cfg.validate(), DomainError);
  cfg.edge_factor = 1.0f;
  cfg.latent_dim = 60;
  CHECK_THROWS_AS(init_model(cfg, 1), DomainError);
}

TEST_CASE("wheel adjacency: beam rows sum to 2, hub row to 0") {
  auto A = wheel_adjacency<double>(12);
  REQUIRE(A.rows() == 13);
  for (int i = 0; i < 12; ++i) {
    CHECK(A.row(i).sum() == 2.0);
    CHECK(A(i, (i + 1) % 12) == 1.0);
    CHECK(A(i, 12) == 1.0);
  }
  CHECK(A.row(12).sum() == 0.0);
}

TEST_CASE("init is seed-deterministic with zero biases") {
  auto cfg = small_cfg<float>(16, 1, 16, 1, 64);
  auto m1 = init_model(cfg, 42);
  auto m2 = init_model(cfg, 42);
  auto m3 = init_model(cfg, 43);
  REQUIRE(m1.params.values.size() == m2.params.values.size());
  bool all_equal = true, any_diff_other_seed = false;
  for (size_t p = 0; p < m1.params.values.size(); ++p) {
    if ((m1.params.values[p].v != m2.params.values[p].v).any()) all_equal = false;
    if ((m1.params.values[p].v != m3.params.values[p].v).any()) any_diff_other_seed = true;
    if (m1.params.values[p].dims.size() == 1)
      CHECK(m1.params.values[p].v.abs().maxCoeff() == 0.0f);
  }
  CHECK(all_equal);
  CHECK(any_diff_other_seed);
  CHECK(m1.params.total_size() > 0);
}

TEST_CASE("weight variance tracks 2/fan_in for wide layers") {
  auto m = init_model(small_cfg<float>(32, 1, 64, 1, 128), 7);
  int checked = 0;
  for (const auto& t : m.params.values) {
    if (t.dims.size() != 2 || t.dims[0] < 256) continue;
    double mean = t.v.template cast<double>().mean();
    double var = (t.v.template cast<double>() - mean).square().mean();
    double want = 2.0 / t.dims[0];
    CHECK(std::abs(var - want) / want < 0.10);
    ++checked;
  }
  CHECK(checked >= 3);
}

TEST_CASE("forward emits unit z and per-beam embeddings across configs") {
  struct Case {
    int B, eps, D, C, L;
  };
  for (const auto& c : {Case{32, 1, 64, 3, 128}, Case{16, 1, 16, 1, 64},
                        Case{8, 2, 14, 3, 128}, Case{6, 0, 20, 1, 32}}) {
    auto cfg = small_cfg<float>(c.B, c.eps, c.D, c.C, c.L);
    auto m = init_model(cfg, 5);
    BeamTensor<float> bt;
    bt.num_beams = c.B;
    bt.width = cfg.width();
    bt.length = c.D;
    bt.channels = c.C;
    bt.data = random_input(cfg, 1, 99);
    bt.data.dims = {c.B, cfg.width(), c.D, c.C};
    auto r = forward(m, bt);
    CHECK(std::abs(std::hypot(r.z.re, r.z.im) - 1.0) < 1e-6);
    CHECK(r.embeddings.dims == std::vector<int>{c.B, c.L});
    CHECK(r.encoder_embeddings.dims == std::vector<int>{c.B, c.L});
    CHECK(r.embeddings.all_finite());
  }
}

TEST_CASE("zero input stays finite") {
  auto cfg = small_cfg<float>(8, 1, 14, 1, 64);
  auto m = init_model(cfg, 3);
  BeamTensor<float> bt;
  bt.num_beams = 8;
  bt.width = 3;
  bt.length = 14;
  bt.channels = 1;
  bt.data = Tensor<float>({8, 3, 14, 1});
  auto r = forward(m, bt);
  CHECK(std::isfinite(r.z.re));
  CHECK(std::isfinite(r.z.im));
  CHECK(r.embeddings.all_finite());
}

TEST_CASE("permuting beam order changes the output") {
  auto cfg = small_cfg<double>(8, 1, 14, 1, 64);
  auto m = init_model(cfg, 11);
  BeamTensor<double> bt;
  bt.num_beams = 8;
  bt.width = 3;
  bt.length = 14;
  bt.channels = 1;
  bt.data = random_input(cfg, 1, 21);
  bt.data.dims = {8, 3, 14, 1};
  BeamTensor<double> swapped = bt;
  long long block = 3 * 14;
  swapped.data.v.segment(0, block) = bt.data.v.segment(block, block);
  swapped.data.v.segment(block, block) = bt.data.v.segment(0, block);
  auto r1 = forward(m, bt);
  auto r2 = forward(m, swapped);
  CHECK(std::abs(r1.z.re - r2.z.re) + std::abs(r1.z.im - r2.z.im) > 1e-9);
}

TEST_CASE("forward graph rejects inputs that disagree with the config") {
  auto cfg = small_cfg<float>(8, 1, 14, 1, 64);
  auto m = init_model(cfg, 3);
  Tape<float> tape;
  auto pids = register_params(tape, m, false);
  int bad = tape.constant(Tensor<float>({1, 8, 3, 13, 1}));
  CHECK_THROWS_AS(forward_graph(tape, m, pids, bad, 1), ShapeMismatch);
}

TEST_CASE("context influence travels at most 3 directed hops, hub held out") {
  auto cfg = small_cfg<double>(8, 0, 5, 1, 8);
  cfg.add_center = false;
  auto m = init_model(cfg, 17);
  Tape<double> tape;
  auto pids = register_params(tape, m, false);
  int in_id = tape.leaf(random_input(cfg, 1, 55), true);
  auto fw = forward_graph(tape, m, pids, in_id, 1);

  const int i = 5, L = 8;
  std::vector<long long> row(L);
  for (int c = 0; c < L; ++c) row[size_t(c)] = 1LL * i * L + c;
  int picked = tape.gather(fw.context_pre,
                           std::make_shared<const std::vector<long long>>(row), {1, L});
  tape.backward(tape.sum_all(picked));

  const long long block = 5;  // thin beams of length 5, one channel
  auto block_mag = [&](int j) {
    return double(tape.grad(in_id).v.segment(j * block, block).abs().maxCoeff());
  };
  for (int j = 0; j < 8; ++j) {
    int hops = (i - j + 8) % 8;
    if (hops == 0 || hops > 3)
      CHECK(block_mag(j) == 0.0);
  }
  CHECK(block_mag(i - 3) > 1e-12);  // the 3-hop source actually reaches i
}

TEST_CASE("shift logits from the graph match the direct path and peak at k") {
  const int B = 8, L = 6;
  Rng rng(33);
  Mat<double> ref(B, L);
  for (int i = 0; i < B; ++i)
    for (int j = 0; j < L; ++j) ref(i, j) = rng.normal();
  for (int k : {0, 1, 3, 7}) {
    Mat<double> cur(B, L);
    for (int i = 0; i < B; ++i) cur.row(i) = ref.row((i + k) % B);
    Tape<double> tape;
    int a = tape.constant(Tensor<double>::from_matrix(ref));
    int b = tape.constant(Tensor<double>::from_matrix(cur));
    int lg = prior_logits_graph(tape, a, b, B);
    Mat<double> xi = similarity<double>(ref, cur);
    Vec<double> direct = toeplitz_logits<double>(xi, ToeplitzExtractor{B});
    int best = 0;
    for (int q = 0; q < B; ++q) {
      CHECK(tape.value(lg).v[q] == doctest::Approx(direct[q]).epsilon(1e-12));
      if (tape.value(lg).v[q] > tape.value(lg).v[best]) best = q;
    }
    CHECK(best == k);
  }
}

TEST_CASE("whole-model gradients match central differences") {
  auto cfg = small_cfg<double>(4, 0, 5, 1, 8);
  auto m = init_model(cfg, 29);
  const int P = int(m.params.values.size());

  std::vector<Tensor<double>> inputs = m.params.values;
  inputs.push_back(random_input(cfg, 2, 71));

  auto rep = grad_check(inputs, [&](Tape<double>& tape, const std::vector<int>& ids) {
    std::vector<int> pids(ids.begin(), ids.begin() + P);
    auto fw = forward_graph(tape, m, pids, ids[size_t(P)], 2);
    int ref = sample_rows(tape, fw.embeddings, 0, cfg.num_beams, cfg.latent_dim);
    int cur = sample_rows(tape, fw.embeddings, 1, cfg.num_beams, cfg.latent_dim);
    int ce = tape.cross_entropy_logits(prior_logits_graph(tape, ref, cur, cfg.num_beams), 1);
    Tensor<double> zw({2, 2});
    zw.v << 0.7, -0.4, 0.3, 1.1;
    int zl = tape.sum_all(tape.mul(fw.z, tape.constant(zw)));
    return tape.add(tape.scale(ce, 0.5), zl);
  });
  CHECK(rep.max_rel_error <= 1e-4);
}

TEST_CASE("checkpoint round trip restores the exact forward map") {
  auto cfg = small_cfg<float>(8, 1, 14, 1, 64);
  auto m = init_model(cfg, 101);
  auto ck = model_checkpoint(m, "note=round-trip");
  const char* path = "ckpt_net_test.rbck";
  write_checkpoint(path, ck);
  Checkpoint back = read_checkpoint(path);
  std::remove(path);
  CHECK(back.config == "note=round-trip");

  auto m2 = init_model(cfg, 999);
  load_model_params(m2, back);
  for (size_t p = 0; p < m.params.values.size(); ++p)
    CHECK((m.params.values[p].v == m2.params.values[p].v).all());

  BeamTensor<float> bt;
  bt.num_beams = 8;
  bt.width = 3;
  bt.length = 14;
  bt.channels = 1;
  bt.data = random_input(cfg, 1, 5);
  bt.data.dims = {8, 3, 14, 1};
  auto r1 = forward(m, bt);
  auto r2 = forward(m2, bt);
  CHECK(r1.z.re == r2.z.re);
  CHECK(r1.z.im == r2.z.im);

  Checkpoint renamed = back;
  renamed.params[0].first = "prox.weight";
  CHECK_THROWS_AS(load_model_params(m2, renamed), ShapeMismatch);
  Checkpoint truncated = back;
  truncated.params.pop_back();
  CHECK_THROWS_AS(load_model_params(m2, truncated), ShapeMismatch);
}

}  // TEST_SUITE
