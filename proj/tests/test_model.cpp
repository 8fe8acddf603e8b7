#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "graphsail/model.hpp"
#include "graphsail/train.hpp"
#include "support/fd.hpp"

using namespace graphsail;
using testsupport::check_gradient;
using testsupport::rel_err;

namespace {

BipartiteGraph ring_graph(std::uint32_t n_users, std::uint32_t n_items) {
  std::vector<Interaction> recs;
  std::int64_t t = 0;
  for (std::uint32_t u = 0; u < n_users; ++u)
    for (std::uint32_t off = 0; off < 3; ++off)
      recs.push_back({u, (u + off) % n_items, t++});
  return BipartiteGraph::build({recs.data(), recs.size()}, n_users, n_items);
}

void randomize(Matrix& m, Rng& rng, double scale = 1.0) {
  for (double& v : m.data()) v = rng.uniform(-scale, scale);
}

}  // namespace

TEST_CASE("init shapes and determinism") {
  ModelState a = init_model(7, 9, 128, 1, Rng(5));
  CHECK(a.e_user.rows() == 7);
  CHECK(a.e_user.cols() == 128);
  CHECK(a.e_item.rows() == 9);
  CHECK(a.w_user.rows() == 128);
  CHECK(a.w_user.cols() == 256);

  ModelState b = init_model(7, 9, 128, 1, Rng(5));
  CHECK(a.e_user.data() == b.e_user.data());
  CHECK(a.w_item.data() == b.w_item.data());

  ModelState c = init_model(7, 9, 128, 1, Rng(6));
  CHECK(a.e_user.data() != c.e_user.data());

  ModelState mf = init_model(4, 4, 8, 0, Rng(1));
  CHECK(mf.w_user.empty());
  CHECK_THROWS_AS(init_model(4, 4, 0, 1, Rng(1)), ConfigError);
  CHECK_THROWS_AS(init_model(4, 4, 8, 2, Rng(1)), ConfigError);
}

TEST_CASE("xavier sample variance matches 2/(fan_in+fan_out) within 5%") {
  const std::uint32_t n = 10000;
  const std::size_t d = 100;  // one million draws
  ModelState m = init_model(n, 1, d, 0, Rng(42));
  const auto& xs = m.e_user.data();
  double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
  double var = 0.0;
  for (double v : xs) var += (v - mean) * (v - mean);
  var /= xs.size();
  const double expected = 2.0 / (n + d);
  CHECK(rel_err(var, expected) < 0.05);
  // uniform in (-limit, limit)
  const double limit = std::sqrt(6.0 / (n + d));
  for (double v : xs) CHECK(std::abs(v) < limit);
}

TEST_CASE("layers=0 forward is exactly an embedding lookup") {
  Rng rng(31);
  ModelState m = init_model(6, 5, 8, 0, Rng(3));
  BipartiteGraph g = ring_graph(6, 5);
  std::vector<std::uint32_t> nodes{0, 3, 5, 3};
  ForwardBatch b = forward_embed(m, g, Side::User, nodes, 10, rng.fork(1));
  for (std::size_t k = 0; k < nodes.size(); ++k)
    for (std::size_t c = 0; c < 8; ++c) CHECK(b.out.at(k, c) == m.e_user.at(nodes[k], c));
}

TEST_CASE("identity construction: W=[I|0] with non-negative embeddings") {
  ModelState m = init_model(3, 3, 4, 1, Rng(7));
  for (double& v : m.e_user.data()) v = std::abs(v);
  for (double& v : m.e_item.data()) v = std::abs(v);
  m.w_user.fill(0.0);
  for (std::size_t j = 0; j < 4; ++j) m.w_user.at(j, j) = 1.0;  // self half only
  std::vector<std::uint32_t> nodes{0, 1, 2};
  std::vector<std::uint32_t> nbrs(nodes.size() * 2, 0);
  ForwardBatch b = forward_with_neighbors(m, Side::User, nodes, nbrs, 2);
  for (std::size_t k = 0; k < nodes.size(); ++k)
    for (std::size_t c = 0; c < 4; ++c)
      CHECK(b.out.at(k, c) == doctest::Approx(m.e_user.at(nodes[k], c)).epsilon(1e-12));
}

TEST_CASE("single-unit hand computation with ReLU clipping") {
  // d=2, e_u=[1,-1], two neighbors averaging to [0.5,0.5]; concat sums to 1.
  ModelState m = init_model(1, 2, 2, 1, Rng(7));
  m.e_user.at(0, 0) = 1.0;
  m.e_user.at(0, 1) = -1.0;
  m.e_item.at(0, 0) = 1.0;
  m.e_item.at(0, 1) = 0.0;
  m.e_item.at(1, 0) = 0.0;
  m.e_item.at(1, 1) = 1.0;
  // row 0: all ones -> z = 1 - 1 + 0.5 + 0.5 = 1 -> ReLU 1
  // row 1: all minus ones -> z = -1 -> ReLU 0
  for (std::size_t c = 0; c < 4; ++c) {
    m.w_user.at(0, c) = 1.0;
    m.w_user.at(1, c) = -1.0;
  }
  std::vector<std::uint32_t> nodes{0};
  std::vector<std::uint32_t> nbrs{0, 1};
  ForwardBatch b = forward_with_neighbors(m, Side::User, nodes, nbrs, 2);
  CHECK(b.out.at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(b.out.at(0, 1) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("neighbor aggregation is permutation invariant") {
  Rng rng(32);
  ModelState m = init_model(4, 6, 8, 1, Rng(9));
  std::vector<std::uint32_t> nodes{1, 2};
  std::vector<std::uint32_t> nbrs{0, 1, 2, 3, 4, 5, 0, 2};
  ForwardBatch a = forward_with_neighbors(m, Side::User, nodes, nbrs, 4);
  std::vector<std::uint32_t> shuffled{3, 0, 2, 1, 2, 0, 5, 4};  // per-node permutations
  ForwardBatch b = forward_with_neighbors(m, Side::User, nodes, shuffled, 4);
  for (std::size_t k = 0; k < nodes.size(); ++k)
    for (std::size_t c = 0; c < 8; ++c)
      CHECK(a.out.at(k, c) == doctest::Approx(b.out.at(k, c)).epsilon(1e-12));
}

TEST_CASE("isolated nodes fall back to a zero neighborhood") {
  ModelState m = init_model(2, 2, 4, 1, Rng(11));
  std::vector<Interaction> recs{{0, 0, 0}};
  BipartiteGraph g = BipartiteGraph::build({recs.data(), recs.size()}, 2, 2);
  std::vector<std::uint32_t> nodes{1};  // degree 0
  Rng rng(1);
  ForwardBatch b = forward_embed(m, g, Side::User, nodes, 3, rng);
  // h = ReLU(W [e;0])
  for (std::size_t j = 0; j < 4; ++j) {
    double z = 0.0;
    for (std::size_t c = 0; c < 4; ++c) z += m.w_user.at(j, c) * m.e_user.at(1, c);
    CHECK(b.out.at(0, j) == doctest::Approx(std::max(z, 0.0)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(forward_embed(m, g, Side::User, nodes, 3, rng, false), DataError);
}

TEST_CASE("score_pairs basics and summation oracle") {
  FinalEmbeddings emb;
  emb.users = Matrix(2, 2);
  emb.items = Matrix(2, 2);
  emb.users.at(0, 0) = 1.0;  // u0 = [1,0]
  emb.items.at(0, 1) = 1.0;  // i0 = [0,1]
  emb.users.at(1, 0) = 1.0;  // u1 = [1,1]
  emb.users.at(1, 1) = 1.0;
  emb.items.at(1, 0) = 1.0;  // i1 = [1,1]
  emb.items.at(1, 1) = 1.0;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs{{0, 0}, {1, 1}};
  auto scores = score_pairs(emb, pairs);
  CHECK(scores[0] == doctest::Approx(0.0));
  CHECK(scores[1] == doctest::Approx(2.0));

  Rng rng(33);
  emb.users = Matrix(5, 8);
  emb.items = Matrix(5, 8);
  randomize(emb.users, rng);
  randomize(emb.items, rng);
  std::vector<std::pair<std::uint32_t, std::uint32_t>> rp;
  for (std::uint32_t k = 0; k < 5; ++k) rp.emplace_back(k, 4 - k);
  auto got = score_pairs(emb, rp);
  for (std::size_t k = 0; k < rp.size(); ++k) {
    long double acc = 0.0;  // independent summation
    for (std::size_t c = 0; c < 8; ++c)
      acc += static_cast<long double>(emb.users.at(rp[k].first, c)) *
             static_cast<long double>(emb.items.at(rp[k].second, c));
    CHECK(std::abs(got[k] - static_cast<double>(acc)) < 1e-12);
  }
}

TEST_CASE("zero upstream gradient produces zero parameter gradients") {
  ModelState m = init_model(4, 4, 8, 1, Rng(13));
  BipartiteGraph g = ring_graph(4, 4);
  std::vector<std::uint32_t> nodes{0, 1, 2, 3};
  Rng rng(2);
  ForwardBatch b = forward_embed(m, g, Side::User, nodes, 3, rng);
  Matrix upstream(4, 8);
  ModelGrads grads(m);
  backward(m, b, upstream, grads);
  for (double v : grads.dw_user.data()) CHECK(v == 0.0);
  grads.d_user.finalize();
  grads.d_item.finalize();
  for (std::size_t k = 0; k < grads.d_user.size(); ++k)
    for (std::size_t c = 0; c < 8; ++c) CHECK(grads.d_user.row_val(k)[c] == 0.0);
  for (std::size_t k = 0; k < grads.d_item.size(); ++k)
    for (std::size_t c = 0; c < 8; ++c) CHECK(grads.d_item.row_val(k)[c] == 0.0);
}

TEST_CASE("layers=0 BPR gradient equals the closed-form MF-BPR gradient") {
  Rng rng(34);
  const std::size_t d = 8;
  ModelState m = init_model(1, 2, d, 0, Rng(14));
  randomize(m.e_user, rng);
  randomize(m.e_item, rng);

  Matrix eu(1, d), ei(1, d), ej(1, d);
  std::memcpy(eu.row(0), m.e_user.row(0), d * sizeof(double));
  std::memcpy(ei.row(0), m.e_item.row(0), d * sizeof(double));
  std::memcpy(ej.row(0), m.e_item.row(1), d * sizeof(double));
  BprResult r = bpr_loss(eu, ei, ej, 0.0);

  // Hand-derived: x = u.(i - j); dL/du = (sigmoid(x)-1)(i-j), dL/di =
  // (sigmoid(x)-1) u, dL/dj = -(sigmoid(x)-1) u.
  double x = 0.0;
  for (std::size_t c = 0; c < d; ++c) x += eu.at(0, c) * (ei.at(0, c) - ej.at(0, c));
  const double s = 1.0 / (1.0 + std::exp(-x));
  CHECK(r.loss == doctest::Approx(std::log1p(std::exp(-x))).epsilon(1e-12));
  for (std::size_t c = 0; c < d; ++c) {
    CHECK(r.d_u.at(0, c) == doctest::Approx((s - 1) * (ei.at(0, c) - ej.at(0, c))).epsilon(1e-10));
    CHECK(r.d_i.at(0, c) == doctest::Approx((s - 1) * eu.at(0, c)).epsilon(1e-10));
    CHECK(r.d_j.at(0, c) == doctest::Approx(-(s - 1) * eu.at(0, c)).epsilon(1e-10));
  }
}

TEST_CASE("one-layer forward/backward matches finite differences on every parameter") {
  Rng rng(35);
  const std::size_t d = 8;
  const std::uint32_t nu = 5, ni = 6;
  BipartiteGraph g = ring_graph(nu, ni);

  for (int instance = 0; instance < 20; ++instance) {
    ModelState m = init_model(nu, ni, d, 1, Rng(100 + instance));
    std::vector<std::uint32_t> unodes{0, 2, 4};
    std::vector<std::uint32_t> inodes{1, 3, 5};
    Matrix uu(unodes.size(), d), ui(inodes.size(), d);
    randomize(uu, rng);
    randomize(ui, rng);
    const Rng fwd_rng = Rng(500 + instance);

    // Loss functional: fixed linear readout of the forward outputs. The
    // neighbor samples are a deterministic function of fwd_rng, so re-running
    // the forward inside the functional is well-defined.
    auto loss = [&]() {
      ForwardBatch bu = forward_embed(m, g, Side::User, unodes, 3, fwd_rng);
      ForwardBatch bi = forward_embed(m, g, Side::Item, inodes, 3, fwd_rng);
      double acc = 0.0;
      for (std::size_t k = 0; k < unodes.size(); ++k)
        acc += dot(uu.row(k), bu.out.row(k), d);
      for (std::size_t k = 0; k < inodes.size(); ++k)
        acc += dot(ui.row(k), bi.out.row(k), d);
      return acc;
    };

    ForwardBatch bu = forward_embed(m, g, Side::User, unodes, 3, fwd_rng);
    ForwardBatch bi = forward_embed(m, g, Side::Item, inodes, 3, fwd_rng);
    ModelGrads grads(m);
    backward(m, bu, uu, grads);
    backward(m, bi, ui, grads);
    grads.d_user.finalize();
    grads.d_item.finalize();

    double max_err = 0.0;
    auto check_dense = [&](Matrix& theta, const Matrix& analytic) {
      for (std::size_t k = 0; k < theta.data().size(); ++k) {
        const double num = testsupport::central_diff(loss, theta.data().data() + k);
        max_err = std::max(max_err, rel_err(analytic.data()[k], num));
      }
    };
    check_dense(m.w_user, grads.dw_user);
    check_dense(m.w_item, grads.dw_item);
    auto check_rows = [&](Matrix& theta, const SparseRowGrads& sg, std::uint32_t n) {
      for (std::uint32_t r = 0; r < n; ++r) {
        const double* arow = sg.find(r);
        for (std::size_t c = 0; c < d; ++c) {
          const double analytic = arow ? arow[c] : 0.0;
          const double num = testsupport::central_diff(loss, theta.row(r) + c);
          max_err = std::max(max_err, rel_err(analytic, num));
        }
      }
    };
    check_rows(m.e_user, grads.d_user, nu);
    check_rows(m.e_item, grads.d_item, ni);
    CHECK(max_err < 1e-4);
  }
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  namespace fs = std::filesystem;
  ModelState m = init_model(5, 7, 16, 1, Rng(77));
  const fs::path dir = fs::temp_directory_path() / "gs_ckpt_test";
  fs::remove_all(dir);
  save_checkpoint(dir.string(), m, 77, 3, R"({"method":"graphsail"})");

  Checkpoint ck = load_checkpoint(dir.string());
  CHECK(ck.seed == 77);
  CHECK(ck.block_id == 3);
  CHECK(ck.model.dim == 16);
  CHECK(ck.model.layers == 1);

  const fs::path dir2 = fs::temp_directory_path() / "gs_ckpt_test2";
  fs::remove_all(dir2);
  save_checkpoint(dir2.string(), ck.model, ck.seed, ck.block_id, ck.extra_json);
  for (const char* f : {"e_user.f32", "e_item.f32", "w_user.f32", "w_item.f32"}) {
    std::ifstream a(dir / f, std::ios::binary), b(dir2 / f, std::ios::binary);
    std::string ba((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    std::string bb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(ba == bb);
    CHECK(!ba.empty());
  }
  fs::remove_all(dir);
  fs::remove_all(dir2);
}
