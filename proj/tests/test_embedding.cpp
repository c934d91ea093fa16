#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numbers>

#include "support.hpp"
#include "tflab/embedding.hpp"
#include "tflab/error.hpp"

using namespace tflab;
using testing::random_tensor;

namespace {

EmbedConfig linear_identity_config(std::size_t channels, std::size_t patch_len) {
  EmbedConfig c;
  c.channels = channels;
  c.patch_len = patch_len;
  c.embed_dim = channels * patch_len;
  c.hidden = std::vector<std::size_t>{};
  return c;
}

Tensor sinusoid_panel(std::size_t length, double period, double phase) {
  std::vector<double> v(length);
  for (std::size_t t = 0; t < length; ++t)
    v[t] = std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / period + phase);
  return Tensor::from_data({1, length}, std::move(v));
}

// Two-term InfoNCE written out from cosine similarities.
double reference_info_nce(double s_pos, double s_neg, double tau) {
  return std::log1p(std::exp((s_neg - s_pos) / tau));
}

Tensor unit_pair(double angle) {
  return Tensor::from_data({1, 2}, {std::cos(angle), std::sin(angle)});
}

}  // namespace

TEST_CASE("patchify tiles the series and inverts exactly") {
  const Tensor s = Tensor::from_data({1, 6}, {1, 2, 3, 4, 5, 6});
  const PatchGrid g = patchify(s, 3);
  CHECK(g.count() == 2);
  CHECK(g.patch(0).values() == std::vector<double>{1, 2, 3});
  CHECK(g.patch(1).values() == std::vector<double>{4, 5, 6});
  CHECK(patchify(s, 6).count() == 1);
  CHECK(patchify(s, 6).patch(0).values() == s.values());

  const Tensor y = random_tensor({3, 24}, 1);
  CHECK(unpatchify(patchify(y, 4)).values() == y.values());
  CHECK(tokens_to_series(series_to_tokens(y, 4), 3).values() == y.values());

  CHECK_THROWS_AS(patchify(Tensor::zeros({1, 7}), 3), Error);
  CHECK_THROWS_AS(patchify(Tensor::zeros({1, 6}), 1), Error);
  const PatchGrid cut = patchify(Tensor::from_data({1, 7}, {1, 2, 3, 4, 5, 6, 7}), 3, true);
  CHECK(cut.count() == 2);
  CHECK(cut.source_len == 6);
}

TEST_CASE("channel rows are channel-major and joint rows concatenate channels") {
  const Tensor s = Tensor::from_data({2, 4}, {1, 2, 3, 4, 10, 20, 30, 40});
  const PatchGrid g = patchify(s, 2);
  CHECK(g.channel_rows().values() == std::vector<double>{1, 2, 3, 4, 10, 20, 30, 40});
  CHECK(g.joint_rows().values() == std::vector<double>{1, 2, 10, 20, 3, 4, 30, 40});
}

TEST_CASE("positive samples add seeded Gaussian noise") {
  const Tensor p = random_tensor({1, 8}, 2);
  CHECK(make_positive(p, 0.0, 5).values() == p.values());
  CHECK(make_positive(p, 0.3, 5).values() == make_positive(p, 0.3, 5).values());

  const Tensor big = Tensor::zeros({1, 100000});
  const auto d = make_positive(big, 0.1, 77).values();
  double m = 0.0, v = 0.0;
  for (double x : d) m += x;
  m /= static_cast<double>(d.size());
  for (double x : d) v += (x - m) * (x - m);
  v /= static_cast<double>(d.size() - 1);
  CHECK(std::abs(m) < 0.002);
  CHECK(std::abs(std::sqrt(v) - 0.1) < 0.002);
}

TEST_CASE("negative samples flip time per channel") {
  const Tensor p = Tensor::from_data({1, 3}, {1, 2, 3});
  CHECK(make_negative(p).values() == std::vector<double>{3, 2, 1});
  const Tensor q = random_tensor({3, 5}, 3);
  CHECK(make_negative(make_negative(q)).values() == q.values());
  const Tensor two = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(make_negative(two).values() == std::vector<double>{3, 2, 1, 6, 5, 4});
  const Tensor pal = Tensor::from_data({1, 3}, {1, 5, 1});
  CHECK(make_negative(pal).values() == pal.values());
  CHECK(is_flip_invariant(pal));
  CHECK(is_flip_invariant(Tensor::full({1, 4}, 2.0)));
  CHECK_FALSE(is_flip_invariant(p));
}

TEST_CASE("F and G shapes, determinism and the identity composition") {
  EmbedConfig c;
  c.channels = 2;
  c.patch_len = 4;
  c.embed_dim = 16;
  const EmbeddingModule m(c, 9);
  const Tensor p = random_tensor({2, 4}, 4);
  const Tensor e = m.embed_forward(p);
  CHECK(e.shape() == Shape{16});
  CHECK(m.embed_forward(p).values() == e.values());
  CHECK(m.inverse_embed(e).shape() == Shape{2, 4});
  CHECK_THROWS_AS(m.embed_forward(random_tensor({2, 5}, 5)), Error);
  CHECK_THROWS_AS(m.inverse_embed(random_tensor({15}, 5)), Error);

  EmbeddingModule id(linear_identity_config(2, 4), 1);
  id.set_identity();
  CHECK(id.embed_forward(p).values() == p.values());
  CHECK(id.inverse_embed(id.embed_forward(p)).values() == p.values());
  const Tensor rows = random_tensor({6, 8}, 6);
  CHECK(reconstruction_loss(rows, id.decode_rows(id.encode_rows(rows))).item() == 0.0);
}

TEST_CASE("default F and G are two-layer MLPs with a 4D hidden layer") {
  EmbedConfig c;
  c.patch_len = 8;
  c.embed_dim = 32;
  EmbeddingModule m(c, 1);
  REQUIRE(m.embed_layer().layers().size() == 2);
  CHECK(m.embed_layer().layers()[0].out_features() == 128);
  CHECK(m.inverse_layer().layers()[1].out_features() == 8);
  NamedTensors names = m.parameters();
  for (const auto& p : names) {
    const bool ok = p.name.rfind("embed.F.", 0) == 0 || p.name.rfind("embed.G.", 0) == 0;
    CHECK(ok);
  }
}

TEST_CASE("InfoNCE anchors") {
  const Tensor a = unit_pair(0.0);
  // Positive and negative at the same angle on either side of the anchor.
  const double l = info_nce_loss(a, unit_pair(0.4), unit_pair(-0.4), 0.1).item();
  CHECK(std::abs(l - std::numbers::ln2) < 1e-12);
  const double extreme = info_nce_loss(a, a, unit_pair(std::numbers::pi), 0.1).item();
  CHECK(std::abs(extreme - reference_info_nce(1.0, -1.0, 0.1)) < 1e-20);
  CHECK(extreme > 0.0);
  CHECK(std::abs(extreme - 2.0611536e-9) < 1e-15);

  double previous = INFINITY;
  for (int i = 0; i <= 40; ++i) {
    const double angle = std::numbers::pi * (1.0 - i / 40.0);
    const double v = info_nce_loss(a, unit_pair(angle), unit_pair(2.0), 0.1).item();
    CHECK(v < previous);
    CHECK(std::abs(v - reference_info_nce(std::cos(angle), std::cos(2.0), 0.1)) < 1e-12);
    previous = v;
  }
  CHECK_THROWS_AS(info_nce_loss(a, Tensor::zeros({1, 2}), a, 0.1), Error);
  CHECK_THROWS_AS(info_nce_loss(a, a, a, 0.0), Error);
}

TEST_CASE("reconstruction loss") {
  CHECK(reconstruction_loss(Tensor::from_data({1, 2}, {1, 0}), Tensor::zeros({1, 2})).item() == 1.0);
  const Tensor p = random_tensor({5, 3}, 7), q = random_tensor({5, 3}, 8);
  std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  const double base = reconstruction_loss(p, q).item();
  CHECK(std::abs(reconstruction_loss(gather_rows(p, perm), gather_rows(q, perm)).item() - base) < 1e-14);
  double direct = 0.0;
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j) direct += (p.at(i, j) - q.at(i, j)) * (p.at(i, j) - q.at(i, j));
  CHECK(std::abs(base - direct / 5.0) < 1e-14);
}

TEST_CASE("alignment and uniformity anchors") {
  const Tensor x = random_tensor({4, 3}, 9);
  CHECK(alignment_metric(x, x) == 0.0);
  const Tensor e1 = Tensor::from_data({1, 2}, {1, 0}), e2 = Tensor::from_data({1, 2}, {0, 1});
  CHECK(std::abs(alignment_metric(e1, scale(e1, -3.0)) - 4.0) < 1e-14);
  CHECK(std::abs(alignment_metric(e1, scale(e2, 5.0)) - 2.0) < 1e-14);
  CHECK(alignment_metric(x, random_tensor({4, 3}, 10)) >= 0.0);

  const Tensor same = Tensor::from_data({3, 2}, {1, 2, 1, 2, 1, 2});
  CHECK(uniformity_metric(same) == 0.0);
  const Tensor anti = Tensor::from_data({2, 2}, {0, 1, 0, -1});
  CHECK(std::abs(uniformity_metric(anti) + 4.0) < 1e-14);
  CHECK(uniformity_metric(random_tensor({6, 3}, 11)) <= 0.0);
  CHECK_THROWS_AS(uniformity_metric(Tensor::zeros({1, 2})), Error);
  CHECK_THROWS_AS(alignment_metric(Tensor::zeros({0, 2}), Tensor::zeros({0, 2})), Error);
}

TEST_CASE("triplets skip flip-invariant rows but keep them for reconstruction") {
  EmbedConfig c;
  c.patch_len = 3;
  const Tensor rows = Tensor::from_data({3, 3}, {1, 2, 3, 4, 4, 4, 1, 9, 1});
  const TripletBatch tb = make_triplets(rows, c, 1);
  CHECK(tb.rows.dim(0) == 3);
  CHECK(tb.anchor_index == std::vector<std::size_t>{0});
  CHECK(tb.degenerate == 2);
  CHECK(tb.negatives.values() == std::vector<double>{3, 2, 1});
}

TEST_CASE("embedding training on a sinusoid corpus") {
  EmbedConfig c;
  c.patch_len = 8;
  c.embed_dim = 32;
  std::vector<Tensor> panels;
  for (int i = 0; i < 8; ++i) panels.push_back(sinusoid_panel(256, 16.0 + 3.0 * i, 0.3 * i));
  const Tensor rows = corpus_rows(panels, c);
  CHECK(rows.shape() == Shape{8 * 32, 8});

  EmbedTrainOptions o;
  o.epochs = 0;
  EmbeddingModule idle(c, 3);
  const auto before = idle.parameters()[0].tensor.values();
  CHECK(train_embedding(idle, rows, o).history.empty());
  CHECK(idle.parameters()[0].tensor.values() == before);

  o.epochs = 100;
  o.max_steps = 200;
  o.batch_size = 32;
  EmbeddingModule m(c, 3);
  const auto r = train_embedding(m, rows, o);
  REQUIRE(r.history.size() == 200);
  CHECK(r.history.back().total <= 0.5 * r.history.front().total);
  for (std::size_t i = 0; i < r.history.size(); ++i) CHECK(r.history[i].step == i + 1);

  EmbeddingModule again(c, 3);
  const auto r2 = train_embedding(again, rows, o);
  REQUIRE(r2.history.size() == r.history.size());
  bool identical = true;
  for (std::size_t i = 0; i < r.history.size(); ++i) identical = identical && r.history[i].total == r2.history[i].total;
  CHECK(identical);
}

TEST_CASE("non-finite training loss is reported with its step") {
  EmbedConfig c;
  c.patch_len = 4;
  c.embed_dim = 8;
  EmbeddingModule m(c, 1);
  std::vector<double> v(32, 1.0);
  v[5] = 1e200;
  EmbedTrainOptions o;
  o.batch_size = 8;
  try {
    train_embedding(m, Tensor::from_data({8, 4}, v), o);
    FAIL("expected a training error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::training);
    CHECK(std::string(e.what()).find("step 1") != std::string::npos);
  }
}
