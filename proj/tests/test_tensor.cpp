#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <fstream>

#include "support.hpp"
#include "tflab/checkpoint.hpp"
#include "tflab/error.hpp"
#include "tflab/gradcheck.hpp"
#include "tflab/optim.hpp"
#include "tflab/tensor.hpp"

using namespace tflab;
using testing::random_tensor;

namespace {

// Naive triple loop; independent of the library's matmul kernel.
std::vector<double> naive_matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t t = 0; t < k; ++t) out[i * n + j] += a.at(i, t) * b.at(t, j);
  return out;
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::state;
}

BinaryMatrix row_mask(std::initializer_list<int> bits) {
  BinaryMatrix m(1, bits.size());
  std::size_t i = 0;
  for (int b : bits) m.set(0, i++, b != 0);
  return m;
}

}  // namespace

TEST_CASE("matmul matches hand products and a naive kernel") {
  const Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  const Tensor b = Tensor::from_data({2, 1}, {1, 1});
  CHECK(matmul(a, b).values() == std::vector<double>{3, 7});

  const Tensor m = random_tensor({3, 5}, 1);
  CHECK(matmul(Tensor::identity(3), m).values() == m.values());
  const Tensor z = matmul(Tensor::zeros({2, 3}), random_tensor({3, 4}, 2));
  CHECK(z.values() == std::vector<double>(8, 0.0));

  const Tensor x = random_tensor({4, 6}, 3), y = random_tensor({6, 3}, 4);
  CHECK(testing::max_abs_diff(matmul(x, y).values(), naive_matmul(x, y)) < 1e-12);
}

TEST_CASE("matmul rejects mismatched inner dimensions with both shapes named") {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2}));
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::dimension);
    const std::string what = e.what();
    CHECK(what.find("2") != std::string::npos);
    CHECK(what.find("4") != std::string::npos);
  }
}

TEST_CASE("matmul is associative on random 4x4 matrices") {
  const Tensor a = random_tensor({4, 4}, 5), b = random_tensor({4, 4}, 6), c = random_tensor({4, 4}, 7);
  CHECK(testing::max_abs_diff(matmul(matmul(a, b), c).values(), matmul(a, matmul(b, c)).values()) < 1e-9);
}

TEST_CASE("elementwise ops") {
  const Tensor t = random_tensor({3, 2}, 8);
  CHECK(add(t, Tensor::zeros({3, 2})).values() == t.values());
  CHECK(scale(Tensor::from_data({3}, {1, 2, 3}), 2.0).values() == std::vector<double>{2, 4, 6});
  CHECK(elementwise(ElementwiseOp::mul, Tensor::from_data({3}, {1, 2, 3}), 2.0).values() ==
        std::vector<double>{2, 4, 6});
  std::vector<double> grid;
  for (int i = 0; i <= 100; ++i) grid.push_back(-5.0 + 0.1 * i);
  const Tensor g = Tensor::from_data({grid.size()}, grid);
  CHECK(testing::max_abs_diff(log(exp(g)).values(), grid) < 1e-12);
  CHECK(kind_of([] { add(Tensor::zeros({2}), Tensor::zeros({3})); }) == ErrorKind::dimension);
  CHECK(kind_of([] { div(Tensor::full({2}, 1.0), Tensor::from_data({2}, {1.0, 0.0})); }) ==
        ErrorKind::domain);
}

TEST_CASE("masked softmax") {
  auto row = [](std::vector<double> s, std::initializer_list<int> bits) {
    return masked_softmax(Tensor::from_data({1, s.size()}, s), row_mask(bits)).values();
  };
  const auto u = row({0, 0, 0}, {1, 1, 1});
  for (double v : u) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-15));
  CHECK(row({10, 0}, {1, 0}) == std::vector<double>{1.0, 0.0});
  const double e = std::exp(1.0), e2 = std::exp(2.0);
  const auto two = row({1, 2}, {1, 1});
  CHECK(std::abs(two[0] - e / (e + e2)) < 1e-15);
  CHECK(std::abs(two[1] - e2 / (e + e2)) < 1e-15);

  // Rows over allowed positions sum to one; masked entries are exactly zero.
  const Tensor scores = random_tensor({5, 5}, 9, false, 3.0);
  BinaryMatrix m(5, 5);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j <= i; ++j) m.set(i, j, true);
  const Tensor p = masked_softmax(scores, m);
  for (std::size_t i = 0; i < 5; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 5; ++j) {
      if (!m.get(i, j)) CHECK(p.at(i, j) == 0.0);
      s += p.at(i, j);
    }
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
  CHECK(kind_of([] {
          masked_softmax(Tensor::zeros({1, 2}), row_mask({0, 0}));
        }) == ErrorKind::domain);
}

TEST_CASE("product mask mode lets masked logits compete as zeros") {
  const Tensor s = Tensor::from_data({1, 2}, {1.0, 5.0});
  const Tensor p = masked_softmax(s, row_mask({1, 0}), MaskMode::product);
  const double e = std::exp(1.0);
  CHECK(std::abs(p.at(0, 0) - e / (e + 1.0)) < 1e-15);
  CHECK(p.at(0, 1) > 0.0);
}

TEST_CASE("layer norm") {
  const Tensor one = Tensor::full({2}, 1.0), zero = Tensor::zeros({2});
  CHECK(layer_norm(Tensor::full({1, 2}, 3.0), one, zero).values() == std::vector<double>{0, 0});
  const auto std_row = layer_norm(Tensor::from_data({1, 2}, {1, -1}), one, zero, 1e-14).values();
  CHECK(testing::max_abs_diff(std_row, {1, -1}) < 1e-12);
  const auto affine = layer_norm(Tensor::from_data({1, 2}, {0, 2}), Tensor::full({2}, 2.0),
                                 Tensor::full({2}, 1.0), 1e-14).values();
  CHECK(testing::max_abs_diff(affine, {-1, 3}) < 1e-12);

  const Tensor x = random_tensor({6, 7}, 10, false, 4.0);
  const Tensor y = layer_norm(x, Tensor::full({7}, 1.0), Tensor::zeros({7}), 1e-12);
  for (std::size_t i = 0; i < 6; ++i) {
    double m = 0.0, v = 0.0;
    for (std::size_t j = 0; j < 7; ++j) m += y.at(i, j) / 7.0;
    for (std::size_t j = 0; j < 7; ++j) v += (y.at(i, j) - m) * (y.at(i, j) - m) / 7.0;
    CHECK(std::abs(m) < 1e-10);
    CHECK(std::abs(v - 1.0) < 1e-6);
  }
}

TEST_CASE("dropout") {
  const Tensor x = random_tensor({1000}, 11);
  CHECK(dropout(x, 0.0, 1, true).values() == x.values());
  CHECK(dropout(x, 0.7, 1, false).values() == x.values());
  CHECK(kind_of([&] { dropout(x, 1.0, 1, true); }) == ErrorKind::parameter);

  const Tensor ones = Tensor::full({100000}, 1.0);
  const Tensor d = dropout(ones, 0.5, 42, true);
  std::size_t alive = 0;
  for (double v : d.data()) {
    CHECK((v == 0.0 || v == 2.0));
    alive += v != 0.0;
  }
  CHECK(std::abs(static_cast<double>(alive) / 1e5 - 0.5) < 0.01);
  CHECK(dropout(ones, 0.5, 42, true).values() == d.values());
  CHECK(dropout(ones, 0.5, 43, true).values() != d.values());
}

TEST_CASE("mse and cosine similarity") {
  const Tensor t = random_tensor({4, 3}, 12);
  CHECK(mse(t, t).item() == 0.0);
  CHECK(mse(Tensor::from_data({2}, {1, 2}), Tensor::zeros({2})).item() == 2.5);
  CHECK(std::abs(mse(add_scalar(t, 0.3), t).item() - 0.09) < 1e-15);
  CHECK(kind_of([] { mse(Tensor::zeros({2}), Tensor::zeros({3})); }) == ErrorKind::dimension);

  const Tensor a = Tensor::from_data({2}, {1, 1}), b = Tensor::from_data({2}, {1, 0});
  CHECK(std::abs(cosine_similarity(a, a).item() - 1.0) < 1e-15);
  CHECK(cosine_similarity(Tensor::from_data({2}, {1, 0}), Tensor::from_data({2}, {0, 1})).item() == 0.0);
  CHECK(std::abs(cosine_similarity(a, b).item() - 1.0 / std::sqrt(2.0)) < 1e-15);
  CHECK(kind_of([&] { cosine_similarity(a, Tensor::zeros({2})); }) == ErrorKind::domain);
}

TEST_CASE("backward basics") {
  Tensor p = random_tensor({3, 2}, 13, true);
  sum(p).backward();
  CHECK(p.grad_values() == std::vector<double>(6, 1.0));

  Tensor q = random_tensor({2}, 14, true);
  Tensor r = random_tensor({2}, 15, true);
  const Tensor loss = sum(square(r));
  loss.backward();
  CHECK(q.grad_values() == std::vector<double>{0.0, 0.0});

  CHECK(kind_of([&] { loss.backward(); }) == ErrorKind::state);
  CHECK(kind_of([&] { square(r).backward(); }) == ErrorKind::dimension);
}

TEST_CASE("linear regression gradient matches central differences") {
  const Tensor w = random_tensor({3, 2}, 16, true);
  const Tensor x = random_tensor({5, 3}, 17), y = random_tensor({5, 2}, 18);
  const auto r = grad_check([&] { return mse(matmul(x, w), y); }, {{"W", w}});
  CHECK(r.max_rel_error < 1e-4);
  CHECK(r.coords_checked == 6);
}

TEST_CASE("grad check anchors") {
  const Tensor a = random_tensor({4, 4}, 19);
  const Tensor sym = add(a, transpose(a));
  const Tensor v = random_tensor({4, 1}, 20, true);
  CHECK(grad_check([&] { return sum(mul(v, matmul(sym, v))); }, {{"v", v}}).max_rel_error < 1e-7);

  const Tensor k = random_tensor({3, 3}, 21, true);
  CHECK(grad_check([&] { return sum(Tensor::full({3}, 2.0)); }, {{"k", k}}).max_rel_error == 0.0);

  const Tensor s = random_tensor({4, 4}, 22, true);
  const Tensor vals = random_tensor({4, 3}, 23, true);
  BinaryMatrix causal(4, 4);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j <= i; ++j) causal.set(i, j, true);
  const auto r = grad_check([&] { return sum_squares(matmul(masked_softmax(s, causal), vals)); },
                            {{"s", s}, {"v", vals}});
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("every differentiable op passes a gradient check on random shapes") {
  std::mt19937_64 gen(24);
  std::uniform_int_distribution<std::size_t> dim(1, 8);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t m = dim(gen), n = dim(gen), k = dim(gen);
    const std::uint64_t s = 100 + trial * 10;
    const Tensor a = random_tensor({m, n}, s, true), b = random_tensor({m, n}, s + 1, true);
    const Tensor c = random_tensor({n, k}, s + 2, true);
    const Tensor pos = Tensor::from_data({m, n}, [&] {
      auto v = random_tensor({m, n}, s + 3).values();
      for (auto& x : v) x = 0.5 + std::abs(x);
      return v;
    }(), true);
    const Tensor g = random_tensor({n}, s + 4, true), be = random_tensor({n}, s + 5, true);
    const Tensor alpha = Tensor::scalar(0.7, true);
    BinaryMatrix mask(m, n, true);
    for (std::size_t i = 0; i < m; ++i)
      if (n > 1) mask.set(i, (i + 1) % n, false);
    const NamedTensors all = {{"a", a}, {"b", b}, {"c", c}, {"pos", pos}, {"g", g}, {"be", be}, {"alpha", alpha}};
    const std::vector<std::pair<const char*, std::function<Tensor()>>> cases = {
        {"add", [&] { return sum_squares(add(a, b)); }},
        {"sub", [&] { return sum_squares(sub(a, b)); }},
        {"mul", [&] { return sum(mul(a, b)); }},
        {"div", [&] { return sum(div(a, pos)); }},
        {"exp", [&] { return sum(exp(scale(a, 0.3))); }},
        {"log", [&] { return sum(log(pos)); }},
        {"neg", [&] { return sum_squares(neg(a)); }},
        {"softplus", [&] { return sum(softplus(a)); }},
        {"matmul", [&] { return sum_squares(matmul(a, c)); }},
        {"transpose", [&] { return sum(mul(transpose(a), transpose(b))); }},
        {"reshape", [&] { return sum_squares(reshape(a, {m * n})); }},
        {"slice_cols", [&] { return sum_squares(slice_cols(a, 0, (n + 1) / 2)); }},
        {"slice_rows", [&] { return sum_squares(slice_rows(a, m / 2, m - m / 2)); }},
        {"gather", [&] {
           std::vector<std::size_t> idx{0, m - 1, 0};
           return sum_squares(gather_rows(a, idx));
         }},
        {"concat", [&] {
           std::vector<Tensor> parts = {a, b};
           return sum_squares(concat_rows(parts));
         }},
        {"softmax", [&] { return sum_squares(mul(softmax_rows(a), b)); }},
        {"masked_softmax", [&] { return sum_squares(mul(masked_softmax(a, mask), b)); }},
        {"layer_norm", [&] { return sum(mul(layer_norm(a, g, be), b)); }},
        {"scale_by", [&] { return sum_squares(scale_by(a, alpha)); }},
        {"add_bias", [&] { return sum_squares(add_bias(a, g)); }},
        {"mse", [&] { return mse(a, b); }},
        {"mean", [&] { return mean(mul(a, a)); }},
        {"row_cosine", [&] { return sum(row_cosine(pos, add_scalar(pos, 0.5))); }},
    };
    for (const auto& [name, f] : cases) {
      CAPTURE(name);
      CAPTURE(m);
      CAPTURE(n);
      CHECK(grad_check(f, all).max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("gradients accumulate bit-identically across runs") {
  auto run = [] {
    Tensor w = random_tensor({4, 4}, 30, true);
    const Tensor x = random_tensor({3, 4}, 31);
    sum_squares(softmax_rows(matmul(x, w))).backward();
    return w.grad_values();
  };
  CHECK(run() == run());
}

TEST_CASE("no-grad guard stops graph recording") {
  Tensor w = random_tensor({2, 2}, 32, true);
  Tensor y;
  {
    NoGradGuard g;
    y = matmul(w, w);
  }
  CHECK_FALSE(y.requires_grad());
  CHECK(grad_enabled());
}

TEST_CASE("adam with zero learning rate leaves parameters untouched") {
  Tensor w = random_tensor({3, 3}, 33, true);
  const auto before = w.values();
  Optimizer opt({{"w", w}}, {OptimizerKind::adam, 0.0});
  for (int i = 0; i < 3; ++i) {
    opt.zero_grad();
    sum_squares(w).backward();
    opt.step();
  }
  CHECK(w.values() == before);
  CHECK(w.shape() == Shape{3, 3});
}

TEST_CASE("sgd and adam reduce a quadratic") {
  for (OptimizerKind kind : {OptimizerKind::sgd, OptimizerKind::adam}) {
    Tensor w = Tensor::from_data({2}, {3.0, -2.0}, true);
    Optimizer opt({{"w", w}}, {kind, 0.1});
    const double start = sum_squares(w).item();
    for (int i = 0; i < 20; ++i) {
      opt.zero_grad();
      sum_squares(w).backward();
      opt.step();
    }
    CHECK(sum_squares(w).item() < start);
    CHECK(opt.step_count() == 20);
  }
}

TEST_CASE("checkpoint layout and rejection of bad files") {
  const NamedTensors t = {{"a", Tensor::from_data({2}, {1.5, -2.0})}, {"bc", Tensor::scalar(3.0)}};
  const std::vector<char> bytes = encode_checkpoint(t);
  REQUIRE(bytes.size() >= 8);
  CHECK(std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(), bytes.begin()));
  // magic + (4 + 1 + 4 + 4 + 16) + (4 + 2 + 4 + 8): rank-0 scalar has no extents.
  CHECK(bytes.size() == 8 + 29 + 18);
  CHECK(bytes[8] == 1);
  CHECK(bytes[12] == 'a');
  const NamedTensors back = decode_checkpoint(bytes);
  REQUIRE(back.size() == 2);
  CHECK(back[0].name == "a");
  CHECK(back[0].tensor.values() == t[0].tensor.values());
  CHECK(encode_checkpoint(back) == bytes);

  std::vector<char> bad = bytes;
  bad[0] = 'X';
  CHECK(kind_of([&] { decode_checkpoint(bad); }) == ErrorKind::format);
  std::vector<char> cut(bytes.begin(), bytes.end() - 3);
  CHECK(kind_of([&] { decode_checkpoint(cut); }) == ErrorKind::format);

  NamedTensors target = {{"a", Tensor::zeros({3})}, {"bc", Tensor::zeros({})}};
  CHECK(kind_of([&] { assign_named(back, target, false); }) == ErrorKind::format);
}
