#include <doctest.h>

#include <cmath>
#include <vector>

#include "misdetect/error.hpp"
#include "misdetect/optim.hpp"
#include "misdetect/rng.hpp"

using namespace misdetect;

namespace {

// Plain scalar AdamW written straight from the update equations.
struct ScalarAdamW {
  double lr, b1, b2, eps, wd;
  double m = 0.0, v = 0.0;
  int t = 0;

  double step(double w, double g) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    return w - lr * (mh / (std::sqrt(vh) + eps) + wd * w);
  }
};

Mat<double> scalar(double x) {
  Mat<double> m(1, 1);
  m(0, 0) = x;
  return m;
}

void step_scalar(AdamW<double>& opt, Mat<double>& w, const Mat<double>& g, bool decay) {
  std::vector<Mat<double>*> ps{&w};
  std::vector<const Mat<double>*> gs{&g};
  opt.step(std::span<Mat<double>* const>(ps), std::span<const Mat<double>* const>(gs), {decay});
}

std::vector<Mat<double>> random_grads(SplitMix64& rng) {
  std::vector<Mat<double>> out;
  const auto n = 1 + rng.below(4);
  const double scale = std::exp(4.0 * rng.normal());
  for (std::uint64_t k = 0; k < n; ++k) {
    Mat<double> m(1 + static_cast<Eigen::Index>(rng.below(5)), 1 + static_cast<Eigen::Index>(rng.below(5)));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
    out.push_back(std::move(m));
  }
  return out;
}

std::vector<Mat<double>*> ptrs(std::vector<Mat<double>>& v) {
  std::vector<Mat<double>*> out;
  for (auto& m : v) out.push_back(&m);
  return out;
}

}  // namespace

TEST_CASE("cross-entropy values") {
  CHECK(cross_entropy({0.0, 0.0}, 0) == doctest::Approx(0.6931471805599453).epsilon(1e-15));
  CHECK(cross_entropy({0.0, 0.0}, 1) == doctest::Approx(0.6931471805599453).epsilon(1e-15));
  CHECK(cross_entropy({30.0, -30.0}, 0) < 1e-12);
  CHECK(cross_entropy({30.0, -30.0}, 0) >= 0.0);
  // -log(e^2 / (e^1 + e^2)) at 40 digits: 0.31326168751822283404...
  CHECK(std::abs(cross_entropy({1.0, 2.0}, 1) - 0.3132616875182228340) < 1e-15);
  CHECK(cross_entropy({1000.0, -1000.0}, 1) == doctest::Approx(2000.0));
  CHECK_THROWS_AS(cross_entropy({0.0, 0.0}, 2), Error);
}

TEST_CASE("cross-entropy is never negative") {
  SplitMix64 rng(1);
  for (int i = 0; i < 1000; ++i) {
    const std::array<double, 2> logits{20 * rng.normal(), 20 * rng.normal()};
    CHECK(cross_entropy(logits, static_cast<int>(rng.below(2))) >= 0.0);
  }
}

TEST_CASE("cosine similarity loss") {
  const std::vector<double> u{1.0, 0.0};
  const std::vector<double> v{1.0, 1.0};
  const std::vector<double> w{0.0, 2.0};
  CHECK(cosine_similarity_loss(v, v, 1) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(cosine_similarity_loss(u, w, 0) == 0.0);
  CHECK(std::abs(cosine_similarity_loss(u, v, 1) - 0.0857864376269049512) < 1e-15);
  CHECK_THROWS_AS(cosine_similarity_loss(u, std::vector<double>{0.0, 0.0}, 1), Error);
  CHECK_THROWS_AS(cosine_similarity_loss(u, std::vector<double>{1.0}, 1), Error);
}

TEST_CASE("cosine similarity loss gradient matches finite differences") {
  SplitMix64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> u(6), v(6), du(6), dv(6);
    for (auto& x : u) x = rng.normal();
    for (auto& x : v) x = rng.normal();
    const int target = static_cast<int>(rng.below(2));
    cosine_similarity_loss_grad(u, v, target, du, dv);
    for (std::size_t i = 0; i < u.size(); ++i) {
      const double h = 1e-6;
      auto up = u, down = u;
      up[i] += h;
      down[i] -= h;
      const double num = (cosine_similarity_loss(up, v, target) - cosine_similarity_loss(down, v, target)) / (2 * h);
      CHECK(du[i] == doctest::Approx(num).epsilon(1e-6));
      auto vu = v, vd = v;
      vu[i] += h;
      vd[i] -= h;
      const double num_v = (cosine_similarity_loss(u, vu, target) - cosine_similarity_loss(u, vd, target)) / (2 * h);
      CHECK(dv[i] == doctest::Approx(num_v).epsilon(1e-6));
    }
  }
}

TEST_CASE("global-norm clipping") {
  SUBCASE("[3, 4] clipped to unit norm") {
    Mat<double> g(1, 2);
    g << 3.0, 4.0;
    std::vector<Mat<double>*> p{&g};
    CHECK(clip_global_norm<double>(std::span<Mat<double>* const>(p), ClipConfig{1.0}) == 5.0);
    CHECK(g(0, 0) == 0.6);
    CHECK(g(0, 1) == 0.8);
  }
  SUBCASE("below the limit is untouched bit for bit") {
    Mat<double> g(1, 3);
    g << 0.1, -0.2, 0.3;
    const Mat<double> before = g;
    std::vector<Mat<double>*> p{&g};
    clip_global_norm<double>(std::span<Mat<double>* const>(p), ClipConfig{1.0});
    CHECK(g == before);
  }
  SUBCASE("zero gradients stay zero") {
    Mat<double> g = Mat<double>::Zero(2, 2);
    std::vector<Mat<double>*> p{&g};
    CHECK(clip_global_norm<double>(std::span<Mat<double>* const>(p), ClipConfig{1.0}) == 0.0);
    CHECK(g.isZero(0.0));
  }
  SUBCASE("non-finite gradients are rejected") {
    Mat<double> g(1, 1);
    g(0, 0) = std::nan("");
    std::vector<Mat<double>*> p{&g};
    CHECK_THROWS_AS(clip_global_norm<double>(std::span<Mat<double>* const>(p), ClipConfig{1.0}), DivergenceError);
  }
  CHECK_THROWS_AS(ClipConfig{0.0}.validate(), Error);
}

TEST_CASE("clipping is idempotent and bounds the norm") {
  SplitMix64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    auto g = random_grads(rng);
    const ClipConfig cfg{0.1 + 3.0 * rng.uniform()};
    auto p = ptrs(g);
    clip_global_norm<double>(std::span<Mat<double>* const>(p), cfg);
    const auto once = g;
    CHECK(global_norm<double>(std::span<Mat<double>* const>(p)) <= cfg.max_grad_norm + 1e-9);
    clip_global_norm<double>(std::span<Mat<double>* const>(p), cfg);
    for (std::size_t k = 0; k < g.size(); ++k) CHECK(g[k] == once[k]);
  }
}

TEST_CASE("AdamW matches the scalar reference") {
  SUBCASE("single step from w=1, g=0.1") {
    AdamW<double> opt(AdamWConfig{});
    auto w = scalar(1.0);
    step_scalar(opt, w, scalar(0.1), true);
    // 40-digit evaluation of the same update: 0.99995960000399999960...
    CHECK(std::abs(w(0, 0) - 0.9999596000039999996) < 1e-15);
  }
  SUBCASE("ten steps with varying gradients") {
    AdamW<double> opt(AdamWConfig{});
    ScalarAdamW ref{4e-5, 0.9, 0.999, 1e-8, 0.01};
    auto w = scalar(0.7);
    double w_ref = 0.7;
    const double grads[] = {0.1, -0.3, 0.05, 2.0, -1.5, 0.0, 0.4, -0.02, 1e-3, 0.9};
    for (const double g : grads) {
      step_scalar(opt, w, scalar(g), true);
      w_ref = ref.step(w_ref, g);
      CHECK(std::abs(w(0, 0) - w_ref) <= 1e-12);
    }
    CHECK(opt.steps() == 10);
  }
}

TEST_CASE("AdamW decay and degenerate cases") {
  SUBCASE("zero gradient without decay leaves parameters unchanged") {
    AdamW<double> opt(AdamWConfig{4e-5, 0.9, 0.999, 1e-8, 0.0});
    auto w = scalar(1.5);
    step_scalar(opt, w, scalar(0.0), true);
    CHECK(w(0, 0) == 1.5);
  }
  SUBCASE("zero gradient with decay shrinks by lr * wd * w") {
    AdamW<double> opt(AdamWConfig{});
    auto w = scalar(2.0);
    step_scalar(opt, w, scalar(0.0), true);
    CHECK(w(0, 0) < 2.0);
    CHECK(w(0, 0) == doctest::Approx(2.0 - 4e-5 * 0.01 * 2.0).epsilon(1e-15));
  }
  SUBCASE("exempt tensors never decay") {
    AdamW<double> opt(AdamWConfig{});
    auto w = scalar(2.0);
    step_scalar(opt, w, scalar(0.0), false);
    CHECK(w(0, 0) == 2.0);
  }
  SUBCASE("update size is bounded by the learning rate") {
    // First step: m_hat = g and v_hat = g^2, so |dw| <= lr * (1 + wd * |w|).
    SplitMix64 rng(4);
    for (const double lr : {1e-3, 1e-6, 1e-9}) {
      AdamW<double> opt(AdamWConfig{lr, 0.9, 0.999, 1e-8, 0.01});
      auto w = scalar(rng.normal());
      const double before = w(0, 0);
      step_scalar(opt, w, scalar(10.0 * rng.normal()), true);
      CHECK(std::abs(w(0, 0) - before) <= lr * (1.0 + 0.01 * std::abs(before)) + 1e-18);
    }
  }
  CHECK_THROWS_AS(AdamWConfig({0.0, 0.9, 0.999, 1e-8, 0.0}).validate(), Error);
  CHECK_THROWS_AS(AdamWConfig({1e-3, 1.0, 0.999, 1e-8, 0.0}).validate(), Error);
}

TEST_CASE("AdamW on encoder parameters exempts biases and layer norms") {
  EncoderConfig cfg;
  cfg.vocab_size = 10;
  cfg.d_model = 4;
  cfg.n_heads = 2;
  cfg.n_layers = 1;
  cfg.d_ff = 8;
  cfg.max_positions = 6;
  auto p = EncoderParameters<double>::initialize(cfg, 1);
  p.layers[0].ln1_bias.setConstant(0.5);
  const auto before = p;
  const auto zero = EncoderParameters<double>::zeros(cfg);
  AdamW<double> opt(AdamWConfig{1e-2, 0.9, 0.999, 1e-8, 0.5});
  opt.step(p, zero);
  CHECK(p.layers[0].ln1_gain == before.layers[0].ln1_gain);
  CHECK(p.layers[0].ln1_bias == before.layers[0].ln1_bias);
  CHECK(p.layers[0].query_w.isApprox(before.layers[0].query_w * (1.0 - 1e-2 * 0.5)));
}
