#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "mmib/error.hpp"
#include "mmib/layers.hpp"

using namespace mmib;
using ad::Var;
using mmib::testing::random_matrix;

namespace {

nn::ApencConfig small(std::size_t d = 4, std::size_t h = 2) {
  nn::ApencConfig c;
  c.d = d;
  c.heads = h;
  c.d_ff = 2 * d;
  return c;
}

}  // namespace

TEST(Apenc, RejectsIndivisibleHeads) {
  EXPECT_THROW(small(6, 4).validate(), ConfigError);
  ad::ParameterStore s;
  nn::Rng rng(1);
  EXPECT_THROW(nn::Apenc(s, "x", small(5, 2), true, rng), ConfigError);
}

TEST(Apenc, OutputShapeFollowsQueries) {
  ad::ParameterStore s;
  nn::Rng rng(1);
  nn::Apenc enc(s, "enc", small(), false, rng);
  ad::Tape t;
  std::mt19937_64 r(2);
  Var out = enc(t, t.constant(random_matrix(5, 4, r)), t.constant(random_matrix(3, 4, r)), {});
  EXPECT_EQ(out.rows(), 5u);
  EXPECT_EQ(out.cols(), 4u);
}

TEST(Apenc, SingleValidKeyGetsAllWeight) {
  ad::ParameterStore s;
  nn::Rng rng(3);
  const auto p = nn::AttentionParams::create(s, "a", small(), rng);
  std::mt19937_64 r(4);
  const Matrix q = random_matrix(2, 4, r);
  Matrix k = random_matrix(3, 4, r);
  const ad::Mask mask{0, 1, 0};
  ad::Tape t;
  std::vector<Var> w;
  const Matrix out = nn::apenc_layer(t, t.constant(q), t.constant(k), mask, p, 1e-5, &w).value();
  ASSERT_EQ(w.size(), 2u);
  for (const Var& head : w) {
    for (std::size_t i = 0; i < 2; ++i) {
      EXPECT_EQ(head.value()(i, 1), 1.0);
      EXPECT_EQ(head.value()(i, 0), 0.0);
      EXPECT_EQ(head.value()(i, 2), 0.0);
    }
  }
  for (double& v : k.row_span(0)) v += 3.0;
  for (double& v : k.row_span(2)) v -= 1.0;
  ad::Tape t2;
  EXPECT_EQ(nn::apenc_layer(t2, t2.constant(q), t2.constant(k), mask, p, 1e-5).value(), out);
}

TEST(Apenc, IdenticalKeysShareWeightEvenly) {
  ad::ParameterStore s;
  nn::Rng rng(5);
  const auto p = nn::AttentionParams::create(s, "a", small(), rng);
  std::mt19937_64 r(6);
  const Matrix row = random_matrix(1, 4, r);
  Matrix k(2, 4);
  for (std::size_t c = 0; c < 4; ++c) k(0, c) = k(1, c) = row(0, c);
  ad::Tape t;
  std::vector<Var> w;
  nn::multi_head_attention(t, t.constant(random_matrix(3, 4, r)), t.constant(k), {}, p, &w);
  for (const Var& head : w)
    for (std::size_t i = 0; i < 3; ++i) {
      EXPECT_DOUBLE_EQ(head.value()(i, 0), 0.5);
      EXPECT_DOUBLE_EQ(head.value()(i, 1), 0.5);
    }
}

TEST(Apenc, KeyPermutationLeavesOutputUnchanged) {
  ad::ParameterStore s;
  nn::Rng rng(7);
  nn::Apenc enc(s, "enc", small(), false, rng);
  std::mt19937_64 r(8);
  const Matrix q = random_matrix(3, 4, r), k = random_matrix(4, 4, r);
  const ad::Mask mask{1, 0, 1, 1};
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  Matrix kp(4, 4);
  ad::Mask mp(4);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t c = 0; c < 4; ++c) kp(i, c) = k(perm[i], c);
    mp[i] = mask[perm[i]];
  }
  ad::Tape t;
  const Matrix a = enc(t, t.constant(q), t.constant(k), mask).value();
  const Matrix b = enc(t, t.constant(q), t.constant(kp), mp).value();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

// Smallest |ReLU preactivation| over every block, replaying the stack.
double relu_margin(const nn::Apenc& enc, const Matrix& q, const Matrix& k, const ad::Mask& mask, bool self) {
  ad::Tape t(false);
  Var x = t.constant(q);
  Var keys = self ? x : t.constant(k);
  double margin = std::numeric_limits<double>::infinity();
  for (const auto& p : enc.layers()) {
    Var att = nn::multi_head_attention(t, x, keys, mask, p);
    Var f1 = ad::layer_norm(x + att, t.leaf(*p.ln1_gain), t.leaf(*p.ln1_bias), enc.config().ln_eps);
    const Matrix pre = ad::add_row(ad::matmul(f1, t.leaf(*p.ff_w1)), t.leaf(*p.ff_b1)).value();
    for (double v : pre.values()) margin = std::min(margin, std::abs(v));
    x = nn::apenc_layer(t, x, keys, mask, p, enc.config().ln_eps);
    if (self) keys = x;
  }
  return margin;
}

TEST(Apenc, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const bool self = seed % 2 == 0;
    ad::ParameterStore s;
    nn::Rng rng(seed);
    auto cfg = small();
    cfg.depth = self ? 2 : 1;
    nn::Apenc enc(s, "enc", cfg, self, rng);
    std::mt19937_64 r(100 + seed);
    const ad::Mask mask{1, 1, 0, 1};
    Matrix qm, km;
    do {
      qm = random_matrix(self ? 4 : 3, 4, r);
      km = random_matrix(4, 4, r);
    } while (relu_margin(enc, qm, km, mask, self) < 1e-3);
    auto& q = s.add("q", qm);
    auto& k = s.add("k", km);
    const Matrix weights = random_matrix(q.value.rows(), 4, r);
    const auto res = mmib::testing::check_gradients(s, [&](ad::Tape& t) {
      Var qv = t.leaf(q);
      return ad::sum(enc(t, qv, self ? qv : t.leaf(k), mask) * t.constant(weights));
    });
    EXPECT_LE(res.max_rel_err, 1e-4) << "seed " << seed << ": " << res.worst;
  }
}

class Variational : public ::testing::Test {
 protected:
  Variational() : rng(11), head(store, "lat", small(), rng) {}
  ad::ParameterStore store;
  nn::Rng rng;
  nn::GaussianHead head;
};

TEST_F(Variational, ZeroNoiseGivesMean) {
  std::mt19937_64 r(12);
  const Matrix x = random_matrix(3, 4, r);
  ad::Tape t;
  auto noise = nn::Noise::zero();
  const auto lat = nn::variational_encode(t, t.constant(x), {}, head, noise);
  EXPECT_EQ(lat.z.value(), lat.mu.value());
  for (double v : lat.sigma.value().values()) EXPECT_GT(v, 0.0);
}

TEST_F(Variational, ZeroSigmaPathGivesUnitSigma) {
  auto& last = head.sigma.layers().back();
  last.ln2_gain->value.fill(0.0);
  last.ln2_bias->value.fill(0.0);
  std::mt19937_64 r(13);
  ad::Tape t;
  auto noise = nn::Noise::gaussian(1);
  const auto lat = nn::variational_encode(t, t.constant(random_matrix(3, 4, r)), {}, head, noise);
  for (double v : lat.sigma.value().values()) EXPECT_EQ(v, 1.0);
}

TEST_F(Variational, EvalModeIsBitwiseDeterministic) {
  std::mt19937_64 r(14);
  const Matrix x = random_matrix(4, 4, r);
  auto n1 = nn::Noise::zero(), n2 = nn::Noise::zero();
  ad::Tape t1(false), t2(false);
  EXPECT_EQ(nn::variational_encode(t1, t1.constant(x), {}, head, n1).z.value(),
            nn::variational_encode(t2, t2.constant(x), {}, head, n2).z.value());
}

TEST_F(Variational, EveryUnmaskedRowInfluencesEveryPosition) {
  std::mt19937_64 r(15);
  const Matrix x = random_matrix(4, 4, r);
  const ad::Mask mask{1, 1, 1, 0};
  auto noise = nn::Noise::zero();
  ad::Tape t(false);
  const Matrix base = nn::variational_encode(t, t.constant(x), mask, head, noise).mu.value();
  for (std::size_t j = 0; j < 3; ++j) {
    Matrix xp = x;
    xp(j, 0) += 0.5;
    const Matrix mu = nn::variational_encode(t, t.constant(xp), mask, head, noise).mu.value();
    for (std::size_t i = 0; i < 3; ++i) {
      double diff = 0.0;
      for (std::size_t c = 0; c < 4; ++c) diff += std::abs(mu(i, c) - base(i, c));
      EXPECT_GT(diff, 1e-9) << "row " << j << " does not reach position " << i;
    }
  }
  Matrix masked = x;
  masked(3, 1) += 5.0;
  const Matrix mu = nn::variational_encode(t, t.constant(masked), mask, head, noise).mu.value();
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(mu(i, c), base(i, c));
}

TEST_F(Variational, SampleMeanConvergesToMu) {
  std::mt19937_64 r(16);
  const Matrix x = random_matrix(2, 4, r);
  constexpr std::size_t kDraws = 100000;
  auto noise = nn::Noise::gaussian(77);
  ad::Tape t(false);
  Var xv = t.constant(x);
  const auto ref = nn::variational_encode(t, xv, {}, head, noise);
  const Matrix mu = ref.mu.value(), sigma = ref.sigma.value();
  Matrix sum(2, 4);
  for (std::size_t s = 0; s < kDraws; ++s) {
    const Matrix eps = noise.draw(2, 4, 2);
    ad::Tape ts(false);
    Var z = ts.constant(mu) + ts.constant(sigma) * ts.constant(eps);
    sum += z.value();
  }
  for (std::size_t i = 0; i < sum.size(); ++i) {
    const double mean = sum[i] / kDraws;
    EXPECT_LE(std::abs(mean - mu[i]), 3.0 * sigma[i] / std::sqrt(static_cast<double>(kDraws)));
  }
}

TEST_F(Variational, NoiseSkipsPaddingRows) {
  auto a = nn::Noise::gaussian(5), b = nn::Noise::gaussian(5);
  const Matrix short_draw = a.draw(2, 3, 2);
  const Matrix padded = b.draw(4, 3, 2);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(short_draw(r, c), padded(r, c));
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(padded(3, c), 0.0);
  EXPECT_EQ(a.draw(1, 3, 1), b.draw(1, 3, 1));
}

class Fusion : public ::testing::Test {
 protected:
  Fusion()
      : rng(21),
        text(store, "t", small(), rng),
        image(store, "v", small(), rng),
        v2t(store, "v2t", small(), false, rng),
        t2v(store, "t2v", small(), false, rng) {}
  ad::ParameterStore store;
  nn::Rng rng;
  nn::GaussianHead text, image;
  nn::Apenc v2t, t2v;
};

TEST_F(Fusion, Shapes) {
  std::mt19937_64 r(22);
  ad::Tape t;
  auto noise = nn::Noise::gaussian(3);
  const auto zt = nn::variational_encode(t, t.constant(random_matrix(5, 4, r)), {}, text, noise);
  const auto zv = nn::variational_encode(t, t.constant(random_matrix(3, 4, r)), {}, image, noise);
  const auto f = nn::fuse(t, zv, zt, v2t, t2v);
  EXPECT_EQ(f.image_attended.rows(), 3u);
  EXPECT_EQ(f.text_fused.rows(), 5u);
  EXPECT_EQ(f.text_fused.cols(), 4u);
}

TEST_F(Fusion, OnlyClsVisibleMeansOnlyClsMatters) {
  std::mt19937_64 r(23);
  const Matrix xt = random_matrix(4, 4, r), xv = random_matrix(2, 4, r);
  const ad::Mask cls_only{1, 0, 0, 0};
  auto run = [&](const Matrix& text_in) {
    ad::Tape t(false);
    auto noise = nn::Noise::zero();
    auto zt = nn::variational_encode(t, t.constant(text_in), cls_only, text, noise);
    auto zv = nn::variational_encode(t, t.constant(xv), {}, image, noise);
    return nn::fuse(t, zv, zt, v2t, t2v).image_attended.value();
  };
  Matrix changed = xt;
  for (std::size_t rr = 1; rr < 4; ++rr)
    for (double& v : changed.row_span(rr)) v = -v + 1.0;
  EXPECT_EQ(run(xt), run(changed));
}

TEST_F(Fusion, GradientFromTextReachesImageHead) {
  std::mt19937_64 r(24);
  const Matrix xt = random_matrix(4, 4, r), xv = random_matrix(3, 4, r), w = random_matrix(4, 4, r);
  std::vector<ad::Parameter*> image_params = image.mu.parameters();
  const auto res = mmib::testing::check_gradients(
      store,
      [&](ad::Tape& t) {
        auto noise = nn::Noise::gaussian(9);
        auto zt = nn::variational_encode(t, t.constant(xt), {}, text, noise);
        auto zv = nn::variational_encode(t, t.constant(xv), {}, image, noise);
        return ad::sum(nn::fuse(t, zv, zt, v2t, t2v).text_fused * t.constant(w));
      },
      1e-5, image_params);
  EXPECT_LE(res.max_rel_err, 1e-4) << res.worst;
  double norm = 0.0;
  for (auto* p : image_params)
    for (double g : p->grad.values()) norm += std::abs(g);
  EXPECT_GT(norm, 0.0);
}

TEST(Xavier, WithinGlorotBound) {
  nn::Rng rng(1);
  const Matrix m = nn::xavier_uniform(10, 6, rng);
  const double limit = std::sqrt(6.0 / 16.0);
  for (double v : m.values()) EXPECT_LE(std::abs(v), limit);
}
