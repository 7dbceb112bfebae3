#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "anovit/vit_encoder.hpp"
#include "test_support.hpp"

using namespace anovit;
using anovit::testing::random_array;

namespace {

EncoderConfig tiny(std::size_t side = 16, std::size_t p = 4, std::size_t d = 8, std::size_t heads = 2,
                   std::size_t depth = 2) {
  EncoderConfig c;
  c.image_h = c.image_w = side;
  c.channels = 1;
  c.patch_size = p;
  c.embed_dim = d;
  c.heads = heads;
  c.depth = depth;
  return c;
}

// Direct 64-bit attention for one head: softmax(q k^T / sqrt(dh)) v.
std::vector<double> attention_oracle(const NdArray<double>& e, const NdArray<double>& u, std::size_t dh,
                                     std::vector<double>* weights = nullptr) {
  const std::size_t n = e.dim(0), d = e.dim(1);
  auto proj = [&](std::size_t row, std::size_t col) {
    double s = 0;
    for (std::size_t k = 0; k < d; ++k) s += e[row * d + k] * u[k * 3 * dh + col];
    return s;
  };
  std::vector<double> out(n * dh, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> logits(n);
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t c = 0; c < dh; ++c) s += proj(i, c) * proj(j, dh + c);
      logits[j] = s / std::sqrt(double(dh));
    }
    const double m = *std::max_element(logits.begin(), logits.end());
    double z = 0;
    for (auto& l : logits) z += (l = std::exp(l - m));
    for (std::size_t j = 0; j < n; ++j) {
      const double a = logits[j] / z;
      if (weights) weights->push_back(a);
      for (std::size_t c = 0; c < dh; ++c) out[i * dh + c] += a * proj(j, 2 * dh + c);
    }
  }
  return out;
}

}  // namespace

TEST(EncoderConfig, DeskDefaults) {
  const auto c = EncoderConfig::desk();
  EXPECT_EQ(c.image_h, 32u);
  EXPECT_EQ(c.patch_size, 8u);
  EXPECT_EQ(c.embed_dim, 64u);
  EXPECT_EQ(c.heads, 4u);
  EXPECT_EQ(c.depth, 4u);
  EXPECT_EQ(c.num_patches(), 16u);
  EXPECT_TRUE(c.violations().empty());
}

TEST(EncoderConfig, RejectsEveryViolatedInvariant) {
  auto c = tiny();
  c.image_h = 18;       // not divisible by P
  c.embed_dim = 9;      // not divisible by heads
  c.depth = 0;
  const auto v = c.violations();
  EXPECT_GE(v.size(), 3u);
  EXPECT_THROW(c.validate(), ConfigError);
  auto nonsquare = tiny(16, 4);
  nonsquare.image_w = 32;  // 4x8 grid
  EXPECT_THROW(nonsquare.validate(), ConfigError);
}

TEST(ExtractPatches, BlockingDefinition) {
  NdArray<float> img({4, 4, 1});
  std::iota(img.storage().begin(), img.storage().end(), 0.0f);
  const auto p = extract_patches(img, 2);
  ASSERT_EQ(p.shape(), (Shape{4, 4}));
  EXPECT_EQ(std::vector<float>(p.storage().begin(), p.storage().begin() + 4), (std::vector<float>{0, 1, 4, 5}));
  EXPECT_EQ(std::vector<float>(p.storage().begin() + 4, p.storage().begin() + 8),
            (std::vector<float>{2, 3, 6, 7}));
}

TEST(ExtractPatches, ChannelInnermost) {
  NdArray<float> img({2, 2, 3});
  std::iota(img.storage().begin(), img.storage().end(), 0.0f);
  const auto p = extract_patches(img, 2);
  EXPECT_EQ(p.storage(), img.storage());
}

TEST(ExtractPatches, PatchCounts) {
  const auto p224 = extract_patches(NdArray<float>({224, 224, 3}), 16);
  EXPECT_EQ(p224.shape(), (Shape{196, 768}));
  const auto p384 = extract_patches(NdArray<float>({384, 384, 3}), 16);
  EXPECT_EQ(p384.shape(), (Shape{576, 768}));
  EXPECT_THROW(extract_patches(NdArray<float>({10, 12, 1}), 4), ConfigError);
}

TEST(Embed, ZeroPatchesAndClsGivePositionalEmbedding) {
  ParameterStore<double> store;
  Rng rng(1);
  VitEncoder<double> enc(tiny(), store, rng);
  enc.cls_token().value.fill(0);
  auto tokens = enc.embed(Var<double>::constant(NdArray<double>({1, 16, 16})));
  ASSERT_EQ(tokens.shape(), (Shape{1, 17, 8}));
  // Patch bias is initialised to zero.
  for (std::size_t i = 0; i < tokens.value().size(); ++i)
    EXPECT_DOUBLE_EQ(tokens.value()[i], enc.pos_embedding().value[i]);
}

TEST(Embed, PositionBlindWithoutPositionalEmbedding) {
  ParameterStore<double> store;
  Rng rng(2);
  VitEncoder<double> enc(tiny(), store, rng);
  enc.pos_embedding().value.fill(0);
  auto patches = random_array<double>({1, 16, 16}, 3);
  for (std::size_t k = 0; k < 16; ++k) patches[9 * 16 + k] = patches[2 * 16 + k];
  auto tokens = enc.embed(Var<double>::constant(patches)).value();
  for (std::size_t k = 0; k < 8; ++k) EXPECT_EQ(tokens[3 * 8 + k], tokens[10 * 8 + k]);
}

TEST(SelfAttention, ZeroProjectionGivesUniformWeights) {
  const auto e = random_array<double>({5, 4}, 1);
  auto r = self_attention(Var<double>::constant(e), Var<double>::constant(NdArray<double>({4, 12})));
  for (double a : r.weights.data()) EXPECT_NEAR(a, 1.0 / 5.0, 1e-12);
  for (double v : r.output.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(SelfAttention, MatchesLoopOracle) {
  // N=2 patches + cls, D = Dh = 2.
  const auto e = random_array<double>({3, 2}, 4);
  const auto u = random_array<double>({2, 6}, 5);
  std::vector<double> want_w;
  const auto want = attention_oracle(e, u, 2, &want_w);
  auto r = self_attention(Var<double>::constant(e), Var<double>::constant(u));
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(r.output.value()[i], want[i], 1e-6);
  for (std::size_t i = 0; i < want_w.size(); ++i) EXPECT_NEAR(r.weights[i], want_w[i], 1e-6);
}

TEST(SelfAttention, RowsAreProbabilityVectorsAndShiftInvariant) {
  const auto e = random_array<float>({9, 8}, 6, -3, 3);
  const auto u = random_array<float>({8, 24}, 7);
  auto r = self_attention(Var<float>::constant(e), Var<float>::constant(u));
  for (std::size_t i = 0; i < 9; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < 9; ++j) {
      EXPECT_GE(r.weights[i * 9 + j], 0.0f);
      s += r.weights[i * 9 + j];
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
  // Adding c to every logit of a row: scaled_dot_attention with k shifted so
  // q k^T gains a constant per row is the same as a softmax shift.
  const auto q = random_array<double>({4, 3}, 8);
  const auto k = random_array<double>({4, 3}, 9);
  const auto v = random_array<double>({4, 3}, 10);
  auto base = scaled_dot_attention(Var<double>::constant(q), Var<double>::constant(k), Var<double>::constant(v));
  // Append a constant column to q and k: logits shift by a constant.
  NdArray<double> q2({4, 4}), k2({4, 4}), v2({4, 4});
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      q2[i * 4 + c] = q[i * 3 + c] * std::sqrt(4.0 / 3.0);
      k2[i * 4 + c] = k[i * 3 + c];
      v2[i * 4 + c] = v[i * 3 + c];
    }
    q2[i * 4 + 3] = 5.0;
    k2[i * 4 + 3] = 1.0;
  }
  auto shifted = scaled_dot_attention(Var<double>::constant(q2), Var<double>::constant(k2), Var<double>::constant(v2));
  for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(shifted.weights[i], base.weights[i], 1e-6);
}

TEST(MultiHeadAttention, SingleHeadIdentityProjectionEqualsSelfAttention) {
  const auto e = random_array<double>({5, 4}, 11);
  const auto u = random_array<double>({4, 12}, 12);
  NdArray<double> eye({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye[i * 4 + i] = 1;
  auto sa = self_attention(Var<double>::constant(e), Var<double>::constant(u));
  auto msa = multi_head_attention(Var<double>::constant(e), 1, Var<double>::constant(u), std::optional<Var<double>>{},
                                  Var<double>::constant(eye), std::optional<Var<double>>{});
  ASSERT_EQ(msa.shape(), (Shape{5, 4}));
  for (std::size_t i = 0; i < 20; ++i) EXPECT_NEAR(msa.value()[i], sa.output.value()[i], 1e-12);
}

TEST(MultiHeadAttention, TwoHeadsMatchConcatThenMatmulOracle) {
  const std::size_t n = 5, d = 4, dh = 2;
  const auto e = random_array<double>({n, d}, 13);
  const auto u = random_array<double>({d, 3 * d}, 14);
  const auto w = random_array<double>({d, d}, 15);
  // Per-head projection [q_h | k_h | v_h] picked out of the fused layout.
  std::vector<double> concat(n * d);
  for (std::size_t h = 0; h < 2; ++h) {
    NdArray<double> uh({d, 3 * dh});
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t part = 0; part < 3; ++part)
        for (std::size_t c = 0; c < dh; ++c) uh[r * 3 * dh + part * dh + c] = u[r * 3 * d + part * d + h * dh + c];
    const auto out = attention_oracle(e, uh, dh);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < dh; ++c) concat[i * d + h * dh + c] = out[i * dh + c];
  }
  auto msa = multi_head_attention(Var<double>::constant(e), 2, Var<double>::constant(u), std::optional<Var<double>>{},
                                  Var<double>::constant(w), std::optional<Var<double>>{});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < d; ++k) s += concat[i * d + k] * w[k * d + j];
      EXPECT_NEAR(msa.value()[i * d + j], s, 1e-6);
    }
}

TEST(MultiHeadAttention, HeadMismatchThrows) {
  const auto e = random_array<double>({5, 6}, 1);
  EXPECT_ANY_THROW(multi_head_attention(Var<double>::constant(e), 4, Var<double>::constant(NdArray<double>({6, 18})),
                                        std::optional<Var<double>>{}, Var<double>::constant(NdArray<double>({6, 6})), std::optional<Var<double>>{}));
}

TEST(TransformerBlock, ZeroParametersAreIdentity) {
  ParameterStore<double> store;
  Rng rng(3);
  auto block = register_transformer_block<double>(store, "b", 8, 4, rng);
  for (auto& p : store) p.value.fill(0);
  const auto x = random_array<double>({2, 5, 8}, 4);
  auto y = transformer_block(Var<double>::constant(x), block, 2, 1e-6);
  EXPECT_EQ(y.value(), x);
}

TEST(Encoder, ShapesForDeskAndPaperGeometry) {
  ParameterStore<float> s1;
  Rng r1(1);
  auto desk = tiny(32, 8, 32, 4, 2);
  VitEncoder<float> e1(desk, s1, r1);
  EXPECT_EQ(e1.encode(random_array<float>({32, 32, 1}, 1, 0, 1)).shape(), (Shape{17, 32}));

  // 224x224x3, P=16, D=768. One block is enough for the shape contract.
  EncoderConfig big;
  big.image_h = big.image_w = 224;
  big.channels = 3;
  big.patch_size = 16;
  big.embed_dim = 768;
  big.heads = 8;
  big.depth = 1;
  ParameterStore<float> s2;
  Rng r2(2);
  VitEncoder<float> e2(big, s2, r2);
  NoGradGuard<float> guard;
  EXPECT_EQ(e2.encode(random_array<float>({224, 224, 3}, 2, 0, 1)).shape(), (Shape{197, 768}));
}

TEST(Encoder, DeterministicForSeedAndImage) {
  auto run = [] {
    ParameterStore<float> store;
    Rng rng(9);
    VitEncoder<float> enc(EncoderConfig::desk(), store, rng);
    return enc.encode(random_array<float>({2, 32, 32, 1}, 5, 0, 1)).value();
  };
  EXPECT_EQ(run(), run());
}

TEST(Encoder, BatchedEqualsPerImage) {
  ParameterStore<float> store;
  Rng rng(9);
  VitEncoder<float> enc(EncoderConfig::desk(), store, rng);
  const auto batch = random_array<float>({3, 32, 32, 1}, 5, 0, 1);
  const auto all = enc.encode(batch).value();
  const std::size_t per = 17 * 64;
  for (std::size_t b = 0; b < 3; ++b) {
    NdArray<float> one({32, 32, 1}, std::vector<float>(batch.storage().begin() + b * 1024,
                                                        batch.storage().begin() + (b + 1) * 1024));
    const auto e = enc.encode(one).value();
    for (std::size_t i = 0; i < per; ++i) EXPECT_EQ(e[i], all[b * per + i]);
  }
}

TEST(Encoder, PatchPermutationCovariantWithoutPositionalEmbedding) {
  // 16x16 image, P=4: a 4x4 grid of patches. Permute whole patches and
  // check the token rows 1..N permute the same way.
  ParameterStore<double> store;
  Rng rng(4);
  VitEncoder<double> enc(tiny(), store, rng);
  enc.pos_embedding().value.fill(0);
  const auto img = random_array<double>({16, 16, 1}, 5, 0, 1);
  std::vector<std::size_t> perm(16);
  std::iota(perm.begin(), perm.end(), 0);
  Rng prng(6);
  perm = shuffled_indices(16, prng);
  // Output patch t holds input patch perm[t].
  NdArray<double> permuted({16, 16, 1});
  for (std::size_t t = 0; t < 16; ++t) {
    const std::size_t src = perm[t];
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t x = 0; x < 4; ++x)
        permuted[((t / 4) * 4 + y) * 16 + (t % 4) * 4 + x] = img[((src / 4) * 4 + y) * 16 + (src % 4) * 4 + x];
  }
  const auto e = enc.encode(img).value();
  const auto ep = enc.encode(permuted).value();
  for (std::size_t k = 0; k < 8; ++k) EXPECT_NEAR(ep[k], e[k], 1e-12) << "cls row";
  for (std::size_t t = 0; t < 16; ++t)
    for (std::size_t k = 0; k < 8; ++k) EXPECT_NEAR(ep[(1 + t) * 8 + k], e[(1 + perm[t]) * 8 + k], 1e-12);
}

TEST(Encoder, EndToEndGradientDepth2) {
  // depth 2, N = 16, D = 32 in 64-bit.
  auto cfg = tiny(16, 4, 32, 4, 2);
  ParameterStore<double> store;
  Rng rng(7);
  VitEncoder<double> enc(cfg, store, rng);
  const auto img = random_array<double>({16, 16, 1}, 8, 0, 1);
  const auto w = random_array<double>({17, 32}, 9);
  GradCheckProblem<double> problem{[&] { return ops::sum_product(enc.encode(img), w); }, {}};
  GradCheckOptions options;
  options.eps = 1e-5;
  options.tolerance = 1e-5;
  options.samples_per_parameter = 6;
  options.directions = 1;
  const auto report = grad_check(problem, store, options);
  for (const auto& p : report.parameters) EXPECT_TRUE(p.passed) << p.name << " " << p.max_rel_err;
}
