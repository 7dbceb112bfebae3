#include <gtest/gtest.h>

#include "anovit/cae.hpp"
#include "anovit/training.hpp"
#include "test_support.hpp"

using namespace anovit;
using anovit::testing::random_array;

TEST(Cae, DeskShapeAndRange) {
  ConvAutoencoder<float> cae(CaeConfig::desk(), 1);
  EXPECT_EQ(CaeConfig::desk().latent_shape(), (Shape{2, 2, 64}));
  const auto x = random_array<float>({3, 32, 32, 1}, 2, 0, 1);
  const auto y = cae.reconstruct(x);
  ASSERT_EQ(y.shape(), x.shape());
  for (float v : y.data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Cae, ZeroParametersGiveHalf) {
  ConvAutoencoder<float> cae(CaeConfig::desk(), 1);
  for (auto& p : cae.parameters()) p.value.fill(0);
  const auto y = cae.reconstruct(random_array<float>({32, 32, 1}, 2, 0, 1));
  for (float v : y.data()) EXPECT_EQ(v, 0.5f);
}

TEST(Cae, MultiChannelAndGeometryErrors) {
  ConvAutoencoder<float> rgb(CaeConfig::desk(32, 32, 3), 1);
  EXPECT_EQ(rgb.reconstruct(random_array<float>({32, 32, 3}, 2, 0, 1)).shape(), (Shape{32, 32, 3}));
  auto bad = CaeConfig::desk();
  bad.decoder.pop_back();
  EXPECT_FALSE(bad.violations().empty());
  EXPECT_THROW(ConvAutoencoder<float>(bad, 1), ConfigError);
}

TEST(Cae, ParameterCountWithinTwiceOfAnoVit) {
  AnoVit<float> vit(EncoderConfig::desk(), DecoderConfig::default_for(EncoderConfig::desk()), 1);
  ConvAutoencoder<float> cae(CaeConfig::desk(), 1);
  const auto a = vit.parameters().scalar_count();
  const auto c = cae.parameters().scalar_count();
  EXPECT_NO_THROW(check_parameter_parity(a, c)) << a << " vs " << c;
  EXPECT_THROW(check_parameter_parity(a, a * 3), ConfigError);
  EXPECT_THROW(check_parameter_parity(a, a / 3), ConfigError);
}

TEST(Cae, SameScoringInterfaceAsAnoVit) {
  std::unique_ptr<ReconstructionModel<float>> models[] = {
      std::make_unique<ConvAutoencoder<float>>(CaeConfig::desk(), 1),
      std::make_unique<AnoVit<float>>(EncoderConfig::desk(), DecoderConfig::default_for(EncoderConfig::desk()), 1)};
  const auto x = random_array<float>({32, 32, 1}, 2, 0, 1);
  for (auto& m : models) {
    EXPECT_EQ(m->image_shape(), (Shape{32, 32, 1}));
    EXPECT_EQ(m->reconstruct(x).shape(), x.shape());
  }
}

TEST(Cae, TwoBlockReconstructionLossGradient) {
  ConvAutoencoder<double> cae(CaeConfig::desk_blocks(2), 3);
  const auto batch = random_array<double>({2, 32, 32, 1}, 4, 0, 1);
  GradCheckOptions options;
  options.eps = 1e-5;
  options.tolerance = 1e-5;
  options.samples_per_parameter = 8;
  options.directions = 2;
  const auto report = check_reconstruction_gradients(cae, batch, LossReduction::sum_per_image, options);
  for (const auto& p : report.parameters) EXPECT_TRUE(p.passed) << p.name << " " << p.max_rel_err;
}
