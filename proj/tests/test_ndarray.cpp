#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "anovit/autograd.hpp"
#include "anovit/ndarray.hpp"

using namespace anovit;

TEST(NdArray, SizeIsProductOfShape) {
  NdArray<float> a({2, 3, 4}, 1.5f);
  EXPECT_EQ(a.size(), 24u);
  EXPECT_EQ(a.rank(), 3u);
  for (float v : a.data()) EXPECT_EQ(v, 1.5f);
}

TEST(NdArray, RejectsZeroExtentAndDataMismatch) {
  EXPECT_THROW(NdArray<float>({2, 0}), DimensionError);
  EXPECT_THROW(NdArray<float>(Shape{}), DimensionError);
  EXPECT_THROW(NdArray<float>({2, 2}, std::vector<float>{1, 2, 3}), DimensionError);
}

TEST(NdArray, RowMajorIndexing) {
  NdArray<double> a({2, 3}, std::vector<double>{0, 1, 2, 3, 4, 5});
  EXPECT_EQ(a.at({1, 2}), 5);
  EXPECT_EQ(a.at({0, 1}), 1);
  EXPECT_THROW(a.at({2, 0}), DimensionError);
  EXPECT_THROW(a.at({0}), DimensionError);
}

TEST(NdArray, ReshapeKeepsDataAndChecksSize) {
  NdArray<double> a({2, 3}, std::vector<double>{0, 1, 2, 3, 4, 5});
  auto b = a.reshaped({3, 2});
  EXPECT_EQ(b.storage(), a.storage());
  EXPECT_THROW(a.reshaped({4, 2}), DimensionError);
}

TEST(NdArray, AllFinite) {
  NdArray<float> a({3});
  EXPECT_TRUE(a.all_finite());
  a[1] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_FALSE(a.all_finite());
  a[1] = std::numeric_limits<float>::infinity();
  EXPECT_FALSE(a.all_finite());
}

TEST(NdArray, ShapeString) { EXPECT_EQ(shape_str({2, 3, 4}), "[2x3x4]"); }

TEST(ParameterStore, NamesUniqueAndOrderDeterministic) {
  ParameterStore<float> store;
  store.add("b", NdArray<float>({2}));
  store.add("a", NdArray<float>({3}));
  store.add("c", NdArray<float>({1}));
  EXPECT_THROW(store.add("a", NdArray<float>({1})), ConfigError);
  std::vector<std::string> names;
  for (const auto& p : store) names.push_back(p.name);
  EXPECT_EQ(names, (std::vector<std::string>{"b", "a", "c"}));
  EXPECT_EQ(store.scalar_count(), 6u);
}

TEST(ParameterStore, LookupTotalOverRegisteredNames) {
  ParameterStore<float> store;
  auto& p = store.add("w", NdArray<float>({2, 2}));
  EXPECT_EQ(&store.get("w"), &p);
  EXPECT_TRUE(store.contains("w"));
  EXPECT_FALSE(store.contains("x"));
  EXPECT_THROW(store.get("x"), ConfigError);
  EXPECT_EQ(p.grad.shape(), p.value.shape());
}
