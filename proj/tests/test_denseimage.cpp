#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "din/denseimage.hpp"
#include "din/testing/oracles.hpp"

namespace din {
namespace {

using Indices = std::vector<std::size_t>;

ReductionLayer identity_layer(std::size_t dim) {
  ReductionLayer layer{Matrix(dim, dim), Vector(dim, 0.0)};
  for (std::size_t i = 0; i < dim; ++i) layer.weights(i, i) = 1.0;
  return layer;
}

TEST(SampleSegments, EvalCenter) {
  Rng rng(0);
  EXPECT_EQ(sample_segments(8, 8, SamplingMode::eval_center, rng), (Indices{0, 1, 2, 3, 4, 5, 6, 7}));
  EXPECT_EQ(sample_segments(16, 8, SamplingMode::eval_center, rng),
            (Indices{0, 2, 4, 6, 8, 10, 12, 14}));
  EXPECT_EQ(sample_segments(25, 4, SamplingMode::eval_center, rng), (Indices{2, 8, 14, 21}));
}

TEST(SampleSegments, ShortVideoRepeatsFrames) {
  // Segments [0,0) [0,0) [0,1) [1,1) [1,1) [1,2) [2,2) [2,3): empty ones take min(start, T-1).
  Rng rng(0);
  EXPECT_EQ(sample_segments(3, 8, SamplingMode::eval_center, rng), (Indices{0, 0, 0, 1, 1, 1, 2, 2}));
  EXPECT_EQ(sample_segments(1, 4, SamplingMode::train_random, rng), (Indices{0, 0, 0, 0}));
}

TEST(SampleSegments, RejectsEmpty) {
  Rng rng(0);
  EXPECT_THROW(sample_segments(0, 8, SamplingMode::eval_center, rng), std::invalid_argument);
  EXPECT_THROW(sample_segments(8, 0, SamplingMode::eval_center, rng), std::invalid_argument);
}

TEST(SampleSegments, EvalIgnoresRng) {
  Rng a(1), b(999);
  for (std::size_t t = 1; t < 40; ++t)
    EXPECT_EQ(sample_segments(t, 8, SamplingMode::eval_center, a),
              sample_segments(t, 8, SamplingMode::eval_center, b));
}

TEST(SampleSegments, RandomStaysInSegment) {
  Rng rng(77);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t t = 1 + rng.uniform_index(64);
    const std::size_t n = 1 + rng.uniform_index(64);
    const Indices idx = sample_segments(t, n, SamplingMode::train_random, rng);
    ASSERT_EQ(idx.size(), n);
    ASSERT_TRUE(std::is_sorted(idx.begin(), idx.end()));
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t start = s * t / n;
      const std::size_t end = (s + 1) * t / n;
      ASSERT_LT(idx[s], t);
      if (end > start) {
        ASSERT_GE(idx[s], start);
        ASSERT_LT(idx[s], end);
      }
    }
  }
}

TEST(ReduceFrame, Examples) {
  ReductionLayer zero{Matrix(3, 2), Vector{0.25, -1.0}};
  EXPECT_EQ(reduce_frame(Vector{1, 2, 3}, zero), (Vector{0.25, -1.0}));

  ReductionLayer sum{Matrix::from_rows({{1}, {1}}), Vector{0}};
  EXPECT_EQ(reduce_frame(Vector{3, 4}, sum), (Vector{7}));
  EXPECT_THROW(reduce_frame(Vector{3, 4, 5}, sum), std::invalid_argument);
}

TEST(ReduceFrame, MatchesNaiveLoop) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    ReductionLayer layer{testing::random_matrix(5, 3, rng), Vector{rng.normal(), rng.normal(), rng.normal()}};
    Vector raw(5);
    for (double& v : raw) v = rng.normal();
    const Vector out = reduce_frame(raw, layer);
    for (std::size_t j = 0; j < 3; ++j) {
      double expected = layer.bias[j];
      for (std::size_t d = 0; d < 5; ++d) expected += raw[d] * layer.weights(d, j);
      EXPECT_NEAR(out[j], expected, 1e-12);
    }
  }
}

TEST(Encode, IdentityReductionCopiesFrames) {
  Rng rng(0);
  const FrameFeatureSequence seq{Matrix::from_rows({{1, 2}, {3, 4}})};
  const DenseImage img = encode(seq, identity_layer(2), 2, SamplingMode::eval_center, rng);
  EXPECT_EQ(img.X, seq.features);
}

TEST(Encode, DefaultShape) {
  Rng rng(1);
  const FrameFeatureSequence seq = testing::random_sequence(30, 1024, rng);
  ReductionLayer layer{Matrix(1024, 256), Vector(256, 0.0)};
  const DenseImage img = encode(seq, layer, 8, SamplingMode::eval_center, rng);
  EXPECT_EQ(img.X.rows(), 8u);
  EXPECT_EQ(img.X.cols(), 256u);
}

TEST(Encode, RejectsDimMismatch) {
  Rng rng(0);
  const FrameFeatureSequence seq{Matrix(4, 3, 1.0)};
  EXPECT_THROW(encode(seq, identity_layer(2), 4, SamplingMode::eval_center, rng), std::invalid_argument);
}

TEST(Encode, PermutingFramesPermutesRows) {
  Rng rng(12);
  const std::size_t n = 6, dim = 3;
  for (int trial = 0; trial < 50; ++trial) {
    const FrameFeatureSequence seq = testing::random_sequence(n, dim, rng);
    Indices perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(perm);
    FrameFeatureSequence permuted{Matrix(n, dim)};
    for (std::size_t i = 0; i < n; ++i)
      std::copy(seq.features.row(perm[i]).begin(), seq.features.row(perm[i]).end(),
                permuted.features.row(i).begin());
    const auto layer = identity_layer(dim);
    const Matrix a = encode(seq, layer, n, SamplingMode::eval_center, rng).X;
    const Matrix b = encode(permuted, layer, n, SamplingMode::eval_center, rng).X;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < dim; ++j) ASSERT_EQ(b(i, j), a(perm[i], j));
  }
}

TEST(Encode, ReversingFramesReversesRows) {
  Rng rng(2);
  const FrameFeatureSequence seq = testing::random_sequence(5, 4, rng);
  FrameFeatureSequence reversed{Matrix(5, 4)};
  for (std::size_t i = 0; i < 5; ++i)
    std::copy(seq.features.row(4 - i).begin(), seq.features.row(4 - i).end(),
              reversed.features.row(i).begin());
  ReductionLayer layer{testing::random_matrix(4, 2, rng), Vector{0.1, 0.2}};
  const Matrix a = encode(seq, layer, 5, SamplingMode::eval_center, rng).X;
  const Matrix b = encode(reversed, layer, 5, SamplingMode::eval_center, rng).X;
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 2; ++j) EXPECT_EQ(b(i, j), a(4 - i, j));
}

TEST(Encode, PerturbingOneFrameChangesOneRow) {
  Rng rng(21);
  const std::size_t n = 8, dim = 4;
  const FrameFeatureSequence seq = testing::random_sequence(n, dim, rng);
  const auto layer = identity_layer(dim);
  const Matrix base = encode(seq, layer, n, SamplingMode::eval_center, rng).X;
  for (std::size_t f = 0; f < n; ++f) {
    FrameFeatureSequence bumped = seq;
    bumped.features(f, rng.uniform_index(dim)) += 0.5;
    const Matrix out = encode(bumped, layer, n, SamplingMode::eval_center, rng).X;
    for (std::size_t i = 0; i < n; ++i) {
      const bool changed = !std::equal(out.row(i).begin(), out.row(i).end(), base.row(i).begin());
      EXPECT_EQ(changed, i == f) << "frame " << f << " row " << i;
    }
  }
}

TEST(ReduceBackward, Examples) {
  ReductionLayer layer{Matrix::from_rows({{1}, {1}}), Vector{0}};
  const auto zero = reduce_backward(Vector{3, 4}, layer, Vector{0});
  EXPECT_EQ(zero.weights, Matrix(2, 1));
  EXPECT_EQ(zero.bias, (Vector{0}));
  EXPECT_EQ(zero.input, (Vector{0, 0}));

  const auto g = reduce_backward(Vector{3, 4}, layer, Vector{1});
  EXPECT_EQ(g.weights, Matrix::from_rows({{3}, {4}}));
  EXPECT_EQ(g.bias, (Vector{1}));
  EXPECT_EQ(g.input, (Vector{1, 1}));
  EXPECT_THROW(reduce_backward(Vector{3}, layer, Vector{1}), std::invalid_argument);
}

TEST(ReduceBackward, MatchesFiniteDifferences) {
  // Scalar probe: L = sum_j probe_j * reduce_frame(raw)_j.
  Rng rng(31);
  const double eps = 1e-5;
  for (int trial = 0; trial < 20; ++trial) {
    ReductionLayer layer{testing::random_matrix(5, 3, rng), Vector{rng.normal(), rng.normal(), rng.normal()}};
    Vector raw(5), probe(3);
    for (double& v : raw) v = rng.normal();
    for (double& v : probe) v = rng.normal();
    auto loss = [&] { return dot(reduce_frame(raw, layer), probe); };
    const auto g = reduce_backward(raw, layer, probe);

    auto check = [&](double& x, double analytic) {
      const double saved = x;
      x = saved + eps;
      const double up = loss();
      x = saved - eps;
      const double down = loss();
      x = saved;
      EXPECT_LT(testing::relative_error(analytic, (up - down) / (2 * eps)), 1e-6);
    };
    for (std::size_t d = 0; d < 5; ++d)
      for (std::size_t j = 0; j < 3; ++j) check(layer.weights(d, j), g.weights(d, j));
    for (std::size_t j = 0; j < 3; ++j) check(layer.bias[j], g.bias[j]);
    for (std::size_t d = 0; d < 5; ++d) check(raw[d], g.input[d]);
  }
}

}  // namespace
}  // namespace din
