#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracle.hpp"
#include "qffn/qffn_block.hpp"

namespace {

using qffn::Matrix;
using qffn::PqcConfig;
using qffn::QffnBlock;
using qffn::Variant;

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Matrix m(r, c);
  for (auto& v : m.flat()) v = g(rng);
  return m;
}

// Larger projections than the default init so the branch is not negligible.
QffnBlock random_block(std::size_t hidden, const PqcConfig& pqc, bool residual,
                       std::mt19937_64& rng) {
  auto b = qffn::init_qffn_block(hidden, pqc, residual, rng);
  b.w_in = random_matrix(b.w_in.rows(), b.w_in.cols(), rng, 0.3);
  b.b_in = random_matrix(1, b.b_in.cols(), rng, 0.3);
  b.w_out = random_matrix(b.w_out.rows(), b.w_out.cols(), rng, 0.3);
  b.b_out = random_matrix(1, b.b_out.cols(), rng, 0.3);
  return b;
}

// Three stages written out from the block description, using the dense oracle circuit.
std::vector<double> reference_cls(const QffnBlock& b, std::span<const double> h) {
  std::vector<double> z(4);
  for (int j = 0; j < 4; ++j) {
    z[j] = b.b_in(0, j);
    for (std::size_t k = 0; k < h.size(); ++k) z[j] += b.w_in(j, k) * h[k];
  }
  const auto q = oracle::ansatz_z(b.pqc.variant == Variant::Optimized, b.pqc.num_layers,
                                  b.theta.storage(), z);
  std::vector<double> out(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) {
    double y = b.b_out(0, i);
    for (int j = 0; j < 4; ++j) y += b.w_out(i, j) * q[j];
    out[i] = (b.residual ? h[i] : 0.0) + y;
  }
  return out;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

TEST(QffnBlock, ParamCounts) {
  std::mt19937_64 rng(1);
  EXPECT_EQ(qffn::qffn_param_count(qffn::init_qffn_block(128, {Variant::Optimized, 4, 4}, true, rng)), 1188u);
  EXPECT_EQ(qffn::qffn_param_count(qffn::init_qffn_block(128, {Variant::Optimized, 1, 4}, true, rng)), 1164u);
  EXPECT_EQ(qffn::classical_ffn_param_count(128, 512), 131712u);
  for (int layers : {1, 2, 4, 8}) {
    const auto b = qffn::make_qffn_block(128, {Variant::Optimized, layers, 4}, true);
    EXPECT_EQ(qffn::qffn_param_count(b), 516u + 640u + 8u * static_cast<std::size_t>(layers));
    const auto v = qffn::make_qffn_block(128, {Variant::Vanilla, layers, 4}, false);
    EXPECT_EQ(qffn::qffn_param_count(v), 516u + 640u + 4u * static_cast<std::size_t>(layers));
  }
}

TEST(QffnBlock, ZeroBranchIsIdentity) {
  std::mt19937_64 rng(2);
  auto b = qffn::init_qffn_block(128, {Variant::Optimized, 2, 4}, true, rng);
  b.w_out.fill(0.0);
  b.b_out.fill(0.0);
  const auto h = random_matrix(5, 128, rng);
  EXPECT_EQ(qffn::qffn_forward(b, h, 0), h);
  EXPECT_EQ(qffn::qffn_forward(b, h, 3), h);
}

TEST(QffnBlock, OnlyClsRowChanges) {
  std::mt19937_64 rng(3);
  const auto b = random_block(128, {Variant::Optimized, 1, 4}, true, rng);
  const auto h = random_matrix(3, 128, rng);
  const auto out = qffn::qffn_forward(b, h, 0);
  for (std::size_t r = 1; r < 3; ++r) {
    for (std::size_t c = 0; c < 128; ++c) EXPECT_EQ(out(r, c), h(r, c));
  }
  bool changed = false;
  for (std::size_t c = 0; c < 128; ++c) changed |= out(0, c) != h(0, c);
  EXPECT_TRUE(changed);
}

TEST(QffnBlock, PerturbingOtherRowsIsLocal) {
  std::mt19937_64 rng(4);
  const auto b = random_block(128, {Variant::Optimized, 2, 4}, true, rng);
  const auto h = random_matrix(4, 128, rng);
  const auto base = qffn::qffn_forward(b, h, 0);
  auto h2 = h;
  h2(2, 17) += 0.5;
  const auto out = qffn::qffn_forward(b, h2, 0);
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 128; ++c) {
      if (r == 2 && c == 17) {
        EXPECT_EQ(out(r, c), base(r, c) + 0.5);
      } else {
        EXPECT_EQ(out(r, c), base(r, c));
      }
    }
  }
}

TEST(QffnBlock, MatchesCompositionalReference) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 12; ++trial) {
    const Variant v = trial % 3 == 2 ? Variant::Vanilla : Variant::Optimized;
    const auto b = random_block(128, {v, 1 + trial % 4, 4}, v == Variant::Optimized, rng);
    const auto h = random_matrix(3, 128, rng);
    const auto out = qffn::qffn_forward(b, h, 1);
    const auto ref = reference_cls(b, h.row(1));
    for (std::size_t c = 0; c < 128; ++c) EXPECT_NEAR(out(1, c), ref[c], 1e-12);
  }
}

TEST(QffnBlock, ShapeErrors) {
  const auto b = qffn::make_qffn_block(128, {Variant::Optimized, 1, 4}, true);
  EXPECT_THROW(qffn::qffn_forward(b, Matrix(3, 64), 0), qffn::ShapeError);
  EXPECT_THROW(qffn::qffn_forward(b, Matrix(3, 128), 3), qffn::ShapeError);
  EXPECT_THROW(qffn::qffn_backward(b, Matrix(3, 128), 0, Matrix(2, 128)), qffn::ShapeError);
}

TEST(QffnBlock, ZeroBranchBackwardIsResidualPath) {
  std::mt19937_64 rng(6);
  auto b = qffn::init_qffn_block(128, {Variant::Optimized, 1, 4}, true, rng);
  b.w_out.fill(0.0);
  const auto h = random_matrix(3, 128, rng);
  const Matrix ones(3, 128, 1.0);
  const auto g = qffn::qffn_backward(b, h, 0, ones);
  EXPECT_EQ(g.input, ones);
  for (double v : g.theta.flat()) EXPECT_EQ(v, 0.0);
  for (double v : g.w_in.flat()) EXPECT_EQ(v, 0.0);
  for (double v : g.b_out.flat()) EXPECT_EQ(v, 1.0);
  EXPECT_EQ(g.theta.size(), 8u);
}

// Scalar loss = Σ output ⊙ upstream, differentiated by central differences.
TEST(QffnBlock, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  constexpr std::size_t H = 16;
  for (int trial = 0; trial < 4; ++trial) {
    const Variant v = trial == 3 ? Variant::Vanilla : Variant::Optimized;
    auto b = random_block(H, {v, 1 + trial, 4}, v == Variant::Optimized, rng);
    const auto h = random_matrix(3, H, rng);
    const auto up = random_matrix(3, H, rng);
    const auto g = qffn::qffn_backward(b, h, 0, up);

    auto loss = [&](const QffnBlock& blk, const Matrix& x) {
      const auto out = qffn::qffn_forward(blk, x, 0);
      double s = 0.0;
      for (std::size_t i = 0; i < out.size(); ++i) s += out.flat()[i] * up.flat()[i];
      return s;
    };
    auto check = [&](Matrix QffnBlock::*field, const Matrix& grad) {
      const auto fd = oracle::central_diff(
          [&](const std::vector<double>& p) {
            auto copy = b;
            (copy.*field).storage() = p;
            return loss(copy, h);
          },
          (b.*field).storage(), 1e-5);
      for (std::size_t i = 0; i < fd.size(); ++i) EXPECT_LE(rel_err(grad.flat()[i], fd[i]), 1e-5);
    };
    check(&QffnBlock::w_in, g.w_in);
    check(&QffnBlock::b_in, g.b_in);
    check(&QffnBlock::w_out, g.w_out);
    check(&QffnBlock::b_out, g.b_out);
    check(&QffnBlock::theta, g.theta);

    const auto fd_in = oracle::central_diff(
        [&](const std::vector<double>& p) { return loss(b, Matrix(3, H, p)); }, h.storage(), 1e-5);
    for (std::size_t i = 0; i < fd_in.size(); ++i) EXPECT_LE(rel_err(g.input.flat()[i], fd_in[i]), 1e-5);
  }
}

TEST(QffnBlock, ClsJacobianIsIdentityPlusBranch) {
  std::mt19937_64 rng(8);
  constexpr std::size_t H = 8;
  const auto with = random_block(H, {Variant::Optimized, 2, 4}, true, rng);
  auto without = with;
  without.residual = false;
  const auto h = random_matrix(2, H, rng);
  for (std::size_t out_i = 0; out_i < H; ++out_i) {
    auto col = [&](const QffnBlock& b) {
      return oracle::central_diff(
          [&](const std::vector<double>& p) {
            auto x = h;
            for (std::size_t k = 0; k < H; ++k) x(0, k) = p[k];
            return qffn::qffn_forward(b, x, 0)(0, out_i);
          },
          std::vector<double>(h.row(0).begin(), h.row(0).end()), 1e-5);
    };
    const auto full = col(with);
    const auto branch = col(without);
    for (std::size_t k = 0; k < H; ++k) {
      EXPECT_NEAR(full[k] - (k == out_i ? 1.0 : 0.0), branch[k], 1e-8);
    }
    // The analytic input gradient for a one-hot upstream is the same row.
    Matrix up(2, H);
    up(0, out_i) = 1.0;
    const auto g = qffn::qffn_backward(with, h, 0, up);
    for (std::size_t k = 0; k < H; ++k) EXPECT_NEAR(g.input(0, k), full[k], 1e-8);
  }
}

}  // namespace
