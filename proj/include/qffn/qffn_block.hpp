#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "qffn/error.hpp"
#include "qffn/pqc.hpp"
#include "qffn/tensor.hpp"

namespace qffn {

/// Quantum feedforward block: hidden→4 projection, PQC, 4→hidden projection,
/// plus the internal residual. Only the [CLS] row is transformed; every other
/// row passes through untouched.
struct QffnBlock {
  Matrix w_in;   // [q × hidden]
  Matrix b_in;   // [1 × q]
  Matrix w_out;  // [hidden × q]
  Matrix b_out;  // [1 × hidden]
  Matrix theta;  // [1 × P]
  PqcConfig pqc;
  bool residual = true;

  std::size_t hidden_dim() const noexcept { return w_in.cols(); }
  std::size_t quantum_dim() const noexcept { return w_in.rows(); }
};

/// Zero-valued block of the right shapes; used for gradient accumulators.
inline QffnBlock make_qffn_block(std::size_t hidden, const PqcConfig& pqc, bool residual) {
  validate(pqc);
  const auto q = static_cast<std::size_t>(pqc.num_qubits);
  return QffnBlock{Matrix(q, hidden), Matrix(1, q),
                   Matrix(hidden, q), Matrix(1, hidden),
                   Matrix(1, pqc_param_count(pqc)), pqc, residual};
}

/// Projections ~ N(0, 0.02²), biases zero, angles ~ U(−π, π).
template <class Rng>
QffnBlock init_qffn_block(std::size_t hidden, const PqcConfig& pqc, bool residual, Rng& rng) {
  QffnBlock block = make_qffn_block(hidden, pqc, residual);
  std::normal_distribution<double> gauss(0.0, 0.02);
  for (auto& v : block.w_in.flat()) v = gauss(rng);
  for (auto& v : block.w_out.flat()) v = gauss(rng);
  block.theta.storage() = init_pqc_params(pqc, rng);
  return block;
}

/// 4·h + 4 + h·4 + h + P. For h = 128 that is 516 + 640 + P.
inline std::size_t qffn_param_count(const QffnBlock& block) {
  return block.w_in.size() + block.b_in.size() + block.w_out.size() + block.b_out.size() +
         block.theta.size();
}

/// Weights of a position-wise hidden→inner→hidden feedforward layer.
inline std::size_t classical_ffn_param_count(std::size_t hidden, std::size_t inner) {
  return hidden * inner + inner + inner * hidden + hidden;
}

namespace detail {

inline void check_qffn_input(const QffnBlock& block, const Matrix& hidden,
                             std::size_t cls_index) {
  if (hidden.cols() != block.hidden_dim()) {
    throw ShapeError("qffn: hidden width " + std::to_string(hidden.cols()) +
                     " does not match block width " + std::to_string(block.hidden_dim()));
  }
  if (cls_index >= hidden.rows()) {
    throw ShapeError("qffn: cls_index " + std::to_string(cls_index) +
                     " out of range for sequence of " + std::to_string(hidden.rows()));
  }
}

inline std::vector<double> project_down(const QffnBlock& block, std::span<const double> h) {
  std::vector<double> z(block.quantum_dim());
  for (std::size_t j = 0; j < z.size(); ++j) {
    double acc = block.b_in(0, j);
    const auto wj = block.w_in.row(j);
    for (std::size_t k = 0; k < h.size(); ++k) acc += wj[k] * h[k];
    z[j] = acc;
  }
  return z;
}

}  // namespace detail

inline Matrix qffn_forward(const QffnBlock& block, const Matrix& hidden, std::size_t cls_index) {
  detail::check_qffn_input(block, hidden, cls_index);
  Matrix out = hidden;
  const auto h = hidden.row(cls_index);
  const auto z = detail::project_down(block, h);
  const auto q = pqc_forward(block.pqc, block.theta.flat(), z);
  auto row = out.row(cls_index);
  for (std::size_t i = 0; i < row.size(); ++i) {
    double y = block.b_out(0, i);
    const auto wi = block.w_out.row(i);
    for (std::size_t j = 0; j < q.size(); ++j) y += wi[j] * q[j];
    row[i] = block.residual ? h[i] + y : y;
  }
  return out;
}

struct QffnGrads {
  Matrix w_in, b_in, w_out, b_out, theta;
  Matrix input;  // [seq × hidden]
};

/// Chain rule through projection → PQC (parameter-shift Jacobians) → projection.
/// Non-[CLS] rows receive the upstream gradient unchanged.
inline QffnGrads qffn_backward(const QffnBlock& block, const Matrix& hidden,
                               std::size_t cls_index, const Matrix& upstream) {
  detail::check_qffn_input(block, hidden, cls_index);
  if (!upstream.same_shape(hidden)) throw ShapeError("qffn_backward: upstream shape mismatch");

  const std::size_t nq = block.quantum_dim();
  const std::size_t width = block.hidden_dim();
  QffnGrads g{Matrix(nq, width), Matrix(1, nq), Matrix(width, nq), Matrix(1, width),
              Matrix(1, block.theta.size()), upstream};

  const auto h = hidden.row(cls_index);
  const auto up = upstream.row(cls_index);
  const auto z = detail::project_down(block, h);
  const auto jac = pqc_gradients(block.pqc, block.theta.flat(), z);
  const auto& q = jac.values;

  std::vector<double> dq(nq, 0.0);
  for (std::size_t i = 0; i < width; ++i) {
    g.b_out(0, i) = up[i];
    for (std::size_t j = 0; j < nq; ++j) {
      g.w_out(i, j) = up[i] * q[j];
      dq[j] += block.w_out(i, j) * up[i];
    }
  }
  for (std::size_t p = 0; p < block.theta.size(); ++p) {
    double acc = 0.0;
    for (std::size_t j = 0; j < nq; ++j) acc += jac.theta(j, p) * dq[j];
    g.theta(0, p) = acc;
  }
  std::vector<double> dz(nq, 0.0);
  for (std::size_t k = 0; k < nq; ++k) {
    for (std::size_t j = 0; j < nq; ++j) dz[k] += jac.input(j, k) * dq[j];
  }
  auto din = g.input.row(cls_index);
  for (std::size_t i = 0; i < width; ++i) din[i] = block.residual ? up[i] : 0.0;
  for (std::size_t k = 0; k < nq; ++k) {
    g.b_in(0, k) = dz[k];
    for (std::size_t i = 0; i < width; ++i) {
      g.w_in(k, i) = dz[k] * h[i];
      din[i] += block.w_in(k, i) * dz[k];
    }
  }
  return g;
}

}  // namespace qffn
