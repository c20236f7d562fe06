#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "qffn/error.hpp"

namespace qffn {

using Complex = std::complex<double>;

inline constexpr int kMaxQubits = 12;

/// Dense statevector of a small qubit register.
///
/// Basis ordering is little-endian: qubit q corresponds to bit q of the basis
/// index, so qubit 0 is the least significant bit. All gates act in place.
class StateVector {
public:
  /// |0…0⟩ on `num_qubits` wires.
  explicit StateVector(int num_qubits) : num_qubits_(checked_width(num_qubits)) {
    amplitudes_.assign(std::size_t{1} << num_qubits_, Complex{0.0, 0.0});
    amplitudes_[0] = Complex{1.0, 0.0};
  }

  /// Wraps an explicit amplitude array. The length must be a power of two and
  /// the caller is responsible for normalization.
  static StateVector from_amplitudes(std::vector<Complex> amplitudes) {
    const std::size_t dim = amplitudes.size();
    if (dim < 2 || (dim & (dim - 1)) != 0) {
      throw ShapeError("amplitude count " + std::to_string(dim) +
                       " is not a power of two >= 2");
    }
    int n = 0;
    while ((std::size_t{1} << n) < dim) ++n;
    StateVector s(n);
    s.amplitudes_ = std::move(amplitudes);
    return s;
  }

  int num_qubits() const noexcept { return num_qubits_; }
  std::size_t dimension() const noexcept { return amplitudes_.size(); }
  std::span<const Complex> amplitudes() const noexcept { return amplitudes_; }

  double norm_squared() const noexcept {
    double acc = 0.0;
    for (const auto& a : amplitudes_) acc += std::norm(a);
    return acc;
  }

  /// RY(θ) = [[cos θ/2, −sin θ/2], [sin θ/2, cos θ/2]].
  StateVector& apply_ry(int qubit, double theta) {
    const std::size_t mask = bit(qubit);
    const double c = std::cos(0.5 * theta);
    const double s = std::sin(0.5 * theta);
    for (std::size_t i = 0; i < amplitudes_.size(); ++i) {
      if (i & mask) continue;
      const Complex a0 = amplitudes_[i];
      const Complex a1 = amplitudes_[i | mask];
      amplitudes_[i] = c * a0 - s * a1;
      amplitudes_[i | mask] = s * a0 + c * a1;
    }
    return *this;
  }

  /// RZ(θ) = diag(e^{−iθ/2}, e^{+iθ/2}).
  StateVector& apply_rz(int qubit, double theta) {
    const std::size_t mask = bit(qubit);
    const Complex lo = std::polar(1.0, -0.5 * theta);
    const Complex hi = std::polar(1.0, 0.5 * theta);
    for (std::size_t i = 0; i < amplitudes_.size(); ++i) {
      amplitudes_[i] *= (i & mask) ? hi : lo;
    }
    return *this;
  }

  StateVector& apply_cnot(int control, int target) {
    const std::size_t cmask = bit(control);
    const std::size_t tmask = bit(target);
    if (cmask == tmask) throw std::out_of_range("cnot: control equals target");
    for (std::size_t i = 0; i < amplitudes_.size(); ++i) {
      if ((i & cmask) && !(i & tmask)) std::swap(amplitudes_[i], amplitudes_[i | tmask]);
    }
    return *this;
  }

  StateVector& apply_cz(int a, int b) {
    const std::size_t amask = bit(a);
    const std::size_t bmask = bit(b);
    if (amask == bmask) throw std::out_of_range("cz: qubits must differ");
    for (std::size_t i = 0; i < amplitudes_.size(); ++i) {
      if ((i & amask) && (i & bmask)) amplitudes_[i] = -amplitudes_[i];
    }
    return *this;
  }

  /// ⟨Z_qubit⟩ = Σ |a_i|² · (+1 if bit clear, −1 if set).
  double expectation_z(int qubit) const {
    const std::size_t mask = bit(qubit);
    double acc = 0.0;
    for (std::size_t i = 0; i < amplitudes_.size(); ++i) {
      const double p = std::norm(amplitudes_[i]);
      acc += (i & mask) ? -p : p;
    }
    return acc;
  }

private:
  static int checked_width(int n) {
    if (n < 1 || n > kMaxQubits) {
      throw ConfigError("num_qubits must be in [1, " + std::to_string(kMaxQubits) +
                        "], got " + std::to_string(n));
    }
    return n;
  }

  std::size_t bit(int qubit) const {
    if (qubit < 0 || qubit >= num_qubits_) {
      throw std::out_of_range("qubit index " + std::to_string(qubit) +
                              " out of range for " + std::to_string(num_qubits_) +
                              "-qubit register");
    }
    return std::size_t{1} << qubit;
  }

  int num_qubits_;
  std::vector<Complex> amplitudes_;
};

inline StateVector zero_state(int num_qubits) { return StateVector(num_qubits); }

}  // namespace qffn
