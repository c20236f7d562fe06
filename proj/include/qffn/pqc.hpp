#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "qffn/error.hpp"
#include "qffn/state_vector.hpp"
#include "qffn/tensor.hpp"

namespace qffn {

/// Optimized: single RY(x) encoding, alternating CNOT-ring / CZ-pair
/// entanglers, trainable RZ then RY on every qubit.
/// Vanilla: RY(x) re-encoding in every layer, fixed CNOT ring, trainable RY only.
enum class Variant { Optimized, Vanilla };

inline const char* to_string(Variant v) {
  return v == Variant::Optimized ? "Optimized" : "Vanilla";
}

struct PqcConfig {
  Variant variant = Variant::Optimized;
  int num_layers = 1;
  int num_qubits = 4;

  friend bool operator==(const PqcConfig&, const PqcConfig&) = default;
};

inline bool is_standard_depth(int layers) {
  return layers == 1 || layers == 2 || layers == 4 || layers == 8;
}

inline void validate(const PqcConfig& config) {
  if (config.num_layers < 1) {
    throw ConfigError("pqc num_layers must be >= 1, got " +
                      std::to_string(config.num_layers));
  }
  if (config.num_qubits < 1 || config.num_qubits > kMaxQubits) {
    throw ConfigError("pqc num_qubits must be in [1, 12], got " +
                      std::to_string(config.num_qubits));
  }
}

/// Trainable angles per layer per qubit: two for Optimized, one for Vanilla.
inline std::size_t pqc_param_count(const PqcConfig& config) {
  validate(config);
  const std::size_t per_qubit = config.variant == Variant::Optimized ? 2 : 1;
  return per_qubit * static_cast<std::size_t>(config.num_qubits) *
         static_cast<std::size_t>(config.num_layers);
}

/// Angles drawn i.i.d. from U(−π, π).
template <class Rng>
std::vector<double> init_pqc_params(const PqcConfig& config, Rng& rng) {
  std::uniform_real_distribution<double> dist(-std::numbers::pi, std::numbers::pi);
  std::vector<double> theta(pqc_param_count(config));
  for (auto& t : theta) t = dist(rng);
  return theta;
}

enum class GateKind : std::uint8_t { RY, RZ, CNOT, CZ };

/// Where a rotation gate takes its angle from.
enum class AngleSource : std::uint8_t { None, Input, Theta };

struct Gate {
  GateKind kind;
  int q0;
  int q1 = -1;
  AngleSource source = AngleSource::None;
  std::size_t index = 0;  // into x or θ, depending on source

  friend bool operator==(const Gate&, const Gate&) = default;
};

/// Fixed two-qubit pattern of a layer. Even layers (0-indexed) use the CNOT
/// ring q0→q1→…→q(n−1)→q0; odd layers use CZ on (i, i+n/2), which for four
/// qubits is (0,2) and (1,3).
inline std::vector<Gate> layer_entangler(int layer_index, int num_qubits = 4) {
  std::vector<Gate> gates;
  if (num_qubits < 2) return gates;
  if (layer_index % 2 == 0) {
    if (num_qubits == 2) {
      gates.push_back({GateKind::CNOT, 0, 1});
      gates.push_back({GateKind::CNOT, 1, 0});
      return gates;
    }
    for (int q = 0; q < num_qubits; ++q) {
      gates.push_back({GateKind::CNOT, q, (q + 1) % num_qubits});
    }
  } else {
    const int half = num_qubits / 2;
    for (int q = 0; q < half; ++q) gates.push_back({GateKind::CZ, q, q + half});
  }
  return gates;
}

/// Flattened gate list of the ansatz. Trainable angles are indexed in
/// application order: Optimized layer k uses θ[8k + q] for RZ on qubit q and
/// θ[8k + 4 + q] for RY on qubit q (n = 4); Vanilla layer k uses θ[4k + q].
inline std::vector<Gate> build_circuit(const PqcConfig& config) {
  validate(config);
  const int n = config.num_qubits;
  std::vector<Gate> ops;
  std::size_t next_theta = 0;
  for (int layer = 0; layer < config.num_layers; ++layer) {
    const bool encode = config.variant == Variant::Vanilla || layer == 0;
    if (encode) {
      for (int q = 0; q < n; ++q) {
        ops.push_back({GateKind::RY, q, -1, AngleSource::Input, static_cast<std::size_t>(q)});
      }
    }
    const auto ent = layer_entangler(config.variant == Variant::Optimized ? layer : 0, n);
    ops.insert(ops.end(), ent.begin(), ent.end());
    if (config.variant == Variant::Optimized) {
      for (int q = 0; q < n; ++q) {
        ops.push_back({GateKind::RZ, q, -1, AngleSource::Theta, next_theta++});
      }
    }
    for (int q = 0; q < n; ++q) {
      ops.push_back({GateKind::RY, q, -1, AngleSource::Theta, next_theta++});
    }
  }
  return ops;
}

namespace detail {
inline thread_local std::uint64_t simulation_counter = 0;
}  // namespace detail

/// Number of full circuit simulations run on the calling thread.
inline std::uint64_t simulations_performed() noexcept { return detail::simulation_counter; }
inline void reset_simulation_count() noexcept { detail::simulation_counter = 0; }

/// Runs `ops` from |0…0⟩. When `shifted_op` is a valid index, that gate's
/// angle is offset by `shift`.
inline StateVector simulate(std::span<const Gate> ops, int num_qubits,
                            std::span<const double> theta, std::span<const double> x,
                            std::size_t shifted_op = static_cast<std::size_t>(-1),
                            double shift = 0.0) {
  ++detail::simulation_counter;
  StateVector state(num_qubits);
  for (std::size_t i = 0; i < ops.size(); ++i) {
    const Gate& g = ops[i];
    double angle = 0.0;
    if (g.source == AngleSource::Input) angle = x[g.index];
    if (g.source == AngleSource::Theta) angle = theta[g.index];
    if (i == shifted_op) angle += shift;
    switch (g.kind) {
      case GateKind::RY: state.apply_ry(g.q0, angle); break;
      case GateKind::RZ: state.apply_rz(g.q0, angle); break;
      case GateKind::CNOT: state.apply_cnot(g.q0, g.q1); break;
      case GateKind::CZ: state.apply_cz(g.q0, g.q1); break;
    }
  }
  return state;
}

inline void check_pqc_shapes(const PqcConfig& config, std::span<const double> theta,
                             std::span<const double> x) {
  const std::size_t expected = pqc_param_count(config);
  if (theta.size() != expected) {
    throw ShapeError("pqc params: expected " + std::to_string(expected) + " angles, got " +
                     std::to_string(theta.size()));
  }
  if (x.size() != static_cast<std::size_t>(config.num_qubits)) {
    throw ShapeError("pqc input: expected " + std::to_string(config.num_qubits) +
                     " features, got " + std::to_string(x.size()));
  }
}

inline std::vector<double> readout_z(const StateVector& state) {
  std::vector<double> z(static_cast<std::size_t>(state.num_qubits()));
  for (int q = 0; q < state.num_qubits(); ++q) z[q] = state.expectation_z(q);
  return z;
}

/// Final state of the ansatz for the given angles and input.
inline StateVector pqc_state(const PqcConfig& config, std::span<const double> theta,
                             std::span<const double> x) {
  check_pqc_shapes(config, theta, x);
  const auto ops = build_circuit(config);
  return simulate(ops, config.num_qubits, theta, x);
}

/// Per-qubit ⟨Z⟩ readout of the ansatz, each component in [−1, 1].
inline std::vector<double> pqc_forward(const PqcConfig& config, std::span<const double> theta,
                                       std::span<const double> x) {
  return readout_z(pqc_state(config, theta, x));
}

struct PqcJacobians {
  std::vector<double> values;  // baseline ⟨Z_q⟩
  Matrix theta;                // [num_qubits × P]
  Matrix input;                // [num_qubits × num_qubits]
};

/// Exact Jacobians by the parameter-shift rule. Every rotation gate is shifted
/// by ±π/2 individually; repeated occurrences of an input angle (Vanilla
/// re-encoding) have their contributions summed. Runs 1 + 2·(#rotation gates)
/// simulations.
inline PqcJacobians pqc_gradients(const PqcConfig& config, std::span<const double> theta,
                                  std::span<const double> x) {
  check_pqc_shapes(config, theta, x);
  const auto ops = build_circuit(config);
  const int n = config.num_qubits;
  const auto nq = static_cast<std::size_t>(n);
  constexpr double kShift = std::numbers::pi / 2.0;

  PqcJacobians out{readout_z(simulate(ops, n, theta, x)), Matrix(nq, theta.size()),
                   Matrix(nq, nq)};
  for (std::size_t i = 0; i < ops.size(); ++i) {
    const Gate& g = ops[i];
    if (g.source == AngleSource::None) continue;
    const auto plus = readout_z(simulate(ops, n, theta, x, i, kShift));
    const auto minus = readout_z(simulate(ops, n, theta, x, i, -kShift));
    Matrix& jac = g.source == AngleSource::Theta ? out.theta : out.input;
    for (std::size_t q = 0; q < nq; ++q) jac(q, g.index) += 0.5 * (plus[q] - minus[q]);
  }
  return out;
}

}  // namespace qffn
