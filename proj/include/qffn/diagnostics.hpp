#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <numbers>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <stdexcept>
#include <vector>

#include "qffn/error.hpp"
#include "qffn/pqc.hpp"

namespace qffn {

/// Central differences (f(p + h·eᵢ) − f(p − h·eᵢ)) / 2h for every coordinate.
inline std::vector<double> finite_diff(const std::function<double(std::span<const double>)>& f,
                                       std::span<const double> params, double h = 1e-5) {
  std::vector<double> p(params.begin(), params.end());
  std::vector<double> grad(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double saved = p[i];
    p[i] = saved + h;
    const double up = f(p);
    p[i] = saved - h;
    const double down = f(p);
    p[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw std::domain_error("finite_diff: non-finite function value at coordinate " +
                              std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

struct DepthVariance {
  int depth = 0;
  Variant variant = Variant::Optimized;
  double variance = 0.0;
  std::size_t num_samples = 0;
  std::vector<double> gradients;  // one ∂⟨Z₀⟩/∂θ₀ per sample
  std::vector<std::vector<double>> thetas;
  std::vector<std::vector<double>> inputs;
};

struct ProbeResult {
  std::uint64_t seed = 0;
  int num_qubits = 4;
  std::vector<DepthVariance> rows;
};

/// Unbiased sample variance.
inline double sample_variance(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double acc = 0.0;
  for (double x : xs) acc += (x - mean) * (x - mean);
  return acc / static_cast<double>(xs.size() - 1);
}

/// Barren-plateau probe: for each depth, variance over random (θ, x) of the
/// parameter-shift derivative ∂⟨Z₀⟩/∂θ₀ (the first trainable angle). Sample i
/// at depth L draws from its own stream seeded by (seed, L, i), so results do
/// not depend on evaluation order.
inline ProbeResult grad_variance_probe(Variant variant, std::span<const int> depths,
                                       std::size_t num_samples, std::uint64_t seed,
                                       int num_qubits = 4) {
  if (num_samples < 30) {
    throw ConfigError("num_samples must be >= 30, got " + std::to_string(num_samples));
  }
  ProbeResult result{seed, num_qubits, {}};
  std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
  constexpr double kShift = std::numbers::pi / 2.0;
  for (int depth : depths) {
    const PqcConfig config{variant, depth, num_qubits};
    const auto ops = build_circuit(config);
    std::size_t first_theta = ops.size();
    for (std::size_t i = 0; i < ops.size(); ++i) {
      if (ops[i].source == AngleSource::Theta && ops[i].index == 0) {
        first_theta = i;
        break;
      }
    }
    DepthVariance row{depth, variant, 0.0, num_samples, {}, {}, {}};
    for (std::size_t s = 0; s < num_samples; ++s) {
      std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                        static_cast<std::uint32_t>(depth), static_cast<std::uint32_t>(s)};
      std::mt19937_64 rng(seq);
      std::vector<double> theta(pqc_param_count(config));
      std::vector<double> x(static_cast<std::size_t>(num_qubits));
      for (auto& t : theta) t = angle(rng);
      for (auto& v : x) v = angle(rng);
      const double plus = simulate(ops, num_qubits, theta, x, first_theta, kShift).expectation_z(0);
      const double minus =
          simulate(ops, num_qubits, theta, x, first_theta, -kShift).expectation_z(0);
      row.gradients.push_back(0.5 * (plus - minus));
      row.thetas.push_back(std::move(theta));
      row.inputs.push_back(std::move(x));
    }
    row.variance = sample_variance(row.gradients);
    result.rows.push_back(std::move(row));
  }
  return result;
}

/// CSV with header depth,variant,variance,num_samples,seed.
inline void write_probe_csv(std::ostream& out, std::span<const ProbeResult> results,
                            bool header = true) {
  if (header) out << "depth,variant,variance,num_samples,seed\n";
  char buf[64];
  for (const auto& r : results) {
    for (const auto& row : r.rows) {
      std::snprintf(buf, sizeof buf, "%.17g", row.variance);
      out << row.depth << ',' << to_string(row.variant) << ',' << buf << ',' << row.num_samples
          << ',' << r.seed << '\n';
    }
  }
}

}  // namespace qffn
