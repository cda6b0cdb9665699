#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "latentkit/error.hpp"
#include "latentkit/generator.hpp"
#include "latentkit/linalg.hpp"
#include "latentkit/perceptual.hpp"

// Background-flattening loss and Adam-based direction refinement.
namespace latentkit {

// L1 (pixel mean) term plus a perceptual term.
inline double bfl(MetricKind metric, const ImageTensor& x1, const ImageTensor& x2) {
  return distance(MetricKind::l1_mean, x1, x2) + distance(metric, x1, x2);
}

// Gradient of bfl(metric, x1, x2) with respect to x2.
inline Vector bfl_gradient(MetricKind metric, const ImageTensor& x1, const ImageTensor& x2) {
  Vector g = distance_gradient(MetricKind::l1_mean, x1, x2);
  const Vector gm = distance_gradient(metric, x1, x2);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += gm[i];
  return g;
}

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.0;
  double beta2 = 0.9;
  double epsilon = 1e-8;
  std::size_t steps = 200;
};

inline void check_adam_config(const AdamConfig& c) {
  if (!(c.learning_rate > 0.0)) throw InvalidArgument("learning rate must be positive");
  if (!(c.beta1 >= 0.0 && c.beta1 < 1.0) || !(c.beta2 >= 0.0 && c.beta2 < 1.0))
    throw InvalidArgument("Adam betas must lie in [0, 1)");
  if (!(c.epsilon > 0.0)) throw InvalidArgument("Adam epsilon must be positive");
}

// Moment state for Adam with bias correction.
class AdamState {
 public:
  AdamState(std::size_t dim, const AdamConfig& cfg) : cfg_(cfg), m_(dim, 0.0), v_(dim, 0.0) {
    check_adam_config(cfg);
  }

  void step(Vector& params, std::span<const double> grad) { step(params, grad, cfg_.learning_rate); }

  void step(Vector& params, std::span<const double> grad, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
      params[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + cfg_.epsilon);
    }
  }

  std::size_t iteration() const { return t_; }

 private:
  AdamConfig cfg_;
  Vector m_, v_;
  std::size_t t_ = 0;
};

// Loss at `params`; writes the gradient into `grad` (already sized).
using GradientOracle = std::function<double(std::span<const double> params, Vector& grad)>;

struct AdamResult {
  Vector params;       // after the last step
  Vector losses;       // losses[t] before step t; losses[steps] after the last
  Vector best_params;  // lowest recorded loss, earliest on ties
  std::size_t best_step = 0;
};

inline AdamResult adam_optimize(const GradientOracle& oracle, Vector initial, const AdamConfig& cfg) {
  check_adam_config(cfg);
  AdamState state(initial.size(), cfg);
  AdamResult r;
  r.params = std::move(initial);
  Vector grad(r.params.size(), 0.0);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t <= cfg.steps; ++t) {
    std::fill(grad.begin(), grad.end(), 0.0);
    const double loss = oracle(r.params, grad);
    r.losses.push_back(loss);
    if (loss < best) {
      best = loss;
      r.best_params = r.params;
      r.best_step = t;
    }
    if (t == cfg.steps) break;
    if (!all_finite(grad) || !std::isfinite(loss))
      throw NumericalError("non-finite loss or gradient at step " + std::to_string(t));
    state.step(r.params, grad);
  }
  if (r.best_params.empty()) r.best_params = r.params;
  return r;
}

struct FlattenConfig {
  AdamConfig adam;
  double intensity = 3.0;
  MetricKind metric = MetricKind::perceptual_fixed;
};

struct RefinementTrace {
  Vector losses;                // one per step plus the final evaluation
  Vector preserved_component;   // <n, n0> of the unnormalized direction, per evaluation
  Vector initial_direction;
  Vector final_direction;       // unit norm
  double initial_loss = 0.0;
  double final_loss = 0.0;      // loss of final_direction
};

namespace detail {

// Orthonormal basis (l x (l-1)) of the complement of unit vector n0, taken
// from the Householder reflection that maps n0 onto -+e_0.
inline Matrix complement_basis(std::span<const double> n0) {
  const std::size_t l = n0.size();
  Vector v(n0.begin(), n0.end());
  v[0] += n0[0] >= 0.0 ? 1.0 : -1.0;
  const double vv = dot(v, v);
  Matrix q(l, l - 1);
  for (std::size_t i = 0; i < l; ++i)
    for (std::size_t j = 1; j < l; ++j)
      q(i, j - 1) = (i == j ? 1.0 : 0.0) - 2.0 * v[i] * v[j] / vv;
  return q;
}

inline void check_direction(std::span<const double> n0, std::size_t latent_dim) {
  if (n0.size() != latent_dim)
    throw InvalidArgument("direction has length " + std::to_string(n0.size()) + ", expected " +
                          std::to_string(latent_dim));
  if (std::abs(norm2(n0) - 1.0) > 1e-8) throw InvalidArgument("direction must be unit norm");
  if (latent_dim < 2) throw InvalidArgument("direction refinement needs latent_dim >= 2");
}

inline LatentCode edited(const LatentCode& z, std::span<const double> n, double intensity) {
  const double len = norm2(n);
  LatentCode out = z;
  for (std::size_t i = 0; i < n.size(); ++i) out.values[i] += intensity * n[i] / len;
  return out;
}

// Minimizes bfl(reference, G(z + a n/||n||)) over n = n0 + Q c, so <n, n0>
// stays 1 and only the orthogonal complement moves.
inline RefinementTrace refine_toward(const GeneratorSpec& spec, const LatentCode& z,
                                     const TextEmbedding& t, std::span<const double> n0,
                                     const ImageTensor& reference, const FlattenConfig& cfg) {
  check_direction(n0, spec.dims().latent_dim);
  if (cfg.intensity == 0.0) throw InvalidArgument("intensity 0 makes the flattening objective degenerate");
  check_inputs(spec, z, t);
  const std::size_t l = n0.size();
  const Matrix q = complement_basis(n0);

  RefinementTrace trace;
  trace.initial_direction.assign(n0.begin(), n0.end());
  auto direction_of = [&](std::span<const double> c) {
    Vector n = q * c;
    for (std::size_t i = 0; i < l; ++i) n[i] += n0[i];
    return n;
  };

  const GradientOracle oracle = [&](std::span<const double> c, Vector& grad) {
    const Vector n = direction_of(c);
    trace.preserved_component.push_back(dot(n, n0));
    const LatentCode ze = edited(z, n, cfg.intensity);
    const ImageTensor x = generate(spec, ze, t);
    const double loss = bfl(cfg.metric, reference, x);
    const Vector gx = bfl_gradient(cfg.metric, reference, x);
    const Vector gz = generate_vjp(spec, ze, t, ImageTensor{x.height, x.width, gx});
    const double len = norm2(n);
    Vector gn(l);
    double proj = 0.0;
    for (std::size_t i = 0; i < l; ++i) proj += n[i] / len * gz[i];
    for (std::size_t i = 0; i < l; ++i) gn[i] = cfg.intensity * (gz[i] - proj * n[i] / len) / len;
    grad = transpose_times(q, gn);
    return loss;
  };

  const AdamResult r = adam_optimize(oracle, Vector(l - 1, 0.0), cfg.adam);
  trace.losses = r.losses;
  trace.initial_loss = r.losses.front();
  // The last iterate is returned unless it ended above the starting loss.
  const bool use_last = r.losses.back() <= r.losses.front();
  const Vector& c = use_last ? r.params : r.best_params;
  trace.final_loss = use_last ? r.losses.back() : r.losses[r.best_step];
  if (std::all_of(c.begin(), c.end(), [](double v) { return v == 0.0; })) {
    trace.final_direction = trace.initial_direction;  // nothing moved; keep n0 bit-exact
    return trace;
  }
  Vector n = direction_of(c);
  const double len = norm2(n);
  for (double& v : n) v /= len;
  trace.final_direction = std::move(n);
  return trace;
}

}  // namespace detail

// Refines n0 so that editing z along it changes as little of the rest of the
// image as possible, keeping the projection onto n0 fixed.
inline RefinementTrace flatten_direction(const GeneratorSpec& spec, const LatentCode& z,
                                         const TextEmbedding& t, std::span<const double> n0,
                                         const FlattenConfig& cfg = {}) {
  check_inputs(spec, z, t);
  return detail::refine_toward(spec, z, t, n0, generate(spec, z, t), cfg);
}

struct BackgroundRemovalResult {
  Vector ascent_objective;    // phase 1, accepted steps only (non-decreasing)
  Vector target_latent;       // z plus the phase-1 edit
  ImageTensor target;         // extreme sample used as the phase-2 reference
  RefinementTrace refinement; // phase 2
};

// Two-phase heuristic. Phase 1 searches the span of the direction set for the
// edit whose sample is farthest (in BFL) from the edit along the primary
// direction; steps that lower the objective are rejected and halve the step
// size. Phase 2 refines the primary direction toward that extreme sample.
inline BackgroundRemovalResult background_removal(const GeneratorSpec& spec, const LatentCode& z,
                                                  const TextEmbedding& t, const Matrix& directions,
                                                  const FlattenConfig& cfg = {},
                                                  std::size_t primary = 0) {
  const std::size_t l = spec.dims().latent_dim, k = directions.cols();
  if (k < 2) throw InvalidArgument("background removal needs at least 2 directions");
  if (directions.rows() != l) throw InvalidArgument("direction set latent size mismatch");
  if (primary >= k) throw InvalidArgument("primary direction index out of range");
  if (cfg.intensity == 0.0) throw InvalidArgument("intensity 0 makes the flattening objective degenerate");
  check_inputs(spec, z, t);
  const Vector n0 = directions.col(primary);
  detail::check_direction(n0, l);

  const ImageTensor source_edit = generate(spec, detail::edited(z, n0, cfg.intensity), t);
  auto objective = [&](std::span<const double> c, Vector* grad) {
    const Vector n = directions * c;
    const LatentCode ze = detail::edited(z, n, cfg.intensity);
    const ImageTensor x = generate(spec, ze, t);
    const double j = bfl(cfg.metric, source_edit, x);
    if (grad) {
      const Vector gx = bfl_gradient(cfg.metric, source_edit, x);
      const Vector gz = generate_vjp(spec, ze, t, ImageTensor{x.height, x.width, gx});
      const double len = norm2(n);
      double proj = 0.0;
      for (std::size_t i = 0; i < l; ++i) proj += n[i] / len * gz[i];
      Vector gn(l);
      for (std::size_t i = 0; i < l; ++i) gn[i] = cfg.intensity * (gz[i] - proj * n[i] / len) / len;
      *grad = transpose_times(directions, gn);
    }
    return j;
  };

  BackgroundRemovalResult out;
  Vector c(k, 0.0);
  c[primary == 0 ? 1 : 0] = 1.0;
  Vector grad(k);
  double current = objective(c, &grad);
  out.ascent_objective.push_back(current);
  AdamState adam(k, cfg.adam);
  double lr = cfg.adam.learning_rate;
  for (std::size_t step = 0; step < cfg.adam.steps; ++step) {
    if (!all_finite(grad)) throw NumericalError("non-finite gradient at ascent step " + std::to_string(step));
    for (double& g : grad) g = -g;
    Vector proposal = c;
    adam.step(proposal, grad, lr);
    if (norm2(directions * proposal) <= 1e-12) {
      lr *= 0.5;
      continue;
    }
    Vector next_grad(k);
    const double value = objective(proposal, &next_grad);
    if (value >= current) {
      c = std::move(proposal);
      current = value;
      grad = std::move(next_grad);
      out.ascent_objective.push_back(current);
    } else {
      lr *= 0.5;
      objective(c, &grad);
    }
  }

  const LatentCode zt = detail::edited(z, directions * c, cfg.intensity);
  out.target_latent = zt.values;
  out.target = generate(spec, zt, t);
  out.refinement = detail::refine_toward(spec, z, t, n0, out.target, cfg);
  return out;
}

}  // namespace latentkit
