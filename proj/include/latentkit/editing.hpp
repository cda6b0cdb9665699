#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "latentkit/error.hpp"
#include "latentkit/generator.hpp"
#include "latentkit/linalg.hpp"

// Latent editing z + s*n and the latent / text / triangular interpolations.
namespace latentkit {

inline constexpr double kDefaultIntensity = 3.0;
inline constexpr std::size_t kDefaultSteps = 10;

struct EditParams {
  Vector direction;
  double intensity = kDefaultIntensity;
  std::size_t steps = kDefaultSteps;
};

inline void check_edit_params(const EditParams& p, std::size_t latent_dim) {
  if (p.direction.size() != latent_dim)
    throw InvalidArgument("edit direction has length " + std::to_string(p.direction.size()) +
                          ", expected " + std::to_string(latent_dim));
  if (std::abs(norm2(p.direction) - 1.0) > 1e-10)
    throw InvalidArgument("edit direction must be unit norm (got " +
                          std::to_string(norm2(p.direction)) + ")");
  if (p.steps < 2) throw InvalidArgument("edit steps must be >= 2");
}

// z + scale * n.
inline LatentCode edit(const LatentCode& z, const EditParams& p, double scale) {
  check_edit_params(p, z.size());
  LatentCode out = z;
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += scale * p.direction[i];
  return out;
}

inline LatentCode edit(const LatentCode& z, const EditParams& p) { return edit(z, p, p.intensity); }

// Mixing weights i / (steps - 1), endpoints inclusive.
inline Vector interpolation_weights(std::size_t steps) {
  if (steps < 2) throw InvalidArgument("interpolation needs steps >= 2");
  Vector g(steps);
  for (std::size_t i = 0; i < steps; ++i)
    g[i] = static_cast<double>(i) / static_cast<double>(steps - 1);
  return g;
}

// (1 - g) a + g b; exact at g = 0, g = 1 and wherever a and b agree.
inline Vector lerp(const Vector& a, const Vector& b, double g) {
  if (a.size() != b.size()) throw InvalidArgument("interpolation endpoints differ in length");
  if (g == 0.0) return a;
  if (g == 1.0) return b;
  Vector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] == b[i] ? a[i] : (1.0 - g) * a[i] + g * b[i];
  return out;
}

inline TextEmbedding lerp(const TextEmbedding& a, const TextEmbedding& b, double g) {
  return {lerp(a.word, b.word, g), lerp(a.sentence, b.sentence, g)};
}

inline std::vector<ImageTensor> interp_latent(const GeneratorSpec& spec, const LatentCode& z0,
                                              const LatentCode& z1, const TextEmbedding& t,
                                              std::size_t steps) {
  check_inputs(spec, z0, t);
  check_inputs(spec, z1, t);
  std::vector<ImageTensor> out;
  for (double g : interpolation_weights(steps))
    out.push_back(generate(spec, LatentCode{lerp(z0.values, z1.values, g)}, t));
  return out;
}

inline std::vector<ImageTensor> interp_text(const GeneratorSpec& spec, const LatentCode& z,
                                            const TextEmbedding& t0, const TextEmbedding& t1,
                                            std::size_t steps) {
  check_inputs(spec, z, t0);
  check_inputs(spec, z, t1);
  std::vector<ImageTensor> out;
  for (double g : interpolation_weights(steps)) out.push_back(generate(spec, z, lerp(t0, t1, g)));
  return out;
}

struct TriangularSample {
  double gamma1 = 0.0;
  double gamma2 = 0.0;
  ImageTensor image;
};

struct TriangularGrid {
  TextEmbedding corners[3];
  std::size_t steps = 0;
  std::vector<TriangularSample> samples;
};

// (1 - g1 - g2) v0 + g1 v1 + g2 v2; the pure corners are returned exactly.
inline Vector barycentric(const Vector& v0, const Vector& v1, const Vector& v2, double g1, double g2) {
  if (g1 == 0.0 && g2 == 0.0) return v0;
  if (g1 == 1.0 && g2 == 0.0) return v1;
  if (g1 == 0.0 && g2 == 1.0) return v2;
  if (g2 == 0.0) return lerp(v0, v1, g1);
  Vector out(v0.size());
  const double g0 = 1.0 - g1 - g2;
  for (std::size_t i = 0; i < v0.size(); ++i) out[i] = g0 * v0[i] + g1 * v1[i] + g2 * v2[i];
  return out;
}

// Lattice (i, j) / (steps - 1) with i + j <= steps - 1, ordered by j then i.
// Samples with g2 = 0 are the first `steps` entries and coincide with
// interp_text(t0 -> t1).
inline TriangularGrid interp_triangular(const GeneratorSpec& spec, const LatentCode& z,
                                        const TextEmbedding& t0, const TextEmbedding& t1,
                                        const TextEmbedding& t2, std::size_t steps) {
  if (steps < 2) throw InvalidArgument("triangular interpolation needs steps >= 2");
  check_inputs(spec, z, t0);
  check_inputs(spec, z, t1);
  check_inputs(spec, z, t2);
  TriangularGrid grid{{t0, t1, t2}, steps, {}};
  const double denom = static_cast<double>(steps - 1);
  for (std::size_t j = 0; j < steps; ++j)
    for (std::size_t i = 0; i + j < steps; ++i) {
      const double g1 = static_cast<double>(i) / denom;
      const double g2 = static_cast<double>(j) / denom;
      const TextEmbedding t{barycentric(t0.word, t1.word, t2.word, g1, g2),
                            barycentric(t0.sentence, t1.sentence, t2.sentence, g1, g2)};
      grid.samples.push_back({g1, g2, generate(spec, z, t)});
    }
  return grid;
}

// Scales linspace(-intensity, +intensity, steps) along the direction.
inline Vector sweep_scales(const EditParams& p) {
  if (p.steps < 2) throw InvalidArgument("sweep needs steps >= 2");
  Vector s(p.steps);
  const double denom = static_cast<double>(p.steps - 1);
  for (std::size_t i = 0; i < p.steps; ++i) {
    // Mirror pairs are computed from the same magnitude so the grid is exactly symmetric.
    const double m = std::abs(static_cast<double>(2 * i) - denom) / denom * p.intensity;
    s[i] = 2 * i < p.steps - 1 ? -m : m;
  }
  return s;
}

inline std::vector<ImageTensor> sweep_direction(const GeneratorSpec& spec, const LatentCode& z,
                                                const TextEmbedding& t, const EditParams& p) {
  check_inputs(spec, z, t);
  check_edit_params(p, z.size());
  std::vector<ImageTensor> out;
  for (double s : sweep_scales(p)) out.push_back(generate(spec, s == 0.0 ? z : edit(z, p, s), t));
  return out;
}

}  // namespace latentkit
