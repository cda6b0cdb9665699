#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "latentkit/error.hpp"
#include "latentkit/generator.hpp"
#include "latentkit/linalg.hpp"
#include "latentkit/npy.hpp"
#include "latentkit/random.hpp"

// Semantic direction discovery from the first dense layer A (hidden x latent).
namespace latentkit {

// k latent directions stored as the unit-norm columns of an l x k matrix,
// with one importance score per column (descending).
struct DirectionSet {
  Matrix directions;
  Vector scores;
  std::string method;
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = 0;

  std::size_t latent_dim() const { return directions.rows(); }
  std::size_t count() const { return directions.cols(); }
  Vector direction(std::size_t i) const { return directions.col(i); }
};

enum class SefaNormalization { rows, columns, none };

inline std::string to_string(SefaNormalization n) {
  switch (n) {
    case SefaNormalization::rows: return "rows";
    case SefaNormalization::columns: return "columns";
    case SefaNormalization::none: return "none";
  }
  return "unknown";
}

inline SefaNormalization parse_sefa_normalization(const std::string& s) {
  if (s == "rows") return SefaNormalization::rows;
  if (s == "columns") return SefaNormalization::columns;
  if (s == "none") return SefaNormalization::none;
  throw InvalidArgument("unknown normalization '" + s + "' (rows|columns|none)");
}

namespace detail {

// Flips v so that its largest-magnitude entry is positive (first one on ties).
inline void canonical_sign(Matrix& n, std::size_t c) {
  std::size_t best = 0;
  for (std::size_t r = 1; r < n.rows(); ++r)
    if (std::abs(n(r, c)) > std::abs(n(best, c))) best = r;
  if (n(best, c) < 0.0)
    for (std::size_t r = 0; r < n.rows(); ++r) n(r, c) = -n(r, c);
}

inline void check_k(std::size_t k, std::size_t limit, const char* what) {
  if (k == 0 || k > limit)
    throw InvalidArgument(std::string(what) + ": k must be in [1, " + std::to_string(limit) +
                          "], got " + std::to_string(k));
}

inline DirectionSet top_eigenvectors(const Matrix& sym, std::size_t k, std::string method) {
  const EigenResult eig = sym_eigendecompose(sym);
  DirectionSet out;
  out.method = std::move(method);
  out.directions = Matrix(sym.rows(), k);
  out.scores.assign(eig.values.begin(), eig.values.begin() + static_cast<std::ptrdiff_t>(k));
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t i = 0; i < sym.rows(); ++i) out.directions(i, j) = eig.vectors(i, j);
    canonical_sign(out.directions, j);
  }
  return out;
}

}  // namespace detail

// The operator ÃᵀÃ whose top eigenvectors SeFa returns.
inline Matrix sefa_operator(const Matrix& a, SefaNormalization norm = SefaNormalization::rows) {
  switch (norm) {
    case SefaNormalization::rows: return gram(l2_normalize_rows(a));
    case SefaNormalization::columns: return gram(l2_normalize_cols(a));
    case SefaNormalization::none: return gram(a);
  }
  return gram(a);
}

// Closed-form factorization: top-k eigenvectors of ÃᵀÃ, scores are the eigenvalues.
inline DirectionSet sefa(const Matrix& a, std::size_t k,
                         SefaNormalization norm = SefaNormalization::rows) {
  detail::check_k(k, a.cols(), "sefa");
  DirectionSet out = detail::top_eigenvectors(sefa_operator(a, norm), k, "sefa");
  out.config = {{"k", k}, {"normalize", to_string(norm)}};
  return out;
}

// PCA on the weights: top-k eigenvectors of the column covariance of A.
inline DirectionSet pca_weights(const Matrix& a, std::size_t k) {
  detail::check_k(k, a.cols(), "pca");
  if (a.rows() < 2) throw InvalidArgument("pca needs at least 2 weight rows");
  DirectionSet out = detail::top_eigenvectors(covariance(a), k, "pca");
  out.config = {{"k", k}};
  return out;
}

inline constexpr std::size_t kGanspaceDefaultSamples = 10000;

// Sampling-based PCA on first-layer features f = A z for z ~ N(0, I). Each
// feature-space component u is mapped back to the latent space as
// Aᵀu / ||Aᵀu||; the back-mapped directions are then Gram-Schmidt
// orthonormalized in score order.
inline DirectionSet ganspace_sample(const GeneratorSpec& spec, std::size_t k, Rng& rng,
                                    std::size_t num_samples = kGanspaceDefaultSamples) {
  const Matrix& a = spec.latent_weights();
  detail::check_k(k, std::min(a.rows(), a.cols()), "ganspace");
  if (num_samples < 2) throw InvalidArgument("ganspace needs at least 2 samples");

  Matrix feats(num_samples, a.rows());
  for (std::size_t s = 0; s < num_samples; ++s) {
    const LatentCode z = sample_latent(rng, a.cols());
    const Vector f = a * z.values;
    std::copy(f.begin(), f.end(), feats.row(s).begin());
  }
  const EigenResult eig = sym_eigendecompose(covariance(feats));

  DirectionSet out;
  out.method = "ganspace";
  out.directions = Matrix(a.cols(), k);
  out.scores.assign(eig.values.begin(), eig.values.begin() + static_cast<std::ptrdiff_t>(k));
  const double scale = frobenius_norm(a);
  for (std::size_t j = 0; j < k; ++j) {
    Vector n = transpose_times(a, eig.vectors.col(j));
    for (std::size_t p = 0; p < j; ++p) {
      const Vector prev = out.directions.col(p);
      const double c = dot(n, prev);
      for (std::size_t i = 0; i < n.size(); ++i) n[i] -= c * prev[i];
    }
    const double len = norm2(n);
    if (!(len > 1e-10 * scale))
      throw NumericalError("ganspace: component " + std::to_string(j) +
                           " maps to a near-zero latent direction");
    for (double& v : n) v /= len;
    out.directions.set_col(j, n);
    detail::canonical_sign(out.directions, j);
  }
  out.config = {{"k", k}, {"num_samples", num_samples}};
  return out;
}

// --- independent component analysis -----------------------------------------

struct IcaConfig {
  std::size_t components = 4;
  std::size_t max_iter = 200;
  double tol = 1e-6;
  std::uint64_t seed = 0;
  bool ambient_orthonormalize = true;
};

struct IcaDecomposition {
  Matrix sources;   // k x samples, unit sample variance per row
  Matrix unmixing;  // k x channels; sources = unmixing * (X - row means)
  Matrix rotation;  // k x k orthogonal unmixing in whitened space
  std::size_t iterations = 0;
  double final_delta = 0.0;
};

// E[log cosh(v)] for v ~ N(0, 1).
inline constexpr double kGaussianLogcosh = 0.374567207491438;

inline double logcosh(double u) {
  const double a = std::abs(u);
  return a + std::log1p(std::exp(-2.0 * a)) - std::log(2.0);
}

// Negentropy approximation (E[G(s)] - E[G(v)])^2 with G = log cosh.
inline double negentropy_logcosh(std::span<const double> s) {
  const double n = static_cast<double>(s.size());
  double mean = 0.0;
  for (double v : s) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : s) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / (n - 1.0));
  double g = 0.0;
  for (double v : s) g += logcosh((v - mean) / sd);
  const double diff = g / n - kGaussianLogcosh;
  return diff * diff;
}

// FastICA with the log cosh nonlinearity and symmetric decorrelation
// W <- (W Wᵀ)^(-1/2) W, on the rows of X (channels x samples).
inline IcaDecomposition ica_decompose(const Matrix& x, const IcaConfig& cfg) {
  const std::size_t channels = x.rows(), samples = x.cols(), k = cfg.components;
  if (channels < 2 || samples < 2) throw InvalidArgument("ica needs at least 2 channels and 2 samples");
  if (k == 0) throw InvalidArgument("ica needs at least one component");
  if (!(cfg.tol > 0.0)) throw InvalidArgument("ica tolerance must be positive");
  if (k > std::min(channels, samples - 1))
    throw NumericalError("ica: k=" + std::to_string(k) + " exceeds the numerical rank bound " +
                         std::to_string(std::min(channels, samples - 1)));

  const WhitenResult wh = whiten(x.transpose(), k);  // samples x k
  const Matrix& z = wh.whitened;
  const double inv_n = 1.0 / static_cast<double>(samples);

  Rng rng(cfg.seed);
  Matrix w(k, k);
  for (double& v : w.data()) v = rng.normal();
  w = sym_inverse_sqrt(w * w.transpose()) * w;

  IcaDecomposition out;
  double delta = std::numeric_limits<double>::infinity();
  bool converged = false;
  std::size_t iter = 0;
  for (; iter < cfg.max_iter && !converged; ++iter) {
    Matrix next(k, k);
    for (std::size_t i = 0; i < k; ++i) {
      const auto wi = w.row(i);
      double mean_dg = 0.0;
      auto ni = next.row(i);
      for (std::size_t t = 0; t < samples; ++t) {
        const auto zt = z.row(t);
        const double g = std::tanh(dot(wi, zt));
        mean_dg += 1.0 - g * g;
        for (std::size_t c = 0; c < k; ++c) ni[c] += g * zt[c];
      }
      mean_dg *= inv_n;
      for (std::size_t c = 0; c < k; ++c) ni[c] = ni[c] * inv_n - mean_dg * wi[c];
    }
    next = sym_inverse_sqrt(next * next.transpose()) * next;
    delta = 0.0;
    for (std::size_t i = 0; i < k; ++i)
      delta = std::max(delta, std::abs(1.0 - std::abs(dot(next.row(i), w.row(i)))));
    w = std::move(next);
    converged = delta < cfg.tol;
  }
  if (!converged)
    throw NumericalError("ica did not converge in " + std::to_string(cfg.max_iter) +
                         " iterations (final delta " + std::to_string(delta) + ")");

  out.rotation = w;
  out.sources = w * z.transpose();
  out.unmixing = w * wh.transform.transpose();
  out.iterations = iter;
  out.final_delta = delta;
  return out;
}

// Treats the rows of A as mixed signals over the latent axis (A = B S) and
// returns the unit-normalized source rows as latent directions, ordered by
// negentropy. With ambient_orthonormalize the columns are symmetrically
// orthonormalized so NᵀN = I.
inline DirectionSet ica_orthogonal(const Matrix& a, const IcaConfig& cfg) {
  const IcaDecomposition dec = ica_decompose(a, cfg);
  const std::size_t k = cfg.components, l = a.cols();

  Vector scores(k);
  for (std::size_t i = 0; i < k; ++i) scores[i] = negentropy_logcosh(dec.sources.row(i));
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return scores[x] > scores[y]; });

  Matrix n(l, k);
  for (std::size_t j = 0; j < k; ++j) {
    const auto src = dec.sources.row(order[j]);
    const double len = norm2(src);
    for (std::size_t i = 0; i < l; ++i) n(i, j) = src[i] / len;
  }
  if (cfg.ambient_orthonormalize) n = orthonormalize_columns(n);

  DirectionSet out;
  out.method = "ica";
  out.directions = std::move(n);
  for (std::size_t j = 0; j < k; ++j) {
    detail::canonical_sign(out.directions, j);
    out.scores.push_back(scores[order[j]]);
  }
  out.seed = cfg.seed;
  out.config = {{"k", k},
                {"nonlinearity", "logcosh"},
                {"max_iter", cfg.max_iter},
                {"tol", cfg.tol},
                {"ambient_orthonormalize", cfg.ambient_orthonormalize},
                {"iterations", dec.iterations}};
  return out;
}

// --- comparison --------------------------------------------------------------

// permutation[i] is the column of the second set matched to column i of the
// first; signs[i] makes the matched cosine positive.
struct DirectionMatch {
  std::vector<std::size_t> permutation;
  std::vector<int> signs;
  Vector scores;
};

// Minimum-cost perfect assignment on a square cost matrix (Hungarian method
// with potentials). Returns assignment[row] = column.
inline std::vector<std::size_t> solve_assignment(const Matrix& cost) {
  const std::size_t n = cost.rows();
  if (cost.cols() != n) throw InvalidArgument("assignment needs a square cost matrix");
  constexpr double kInf = std::numeric_limits<double>::infinity();
  // 1-based arrays; index 0 is the virtual start column.
  Vector u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    Vector minv(n + 1, kInf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> assignment(n);
  for (std::size_t j = 1; j <= n; ++j) assignment[p[j] - 1] = j - 1;
  return assignment;
}

// Pairs the columns of two direction matrices to maximize total |cosine|.
inline DirectionMatch match_directions(const Matrix& n1, const Matrix& n2) {
  if (n1.rows() != n2.rows() || n1.cols() != n2.cols())
    throw InvalidArgument("direction sets differ in shape: " + n1.shape_string() + " vs " +
                          n2.shape_string());
  const std::size_t k = n1.cols();
  const Matrix u1 = l2_normalize_cols(n1), u2 = l2_normalize_cols(n2);
  const Matrix cosines = u1.transpose() * u2;
  Matrix cost(k, k);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) cost(i, j) = 1.0 - std::abs(cosines(i, j));
  DirectionMatch m;
  m.permutation = solve_assignment(cost);
  for (std::size_t i = 0; i < k; ++i) {
    const double c = cosines(i, m.permutation[i]);
    m.signs.push_back(c < 0.0 ? -1 : 1);
    m.scores.push_back(std::min(1.0, std::abs(c)));
  }
  return m;
}

inline DirectionMatch match_directions(const DirectionSet& a, const DirectionSet& b) {
  return match_directions(a.directions, b.directions);
}

// Amari index of a square matrix: 0 for a scaled signed permutation, up to 1.
inline double amari_index(const Matrix& p) {
  const std::size_t k = p.rows();
  if (k < 2 || p.cols() != k) throw InvalidArgument("amari index needs a square matrix of size >= 2");
  double rows_term = 0.0, cols_term = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    double sum = 0.0, mx = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      sum += std::abs(p(i, j));
      mx = std::max(mx, std::abs(p(i, j)));
    }
    if (mx == 0.0) throw InvalidArgument("amari index: row " + std::to_string(i) + " is zero");
    rows_term += sum / mx - 1.0;
  }
  for (std::size_t j = 0; j < k; ++j) {
    double sum = 0.0, mx = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      sum += std::abs(p(i, j));
      mx = std::max(mx, std::abs(p(i, j)));
    }
    if (mx == 0.0) throw InvalidArgument("amari index: column " + std::to_string(j) + " is zero");
    cols_term += sum / mx - 1.0;
  }
  return (rows_term + cols_term) / (2.0 * static_cast<double>(k) * static_cast<double>(k - 1));
}

// True for components whose score differs from both neighbours by more than
// rel_gap relative; components inside a near-tie form a degenerate group.
inline std::vector<bool> eigengap_separated(std::span<const double> scores, double rel_gap = 1e-6) {
  std::vector<bool> ok(scores.size(), true);
  for (std::size_t i = 0; i + 1 < scores.size(); ++i) {
    const double scale = std::max({std::abs(scores[i]), std::abs(scores[i + 1]), 1e-300});
    if (std::abs(scores[i] - scores[i + 1]) <= rel_gap * scale) ok[i] = ok[i + 1] = false;
  }
  return ok;
}

// --- persistence ---------------------------------------------------------------

// Writes <stem>.npy (l x k) and the <stem>.json sidecar.
inline void save_direction_set(const std::filesystem::path& stem, const DirectionSet& set) {
  std::filesystem::path npy_path = stem, json_path = stem;
  npy_path += ".npy";
  json_path += ".json";
  npy::write_matrix(npy_path, set.directions);
  nlohmann::json j = {{"method", set.method},
                      {"scores", set.scores},
                      {"config", set.config},
                      {"seed", set.seed}};
  std::ofstream out(json_path);
  if (!out) throw FormatError("cannot write " + json_path.string());
  out << j.dump(2) << "\n";
}

// Loads a direction matrix from .npy, picking up the sidecar when present.
inline DirectionSet load_direction_set(const std::filesystem::path& npy_path) {
  DirectionSet set;
  set.directions = npy::read_matrix(npy_path);
  std::filesystem::path json_path = npy_path;
  json_path.replace_extension(".json");
  if (std::filesystem::exists(json_path)) {
    std::ifstream in(json_path);
    try {
      nlohmann::json j;
      in >> j;
      set.method = j.value("method", "");
      set.scores = j.value("scores", Vector{});
      set.config = j.value("config", nlohmann::json::object());
      set.seed = j.value("seed", std::uint64_t{0});
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(json_path.string() + ": " + e.what());
    }
  }
  return set;
}

}  // namespace latentkit
