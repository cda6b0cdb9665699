#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "latentkit/error.hpp"
#include "latentkit/generator.hpp"
#include "latentkit/linalg.hpp"
#include "latentkit/npy.hpp"
#include "latentkit/random.hpp"

// Good/Bad quality gate: manifests, feature extraction, a linear SVM with
// signed-distance ranking, stratified splitting and evaluation.
namespace latentkit {

enum class QualityLabel { bad, good };

inline std::string to_string(QualityLabel l) { return l == QualityLabel::good ? "good" : "bad"; }

inline QualityLabel parse_label(const std::string& s) {
  if (s == "good") return QualityLabel::good;
  if (s == "bad") return QualityLabel::bad;
  throw FormatError("label must be \"good\" or \"bad\", got \"" + s + "\"");
}

inline int label_sign(QualityLabel l) { return l == QualityLabel::good ? 1 : -1; }

// --- manifests -----------------------------------------------------------------

struct ManifestItem {
  std::string path;  // image (.pgm) or feature vector (.npy)
  QualityLabel label = QualityLabel::bad;
  std::optional<std::string> latent;
};

struct DatasetManifest {
  std::string name;
  std::uint64_t seed = 0;
  std::vector<ManifestItem> items;
  // Directory relative item paths resolve against.
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const std::string& p) const {
    const std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base_dir / fp;
  }
};

inline DatasetManifest manifest_from_json(const nlohmann::json& j, std::filesystem::path base_dir) {
  DatasetManifest m;
  m.base_dir = std::move(base_dir);
  try {
    m.name = j.value("name", "");
    m.seed = j.value("seed", std::uint64_t{0});
    if (!j.contains("items") || !j.at("items").is_array())
      throw FormatError("manifest has no \"items\" array");
    for (const auto& it : j.at("items")) {
      ManifestItem item;
      item.path = it.at("path").get<std::string>();
      item.label = parse_label(it.at("label").get<std::string>());
      if (it.contains("latent") && !it.at("latent").is_null())
        item.latent = it.at("latent").get<std::string>();
      m.items.push_back(std::move(item));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
  return m;
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return manifest_from_json(j, path.parent_path());
}

// Relative item paths are rewritten so they still resolve from the new location.
inline void save_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  const std::filesystem::path dir = path.parent_path();
  auto rebase = [&](const std::string& p) {
    if (std::filesystem::path(p).is_absolute()) return p;
    return (m.resolve(p).lexically_normal().lexically_proximate(dir.empty() ? "." : dir)).generic_string();
  };
  nlohmann::json items = nlohmann::json::array();
  for (const auto& it : m.items) {
    nlohmann::json e = {{"path", rebase(it.path)}, {"label", to_string(it.label)}};
    if (it.latent) e["latent"] = rebase(*it.latent);
    items.push_back(std::move(e));
  }
  const nlohmann::json j = {{"name", m.name}, {"seed", m.seed}, {"items", std::move(items)}};
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

// Per-class shuffle and split. Each class keeps round(ratio * n) items for
// training, at least one.
inline std::pair<DatasetManifest, DatasetManifest> split_dataset(const DatasetManifest& m,
                                                                 double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw InvalidArgument("split ratio must be in (0, 1]");
  DatasetManifest train{m.name + "-train", seed, {}, m.base_dir};
  DatasetManifest test{m.name + "-test", seed, {}, m.base_dir};
  Rng rng(seed);
  for (QualityLabel cls : {QualityLabel::good, QualityLabel::bad}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < m.items.size(); ++i)
      if (m.items[i].label == cls) idx.push_back(i);
    if (idx.empty()) throw InvalidArgument("cannot split: class " + to_string(cls) + " is empty");
    for (std::size_t i = idx.size() - 1; i > 0; --i) std::swap(idx[i], idx[rng.below(i + 1)]);
    const auto n_train = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(ratio * static_cast<double>(idx.size()))), 1,
        idx.size());
    std::vector<std::size_t> tr(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::vector<std::size_t> te(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
    std::sort(tr.begin(), tr.end());
    std::sort(te.begin(), te.end());
    for (auto i : tr) train.items.push_back(m.items[i]);
    for (auto i : te) test.items.push_back(m.items[i]);
  }
  return {std::move(train), std::move(test)};
}

// --- features ------------------------------------------------------------------

enum class FeatureExtractorKind { raw_pixels, pca_pixels, raw_latent, external_file };

inline constexpr std::size_t kDefaultPixelPcaDim = 128;

inline FeatureExtractorKind parse_feature_kind(const std::string& s) {
  if (s == "raw-pixels") return FeatureExtractorKind::raw_pixels;
  if (s == "pca-pixels") return FeatureExtractorKind::pca_pixels;
  if (s == "raw-latent") return FeatureExtractorKind::raw_latent;
  if (s == "external-file") return FeatureExtractorKind::external_file;
  throw InvalidArgument("unknown feature kind '" + s + "'");
}

inline std::string to_string(FeatureExtractorKind k) {
  switch (k) {
    case FeatureExtractorKind::raw_pixels: return "raw-pixels";
    case FeatureExtractorKind::pca_pixels: return "pca-pixels";
    case FeatureExtractorKind::raw_latent: return "raw-latent";
    case FeatureExtractorKind::external_file: return "external-file";
  }
  return "unknown";
}

// Projection of flattened pixels onto their top principal components.
struct PixelPca {
  Vector mean;        // pixel count
  Matrix components;  // pixel count x target_dim, orthonormal columns
  Vector variances;   // target_dim, descending

  std::size_t input_dim() const { return mean.size(); }
  std::size_t output_dim() const { return components.cols(); }

  Vector project(std::span<const double> pixels) const {
    if (pixels.size() != mean.size())
      throw InvalidArgument("pixel PCA expects " + std::to_string(mean.size()) + " pixels, got " +
                            std::to_string(pixels.size()));
    Vector centered(pixels.begin(), pixels.end());
    for (std::size_t i = 0; i < centered.size(); ++i) centered[i] -= mean[i];
    return transpose_times(components, centered);
  }

  Vector reconstruct(std::span<const double> coords) const {
    Vector out = components * coords;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += mean[i];
    return out;
  }
};

inline PixelPca fit_pixel_pca(const std::vector<ImageTensor>& images,
                              std::size_t target_dim = kDefaultPixelPcaDim) {
  if (images.size() < 2) throw InvalidArgument("pixel PCA needs at least 2 images");
  const std::size_t npix = images.front().pixels.size();
  if (target_dim == 0 || target_dim > std::min(images.size() - 1, npix))
    throw InvalidArgument("pixel PCA target_dim " + std::to_string(target_dim) +
                          " exceeds min(n - 1, pixels) = " +
                          std::to_string(std::min(images.size() - 1, npix)));
  Matrix x(images.size(), npix);
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].pixels.size() != npix) throw InvalidArgument("pixel PCA images differ in size");
    std::copy(images[i].pixels.begin(), images[i].pixels.end(), x.row(i).begin());
  }
  const EigenResult eig = sym_eigendecompose(covariance(x));
  const double lmax = eig.values.front();
  if (!(lmax > 0.0) || eig.values[target_dim - 1] <= 1e-10 * lmax)
    throw NumericalError("pixel PCA: data rank is below target_dim " + std::to_string(target_dim));
  PixelPca pca;
  pca.mean = column_means(x);
  pca.components = Matrix(npix, target_dim);
  for (std::size_t j = 0; j < target_dim; ++j) {
    for (std::size_t i = 0; i < npix; ++i) pca.components(i, j) = eig.vectors(i, j);
    pca.variances.push_back(eig.values[j]);
  }
  return pca;
}

inline std::vector<ImageTensor> load_manifest_images(const DatasetManifest& m) {
  std::vector<ImageTensor> out;
  for (const auto& it : m.items) out.push_back(read_pgm(m.resolve(it.path)));
  return out;
}

inline bool is_npy_path(const std::string& p) {
  return std::filesystem::path(p).extension() == ".npy";
}

// One feature vector per manifest item. pca-pixels needs a fitted projection.
inline Vector extract_features(FeatureExtractorKind kind, const DatasetManifest& m,
                               const ManifestItem& item, const PixelPca* pca = nullptr) {
  switch (kind) {
    case FeatureExtractorKind::raw_pixels:
      if (is_npy_path(item.path)) throw InvalidArgument(item.path + " is a feature file, not an image");
      return read_pgm(m.resolve(item.path)).pixels;
    case FeatureExtractorKind::pca_pixels:
      if (!pca) throw InvalidArgument("pca-pixels features need a fitted pixel PCA");
      return pca->project(read_pgm(m.resolve(item.path)).pixels);
    case FeatureExtractorKind::raw_latent:
      if (!item.latent) throw FormatError("item " + item.path + " has no latent file");
      return npy::read_vector(m.resolve(*item.latent));
    case FeatureExtractorKind::external_file:
      if (!is_npy_path(item.path)) throw InvalidArgument(item.path + " is not an .npy feature file");
      return npy::read_vector(m.resolve(item.path));
  }
  return {};
}

// --- linear SVM ----------------------------------------------------------------

struct SvmConfig {
  double c = 1.0;
  double tol = 1e-6;
  std::size_t max_epochs = 1000;
  std::uint64_t seed = 0;
};

struct SvmModel {
  Vector weights;
  double bias = 0.0;
  double c = 1.0;
  std::size_t iterations = 0;
  std::uint64_t seed = 0;

  double decision_value(std::span<const double> x) const {
    if (x.size() != weights.size())
      throw InvalidArgument("feature has length " + std::to_string(x.size()) + ", model expects " +
                            std::to_string(weights.size()));
    return dot(weights, x) + bias;
  }
};

namespace detail {

inline double svm_primal_objective(const Matrix& x, const std::vector<double>& y, double c,
                                   const Vector& w, double b) {
  double obj = 0.5 * dot(w, w);
  for (std::size_t t = 0; t < x.rows(); ++t) obj += c * std::max(0.0, 1.0 - y[t] * (dot(w, x.row(t)) + b));
  return obj;
}

// Pseudo-inverse solve of a symmetric positive semi-definite system.
inline std::optional<Vector> psd_solve(const Matrix& m, const Vector& rhs) {
  const EigenResult eig = sym_eigendecompose(m);
  const double cut = 1e-10 * std::max(std::abs(eig.values.front()), 1e-300);
  Vector out(rhs.size(), 0.0);
  for (std::size_t j = 0; j < eig.values.size(); ++j) {
    const Vector v = eig.vectors.col(j);
    const double proj = dot(v, rhs);
    if (eig.values[j] <= cut) {
      if (std::abs(proj) > 1e-9 * (1.0 + norm2(rhs))) return std::nullopt;
      continue;
    }
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += proj / eig.values[j] * v[i];
  }
  return out;
}

// With the dual's active sets fixed (F: 0 < a < C, B: a = C) the primal reduces to
//   min 1/2 |w|^2 - C sum_B y_t (w.x_t + b)  subject to  w.x_t + b = y_t for t in F,
// an equality-constrained QP in (w, b) that is solved exactly here. Duplicate or
// reordered training points leave this problem unchanged, so the polished
// solution does not carry the solver's stopping error.
inline std::optional<std::pair<Vector, double>> polish_active_set(const Matrix& x,
                                                                  const std::vector<double>& y,
                                                                  const Vector& alpha, double c) {
  const std::size_t dim = x.cols(), p = dim + 1;
  Vector q(p, 0.0);
  std::vector<std::size_t> free;
  for (std::size_t t = 0; t < x.rows(); ++t) {
    if (alpha[t] >= c) {
      for (std::size_t k = 0; k < dim; ++k) q[k] += c * y[t] * x(t, k);
      q[dim] += c * y[t];
    } else if (alpha[t] > 0.0) {
      free.push_back(t);
    }
  }
  // Constraint rows [x_t, 1]; particular solution and null space from M^T M.
  Matrix mtm(p, p, 0.0);
  Vector mty(p, 0.0);
  for (std::size_t t : free) {
    Vector row(x.row(t).begin(), x.row(t).end());
    row.push_back(1.0);
    for (std::size_t a = 0; a < p; ++a) {
      mty[a] += row[a] * y[t];
      for (std::size_t bb = 0; bb < p; ++bb) mtm(a, bb) += row[a] * row[bb];
    }
  }
  Vector base(p, 0.0);
  std::vector<Vector> null;
  if (free.empty()) {
    for (std::size_t a = 0; a < p; ++a) null.push_back(Matrix::identity(p).col(a));
  } else {
    const auto particular = psd_solve(mtm, mty);
    if (!particular) return std::nullopt;
    base = *particular;
    const EigenResult eig = sym_eigendecompose(mtm);
    const double cut = 1e-10 * eig.values.front();
    for (std::size_t j = 0; j < p; ++j)
      if (eig.values[j] <= cut) null.push_back(eig.vectors.col(j));
  }
  if (!null.empty()) {
    // Minimize over base + N t with objective 1/2 v^T P v - q^T v, P = diag(1, .., 1, 0).
    const std::size_t r = null.size();
    Matrix h(r, r, 0.0);
    Vector g(r, 0.0);
    Vector pb = base;
    pb[dim] = 0.0;
    for (std::size_t a = 0; a < r; ++a) {
      for (std::size_t k = 0; k < p; ++k) g[a] += null[a][k] * (q[k] - pb[k]);
      for (std::size_t bb = 0; bb < r; ++bb)
        for (std::size_t k = 0; k < dim; ++k) h(a, bb) += null[a][k] * null[bb][k];
    }
    const auto tcoef = psd_solve(h, g);
    if (!tcoef) return std::nullopt;
    for (std::size_t a = 0; a < r; ++a)
      for (std::size_t k = 0; k < p; ++k) base[k] += (*tcoef)[a] * null[a][k];
  }
  if (!all_finite(base)) return std::nullopt;
  const double b = base[dim];
  base.pop_back();
  return std::make_pair(std::move(base), b);
}

}  // namespace detail

// Soft-margin linear SVM trained on the dual by pairwise coordinate descent
// (SMO with maximal-violating-pair selection), which keeps the bias
// unregularized and the sum of y_i a_i at zero. Ties in pair selection go to
// the lowest index, so training is deterministic.
inline SvmModel svm_train(const Matrix& x, const std::vector<QualityLabel>& labels,
                          const SvmConfig& cfg = {}) {
  const std::size_t n = x.rows(), dim = x.cols();
  if (labels.size() != n) throw InvalidArgument("svm: one label per feature row is required");
  if (n == 0 || dim == 0) throw InvalidArgument("svm: empty training set");
  if (!(cfg.c > 0.0)) throw InvalidArgument("svm: C must be positive");
  if (!all_finite(x.data())) throw InvalidArgument("svm: features contain non-finite values");
  std::vector<double> y(n);
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = label_sign(labels[i]);
    pos += y[i] > 0;
  }
  if (pos == 0 || pos == n)
    throw SingleClassError("svm: training data contains only \"" +
                           std::string(pos ? "good" : "bad") + "\" items");

  const double c = cfg.c;
  Vector alpha(n, 0.0), grad(n, -1.0), w(dim, 0.0);
  Vector sqnorm(n);
  for (std::size_t i = 0; i < n; ++i) sqnorm[i] = dot(x.row(i), x.row(i));
  auto in_up = [&](std::size_t t) { return y[t] > 0 ? alpha[t] < c : alpha[t] > 0.0; };
  auto in_low = [&](std::size_t t) { return y[t] > 0 ? alpha[t] > 0.0 : alpha[t] < c; };

  const std::size_t max_iter = cfg.max_epochs * n;
  std::size_t iter = 0;
  double m_up = 0.0, m_low = 0.0;
  for (;; ++iter) {
    std::size_t i = n, j = n;
    m_up = -std::numeric_limits<double>::infinity();
    m_low = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < n; ++t) {
      const double v = -y[t] * grad[t];
      if (in_up(t) && v > m_up) {
        m_up = v;
        i = t;
      }
      if (in_low(t) && v < m_low) {
        m_low = v;
        j = t;
      }
    }
    if (i == n || j == n || m_up - m_low < cfg.tol) break;
    if (iter >= max_iter) break;

    double quad = sqnorm[i] + sqnorm[j] - 2.0 * dot(x.row(i), x.row(j));
    if (quad <= 1e-12) quad = 1e-12;
    double step = -(y[i] * grad[i] - y[j] * grad[j]) / quad;
    step = std::min(step, y[i] > 0 ? c - alpha[i] : alpha[i]);
    step = std::min(step, y[j] > 0 ? alpha[j] : c - alpha[j]);
    const double di = y[i] * step, dj = -y[j] * step;
    alpha[i] = std::clamp(alpha[i] + di, 0.0, c);
    alpha[j] = std::clamp(alpha[j] + dj, 0.0, c);

    Vector dw(dim);
    const auto xi = x.row(i), xj = x.row(j);
    for (std::size_t k = 0; k < dim; ++k) {
      dw[k] = di * y[i] * xi[k] + dj * y[j] * xj[k];
      w[k] += dw[k];
    }
    for (std::size_t t = 0; t < n; ++t) grad[t] += y[t] * dot(x.row(t), dw);
  }

  // Bias from free vectors: y_t (w.x_t + b) = 1  =>  b = -y_t * grad_t.
  double bsum = 0.0;
  std::size_t nfree = 0;
  for (std::size_t t = 0; t < n; ++t)
    if (alpha[t] > 0.0 && alpha[t] < c) {
      bsum += -y[t] * grad[t];
      ++nfree;
    }
  SvmModel model;
  model.weights = std::move(w);
  model.bias = nfree ? bsum / static_cast<double>(nfree) : 0.5 * (m_up + m_low);
  if (const auto polished = detail::polish_active_set(x, y, alpha, c)) {
    const double before = detail::svm_primal_objective(x, y, c, model.weights, model.bias);
    const double after = detail::svm_primal_objective(x, y, c, polished->first, polished->second);
    if (after <= before + 1e-9 * (1.0 + before)) {
      model.weights = polished->first;
      model.bias = polished->second;
    }
  }
  model.c = c;
  model.iterations = iter;
  model.seed = cfg.seed;
  if (!all_finite(model.weights) || !std::isfinite(model.bias))
    throw NumericalError("svm training produced non-finite parameters");
  return model;
}

inline SvmModel svm_train(const std::vector<Vector>& features,
                          const std::vector<QualityLabel>& labels, const SvmConfig& cfg = {}) {
  if (features.empty()) throw InvalidArgument("svm: empty training set");
  Matrix x(features.size(), features.front().size());
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (features[i].size() != x.cols()) throw InvalidArgument("svm: inconsistent feature lengths");
    std::copy(features[i].begin(), features[i].end(), x.row(i).begin());
  }
  return svm_train(x, labels, cfg);
}

struct Prediction {
  QualityLabel label = QualityLabel::bad;
  double distance = 0.0;
};

// Distance is the decision value over ||w||. Points on the boundary are "bad".
inline Prediction svm_predict(const SvmModel& model, std::span<const double> feature) {
  const double v = model.decision_value(feature);
  const double wn = norm2(model.weights);
  return {v > 0.0 ? QualityLabel::good : QualityLabel::bad, wn > 0.0 ? v / wn : v};
}

inline double geometric_margin(const SvmModel& model) { return 1.0 / norm2(model.weights); }

// "good" is the positive class.
struct EvaluationReport {
  double accuracy = 0.0;
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
  std::size_t total() const { return tp + tn + fp + fn; }
};

inline EvaluationReport evaluate(const SvmModel& model, const std::vector<Vector>& features,
                                 const std::vector<QualityLabel>& labels) {
  if (features.empty()) throw InvalidArgument("evaluation needs a non-empty test set");
  if (features.size() != labels.size()) throw InvalidArgument("evaluation: one label per item");
  EvaluationReport r;
  for (std::size_t i = 0; i < features.size(); ++i) {
    const bool pred_good = svm_predict(model, features[i]).label == QualityLabel::good;
    const bool is_good = labels[i] == QualityLabel::good;
    if (pred_good && is_good) ++r.tp;
    else if (!pred_good && !is_good) ++r.tn;
    else if (pred_good) ++r.fp;
    else ++r.fn;
  }
  r.accuracy = static_cast<double>(r.tp + r.tn) / static_cast<double>(features.size());
  return r;
}

struct RankedItem {
  std::size_t index = 0;
  double distance = 0.0;
  QualityLabel predicted = QualityLabel::bad;
};

// Items sorted by signed distance, most confidently good first; ties keep input order.
inline std::vector<RankedItem> rank_by_distance(const SvmModel& model,
                                                const std::vector<Vector>& features) {
  std::vector<RankedItem> out;
  for (std::size_t i = 0; i < features.size(); ++i) {
    const Prediction p = svm_predict(model, features[i]);
    out.push_back({i, p.distance, p.label});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const RankedItem& a, const RankedItem& b) { return a.distance > b.distance; });
  return out;
}

inline nlohmann::json to_json(const SvmModel& m) {
  return {{"bias", m.bias}, {"C", m.c}, {"iterations", m.iterations}, {"seed", m.seed},
          {"dim", m.weights.size()}};
}

// --- 2-D embedding ---------------------------------------------------------------

struct Embedding2d {
  Matrix coords;  // n x 2, centered
  Vector variances;
  bool rank_deficient = false;
};

inline Embedding2d pca_embed_2d(const Matrix& features) {
  if (features.rows() < 3) throw InvalidArgument("2-D embedding needs at least 3 samples");
  const Matrix centered = center_columns(features);
  const EigenResult eig = sym_eigendecompose(covariance(features));
  Embedding2d out;
  out.coords = Matrix(features.rows(), 2);
  const double lmax = eig.values.front();
  const std::size_t usable =
      eig.values.size() >= 2 && eig.values[1] > 1e-12 * std::max(lmax, 1e-300) ? 2 : 1;
  out.rank_deficient = usable < 2;
  for (std::size_t j = 0; j < usable; ++j) {
    const Vector axis = eig.vectors.col(j);
    for (std::size_t i = 0; i < features.rows(); ++i) out.coords(i, j) = dot(centered.row(i), axis);
    out.variances.push_back(eig.values[j]);
  }
  if (usable < 2) out.variances.push_back(0.0);
  return out;
}

}  // namespace latentkit
