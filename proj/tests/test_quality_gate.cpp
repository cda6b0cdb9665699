#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <numbers>

#include "latentkit/quality_gate.hpp"
#include "oracles.hpp"

using namespace latentkit;
namespace fs = std::filesystem;

namespace {

struct Blobs {
  std::vector<Vector> x;
  std::vector<QualityLabel> y;
};

// Two Gaussian clusters at +-center with isotropic spread sigma, alternating labels.
Blobs blobs(std::uint64_t seed, std::size_t n, const Vector& center, double sigma) {
  Rng rng(seed);
  Blobs b;
  for (std::size_t i = 0; i < n; ++i) {
    const bool good = i % 2 == 0;
    Vector p(center.size());
    for (std::size_t k = 0; k < p.size(); ++k) p[k] = (good ? center[k] : -center[k]) + sigma * rng.normal();
    b.x.push_back(p);
    b.y.push_back(good ? QualityLabel::good : QualityLabel::bad);
  }
  return b;
}

// Max-margin half width of separable 2-D data by search over the normal angle:
// for a fixed unit normal u the best offset gives (min_good <u,x> - max_bad <u,x>) / 2.
double brute_force_margin(const Blobs& b) {
  auto margin_at = [&](double th) {
    const double ux = std::cos(th), uy = std::sin(th);
    double lo_good = 1e300, hi_bad = -1e300;
    for (std::size_t i = 0; i < b.x.size(); ++i) {
      const double v = ux * b.x[i][0] + uy * b.x[i][1];
      if (b.y[i] == QualityLabel::good) lo_good = std::min(lo_good, v);
      else hi_bad = std::max(hi_bad, v);
    }
    return 0.5 * (lo_good - hi_bad);
  };
  double best = -1e300, best_th = 0.0;
  for (int k = 0; k < 36000; ++k) {
    const double th = 2 * std::numbers::pi * k / 36000.0;
    if (const double m = margin_at(th); m > best) best = m, best_th = th;
  }
  double step = 2 * std::numbers::pi / 36000.0;
  for (int round = 0; round < 40; ++round, step *= 0.5)
    for (double th : {best_th - step, best_th + step})
      if (const double m = margin_at(th); m > best) best = m, best_th = th;
  return best;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("latentkit_gate_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

DatasetManifest balanced_manifest(std::size_t per_class) {
  DatasetManifest m{"faces", 0, {}, "."};
  for (std::size_t i = 0; i < 2 * per_class; ++i)
    m.items.push_back({"img" + std::to_string(i) + ".pgm", i < per_class ? QualityLabel::good : QualityLabel::bad, {}});
  return m;
}

}  // namespace

TEST(Labels, ParseAndSign) {
  EXPECT_EQ(parse_label("good"), QualityLabel::good);
  EXPECT_EQ(parse_label("bad"), QualityLabel::bad);
  EXPECT_THROW(parse_label("ugly"), FormatError);
  EXPECT_EQ(label_sign(QualityLabel::good), 1);
}

TEST(Manifest, LoadResolvesRelativePaths) {
  const fs::path dir = scratch("manifest");
  {
    std::ofstream out(dir / "m.json");
    out << R"({"name": "demo", "seed": 3, "items": [{"path": "a.pgm", "label": "good"},
               {"path": "b.npy", "label": "bad", "latent": "z.npy"}]})";
  }
  const DatasetManifest m = load_manifest(dir / "m.json");
  EXPECT_EQ(m.name, "demo");
  EXPECT_EQ(m.seed, 3u);
  ASSERT_EQ(m.items.size(), 2u);
  EXPECT_EQ(m.resolve(m.items[0].path), dir / "a.pgm");
  EXPECT_EQ(*m.items[1].latent, "z.npy");
  EXPECT_FALSE(m.items[0].latent.has_value());
}

TEST(Manifest, MalformedJsonRejected) {
  const fs::path dir = scratch("bad_manifest");
  {
    std::ofstream out(dir / "m.json");
    out << R"({"items": [{"path": "a.pgm", "label": "maybe"}]})";
  }
  EXPECT_THROW(load_manifest(dir / "m.json"), FormatError);
  {
    std::ofstream out(dir / "n.json");
    out << "{not json";
  }
  EXPECT_THROW(load_manifest(dir / "n.json"), FormatError);
  EXPECT_THROW(load_manifest(dir / "missing.json"), FormatError);
}

TEST(Manifest, SaveRebasesRelativePaths) {
  const fs::path dir = scratch("rebase");
  fs::create_directories(dir / "out");
  DatasetManifest m{"demo", 1, {{"imgs/a.pgm", QualityLabel::good, "z/a.npy"}}, dir};
  save_manifest(dir / "out" / "m.json", m);
  const DatasetManifest back = load_manifest(dir / "out" / "m.json");
  EXPECT_EQ(back.resolve(back.items[0].path).lexically_normal(), (dir / "imgs/a.pgm").lexically_normal());
  EXPECT_EQ(back.resolve(*back.items[0].latent).lexically_normal(), (dir / "z/a.npy").lexically_normal());
}

TEST(Split, FaceTableArithmetic) {
  const auto [train, test] = split_dataset(balanced_manifest(2000), 0.8, 7);
  EXPECT_EQ(train.items.size(), 3200u);
  EXPECT_EQ(test.items.size(), 800u);
  const auto good = [](const DatasetManifest& m) {
    return std::count_if(m.items.begin(), m.items.end(),
                         [](const ManifestItem& i) { return i.label == QualityLabel::good; });
  };
  EXPECT_EQ(good(train), 1600);
  EXPECT_EQ(good(test), 400);
}

TEST(Split, DisjointCoveringAndDeterministic) {
  const DatasetManifest m = balanced_manifest(37);
  const auto [a_train, a_test] = split_dataset(m, 0.8, 11);
  const auto [b_train, b_test] = split_dataset(m, 0.8, 11);
  std::vector<std::string> all;
  for (const auto& i : a_train.items) all.push_back(i.path);
  for (const auto& i : a_test.items) all.push_back(i.path);
  std::sort(all.begin(), all.end());
  EXPECT_EQ(std::adjacent_find(all.begin(), all.end()), all.end());
  EXPECT_EQ(all.size(), m.items.size());
  ASSERT_EQ(a_train.items.size(), b_train.items.size());
  for (std::size_t i = 0; i < a_train.items.size(); ++i) EXPECT_EQ(a_train.items[i].path, b_train.items[i].path);
  const auto [c_train, c_test] = split_dataset(m, 0.8, 12);
  bool differs = false;
  for (std::size_t i = 0; i < c_train.items.size(); ++i) differs |= c_train.items[i].path != a_train.items[i].path;
  EXPECT_TRUE(differs);
}

TEST(Split, RatioOneKeepsEverything) {
  const auto [train, test] = split_dataset(balanced_manifest(5), 1.0, 0);
  EXPECT_EQ(train.items.size(), 10u);
  EXPECT_TRUE(test.items.empty());
}

TEST(Split, Errors) {
  DatasetManifest m = balanced_manifest(3);
  EXPECT_THROW(split_dataset(m, 0.0, 0), InvalidArgument);
  EXPECT_THROW(split_dataset(m, 1.5, 0), InvalidArgument);
  m.items.resize(3);
  EXPECT_THROW(split_dataset(m, 0.8, 0), InvalidArgument);
}

TEST(Features, KindsAndDefaults) {
  EXPECT_EQ(kDefaultPixelPcaDim, 128u);
  for (auto k : {FeatureExtractorKind::raw_pixels, FeatureExtractorKind::pca_pixels,
                 FeatureExtractorKind::raw_latent, FeatureExtractorKind::external_file})
    EXPECT_EQ(parse_feature_kind(to_string(k)), k);
  EXPECT_THROW(parse_feature_kind("vgg"), InvalidArgument);
}

TEST(Features, RawPixelsAndExternalRoundTrip) {
  const fs::path dir = scratch("features");
  ImageTensor img{16, 16, Vector(256)};
  for (std::size_t i = 0; i < 256; ++i) img.pixels[i] = byte_to_pixel(static_cast<std::uint8_t>(i));
  write_pgm(dir / "a.pgm", img);
  const Vector feat = {0.25, -1.5, 3.0};
  npy::write_vector(dir / "f.npy", feat);
  npy::write_vector(dir / "z.npy", Vector{1.0, 2.0});
  DatasetManifest m{"demo", 0, {{"a.pgm", QualityLabel::good, "z.npy"}, {"f.npy", QualityLabel::bad, {}}}, dir};
  EXPECT_EQ(extract_features(FeatureExtractorKind::raw_pixels, m, m.items[0]), img.pixels);
  EXPECT_EQ(extract_features(FeatureExtractorKind::external_file, m, m.items[1]), feat);
  EXPECT_EQ(extract_features(FeatureExtractorKind::raw_latent, m, m.items[0]), (Vector{1.0, 2.0}));
  EXPECT_THROW(extract_features(FeatureExtractorKind::raw_latent, m, m.items[1]), FormatError);
  EXPECT_THROW(extract_features(FeatureExtractorKind::pca_pixels, m, m.items[0]), InvalidArgument);
  EXPECT_THROW(extract_features(FeatureExtractorKind::external_file, m, m.items[0]), InvalidArgument);
  fs::remove(dir / "f.npy");
  EXPECT_THROW(extract_features(FeatureExtractorKind::external_file, m, m.items[1]), Error);
}

TEST(PixelPca, ExactPlaneReconstruction) {
  Rng rng(3);
  Vector base(64), u(64), v(64);
  for (std::size_t i = 0; i < 64; ++i) base[i] = rng.uniform(-0.5, 0.5), u[i] = rng.normal(), v[i] = rng.normal();
  std::vector<ImageTensor> imgs;
  for (int k = 0; k < 12; ++k) {
    const double a = rng.normal(), b = rng.normal();
    ImageTensor img{8, 8, Vector(64)};
    for (std::size_t i = 0; i < 64; ++i) img.pixels[i] = base[i] + 0.1 * (a * u[i] + b * v[i]);
    imgs.push_back(img);
  }
  const PixelPca pca = fit_pixel_pca(imgs, 2);
  for (const auto& img : imgs) {
    const Vector back = pca.reconstruct(pca.project(img.pixels));
    for (std::size_t i = 0; i < 64; ++i) EXPECT_NEAR(back[i], img.pixels[i], 1e-10);
  }
  EXPECT_THROW(fit_pixel_pca(imgs, 3), NumericalError);
  EXPECT_THROW(fit_pixel_pca(imgs, 12), InvalidArgument);
  EXPECT_THROW(fit_pixel_pca({imgs[0]}, 1), InvalidArgument);
}

TEST(PixelPca, MatchesSvdOracle) {
  const Matrix x = oracle::random_matrix(4, 30, 16);
  std::vector<ImageTensor> imgs;
  for (std::size_t r = 0; r < 30; ++r) imgs.push_back({4, 4, Vector(x.row(r).begin(), x.row(r).end())});
  const PixelPca pca = fit_pixel_pca(imgs, 6);
  Eigen::MatrixXd c = oracle::to_eigen(x);
  c.rowwise() -= c.colwise().mean();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(c, Eigen::ComputeThinV);
  for (std::size_t j = 0; j < 6; ++j) {
    Vector ref(16);
    for (std::size_t i = 0; i < 16; ++i) ref[i] = svd.matrixV()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    EXPECT_GE(oracle::abs_cos(pca.components.col(j), ref), 1.0 - 1e-9);
    const double s = svd.singularValues()(static_cast<Eigen::Index>(j));
    EXPECT_NEAR(pca.variances[j], s * s / 29.0, 1e-10);
  }
  EXPECT_THROW(pca.project(Vector(15)), InvalidArgument);
}

TEST(Svm, SymmetricPairHasUnitMargin) {
  SvmConfig cfg;
  cfg.c = 1e6;
  const SvmModel m = svm_train(std::vector<Vector>{{-1, 0}, {1, 0}}, {QualityLabel::bad, QualityLabel::good}, cfg);
  EXPECT_NEAR(m.weights[0], 1.0, 1e-9);
  EXPECT_NEAR(m.weights[1], 0.0, 1e-12);
  EXPECT_NEAR(m.bias, 0.0, 1e-12);
  EXPECT_NEAR(geometric_margin(m), 1.0, 1e-9);
}

TEST(Svm, MarginMatchesBruteForceOracle) {
  const Blobs b = blobs(1, 200, {2.0, 1.0}, 0.5);
  const double oracle_margin = brute_force_margin(b);
  ASSERT_GT(oracle_margin, 0.0);
  SvmConfig cfg;
  cfg.c = 1e4;
  const SvmModel m = svm_train(b.x, b.y, cfg);
  EXPECT_EQ(evaluate(m, b.x, b.y).accuracy, 1.0);
  EXPECT_NEAR(geometric_margin(m), oracle_margin, 1e-2);
  for (std::size_t i = 0; i < b.x.size(); ++i)
    EXPECT_GE(label_sign(b.y[i]) * m.decision_value(b.x[i]), 1.0 - 1e-3);
}

TEST(Svm, DuplicationAndOrderInvariance) {
  const Blobs b = blobs(2, 60, {2.0, -1.0, 0.5}, 0.6);
  const SvmModel base = svm_train(b.x, b.y);
  Blobs dup = b, rev = b;
  dup.x.insert(dup.x.end(), b.x.begin(), b.x.end());
  dup.y.insert(dup.y.end(), b.y.begin(), b.y.end());
  std::reverse(rev.x.begin(), rev.x.end());
  std::reverse(rev.y.begin(), rev.y.end());
  for (const SvmModel& other : {svm_train(dup.x, dup.y), svm_train(rev.x, rev.y)}) {
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(other.weights[k], base.weights[k], 1e-8);
    EXPECT_NEAR(other.bias, base.bias, 1e-8);
  }
}

TEST(Svm, Deterministic) {
  const Blobs b = blobs(3, 80, {1.0, 1.0}, 1.0);
  const SvmModel a = svm_train(b.x, b.y), c = svm_train(b.x, b.y);
  EXPECT_EQ(a.weights, c.weights);
  EXPECT_EQ(a.bias, c.bias);
}

TEST(Svm, Errors) {
  EXPECT_THROW(svm_train(std::vector<Vector>{{1.0}, {2.0}}, {QualityLabel::good, QualityLabel::good}), SingleClassError);
  EXPECT_THROW(svm_train(std::vector<Vector>{{1.0}, {std::nan("")}}, {QualityLabel::good, QualityLabel::bad}), InvalidArgument);
  EXPECT_THROW(svm_train(std::vector<Vector>{{1.0}, {2.0, 3.0}}, {QualityLabel::good, QualityLabel::bad}), InvalidArgument);
  EXPECT_THROW(svm_train(std::vector<Vector>{{1.0}}, {QualityLabel::good, QualityLabel::bad}), InvalidArgument);
  SvmConfig cfg;
  cfg.c = 0.0;
  EXPECT_THROW(svm_train(std::vector<Vector>{{1.0}, {2.0}}, {QualityLabel::good, QualityLabel::bad}, cfg), InvalidArgument);
}

TEST(Predict, BoundaryIsBadAndDistanceAntisymmetric) {
  SvmModel m;
  m.weights = {3.0, 4.0};
  m.bias = -5.0;
  const Prediction on = svm_predict(m, Vector{1.0, 0.5});
  EXPECT_EQ(on.distance, 0.0);
  EXPECT_EQ(on.label, QualityLabel::bad);
  // Reflect (2, 1) through the plane 3x + 4y = 5.
  const Vector p = {2.0, 1.0};
  const double v = (dot(m.weights, p) + m.bias) / 25.0;
  const Vector q = {p[0] - 2 * v * 3, p[1] - 2 * v * 4};
  EXPECT_NEAR(svm_predict(m, p).distance, -svm_predict(m, q).distance, 1e-12);
  EXPECT_NEAR(svm_predict(m, p).distance, 1.0, 1e-12);
  EXPECT_THROW(svm_predict(m, Vector{1.0}), InvalidArgument);
}

TEST(Evaluate, PerfectInvertedAndRecount) {
  const Blobs b = blobs(4, 100, {3.0, 0.0}, 1.0);
  const SvmModel m = svm_train(b.x, b.y);
  std::vector<QualityLabel> flipped;
  for (auto l : b.y) flipped.push_back(l == QualityLabel::good ? QualityLabel::bad : QualityLabel::good);
  const Blobs test = blobs(5, 100, {0.5, 0.0}, 1.0);
  const EvaluationReport r = evaluate(m, test.x, test.y);
  std::size_t correct = 0, tp = 0;
  for (std::size_t i = 0; i < test.x.size(); ++i) {
    const bool pred = dot(m.weights, test.x[i]) + m.bias > 0;
    correct += pred == (test.y[i] == QualityLabel::good);
    tp += pred && test.y[i] == QualityLabel::good;
  }
  EXPECT_EQ(r.tp, tp);
  EXPECT_EQ(r.total(), 100u);
  EXPECT_DOUBLE_EQ(r.accuracy, correct / 100.0);
  const EvaluationReport good = evaluate(m, b.x, b.y);
  if (good.accuracy == 1.0) EXPECT_EQ(evaluate(m, b.x, flipped).accuracy, 0.0);
  EXPECT_THROW(evaluate(m, {}, {}), InvalidArgument);
}

TEST(Rank, MatchesDecisionValueOracle) {
  const Blobs train = blobs(6, 100, {2.0, 2.0, 0.0, 1.0}, 1.0);
  const SvmModel m = svm_train(train.x, train.y);
  const Blobs test = blobs(7, 120, {1.0, 1.0, 0.0, 0.5}, 1.0);
  std::vector<std::size_t> oracle_order(test.x.size());
  std::iota(oracle_order.begin(), oracle_order.end(), 0);
  std::vector<double> dv;
  for (const auto& x : test.x) {
    double v = m.bias;
    for (std::size_t k = 0; k < x.size(); ++k) v += m.weights[k] * x[k];
    dv.push_back(v);
  }
  std::stable_sort(oracle_order.begin(), oracle_order.end(),
                   [&](std::size_t a, std::size_t b) { return dv[a] > dv[b]; });
  const auto ranked = rank_by_distance(m, test.x);
  ASSERT_EQ(ranked.size(), oracle_order.size());
  for (std::size_t i = 0; i < ranked.size(); ++i) EXPECT_EQ(ranked[i].index, oracle_order[i]);
}

TEST(Pipeline, SeparatedClustersClassifyPerfectly) {
  Vector center(16, 0.0);
  center[0] = 3.0;  // 6 sigma between the cluster means
  const Blobs b = blobs(8, 400, center, 1.0);
  DatasetManifest m{"synthetic", 8, {}, "."};
  for (std::size_t i = 0; i < b.x.size(); ++i) m.items.push_back({std::to_string(i), b.y[i], {}});
  const auto [train, test] = split_dataset(m, 0.8, 8);
  EXPECT_EQ(train.items.size(), 320u);
  auto gather = [&](const DatasetManifest& part) {
    Blobs out;
    for (const auto& it : part.items) {
      out.x.push_back(b.x[std::stoul(it.path)]);
      out.y.push_back(it.label);
    }
    return out;
  };
  const Blobs tr = gather(train), te = gather(test);
  const SvmModel model = svm_train(tr.x, tr.y);
  EXPECT_EQ(evaluate(model, te.x, te.y).accuracy, 1.0);
}

TEST(Embed2d, TwoDimensionalInputIsRigid) {
  const Matrix x = oracle::random_matrix(9, 12, 2);
  const Embedding2d e = pca_embed_2d(x);
  const Matrix c = center_columns(x);
  for (std::size_t i = 0; i < 12; ++i)
    for (std::size_t j = 0; j < 12; ++j) {
      const Vector a = {c(i, 0) - c(j, 0), c(i, 1) - c(j, 1)};
      const Vector b = {e.coords(i, 0) - e.coords(j, 0), e.coords(i, 1) - e.coords(j, 1)};
      EXPECT_NEAR(norm2(a), norm2(b), 1e-12);
    }
  EXPECT_FALSE(e.rank_deficient);
}

TEST(Embed2d, ProjectedVarianceEqualsTopEigenvalues) {
  const Matrix x = oracle::random_matrix(10, 40, 8);
  const Embedding2d e = pca_embed_2d(x);
  const auto eig = oracle::classical_jacobi_eigenvalues(covariance(x));
  double var = 0.0;
  for (double v : e.coords.data()) var += v * v;
  EXPECT_NEAR(var / 39.0, eig[0] + eig[1], 1e-10);
}

TEST(Embed2d, ClustersStaySeparated) {
  Vector center(64, 0.0);
  for (std::size_t k = 0; k < 64; ++k) center[k] = k % 2 ? 0.6 : -0.6;
  const Blobs b = blobs(11, 60, center, 1.0);
  Matrix x(60, 64);
  for (std::size_t i = 0; i < 60; ++i) std::copy(b.x[i].begin(), b.x[i].end(), x.row(i).begin());
  const Embedding2d e = pca_embed_2d(x);
  double silhouette = 0.0;
  for (std::size_t i = 0; i < 60; ++i) {
    double same = 0.0, other = 0.0;
    std::size_t ns = 0, no = 0;
    for (std::size_t j = 0; j < 60; ++j) {
      if (i == j) continue;
      const double d = std::hypot(e.coords(i, 0) - e.coords(j, 0), e.coords(i, 1) - e.coords(j, 1));
      if (b.y[i] == b.y[j]) same += d, ++ns;
      else other += d, ++no;
    }
    const double a = same / ns, bb = other / no;
    silhouette += (bb - a) / std::max(a, bb);
  }
  EXPECT_GT(silhouette / 60.0, 0.0);
}

TEST(Embed2d, RankOneIsFlagged) {
  Matrix x(5, 3);
  for (std::size_t i = 0; i < 5; ++i) x(i, 0) = x(i, 1) = static_cast<double>(i);
  const Embedding2d e = pca_embed_2d(x);
  EXPECT_TRUE(e.rank_deficient);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(e.coords(i, 1), 0.0);
  EXPECT_THROW(pca_embed_2d(Matrix(2, 3)), InvalidArgument);
}
