#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "latentkit/directions.hpp"
#include "oracles.hpp"

using namespace latentkit;

namespace {

double orthonormality_error(const Matrix& n) {
  const Matrix g = gram(n);
  double worst = 0.0;
  for (std::size_t i = 0; i < g.rows(); ++i)
    for (std::size_t j = 0; j < g.cols(); ++j)
      worst = std::max(worst, std::abs(g(i, j) - (i == j ? 1.0 : 0.0)));
  return worst;
}

Matrix column_centered(Matrix a) { return center_columns(a); }

// Kurtosis-based unmixing angle in degrees, searched on a 0.01 degree grid over [0, 90).
double grid_search_rotation(const Matrix& x) {
  auto excess_kurtosis = [](const Vector& y) {
    double m2 = 0.0, m4 = 0.0;
    for (double v : y) {
      m2 += v * v;
      m4 += v * v * v * v;
    }
    m2 /= y.size();
    m4 /= y.size();
    return m4 / (m2 * m2) - 3.0;
  };
  double best = -1.0, best_deg = 0.0;
  for (int step = 0; step < 9000; ++step) {
    const double deg = step * 0.01, r = deg * std::numbers::pi / 180.0;
    Vector y0(x.cols()), y1(x.cols());
    for (std::size_t t = 0; t < x.cols(); ++t) {
      y0[t] = std::cos(r) * x(0, t) + std::sin(r) * x(1, t);
      y1[t] = -std::sin(r) * x(0, t) + std::cos(r) * x(1, t);
    }
    const double score = std::abs(excess_kurtosis(y0)) + std::abs(excess_kurtosis(y1));
    if (score > best) {
      best = score;
      best_deg = deg;
    }
  }
  return best_deg;
}

double angle_mod_90(double deg) {
  double a = std::fmod(deg, 90.0);
  return a < 0 ? a + 90.0 : a;
}

}  // namespace

TEST(Sefa, DiagonalWithoutNormalization) {
  const Matrix a = {{3, 0, 0}, {0, 2, 0}, {0, 0, 1}};
  const DirectionSet s = sefa(a, 3, SefaNormalization::none);
  EXPECT_EQ(s.scores, (Vector{9, 4, 1}));
  for (std::size_t j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(std::abs(s.directions(j, j)), 1.0);
}

TEST(Sefa, RowNormalizationHandCase) {
  const Matrix a = {{2, 0}, {0, 1}, {0, 1}};
  const DirectionSet s = sefa(a, 1);
  EXPECT_DOUBLE_EQ(s.scores[0], 2.0);
  EXPECT_DOUBLE_EQ(std::abs(s.directions(1, 0)), 1.0);
  EXPECT_EQ(s.directions(0, 0), 0.0);
}

TEST(Sefa, MatchesJacobiOracleOnRandomWeights) {
  const Matrix a = oracle::random_matrix(7, 64, 16);
  const DirectionSet s = sefa(a, 8);
  const Matrix op = gram(l2_normalize_rows(a));
  const auto expected = oracle::classical_jacobi_eigenvalues(op);
  const double fro = frobenius_norm(op);
  for (std::size_t j = 0; j < 8; ++j) {
    EXPECT_NEAR(s.scores[j], expected[j], 1e-10);
    const Vector n = s.direction(j);
    Vector r = op * n;
    for (std::size_t i = 0; i < r.size(); ++i) r[i] -= s.scores[j] * n[i];
    EXPECT_LE(norm2(r), 1e-8 * fro);
  }
  EXPECT_LE(orthonormality_error(s.directions), 1e-8);
}

TEST(Sefa, ColumnNormalizationOption) {
  const Matrix a = oracle::random_matrix(8, 10, 4);
  const DirectionSet s = sefa(a, 2, SefaNormalization::columns);
  EXPECT_EQ(s.config["normalize"], "columns");
  const auto expected = oracle::classical_jacobi_eigenvalues(gram(l2_normalize_cols(a)));
  EXPECT_NEAR(s.scores[0], expected[0], 1e-10);
}

TEST(Sefa, ScaleInvariantDirections) {
  const Matrix a = oracle::random_matrix(9, 30, 6);
  const DirectionSet base = sefa(a, 4, SefaNormalization::none);
  const DirectionSet scaled = sefa(2.5 * a, 4, SefaNormalization::none);
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_GE(oracle::abs_cos(base.direction(j), scaled.direction(j)), 1.0 - 1e-10);
    EXPECT_NEAR(scaled.scores[j], 6.25 * base.scores[j], 1e-9 * scaled.scores[j]);
  }
}

TEST(Sefa, Errors) {
  EXPECT_THROW(sefa(Matrix(4, 3, 1.0), 4), InvalidArgument);
  EXPECT_THROW(sefa(Matrix{{1, 1}, {0, 0}}, 1), InvalidArgument);
  EXPECT_NO_THROW(sefa(Matrix{{1, 1}, {0, 0}}, 1, SefaNormalization::none));
}

TEST(PcaWeights, EqualsSefaWhenCentered) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Matrix a = column_centered(oracle::random_matrix(seed, 64, 16));
    const DirectionSet s = sefa(a, 16, SefaNormalization::none);
    const DirectionSet p = pca_weights(a, 16);
    const DirectionMatch m = match_directions(s, p);
    const auto sep = eigengap_separated(s.scores);
    for (std::size_t j = 0; j < 16; ++j)
      if (sep[j]) EXPECT_GE(m.scores[j], 0.999);
  }
}

TEST(PcaWeights, ConstantColumnHasZeroVariance) {
  Matrix a = oracle::random_matrix(4, 20, 3);
  for (std::size_t r = 0; r < 20; ++r) a(r, 1) = 5.0;
  const DirectionSet p = pca_weights(a, 3);
  EXPECT_NEAR(p.scores[2], 0.0, 1e-12);
  EXPECT_NEAR(std::abs(p.directions(1, 2)), 1.0, 1e-12);
}

TEST(PcaWeights, MatchesCenteredSvd) {
  const Matrix a = oracle::random_matrix(7, 64, 16);
  const DirectionSet p = pca_weights(a, 16);
  const Matrix v = oracle::centered_svd_directions(a);
  for (std::size_t j = 0; j < 16; ++j)
    EXPECT_GE(oracle::abs_cos(p.direction(j), v.col(j)), 1.0 - 1e-9) << "component " << j;
}

TEST(PcaWeights, Errors) {
  EXPECT_THROW(pca_weights(Matrix(1, 3, 1.0), 1), InvalidArgument);
  EXPECT_THROW(pca_weights(Matrix(5, 3, 1.0), 4), InvalidArgument);
}

TEST(Ganspace, DefaultSampleCount) { EXPECT_EQ(kGanspaceDefaultSamples, 10000u); }

TEST(Ganspace, AgreesWithSefaOnDefaultSpec) {
  const GeneratorSpec spec = build_spec({}, 0);
  Rng rng(13);
  const DirectionSet g = ganspace_sample(spec, 4, rng);
  EXPECT_EQ(g.config["num_samples"], 10000);
  const DirectionSet s = sefa(spec.latent_weights(), 4, SefaNormalization::none);
  const DirectionMatch m = match_directions(s, g);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_GE(m.scores[j], 0.99) << "component " << j;
  EXPECT_LE(orthonormality_error(g.directions), 1e-10);
}

TEST(Ganspace, OrthogonalWeightsGiveFlatSpectrum) {
  // 4x4 rotation: at 10,000 samples the sample spectrum stays within 10%.
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(oracle::to_eigen(oracle::random_matrix(31, 4, 4)));
  const Matrix q = oracle::from_eigen(qr.householderQ() * Eigen::MatrixXd::Identity(4, 4));
  GeneratorDims d;
  d.latent_dim = 4;
  d.hidden_dim = 4;
  d.word_dim = d.sentence_dim = 1;
  d.image_height = d.image_width = 2;
  const GeneratorSpec spec =
      GeneratorSpec::with_weights(d, 0, q, Matrix(4, 1), Matrix(4, 1), Matrix(4, 4));
  Rng rng(13);
  const DirectionSet g = ganspace_sample(spec, 4, rng);
  EXPECT_LE(g.scores.front() / g.scores.back(), 1.1);
}

TEST(Ganspace, DeterministicAndGuarded) {
  const GeneratorSpec spec = build_spec({}, 0);
  Rng a(5), b(5);
  EXPECT_EQ(ganspace_sample(spec, 3, a, 500).directions, ganspace_sample(spec, 3, b, 500).directions);
  EXPECT_THROW(ganspace_sample(spec, 17, a, 500), InvalidArgument);
  EXPECT_THROW(ganspace_sample(spec, 2, a, 1), InvalidArgument);
}

TEST(Ica, IdentityMixingGivesSignedPermutation) {
  Rng rng(3);
  const std::size_t l = 2000;
  Matrix s(4, l);
  for (std::size_t t = 0; t < l; ++t) {
    s(0, t) = rng.uniform(-1, 1);
    s(1, t) = rng.laplace();
    s(2, t) = std::pow(rng.uniform(-1, 1), 3);
    s(3, t) = rng.uniform() < 0.5 ? -1.0 : 1.0;
  }
  // Center each signal and orthonormalize the rows so they are exactly orthonormal.
  Matrix st = center_columns(s.transpose());
  st = orthonormalize_columns(st);
  const Matrix x = st.transpose();
  IcaConfig cfg;
  cfg.components = 4;
  cfg.seed = 1;
  const IcaDecomposition dec = ica_decompose(x, cfg);
  EXPECT_LE(amari_index(dec.unmixing), 0.02);
  const Matrix wwt = dec.rotation * dec.rotation.transpose();
  EXPECT_LE(max_abs(wwt - Matrix::identity(4)), 1e-8);
}

TEST(Ica, RotationMixtureRecoversAngle) {
  Rng rng(17);
  const std::size_t l = 10000;
  const double root3 = std::sqrt(3.0), theta = 30.0, r = theta * std::numbers::pi / 180.0;
  Matrix x(2, l);
  for (std::size_t t = 0; t < l; ++t) {
    const double s0 = rng.uniform(-root3, root3), s1 = rng.uniform(-root3, root3);
    x(0, t) = std::cos(r) * s0 - std::sin(r) * s1;
    x(1, t) = std::sin(r) * s0 + std::cos(r) * s1;
  }
  IcaConfig cfg;
  cfg.components = 2;
  const IcaDecomposition dec = ica_decompose(x, cfg);
  const double recovered =
      angle_mod_90(std::atan2(dec.unmixing(0, 1), dec.unmixing(0, 0)) * 180.0 / std::numbers::pi);
  const double grid = grid_search_rotation(x);
  EXPECT_NEAR(grid, theta, 2.0);
  EXPECT_NEAR(recovered, grid, 2.0);
  EXPECT_NEAR(recovered, theta, 2.0);
}

TEST(Ica, PlantedLaplaceSources) {
  Rng rng(21);
  const std::size_t l = 256, k = 4;
  Matrix s(k, l);
  for (double& v : s.data()) v = rng.laplace();
  Matrix b(64, k);
  for (double& v : b.data()) v = rng.normal();
  const Matrix a = b * s;
  IcaConfig cfg;
  cfg.components = k;
  const DirectionSet n = ica_orthogonal(a, cfg);
  const Matrix truth = l2_normalize_cols(center_columns(s.transpose()));
  EXPECT_LE(amari_index(n.directions.transpose() * truth), 0.1);
  EXPECT_LE(orthonormality_error(n.directions), 1e-10);
  EXPECT_TRUE(std::is_sorted(n.scores.rbegin(), n.scores.rend()));
}

TEST(Ica, WithoutAmbientStepStillUnitNorm) {
  Rng rng(40);
  Matrix s(3, 200);
  for (double& v : s.data()) v = rng.laplace();
  Matrix b(32, 3);
  for (double& v : b.data()) v = rng.normal();
  const Matrix a = b * s;
  IcaConfig cfg;
  cfg.components = 3;
  cfg.ambient_orthonormalize = false;
  const DirectionSet n = ica_orthogonal(a, cfg);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(norm2(n.direction(j)), 1.0, 1e-12);
}

TEST(Ica, RankGuardAndNonConvergence) {
  const Matrix a = oracle::random_matrix(41, 64, 16);
  IcaConfig cfg;
  cfg.components = 99;
  EXPECT_THROW(ica_orthogonal(a, cfg), NumericalError);
  cfg.components = 16;  // centered rank is at most 15
  EXPECT_THROW(ica_orthogonal(a, cfg), NumericalError);
  cfg.components = 6;
  cfg.max_iter = 1;
  try {
    ica_orthogonal(a, cfg);
    FAIL() << "expected non-convergence";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("final delta"), std::string::npos);
  }
}

TEST(Ica, DeterministicGivenSeed) {
  const Matrix a = oracle::random_matrix(42, 40, 10);
  IcaConfig cfg;
  cfg.components = 4;
  cfg.seed = 9;
  EXPECT_EQ(ica_orthogonal(a, cfg).directions, ica_orthogonal(a, cfg).directions);
}

TEST(MatchDirections, SelfMatch) {
  const DirectionSet s = sefa(oracle::random_matrix(1, 20, 6), 5);
  const DirectionMatch m = match_directions(s, s);
  for (std::size_t j = 0; j < 5; ++j) {
    EXPECT_EQ(m.permutation[j], j);
    EXPECT_EQ(m.signs[j], 1);
    EXPECT_NEAR(m.scores[j], 1.0, 1e-12);
  }
}

TEST(MatchDirections, SignFlipsRecorded) {
  const DirectionSet s = sefa(oracle::random_matrix(2, 20, 6), 4);
  Matrix flipped = -1.0 * s.directions;
  const DirectionMatch m = match_directions(s.directions, flipped);
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_EQ(m.signs[j], -1);
    EXPECT_NEAR(m.scores[j], 1.0, 1e-12);
  }
}

TEST(MatchDirections, RecoversPlantedPermutationAndSigns) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const DirectionSet s = sefa(oracle::random_matrix(seed, 30, 8), 8);
    Rng rng(seed + 100);
    std::vector<std::size_t> perm(8);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = 7; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
    std::vector<int> signs(8);
    Matrix n2(8, 8);
    // Column perm[i] of N2 is sign_i * column i of N1.
    for (std::size_t i = 0; i < 8; ++i) {
      signs[i] = rng.uniform() < 0.5 ? -1 : 1;
      for (std::size_t r = 0; r < 8; ++r) n2(r, perm[i]) = signs[i] * s.directions(r, i);
    }
    const DirectionMatch m = match_directions(s.directions, n2);
    EXPECT_EQ(m.permutation, perm);
    EXPECT_EQ(m.signs, signs);
  }
}

TEST(MatchDirections, ShapeMismatch) {
  EXPECT_THROW(match_directions(Matrix(4, 2, 1.0), Matrix(5, 2, 1.0)), InvalidArgument);
}

TEST(SolveAssignment, MatchesBruteForce) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Matrix cost = oracle::random_matrix(seed, 5, 5);
    std::vector<std::size_t> perm = {0, 1, 2, 3, 4};
    double best = 1e300;
    do {
      double c = 0.0;
      for (std::size_t i = 0; i < 5; ++i) c += cost(i, perm[i]);
      best = std::min(best, c);
    } while (std::next_permutation(perm.begin(), perm.end()));
    const auto a = solve_assignment(cost);
    double got = 0.0;
    for (std::size_t i = 0; i < 5; ++i) got += cost(i, a[i]);
    EXPECT_NEAR(got, best, 1e-12);
  }
}

TEST(Amari, SignedPermutationIsZero) {
  const Matrix p = {{0, -2, 0}, {0.5, 0, 0}, {0, 0, -1}};
  EXPECT_DOUBLE_EQ(amari_index(p), 0.0);
}

TEST(Amari, AllOnesIsOne) { EXPECT_DOUBLE_EQ(amari_index(Matrix(2, 2, 1.0)), 1.0); }

TEST(Amari, RandomMatchesHandFormula) {
  const Matrix p = oracle::random_matrix(2, 4, 4);
  double total = 0.0;
  for (int pass = 0; pass < 2; ++pass)
    for (std::size_t a = 0; a < 4; ++a) {
      double sum = 0.0, mx = 0.0;
      for (std::size_t b = 0; b < 4; ++b) {
        const double v = std::abs(pass == 0 ? p(a, b) : p(b, a));
        sum += v;
        mx = std::max(mx, v);
      }
      total += sum / mx - 1.0;
    }
  EXPECT_NEAR(amari_index(p), total / (2.0 * 4 * 3), 1e-15);
}

TEST(Amari, ZeroRowRejected) {
  EXPECT_THROW(amari_index(Matrix{{1, 0}, {0, 0}}), InvalidArgument);
}

TEST(EigengapSeparated, FlagsNearTies) {
  const Vector s = {5.0, 3.0, 3.0 + 1e-9, 1.0};
  EXPECT_EQ(eigengap_separated(s), (std::vector<bool>{true, false, false, true}));
}

TEST(DirectionSetIo, SavesPairAndReloads) {
  const auto dir = std::filesystem::temp_directory_path() / "latentkit_dirset";
  std::filesystem::create_directories(dir);
  const DirectionSet s = sefa(oracle::random_matrix(3, 20, 5), 3);
  save_direction_set(dir / "N", s);
  const DirectionSet back = load_direction_set(dir / "N.npy");
  EXPECT_EQ(back.directions, s.directions);
  EXPECT_EQ(back.scores, s.scores);
  EXPECT_EQ(back.method, "sefa");
  EXPECT_EQ(back.config, s.config);
}
