#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace sarl;
using sarl::testing::Draws;

namespace {

struct Instance {
  FiniteMdp mdp;
  Policy pi;
  Policy mu;
  Matrix phi;
};

Instance random_instance(Draws& d, Index n = 5, Index m = 2, Index k = 3, double gamma = 0.9) {
  return {sarl::testing::random_mdp(d, n, m, gamma), sarl::testing::random_policy(d, n, m),
          sarl::testing::random_policy(d, n, m, 0.2), d.matrix(n, k)};
}

/// m = sum_k (gamma P_lambda^T)^k D_mu i.
Vector neumann_emphasis(const Instance& in, double lambda, const Vector& interest) {
  const Matrix P = sarl::testing::brute_force_chain(in.mdp, in.pi);
  const auto [rl, Pl] = sarl::testing::series_lambda_bellman(P, Vector::Zero(P.rows()), in.mdp.gamma(), lambda);
  const Vector dmu = sarl::testing::null_space_stationary(sarl::testing::brute_force_chain(in.mdp, in.mu));
  Vector term = dmu.cwiseProduct(interest);
  Vector acc = term;
  for (int k = 0; k < 20000 && term.cwiseAbs().maxCoeff() > 1e-18; ++k) {
    term = in.mdp.gamma() * Pl.transpose() * term;
    acc += term;
  }
  return acc;
}

}  // namespace

// --- GTD system --------------------------------------------------------------

TEST(GtdSystem, MatchesSeriesOracleAndBlockLayout) {
  Draws d(21);
  for (int trial = 0; trial < 30; ++trial) {
    const Instance in = random_instance(d);
    const double lambda = trial % 3 == 0 ? 0.0 : d.uniform();
    const GtdSystem sys = gtd_expected_system(in.mdp, in.pi, in.mu, lambda, FeatureMap(in.phi));
    const auto [A, b] = sarl::testing::reference_td_system(in.mdp, in.pi, in.mu, lambda, in.phi);
    EXPECT_LE((sys.A - A).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LE((sys.b - b).cwiseAbs().maxCoeff(), 1e-10);
    const Vector dmu = sarl::testing::null_space_stationary(sarl::testing::brute_force_chain(in.mdp, in.mu));
    EXPECT_LE((sys.C - in.phi.transpose() * dmu.asDiagonal() * in.phi).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((sys.C - sys.C.transpose()).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_GE(Eigen::SelfAdjointEigenSolver<Matrix>(sys.C).eigenvalues().minCoeff(), -1e-10);
    const Index k = 3;
    EXPECT_EQ(sys.A_block.topLeftCorner(k, k), -sys.C);
    EXPECT_EQ(sys.A_block.topRightCorner(k, k), sys.A);
    EXPECT_EQ(sys.A_block.bottomLeftCorner(k, k), Matrix(-sys.A.transpose()));
    EXPECT_TRUE(sys.A_block.bottomRightCorner(k, k).isZero(0.0));
    EXPECT_TRUE((sys.b_block.head(k) - sys.b).isZero(0.0));
    EXPECT_TRUE(sys.b_block.tail(k).isZero(0.0));
    // A' + A'^T = diag(-2C, 0) exactly.
    const Matrix sym = sys.A_block + sys.A_block.transpose();
    EXPECT_EQ(sym.topLeftCorner(k, k), Matrix(-2.0 * sys.C));
    EXPECT_TRUE(sym.topRightCorner(k, k).isZero(0.0));
    EXPECT_TRUE(sym.bottomRightCorner(k, k).isZero(0.0));
  }
}

TEST(GtdSystem, LambdaZeroUsesOneStepKernel) {
  Draws d(22);
  const Instance in = random_instance(d);
  const GtdSystem sys = gtd_expected_system(in.mdp, in.pi, in.mu, 0.0, FeatureMap(in.phi));
  const Matrix P = induce_chain(in.mdp, in.pi).P;
  const Vector dmu = stationary_distribution(induce_chain(in.mdp, in.mu));
  const Matrix A = in.phi.transpose() * dmu.asDiagonal() * (0.9 * P - Matrix::Identity(5, 5)) * in.phi;
  EXPECT_LE((sys.A - A).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(GtdSystem, TabularOnPolicyFixedPointIsValueFunction) {
  Draws d(23);
  for (const double lambda : {0.0, 0.3, 0.8}) {
    const FiniteMdp mdp = sarl::testing::random_mdp(d, 5, 2, 0.9);
    const Policy pi = sarl::testing::random_policy(d, 5, 2);
    const GtdSystem sys = gtd_expected_system(mdp, pi, pi, lambda, FeatureMap::identity(5));
    const Vector theta = -sys.A.lu().solve(sys.b);
    const InducedChain c = induce_chain(mdp, pi);
    const Vector v = sarl::testing::fixed_point_iteration(c.P, c.r, 0.9);
    EXPECT_LE((theta - v).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(GtdSystem, Errors) {
  Draws d(24);
  const Instance in = random_instance(d);
  Matrix phi = in.phi;
  phi.col(1).setZero();
  EXPECT_THROW(gtd_expected_system(in.mdp, in.pi, in.mu, 0.0, FeatureMap(phi)), RankError);
  // Behaviour that never leaves state 0 under action 0.
  Matrix stay = Matrix::Identity(5, 5);
  const FiniteMdp mdp({stay, stay}, Matrix::Zero(5, 2), 0.9, Vector::Constant(5, 0.2));
  EXPECT_THROW(gtd_expected_system(mdp, in.pi, in.mu, 0.0, FeatureMap(in.phi)), ValidationError);
}

TEST(GtdSystem, BlockInversionConsistency) {
  Draws d(25);
  int checked = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Index n = 3 + static_cast<Index>(d.uniform(0, 4));
    const Index k = 1 + static_cast<Index>(d.uniform(0, static_cast<double>(n)));
    const Instance in = random_instance(d, n, 2, std::min(k, n), d.uniform(0.1, 0.95));
    const GtdSystem sys = gtd_expected_system(in.mdp, in.pi, in.mu, d.uniform(), FeatureMap(in.phi));
    const Vector theta = -sys.A.fullPivLu().solve(sys.b);
    const Vector x = -sys.A_block.fullPivLu().solve(sys.b_block);
    const Index kk = sys.A.rows();
    if (Eigen::JacobiSVD<Matrix>(sys.A).singularValues().minCoeff() < 1e-6) continue;
    EXPECT_LE((x.tail(kk) - theta).cwiseAbs().maxCoeff(), 1e-8 * std::max(1.0, theta.norm()));
    EXPECT_LE(x.head(kk).cwiseAbs().maxCoeff(), 1e-8 * std::max(1.0, theta.norm()));
    ++checked;
  }
  EXPECT_GT(checked, 900);
}

TEST(GtdSystem, MspbeVanishesAtFixedPoint) {
  Draws d(26);
  for (int trial = 0; trial < 20; ++trial) {
    const Instance in = random_instance(d);
    const double lambda = d.uniform();
    const FeatureMap fm(in.phi);
    const GtdSystem g = gtd_expected_system(in.mdp, in.pi, in.mu, lambda, fm);
    const Vector dmu = stationary_distribution(induce_chain(in.mdp, in.mu));
    EXPECT_LE(mspbe(in.mdp, in.pi, fm, dmu, lambda, -g.A.lu().solve(g.b)), 1e-8);
    const EtdSystem e = etd_expected_system(in.mdp, in.pi, in.mu, lambda, Vector::Ones(5), fm);
    EXPECT_LE(mspbe(in.mdp, in.pi, fm, e.m, lambda, -e.A.lu().solve(e.b)), 1e-8);
  }
}

// --- ETD system --------------------------------------------------------------

TEST(EtdSystem, MatchesNeumannOracle) {
  Draws d(31);
  for (int trial = 0; trial < 30; ++trial) {
    const Instance in = random_instance(d);
    const double lambda = d.uniform();
    const Vector interest = d.vector(5, 0.5, 2.0);
    const EtdSystem sys = etd_expected_system(in.mdp, in.pi, in.mu, lambda, interest, FeatureMap(in.phi));
    const Vector m = neumann_emphasis(in, lambda, interest);
    EXPECT_LE((sys.m - m).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_GT(sys.m.minCoeff(), 0.0);
    const auto [A, b] = sarl::testing::reference_td_system(in.mdp, in.pi, in.mu, lambda, in.phi, &m);
    EXPECT_LE((sys.A - A).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LE((sys.b - b).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(EtdSystem, GammaZeroAndLambdaOne) {
  Draws d(32);
  Instance in = random_instance(d, 5, 2, 3, 0.0);
  const Vector interest = d.vector(5, 0.5, 2.0);
  const Vector dmu = stationary_distribution(induce_chain(in.mdp, in.mu));
  EtdSystem sys = etd_expected_system(in.mdp, in.pi, in.mu, 0.4, interest, FeatureMap(in.phi));
  EXPECT_LE((sys.m - dmu.cwiseProduct(interest)).cwiseAbs().maxCoeff(), 1e-15);
  in = random_instance(d);
  const Vector dmu2 = stationary_distribution(induce_chain(in.mdp, in.mu));
  sys = etd_expected_system(in.mdp, in.pi, in.mu, 1.0, Vector::Ones(5), FeatureMap(in.phi));
  EXPECT_LE((sys.m - dmu2).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(EtdSystem, NonPositiveInterestRejected) {
  Draws d(33);
  const Instance in = random_instance(d);
  Vector interest = Vector::Ones(5);
  interest[3] = 0.0;
  EXPECT_THROW(etd_expected_system(in.mdp, in.pi, in.mu, 0.5, interest, FeatureMap(in.phi)), ValidationError);
}

TEST(EtdSystem, NegativeDefiniteOnRandomInstances) {
  Draws d(34);
  for (int trial = 0; trial < 100; ++trial) {
    const Instance in = random_instance(d);
    const EtdSystem sys = etd_expected_system(in.mdp, in.pi, in.mu, d.uniform(), Vector::Ones(5),
                                              FeatureMap(in.phi));
    const SpectralReport r = spectral_report(sys.A);
    const double oracle =
        Eigen::SelfAdjointEigenSolver<Matrix>(sys.A + sys.A.transpose()).eigenvalues().maxCoeff();
    EXPECT_LT(oracle, 0.0);
    EXPECT_TRUE(r.is_negative_definite) << "max sym eig " << r.max_symmetric_eigenvalue;
    EXPECT_TRUE(r.is_hurwitz);
  }
}

// --- spectral_report ---------------------------------------------------------

TEST(SpectralReport, MinusIdentity) {
  const SpectralReport r = spectral_report(-Matrix::Identity(3, 3), Vector::Ones(3));
  EXPECT_TRUE(r.is_hurwitz);
  EXPECT_TRUE(r.is_negative_definite);
  ASSERT_TRUE(r.fixed_point.has_value());
  EXPECT_EQ(*r.fixed_point, Vector::Ones(3));
  EXPECT_DOUBLE_EQ(r.condition_number, 1.0);
}

TEST(SpectralReport, Rotation) {
  Matrix M(2, 2);
  M << 0, 1, -1, 0;
  const SpectralReport r = spectral_report(M);
  EXPECT_FALSE(r.is_hurwitz);
  EXPECT_EQ(r.hurwitz, Verdict::indeterminate);
  EXPECT_NEAR(std::abs(r.eigenvalues[0].imag()), 1.0, 1e-14);
  EXPECT_NEAR(r.eigenvalues[0].real(), 0.0, 1e-14);
}

TEST(SpectralReport, SingularWithOffset) {
  Matrix M(2, 2);
  M << 1, 2, 2, 4;
  const SpectralReport r = spectral_report(M, Vector::Ones(2));
  EXPECT_TRUE(r.singular);
  EXPECT_FALSE(r.fixed_point.has_value());
  EXPECT_THROW(spectral_report(Matrix::Zero(2, 3)), DimensionError);
}

TEST(SpectralReport, IllConditionedFlag) {
  Matrix M = -Matrix::Identity(2, 2);
  M(1, 1) = -1e-9;
  const SpectralReport r = spectral_report(M, Vector::Ones(2));
  EXPECT_TRUE(r.ill_conditioned);
  EXPECT_FALSE(r.singular);
}

TEST(SpectralReport, VerdictsMatchMargins) {
  Draws d(41);
  for (int trial = 0; trial < 200; ++trial) {
    const Matrix M = d.matrix(4, 4, -2, 1);
    const SpectralReport r = spectral_report(M);
    Eigen::ComplexEigenSolver<Matrix> ces(M);
    const double maxre = ces.eigenvalues().real().maxCoeff();
    EXPECT_EQ(r.is_hurwitz, maxre < -1e-10);
    const double maxsym = Eigen::SelfAdjointEigenSolver<Matrix>(M + M.transpose()).eigenvalues().maxCoeff();
    EXPECT_EQ(r.is_negative_definite, maxsym < -1e-10);
  }
}

TEST(SpectralReport, NegativeDefiniteImpliesHurwitz) {
  Draws d(42);
  int nd = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Index n = 2 + static_cast<Index>(d.uniform(0, 5));
    const Matrix B = d.matrix(n, n);
    const Matrix S = d.matrix(n, n);
    // Negative definite symmetric part with a random skew part, or a generic matrix.
    const Matrix M = trial % 2 == 0 ? Matrix(-(B * B.transpose()) - 0.01 * Matrix::Identity(n, n) +
                                              (S - S.transpose()))
                                    : d.matrix(n, n, -1.5, 0.5);
    const SpectralReport r = spectral_report(M);
    if (r.is_negative_definite) {
      ++nd;
      EXPECT_TRUE(r.is_hurwitz);
    }
  }
  EXPECT_GE(nd, 500);
}

TEST(SpectralReport, GtdBlockHurwitzNotNegativeDefinite) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const EnvironmentBundle b = random_offpolicy(seed);
    const GtdSystem sys = gtd_expected_system(b.mdp, b.pi, b.mu, 0.5, b.features);
    const SpectralReport r = spectral_report(sys.A_block, sys.b_block);
    EXPECT_TRUE(r.is_hurwitz);
    EXPECT_FALSE(r.is_negative_definite);
    EXPECT_NEAR(r.max_symmetric_eigenvalue, 0.0, 1e-10);
    ASSERT_TRUE(r.fixed_point.has_value());
    EXPECT_LE((r.fixed_point->tail(3) + sys.A.lu().solve(sys.b)).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(SpectralReport, JsonHasEigenvaluePairs) {
  Matrix M(2, 2);
  M << 0, 1, -1, 0;
  const Json j = to_json(spectral_report(M, Vector::Ones(2)));
  ASSERT_EQ(j["eigenvalues"].size(), 2u);
  EXPECT_EQ(j["eigenvalues"][0].size(), 2u);
  EXPECT_EQ(j["hurwitz"], "indeterminate");
  EXPECT_TRUE(j["fixed_point"].is_array());
  EXPECT_TRUE(j.contains("condition_number"));
}

// --- Monte-Carlo agreement of sampled A(Y) ------------------------------------

TEST(GtdSystem, SampledMatricesAverageToAnalytic) {
  const EnvironmentBundle b = random_offpolicy(0);
  const double lambda = 0.5;
  const GtdSystem sys = gtd_expected_system(b.mdp, b.pi, b.mu, lambda, b.features);
  Matrix sumA = Matrix::Zero(3, 3);
  Matrix sumC = Matrix::Zero(3, 3);
  Vector sumb = Vector::Zero(3);
  LearnerConfig cfg{Algorithm::gtd, lambda};
  const std::uint64_t n = 1'000'000;
  run(cfg, b.mdp, b.pi, b.mu, b.features, Schedule::make(1, 1, 1), n, 3, [&](const StepView& v) {
    const GtdSampleMatrices m = gtd_sample_matrices(v.sample, v.trace, b.mdp.gamma());
    sumA += m.A;
    sumb += m.b;
    sumC += m.C;
  });
  const double N = static_cast<double>(n);
  EXPECT_LT((sumA / N - sys.A).norm() / sys.A.norm(), 0.02);
  EXPECT_LT((sumb / N - sys.b).norm() / sys.b.norm(), 0.02);
  EXPECT_LT((sumC / N - sys.C).norm() / sys.C.norm(), 0.02);
}
