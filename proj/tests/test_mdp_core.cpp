#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace sarl;
using sarl::testing::Draws;

namespace {

FiniteMdp two_state_one_hot() {
  Matrix a0(2, 2), a1(2, 2);
  a0 << 1, 0, 1, 0;
  a1 << 0, 1, 0, 1;
  return FiniteMdp({a0, a1}, Matrix::Zero(2, 2), 0.9, Vector::Constant(2, 0.5));
}

}  // namespace

// --- construction ----------------------------------------------------------

TEST(FiniteMdp, RejectsRowsThatDoNotSumToOne) {
  Matrix p(2, 2);
  p << 0.5, 0.5, 0.5, 0.4;
  try {
    FiniteMdp({p}, Matrix::Zero(2, 1), 0.9, Vector::Constant(2, 0.5));
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("transition[1][0]"), std::string::npos);
  }
}

TEST(FiniteMdp, RejectsGammaOne) {
  EXPECT_THROW(FiniteMdp({Matrix::Identity(2, 2)}, Matrix::Zero(2, 1), 1.0, Vector::Constant(2, 0.5)),
               ValidationError);
}

TEST(FiniteMdp, RejectsBadInitialDistribution) {
  Vector init(2);
  init << 0.7, 0.4;
  EXPECT_THROW(FiniteMdp({Matrix::Identity(2, 2)}, Matrix::Zero(2, 1), 0.5, init), ValidationError);
  init << 1.1, -0.1;
  EXPECT_THROW(FiniteMdp({Matrix::Identity(2, 2)}, Matrix::Zero(2, 1), 0.5, init), ValidationError);
}

TEST(FiniteMdp, StochasticToleranceIsOneEMinusTwelve) {
  Matrix p(1, 2);
  p << 0.5, 0.5 + 5e-13;
  EXPECT_NO_THROW(FiniteMdp({p.replicate(2, 1)}, Matrix::Zero(2, 1), 0.5, Vector::Constant(2, 0.5)));
  p << 0.5, 0.5 + 5e-12;
  EXPECT_THROW(FiniteMdp({p.replicate(2, 1)}, Matrix::Zero(2, 1), 0.5, Vector::Constant(2, 0.5)),
               ValidationError);
}

TEST(Policy, RowsMustSumToOne) {
  Matrix p(2, 2);
  p << 0.5, 0.5, 0.2, 0.7;
  EXPECT_THROW(Policy{p}, ValidationError);
}

// --- induce_chain ----------------------------------------------------------

TEST(InduceChain, SingleActionReturnsKernel) {
  Matrix p(3, 3);
  p << 0, 1, 0, 0, 0, 1, 1, 0, 0;
  const FiniteMdp mdp({p}, Matrix::Ones(3, 1), 0.5, Vector::Constant(3, 1.0 / 3));
  const InducedChain c = induce_chain(mdp, Policy(Matrix::Ones(3, 1)));
  EXPECT_EQ(c.P, p);
  EXPECT_EQ(c.r, Vector::Ones(3));
}

TEST(InduceChain, UniformPolicyAveragesOneHotRows) {
  const InducedChain c = induce_chain(two_state_one_hot(), Policy::uniform(2, 2));
  Matrix expect(2, 2);
  expect << 0.5, 0.5, 0.5, 0.5;
  EXPECT_TRUE(c.P.isApprox(expect, 0.0));
}

TEST(InduceChain, MatchesBruteForceOnRandomInstances) {
  Draws d(11);
  for (int trial = 0; trial < 50; ++trial) {
    const FiniteMdp mdp = sarl::testing::random_mdp(d, 4, 3, 0.9);
    const Policy pi = sarl::testing::random_policy(d, 4, 3, 0.0);
    const InducedChain c = induce_chain(mdp, pi);
    EXPECT_LE((c.P - sarl::testing::brute_force_chain(mdp, pi)).cwiseAbs().maxCoeff(), 1e-15);
    for (Index s = 0; s < 4; ++s) {
      double r = 0.0;
      for (Index a = 0; a < 3; ++a) r += pi(s, a) * mdp.reward(s, a);
      EXPECT_NEAR(c.r[s], r, 1e-15);
      EXPECT_NEAR(c.P.row(s).sum(), 1.0, 1e-12);
    }
  }
}

TEST(InduceChain, DimensionMismatchNamesAxis) {
  try {
    induce_chain(two_state_one_hot(), Policy::uniform(2, 3));
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_EQ(e.axis(), "policy.actions");
    EXPECT_EQ(e.expected(), 2);
    EXPECT_EQ(e.actual(), 3);
  }
}

// --- stationary_distribution -------------------------------------------------

TEST(Stationary, DoublyStochastic) {
  Matrix P(2, 2);
  P << 0.5, 0.5, 0.5, 0.5;
  const Vector d = stationary_distribution(P);
  EXPECT_NEAR(d[0], 0.5, 1e-15);
  EXPECT_NEAR(d[1], 0.5, 1e-15);
}

TEST(Stationary, PeriodicChain) {
  Matrix P(2, 2);
  P << 0, 1, 1, 0;
  const Vector d = stationary_distribution(P);
  EXPECT_NEAR(d[0], 0.5, 1e-15);
  EXPECT_NEAR(d[1], 0.5, 1e-15);
}

TEST(Stationary, MatchesNullSpaceOracle) {
  Draws d(5);
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix P = d.stochastic(5, 5, 0.01);
    const Vector got = stationary_distribution(P);
    const Vector oracle = sarl::testing::null_space_stationary(P);
    EXPECT_LE((got - oracle).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE(((got.transpose() * P) - got.transpose()).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_NEAR(got.sum(), 1.0, 1e-14);
  }
}

TEST(Stationary, ReducibleChainThrowsWithResidual) {
  Matrix P = Matrix::Identity(3, 3);
  EXPECT_THROW(stationary_distribution(P), SolveError);
  EXPECT_FALSE(is_irreducible(P));
}

// --- lambda_bellman ----------------------------------------------------------

TEST(LambdaBellman, LambdaZeroIsOneStepOperator) {
  Draws d(3);
  const FiniteMdp mdp = sarl::testing::random_mdp(d, 4, 2, 0.9);
  const InducedChain c = induce_chain(mdp, Policy::uniform(4, 2));
  const LambdaBellman op = lambda_bellman(mdp, c, 0.0);
  EXPECT_EQ(op.r, c.r);
  EXPECT_EQ(op.P, c.P);
  EXPECT_DOUBLE_EQ(op.contraction_factor, 0.9);
}

TEST(LambdaBellman, LambdaOneIsConstant) {
  Draws d(4);
  const FiniteMdp mdp = sarl::testing::random_mdp(d, 4, 2, 0.8);
  const InducedChain c = induce_chain(mdp, Policy::uniform(4, 2));
  const LambdaBellman op = lambda_bellman(mdp, c, 1.0);
  EXPECT_TRUE(op.P.isZero(0.0));
  EXPECT_EQ(op.contraction_factor, 0.0);
  const Vector v1 = apply_bellman(op, mdp.gamma(), d.vector(4, -5, 5));
  const Vector v2 = apply_bellman(op, mdp.gamma(), d.vector(4, -5, 5));
  EXPECT_EQ(v1, v2);
  const Vector vpi = sarl::testing::fixed_point_iteration(c.P, c.r, mdp.gamma());
  EXPECT_LE((v1 - vpi).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(LambdaBellman, MatchesSeriesOracle) {
  Draws d(8);
  for (const double lambda : {0.1, 0.5, 0.9}) {
    const FiniteMdp mdp = sarl::testing::random_mdp(d, 5, 2, 0.95);
    const InducedChain c = induce_chain(mdp, sarl::testing::random_policy(d, 5, 2));
    const LambdaBellman op = lambda_bellman(mdp, c, lambda);
    const auto [r, P] = sarl::testing::series_lambda_bellman(c.P, c.r, mdp.gamma(), lambda);
    EXPECT_LE((op.r - r).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LE((op.P - P).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(LambdaBellman, RejectsLambdaOutsideUnitInterval) {
  Draws d(1);
  const FiniteMdp mdp = sarl::testing::random_mdp(d, 2, 1, 0.5);
  const InducedChain c = induce_chain(mdp, Policy(Matrix::Ones(2, 1)));
  EXPECT_THROW(lambda_bellman(mdp, c, -0.1), ValidationError);
  EXPECT_THROW(lambda_bellman(mdp, c, 1.5), ValidationError);
}

// Properties over random MDPs and a lambda grid.
TEST(LambdaBellmanProperty, FixedPointRowSumsAndContraction) {
  Draws d(2024);
  for (int trial = 0; trial < 20; ++trial) {
    const double gamma = d.uniform(0.5, 0.99);
    const FiniteMdp mdp = sarl::testing::random_mdp(d, 6, 3, gamma);
    const Policy pi = sarl::testing::random_policy(d, 6, 3);
    const InducedChain c = induce_chain(mdp, pi);
    const Vector vpi = value_function(mdp, c);
    const Vector dpi = stationary_distribution(c);
    for (const double lambda : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      const LambdaBellman op = lambda_bellman(mdp, c, lambda);
      EXPECT_LE((apply_bellman(op, gamma, vpi) - vpi).cwiseAbs().maxCoeff(), 1e-8);
      const double expect = (1.0 - lambda) / (1.0 - gamma * lambda);
      EXPECT_LE((op.P.rowwise().sum().array() - expect).abs().maxCoeff(), 1e-10);
      EXPECT_GE(op.contraction_factor, 0.0);
      EXPECT_LE(op.contraction_factor, gamma);
      for (int pair = 0; pair < 100; ++pair) {
        const Vector v = d.vector(6, -10, 10);
        const Vector w = d.vector(6, -10, 10);
        const double lhs = weighted_norm(apply_bellman(op, gamma, v) - apply_bellman(op, gamma, w), dpi);
        EXPECT_LE(lhs, (op.contraction_factor + 1e-9) * weighted_norm(v - w, dpi));
      }
    }
  }
}

// --- apply_bellman / value_function ------------------------------------------

TEST(ApplyBellman, LambdaZeroMatchesDirectProduct) {
  Draws d(9);
  const FiniteMdp mdp = sarl::testing::random_mdp(d, 4, 2, 0.9);
  const InducedChain c = induce_chain(mdp, Policy::uniform(4, 2));
  const LambdaBellman op = lambda_bellman(mdp, c, 0.0);
  const Vector v = d.vector(4);
  Vector direct(4);
  for (Index s = 0; s < 4; ++s) {
    direct[s] = c.r[s];
    for (Index t = 0; t < 4; ++t) direct[s] += 0.9 * c.P(s, t) * v[t];
  }
  EXPECT_LE((apply_bellman(op, 0.9, v) - direct).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_THROW(apply_bellman(op, 0.9, Vector::Zero(3)), DimensionError);
}

TEST(ValueFunction, ZeroReward) {
  Draws d(10);
  std::vector<Matrix> k{d.stochastic(3, 3), d.stochastic(3, 3)};
  const FiniteMdp mdp(k, Matrix::Zero(3, 2), 0.9, Vector::Constant(3, 1.0 / 3));
  EXPECT_TRUE(value_function(mdp, induce_chain(mdp, Policy::uniform(3, 2))).isZero(0.0));
}

TEST(ValueFunction, AbsorbingState) {
  const FiniteMdp mdp({Matrix::Ones(1, 1)}, Matrix::Constant(1, 1, 2.5), 0.8, Vector::Ones(1));
  const Vector v = value_function(mdp, induce_chain(mdp, Policy(Matrix::Ones(1, 1))));
  EXPECT_NEAR(v[0], 2.5 / 0.2, 1e-12);
}

TEST(ValueFunction, MatchesFixedPointIteration) {
  Draws d(12);
  for (int trial = 0; trial < 20; ++trial) {
    const FiniteMdp mdp = sarl::testing::random_mdp(d, 6, 3, 0.95);
    const InducedChain c = induce_chain(mdp, sarl::testing::random_policy(d, 6, 3));
    const Vector v = value_function(mdp, c);
    EXPECT_LE((v - sarl::testing::fixed_point_iteration(c.P, c.r, 0.95)).cwiseAbs().maxCoeff(), 1e-8);
  }
}

// --- importance_ratio --------------------------------------------------------

TEST(ImportanceRatio, Examples) {
  Matrix p(1, 2), q(1, 2);
  p << 0.9, 0.1;
  q << 0.3, 0.7;
  const Policy pi(p), mu(q);
  EXPECT_DOUBLE_EQ(importance_ratio(pi, mu, 0, 0), 3.0);
  EXPECT_DOUBLE_EQ(importance_ratio(pi, pi, 0, 1), 1.0);
  p << 0.0, 1.0;
  EXPECT_EQ(importance_ratio(Policy(p), mu, 0, 0), 0.0);
  q << 0.0, 1.0;
  try {
    importance_ratio(pi, Policy(q), 0, 0);
    FAIL();
  } catch (const CoverageError& e) {
    EXPECT_EQ(e.state(), 0);
    EXPECT_EQ(e.action(), 0);
  }
}

// --- projection and mspbe ----------------------------------------------------

TEST(Projection, Idempotent) {
  Draws d(13);
  for (int trial = 0; trial < 50; ++trial) {
    const FeatureMap phi(d.matrix(7, 3));
    const Vector w = d.simplex(7, 0.1);
    const Matrix proj = projection(phi, w);
    const Vector v = d.vector(7);
    EXPECT_LE((proj * (proj * v) - proj * v).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Projection, RejectsTinyWeights) {
  Vector w = Vector::Constant(3, 0.5);
  w[2] = 0.0;
  EXPECT_THROW(projection(FeatureMap::identity(3), w), ValidationError);
}

TEST(Mspbe, RankDeficientFeaturesThrow) {
  Draws d(14);
  const FiniteMdp mdp = sarl::testing::random_mdp(d, 4, 2, 0.9);
  Matrix phi = d.matrix(4, 3);
  phi.col(2) = phi.col(0) + phi.col(1);
  try {
    mspbe(mdp, Policy::uniform(4, 2), FeatureMap(phi), Vector::Constant(4, 0.25), 0.0, Vector::Zero(3));
    FAIL();
  } catch (const RankError& e) {
    EXPECT_EQ(e.column(), 2);
    EXPECT_EQ(e.rank(), 2);
  }
}

TEST(Mspbe, TabularValueFunctionIsZero) {
  Draws d(15);
  const FiniteMdp mdp = sarl::testing::random_mdp(d, 5, 2, 0.9);
  const Policy pi = sarl::testing::random_policy(d, 5, 2);
  const InducedChain c = induce_chain(mdp, pi);
  const double j = mspbe(mdp, pi, FeatureMap::identity(5), stationary_distribution(c), 0.0,
                         value_function(mdp, c));
  EXPECT_LE(j, 1e-20);
}

TEST(Mspbe, ZeroAtTdFixedPointAndPositiveAway) {
  Draws d(16);
  for (int trial = 0; trial < 20; ++trial) {
    const FiniteMdp mdp = sarl::testing::random_mdp(d, 6, 2, 0.9);
    const Policy pi = sarl::testing::random_policy(d, 6, 2);
    const Policy mu = sarl::testing::random_policy(d, 6, 2);
    const Matrix phi = d.matrix(6, 3);
    const double lambda = d.uniform(0.0, 1.0);
    const auto [A, b] = sarl::testing::reference_td_system(mdp, pi, mu, lambda, phi);
    const Vector theta = -A.fullPivLu().solve(b);
    const Vector dmu = sarl::testing::null_space_stationary(sarl::testing::brute_force_chain(mdp, mu));
    const FeatureMap fm(phi);
    const double at = mspbe(mdp, pi, fm, dmu, lambda, theta);
    EXPECT_LE(at, 1e-8);
    const Vector delta = 1e-2 * d.vector(3);
    EXPECT_GT(mspbe(mdp, pi, fm, dmu, lambda, theta + delta), at);
  }
}

// --- MDP specification files -------------------------------------------------

TEST(MdpFile, ParsesAndReportsFirstViolation) {
  Json j = Json::parse(R"({
    "n_states": 2, "n_actions": 2,
    "transition": [[[0.5, 0.5], [1.0, 0.0]], [[0.0, 1.0], [0.3, 0.7]]],
    "reward": [[1, 0], [0, 1]], "gamma": 0.9, "initial_dist": [1, 0],
    "policies": {"pi": [[1, 0], [0.5, 0.5]], "mu": [[0.5, 0.5], [0.5, 0.5]]},
    "features": [[1, 0], [0, 1]]})");
  const MdpSpec spec = parse_mdp_spec(j);
  EXPECT_DOUBLE_EQ(spec.mdp.transition(1, 1, 1), 0.7);
  EXPECT_DOUBLE_EQ(spec.mdp.transition(0, 0, 1), 1.0);
  EXPECT_EQ(spec.policies.size(), 2u);
  ASSERT_TRUE(spec.features.has_value());
  const EnvironmentBundle b = bundle_from_spec(spec, "file");
  EXPECT_DOUBLE_EQ(b.pi(1, 0), 0.5);

  Json bad = j;
  bad["transition"][1][0] = {0.2, 0.2};
  try {
    parse_mdp_spec(bad);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("transition[1][0]"), std::string::npos) << e.what();
  }
  bad = j;
  bad["transition"][0][1] = {1.0};
  try {
    parse_mdp_spec(bad);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("transition[0][1]"), std::string::npos) << e.what();
  }
  bad = j;
  bad["policies"]["mu"][1] = {0.9, 0.9};
  try {
    parse_mdp_spec(bad);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("policies.mu"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("row 1"), std::string::npos) << e.what();
  }
  bad = j;
  bad.erase("gamma");
  EXPECT_THROW(parse_mdp_spec(bad), ValidationError);
}

TEST(MdpFile, BundleRoundTrip) {
  const EnvironmentBundle b = tabular_chain();
  const MdpSpec spec = parse_mdp_spec(Json::parse(to_json(b).dump()));
  const EnvironmentBundle back = bundle_from_spec(spec, "x");
  for (Index a = 0; a < 2; ++a) EXPECT_EQ(back.mdp.kernel(a), b.mdp.kernel(a));
  EXPECT_EQ(back.mdp.reward(), b.mdp.reward());
  EXPECT_EQ(back.pi.probs(), b.pi.probs());
  EXPECT_EQ(back.features.matrix(), b.features.matrix());
}
