#include "covmon/bootstrap.hpp"
#include "covmon/errors.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace covmon;

namespace {

SimulationOptions options(ExitScheme scheme, bool noise = true)
{
    SimulationOptions opt;
    opt.scheme = scheme;
    opt.observation_noise = noise;
    opt.population = 4e5;
    return opt;
}

/// Mean-field transition of the simulator: exit probabilities in place of the rates.
StateMatrix simulator_mean(const ParameterVector& p, double ifr, double beta, ExitScheme scheme)
{
    const FractionSet f = derive_fractions(p, ifr);
    if (scheme == ExitScheme::Linear) {
        return build_transition_matrix(p, f, beta);
    }
    ParameterVector q = p;
    q.sigma = 1 - std::exp(-p.sigma);
    q.gamma_i = 1 - std::exp(-p.gamma_i);
    q.gamma_h = 1 - std::exp(-p.gamma_h);
    q.gamma_w = 1 - std::exp(-p.gamma_w);
    return build_transition_matrix(q, f, beta);
}

Eigen::MatrixXd random_samples(int n, int d, std::uint64_t seed, double shift = 0.0)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    Eigen::MatrixXd m(n, d);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) {
            m(i, j) = 1.0 + j + 0.1 * g(rng) + shift;
        }
    }
    return m;
}

std::vector<std::string> names(int d)
{
    std::vector<std::string> out;
    for (int j = 0; j < d; ++j) {
        out.push_back("x" + std::to_string(j));
    }
    return out;
}

/// Individuals in the compartments other than the infectious pressure.
double people(const StateVector& x)
{
    double n = 0.0;
    for (int i = 0; i < kStateDim; ++i) {
        n += i == kPhi ? 0.0 : x(i);
    }
    return n;
}

} // namespace

class SimulatorMean : public ::testing::TestWithParam<ExitScheme> {};

TEST_P(SimulatorMean, MatchesMeanFieldRecursion)
{
    const ParameterVector p;
    const double beta = 0.09;
    const int T = 31, reps = 200;
    const std::vector<double> b(T - 1, beta), ifr(T - 1, 0.007);
    const StateVector x0 = oracle::scenario_init() * 20.0;
    std::vector<StateVector> sum(T, StateVector::Zero()), sum_sq(T, StateVector::Zero());
    for (int r = 0; r < reps; ++r) {
        const auto ds = simulate_synthetic(p, b, ifr, T, x0, 1000 + r, options(GetParam()));
        for (int k = 0; k < T; ++k) {
            sum[k] += ds.states[k];
            sum_sq[k] += ds.states[k].cwiseAbs2();
        }
    }
    const StateMatrix F = simulator_mean(p, 0.007, beta, GetParam());
    StateVector m = x0;
    for (int k = 0; k < T; ++k) {
        if (k % 10 == 0 && k > 0) {
            for (int i = 0; i < kStateDim; ++i) {
                const double mean = sum[k](i) / reps;
                const double var = sum_sq[k](i) / reps - mean * mean;
                const double se = std::sqrt(std::max(var, 0.0) / reps);
                EXPECT_NEAR(mean, m(i), 3.0 * se + 1e-9 * m(i)) << kCompartmentNames[i] << " day " << k;
            }
        }
        m = F * m;
    }
}

INSTANTIATE_TEST_SUITE_P(Schemes, SimulatorMean, ::testing::Values(ExitScheme::Linear, ExitScheme::Exponential));

TEST(Simulator, EmptyStateStaysEmpty)
{
    const std::vector<double> b(19, 0.1), ifr(19, 0.007);
    const auto ds = simulate_synthetic(ParameterVector{}, b, ifr, 20, StateVector::Zero(), 3,
                                       options(ExitScheme::Exponential, false));
    for (int k = 0; k < 20; ++k) {
        EXPECT_TRUE(ds.states[k].isZero());
        EXPECT_TRUE(ds.series.observation(k).isZero());
    }
}

TEST(Simulator, NoTransmissionDrainsExposed)
{
    StateVector x0 = StateVector::Zero();
    x0(kE) = 500;
    const std::vector<double> b(199, 0.0), ifr(199, 0.007);
    const auto ds = simulate_synthetic(ParameterVector{}, b, ifr, 200, x0, 4, options(ExitScheme::Exponential));
    for (int k = 0; k < 200; ++k) {
        EXPECT_EQ(ds.exposures[k], 0.0);
        const StateVector& x = ds.states[k];
        EXPECT_EQ(people(x), 500.0);
    }
    EXPECT_EQ(ds.states.back()(kE), 0.0);
}

TEST(Simulator, MassBalanceAndMonotoneDeaths)
{
    const ParameterVector p;
    for (auto scheme : {ExitScheme::Linear, ExitScheme::Exponential}) {
        const auto ds = oracle::synthetic(p, oracle::schedule({1.4, 0.8, 1.1, 0.9}, 0.007), 112, 6, scheme);
        const StateVector& x0 = ds.states.front();
        const double initial = people(x0);
        double last = 0.0;
        for (int k = 0; k < ds.series.size(); ++k) {
            const StateVector& x = ds.states[k];
            EXPECT_EQ(people(x) - initial, ds.exposures[k]);
            EXPECT_GE(x(kD), k > 0 ? ds.states[k - 1](kD) : 0.0);
            EXPECT_DOUBLE_EQ(x(kD), ds.deaths_by_source[k][0] + ds.deaths_by_source[k][1] + ds.deaths_by_source[k][2]);
            EXPECT_GE(ds.series.dead[k], last);
            last = ds.series.dead[k];
            for (int i = 0; i < kStateDim; ++i) {
                EXPECT_GE(x(i), 0.0);
                if (i != kPhi) {
                    EXPECT_EQ(x(i), std::round(x(i)));
                }
            }
            const ObsVector y = ds.series.observation(k);
            EXPECT_EQ(y, y.array().round().matrix());
            EXPECT_GE(y.minCoeff(), 0.0);
        }
    }
}

TEST(Simulator, SeedDeterminism)
{
    const ParameterVector p;
    const auto dyn = oracle::schedule({1.2, 0.9}, 0.007);
    const auto a = oracle::synthetic(p, dyn, 50, 9), b = oracle::synthetic(p, dyn, 50, 9), c = oracle::synthetic(p, dyn, 50, 10);
    EXPECT_EQ(a.series.hospital, b.series.hospital);
    EXPECT_EQ(a.series.dead, b.series.dead);
    EXPECT_EQ(a.states, b.states);
    EXPECT_NE(a.series.hospital, c.series.hospital);
}

TEST(Simulator, RejectsNegativeInit)
{
    StateVector x0 = StateVector::Zero();
    x0(kI) = -1;
    EXPECT_THROW(simulate_synthetic(ParameterVector{}, {0.1}, {0.007}, 2, x0, 1), InputError);
}

TEST(Simulator, TruthSidecar)
{
    const auto ds = oracle::synthetic(ParameterVector{}, oracle::schedule({1.2}, 0.007), 10, 5);
    const auto j = ds.truth_json();
    EXPECT_EQ(j.at("seed").get<std::uint64_t>(), 5u);
    EXPECT_EQ(j.at("beta").size(), 9u);
}

TEST(Robustness, PointExamples)
{
    EXPECT_TRUE(point_robustness(0.0, {0.0, 1.0}));
    EXPECT_FALSE(point_robustness(1.0, {0.0, 1.0}));
    EXPECT_TRUE(point_robustness(0.4, {0.0, 1.0}));
    EXPECT_FALSE(point_robustness(0.5, {0.0, 1.0}));
    EXPECT_FALSE(point_robustness(-0.6, {0.0, 1.0}));
    EXPECT_THROW(point_robustness(0.0, {1.0, 0.0}), InputError);
}

TEST(Robustness, OverlapExamples)
{
    EXPECT_TRUE(interval_overlap_check({0, 1}, {0, 1}, 1.0));
    EXPECT_TRUE(interval_overlap_check({0, 1}, {0, 1}, 0.68));
    EXPECT_FALSE(interval_overlap_check({0, 1}, {2, 3}, 0.01));
    EXPECT_FALSE(interval_overlap_check({0, 1}, {0.5, 1.5}, 0.68));
    EXPECT_TRUE(interval_overlap_check({0, 1}, {0.5, 1.5}, 0.3));
    EXPECT_TRUE(interval_overlap_check({2, 2}, {2, 2}, 0.68));
    EXPECT_FALSE(interval_overlap_check({2, 2}, {2, 3}, 0.0));
    EXPECT_THROW(interval_overlap_check({1, 0}, {0, 1}, 0.5), InputError);
}

TEST(BootstrapStats, ZeroBias)
{
    const Eigen::MatrixXd ref = random_samples(500, 4, 1);
    const auto s = bootstrap_stats(ref, {0, 0, 0, 0});
    for (int i = 0; i < 4; ++i) {
        EXPECT_DOUBLE_EQ(s.nrmse[i], s.cov[i]);
        EXPECT_EQ(s.cob[i], 0.0);
    }
}

TEST(BootstrapStats, BiasEqualToMean)
{
    const Eigen::MatrixXd ref = Eigen::MatrixXd::Constant(10, 1, 2.0);
    const auto s = bootstrap_stats(ref, {2.0});
    EXPECT_EQ(s.cov[0], 0.0);
    EXPECT_DOUBLE_EQ(s.cob[0], 1.0);
    EXPECT_DOUBLE_EQ(s.nrmse[0], 1.0);
}

TEST(BootstrapStats, PythagoreanIdentity)
{
    std::mt19937_64 rng(2);
    std::normal_distribution<double> g;
    for (int trial = 0; trial < 20; ++trial) {
        const Eigen::MatrixXd ref = random_samples(300, 12, 10 + trial);
        std::vector<double> bias(12);
        for (auto& b : bias) {
            b = 0.2 * g(rng);
        }
        const auto s = bootstrap_stats(ref, bias);
        for (int i = 0; i < 12; ++i) {
            EXPECT_NEAR(s.nrmse[i] * s.nrmse[i], s.cov[i] * s.cov[i] + s.cob[i] * s.cob[i], 1e-12);
        }
    }
}

TEST(BootstrapStats, MedianOverDimensions)
{
    Eigen::MatrixXd ref(2, 3);
    ref << 1, 2, 4, 1, 2, 4;
    const auto s = bootstrap_stats(ref, {0.1, 0.1, 0.1});
    EXPECT_DOUBLE_EQ(s.median_cob, 0.05);
    EXPECT_THROW(bootstrap_stats(Eigen::MatrixXd::Zero(3, 1), {0.0}), InputError);
    EXPECT_THROW(bootstrap_stats(ref, {0.1}), InputError);
}

TEST(BiasEstimate, IdenticalReplicatesHaveNoBias)
{
    const Eigen::MatrixXd ref = random_samples(400, 3, 3);
    const auto rep = bias_estimate(ref, {ref, ref, ref}, names(3));
    for (int i = 0; i < 3; ++i) {
        EXPECT_NEAR(rep.bias[i], 0.0, 1e-15);
        EXPECT_TRUE(rep.point_robust[i]);
        EXPECT_TRUE(rep.interval_overlap[i]);
    }
}

TEST(BiasEstimate, ShiftedReplicates)
{
    const Eigen::MatrixXd ref = random_samples(400, 3, 4);
    Eigen::MatrixXd shifted = ref;
    shifted.col(1).array() += 0.05;
    const auto rep = bias_estimate(ref, {shifted, shifted, shifted}, names(3));
    EXPECT_NEAR(rep.bias[0], 0.0, 1e-15);
    EXPECT_NEAR(rep.bias[1], 0.05, 1e-12);
    EXPECT_NEAR(rep.signed_bias[1], 0.05, 1e-12);
    // RMS over replicates with biases +d and -d
    Eigen::MatrixXd down = ref;
    down.col(1).array() -= 0.05;
    const auto both = bias_estimate(ref, {shifted, down}, names(3));
    EXPECT_NEAR(both.bias[1], 0.05, 1e-12);
    EXPECT_NEAR(both.signed_bias[1], 0.0, 1e-12);
    EXPECT_THROW(bias_estimate(ref, {random_samples(10, 2, 1)}, names(3)), InputError);
    EXPECT_THROW(bias_estimate(ref, {}, names(3)), InputError);
}

TEST(BiasEstimate, LargeShiftFlagsRobustness)
{
    const Eigen::MatrixXd ref = random_samples(2000, 1, 5);
    const auto rep = bias_estimate(ref, {random_samples(2000, 1, 6, 0.3)}, names(1));
    EXPECT_FALSE(rep.point_robust[0]);
    EXPECT_FALSE(rep.interval_overlap[0]);
    const auto j = rep.to_json();
    EXPECT_EQ(j.at("dimensions").size(), 1u);
    EXPECT_FALSE(j.at("dimensions")[0].at("point_robust").get<bool>());
    EXPECT_DOUBLE_EQ(j.at("median_CoB").get<double>(), rep.stats.median_cob);
}

TEST(Bootstrap, PipelineSmoke)
{
    const ParameterVector p;
    const auto ds = oracle::synthetic(p, oracle::schedule({1.2, 0.9}, 0.007), 56, 12);
    AmConfig am;
    am.n_chains = 2;
    am.n_samples = 200;
    am.burn_in = 100;
    am.jobs = 1;
    am.init_draws = 4;
    am.init_sweeps = 0;
    const PriorSet priors = PriorSet::defaults();
    const auto reference = am_run(priors, ds.series, am, NoiseConfig{}, 3);
    const BootstrapRun run = run_bootstrap(priors, reference, ds.series, am, NoiseConfig{}, 2, 8);
    ASSERT_EQ(run.datasets.size(), 2u);
    ASSERT_EQ(run.chains.size(), 2u);
    for (const auto& d : run.datasets) {
        EXPECT_EQ(d.series.dates, ds.series.dates);
    }
    EXPECT_EQ(run.report.bias.size(), 12u);
    const PriorDraw mean = posterior_mean(reference);
    EXPECT_EQ(run.truth.params.inferred(), mean.params.inferred());
    const BootstrapRun again = run_bootstrap(priors, reference, ds.series, am, NoiseConfig{}, 2, 8);
    EXPECT_EQ(again.report.bias, run.report.bias);
}
