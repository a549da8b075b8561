#include "covmon/beta.hpp"
#include "covmon/errors.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <random>

using namespace covmon;

namespace {

ObsVector observe(const StateVector& x)
{
    return {x(kH), x(kW), x(kD)};
}

/// Mean-field problem over K transitions at the default parameters with random data and
/// innovation covariances.
MeanFieldProblem random_problem(int K, std::uint64_t seed, const Eigen::VectorXd& B)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n;
    const ParameterVector p;
    const FractionSet f = derive_fractions(p, 0.007);
    MeanFieldProblem prob;
    prob.F0.assign(K, build_transition_matrix(p, f, 0.0));
    prob.x0 = oracle::scenario_init();
    const auto xs = meanfield_trajectory(prob, B);
    for (int k = 0; k <= K; ++k) {
        Eigen::Matrix3d A;
        for (auto& v : A.reshaped()) {
            v = n(rng);
        }
        const ObsMatrix S = A * A.transpose() + 4.0 * ObsMatrix::Identity();
        prob.S.push_back(S);
        prob.z.push_back(observe(xs[k]) + ObsVector(3 * n(rng), 2 * n(rng), n(rng)));
    }
    return prob;
}

Eigen::VectorXd random_beta(int K, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.05, 0.15);
    Eigen::VectorXd B(K);
    for (auto& b : B) {
        b = u(rng);
    }
    return B;
}

/// Cost written out with explicit inverses and determinants.
double reference_cost(const MeanFieldProblem& prob, const Eigen::VectorXd& B)
{
    const auto xs = meanfield_trajectory(prob, B);
    double cost = 0.0;
    for (int k = 1; k <= prob.horizon(); ++k) {
        std::vector<int> idx;
        for (int i = 0; i < 3; ++i) {
            if (std::isfinite(prob.z[k](i))) {
                idx.push_back(i);
            }
        }
        const int m = static_cast<int>(idx.size());
        if (m == 0) {
            continue;
        }
        Eigen::MatrixXd S(m, m);
        Eigen::VectorXd e(m);
        for (int a = 0; a < m; ++a) {
            e(a) = prob.z[k](idx[a]) - observe(xs[k])(idx[a]);
            for (int b = 0; b < m; ++b) {
                S(a, b) = prob.S[k](idx[a], idx[b]);
            }
        }
        cost += 0.5 * (e.dot(S.inverse() * e) + std::log(S.determinant()) + m * std::log(2 * std::numbers::pi));
    }
    for (int j = 1; j < B.size(); ++j) {
        cost += prob.c * (B(j) - B(j - 1)) * (B(j) - B(j - 1));
    }
    if (prob.beta_prev && B.size() > 0) {
        cost += prob.c * (B(0) - *prob.beta_prev) * (B(0) - *prob.beta_prev);
    }
    return cost;
}

double variance(const Eigen::VectorXd& v)
{
    return (v.array() - v.mean()).square().sum() / static_cast<double>(v.size());
}

/// Piecewise-linear daily beta through the given knots (day, value).
std::vector<double> piecewise_linear(int days, const std::vector<std::pair<int, double>>& knots)
{
    std::vector<double> beta(days);
    for (int k = 0; k < days; ++k) {
        std::size_t i = 1;
        while (i + 1 < knots.size() && knots[i].first < k) {
            ++i;
        }
        const auto [d0, b0] = knots[i - 1];
        const auto [d1, b1] = knots[i];
        const double t = std::clamp((k - d0) / static_cast<double>(d1 - d0), 0.0, 1.0);
        beta[k] = b0 + t * (b1 - b0);
    }
    return beta;
}

} // namespace

TEST(MeanField, CostMatchesReference)
{
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Eigen::VectorXd B = random_beta(15, seed);
        MeanFieldProblem prob = random_problem(15, seed, random_beta(15, 100 + seed));
        prob.c = 50.0;
        if (seed % 2) {
            prob.beta_prev = 0.1;
            prob.z[4](1) = std::nan("");
            prob.z[7].setConstant(std::nan(""));
        }
        EXPECT_NEAR(meanfield_cost(prob, B), reference_cost(prob, B), 1e-9 * std::abs(reference_cost(prob, B)));
    }
}

TEST(MeanField, NoiselessDataLeavesNormalizer)
{
    const Eigen::VectorXd B = random_beta(20, 1);
    MeanFieldProblem prob = random_problem(20, 1, B);
    const auto xs = meanfield_trajectory(prob, B);
    double expected = 0.0;
    for (int k = 1; k <= 20; ++k) {
        prob.z[k] = observe(xs[k]);
        expected += 0.5 * (std::log(prob.S[k].determinant()) + 3 * std::log(2 * std::numbers::pi));
    }
    EXPECT_NEAR(meanfield_cost(prob, B), expected, 1e-10 * std::abs(expected));
}

TEST(MeanField, ConstantBetaHasNoRegularization)
{
    MeanFieldProblem prob = random_problem(10, 2, random_beta(10, 2));
    const Eigen::VectorXd B = Eigen::VectorXd::Constant(10, 0.09);
    const double base = meanfield_cost(prob, B);
    prob.c = 1e6;
    EXPECT_DOUBLE_EQ(meanfield_cost(prob, B), base);
}

TEST(MeanField, GradientMatchesFiniteDifferences)
{
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const int K = 12;
        MeanFieldProblem prob = random_problem(K, seed, random_beta(K, 50 + seed));
        prob.c = 20.0;
        prob.beta_prev = 0.11;
        prob.z[3](2) = std::nan("");
        const Eigen::VectorXd B = random_beta(K, seed);
        const Eigen::VectorXd g = meanfield_gradient(prob, B);
        Eigen::VectorXd fd(K);
        for (int j = 0; j < K; ++j) {
            const double h = 1e-6;
            Eigen::VectorXd up = B, dn = B;
            up(j) += h;
            dn(j) -= h;
            fd(j) = (meanfield_cost(prob, up) - meanfield_cost(prob, dn)) / (2 * h);
        }
        EXPECT_LT((g - fd).norm() / fd.norm(), 1e-4) << "seed " << seed;
    }
}

TEST(MeanField, SingularCovarianceNamesDay)
{
    MeanFieldProblem prob = random_problem(6, 3, random_beta(6, 3));
    prob.S[4].setZero();
    try {
        meanfield_cost(prob, random_beta(6, 3));
        FAIL();
    }
    catch (const NumericalError& e) {
        EXPECT_EQ(e.day(), 4);
    }
}

TEST(MeanField, WindowRestriction)
{
    const Eigen::VectorXd B = random_beta(10, 4);
    MeanFieldProblem prob = random_problem(10, 4, B);
    const auto xs = meanfield_trajectory(prob, B);
    const MeanFieldProblem w = prob.window(3, 4, xs[3]);
    EXPECT_EQ(w.horizon(), 4);
    const auto ws = meanfield_trajectory(w, B.segment(3, 4));
    EXPECT_TRUE(ws.back().isApprox(xs[7]));
    EXPECT_THROW(prob.window(8, 4, xs[0]), InputError);
}

TEST(OptimizeWindow, RecoversConstantBeta)
{
    const int K = 120;
    const double beta_star = 0.1;
    const Eigen::VectorXd truth = Eigen::VectorXd::Constant(K, beta_star);
    MeanFieldProblem prob = random_problem(K, 5, truth);
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n;
    const auto xs = meanfield_trajectory(prob, truth);
    for (int k = 0; k <= K; ++k) {
        const ObsVector y = observe(xs[k]);
        prob.S[k] = (ObsVector::Ones() + (0.02 * y).cwiseAbs2()).asDiagonal();
        prob.z[k] = y + prob.S[k].diagonal().cwiseSqrt().cwiseProduct(ObsVector(n(rng), n(rng), n(rng)));
    }
    prob.c = select_regularization(prob, truth);
    const WindowResult res = optimize_window(prob, Eigen::VectorXd::Constant(K, 0.06), HorizonConfig{}, 1e-6, 1.0);
    EXPECT_TRUE(res.converged);
    for (int k = 10; k < K - 20; ++k) {
        EXPECT_NEAR(res.B(k), beta_star, 0.05 * beta_star) << "day " << k;
    }
    EXPECT_LE(res.cost, meanfield_cost(prob, truth));
}

TEST(OptimizeWindow, HugeRegularizationFlattens)
{
    const int K = 40;
    MeanFieldProblem prob = random_problem(K, 6, random_beta(K, 6));
    prob.c = 1e6 * 1e4;
    const WindowResult res = optimize_window(prob, random_beta(K, 7), HorizonConfig{}, 1e-6, 1.0);
    EXPECT_LT((res.B.maxCoeff() - res.B.minCoeff()) / res.B.mean(), 1e-3);
}

TEST(OptimizeWindow, VarianceShrinksWithRegularization)
{
    const int K = 40;
    MeanFieldProblem prob = random_problem(K, 8, random_beta(K, 8));
    double last = std::numeric_limits<double>::infinity();
    for (double c : {0.0, 1e2, 1e4, 1e6, 1e8}) {
        prob.c = c;
        const WindowResult res = optimize_window(prob, Eigen::VectorXd::Constant(K, 0.1), HorizonConfig{}, 1e-6, 1.0);
        const double v = variance(res.B);
        EXPECT_LE(v, last * (1 + 1e-6)) << "c = " << c;
        last = v;
    }
}

TEST(OptimizeWindow, SingleDay)
{
    MeanFieldProblem prob = random_problem(1, 9, random_beta(1, 9));
    prob.c = 1e9;
    const WindowResult res = optimize_window(prob, Eigen::VectorXd::Constant(1, 0.1), HorizonConfig{}, 1e-6, 1.0);
    ASSERT_EQ(res.B.size(), 1);
    prob.c = 0.0;
    const WindowResult free = optimize_window(prob, Eigen::VectorXd::Constant(1, 0.1), HorizonConfig{}, 1e-6, 1.0);
    EXPECT_NEAR(res.B(0), free.B(0), 1e-6 * free.B(0));
}

TEST(OptimizeWindow, RespectsBounds)
{
    MeanFieldProblem prob = random_problem(20, 10, Eigen::VectorXd::Constant(20, 0.3));
    const WindowResult res = optimize_window(prob, Eigen::VectorXd::Constant(20, 0.1), HorizonConfig{}, 0.05, 0.12);
    EXPECT_GE(res.B.minCoeff(), 0.05);
    EXPECT_LE(res.B.maxCoeff(), 0.12);
    EXPECT_THROW(optimize_window(prob, Eigen::VectorXd::Constant(3, 0.1), HorizonConfig{}, 0.05, 0.12), InputError);
}

TEST(OptimizeWindow, ActiveBoundDoesNotStall)
{
    // the unconstrained optimum lies partly below the lower bound
    const Eigen::VectorXd B = Eigen::VectorXd::LinSpaced(30, 0.02, 0.15);
    MeanFieldProblem prob = random_problem(30, 3, B);
    prob.c = 1e3;
    const WindowResult res = optimize_window(prob, Eigen::VectorXd::Constant(30, 0.1), HorizonConfig{}, 0.06, 1.0);
    EXPECT_TRUE(res.converged);
    EXPECT_LT(res.iterations, 100);
    EXPECT_DOUBLE_EQ(res.B.minCoeff(), 0.06);
}

TEST(OptimizeWindow, InitialStateFromNoiselessData)
{
    const Eigen::VectorXd B = random_beta(40, 4);
    MeanFieldProblem prob = random_problem(40, 4, B);
    const auto xs = meanfield_trajectory(prob, B);
    double normalizer = 0.0;
    for (int k = 1; k <= 40; ++k) {
        prob.z[k] = observe(xs[k]);
        normalizer += 0.5 * (std::log(prob.S[k].determinant()) + 3 * std::log(2 * std::numbers::pi));
    }
    const StateVector truth = prob.x0;
    prob.x0 = truth * 1.3;
    HorizonConfig cfg;
    cfg.optimize_x0 = true;
    const WindowResult res = optimize_window(prob, B, cfg, 1e-6, 1.0);
    EXPECT_TRUE(res.converged);
    EXPECT_LT(res.cost - normalizer, 1e-3);
    EXPECT_EQ(res.x0(kR), prob.x0(kR)); // never observed, kept fixed
    for (int i : {kI, kH, kW, kD}) {
        EXPECT_NEAR(res.x0(i), truth(i), 0.05 * truth(i) + 0.5) << kCompartmentNames[i];
    }
}

class Receding : public ::testing::Test {
protected:
    static void SetUpTestSuite()
    {
        const int T = 240;
        beta_truth = piecewise_linear(T - 1, {{0, 0.12}, {60, 0.07}, {140, 0.09}, {T, 0.075}});
        std::vector<double> ifr(T - 1, 0.007);
        SimulationOptions opt;
        opt.population = 4e5;
        opt.scheme = ExitScheme::Linear;
        data = simulate_synthetic(p, beta_truth, ifr, T, oracle::scenario_init() * 5.0, 17, opt).series;
        dyn = oracle::schedule(std::vector<double>(windows_for(T, 28), 1.0), 0.007);
    }

    static inline ParameterVector p;
    static inline DynamicSchedule dyn;
    static inline ObservationSeries data;
    static inline std::vector<double> beta_truth;
};

TEST_F(Receding, ShortSeriesIsSingleWindow)
{
    HorizonConfig cfg;
    cfg.prediction_horizon = 400;
    cfg.step = 20;
    const BetaTrajectory traj = optimize_receding(p, dyn, data, NoiseConfig{}, cfg);
    FrozenSetup setup = frozen_setup(p, dyn, data, NoiseConfig{});
    setup.problem.c = traj.c;
    const double upper = 16.0 / r0_from_beta(p, setup.fractions.front(), 1.0);
    const WindowResult res = optimize_window(setup.problem, setup.init_B, cfg, 1e-8 * upper, upper);
    ASSERT_EQ(traj.size(), res.B.size());
    for (int k = 0; k < traj.size(); ++k) {
        EXPECT_NEAR(traj.beta[k], res.B(k), 1e-12 * res.B(k));
    }
    EXPECT_NEAR(traj.objective, res.cost, 1e-9 * std::abs(res.cost));
}

TEST_F(Receding, TrajectoryInvariants)
{
    const BetaTrajectory traj = optimize_receding(p, dyn, data, NoiseConfig{}, HorizonConfig{});
    ASSERT_EQ(traj.size(), data.size() - 1);
    EXPECT_GT(traj.c, 0.0);
    const FractionSet f = derive_fractions(p, 0.007);
    for (int k = 0; k < traj.size(); ++k) {
        EXPECT_GT(traj.beta[k], 0.0);
        EXPECT_DOUBLE_EQ(traj.r_t[k], r0_from_beta(p, f, traj.beta[k]));
        EXPECT_EQ(traj.dates[k], data.dates[k]);
    }
    EXPECT_EQ(traj.diagnostics.size(), 6u); // windows starting at days 0, 20, ..., 100
}

TEST_F(Receding, OnlyTheFirstWindowMovesTheInitialState)
{
    HorizonConfig cfg;
    cfg.optimize_x0 = true;
    const BetaTrajectory windowed = optimize_receding(p, dyn, data, NoiseConfig{}, cfg);
    cfg.prediction_horizon = data.size();
    cfg.c = windowed.c;
    const BetaTrajectory whole = optimize_receding(p, dyn, data, NoiseConfig{}, cfg);
    EXPECT_TRUE(windowed.converged);
    EXPECT_TRUE(whole.converged);
    for (int k = 0; k < windowed.size() - 30; ++k) {
        EXPECT_NEAR(windowed.beta[k], whole.beta[k], 0.01 * whole.beta[k]) << "day " << k;
    }
    EXPECT_LT(windowed.objective, optimize_receding(p, dyn, data, NoiseConfig{}, HorizonConfig{}).objective);
}

TEST_F(Receding, RecoversPiecewiseLinearBeta)
{
    HorizonConfig cfg;
    cfg.prediction_horizon = 60;
    cfg.step = 20;
    const BetaTrajectory traj = optimize_receding(p, dyn, data, NoiseConfig{}, cfg);
    int good = 0, interior = 0;
    for (int k = 14; k < traj.size() - 14; ++k, ++interior) {
        good += std::abs(traj.beta[k] - beta_truth[k]) <= 0.1 * beta_truth[k];
    }
    EXPECT_GE(good, 0.8 * interior);
}

TEST_F(Receding, OverlapReducesJunctionJumps)
{
    auto junction_jump = [&](int horizon, int step) {
        HorizonConfig cfg;
        cfg.prediction_horizon = horizon;
        cfg.step = step;
        const BetaTrajectory traj = optimize_receding(p, dyn, data, NoiseConfig{}, cfg);
        double jump = 0.0;
        int n = 0;
        for (int k = step; k < traj.size(); k += step, ++n) {
            jump += std::abs(traj.beta[k] - traj.beta[k - 1]) / traj.beta[k - 1];
        }
        return jump / n;
    };
    EXPECT_LT(junction_jump(60, 20), junction_jump(20, 20));
}

TEST_F(Receding, DiscardedTailDeviatesMoreThanKeptHead)
{
    HorizonConfig cfg;
    cfg.prediction_horizon = 60;
    cfg.step = 20;
    const BetaTrajectory traj = optimize_receding(p, dyn, data, NoiseConfig{}, cfg);
    FrozenSetup setup = frozen_setup(p, dyn, data, NoiseConfig{});
    MeanFieldProblem first = setup.problem.window(0, 60, setup.problem.x0);
    first.c = traj.c;
    const double upper = 16.0 / r0_from_beta(p, setup.fractions.front(), 1.0);
    const WindowResult res = optimize_window(first, setup.init_B.head(60), cfg, 1e-8 * upper, upper);
    double head = 0.0, tail = 0.0;
    for (int j = 0; j < 10; ++j) {
        head += std::abs(res.B(20 + j) - traj.beta[20 + j]);
        tail += std::abs(res.B(50 + j) - traj.beta[50 + j]);
    }
    EXPECT_GT(tail, head);
}

TEST(BetaIo, CsvRoundTrip)
{
    BetaTrajectory t;
    const Date d0 = Date::from_ymd(2020, 4, 1);
    for (int k = 0; k < 3; ++k) {
        t.dates.push_back(d0 + k);
        t.beta.push_back(0.1 + 0.01 * k);
        t.r_t.push_back(1.0 + 0.1 * k);
    }
    const auto path = (std::filesystem::temp_directory_path() / "covmon_beta.csv").string();
    write_beta_csv(path, t);
    const BetaTrajectory back = read_beta_csv(path);
    EXPECT_EQ(back.dates, t.dates);
    EXPECT_EQ(back.beta, t.beta);
    EXPECT_EQ(back.r_t, t.r_t);
    std::filesystem::remove(path);
}

TEST(HorizonConfig, Validation)
{
    HorizonConfig h;
    EXPECT_NO_THROW(h.validate());
    EXPECT_EQ(h.prediction_horizon, 150);
    EXPECT_EQ(h.step, 20);
    h.step = 200;
    EXPECT_THROW(h.validate(), InputError);
    h = HorizonConfig{};
    h.beta_lower = 0.5;
    h.beta_upper = 0.1;
    EXPECT_THROW(h.validate(), InputError);
}
