#include "covmon/beta.hpp"
#include "covmon/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

namespace covmon {

namespace {

constexpr int kObservedIndex[kObsDim] = {kH, kW, kD};

struct Linearization {
    Eigen::VectorXd r; ///< whitened residuals followed by regularization residuals
    Eigen::MatrixXd J; ///< d r / d v
    double constant = 0.0; ///< 1/2 sum (log|S_k| + m_k log 2 pi)
    double cost() const { return 0.5 * r.squaredNorm() + constant; }
};

/// v holds B and, when with_x0, the initial state after it.
Linearization linearize(const MeanFieldProblem& prob, const Eigen::VectorXd& v, bool with_x0, bool need_jacobian)
{
    const int K = prob.horizon();
    const int nv = K + (with_x0 ? kStateDim : 0);
    if (v.size() != nv) {
        throw InputError("beta vector length does not match the window");
    }
    if (static_cast<int>(prob.z.size()) != K + 1 || static_cast<int>(prob.S.size()) != K + 1) {
        throw InputError("mean-field problem needs K + 1 observations and covariances");
    }
    int rows = 0;
    for (int k = 1; k <= K; ++k) {
        for (int i = 0; i < kObsDim; ++i) {
            rows += std::isfinite(prob.z[k](i)) ? 1 : 0;
        }
    }
    const bool anchored = prob.beta_prev.has_value() && K > 0;
    const int reg_rows = prob.c > 0.0 ? std::max(0, K - 1) + (anchored ? 1 : 0) : 0;

    Linearization lin;
    lin.r.resize(rows + reg_rows);
    if (need_jacobian) {
        lin.J = Eigen::MatrixXd::Zero(rows + reg_rows, nv);
    }
    StateVector x = with_x0 ? StateVector(v.tail<kStateDim>()) : prob.x0;
    Eigen::MatrixXd X = Eigen::MatrixXd::Zero(kStateDim, need_jacobian ? nv : 0);
    if (with_x0 && need_jacobian) {
        X.rightCols(kStateDim).setIdentity();
    }
    int row = 0;
    for (int k = 0; k < K; ++k) {
        StateMatrix F = prob.F0[k];
        F(kE, kPhi) += v(k);
        const double phi = x(kPhi);
        x = F * x;
        if (need_jacobian) {
            X = F * X;
            X(kE, k) += phi;
        }
        const ObsVector& z = prob.z[k + 1];
        int idx[kObsDim];
        int m = 0;
        for (int i = 0; i < kObsDim; ++i) {
            if (std::isfinite(z(i))) {
                idx[m++] = i;
            }
        }
        if (m == 0) {
            continue;
        }
        Eigen::MatrixXd S(m, m);
        Eigen::VectorXd e(m);
        for (int a = 0; a < m; ++a) {
            e(a) = z(idx[a]) - x(kObservedIndex[idx[a]]);
            for (int b = 0; b < m; ++b) {
                S(a, b) = prob.S[k + 1](idx[a], idx[b]);
            }
        }
        Eigen::LLT<Eigen::MatrixXd> llt(S);
        if (llt.info() != Eigen::Success) {
            throw NumericalError("innovation covariance singular in mean-field cost", k + 1);
        }
        const auto& L = llt.matrixLLT();
        for (int a = 0; a < m; ++a) {
            lin.constant += std::log(L(a, a));
        }
        lin.constant += 0.5 * m * std::log(2.0 * std::numbers::pi);
        lin.r.segment(row, m) = llt.matrixL().solve(e);
        if (need_jacobian) {
            Eigen::MatrixXd HX(m, nv);
            for (int a = 0; a < m; ++a) {
                HX.row(a) = X.row(kObservedIndex[idx[a]]);
            }
            lin.J.middleRows(row, m) = -llt.matrixL().solve(HX);
        }
        row += m;
    }
    if (reg_rows > 0) {
        const double w = std::sqrt(2.0 * prob.c);
        if (anchored) {
            lin.r(row) = w * (v(0) - *prob.beta_prev);
            if (need_jacobian) {
                lin.J(row, 0) = w;
            }
            ++row;
        }
        for (int j = 1; j < K; ++j, ++row) {
            lin.r(row) = w * (v(j) - v(j - 1));
            if (need_jacobian) {
                lin.J(row, j) = w;
                lin.J(row, j - 1) = -w;
            }
        }
    }
    return lin;
}

} // namespace

void HorizonConfig::validate() const
{
    if (prediction_horizon < 1 || step < 1 || step > prediction_horizon) {
        throw InputError("horizon configuration needs 1 <= step <= prediction_horizon");
    }
    if (max_iterations < 1 || !(gradient_tol > 0.0) || !(cost_tol > 0.0)) {
        throw InputError("horizon configuration tolerances must be positive");
    }
    if (beta_lower > 0.0 && beta_upper > 0.0 && beta_lower >= beta_upper) {
        throw InputError("beta bounds are empty");
    }
}

MeanFieldProblem MeanFieldProblem::window(int first, int length, const StateVector& start) const
{
    if (first < 0 || length < 0 || first + length > horizon()) {
        throw InputError("window outside the mean-field problem");
    }
    MeanFieldProblem w;
    w.F0.assign(F0.begin() + first, F0.begin() + first + length);
    w.z.assign(z.begin() + first, z.begin() + first + length + 1);
    w.S.assign(S.begin() + first, S.begin() + first + length + 1);
    w.x0 = start;
    w.c = c;
    return w;
}

std::vector<StateVector> meanfield_trajectory(const MeanFieldProblem& prob, const Eigen::VectorXd& B)
{
    std::vector<StateVector> xs{prob.x0};
    for (int k = 0; k < prob.horizon(); ++k) {
        StateMatrix F = prob.F0[k];
        F(kE, kPhi) += B(k);
        xs.push_back(F * xs.back());
    }
    return xs;
}

double meanfield_cost(const MeanFieldProblem& prob, const Eigen::VectorXd& B)
{
    return linearize(prob, B, false, false).cost();
}

Eigen::VectorXd meanfield_gradient(const MeanFieldProblem& prob, const Eigen::VectorXd& B)
{
    const auto lin = linearize(prob, B, false, true);
    return lin.J.transpose() * lin.r;
}

WindowResult optimize_window(const MeanFieldProblem& prob, const Eigen::VectorXd& init_B, const HorizonConfig& cfg,
                             double lower, double upper)
{
    const int K = prob.horizon();
    if (init_B.size() != K) {
        throw InputError("initial beta has the wrong length");
    }
    const bool with_x0 = cfg.optimize_x0;
    const int nv = K + (with_x0 ? kStateDim : 0);
    Eigen::VectorXd lo(nv), hi(nv), v(nv);
    lo.head(K).setConstant(lower);
    hi.head(K).setConstant(upper);
    v.head(K) = init_B.cwiseMax(lower).cwiseMin(upper);
    if (with_x0) {
        lo.tail<kStateDim>().setZero();
        hi.tail<kStateDim>().setConstant(std::numeric_limits<double>::infinity());
        v.tail<kStateDim>() = prob.x0.cwiseMax(0.0);
        // R feeds nothing observed; keeping it fixed avoids a null direction
        lo(K + kR) = hi(K + kR) = v(K + kR);
    }

    WindowResult res;
    res.x0 = prob.x0;
    if (K == 0) {
        res.B = init_B;
        res.cost = meanfield_cost(prob, init_B);
        res.converged = true;
        return res;
    }

    auto lin = linearize(prob, v, with_x0, true);
    double cost = lin.cost();
    double mu = 1e-3;
    for (res.iterations = 0; res.iterations < cfg.max_iterations; ++res.iterations) {
        const Eigen::VectorXd g = lin.J.transpose() * lin.r;
        // projected gradient: components pushing against an active bound do not count
        double pg = 0.0;
        for (int i = 0; i < nv; ++i) {
            const bool at_lo = v(i) <= lo(i) && g(i) > 0.0;
            const bool at_hi = v(i) >= hi(i) && g(i) < 0.0;
            if (!at_lo && !at_hi) {
                const double scale = std::max(std::abs(v(i)), 1e-12);
                pg = std::max(pg, std::abs(g(i)) * scale);
            }
        }
        if (pg < cfg.gradient_tol * std::max(1.0, std::abs(cost))) {
            res.converged = true;
            break;
        }
        const Eigen::MatrixXd A = lin.J.transpose() * lin.J;
        // the step is solved over the variables not held at a bound
        std::vector<int> free_vars;
        for (int i = 0; i < nv; ++i) {
            const bool held = lo(i) == hi(i) || (v(i) <= lo(i) && g(i) > 0.0) || (v(i) >= hi(i) && g(i) < 0.0);
            if (!held) {
                free_vars.push_back(i);
            }
        }
        const int nf = static_cast<int>(free_vars.size());
        Eigen::MatrixXd Af(nf, nf);
        Eigen::VectorXd gf(nf);
        for (int a = 0; a < nf; ++a) {
            gf(a) = g(free_vars[a]);
            for (int b = 0; b < nf; ++b) {
                Af(a, b) = A(free_vars[a], free_vars[b]);
            }
        }
        bool improved = false;
        double new_cost = cost;
        for (int attempt = 0; attempt < 40 && nf > 0; ++attempt) {
            Eigen::MatrixXd M = Af;
            for (int a = 0; a < nf; ++a) {
                M(a, a) += mu * std::max(Af(a, a), 1e-12);
            }
            const Eigen::VectorXd step_f = M.ldlt().solve(-gf);
            Eigen::VectorXd trial = v;
            for (int a = 0; a < nf; ++a) {
                trial(free_vars[a]) += step_f(a);
            }
            trial = trial.cwiseMax(lo).cwiseMin(hi);
            auto trial_lin = linearize(prob, trial, with_x0, true);
            const double trial_cost = trial_lin.cost();
            if (std::isfinite(trial_cost) && trial_cost < cost) {
                v = trial;
                lin = std::move(trial_lin);
                new_cost = trial_cost;
                mu = std::max(mu * 0.3, 1e-12);
                improved = true;
                break;
            }
            mu *= 5.0;
        }
        if (!improved) {
            res.converged = pg < 1e3 * cfg.gradient_tol * std::max(1.0, std::abs(cost));
            break;
        }
        const double change = cost - new_cost;
        cost = new_cost;
        if (change < cfg.cost_tol * std::max(1.0, std::abs(cost))) {
            res.converged = true;
            break;
        }
    }
    res.B = v.head(K);
    if (with_x0) {
        res.x0 = v.tail<kStateDim>();
    }
    res.cost = cost;
    return res;
}

FrozenSetup frozen_setup(const ParameterVector& p, const DynamicSchedule& dyn, const ObservationSeries& series,
                         const NoiseConfig& noise)
{
    const FilterRun run = filter_series(p, dyn, series, noise);
    if (run.first_day < 0) {
        throw InputError("series '" + series.region_id + "' has no day with H, W and D present");
    }
    FrozenSetup setup;
    setup.first_day = run.first_day;
    const int T = series.size() - run.first_day;
    auto& prob = setup.problem;
    prob.x0 = run.states.front().mean;
    setup.init_B.resize(std::max(0, T - 1));
    for (int k = 0; k < T; ++k) {
        const int day = run.first_day + k;
        prob.z.push_back(series.observation(day));
        prob.S.push_back(run.innovation_cov[k]);
        if (k + 1 < T) {
            const int w = dyn.window_of(day);
            const FractionSet f = derive_fractions(p, dyn.ifr[w]);
            setup.fractions.push_back(f);
            prob.F0.push_back(build_transition_matrix(p, f, 0.0));
            setup.init_B(k) = beta_from_r0(p, f, dyn.r_t[w]);
        }
    }
    return setup;
}

double select_regularization(const MeanFieldProblem& prob, const Eigen::VectorXd& init_B)
{
    // a day-to-day change of 1% of the mean beta costs as much as one unit-variance observation
    int n_obs = 0;
    for (std::size_t k = 1; k < prob.z.size(); ++k) {
        for (int i = 0; i < kObsDim; ++i) {
            n_obs += std::isfinite(prob.z[k](i)) ? 1 : 0;
        }
    }
    const int K = std::max(1, static_cast<int>(init_B.size()) - 1);
    const double level = std::max(init_B.size() > 0 ? init_B.mean() : 0.0, 1e-6);
    const double rough = 0.01 * level;
    return 0.5 * static_cast<double>(n_obs) / K / (rough * rough);
}

BetaTrajectory optimize_receding(const ParameterVector& p, const DynamicSchedule& dyn,
                                 const ObservationSeries& series, const NoiseConfig& noise, const HorizonConfig& cfg)
{
    cfg.validate();
    FrozenSetup setup = frozen_setup(p, dyn, series, noise);
    auto& prob = setup.problem;
    const int K = prob.horizon();
    BetaTrajectory traj;
    if (K == 0) {
        return traj;
    }
    prob.c = cfg.c > 0.0 ? cfg.c : select_regularization(prob, setup.init_B);
    traj.c = prob.c;

    // bounds from the R_t prior support [0, 16]; generation weight does not depend on the IFR
    const double weight = r0_from_beta(p, setup.fractions.front(), 1.0);
    const double upper = cfg.beta_upper > 0.0 ? cfg.beta_upper : 16.0 / weight;
    const double lower = cfg.beta_lower > 0.0 ? cfg.beta_lower : 1e-8 * upper;

    Eigen::VectorXd B(K);
    StateVector x = prob.x0;
    std::optional<double> prev;
    Eigen::VectorXd prev_solution;
    int prev_first = 0;
    traj.converged = true;
    int window_index = 0;
    for (int k = 0; k < K; k += cfg.step, ++window_index) {
        const int len = std::min(cfg.prediction_horizon, K - k);
        const bool last = k + len == K;
        MeanFieldProblem w = prob.window(k, len, x);
        w.beta_prev = prev;
        Eigen::VectorXd init = setup.init_B.segment(k, len);
        // warm start from the previous window where the two overlap
        for (int j = 0; j < len && k + j - prev_first < prev_solution.size(); ++j) {
            init(j) = prev_solution(k + j - prev_first);
        }
        // only the first window owns the initial state; later ones start from the kept trajectory
        HorizonConfig wcfg = cfg;
        wcfg.optimize_x0 = cfg.optimize_x0 && k == 0;
        const WindowResult res = optimize_window(w, init, wcfg, lower, upper);
        if (wcfg.optimize_x0) {
            prob.x0 = res.x0;
        }
        prev_solution = res.B;
        prev_first = k;
        traj.converged = traj.converged && res.converged;
        traj.diagnostics.push_back({{"window", window_index},
                                    {"first_day", k},
                                    {"length", len},
                                    {"cost", res.cost},
                                    {"iterations", res.iterations},
                                    {"converged", res.converged}});
        const int keep = last ? len : std::min(cfg.step, len);
        MeanFieldProblem kept = w.window(0, keep, res.x0);
        const auto xs = meanfield_trajectory(kept, res.B.head(keep));
        B.segment(k, keep) = res.B.head(keep);
        x = xs.back();
        prev = res.B(keep - 1);
        if (last) {
            break;
        }
    }
    traj.objective = meanfield_cost(prob, B);
    for (int k = 0; k < K; ++k) {
        traj.dates.push_back(series.dates[setup.first_day + k]);
        traj.beta.push_back(B(k));
        traj.r_t.push_back(r0_from_beta(p, setup.fractions[k], B(k)));
    }
    return traj;
}

void write_beta_csv(const std::string& path, const BetaTrajectory& traj)
{
    std::ofstream out(path);
    if (!out) {
        throw InputError("cannot write '" + path + "'");
    }
    out.precision(17);
    out << "date,beta,R_t\n";
    for (int k = 0; k < traj.size(); ++k) {
        out << traj.dates[k].to_string() << ',' << traj.beta[k] << ',' << traj.r_t[k] << '\n';
    }
}

BetaTrajectory read_beta_csv(const std::string& path)
{
    std::ifstream in(path);
    if (!in) {
        throw InputError("cannot open '" + path + "'");
    }
    BetaTrajectory traj;
    std::string line;
    std::getline(in, line);
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        std::stringstream ss(line);
        std::string d, b, r;
        if (!std::getline(ss, d, ',') || !std::getline(ss, b, ',') || !std::getline(ss, r, ',')) {
            throw InputError(path + ":" + std::to_string(line_no) + ": expected date,beta,R_t");
        }
        try {
            traj.dates.push_back(Date::parse(d));
            traj.beta.push_back(std::stod(b));
            traj.r_t.push_back(std::stod(r));
        }
        catch (const std::invalid_argument&) {
            throw InputError(path + ":" + std::to_string(line_no) + ": not a number");
        }
    }
    return traj;
}

} // namespace covmon
