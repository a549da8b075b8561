#include "covmon/kalman.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <utility>

namespace covmon {

namespace {

using ObsSelector = Eigen::Matrix<double, Eigen::Dynamic, kStateDim, Eigen::RowMajor, kObsDim, kStateDim>;
using ObsSubVector = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kObsDim, 1>;
using ObsSubMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kObsDim, kObsDim>;

constexpr std::array<Compartment, kObsDim> kObserved = {kH, kW, kD};

// (destination, source) pairs of every inter-compartment arrow; (E, phi) is the infection flow
constexpr std::array<std::pair<Compartment, Compartment>, 16> kArrows = {{
    {kI, kA}, {kI, kE}, {kA, kE}, {kE, kPhi}, {kPhi, kI}, {kPhi, kA}, {kPhi, kE}, {kH, kI},
    {kH, kW}, {kW, kH}, {kD, kI}, {kD, kH}, {kD, kW}, {kR, kI}, {kR, kA}, {kR, kH},
}};

void symmetrize(StateMatrix& m)
{
    m = (0.5 * (m + m.transpose())).eval();
}

FilterState update_step(FilterState fs, const ObsVector& y, const NoiseConfig& cfg)
{
    int m = 0;
    for (int i = 0; i < kObsDim; ++i) {
        m += std::isfinite(y(i)) ? 1 : 0;
    }
    if (m == 0) {
        return fs;
    }
    const ObsMatrix R_full = measurement_noise(fs.mean, cfg);
    ObsSelector H = ObsSelector::Zero(m, kStateDim);
    ObsSubVector ys(m);
    ObsSubMatrix R = ObsSubMatrix::Zero(m, m);
    int row = 0;
    for (int i = 0; i < kObsDim; ++i) {
        if (std::isfinite(y(i))) {
            H(row, kObserved[i]) = 1.0;
            ys(row) = y(i);
            R(row, row) = R_full(i, i);
            ++row;
        }
    }
    fs.loglik += detail::kalman_update(fs.mean, fs.cov, H, ys, R, fs.k);
    return fs;
}

} // namespace

void NoiseConfig::validate() const
{
    if (!(epsilon >= 0.0) || !(q_diag >= 0.0) || (r0.array() < 0.0).any() || (rd.array() < 0.0).any()) {
        throw InputError("noise configuration entries must be nonnegative");
    }
}

Eigen::Matrix<double, kObsDim, kStateDim> observation_matrix()
{
    Eigen::Matrix<double, kObsDim, kStateDim> H = Eigen::Matrix<double, kObsDim, kStateDim>::Zero();
    for (int i = 0; i < kObsDim; ++i) {
        H(i, kObserved[i]) = 1.0;
    }
    return H;
}

StateMatrix assemble_process_noise(const StateMatrix& F, const StateVector& mean_state, const NoiseConfig& cfg)
{
    StateMatrix Q = StateMatrix::Zero();
    if (!cfg.state_dependent) {
        Q.diagonal().setConstant(cfg.q_diag);
        return Q;
    }
    const StateVector x = mean_state.cwiseMax(0.0);
    for (auto [dst, src] : kArrows) {
        const double mu = F(dst, src) * x(src);
        const double extra = cfg.epsilon * mu * mu + cfg.q_diag;
        Q(dst, dst) += extra;
        Q(src, src) += extra;
        if (src == kPhi) {
            // new exposures are Poissonian but do not deplete the pressure
            Q(dst, dst) += mu;
        }
        else if (dst != kPhi) {
            Q(src, src) += mu;
            Q(dst, dst) += mu;
            Q(src, dst) -= mu;
            Q(dst, src) -= mu;
        }
    }
    symmetrize(Q);
    return Q;
}

ObsMatrix measurement_noise(const StateVector& predicted_state, const NoiseConfig& cfg)
{
    ObsMatrix R = ObsMatrix::Zero();
    for (int i = 0; i < kObsDim; ++i) {
        const double v = predicted_state(kObserved[i]);
        R(i, i) = cfg.r0(i) + (cfg.state_dependent ? cfg.rd(i) * v * v : 0.0);
    }
    return R;
}

FilterState init_state(const StateMatrix& F, const ObsVector& y0, const NoiseConfig& cfg,
                       std::vector<std::string>* warnings)
{
    if (!y0.allFinite()) {
        throw InputError("filter initialization needs finite H, W and D");
    }
    // non-cumulative states I, A, E, phi, H, W
    constexpr int n = 6;
    const Eigen::Matrix<double, n, n> F_red = F.topLeftCorner<n, n>();
    Eigen::EigenSolver<Eigen::Matrix<double, n, n>> es(F_red);
    if (es.info() != Eigen::Success) {
        throw NumericalError("eigen decomposition of the reduced transition matrix failed", 0);
    }
    Eigen::Index dom = 0;
    for (Eigen::Index i = 1; i < n; ++i) {
        if (std::abs(es.eigenvalues()(i)) > std::abs(es.eigenvalues()(dom))) {
            dom = i;
        }
    }
    Eigen::Matrix<double, n, 1> v = es.eigenvectors().col(dom).real();
    if (std::abs(es.eigenvalues()(dom).imag()) > 1e-12) {
        if (warnings != nullptr) {
            warnings->push_back("complex dominating eigenvalue; using the real part of its eigenvector");
        }
    }
    if (v.norm() > 0.0) {
        v.normalize();
    }

    // g(alpha) = sum_free min(0, alpha v_i)^2 + sum_fixed (y_i - alpha v_i)^2, solved per sign of alpha
    const std::array<int, 2> fixed = {kH, kW};
    const std::array<double, 2> y_fixed = {std::max(0.0, y0(0)), std::max(0.0, y0(1))};
    double fixed_vv = 0.0, fixed_yv = 0.0, fixed_yy = 0.0;
    for (int j = 0; j < 2; ++j) {
        fixed_vv += v(fixed[j]) * v(fixed[j]);
        fixed_yv += y_fixed[j] * v(fixed[j]);
        fixed_yy += y_fixed[j] * y_fixed[j];
    }
    double best_alpha = 0.0;
    double best_g = fixed_yy;
    for (double sign : {1.0, -1.0}) {
        double a = fixed_vv;
        for (int i = 0; i < 4; ++i) {
            if (sign * v(i) < 0.0) {
                a += v(i) * v(i);
            }
        }
        if (a <= 0.0) {
            continue;
        }
        double alpha = fixed_yv / a;
        alpha = sign > 0 ? std::max(0.0, alpha) : std::min(0.0, alpha);
        const double g = a * alpha * alpha - 2.0 * fixed_yv * alpha + fixed_yy;
        if (g < best_g) {
            best_g = g;
            best_alpha = alpha;
        }
    }

    FilterState fs;
    for (int i = 0; i < 4; ++i) {
        fs.mean(i) = std::max(0.0, best_alpha * v(i));
    }
    fs.mean(kH) = y_fixed[0];
    fs.mean(kW) = y_fixed[1];
    fs.mean(kD) = std::max(0.0, y0(2));
    fs.mean(kR) = 0.0;
    fs.cov.setZero();
    for (int i = 0; i < kStateDim; ++i) {
        const double s = 0.25 * fs.mean(i);
        fs.cov(i, i) = s * s + cfg.q_diag;
    }
    return fs;
}

FilterState predict_step(const FilterState& fs, const StateMatrix& F, const NoiseConfig& cfg)
{
    FilterState out;
    out.mean = F * fs.mean;
    out.cov = F * fs.cov * F.transpose() + assemble_process_noise(F, out.mean, cfg);
    symmetrize(out.cov);
    out.loglik = fs.loglik;
    out.k = fs.k + 1;
    return out;
}

FilterState filter_step(const FilterState& fs, const StateMatrix& F, const ObsVector& y, const NoiseConfig& cfg)
{
    return update_step(predict_step(fs, F, cfg), y, cfg);
}

std::vector<StateMatrix> window_matrices(const ParameterVector& p, const DynamicSchedule& dyn)
{
    if (dyn.r_t.size() != dyn.ifr.size()) {
        throw InputError("dynamic schedule has unequal R_t and IFR lengths");
    }
    std::vector<StateMatrix> out;
    out.reserve(dyn.r_t.size());
    for (int w = 0; w < dyn.num_windows(); ++w) {
        const FractionSet f = derive_fractions(p, dyn.ifr[w]);
        out.push_back(build_transition_matrix(p, f, beta_from_r0(p, f, dyn.r_t[w])));
    }
    return out;
}

int first_complete_day(const ObservationSeries& series)
{
    for (int k = 0; k < series.size(); ++k) {
        if (series.observation(k).allFinite()) {
            return k;
        }
    }
    return -1;
}

namespace {

template <class GetF>
FilterRun run_filter(GetF&& transition, const ObservationSeries& series, const NoiseConfig& cfg, bool keep)
{
    FilterRun run;
    run.first_day = first_complete_day(series);
    if (run.first_day < 0) {
        return run;
    }
    const auto H = observation_matrix();
    const int T = series.size();
    FilterState fs = init_state(transition(run.first_day), series.observation(run.first_day), cfg,
                                keep ? &run.warnings : nullptr);
    fs.k = run.first_day;
    if (keep) {
        run.states.reserve(T - run.first_day);
        run.innovation_cov.assign(T - run.first_day, ObsMatrix::Zero());
        run.states.push_back(fs);
    }
    for (int k = run.first_day + 1; k < T; ++k) {
        FilterState pred = predict_step(fs, transition(k - 1), cfg);
        if (keep) {
            run.innovation_cov[k - run.first_day] = H * pred.cov * H.transpose() + measurement_noise(pred.mean, cfg);
        }
        fs = update_step(std::move(pred), series.observation(k), cfg);
        if (!std::isfinite(fs.loglik)) {
            throw NumericalError("non-finite log-likelihood", k);
        }
        if (keep) {
            run.states.push_back(fs);
        }
    }
    run.loglik = fs.loglik;
    return run;
}

std::vector<StateMatrix> checked_windows(const ParameterVector& p, const DynamicSchedule& dyn,
                                         const ObservationSeries& series)
{
    if (dyn.num_windows() == 0 && !series.empty()) {
        throw InputError("dynamic schedule has no windows");
    }
    return window_matrices(p, dyn);
}

} // namespace

FilterRun filter_series(const ParameterVector& p, const DynamicSchedule& dyn, const ObservationSeries& series,
                        const NoiseConfig& cfg)
{
    const auto Fw = checked_windows(p, dyn, series);
    return run_filter([&](int k) -> const StateMatrix& { return Fw[dyn.window_of(k)]; }, series, cfg, true);
}

FilterRun filter_series(const std::vector<StateMatrix>& Fs, const ObservationSeries& series, const NoiseConfig& cfg)
{
    if (series.size() > 0 && Fs.empty()) {
        throw InputError("no transition matrices supplied");
    }
    return run_filter(
        [&](int k) -> const StateMatrix& { return Fs[std::min<std::size_t>(k, Fs.size() - 1)]; }, series, cfg,
        true);
}

double marginal_loglik(const ParameterVector& p, const DynamicSchedule& dyn, const ObservationSeries& series,
                       const NoiseConfig& cfg)
{
    if (series.empty()) {
        return 0.0;
    }
    const auto Fw = checked_windows(p, dyn, series);
    return run_filter([&](int k) -> const StateMatrix& { return Fw[dyn.window_of(k)]; }, series, cfg, false).loglik;
}

double marginal_loglik(const std::vector<ParameterVector>& p, const std::vector<DynamicSchedule>& dyn,
                       const std::vector<ObservationSeries>& series, const CommuteNetwork& net,
                       const NoiseConfig& cfg)
{
    const int n = static_cast<int>(series.size());
    if (static_cast<int>(p.size()) != n || static_cast<int>(dyn.size()) != n || net.size() != n) {
        throw InputError("network likelihood needs one parameter set and schedule per region");
    }
    if (n == 0) {
        return 0.0;
    }
    for (const auto& s : series) {
        if (s.dates != series[0].dates) {
            throw InputError("network likelihood needs regions on identical dates");
        }
    }
    std::vector<std::vector<StateMatrix>> Fw(n);
    int first = 0;
    for (int r = 0; r < n; ++r) {
        Fw[r] = checked_windows(p[r], dyn[r], series[r]);
        const int k0 = first_complete_day(series[r]);
        if (k0 < 0) {
            return 0.0;
        }
        first = std::max(first, k0);
    }
    std::vector<FilterState> fs(n);
    for (int r = 0; r < n; ++r) {
        fs[r] = init_state(Fw[r][dyn[r].window_of(first)], series[r].observation(first), cfg);
        fs[r].k = first;
    }
    Eigen::VectorXd phi(n), phi_bar(n);
    for (int k = first + 1; k < series[0].size(); ++k) {
        std::vector<FilterState> pred(n);
        for (int r = 0; r < n; ++r) {
            phi(r) = fs[r].mean(kPhi);
            pred[r] = predict_step(fs[r], Fw[r][dyn[r].window_of(k - 1)], cfg);
            phi_bar(r) = pred[r].mean(kPhi);
        }
        const Eigen::VectorXd coupled = network_phi_update(phi, net, phi_bar);
        for (int r = 0; r < n; ++r) {
            pred[r].mean(kPhi) = coupled(r);
            fs[r] = update_step(std::move(pred[r]), series[r].observation(k), cfg);
        }
    }
    double total = 0.0;
    for (const auto& s : fs) {
        total += s.loglik;
    }
    return total;
}

Prediction predict_ahead(const FilterState& fs, const std::vector<StateMatrix>& Fs, int horizon,
                         const NoiseConfig& cfg)
{
    if (horizon < 1) {
        throw InputError("prediction horizon must be at least one day");
    }
    if (Fs.empty()) {
        throw InputError("no transition matrices supplied");
    }
    const auto H = observation_matrix();
    Prediction out;
    FilterState st = fs;
    for (int h = 0; h < horizon; ++h) {
        st = predict_step(st, Fs[std::min<std::size_t>(h, Fs.size() - 1)], cfg);
        out.state_mean.push_back(st.mean);
        out.state_cov.push_back(st.cov);
        out.mean.push_back(H * st.mean);
        out.cov.push_back(H * st.cov * H.transpose() + measurement_noise(st.mean, cfg));
    }
    return out;
}

double linear_gaussian_loglik(const LinearGaussianModel& model, const std::vector<Eigen::VectorXd>& ys)
{
    Eigen::VectorXd m = model.m0;
    Eigen::MatrixXd P = model.P0;
    double ll = 0.0;
    for (std::size_t k = 0; k < ys.size(); ++k) {
        m = model.F * m;
        P = model.F * P * model.F.transpose() + model.Q;
        ll += detail::kalman_update(m, P, model.H, ys[k], model.R, static_cast<int>(k + 1));
    }
    return ll;
}

} // namespace covmon
