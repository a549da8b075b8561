#pragma once

#include "covmon/data.hpp"
#include "covmon/errors.hpp"
#include "covmon/model.hpp"
#include "covmon/network.hpp"
#include "covmon/priors.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

namespace covmon {

struct NoiseConfig {
    double epsilon = 0.05 * 0.05;
    double q_diag = 1.0;
    ObsVector r0 = ObsVector::Ones();
    ObsVector rd = ObsVector::Constant(0.001 * 0.001);
    /// When false Q = q_diag * I and R = diag(r0): a linear-Gaussian model with fixed noise.
    bool state_dependent = true;

    void validate() const;
};

struct FilterState {
    StateVector mean = StateVector::Zero();
    StateMatrix cov = StateMatrix::Zero();
    double loglik = 0.0;
    int k = 0;
};

/// Selects (H, W, D) out of the state vector.
Eigen::Matrix<double, kObsDim, kStateDim> observation_matrix();

/// Q = Qp + Qv + Q0 for the flows encoded in F, evaluated at `mean_state` clamped at zero.
StateMatrix assemble_process_noise(const StateMatrix& F, const StateVector& mean_state, const NoiseConfig& cfg);

/// diag(r0 + rd * x^2) for the (H, W, D) components of the predicted state.
ObsMatrix measurement_noise(const StateVector& predicted_state, const NoiseConfig& cfg);

/// Initial state from the dominating eigenvector of F restricted to the non-cumulative
/// states, scaled to best match the measured H and W; D is taken from the data, R is zero.
FilterState init_state(const StateMatrix& F, const ObsVector& y0, const NoiseConfig& cfg,
                       std::vector<std::string>* warnings = nullptr);

/// Predict plus (partial) update. Missing components of y are NaN.
FilterState filter_step(const FilterState& fs, const StateMatrix& F, const ObsVector& y, const NoiseConfig& cfg);

/// Predict-only step: mean F x, covariance F P F^T + Q.
FilterState predict_step(const FilterState& fs, const StateMatrix& F, const NoiseConfig& cfg);

/// Transition matrices for every window of a schedule.
std::vector<StateMatrix> window_matrices(const ParameterVector& p, const DynamicSchedule& dyn);

/// Index of the first day with H, W and D all present, or -1.
int first_complete_day(const ObservationSeries& series);

struct FilterRun {
    int first_day = -1;
    std::vector<FilterState> states; ///< filtered state at days first_day, first_day + 1, ...
    std::vector<ObsMatrix> innovation_cov; ///< S_k per day (zero before the first update)
    std::vector<std::string> warnings;
    double loglik = 0.0;
};

/// Full Kalman pass over a series keeping every filtered state.
FilterRun filter_series(const ParameterVector& p, const DynamicSchedule& dyn, const ObservationSeries& series,
                        const NoiseConfig& cfg);

/// Same pass with an explicit transition matrix per transition day (transition k -> k+1 uses Fs[k]).
FilterRun filter_series(const std::vector<StateMatrix>& Fs, const ObservationSeries& series, const NoiseConfig& cfg);

/// Marginal filter log-likelihood. The first complete day initializes the filter and is not scored.
double marginal_loglik(const ParameterVector& p, const DynamicSchedule& dyn, const ObservationSeries& series,
                       const NoiseConfig& cfg);

/// Regions filtered jointly with network-coupled infectious pressure in the predicted means.
/// All series must share their dates.
double marginal_loglik(const std::vector<ParameterVector>& p, const std::vector<DynamicSchedule>& dyn,
                       const std::vector<ObservationSeries>& series, const CommuteNetwork& net,
                       const NoiseConfig& cfg);

struct Prediction {
    std::vector<StateVector> state_mean;
    std::vector<StateMatrix> state_cov;
    std::vector<ObsVector> mean;
    std::vector<ObsMatrix> cov; ///< includes measurement noise
};

/// Predict-only recursion for `horizon` days. Fs[h] drives day h; the last matrix is reused
/// when the sequence is shorter than the horizon.
Prediction predict_ahead(const FilterState& fs, const std::vector<StateMatrix>& Fs, int horizon,
                         const NoiseConfig& cfg);

/// Stationary linear-Gaussian model for checking the recursion against closed forms.
struct LinearGaussianModel {
    Eigen::MatrixXd F, Q, H, R;
    Eigen::VectorXd m0;
    Eigen::MatrixXd P0;
};

/// Log-likelihood of y_1..y_T with x_0 ~ N(m0, P0) and every y scored.
double linear_gaussian_loglik(const LinearGaussianModel& model, const std::vector<Eigen::VectorXd>& ys);

namespace detail {

/// Joseph-form measurement update; returns the log density of the innovation.
template <class MeanT, class CovT, class HT, class YT, class RT>
double kalman_update(MeanT& mean, CovT& cov, const HT& H, const YT& y, const RT& R, int day)
{
    const auto innovation = (y - H * mean).eval();
    auto S = (H * cov * H.transpose() + R).eval();
    S = (0.5 * (S + S.transpose())).eval();
    Eigen::LLT<std::decay_t<decltype(S)>> llt(S);
    if (llt.info() != Eigen::Success) {
        throw NumericalError("innovation covariance not positive definite", day);
    }
    const auto PHt = (cov * H.transpose()).eval();
    const auto K = llt.solve(PHt.transpose()).transpose().eval();
    mean += K * innovation;
    const auto IKH = (CovT::Identity(cov.rows(), cov.cols()) - K * H).eval();
    cov = IKH * cov * IKH.transpose() + K * R * K.transpose();
    cov = (0.5 * (cov + cov.transpose())).eval();

    const auto& L = llt.matrixLLT();
    double logdet = 0.0;
    for (Eigen::Index i = 0; i < S.rows(); ++i) {
        logdet += 2.0 * std::log(L(i, i));
    }
    const double quad = innovation.dot(llt.solve(innovation));
    return -0.5 * (static_cast<double>(S.rows()) * std::log(2.0 * std::numbers::pi) + logdet + quad);
}

} // namespace detail

} // namespace covmon
