#pragma once

#include "covmon/data.hpp"
#include "covmon/kalman.hpp"
#include "covmon/model.hpp"
#include "covmon/priors.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace covmon {

/// Daily infection rate; beta[k] drives the transition from dates[k] to the next day.
struct BetaTrajectory {
    std::vector<Date> dates;
    std::vector<double> beta;
    std::vector<double> r_t;
    double objective = 0.0;
    double c = 0.0;
    bool converged = true;
    nlohmann::json diagnostics = nlohmann::json::array();

    int size() const { return static_cast<int>(beta.size()); }
};

void write_beta_csv(const std::string& path, const BetaTrajectory& traj);
BetaTrajectory read_beta_csv(const std::string& path);

struct HorizonConfig {
    int prediction_horizon = 150;
    int step = 20;
    /// Regularization weight; a nonpositive value selects it from the data (see select_regularization).
    double c = 0.0;
    double gradient_tol = 1e-6;
    double cost_tol = 1e-12;
    int max_iterations = 500;
    /// Bounds; nonpositive values map the R_t prior support through beta_from_r0.
    double beta_lower = 0.0;
    double beta_upper = 0.0;
    bool optimize_x0 = false;

    void validate() const;
};

/// Open-loop mean-field fit over days 0..K of a window: x_{k+1} = F(beta_k) x_k from x0, scored
/// against z_k with fixed innovation covariances S_k, k = 1..K.
struct MeanFieldProblem {
    std::vector<StateMatrix> F0; ///< transition matrices with beta = 0, one per transition
    std::vector<ObsVector> z; ///< observations, z[0] unused
    std::vector<ObsMatrix> S; ///< innovation covariances, S[0] unused
    StateVector x0 = StateVector::Zero();
    double c = 0.0;
    std::optional<double> beta_prev; ///< fixed beta before the window (junction penalty)

    int horizon() const { return static_cast<int>(F0.size()); }
    /// Restriction to transitions [first, first + length) with x0 replaced.
    MeanFieldProblem window(int first, int length, const StateVector& x0) const;
};

/// States x_0..x_K under B.
std::vector<StateVector> meanfield_trajectory(const MeanFieldProblem& prob, const Eigen::VectorXd& B);

/// Negative mean-field log-likelihood plus c * |Delta B|^2 (including the junction term).
double meanfield_cost(const MeanFieldProblem& prob, const Eigen::VectorXd& B);

/// Analytic gradient of meanfield_cost with respect to B.
Eigen::VectorXd meanfield_gradient(const MeanFieldProblem& prob, const Eigen::VectorXd& B);

struct WindowResult {
    Eigen::VectorXd B;
    StateVector x0;
    double cost = 0.0;
    int iterations = 0;
    bool converged = false;
};

/// Bound-constrained Levenberg-Marquardt on the whitened residuals.
WindowResult optimize_window(const MeanFieldProblem& prob, const Eigen::VectorXd& init_B, const HorizonConfig& cfg,
                             double lower, double upper);

/// Problem over the whole series at frozen parameters: F0 per day from the schedule's IFR, S_k
/// from a Kalman pass including the windowed beta, x0 from the filter initialization.
struct FrozenSetup {
    MeanFieldProblem problem;
    Eigen::VectorXd init_B; ///< windowed beta per transition
    int first_day = 0;
    std::vector<FractionSet> fractions; ///< per transition
};
FrozenSetup frozen_setup(const ParameterVector& p, const DynamicSchedule& dyn, const ObservationSeries& series,
                         const NoiseConfig& noise);

/// Data-driven regularization weight for a problem (used when HorizonConfig::c <= 0).
double select_regularization(const MeanFieldProblem& prob, const Eigen::VectorXd& init_B);

/// Receding-horizon estimate: windows of prediction_horizon transitions advanced by step, keeping
/// the leading step values of each (the last window entirely).
BetaTrajectory optimize_receding(const ParameterVector& p, const DynamicSchedule& dyn,
                                 const ObservationSeries& series, const NoiseConfig& noise, const HorizonConfig& cfg);

} // namespace covmon
