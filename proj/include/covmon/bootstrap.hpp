#pragma once

#include "covmon/beta.hpp"
#include "covmon/data.hpp"
#include "covmon/kalman.hpp"
#include "covmon/model.hpp"
#include "covmon/sampler.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace covmon {

/// How a daily rate becomes an exit probability in the stochastic simulator.
enum class ExitScheme {
    Exponential, ///< 1 - exp(-rate)
    Linear, ///< rate itself; the daily means then follow x_{k+1} = F x_k exactly
};

struct SimulationOptions {
    ExitScheme scheme = ExitScheme::Exponential;
    NoiseConfig noise;
    bool observation_noise = true;
    std::string region_id = "synthetic";
    double population = 0.0;
    Date start = Date::from_ymd(2020, 3, 1);
};

struct SyntheticDataset {
    ObservationSeries series;
    ParameterVector params;
    std::vector<double> beta; ///< per transition
    std::vector<double> ifr; ///< per transition
    std::uint64_t seed = 0;
    std::vector<StateVector> states; ///< true state per day
    std::vector<std::array<double, 3>> deaths_by_source; ///< cumulative deaths from I, H, W per day
    std::vector<double> exposures; ///< cumulative inflow into E per day

    nlohmann::json truth_json() const;
};

/// Daily competing-exit simulation of T days from `init`; beta and ifr hold one value per transition
/// (the last is reused when shorter than T - 1).
SyntheticDataset simulate_synthetic(const ParameterVector& p, const std::vector<double>& daily_beta,
                                    const std::vector<double>& ifr, int T, const StateVector& init,
                                    std::uint64_t seed, const SimulationOptions& opt = {});

/// Per-transition beta and IFR implied by a windowed schedule, for days first_day, first_day + 1, ...
void schedule_to_daily(const ParameterVector& p, const DynamicSchedule& dyn, int transitions,
                       std::vector<double>& beta, std::vector<double>& ifr, int first_day = 0);

void write_synthetic(const std::string& csv_path, const std::string& json_path, const SyntheticDataset& ds);

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
    double diam() const { return hi - lo; }
};

/// True unless |bias| >= 0.5 diam(cri68).
bool point_robustness(double bias, const Interval& cri68);

/// diam(A n B) >= alpha diam(A u B); the union of disjoint intervals is their hull.
bool interval_overlap_check(const Interval& a, const Interval& b, double alpha);

struct BootstrapStats {
    std::vector<double> mean, sd, bias;
    std::vector<double> cov, cob, nrmse;
    double median_cov = 0.0, median_cob = 0.0, median_nrmse = 0.0;
};

/// CoV = sd / mean, CoB = |bias| / mean, NRMSE = sqrt(sd^2 + bias^2) / mean per dimension,
/// summarized by the median over dimensions.
BootstrapStats bootstrap_stats(const Eigen::MatrixXd& reference, const std::vector<double>& bias);

struct BiasReport {
    std::vector<std::string> names;
    std::vector<double> signed_bias; ///< mean of the per-replicate biases
    std::vector<double> bias; ///< root mean square of the per-replicate biases
    std::vector<double> variance; ///< reference posterior variance
    std::vector<bool> point_robust;
    std::vector<bool> interval_overlap;
    BootstrapStats stats;

    nlohmann::json to_json() const;
};

/// Bias of the bootstrap posteriors against the reference over the time-averaged summary
/// dimensions; each inner vector holds the chains of one replicate.
BiasReport bias_estimate(const std::vector<PosteriorChain>& reference,
                         const std::vector<std::vector<PosteriorChain>>& boot, int n_boot = 3,
                         double overlap_alpha = 0.68);

/// Same on prepared sample matrices (rows are samples, columns summary dimensions).
BiasReport bias_estimate(const Eigen::MatrixXd& reference, const std::vector<Eigen::MatrixXd>& boot,
                         const std::vector<std::string>& names, double overlap_alpha = 0.68);

struct BootstrapRun {
    PriorDraw truth;
    std::vector<SyntheticDataset> datasets;
    std::vector<std::vector<PosteriorChain>> chains;
    BiasReport report;
};

/// Parametric bootstrap at the posterior mean of `reference`: simulate n_boot data sets with the
/// same dates and initial filtered state, refit each with KLAM, and estimate the bias.
BootstrapRun run_bootstrap(const PriorSet& priors, const std::vector<PosteriorChain>& reference,
                           const ObservationSeries& series, const AmConfig& am, const NoiseConfig& noise,
                           int n_boot, std::uint64_t seed, const SimulationOptions& sim = {});

/// Mean point of a set of chains in the sampler layout.
PriorDraw posterior_mean(const std::vector<PosteriorChain>& chains);

} // namespace covmon
