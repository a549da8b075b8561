#pragma once

#include "covmon/bootstrap.hpp"
#include "covmon/data.hpp"
#include "covmon/kalman.hpp"
#include "covmon/priors.hpp"
#include "covmon/sampler.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace covmon {

/// Pointwise posterior mean and equal-tailed intervals.
struct Band {
    std::vector<double> mean, lo68, hi68, lo95, hi95;

    /// Band over rows of `values` (samples x points).
    static Band from_samples(const Eigen::MatrixXd& values);
    int size() const { return static_cast<int>(mean.size()); }
};

/// Evenly spaced posterior points taken across all chains.
std::vector<PriorDraw> thin_posterior(const std::vector<PosteriorChain>& chains, int n);

struct HiddenStateTrajectory {
    std::vector<Date> dates;
    std::array<Band, kStateDim> states;
    Band recovered_fraction;
    Band incidence; ///< symptomatic incidence sigma F0 E per day
};

/// Filtered hidden states per posterior sample. With an anchor (date, fraction) each sample's
/// recovered count is shifted additively so its recovered fraction equals `fraction` on that date.
HiddenStateTrajectory hidden_states(const std::vector<PriorDraw>& samples, const ObservationSeries& series,
                                    const NoiseConfig& noise,
                                    std::optional<std::pair<Date, double>> recovered_anchor = std::nullopt);

struct DeathDecomposition {
    /// Filtered daily D increments split over I, H and W in proportion to the flows out of each
    /// compartment into D, one row per sample.
    Eigen::MatrixXd totals;
    Eigen::VectorXd initial_dead; ///< filtered D on the first filtered day
    Eigen::VectorXd final_dead; ///< filtered D on the last day
    std::array<double, 3> mean{}, lo95{}, hi95{};
};

DeathDecomposition death_decomposition(const std::vector<PriorDraw>& samples, const ObservationSeries& series,
                                       const NoiseConfig& noise);

struct IfrWindowSummary {
    int first_window = 0;
    int last_window = 0; ///< inclusive
    double mean = 0, lo68 = 0, hi68 = 0;
    std::optional<bool> point_robust;
    std::optional<bool> interval_overlap;
};

/// IFR pooled over pairs of adjacent windows. Bootstrap chains (one vector per replicate) add the
/// robustness flags.
std::vector<IfrWindowSummary> ifr_window_summary(const std::vector<PosteriorChain>& chains,
                                                 const std::vector<std::vector<PosteriorChain>>& boot = {},
                                                 double overlap_alpha = 0.68);

/// CFR_I, CFR_H, CFR_W per posterior sample (rows), using each sample's mean IFR.
Eigen::MatrixXd cfr_samples(const std::vector<PriorDraw>& samples);

struct ForecastPoint {
    Date date;
    ObsVector mean = ObsVector::Zero();
    ObsVector sd = ObsVector::Zero();
    ObsVector lo68 = ObsVector::Zero(), hi68 = ObsVector::Zero();
    ObsVector lo95 = ObsVector::Zero(), hi95 = ObsVector::Zero();
    std::vector<ObsVector> ensemble;
};

struct ForecastScore {
    ObsVector coverage68 = ObsVector::Zero();
    ObsVector coverage95 = ObsVector::Zero();
    double coverage68_all = 0.0;
    double coverage95_all = 0.0;
    ObsVector nrmse = ObsVector::Zero();
    double energy_score = 0.0; ///< mean over points with an ensemble
    int n_points = 0;
};

/// Scores forecasts against the actual series on matching dates.
ForecastScore forecast_scores(const std::vector<ForecastPoint>& predictions, const ObservationSeries& actuals);

/// ES = mean |X - y| - 1/2 mean |X - X'| over all ordered member pairs.
double energy_score(const std::vector<ObsVector>& ensemble, const ObsVector& y);

/// Forecast mixture over posterior samples: filter through day `origin`, predict `horizon` days.
/// Intervals are quantiles of the equally weighted Gaussian mixture; the ensemble holds
/// `members_per_sample` draws from each component.
std::vector<ForecastPoint> posterior_forecast(const std::vector<PriorDraw>& samples, const ObservationSeries& series,
                                              int origin, int horizon, const NoiseConfig& noise,
                                              std::uint64_t seed, int members_per_sample = 1);

/// Quantile of an equally weighted mixture of normals.
double normal_mixture_quantile(const std::vector<double>& means, const std::vector<double>& sds, double q);

void write_predictive_csv(const std::string& path, const std::vector<ForecastPoint>& points);

struct TidyRow {
    std::string date;
    std::string quantity;
    std::string statistic;
    double value = 0.0;
};

void write_tidy_csv(const std::string& path, const std::vector<TidyRow>& rows);
std::vector<TidyRow> tidy(const HiddenStateTrajectory& h);
std::vector<TidyRow> tidy(const std::vector<ForecastPoint>& points);

} // namespace covmon
