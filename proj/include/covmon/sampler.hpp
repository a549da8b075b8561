#pragma once

#include "covmon/data.hpp"
#include "covmon/kalman.hpp"
#include "covmon/priors.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace covmon {

struct AmConfig {
    double c0_scale = 0.001;
    int t0 = 10; ///< accepted proposals before adaptation starts; negative disables adaptation
    double s = 0.0; ///< step scale; 0 selects 0.05 * 2.4^(2/d)
    double epsilon_reg = 1e-6;
    /// Run the chain in coordinates scaled by the prior standard deviations.
    bool standardize = true;
    int n_chains = 4;
    int n_samples = 50000;
    int burn_in = 10000;
    int thin = 1;
    int jobs = 0; ///< worker threads; 0 uses the hardware concurrency
    int window_days = 28;
    /// Number of covariance checkpoints kept per chain.
    int checkpoints = 10;
    /// Without a warm start, the chain begins at the best of `init_draws` prior draws refined by
    /// `init_sweeps` coordinate sweeps over a grid of prior-support points.
    int init_draws = 64;
    int init_sweeps = 2;
    int init_grid = 16;

    double step_scale(int d) const;
    void validate() const;
    nlohmann::json to_json() const;
    static AmConfig from_json(const nlohmann::json& j);
};

/// Map between (ParameterVector, DynamicSchedule) and the flat sampler vector:
/// 10 static dimensions, then R_t per window, then IFR per window.
class ParameterLayout {
public:
    ParameterLayout(int num_windows, int window_days = 28);

    int dim() const { return kStatic + 2 * num_windows_; }
    int num_windows() const { return num_windows_; }
    int window_days() const { return window_days_; }
    std::vector<std::string> names() const;

    Eigen::VectorXd pack(const ParameterVector& p, const DynamicSchedule& s) const;
    PriorDraw unpack(const Eigen::VectorXd& theta) const;

    /// Prior of dimension i.
    const PriorDescriptor& prior(const PriorSet& priors, int i) const;
    double log_prior(const PriorSet& priors, const Eigen::VectorXd& theta) const;
    bool in_support(const PriorSet& priors, const Eigen::VectorXd& theta) const;

    static constexpr int kStatic = ParameterVector::kNumInferred;

private:
    int num_windows_;
    int window_days_;
};

using LogLikelihood = std::function<double(const ParameterVector&, const DynamicSchedule&)>;

struct PosteriorChain {
    std::vector<std::string> names;
    int num_windows = 0;
    int window_days = 28;
    Eigen::MatrixXd samples; ///< one row per retained sample
    std::vector<double> log_posterior;
    std::vector<char> accepted; ///< acceptance flag of the step that produced each retained row
    std::vector<Eigen::MatrixXd> cov_checkpoints;
    std::uint64_t seed = 0;
    long total_steps = 0;
    long total_accepted = 0;
    long likelihood_failures = 0;

    int size() const { return static_cast<int>(samples.rows()); }
    int dim() const { return static_cast<int>(samples.cols()); }
    double acceptance_rate() const;
    PriorDraw point(int i) const;
    ParameterLayout layout() const { return ParameterLayout(num_windows, window_days); }

    /// Rows [first, end) of the chain.
    PosteriorChain drop(int first) const;
};

/// The sampler's time-averaged summary dimensions: 10 static, mean R_t, mean IFR.
Eigen::MatrixXd summary_dimensions(const PosteriorChain& chain);
std::vector<std::string> summary_dimension_names();

/// Adaptive Metropolis with an arbitrary log-likelihood; `starts` optionally warm-starts the chains.
std::vector<PosteriorChain> am_run(const PriorSet& priors, const LogLikelihood& loglik, int num_windows,
                                   const AmConfig& cfg, std::uint64_t seed,
                                   const std::vector<Eigen::VectorXd>& starts = {});

/// KLAM: the Kalman marginal likelihood of `series` as target.
std::vector<PosteriorChain> am_run(const PriorSet& priors, const ObservationSeries& series, const AmConfig& cfg,
                                   const NoiseConfig& noise, std::uint64_t seed,
                                   const std::vector<Eigen::VectorXd>& starts = {});

/// Single chain; the building block of the multi-chain runs.
PosteriorChain am_chain(const PriorSet& priors, const LogLikelihood& loglik, int num_windows, const AmConfig& cfg,
                        std::uint64_t seed, const std::optional<Eigen::VectorXd>& start = std::nullopt);

/// Potential scale reduction factor of one column across equally long chains.
double gelman_rubin(const std::vector<Eigen::VectorXd>& chains);
double gelman_rubin(const std::vector<PosteriorChain>& chains, int dim);

struct DimensionSummary {
    std::string name;
    double mean = 0, sd = 0;
    double lo68 = 0, hi68 = 0, lo95 = 0, hi95 = 0;
    double median = 0;
};

/// Equal-tailed summaries of a sample matrix (rows are samples). Optional per-chain weights pool
/// several chains as a weighted mixture with each chain normalized to its weight.
std::vector<DimensionSummary> posterior_summary(const std::vector<Eigen::MatrixXd>& chains,
                                                const std::vector<std::string>& names,
                                                const std::vector<double>& weights = {});
std::vector<DimensionSummary> posterior_summary(const std::vector<PosteriorChain>& chains,
                                                const std::vector<double>& weights = {});

/// Quantile of the weighted empirical distribution, interpolating linearly between atoms placed
/// at the midpoints of their cumulative-weight intervals.
double weighted_quantile(std::vector<std::pair<double, double>> value_weight, double q);

/// Chain persistence: CSV of samples plus a JSON sidecar.
void write_chain(const std::string& csv_path, const std::string& json_path, const PosteriorChain& chain,
                 const nlohmann::json& extra = {});
PosteriorChain read_chain(const std::string& csv_path, const std::string& json_path);

} // namespace covmon
