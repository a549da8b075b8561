#pragma once

#include "covmon/model.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace covmon {

using Rng = std::mt19937_64;

/// Independent stream seed derived from a master seed.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

enum class PriorKind { ScaledBeta, TruncatedLognormal, Uniform, PointMass };

/// One univariate prior. For ScaledBeta `a`, `b` are the shape parameters on [lower, upper];
/// for TruncatedLognormal they are the log-mean and log-sd; PointMass keeps its value in `a`.
/// With `squared` set, the described variable is X^2 for X distributed as stated.
struct PriorDescriptor {
    PriorKind kind = PriorKind::Uniform;
    double a = 0.0;
    double b = 1.0;
    double lower = 0.0;
    double upper = 1.0;
    bool squared = false;

    static PriorDescriptor scaled_beta(double a, double b, double lower, double upper);
    static PriorDescriptor truncated_lognormal(double log_mean, double log_sd, double upper);
    static PriorDescriptor uniform(double lower, double upper);
    static PriorDescriptor point_mass(double value);

    double logpdf(double x) const;
    double sample(Rng& rng) const;
    double mean() const;

    /// Support of the described variable (after squaring, if any).
    double support_lower() const;
    double support_upper() const;
    bool in_support(double x) const;

    void validate() const;
};

/// Named priors for the 10 static parameters and the per-window dynamic ones ("R_t", "IFR").
class PriorSet {
public:
    static PriorSet defaults();
    static PriorSet from_json(const nlohmann::json& j);
    static PriorSet load(const std::string& path);
    nlohmann::json to_json() const;

    const PriorDescriptor& at(const std::string& name) const;
    void set(const std::string& name, PriorDescriptor d);
    bool contains(const std::string& name) const { return priors_.count(name) != 0; }
    const std::map<std::string, PriorDescriptor>& all() const { return priors_; }

private:
    std::map<std::string, PriorDescriptor> priors_;
};

/// Piecewise-constant dynamic parameters: one (R_t, IFR) pair per window.
struct DynamicSchedule {
    int window_days = 28;
    std::vector<double> r_t;
    std::vector<double> ifr;

    int num_windows() const { return static_cast<int>(r_t.size()); }
    /// Window of a day offset counted from the start of the analysis period; days past the
    /// last window stay in it (used for forecasting beyond the fitted period).
    int window_of(int day) const;
};

/// Number of windows needed to cover `num_days` days.
int windows_for(int num_days, int window_days);

struct PriorDraw {
    ParameterVector params;
    DynamicSchedule schedule;
};

PriorDraw prior_sample(const PriorSet& priors, int num_windows, std::uint64_t seed, int window_days = 28);
double prior_logpdf(const PriorSet& priors, const ParameterVector& p, const DynamicSchedule& s);

/// Monte Carlo construction of the HOSP prior from the IFR, E2I, IC_HOSP and [I:HW] priors,
/// fitted as a scaled beta by moments on the padded sample range.
PriorDescriptor derive_hosp_prior(const PriorSet& priors, int n_samples, std::uint64_t seed);

/// Method-of-moments scaled-beta fit on [min, max] of `samples` widened by 1% of the range.
PriorDescriptor fit_scaled_beta(const std::vector<double>& samples);

} // namespace covmon
