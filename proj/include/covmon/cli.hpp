#pragma once

#include "covmon/beta.hpp"
#include "covmon/date.hpp"
#include "covmon/errors.hpp"
#include "covmon/kalman.hpp"
#include "covmon/sampler.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace covmon::cli {

struct RunConfig {
    std::string data; ///< regional CSV file, or a directory of them
    std::string priors; ///< prior JSON; empty uses the built-in table
    std::vector<std::string> regions; ///< empty selects every region in the data
    std::optional<Date> start, end; ///< analysis period, inclusive
    int window_days = 28;
    AmConfig am;
    HorizonConfig horizon;
    NoiseConfig noise;
    std::string output_dir = ".";
    std::optional<std::uint64_t> seed;
    int jobs = 1; ///< regions processed concurrently

    int kernel_width = 7;
    int max_gap = 3;
    int forecast_samples = 200; ///< posterior points used for forecasts and hidden states
    int warm_burn_in = 1000; ///< burn-in when chains are warm started
    std::optional<std::pair<Date, double>> recovered_anchor;

    /// Relative paths in `j` are resolved against `base_dir`.
    static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
    nlohmann::json to_json() const;
    void validate() const;
};

NoiseConfig noise_from_json(const nlohmann::json& j);
nlohmann::json noise_to_json(const NoiseConfig& n);
HorizonConfig horizon_from_json(const nlohmann::json& j);
nlohmann::json horizon_to_json(const HorizonConfig& h);

/// Files written into a staging directory and moved into place by commit(); an uncommitted
/// stage is removed on destruction.
class Staging {
public:
    explicit Staging(const std::filesystem::path& output_dir);
    ~Staging();
    Staging(const Staging&) = delete;
    Staging& operator=(const Staging&) = delete;

    /// Staging path for `relative`, creating parent directories.
    std::string path(const std::filesystem::path& relative);
    void commit();

private:
    std::filesystem::path out_, tmp_;
    std::vector<std::filesystem::path> files_;
    bool committed_ = false;
};

struct IngestOptions {
    bool dry_run = false;
};
struct FitOptions {
    std::string warm_start; ///< directory with chains from an earlier fit
};
struct PredictOptions {
    std::string fit_dir;
    int horizon = 7;
};
struct BetaOptions {
    std::string fit_dir;
};
struct BootstrapOptions {
    std::string fit_dir;
    int n_boot = 3;
};
struct ReportOptions {
    std::string fit_dir;
    std::string beta_dir;
    std::string forecast; ///< earlier predictive CSV to score against the data
    int horizon = 7;
};

void cmd_ingest(const RunConfig& cfg, const IngestOptions& opt, std::ostream& log);
void cmd_fit(const RunConfig& cfg, const FitOptions& opt, std::ostream& log);
void cmd_predict(const RunConfig& cfg, const PredictOptions& opt, std::ostream& log);
void cmd_beta(const RunConfig& cfg, const BetaOptions& opt, std::ostream& log);
void cmd_bootstrap(const RunConfig& cfg, const BootstrapOptions& opt, std::ostream& log);
void cmd_report(const RunConfig& cfg, const ReportOptions& opt, std::ostream& log);

/// Reads every regional CSV below `path` (a file or a directory).
std::vector<ObservationSeries> load_series(const std::string& path, std::ostream& log);

/// Series selected by the configured regions and restricted to the analysis period.
std::vector<ObservationSeries> select_series(const RunConfig& cfg, std::vector<ObservationSeries> all);

/// Chains stored by cmd_fit for one region.
std::vector<PosteriorChain> load_chains(const std::filesystem::path& fit_dir, const std::string& region);

/// Stable per-region seed stream.
std::uint64_t region_seed(std::uint64_t master, const std::string& region);

/// Parses the command line and runs a subcommand. Returns 0 on success, 1 on numerical failure,
/// 2 on usage or configuration errors.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace covmon::cli
