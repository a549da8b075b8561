#pragma once

#include "covmon/date.hpp"
#include "covmon/model.hpp"

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

namespace covmon {

/// Daily regional observations. H and W are prevalence levels, D is cumulative.
/// Missing values are NaN.
struct ObservationSeries {
    std::string region_id;
    double population = 0.0;
    std::vector<Date> dates;
    std::vector<double> hospital;
    std::vector<double> icu;
    std::vector<double> dead;

    int size() const { return static_cast<int>(dates.size()); }
    bool empty() const { return dates.empty(); }
    ObsVector observation(int k) const;
    void push_back(Date d, double h, double w, double dead_cumulative);

    /// Throws InputError unless dates are consecutive days and field lengths agree.
    void validate() const;

    /// Copy restricted to the half-open day range [first, last).
    ObservationSeries slice(int first, int last) const;
};

struct CleaningReport {
    std::string region_id;
    int negatives_repaired = 0;
    int gaps_interpolated = 0;
    int marked_missing = 0;
    double residual_deficit = 0.0;
    int outliers_smoothed = 0;
    double d_smooth = 0.0;
    std::vector<std::string> warnings;

    nlohmann::json to_json() const;
};

struct ParseResult {
    std::vector<ObservationSeries> series;
    std::vector<std::string> warnings;
};

/// Reads a CSV with header columns date, region, hospital, icu, dead_cumulative and an
/// optional population column. Regions come out sorted by name. Bad rows become warnings;
/// a malformed header or a non-increasing date within a region is an InputError.
ParseResult parse_regional_csv(const std::string& path);
ParseResult parse_regional_csv_text(const std::string& text, const std::string& source = "<memory>");

/// Writes series in the input schema plus a provenance column (one label per row).
void write_regional_csv(const std::string& path, const std::vector<ObservationSeries>& series,
                        const std::vector<std::vector<std::string>>& provenance = {});

struct CleanResult {
    ObservationSeries series;
    CleaningReport report;
    std::vector<std::string> provenance;
};

/// Repairs negative values and short gaps. A negative daily death increment is set to zero and
/// the deficit is removed from the preceding `kernel_width` increments with weights proportional
/// to (kernel_width - age); interior gaps of at most `max_gap` days are interpolated.
CleanResult clean_series(const ObservationSeries& s, int kernel_width = 7, int max_gap = 3);

inline const std::vector<double> kDefaultThresholds = {10, 9, 8, 7, 6, 5, 4, 3, 2};

struct SmoothResult {
    ObservationSeries series;
    int outliers_smoothed = 0;
    std::vector<std::string> warnings;
    std::vector<bool> modified;
};

/// Outlier smoothing of daily death increments. For each threshold k (descending) increments
/// above m + k sqrt(m), with m the trailing 28-day mean, are capped and the excess is spread over
/// the preceding 7 days towards under-reported weekdays. Total deaths are preserved.
SmoothResult smooth_series(const ObservationSeries& s, const std::vector<double>& thresholds = kDefaultThresholds);

/// Largest standardized exceedance (inc - m) / sqrt(max(m, 1)) of the daily death increments.
double max_outlier_score(const ObservationSeries& s);

/// Mean over days of the largest relative deviation among H, W, D.
double smoothing_distance(const ObservationSeries& raw, const ObservationSeries& smooth);

/// Daily increments of a cumulative series; index 0 and days after a gap get the increment
/// relative to the last present value, missing days stay NaN.
std::vector<double> daily_increments(const std::vector<double>& cumulative);

} // namespace covmon
