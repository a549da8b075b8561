#include "covmon/data.hpp"
#include "covmon/errors.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

using namespace covmon;

namespace {

const char* kHeader = "date,region,hospital,icu,dead_cumulative\n";

ObservationSeries make_series(const std::vector<double>& d, double h = 10.0, double w = 2.0)
{
    ObservationSeries s;
    s.region_id = "r";
    Date day = Date::from_ymd(2020, 3, 2); // a Monday
    for (double v : d) {
        s.push_back(day, h, w, v);
        day = day + 1;
    }
    return s;
}

ObservationSeries from_increments(const std::vector<double>& inc)
{
    std::vector<double> d(inc.size());
    std::partial_sum(inc.begin(), inc.end(), d.begin());
    return make_series(d);
}

double total_increment(const ObservationSeries& s)
{
    return s.dead.back() - s.dead.front();
}

double weekday_mean_variance(const ObservationSeries& s)
{
    const auto inc = daily_increments(s.dead);
    std::array<double, 7> sum{}, n{};
    for (int k = 1; k < s.size(); ++k) {
        sum[k % 7] += inc[k];
        n[k % 7] += 1.0;
    }
    double m = 0.0;
    for (int i = 0; i < 7; ++i) {
        sum[i] /= n[i];
        m += sum[i] / 7.0;
    }
    double v = 0.0;
    for (int i = 0; i < 7; ++i) {
        v += (sum[i] - m) * (sum[i] - m) / 7.0;
    }
    return v;
}

double reference_distance(const ObservationSeries& a, const ObservationSeries& b)
{
    double total = 0.0;
    for (int t = 0; t < a.size(); ++t) {
        const double xs[3] = {a.hospital[t], a.icu[t], a.dead[t]};
        const double ys[3] = {b.hospital[t], b.icu[t], b.dead[t]};
        double worst = 0.0;
        for (int i = 0; i < 3; ++i) {
            worst = std::max(worst, std::abs(ys[i] - xs[i]) / std::max(1.0, std::abs(xs[i])));
        }
        total += worst;
    }
    return total / a.size();
}

} // namespace

TEST(Csv, HeaderOnlyGivesNoSeries)
{
    EXPECT_TRUE(parse_regional_csv_text(kHeader).series.empty());
}

TEST(Csv, TwoRegions)
{
    const std::string text = std::string(kHeader)
                             + "2020-03-01,B,1,0,0\n2020-03-01,A,2,1,0\n2020-03-02,B,2,0,1\n"
                               "2020-03-02,A,3,1,0\n2020-03-03,B,2,1,1\n2020-03-03,A,,1,2\n";
    const auto res = parse_regional_csv_text(text);
    ASSERT_EQ(res.series.size(), 2u);
    EXPECT_EQ(res.series[0].region_id, "A");
    EXPECT_EQ(res.series[0].size(), 3);
    EXPECT_EQ(res.series[1].size(), 3);
    EXPECT_TRUE(std::isnan(res.series[0].hospital[2]));
    EXPECT_EQ(res.series[1].dead[2], 1.0);
}

TEST(Csv, DateRegressionNamesTheLine)
{
    const std::string text = std::string(kHeader) + "2020-03-02,A,1,0,0\n2020-03-01,A,1,0,0\n";
    try {
        parse_regional_csv_text(text);
        FAIL() << "expected an error";
    }
    catch (const InputError& e) {
        EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
    }
}

TEST(Csv, MalformedHeaderIsAnError)
{
    EXPECT_THROW(parse_regional_csv_text("date,region,hospital\n2020-03-01,A,1\n"), InputError);
}

TEST(Csv, BadRowsBecomeWarnings)
{
    const std::string text = std::string(kHeader) + "2020-03-01,A,1,0,0\nnot-a-date,A,1,0,0\n2020-03-02,A,x,0,0\n";
    const auto res = parse_regional_csv_text(text);
    EXPECT_EQ(res.warnings.size(), 2u);
    ASSERT_EQ(res.series.size(), 1u);
}

TEST(Csv, WriteAndReadBack)
{
    const ObservationSeries s = make_series({0, 1, 3, 3});
    const auto path = (std::filesystem::temp_directory_path() / "covmon_rw.csv").string();
    write_regional_csv(path, {s}, {{"original", "original", "interpolated", "original"}});
    const auto res = parse_regional_csv(path);
    ASSERT_EQ(res.series.size(), 1u);
    EXPECT_EQ(res.series[0].dead, s.dead);
    EXPECT_EQ(res.series[0].dates, s.dates);
    std::filesystem::remove(path);
}

TEST(Cleaning, CleanSeriesIsIdentity)
{
    const ObservationSeries s = make_series({0, 1, 3, 6, 6, 8});
    const CleanResult c = clean_series(s);
    EXPECT_EQ(c.series.dead, s.dead);
    EXPECT_EQ(c.report.negatives_repaired, 0);
    EXPECT_EQ(c.report.gaps_interpolated, 0);
    EXPECT_EQ(c.report.marked_missing, 0);
}

TEST(Cleaning, NegativeIncrementAbsorbedByKernel)
{
    // the first day has no increment to draw from, so the whole deficit comes from day 1
    const CleanResult c = clean_series(make_series({0, 5, 3}), 2);
    EXPECT_EQ(c.series.dead, (std::vector<double>{0, 3, 3}));
    EXPECT_EQ(c.report.negatives_repaired, 1);
}

TEST(Cleaning, DeficitSpreadWithLinearWeights)
{
    // increments 4, 4, 4 then -6; width 4 gives weights 4, 3, 2 for the three preceding days
    const CleanResult c = clean_series(make_series({0, 4, 8, 12, 6}), 4);
    auto inc = daily_increments(c.series.dead);
    EXPECT_EQ(inc[1], 4.0 - 1.0);
    EXPECT_EQ(inc[2], 4.0 - 2.0);
    EXPECT_EQ(inc[3], 4.0 - 3.0);
    EXPECT_EQ(inc[4], 0.0);
    EXPECT_EQ(total_increment(c.series), 6.0);

    // fractional data keeps the exact proportional split
    const CleanResult f = clean_series(make_series({0, 3.5, 7, 10.5, 7}), 4);
    inc = daily_increments(f.series.dead);
    EXPECT_NEAR(inc[1], 3.5 - 3.5 * 2.0 / 9.0, 1e-12);
    EXPECT_NEAR(inc[2], 3.5 - 3.5 * 3.0 / 9.0, 1e-12);
    EXPECT_NEAR(inc[3], 3.5 - 3.5 * 4.0 / 9.0, 1e-12);

    // integer data with a fractional split stays integral and keeps the total
    const CleanResult r = clean_series(make_series({0, 3, 6, 9, 6}), 4);
    inc = daily_increments(r.series.dead);
    for (int k = 1; k < 5; ++k) {
        EXPECT_EQ(inc[k], std::round(inc[k]));
    }
    EXPECT_EQ(total_increment(r.series), 6.0);
}

TEST(Cleaning, ResidualDeficitReported)
{
    const CleanResult c = clean_series(make_series({0, 1, 1, 10, 0}), 2);
    EXPECT_GT(c.report.residual_deficit, 0.0);
    EXPECT_FALSE(c.report.warnings.empty());
    for (int k = 1; k < c.series.size(); ++k) {
        EXPECT_GE(c.series.dead[k], c.series.dead[k - 1]);
    }
}

TEST(Cleaning, AllMissingFlagged)
{
    const double nan = std::nan("");
    ObservationSeries s = make_series({nan, nan, nan}, nan, nan);
    const CleanResult c = clean_series(s);
    EXPECT_EQ(c.report.marked_missing, 3);
    for (double v : c.series.dead) {
        EXPECT_TRUE(std::isnan(v));
    }
}

TEST(Cleaning, ShortGapsInterpolated)
{
    const double nan = std::nan("");
    ObservationSeries s = make_series({0, 2, nan, 6, 8});
    s.hospital[2] = nan;
    s.hospital[1] = 4;
    s.hospital[3] = 8;
    s.icu[0] = -1;
    const CleanResult c = clean_series(s);
    EXPECT_DOUBLE_EQ(c.series.dead[2], 4.0);
    EXPECT_DOUBLE_EQ(c.series.hospital[2], 6.0);
    EXPECT_EQ(c.series.icu[0], 0.0);
    EXPECT_EQ(c.report.negatives_repaired, 1);
    EXPECT_EQ(c.report.gaps_interpolated, 2);
    EXPECT_EQ(c.provenance[2], "interpolated");
}

TEST(Smoothing, ConstantIncidenceUnchanged)
{
    const ObservationSeries s = from_increments(std::vector<double>(60, 5.0));
    const SmoothResult r = smooth_series(s);
    EXPECT_EQ(r.series.dead, s.dead);
    EXPECT_EQ(r.outliers_smoothed, 0);
}

TEST(Smoothing, SpikeReducedAndMassPreserved)
{
    std::vector<double> inc(60, 5.0);
    inc[45] = 100.0;
    const ObservationSeries s = from_increments(inc);
    const SmoothResult r = smooth_series(s);
    EXPECT_EQ(total_increment(r.series), total_increment(s));
    EXPECT_GT(r.outliers_smoothed, 0);
    EXPECT_LE(max_outlier_score(r.series), 2.0);
    const auto out = daily_increments(r.series.dead);
    for (int k = 1; k < r.series.size(); ++k) {
        EXPECT_GE(out[k], 0.0);
    }
}

TEST(Smoothing, WeekdayVarianceDecreases)
{
    // deaths reported in Monday batches
    std::vector<double> inc(84);
    for (std::size_t k = 0; k < inc.size(); ++k) {
        inc[k] = k % 7 == 0 ? 30.0 : (k % 7 == 6 ? 1.0 : 4.0);
    }
    const ObservationSeries s = from_increments(inc);
    const SmoothResult r = smooth_series(s);
    EXPECT_LT(weekday_mean_variance(r.series), weekday_mean_variance(s));
    EXPECT_EQ(total_increment(r.series), total_increment(s));
}

TEST(Smoothing, RandomSeriesInvariants)
{
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<double> inc(90);
        std::poisson_distribution<int> pois(6.0);
        for (auto& v : inc) {
            v = pois(rng);
        }
        inc[30 + trial] += 40.0 + trial;
        const ObservationSeries s = from_increments(inc);
        const SmoothResult r = smooth_series(s);
        EXPECT_EQ(total_increment(r.series), total_increment(s));
        for (int k = 1; k < r.series.size(); ++k) {
            EXPECT_GE(r.series.dead[k], r.series.dead[k - 1]);
        }
        EXPECT_LE(weekday_mean_variance(r.series), weekday_mean_variance(s) + 1e-12);
        // a second pass finds nothing left to smooth
        EXPECT_EQ(smooth_series(r.series).series.dead, r.series.dead);
    }
}

TEST(Smoothing, ShortSeriesWarns)
{
    const ObservationSeries s = from_increments({1, 9, 1});
    const SmoothResult r = smooth_series(s);
    EXPECT_EQ(r.series.dead, s.dead);
    EXPECT_FALSE(r.warnings.empty());
}

TEST(SmoothingDistance, IdenticalIsZero)
{
    const ObservationSeries s = make_series({0, 1, 2});
    EXPECT_EQ(smoothing_distance(s, s), 0.0);
}

TEST(SmoothingDistance, UnitFloorOnDenominator)
{
    ObservationSeries a = make_series({0}, 0.0, 0.0);
    ObservationSeries b = a;
    b.hospital[0] = 2.0;
    EXPECT_DOUBLE_EQ(smoothing_distance(a, b), 2.0);
}

TEST(SmoothingDistance, MatchesSecondImplementation)
{
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.0, 50.0);
    for (int trial = 0; trial < 20; ++trial) {
        ObservationSeries a, b;
        Date day = Date::from_ymd(2020, 4, 1);
        for (int k = 0; k < 40; ++k) {
            a.push_back(day, u(rng), u(rng) / 10.0, u(rng));
            b.push_back(day, u(rng), u(rng) / 10.0, u(rng));
            day = day + 1;
        }
        EXPECT_NEAR(smoothing_distance(a, b), reference_distance(a, b), 1e-12);
    }
}

TEST(SmoothingDistance, MisalignedDatesRejected)
{
    ObservationSeries a = make_series({0, 1});
    ObservationSeries b = a;
    b.dates[0] = b.dates[0] - 1;
    b.dates[1] = b.dates[1] - 1;
    EXPECT_THROW(smoothing_distance(a, b), InputError);
}

TEST(Pipeline, DeathsMonotoneAfterCleaningAndSmoothing)
{
    std::mt19937_64 rng(12);
    std::normal_distribution<double> noise(0.0, 3.0);
    std::vector<double> d(100);
    double acc = 0.0;
    for (auto& v : d) {
        acc += 4.0 + std::round(noise(rng));
        v = acc;
    }
    const CleanResult c = clean_series(make_series(d));
    const SmoothResult s = smooth_series(c.series);
    for (int k = 1; k < s.series.size(); ++k) {
        EXPECT_GE(s.series.dead[k], s.series.dead[k - 1]);
    }
}
