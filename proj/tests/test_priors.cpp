#include "covmon/errors.hpp"
#include "covmon/priors.hpp"

#include <boost/math/quadrature/tanh_sinh.hpp>
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace covmon;

namespace {

double integrate_density(const PriorDescriptor& d)
{
    boost::math::quadrature::tanh_sinh<double> q;
    const double lo = d.support_lower(), hi = d.support_upper();
    // split to keep interior peaks well resolved
    const int pieces = 16;
    double total = 0.0;
    for (int i = 0; i < pieces; ++i) {
        const double a = lo + (hi - lo) * i / pieces;
        const double b = lo + (hi - lo) * (i + 1) / pieces;
        total += q.integrate([&](double x) { return std::exp(d.logpdf(x)); }, a, b);
    }
    return total;
}

} // namespace

TEST(Priors, DensitiesIntegrateToOne)
{
    const PriorSet s = PriorSet::defaults();
    for (const auto& [name, d] : s.all()) {
        EXPECT_NEAR(integrate_density(d), 1.0, 1e-6) << name;
    }
    EXPECT_NEAR(integrate_density(PriorDescriptor::truncated_lognormal(0.1, 0.7, 3.0)), 1.0, 1e-6);
    EXPECT_NEAR(integrate_density(PriorDescriptor::uniform(-1.0, 2.5)), 1.0, 1e-9);
}

TEST(Priors, SupportsOfTheDefaultTable)
{
    const PriorSet s = PriorSet::defaults();
    EXPECT_DOUBLE_EQ(s.at("sigma").support_lower(), 0.14);
    EXPECT_DOUBLE_EQ(s.at("sigma").support_upper(), 0.19);
    EXPECT_DOUBLE_EQ(s.at("IFR").support_upper(), 0.02);
    EXPECT_DOUBLE_EQ(s.at("HOSP").support_upper(), 0.17);
    EXPECT_DOUBLE_EQ(s.at("tau_half").support_lower(), 1.0 / 24.0);
    EXPECT_DOUBLE_EQ(s.at("tau_half").support_upper(), 0.5);
    EXPECT_DOUBLE_EQ(s.at("R_t").support_upper(), 16.0);
}

TEST(Priors, LogpdfOutsideSupport)
{
    const PriorSet s = PriorSet::defaults();
    EXPECT_EQ(s.at("sigma").logpdf(0.2), -INFINITY);
    EXPECT_EQ(s.at("R_t").logpdf(-0.1), -INFINITY);
    EXPECT_EQ(s.at("R_t").logpdf(16.5), -INFINITY);
    ParameterVector p;
    p.sigma = 0.5;
    DynamicSchedule dyn;
    dyn.r_t = {1.0};
    dyn.ifr = {0.005};
    EXPECT_EQ(prior_logpdf(s, p, dyn), -INFINITY);
}

TEST(Priors, SigmaDraws)
{
    const PriorSet s = PriorSet::defaults();
    const auto& d = s.at("sigma");
    Rng rng(17);
    const int n = 100000;
    double sum = 0.0, sq = 0.0, lo = 1.0, hi = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = d.sample(rng);
        sum += x;
        sq += x * x;
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    const double mean = sum / n;
    const double se = std::sqrt((sq / n - mean * mean) / n);
    EXPECT_NEAR(mean, d.mean(), 3.0 * se);
    // the published shape puts the mean 0.3% above 1 / 6.2
    EXPECT_NEAR(mean, 1.0 / 6.2, 0.005 / 6.2);
    EXPECT_GE(lo, 0.14);
    EXPECT_LE(hi, 0.19);
}

TEST(Priors, IfrDraws)
{
    const auto& d = PriorSet::defaults().at("IFR");
    Rng rng(19);
    const int n = 100000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = d.sample(rng);
        sum += x;
        sq += x * x;
    }
    const double mean = sum / n;
    const double se = std::sqrt((sq / n - mean * mean) / n);
    EXPECT_NEAR(mean, 0.0067, 3.0 * se + 5e-5);
    EXPECT_NEAR(d.mean(), 0.02 / 3.0, 1e-15);
}

TEST(Priors, ReproductionNumberDrawnSquared)
{
    const auto& d = PriorSet::defaults().at("R_t");
    Rng a(23), b(23);
    PriorDescriptor base = d;
    base.squared = false;
    for (int i = 0; i < 1000; ++i) {
        const double r = d.sample(a);
        const double phi = base.sample(b);
        EXPECT_DOUBLE_EQ(r, phi * phi);
    }
}

TEST(Priors, DrawsRespectSupport)
{
    const PriorSet s = PriorSet::defaults();
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const PriorDraw d = prior_sample(s, 4, seed);
        EXPECT_TRUE(std::isfinite(prior_logpdf(s, d.params, d.schedule)));
        EXPECT_EQ(d.schedule.num_windows(), 4);
    }
}

TEST(Priors, SeedDeterminism)
{
    const PriorSet s = PriorSet::defaults();
    const PriorDraw a = prior_sample(s, 3, 99), b = prior_sample(s, 3, 99);
    EXPECT_EQ(a.params.inferred(), b.params.inferred());
    EXPECT_EQ(a.schedule.r_t, b.schedule.r_t);
    EXPECT_EQ(a.schedule.ifr, b.schedule.ifr);
    EXPECT_NE(derive_seed(1, 0), derive_seed(1, 1));
    EXPECT_EQ(derive_seed(5, 7), derive_seed(5, 7));
}

TEST(Priors, JsonRoundTrip)
{
    const PriorSet s = PriorSet::defaults();
    const PriorSet t = PriorSet::from_json(s.to_json());
    for (const auto& [name, d] : s.all()) {
        EXPECT_EQ(t.at(name).kind, d.kind) << name;
        EXPECT_DOUBLE_EQ(t.at(name).mean(), d.mean()) << name;
    }
    const auto path = std::filesystem::temp_directory_path() / "covmon_bad_priors.json";
    std::ofstream(path) << R"({"sigma": {"kind": "scaled-beta", "params": [-1, 2], "lower": 0, "upper": 1}})";
    EXPECT_THROW(PriorSet::load(path.string()), InputError);
    std::filesystem::remove(path);
}

TEST(Priors, ShippedFileMatchesDefaults)
{
    const PriorSet shipped = PriorSet::load(COVMON_SOURCE_DIR "/data/priors_default.json");
    const PriorSet defaults = PriorSet::defaults();
    for (const auto& [name, d] : defaults.all()) {
        EXPECT_DOUBLE_EQ(shipped.at(name).mean(), d.mean()) << name;
        EXPECT_DOUBLE_EQ(shipped.at(name).support_upper(), d.support_upper()) << name;
    }
}

TEST(Priors, WindowsOfSchedule)
{
    EXPECT_EQ(windows_for(300, 28), 11);
    EXPECT_EQ(windows_for(28, 28), 1);
    DynamicSchedule dyn;
    dyn.r_t = {1, 2};
    dyn.ifr = {0.01, 0.01};
    EXPECT_EQ(dyn.window_of(0), 0);
    EXPECT_EQ(dyn.window_of(27), 0);
    EXPECT_EQ(dyn.window_of(28), 1);
    EXPECT_EQ(dyn.window_of(400), 1);
}

TEST(HospPrior, PointMassInputsGiveAPoint)
{
    PriorSet s = PriorSet::defaults();
    for (const char* name : {"IFR", "E2I", "IC_HOSP", "I_HW"}) {
        s.set(name, PriorDescriptor::point_mass(s.at(name).mean()));
    }
    const PriorDescriptor d = derive_hosp_prior(s, 1000, 3);
    const double ifr = s.at("IFR").a, e2i = s.at("E2I").a, ic = s.at("IC_HOSP").a, ihw = s.at("I_HW").a;
    const double x = ic * (1.0 - kSirMort);
    const double expected = ifr / e2i * (1.0 - x) / ((1.0 + ihw) * (kHospMort + ic) * kSirMort);
    EXPECT_NEAR(d.mean(), expected, 1e-12);
    EXPECT_NEAR(d.support_upper() - d.support_lower(), 0.0, 1e-12);
}

TEST(HospPrior, StableAcrossSeeds)
{
    const PriorSet s = PriorSet::defaults();
    const double a = derive_hosp_prior(s, 100000, 1).mean();
    const double b = derive_hosp_prior(s, 100000, 2).mean();
    EXPECT_NEAR(a, b, 0.02 * a);
    const PriorDescriptor d = derive_hosp_prior(s, 100000, 1);
    EXPECT_NEAR(d.support_lower(), 0.0, 0.01);
}
