#include "covmon/priors.hpp"
#include "covmon/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

namespace covmon {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double normal_cdf(double z)
{
    return 0.5 * std::erfc(-z / std::sqrt(2.0));
}

double log_beta_fn(double a, double b)
{
    return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

double lognormal_mass(double mu, double sd, double lower, double upper)
{
    const double lo = lower > 0.0 ? normal_cdf((std::log(lower) - mu) / sd) : 0.0;
    const double hi = std::isfinite(upper) ? normal_cdf((std::log(upper) - mu) / sd) : 1.0;
    return hi - lo;
}

// E[X^n] for the truncated lognormal.
double lognormal_moment(double mu, double sd, double lower, double upper, int n)
{
    const double shift = mu + n * sd * sd;
    const double lo = lower > 0.0 ? normal_cdf((std::log(lower) - shift) / sd) : 0.0;
    const double hi = std::isfinite(upper) ? normal_cdf((std::log(upper) - shift) / sd) : 1.0;
    return std::exp(n * mu + 0.5 * n * n * sd * sd) * (hi - lo) / lognormal_mass(mu, sd, lower, upper);
}

double sample_beta(double a, double b, Rng& rng)
{
    std::gamma_distribution<double> ga(a, 1.0);
    std::gamma_distribution<double> gb(b, 1.0);
    const double x = ga(rng);
    const double y = gb(rng);
    return x / (x + y);
}

std::string kind_name(PriorKind k)
{
    switch (k) {
    case PriorKind::ScaledBeta:
        return "scaled-beta";
    case PriorKind::TruncatedLognormal:
        return "truncated-lognormal";
    case PriorKind::Uniform:
        return "uniform";
    case PriorKind::PointMass:
        return "point-mass";
    }
    return "unknown";
}

PriorKind kind_from_name(const std::string& s)
{
    if (s == "scaled-beta") {
        return PriorKind::ScaledBeta;
    }
    if (s == "truncated-lognormal") {
        return PriorKind::TruncatedLognormal;
    }
    if (s == "uniform") {
        return PriorKind::Uniform;
    }
    if (s == "point-mass") {
        return PriorKind::PointMass;
    }
    throw InputError("unknown prior kind '" + s + "'");
}

} // namespace

PriorDescriptor PriorDescriptor::scaled_beta(double a, double b, double lower, double upper)
{
    return {PriorKind::ScaledBeta, a, b, lower, upper, false};
}

PriorDescriptor PriorDescriptor::truncated_lognormal(double log_mean, double log_sd, double upper)
{
    return {PriorKind::TruncatedLognormal, log_mean, log_sd, 0.0, upper, false};
}

PriorDescriptor PriorDescriptor::uniform(double lower, double upper)
{
    return {PriorKind::Uniform, 0.0, 0.0, lower, upper, false};
}

PriorDescriptor PriorDescriptor::point_mass(double value)
{
    return {PriorKind::PointMass, value, 0.0, value, value, false};
}

void PriorDescriptor::validate() const
{
    switch (kind) {
    case PriorKind::ScaledBeta:
        if (!(a > 0.0 && b > 0.0 && upper > lower)) {
            throw InputError("scaled-beta needs a, b > 0 and upper > lower");
        }
        break;
    case PriorKind::TruncatedLognormal:
        if (!(b > 0.0 && lower >= 0.0 && upper > lower)) {
            throw InputError("truncated-lognormal needs log-sd > 0 and 0 <= lower < upper");
        }
        break;
    case PriorKind::Uniform:
        if (!(upper > lower)) {
            throw InputError("uniform needs upper > lower");
        }
        break;
    case PriorKind::PointMass:
        if (!std::isfinite(a)) {
            throw InputError("point-mass value must be finite");
        }
        break;
    }
    if (squared && lower < 0.0) {
        throw InputError("squared transform requires a nonnegative base variable");
    }
}

double PriorDescriptor::support_lower() const
{
    const double lo = kind == PriorKind::PointMass ? a : lower;
    return squared ? lo * lo : lo;
}

double PriorDescriptor::support_upper() const
{
    const double hi = kind == PriorKind::PointMass ? a : upper;
    return squared ? hi * hi : hi;
}

bool PriorDescriptor::in_support(double x) const
{
    return std::isfinite(logpdf(x));
}

double PriorDescriptor::logpdf(double x) const
{
    if (!std::isfinite(x)) {
        return kNegInf;
    }
    if (squared) {
        if (x <= 0.0) {
            return kNegInf;
        }
        const double root = std::sqrt(x);
        PriorDescriptor base = *this;
        base.squared = false;
        return base.logpdf(root) - std::log(2.0 * root);
    }
    switch (kind) {
    case PriorKind::ScaledBeta: {
        if (x < lower || x > upper) {
            return kNegInf;
        }
        const double width = upper - lower;
        const double u = (x - lower) / width;
        if ((u <= 0.0 && a < 1.0) || (u >= 1.0 && b < 1.0)) {
            return kNegInf;
        }
        const double la = a == 1.0 ? 0.0 : (a - 1.0) * std::log(u);
        const double lb = b == 1.0 ? 0.0 : (b - 1.0) * std::log1p(-u);
        return la + lb - log_beta_fn(a, b) - std::log(width);
    }
    case PriorKind::TruncatedLognormal: {
        if (x <= 0.0 || x < lower || x > upper) {
            return kNegInf;
        }
        const double z = (std::log(x) - a) / b;
        return -std::log(x) - std::log(b) - 0.5 * std::log(2.0 * M_PI) - 0.5 * z * z
               - std::log(lognormal_mass(a, b, lower, upper));
    }
    case PriorKind::Uniform:
        if (x < lower || x > upper) {
            return kNegInf;
        }
        return -std::log(upper - lower);
    case PriorKind::PointMass:
        return x == a ? 0.0 : kNegInf;
    }
    return kNegInf;
}

double PriorDescriptor::sample(Rng& rng) const
{
    double x = 0.0;
    switch (kind) {
    case PriorKind::ScaledBeta:
        x = lower + (upper - lower) * sample_beta(a, b, rng);
        break;
    case PriorKind::TruncatedLognormal: {
        std::lognormal_distribution<double> ln(a, b);
        // rejection; the shipped priors truncate far in the tail
        for (int attempt = 0;; ++attempt) {
            x = ln(rng);
            if (x >= lower && x <= upper) {
                break;
            }
            if (attempt > 1000000) {
                throw InputError("truncated-lognormal truncation leaves negligible mass");
            }
        }
        break;
    }
    case PriorKind::Uniform:
        x = std::uniform_real_distribution<double>(lower, upper)(rng);
        break;
    case PriorKind::PointMass:
        x = a;
        break;
    }
    return squared ? x * x : x;
}

double PriorDescriptor::mean() const
{
    switch (kind) {
    case PriorKind::ScaledBeta: {
        const double m1 = a / (a + b);
        if (!squared) {
            return lower + (upper - lower) * m1;
        }
        const double m2 = a * (a + 1.0) / ((a + b) * (a + b + 1.0));
        const double w = upper - lower;
        return lower * lower + 2.0 * lower * w * m1 + w * w * m2;
    }
    case PriorKind::TruncatedLognormal:
        return lognormal_moment(a, b, lower, upper, squared ? 2 : 1);
    case PriorKind::Uniform:
        if (squared) {
            return (upper * upper + upper * lower + lower * lower) / 3.0;
        }
        return 0.5 * (lower + upper);
    case PriorKind::PointMass:
        return squared ? a * a : a;
    }
    return 0.0;
}

PriorSet PriorSet::defaults()
{
    PriorSet s;
    s.set("sigma", PriorDescriptor::scaled_beta(2.0, 2.6, 0.14, 0.19));
    s.set("gamma_I", PriorDescriptor::scaled_beta(2.0, 5.0, 0.10, 0.25));
    s.set("gamma_H", PriorDescriptor::scaled_beta(3.0, 3.0, 0.110, 0.114));
    s.set("gamma_W", PriorDescriptor::scaled_beta(2.0, 2.0, 0.072, 0.092));
    s.set("E2I", PriorDescriptor::scaled_beta(52.56, 17.85, 0.014, 1.0));
    s.set("IC_HOSP", PriorDescriptor::scaled_beta(2.0, 13.21, 0.065, 0.94));
    s.set("HOSP", PriorDescriptor::scaled_beta(2.03, 8.28, 0.0, 0.17));
    s.set("theta_E", PriorDescriptor::scaled_beta(2.0, 2.0, 0.0, 2.0));
    s.set("theta_A", PriorDescriptor::scaled_beta(2.0, 2.0, 0.0, 2.0));
    s.set("tau_half", PriorDescriptor::uniform(1.0 / 24.0, 12.0 / 24.0));
    s.set("IFR", PriorDescriptor::scaled_beta(2.0, 4.0, 0.0, 0.02));
    auto r_t = PriorDescriptor::truncated_lognormal(std::log(1.3), 0.4, 4.0);
    r_t.squared = true;
    s.set("R_t", r_t);
    // auxiliary priors: HOSP derivation and network coupling
    s.set("I_HW", PriorDescriptor::scaled_beta(2.0, 2.0, 0.0, 2.0));
    const double lambda0 = 8.0 / 24.0 * 5.0 / 7.0;
    s.set("lambda", PriorDescriptor::scaled_beta(2.0, 2.0, 0.5 * lambda0, 1.5 * lambda0));
    return s;
}

const PriorDescriptor& PriorSet::at(const std::string& name) const
{
    auto it = priors_.find(name);
    if (it == priors_.end()) {
        throw InputError("prior set has no entry for '" + name + "'");
    }
    return it->second;
}

void PriorSet::set(const std::string& name, PriorDescriptor d)
{
    d.validate();
    priors_[name] = d;
}

PriorSet PriorSet::from_json(const nlohmann::json& j)
{
    if (!j.is_object()) {
        throw InputError("prior file must be a JSON object keyed by parameter name");
    }
    PriorSet s;
    for (const auto& [name, obj] : j.items()) {
        try {
            PriorDescriptor d;
            d.kind = kind_from_name(obj.at("kind").get<std::string>());
            std::vector<double> params = obj.value("params", std::vector<double>{});
            if (d.kind == PriorKind::PointMass) {
                if (params.size() != 1) {
                    throw InputError("point-mass takes exactly one parameter");
                }
                d.a = params[0];
                d.lower = d.upper = params[0];
            }
            else {
                if (d.kind != PriorKind::Uniform && params.size() != 2) {
                    throw InputError("expected two parameters");
                }
                if (params.size() == 2) {
                    d.a = params[0];
                    d.b = params[1];
                }
                d.lower = obj.at("lower").get<double>();
                d.upper = obj.at("upper").get<double>();
            }
            const std::string transform = obj.value("transform", std::string("identity"));
            if (transform == "square") {
                d.squared = true;
            }
            else if (transform != "identity") {
                throw InputError("unknown transform '" + transform + "'");
            }
            s.set(name, d);
        }
        catch (const nlohmann::json::exception& e) {
            throw InputError("prior '" + name + "': " + e.what());
        }
        catch (const InputError& e) {
            throw InputError("prior '" + name + "': " + e.what());
        }
    }
    for (auto name : ParameterVector::kNames) {
        s.at(std::string(name));
    }
    s.at("R_t");
    s.at("IFR");
    return s;
}

PriorSet PriorSet::load(const std::string& path)
{
    std::ifstream in(path);
    if (!in) {
        throw InputError("cannot open prior file '" + path + "'");
    }
    nlohmann::json j;
    try {
        in >> j;
    }
    catch (const nlohmann::json::exception& e) {
        throw InputError("prior file '" + path + "' is not valid JSON: " + e.what());
    }
    return from_json(j);
}

nlohmann::json PriorSet::to_json() const
{
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [name, d] : priors_) {
        nlohmann::json o;
        o["kind"] = kind_name(d.kind);
        if (d.kind == PriorKind::PointMass) {
            o["params"] = {d.a};
        }
        else if (d.kind == PriorKind::Uniform) {
            o["params"] = nlohmann::json::array();
        }
        else {
            o["params"] = {d.a, d.b};
        }
        o["lower"] = d.lower;
        o["upper"] = d.upper;
        if (d.squared) {
            o["transform"] = "square";
        }
        j[name] = o;
    }
    return j;
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream)
{
    std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    std::array<std::uint32_t, 2> out{};
    seq.generate(out.begin(), out.end());
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

int DynamicSchedule::window_of(int day) const
{
    if (day < 0 || r_t.empty()) {
        throw InputError("day " + std::to_string(day) + " is not covered by the dynamic schedule");
    }
    return std::min(day / window_days, num_windows() - 1);
}

int windows_for(int num_days, int window_days)
{
    return std::max(1, (num_days + window_days - 1) / window_days);
}

PriorDraw prior_sample(const PriorSet& priors, int num_windows, std::uint64_t seed, int window_days)
{
    Rng rng(seed);
    std::array<double, ParameterVector::kNumInferred> v{};
    for (int i = 0; i < ParameterVector::kNumInferred; ++i) {
        v[i] = priors.at(std::string(ParameterVector::kNames[i])).sample(rng);
    }
    PriorDraw out{ParameterVector::from_inferred(v), {}};
    out.schedule.window_days = window_days;
    for (int w = 0; w < num_windows; ++w) {
        out.schedule.r_t.push_back(priors.at("R_t").sample(rng));
        out.schedule.ifr.push_back(priors.at("IFR").sample(rng));
    }
    return out;
}

double prior_logpdf(const PriorSet& priors, const ParameterVector& p, const DynamicSchedule& s)
{
    const auto v = p.inferred();
    double lp = 0.0;
    for (int i = 0; i < ParameterVector::kNumInferred; ++i) {
        lp += priors.at(std::string(ParameterVector::kNames[i])).logpdf(v[i]);
        if (!std::isfinite(lp)) {
            return kNegInf;
        }
    }
    const auto& r_prior = priors.at("R_t");
    const auto& ifr_prior = priors.at("IFR");
    for (int w = 0; w < s.num_windows(); ++w) {
        lp += r_prior.logpdf(s.r_t[w]) + ifr_prior.logpdf(s.ifr[w]);
        if (!std::isfinite(lp)) {
            return kNegInf;
        }
    }
    return lp;
}

PriorDescriptor fit_scaled_beta(const std::vector<double>& samples)
{
    if (samples.empty()) {
        throw InputError("cannot fit a distribution to zero samples");
    }
    const auto [mn_it, mx_it] = std::minmax_element(samples.begin(), samples.end());
    const double mn = *mn_it;
    const double mx = *mx_it;
    if (mx == mn) {
        return PriorDescriptor::point_mass(mn);
    }
    const double pad = 0.01 * (mx - mn);
    const double lower = std::max(0.0, mn - pad);
    const double upper = mx + pad;
    const double n = static_cast<double>(samples.size());
    const double mean = std::accumulate(samples.begin(), samples.end(), 0.0) / n;
    double var = 0.0;
    for (double x : samples) {
        var += (x - mean) * (x - mean);
    }
    var /= n - 1.0;
    const double width = upper - lower;
    const double m = (mean - lower) / width;
    const double v = var / (width * width);
    const double common = m * (1.0 - m) / v - 1.0;
    if (!(common > 0.0)) {
        throw NumericalError("moment fit produced nonpositive beta shapes", 0);
    }
    return PriorDescriptor::scaled_beta(m * common, (1.0 - m) * common, lower, upper);
}

PriorDescriptor derive_hosp_prior(const PriorSet& priors, int n_samples, std::uint64_t seed)
{
    if (n_samples <= 0) {
        throw InputError("derive_hosp_prior needs a positive sample count");
    }
    Rng rng(seed);
    const auto& ifr_p = priors.at("IFR");
    const auto& e2i_p = priors.at("E2I");
    const auto& ic_p = priors.at("IC_HOSP");
    const auto& ihw_p = priors.at("I_HW");
    const double hosp_mort = kHospMort;
    const double sir_mort = kSirMort;

    std::vector<double> hosp;
    hosp.reserve(n_samples);
    long rejected = 0;
    while (static_cast<int>(hosp.size()) < n_samples) {
        const double ifr = ifr_p.sample(rng);
        const double e2i = e2i_p.sample(rng);
        const double ic = ic_p.sample(rng);
        const double ihw = ihw_p.sample(rng);
        // IFR / E2I = (1 + [I:HW]) (HOSP_MORT + IC_HOSP) SIR_MORT HOSP / (1 - x)
        const double x = ic * (1.0 - sir_mort);
        const double denom = (1.0 + ihw) * (hosp_mort + ic) * sir_mort;
        if (!(denom > 0.0) || !(e2i > 0.0) || !(x < 1.0)) {
            if (++rejected > 100L * n_samples) {
                throw InputError("HOSP derivation rejects almost every draw");
            }
            continue;
        }
        hosp.push_back(ifr / e2i * (1.0 - x) / denom);
    }
    return fit_scaled_beta(hosp);
}

} // namespace covmon
