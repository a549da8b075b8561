#include "covmon/bootstrap.hpp"
#include "covmon/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>

namespace covmon {

namespace {

double draw_binomial(Rng& rng, double n, double p)
{
    if (n <= 0.0 || p <= 0.0) {
        return 0.0;
    }
    if (p >= 1.0) {
        return n;
    }
    std::binomial_distribution<long long> dist(static_cast<long long>(std::llround(n)), p);
    return static_cast<double>(dist(rng));
}

double draw_poisson(Rng& rng, double mean)
{
    if (!(mean > 0.0)) {
        return 0.0;
    }
    std::poisson_distribution<long long> dist(mean);
    return static_cast<double>(dist(rng));
}

double median(std::vector<double> v)
{
    if (v.empty()) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Interval quantile_interval(const Eigen::VectorXd& col, double lo, double hi)
{
    std::vector<std::pair<double, double>> vw;
    vw.reserve(col.size());
    for (Eigen::Index i = 0; i < col.size(); ++i) {
        vw.emplace_back(col(i), 1.0);
    }
    return {weighted_quantile(vw, lo), weighted_quantile(vw, hi)};
}

Eigen::MatrixXd stack(const std::vector<Eigen::MatrixXd>& parts)
{
    Eigen::Index rows = 0;
    for (const auto& p : parts) {
        rows += p.rows();
    }
    Eigen::MatrixXd out(rows, parts.empty() ? 0 : parts[0].cols());
    Eigen::Index r = 0;
    for (const auto& p : parts) {
        out.middleRows(r, p.rows()) = p;
        r += p.rows();
    }
    return out;
}

Eigen::MatrixXd pooled_summary(const std::vector<PosteriorChain>& chains)
{
    std::vector<Eigen::MatrixXd> parts;
    for (const auto& c : chains) {
        parts.push_back(summary_dimensions(c));
    }
    return stack(parts);
}

} // namespace

SyntheticDataset simulate_synthetic(const ParameterVector& p, const std::vector<double>& daily_beta,
                                    const std::vector<double>& ifr, int T, const StateVector& init,
                                    std::uint64_t seed, const SimulationOptions& opt)
{
    p.validate();
    if (T < 0) {
        throw InputError("simulation length must be nonnegative");
    }
    if (T > 1 && (daily_beta.empty() || ifr.empty())) {
        throw InputError("simulation needs beta and IFR values");
    }
    if ((init.array() < 0.0).any()) {
        throw InputError("initial state must be nonnegative");
    }
    SyntheticDataset ds;
    ds.params = p;
    ds.seed = seed;
    ds.series.region_id = opt.region_id;
    ds.series.population = opt.population;
    Rng rng(seed);
    std::normal_distribution<double> normal;

    auto exit_prob = [&](double rate) {
        return opt.scheme == ExitScheme::Exponential ? 1.0 - std::exp(-rate) : std::clamp(rate, 0.0, 1.0);
    };
    const double decay = std::exp(-p.rho());
    StateVector x = init;
    for (int i = 0; i < kStateDim; ++i) {
        if (i != kPhi) {
            x(i) = std::round(x(i));
        }
    }
    std::array<double, 3> deaths{0.0, 0.0, 0.0};
    double exposed = 0.0;
    double last_dead = 0.0;

    for (int k = 0; k < T; ++k) {
        ds.states.push_back(x);
        ds.deaths_by_source.push_back(deaths);
        ds.exposures.push_back(exposed);
        ObsVector y(x(kH), x(kW), x(kD));
        if (opt.observation_noise) {
            const ObsMatrix R = measurement_noise(x, opt.noise);
            for (int i = 0; i < kObsDim; ++i) {
                y(i) = std::max(0.0, std::round(y(i) + std::sqrt(R(i, i)) * normal(rng)));
            }
        }
        // reported cumulative deaths never decrease
        y(2) = std::max(y(2), last_dead);
        last_dead = y(2);
        ds.series.push_back(opt.start + k, y(0), y(1), y(2));
        if (k + 1 == T) {
            break;
        }

        const double beta = daily_beta[std::min<std::size_t>(k, daily_beta.size() - 1)];
        const double f_ifr = ifr[std::min<std::size_t>(k, ifr.size() - 1)];
        const FractionSet f = derive_fractions(p, f_ifr);
        ds.beta.push_back(beta);
        ds.ifr.push_back(f_ifr);

        const double e_out = draw_binomial(rng, x(kE), exit_prob(p.sigma));
        const double e_to_i = draw_binomial(rng, e_out, f.f0);
        const double a_out = draw_binomial(rng, x(kA), exit_prob(p.gamma_a()));
        const double a_to_i = draw_binomial(rng, a_out, f.f1);
        const double i_out = draw_binomial(rng, x(kI), exit_prob(p.gamma_i));
        const double i_to_h = draw_binomial(rng, i_out, f.f2);
        const double i_to_d = f.f2 < 1.0 ? draw_binomial(rng, i_out - i_to_h, f.f2d / (1.0 - f.f2)) : 0.0;
        const double h_out = draw_binomial(rng, x(kH), exit_prob(p.gamma_h));
        const double h_to_w = draw_binomial(rng, h_out, f.f3);
        const double h_to_d = f.f3 < 1.0 ? draw_binomial(rng, h_out - h_to_w, f.f3d / (1.0 - f.f3)) : 0.0;
        const double w_out = draw_binomial(rng, x(kW), exit_prob(p.gamma_w));
        const double w_to_d = draw_binomial(rng, w_out, f.f4);
        const double infections = draw_poisson(rng, beta * x(kPhi));

        StateVector next = x;
        next(kPhi) = decay * x(kPhi)
                     + (1.0 - decay) * (x(kI) + p.theta_a_star * x(kA) + p.theta_e_star * x(kE));
        next(kE) += infections - e_out;
        next(kA) += (e_out - e_to_i) - a_out;
        next(kI) += e_to_i + a_to_i - i_out;
        next(kH) += i_to_h + (w_out - w_to_d) - h_out;
        next(kW) += h_to_w - w_out;
        next(kD) += i_to_d + h_to_d + w_to_d;
        next(kR) += (a_out - a_to_i) + (i_out - i_to_h - i_to_d) + (h_out - h_to_w - h_to_d);
        deaths[0] += i_to_d;
        deaths[1] += h_to_d;
        deaths[2] += w_to_d;
        exposed += infections;
        x = next;
    }
    return ds;
}

void schedule_to_daily(const ParameterVector& p, const DynamicSchedule& dyn, int transitions,
                       std::vector<double>& beta, std::vector<double>& ifr, int first_day)
{
    beta.clear();
    ifr.clear();
    for (int k = 0; k < transitions; ++k) {
        const int w = dyn.window_of(first_day + k);
        const FractionSet f = derive_fractions(p, dyn.ifr[w]);
        beta.push_back(beta_from_r0(p, f, dyn.r_t[w]));
        ifr.push_back(dyn.ifr[w]);
    }
}

nlohmann::json SyntheticDataset::truth_json() const
{
    nlohmann::json params_json;
    const auto v = params.inferred();
    for (int i = 0; i < ParameterVector::kNumInferred; ++i) {
        params_json[std::string(ParameterVector::kNames[i])] = v[i];
    }
    nlohmann::json deaths = nlohmann::json::array();
    if (!deaths_by_source.empty()) {
        const auto& d = deaths_by_source.back();
        deaths = {{"I", d[0]}, {"H", d[1]}, {"W", d[2]}};
    }
    return {{"region", series.region_id}, {"seed", seed},         {"parameters", params_json},
            {"beta", beta},               {"ifr", ifr},           {"deaths_by_source", deaths},
            {"population", series.population}};
}

void write_synthetic(const std::string& csv_path, const std::string& json_path, const SyntheticDataset& ds)
{
    write_regional_csv(csv_path, {ds.series}, {std::vector<std::string>(ds.series.size(), "synthetic")});
    std::ofstream out(json_path);
    if (!out) {
        throw InputError("cannot write '" + json_path + "'");
    }
    out << ds.truth_json().dump(2) << '\n';
}

bool point_robustness(double bias, const Interval& cri68)
{
    if (!(cri68.hi >= cri68.lo)) {
        throw InputError("empty credible interval");
    }
    return std::abs(bias) < 0.5 * cri68.diam();
}

bool interval_overlap_check(const Interval& a, const Interval& b, double alpha)
{
    if (!(a.hi >= a.lo) || !(b.hi >= b.lo)) {
        throw InputError("empty interval in overlap check");
    }
    if (a.diam() == 0.0 || b.diam() == 0.0) {
        return a.lo == b.lo && a.hi == b.hi;
    }
    const double inter = std::max(0.0, std::min(a.hi, b.hi) - std::max(a.lo, b.lo));
    const double hull = std::max(a.hi, b.hi) - std::min(a.lo, b.lo);
    return inter >= alpha * hull;
}

BootstrapStats bootstrap_stats(const Eigen::MatrixXd& reference, const std::vector<double>& bias)
{
    const auto K = reference.cols();
    if (static_cast<Eigen::Index>(bias.size()) != K) {
        throw InputError("one bias value per dimension required");
    }
    if (reference.rows() < 2) {
        throw InputError("reference posterior needs at least two samples");
    }
    BootstrapStats s;
    for (Eigen::Index i = 0; i < K; ++i) {
        const double mu = reference.col(i).mean();
        if (mu == 0.0) {
            throw InputError("zero posterior mean in dimension " + std::to_string(i));
        }
        const double var = (reference.col(i).array() - mu).square().sum() / static_cast<double>(reference.rows() - 1);
        const double sd = std::sqrt(var);
        const double mag = std::abs(mu);
        s.mean.push_back(mu);
        s.sd.push_back(sd);
        s.bias.push_back(bias[i]);
        s.cov.push_back(sd / mag);
        s.cob.push_back(std::abs(bias[i]) / mag);
        s.nrmse.push_back(std::sqrt(var + bias[i] * bias[i]) / mag);
    }
    s.median_cov = median(s.cov);
    s.median_cob = median(s.cob);
    s.median_nrmse = median(s.nrmse);
    return s;
}

BiasReport bias_estimate(const Eigen::MatrixXd& reference, const std::vector<Eigen::MatrixXd>& boot,
                         const std::vector<std::string>& names, double overlap_alpha)
{
    if (boot.empty()) {
        throw InputError("bias estimate needs at least one bootstrap replicate");
    }
    const auto K = reference.cols();
    for (const auto& b : boot) {
        if (b.cols() != K) {
            throw InputError("bootstrap posterior dimension differs from the reference");
        }
        if (b.rows() == 0) {
            throw InputError("empty bootstrap posterior");
        }
    }
    BiasReport rep;
    rep.names = names;
    for (Eigen::Index i = 0; i < K; ++i) {
        const double ref_mean = reference.col(i).mean();
        const Interval ref68 = quantile_interval(reference.col(i), 0.16, 0.84);
        double sum = 0.0, sum_sq = 0.0;
        bool overlap = true;
        for (const auto& b : boot) {
            const double bi = b.col(i).mean() - ref_mean;
            sum += bi;
            sum_sq += bi * bi;
            overlap = overlap && interval_overlap_check(ref68, quantile_interval(b.col(i), 0.16, 0.84), overlap_alpha);
        }
        const double n = static_cast<double>(boot.size());
        rep.signed_bias.push_back(sum / n);
        rep.bias.push_back(std::sqrt(sum_sq / n));
        rep.variance.push_back((reference.col(i).array() - ref_mean).square().sum()
                               / std::max<double>(1.0, static_cast<double>(reference.rows() - 1)));
        rep.point_robust.push_back(point_robustness(rep.bias.back(), ref68));
        rep.interval_overlap.push_back(overlap);
    }
    rep.stats = bootstrap_stats(reference, rep.bias);
    return rep;
}

BiasReport bias_estimate(const std::vector<PosteriorChain>& reference,
                         const std::vector<std::vector<PosteriorChain>>& boot, int n_boot, double overlap_alpha)
{
    if (reference.empty()) {
        throw InputError("bias estimate needs reference chains");
    }
    if (n_boot < 1 || static_cast<int>(boot.size()) < n_boot) {
        throw InputError("fewer bootstrap replicates than n_boot");
    }
    for (const auto& rep : boot) {
        for (const auto& c : rep) {
            if (c.dim() != reference[0].dim()) {
                throw InputError("bootstrap chain dimension differs from the reference");
            }
        }
    }
    std::vector<Eigen::MatrixXd> parts;
    for (int i = 0; i < n_boot; ++i) {
        parts.push_back(pooled_summary(boot[i]));
    }
    return bias_estimate(pooled_summary(reference), parts, summary_dimension_names(), overlap_alpha);
}

nlohmann::json BiasReport::to_json() const
{
    nlohmann::json dims = nlohmann::json::array();
    for (std::size_t i = 0; i < names.size(); ++i) {
        dims.push_back({{"name", names[i]},
                        {"mean", stats.mean[i]},
                        {"sd", stats.sd[i]},
                        {"signed_bias", signed_bias[i]},
                        {"bias", bias[i]},
                        {"CoV", stats.cov[i]},
                        {"CoB", stats.cob[i]},
                        {"NRMSE", stats.nrmse[i]},
                        {"point_robust", static_cast<bool>(point_robust[i])},
                        {"interval_overlap", static_cast<bool>(interval_overlap[i])}});
    }
    return {{"dimensions", dims},
            {"median_CoV", stats.median_cov},
            {"median_CoB", stats.median_cob},
            {"median_NRMSE", stats.median_nrmse}};
}

PriorDraw posterior_mean(const std::vector<PosteriorChain>& chains)
{
    if (chains.empty() || chains[0].size() == 0) {
        throw InputError("posterior mean of no samples");
    }
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(chains[0].dim());
    double n = 0.0;
    for (const auto& c : chains) {
        sum += c.samples.colwise().sum().transpose();
        n += c.size();
    }
    return chains[0].layout().unpack(sum / n);
}

BootstrapRun run_bootstrap(const PriorSet& priors, const std::vector<PosteriorChain>& reference,
                           const ObservationSeries& series, const AmConfig& am, const NoiseConfig& noise,
                           int n_boot, std::uint64_t seed, const SimulationOptions& sim)
{
    if (n_boot < 1) {
        throw InputError("n_boot must be at least one");
    }
    BootstrapRun run;
    run.truth = posterior_mean(reference);
    const FilterRun filt = filter_series(run.truth.params, run.truth.schedule, series, noise);
    if (filt.first_day < 0) {
        throw InputError("series has no complete day to start the bootstrap from");
    }
    StateVector init = filt.states.front().mean.cwiseMax(0.0);
    const int T = series.size() - filt.first_day;
    std::vector<double> beta, ifr;
    schedule_to_daily(run.truth.params, run.truth.schedule, std::max(0, T - 1), beta, ifr, filt.first_day);
    const ParameterLayout layout(run.truth.schedule.num_windows(), run.truth.schedule.window_days);
    const Eigen::VectorXd start = layout.pack(run.truth.params, run.truth.schedule);

    AmConfig cfg = am;
    cfg.window_days = run.truth.schedule.window_days;
    for (int b = 0; b < n_boot; ++b) {
        SimulationOptions opt = sim;
        opt.region_id = series.region_id;
        opt.population = series.population;
        opt.start = series.dates[filt.first_day];
        SyntheticDataset ds
            = simulate_synthetic(run.truth.params, beta, ifr, T, init, derive_seed(seed, 2 * b), opt);
        // keep the window alignment of the original series
        ObservationSeries aligned = series.slice(0, filt.first_day);
        for (int k = 0; k < aligned.size(); ++k) {
            aligned.hospital[k] = aligned.icu[k] = aligned.dead[k] = std::numeric_limits<double>::quiet_NaN();
        }
        for (int k = 0; k < ds.series.size(); ++k) {
            aligned.push_back(ds.series.dates[k], ds.series.hospital[k], ds.series.icu[k], ds.series.dead[k]);
        }
        ds.series = aligned;
        run.chains.push_back(am_run(priors, ds.series, cfg, noise, derive_seed(seed, 2 * b + 1), {start}));
        run.datasets.push_back(std::move(ds));
    }
    run.report = bias_estimate(reference, run.chains, n_boot);
    return run;
}

} // namespace covmon
