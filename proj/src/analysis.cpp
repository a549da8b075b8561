#include "covmon/analysis.hpp"
#include "covmon/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>

namespace covmon {

namespace {

std::vector<std::pair<double, double>> unit_weighted(const Eigen::VectorXd& v)
{
    std::vector<std::pair<double, double>> out;
    out.reserve(v.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        out.emplace_back(v(i), 1.0);
    }
    return out;
}

double normal_cdf(double x, double m, double s)
{
    if (s <= 0.0) {
        return x < m ? 0.0 : 1.0;
    }
    return 0.5 * std::erfc(-(x - m) / (s * std::sqrt(2.0)));
}

Eigen::MatrixXd stack_rows(const std::vector<PosteriorChain>& chains, int first_col, int ncols)
{
    Eigen::Index rows = 0;
    for (const auto& c : chains) {
        rows += c.size();
    }
    Eigen::MatrixXd out(rows, ncols);
    Eigen::Index r = 0;
    for (const auto& c : chains) {
        out.middleRows(r, c.size()) = c.samples.middleCols(first_col, ncols);
        r += c.size();
    }
    return out;
}

/// Columns of `ifr` averaged over window pairs.
Eigen::MatrixXd pair_average(const Eigen::MatrixXd& ifr, std::vector<std::pair<int, int>>& groups)
{
    groups.clear();
    for (int w = 0; w < ifr.cols(); w += 2) {
        groups.emplace_back(w, std::min<int>(w + 1, static_cast<int>(ifr.cols()) - 1));
    }
    Eigen::MatrixXd out(ifr.rows(), static_cast<Eigen::Index>(groups.size()));
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const auto [a, b] = groups[g];
        out.col(g) = ifr.middleCols(a, b - a + 1).rowwise().mean();
    }
    return out;
}

} // namespace

Band Band::from_samples(const Eigen::MatrixXd& values)
{
    Band b;
    if (values.rows() == 0) {
        return b;
    }
    for (Eigen::Index j = 0; j < values.cols(); ++j) {
        const auto vw = unit_weighted(values.col(j));
        b.mean.push_back(values.col(j).mean());
        b.lo95.push_back(weighted_quantile(vw, 0.025));
        b.lo68.push_back(weighted_quantile(vw, 0.16));
        b.hi68.push_back(weighted_quantile(vw, 0.84));
        b.hi95.push_back(weighted_quantile(vw, 0.975));
    }
    return b;
}

std::vector<PriorDraw> thin_posterior(const std::vector<PosteriorChain>& chains, int n)
{
    long total = 0;
    for (const auto& c : chains) {
        total += c.size();
    }
    if (total == 0 || n < 1) {
        throw InputError("no posterior samples to thin");
    }
    std::vector<PriorDraw> out;
    const int m = static_cast<int>(std::min<long>(n, total));
    for (int i = 0; i < m; ++i) {
        long idx = static_cast<long>((static_cast<double>(i) + 0.5) * static_cast<double>(total) / m);
        for (const auto& c : chains) {
            if (idx < c.size()) {
                out.push_back(c.point(static_cast<int>(idx)));
                break;
            }
            idx -= c.size();
        }
    }
    return out;
}

HiddenStateTrajectory hidden_states(const std::vector<PriorDraw>& samples, const ObservationSeries& series,
                                    const NoiseConfig& noise, std::optional<std::pair<Date, double>> anchor)
{
    if (samples.empty()) {
        throw InputError("hidden states need posterior samples");
    }
    HiddenStateTrajectory out;
    const int first = first_complete_day(series);
    if (first < 0) {
        return out;
    }
    const int n = series.size() - first;
    for (int k = 0; k < n; ++k) {
        out.dates.push_back(series.dates[first + k]);
    }
    int anchor_index = -1;
    if (anchor) {
        anchor_index = anchor->first - series.dates[first];
        if (anchor_index < 0 || anchor_index >= n) {
            throw InputError("recovered anchor " + anchor->first.to_string() + " lies outside the filtered period");
        }
        if (!(anchor->second >= 0.0 && anchor->second <= 1.0)) {
            throw InputError("recovered anchor fraction must lie in [0, 1]");
        }
    }
    const double pop = series.population;
    const bool has_pop = pop > 0.0;
    if (anchor && !has_pop) {
        throw InputError("anchoring the recovered fraction needs the population size");
    }
    const auto S = static_cast<Eigen::Index>(samples.size());
    std::array<Eigen::MatrixXd, kStateDim> values;
    for (auto& v : values) {
        v.resize(S, n);
    }
    Eigen::MatrixXd recovered(S, n), incidence(S, n);
    for (Eigen::Index s = 0; s < S; ++s) {
        const auto& draw = samples[s];
        const FilterRun run = filter_series(draw.params, draw.schedule, series, noise);
        for (int k = 0; k < n; ++k) {
            const StateVector& x = run.states[k].mean;
            for (int i = 0; i < kStateDim; ++i) {
                values[i](s, k) = x(i);
            }
            incidence(s, k) = draw.params.sigma * draw.params.e2i * x(kE);
        }
        double offset = 0.0;
        if (anchor) {
            offset = anchor->second * pop - values[kR](s, anchor_index);
        }
        for (int k = 0; k < n; ++k) {
            values[kR](s, k) += offset;
            recovered(s, k) = has_pop ? std::clamp(values[kR](s, k) / pop, 0.0, 1.0) : 0.0;
        }
    }
    for (int i = 0; i < kStateDim; ++i) {
        out.states[i] = Band::from_samples(values[i]);
    }
    out.recovered_fraction = Band::from_samples(recovered);
    out.incidence = Band::from_samples(incidence);
    return out;
}

DeathDecomposition death_decomposition(const std::vector<PriorDraw>& samples, const ObservationSeries& series,
                                       const NoiseConfig& noise)
{
    const auto S = static_cast<Eigen::Index>(samples.size());
    DeathDecomposition out;
    out.totals = Eigen::MatrixXd::Zero(S, 3);
    out.initial_dead = Eigen::VectorXd::Zero(S);
    out.final_dead = Eigen::VectorXd::Zero(S);
    for (Eigen::Index s = 0; s < S; ++s) {
        const auto& draw = samples[s];
        const FilterRun run = filter_series(draw.params, draw.schedule, series, noise);
        if (run.first_day < 0) {
            continue;
        }
        const auto& p = draw.params;
        // each day's filtered D increment is split over the channels in proportion to their
        // predicted inflows, so the update's correction of D is attributed as well
        std::array<double, 3> share{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
        for (std::size_t k = 0; k + 1 < run.states.size(); ++k) {
            const StateVector& x = run.states[k].mean;
            const int w = draw.schedule.window_of(run.first_day + static_cast<int>(k));
            const FractionSet f = derive_fractions(p, draw.schedule.ifr[w]);
            const std::array<double, 3> inflow{p.gamma_i * f.f2d * std::max(0.0, x(kI)),
                                               p.gamma_h * f.f3d * std::max(0.0, x(kH)),
                                               p.gamma_w * f.f4 * std::max(0.0, x(kW))};
            const double total = inflow[0] + inflow[1] + inflow[2];
            if (total > 0.0) {
                for (int j = 0; j < 3; ++j) {
                    share[j] = inflow[j] / total;
                }
            }
            const double increment = run.states[k + 1].mean(kD) - x(kD);
            for (int j = 0; j < 3; ++j) {
                out.totals(s, j) += share[j] * increment;
            }
        }
        out.initial_dead(s) = run.states.front().mean(kD);
        out.final_dead(s) = run.states.back().mean(kD);
    }
    if (S > 0) {
        for (int j = 0; j < 3; ++j) {
            const auto vw = unit_weighted(out.totals.col(j));
            out.mean[j] = out.totals.col(j).mean();
            out.lo95[j] = weighted_quantile(vw, 0.025);
            out.hi95[j] = weighted_quantile(vw, 0.975);
        }
    }
    return out;
}

std::vector<IfrWindowSummary> ifr_window_summary(const std::vector<PosteriorChain>& chains,
                                                 const std::vector<std::vector<PosteriorChain>>& boot,
                                                 double overlap_alpha)
{
    if (chains.empty()) {
        throw InputError("IFR summary needs posterior chains");
    }
    const int W = chains[0].num_windows;
    const int k = ParameterLayout::kStatic;
    std::vector<std::pair<int, int>> groups;
    const Eigen::MatrixXd ref = pair_average(stack_rows(chains, k + W, W), groups);
    std::vector<Eigen::MatrixXd> reps;
    for (const auto& b : boot) {
        std::vector<std::pair<int, int>> g;
        reps.push_back(pair_average(stack_rows(b, k + W, W), g));
    }
    std::vector<IfrWindowSummary> out;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        IfrWindowSummary s;
        s.first_window = groups[g].first;
        s.last_window = groups[g].second;
        const auto vw = unit_weighted(ref.col(g));
        s.mean = ref.col(g).mean();
        s.lo68 = weighted_quantile(vw, 0.16);
        s.hi68 = weighted_quantile(vw, 0.84);
        if (!reps.empty()) {
            double sq = 0.0;
            bool overlap = true;
            for (const auto& r : reps) {
                const double b = r.col(g).mean() - s.mean;
                sq += b * b;
                const auto rw = unit_weighted(r.col(g));
                overlap = overlap
                          && interval_overlap_check({s.lo68, s.hi68},
                                                    {weighted_quantile(rw, 0.16), weighted_quantile(rw, 0.84)},
                                                    overlap_alpha);
            }
            s.point_robust = point_robustness(std::sqrt(sq / reps.size()), {s.lo68, s.hi68});
            s.interval_overlap = overlap;
        }
        out.push_back(s);
    }
    return out;
}

Eigen::MatrixXd cfr_samples(const std::vector<PriorDraw>& samples)
{
    Eigen::MatrixXd out(static_cast<Eigen::Index>(samples.size()), 3);
    for (std::size_t s = 0; s < samples.size(); ++s) {
        const auto& ifr = samples[s].schedule.ifr;
        double mean_ifr = 0.0;
        for (double v : ifr) {
            mean_ifr += v;
        }
        mean_ifr = ifr.empty() ? 0.0 : mean_ifr / ifr.size();
        const FractionSet f = derive_fractions(samples[s].params, mean_ifr);
        out(s, 0) = cfr(f, kI);
        out(s, 1) = cfr(f, kH);
        out(s, 2) = cfr(f, kW);
    }
    return out;
}

double energy_score(const std::vector<ObsVector>& ensemble, const ObsVector& y)
{
    if (ensemble.empty()) {
        throw InputError("energy score of an empty ensemble");
    }
    const double n = static_cast<double>(ensemble.size());
    double to_obs = 0.0, spread = 0.0;
    for (std::size_t i = 0; i < ensemble.size(); ++i) {
        to_obs += (ensemble[i] - y).norm();
        for (std::size_t j = i + 1; j < ensemble.size(); ++j) {
            spread += 2.0 * (ensemble[i] - ensemble[j]).norm();
        }
    }
    return to_obs / n - 0.5 * spread / (n * n);
}

ForecastScore forecast_scores(const std::vector<ForecastPoint>& predictions, const ObservationSeries& actuals)
{
    std::map<Date, int> index;
    for (int k = 0; k < actuals.size(); ++k) {
        index[actuals.dates[k]] = k;
    }
    ForecastScore sc;
    ObsVector n = ObsVector::Zero(), in68 = ObsVector::Zero(), in95 = ObsVector::Zero();
    ObsVector sq = ObsVector::Zero(), level = ObsVector::Zero();
    double es_sum = 0.0;
    int es_n = 0;
    for (const auto& pt : predictions) {
        auto it = index.find(pt.date);
        if (it == index.end()) {
            continue;
        }
        ++sc.n_points;
        const ObsVector y = actuals.observation(it->second);
        for (int i = 0; i < kObsDim; ++i) {
            if (!std::isfinite(y(i))) {
                continue;
            }
            n(i) += 1.0;
            in68(i) += (y(i) >= pt.lo68(i) && y(i) <= pt.hi68(i)) ? 1.0 : 0.0;
            in95(i) += (y(i) >= pt.lo95(i) && y(i) <= pt.hi95(i)) ? 1.0 : 0.0;
            sq(i) += (pt.mean(i) - y(i)) * (pt.mean(i) - y(i));
            level(i) += y(i);
        }
        if (!pt.ensemble.empty() && y.allFinite()) {
            es_sum += energy_score(pt.ensemble, y);
            ++es_n;
        }
    }
    if (sc.n_points == 0) {
        throw InputError("forecasts and actuals share no dates");
    }
    for (int i = 0; i < kObsDim; ++i) {
        if (n(i) > 0.0) {
            sc.coverage68(i) = in68(i) / n(i);
            sc.coverage95(i) = in95(i) / n(i);
            const double mean_level = level(i) / n(i);
            sc.nrmse(i) = mean_level != 0.0 ? std::sqrt(sq(i) / n(i)) / mean_level
                                             : std::numeric_limits<double>::quiet_NaN();
        }
    }
    const double total = n.sum();
    sc.coverage68_all = total > 0.0 ? in68.sum() / total : 0.0;
    sc.coverage95_all = total > 0.0 ? in95.sum() / total : 0.0;
    sc.energy_score = es_n > 0 ? es_sum / es_n : std::numeric_limits<double>::quiet_NaN();
    return sc;
}

double normal_mixture_quantile(const std::vector<double>& means, const std::vector<double>& sds, double q)
{
    if (means.empty() || means.size() != sds.size()) {
        throw InputError("mixture quantile needs matching means and standard deviations");
    }
    double lo = means[0], hi = means[0];
    for (std::size_t i = 0; i < means.size(); ++i) {
        lo = std::min(lo, means[i] - 10.0 * sds[i]);
        hi = std::max(hi, means[i] + 10.0 * sds[i]);
    }
    auto cdf = [&](double x) {
        double acc = 0.0;
        for (std::size_t i = 0; i < means.size(); ++i) {
            acc += normal_cdf(x, means[i], sds[i]);
        }
        return acc / static_cast<double>(means.size());
    };
    for (int it = 0; it < 100 && hi - lo > 1e-10 * std::max(1.0, std::abs(hi)); ++it) {
        const double mid = 0.5 * (lo + hi);
        (cdf(mid) < q ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

std::vector<ForecastPoint> posterior_forecast(const std::vector<PriorDraw>& samples, const ObservationSeries& series,
                                              int origin, int horizon, const NoiseConfig& noise,
                                              std::uint64_t seed, int members_per_sample)
{
    if (samples.empty()) {
        throw InputError("forecast needs posterior samples");
    }
    if (origin < 0 || origin >= series.size()) {
        throw InputError("forecast origin outside the series");
    }
    if (horizon < 1) {
        throw InputError("forecast horizon must be at least one day");
    }
    const ObservationSeries past = series.slice(0, origin + 1);
    const std::size_t S = samples.size();
    // means/sds[h][i][s]
    std::vector<std::array<std::vector<double>, kObsDim>> means(horizon), sds(horizon);
    std::vector<ForecastPoint> out(horizon);
    Rng rng(seed);
    std::normal_distribution<double> normal;
    for (std::size_t s = 0; s < S; ++s) {
        const auto& draw = samples[s];
        const FilterRun run = filter_series(draw.params, draw.schedule, past, noise);
        if (run.first_day < 0) {
            throw InputError("no complete day before the forecast origin");
        }
        const auto Fw = window_matrices(draw.params, draw.schedule);
        std::vector<StateMatrix> Fs;
        for (int h = 0; h < horizon; ++h) {
            Fs.push_back(Fw[draw.schedule.window_of(origin + h)]);
        }
        const Prediction pred = predict_ahead(run.states.back(), Fs, horizon, noise);
        for (int h = 0; h < horizon; ++h) {
            for (int i = 0; i < kObsDim; ++i) {
                means[h][i].push_back(pred.mean[h](i));
                sds[h][i].push_back(std::sqrt(std::max(0.0, pred.cov[h](i, i))));
            }
            Eigen::LLT<ObsMatrix> llt(pred.cov[h]);
            const ObsMatrix L = llt.info() == Eigen::Success ? ObsMatrix(llt.matrixL())
                                                            : ObsMatrix(pred.cov[h].diagonal().cwiseMax(0.0).cwiseSqrt().asDiagonal());
            for (int m = 0; m < members_per_sample; ++m) {
                ObsVector z(normal(rng), normal(rng), normal(rng));
                out[h].ensemble.push_back(pred.mean[h] + L * z);
            }
        }
    }
    for (int h = 0; h < horizon; ++h) {
        auto& pt = out[h];
        pt.date = series.dates[origin] + (h + 1);
        for (int i = 0; i < kObsDim; ++i) {
            const auto& m = means[h][i];
            const auto& sd = sds[h][i];
            double mu = 0.0, second = 0.0;
            for (std::size_t s = 0; s < S; ++s) {
                mu += m[s];
                second += sd[s] * sd[s] + m[s] * m[s];
            }
            mu /= S;
            pt.mean(i) = mu;
            pt.sd(i) = std::sqrt(std::max(0.0, second / S - mu * mu));
            pt.lo95(i) = normal_mixture_quantile(m, sd, 0.025);
            pt.lo68(i) = normal_mixture_quantile(m, sd, 0.16);
            pt.hi68(i) = normal_mixture_quantile(m, sd, 0.84);
            pt.hi95(i) = normal_mixture_quantile(m, sd, 0.975);
        }
    }
    return out;
}

void write_predictive_csv(const std::string& path, const std::vector<ForecastPoint>& points)
{
    std::ofstream out(path);
    if (!out) {
        throw InputError("cannot write '" + path + "'");
    }
    out.precision(10);
    static const char* names[kObsDim] = {"H", "W", "D"};
    out << "date,compartment,mean,sd,lo68,hi68,lo95,hi95\n";
    for (const auto& pt : points) {
        for (int i = 0; i < kObsDim; ++i) {
            out << pt.date.to_string() << ',' << names[i] << ',' << pt.mean(i) << ',' << pt.sd(i) << ','
                << pt.lo68(i) << ',' << pt.hi68(i) << ',' << pt.lo95(i) << ',' << pt.hi95(i) << '\n';
        }
    }
}

void write_tidy_csv(const std::string& path, const std::vector<TidyRow>& rows)
{
    std::ofstream out(path);
    if (!out) {
        throw InputError("cannot write '" + path + "'");
    }
    out.precision(10);
    out << "date,quantity,statistic,value\n";
    for (const auto& r : rows) {
        out << r.date << ',' << r.quantity << ',' << r.statistic << ',' << r.value << '\n';
    }
}

namespace {

void append_band(std::vector<TidyRow>& rows, const std::vector<Date>& dates, const std::string& quantity,
                 const Band& b)
{
    for (int k = 0; k < b.size(); ++k) {
        const std::string d = dates[k].to_string();
        rows.push_back({d, quantity, "mean", b.mean[k]});
        rows.push_back({d, quantity, "lo95", b.lo95[k]});
        rows.push_back({d, quantity, "lo68", b.lo68[k]});
        rows.push_back({d, quantity, "hi68", b.hi68[k]});
        rows.push_back({d, quantity, "hi95", b.hi95[k]});
    }
}

} // namespace

std::vector<TidyRow> tidy(const HiddenStateTrajectory& h)
{
    std::vector<TidyRow> rows;
    for (int i = 0; i < kStateDim; ++i) {
        append_band(rows, h.dates, std::string(kCompartmentNames[i]), h.states[i]);
    }
    append_band(rows, h.dates, "recovered_fraction", h.recovered_fraction);
    append_band(rows, h.dates, "symptomatic_incidence", h.incidence);
    return rows;
}

std::vector<TidyRow> tidy(const std::vector<ForecastPoint>& points)
{
    static const char* names[kObsDim] = {"H", "W", "D"};
    std::vector<TidyRow> rows;
    for (const auto& pt : points) {
        const std::string d = pt.date.to_string();
        for (int i = 0; i < kObsDim; ++i) {
            const std::string q = std::string("forecast_") + names[i];
            rows.push_back({d, q, "mean", pt.mean(i)});
            rows.push_back({d, q, "sd", pt.sd(i)});
            rows.push_back({d, q, "lo95", pt.lo95(i)});
            rows.push_back({d, q, "lo68", pt.lo68(i)});
            rows.push_back({d, q, "hi68", pt.hi68(i)});
            rows.push_back({d, q, "hi95", pt.hi95(i)});
        }
    }
    return rows;
}

} // namespace covmon
