#include "covmon/sampler.hpp"
#include "covmon/errors.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

namespace covmon {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

} // namespace

double AmConfig::step_scale(int d) const
{
    return s > 0.0 ? s : 0.05 * std::pow(2.4, 2.0 / std::max(d, 1));
}

void AmConfig::validate() const
{
    if (!(c0_scale > 0.0) || !(epsilon_reg >= 0.0) || s < 0.0) {
        throw InputError("AM configuration: c0_scale must be positive, s and epsilon_reg nonnegative");
    }
    if (n_chains < 1 || n_samples < 1 || burn_in < 0 || thin < 1 || window_days < 1 || checkpoints < 0
        || init_draws < 1 || init_sweeps < 0 || init_grid < 1) {
        throw InputError("AM configuration: chain counts and lengths must be positive");
    }
}

nlohmann::json AmConfig::to_json() const
{
    return {{"c0_scale", c0_scale},   {"t0", t0},           {"s", s},
            {"epsilon_reg", epsilon_reg}, {"standardize", standardize}, {"n_chains", n_chains},
            {"n_samples", n_samples}, {"burn_in", burn_in}, {"thin", thin},
            {"window_days", window_days}, {"checkpoints", checkpoints},
            {"init_draws", init_draws}, {"init_sweeps", init_sweeps}, {"init_grid", init_grid}};
}

AmConfig AmConfig::from_json(const nlohmann::json& j)
{
    AmConfig c;
    const nlohmann::json known = c.to_json();
    for (const auto& [key, _] : j.items()) {
        if (!known.contains(key)) {
            throw InputError("unknown AM configuration key '" + key + "'");
        }
    }
    c.c0_scale = j.value("c0_scale", c.c0_scale);
    c.t0 = j.value("t0", c.t0);
    c.s = j.value("s", c.s);
    c.epsilon_reg = j.value("epsilon_reg", c.epsilon_reg);
    c.standardize = j.value("standardize", c.standardize);
    c.n_chains = j.value("n_chains", c.n_chains);
    c.n_samples = j.value("n_samples", c.n_samples);
    c.burn_in = j.value("burn_in", c.burn_in);
    c.thin = j.value("thin", c.thin);
    c.window_days = j.value("window_days", c.window_days);
    c.checkpoints = j.value("checkpoints", c.checkpoints);
    c.init_draws = j.value("init_draws", c.init_draws);
    c.init_sweeps = j.value("init_sweeps", c.init_sweeps);
    c.init_grid = j.value("init_grid", c.init_grid);
    c.validate();
    return c;
}

ParameterLayout::ParameterLayout(int num_windows, int window_days)
    : num_windows_(num_windows)
    , window_days_(window_days)
{
    if (num_windows < 0 || window_days < 1) {
        throw InputError("invalid parameter layout");
    }
}

std::vector<std::string> ParameterLayout::names() const
{
    std::vector<std::string> out;
    for (auto n : ParameterVector::kNames) {
        out.emplace_back(n);
    }
    for (int w = 0; w < num_windows_; ++w) {
        out.push_back("R_t[" + std::to_string(w) + "]");
    }
    for (int w = 0; w < num_windows_; ++w) {
        out.push_back("IFR[" + std::to_string(w) + "]");
    }
    return out;
}

Eigen::VectorXd ParameterLayout::pack(const ParameterVector& p, const DynamicSchedule& s) const
{
    if (s.num_windows() != num_windows_) {
        throw InputError("schedule has " + std::to_string(s.num_windows()) + " windows, layout expects "
                         + std::to_string(num_windows_));
    }
    Eigen::VectorXd theta(dim());
    const auto v = p.inferred();
    for (int i = 0; i < kStatic; ++i) {
        theta(i) = v[i];
    }
    for (int w = 0; w < num_windows_; ++w) {
        theta(kStatic + w) = s.r_t[w];
        theta(kStatic + num_windows_ + w) = s.ifr[w];
    }
    return theta;
}

PriorDraw ParameterLayout::unpack(const Eigen::VectorXd& theta) const
{
    if (theta.size() != dim()) {
        throw InputError("parameter vector has the wrong dimension");
    }
    std::array<double, kStatic> v{};
    for (int i = 0; i < kStatic; ++i) {
        v[i] = theta(i);
    }
    PriorDraw out{ParameterVector::from_inferred(v), {}};
    out.schedule.window_days = window_days_;
    out.schedule.r_t.resize(num_windows_);
    out.schedule.ifr.resize(num_windows_);
    for (int w = 0; w < num_windows_; ++w) {
        out.schedule.r_t[w] = theta(kStatic + w);
        out.schedule.ifr[w] = theta(kStatic + num_windows_ + w);
    }
    return out;
}

const PriorDescriptor& ParameterLayout::prior(const PriorSet& priors, int i) const
{
    if (i < kStatic) {
        return priors.at(std::string(ParameterVector::kNames[i]));
    }
    return priors.at(i < kStatic + num_windows_ ? "R_t" : "IFR");
}

double ParameterLayout::log_prior(const PriorSet& priors, const Eigen::VectorXd& theta) const
{
    double lp = 0.0;
    for (int i = 0; i < dim(); ++i) {
        lp += prior(priors, i).logpdf(theta(i));
        if (!std::isfinite(lp)) {
            return kNegInf;
        }
    }
    return lp;
}

bool ParameterLayout::in_support(const PriorSet& priors, const Eigen::VectorXd& theta) const
{
    for (int i = 0; i < dim(); ++i) {
        if (!prior(priors, i).in_support(theta(i))) {
            return false;
        }
    }
    return true;
}

double PosteriorChain::acceptance_rate() const
{
    return total_steps == 0 ? 0.0 : static_cast<double>(total_accepted) / static_cast<double>(total_steps);
}

PriorDraw PosteriorChain::point(int i) const
{
    return layout().unpack(samples.row(i).transpose());
}

PosteriorChain PosteriorChain::drop(int first) const
{
    first = std::clamp(first, 0, size());
    PosteriorChain out = *this;
    out.samples = samples.bottomRows(size() - first);
    out.log_posterior.assign(log_posterior.begin() + first, log_posterior.end());
    out.accepted.assign(accepted.begin() + first, accepted.end());
    return out;
}

std::vector<std::string> summary_dimension_names()
{
    std::vector<std::string> out;
    for (auto n : ParameterVector::kNames) {
        out.emplace_back(n);
    }
    out.emplace_back("R_t");
    out.emplace_back("IFR");
    return out;
}

Eigen::MatrixXd summary_dimensions(const PosteriorChain& chain)
{
    constexpr int k = ParameterLayout::kStatic;
    const int W = chain.num_windows;
    Eigen::MatrixXd out(chain.size(), k + 2);
    out.leftCols(k) = chain.samples.leftCols(k);
    if (W > 0) {
        out.col(k) = chain.samples.middleCols(k, W).rowwise().mean();
        out.col(k + 1) = chain.samples.middleCols(k + W, W).rowwise().mean();
    }
    else {
        out.rightCols(2).setZero();
    }
    return out;
}

PosteriorChain am_chain(const PriorSet& priors, const LogLikelihood& loglik, int num_windows, const AmConfig& cfg,
                        std::uint64_t seed, const std::optional<Eigen::VectorXd>& start)
{
    cfg.validate();
    const ParameterLayout layout(num_windows, cfg.window_days);
    const int d = layout.dim();
    Rng rng(seed);
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> unif;

    // dimensions with a point-mass prior stay fixed
    std::vector<int> active;
    Eigen::VectorXd scale(d);
    for (int i = 0; i < d; ++i) {
        const auto& pr = layout.prior(priors, i);
        const double width = pr.support_upper() - pr.support_lower();
        scale(i) = cfg.standardize ? width / std::sqrt(12.0) : 1.0;
        if (pr.kind != PriorKind::PointMass && width > 0.0) {
            active.push_back(i);
        }
    }
    const int da = static_cast<int>(active.size());

    PosteriorChain chain;
    chain.names = layout.names();
    chain.num_windows = num_windows;
    chain.window_days = cfg.window_days;
    chain.seed = seed;

    auto target = [&](const Eigen::VectorXd& theta) {
        const double lp = layout.log_prior(priors, theta);
        if (!std::isfinite(lp)) {
            return kNegInf;
        }
        const auto draw = layout.unpack(theta);
        try {
            const double ll = loglik(draw.params, draw.schedule);
            return std::isfinite(ll) ? lp + ll : kNegInf;
        }
        catch (const std::exception&) {
            ++chain.likelihood_failures;
            return kNegInf;
        }
    };

    Eigen::VectorXd x;
    double lp = kNegInf;
    if (start) {
        x = *start;
        if (x.size() != d || !layout.in_support(priors, x)) {
            throw InputError("warm start lies outside the prior support");
        }
        lp = target(x);
    }
    if (!start) {
        int finite = 0;
        for (int attempt = 0; finite < cfg.init_draws && attempt < 1000 + cfg.init_draws; ++attempt) {
            const auto draw = prior_sample(priors, num_windows, rng(), cfg.window_days);
            const Eigen::VectorXd cand = layout.pack(draw.params, draw.schedule);
            const double lp_c = target(cand);
            if (std::isfinite(lp_c)) {
                ++finite;
                if (lp_c > lp) {
                    x = cand;
                    lp = lp_c;
                }
            }
        }
        if (!std::isfinite(lp)) {
            throw NumericalError("no starting point with finite posterior density", 0);
        }
        for (int sweep = 0; sweep < cfg.init_sweeps; ++sweep) {
            for (int i : active) {
                const auto& pr = layout.prior(priors, i);
                const double lo = pr.support_lower();
                const double width = pr.support_upper() - lo;
                Eigen::VectorXd cand = x;
                for (int g = 0; g < cfg.init_grid; ++g) {
                    cand(i) = lo + (g + 0.5) / cfg.init_grid * width;
                    const double lp_c = target(cand);
                    if (lp_c > lp) {
                        x(i) = cand(i);
                        lp = lp_c;
                    }
                }
            }
        }
    }

    const double s = cfg.step_scale(da);
    const long total = static_cast<long>(cfg.burn_in) + static_cast<long>(cfg.n_samples) * cfg.thin;
    const long checkpoint_every = cfg.checkpoints > 0 ? std::max(1L, total / cfg.checkpoints) : 0;
    chain.samples.resize(cfg.n_samples, d);
    chain.log_posterior.reserve(cfg.n_samples);
    chain.accepted.reserve(cfg.n_samples);

    // running moments of the trajectory in scaled coordinates (active dimensions only)
    Eigen::VectorXd u(da), hist_mean(da), z(da);
    Eigen::MatrixXd hist_m2 = Eigen::MatrixXd::Zero(da, da);
    for (int a = 0; a < da; ++a) {
        hist_mean(a) = x(active[a]) / scale(active[a]);
    }
    long hist_n = 1;
    long accepted = 0;
    Eigen::MatrixXd L = std::sqrt(cfg.c0_scale) * Eigen::MatrixXd::Identity(da, da);
    Eigen::MatrixXd C(da, da);
    int stored = 0;

    for (long step = 0; step < total; ++step) {
        const bool adapting = cfg.t0 >= 0 && accepted >= cfg.t0 && hist_n > 1;
        if (adapting) {
            C = (s / static_cast<double>(hist_n - 1)) * hist_m2;
            C.diagonal().array() += s * cfg.epsilon_reg;
            Eigen::LLT<Eigen::MatrixXd> llt(C);
            if (llt.info() == Eigen::Success) {
                L = llt.matrixL();
            }
        }
        for (int a = 0; a < da; ++a) {
            z(a) = normal(rng);
        }
        const Eigen::VectorXd dz = L * z;
        Eigen::VectorXd y = x;
        for (int a = 0; a < da; ++a) {
            y(active[a]) += scale(active[a]) * dz(a);
        }
        bool acc = false;
        if (layout.in_support(priors, y)) {
            const double lp_y = target(y);
            if (std::isfinite(lp_y) && std::log(unif(rng)) < lp_y - lp) {
                x = y;
                lp = lp_y;
                acc = true;
                ++accepted;
            }
        }
        ++chain.total_steps;

        // Welford update with the current state (rejections repeat it)
        for (int a = 0; a < da; ++a) {
            u(a) = x(active[a]) / scale(active[a]);
        }
        ++hist_n;
        const Eigen::VectorXd delta = u - hist_mean;
        hist_mean += delta / static_cast<double>(hist_n);
        hist_m2.noalias() += delta * (u - hist_mean).transpose();

        if (checkpoint_every > 0 && (step + 1) % checkpoint_every == 0) {
            const Eigen::MatrixXd Lu = L * L.transpose();
            Eigen::MatrixXd full = Eigen::MatrixXd::Zero(d, d);
            for (int a = 0; a < da; ++a) {
                for (int b = 0; b < da; ++b) {
                    full(active[a], active[b]) = scale(active[a]) * Lu(a, b) * scale(active[b]);
                }
            }
            chain.cov_checkpoints.push_back(std::move(full));
        }
        if (step >= cfg.burn_in && (step - cfg.burn_in) % cfg.thin == 0 && stored < cfg.n_samples) {
            chain.samples.row(stored++) = x.transpose();
            chain.log_posterior.push_back(lp);
            chain.accepted.push_back(acc ? 1 : 0);
        }
    }
    chain.total_accepted = accepted;
    return chain;
}

std::vector<PosteriorChain> am_run(const PriorSet& priors, const LogLikelihood& loglik, int num_windows,
                                   const AmConfig& cfg, std::uint64_t seed, const std::vector<Eigen::VectorXd>& starts)
{
    cfg.validate();
    std::vector<PosteriorChain> chains(cfg.n_chains);
    std::vector<std::exception_ptr> errors(cfg.n_chains);
    std::atomic<int> next{0};
    auto worker = [&] {
        for (int c = next++; c < cfg.n_chains; c = next++) {
            try {
                std::optional<Eigen::VectorXd> start;
                if (!starts.empty()) {
                    start = starts[c % starts.size()];
                }
                chains[c] = am_chain(priors, loglik, num_windows, cfg, derive_seed(seed, c), start);
            }
            catch (...) {
                errors[c] = std::current_exception();
            }
        }
    };
    int jobs = cfg.jobs > 0 ? cfg.jobs : static_cast<int>(std::thread::hardware_concurrency());
    jobs = std::clamp(jobs, 1, cfg.n_chains);
    std::vector<std::thread> pool;
    for (int j = 1; j < jobs; ++j) {
        pool.emplace_back(worker);
    }
    worker();
    for (auto& t : pool) {
        t.join();
    }
    for (auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
    return chains;
}

std::vector<PosteriorChain> am_run(const PriorSet& priors, const ObservationSeries& series, const AmConfig& cfg,
                                   const NoiseConfig& noise, std::uint64_t seed,
                                   const std::vector<Eigen::VectorXd>& starts)
{
    series.validate();
    noise.validate();
    const int windows = windows_for(series.size(), cfg.window_days);
    LogLikelihood ll = [&series, noise](const ParameterVector& p, const DynamicSchedule& dyn) {
        return marginal_loglik(p, dyn, series, noise);
    };
    return am_run(priors, ll, windows, cfg, seed, starts);
}

double gelman_rubin(const std::vector<Eigen::VectorXd>& chains)
{
    if (chains.size() < 2) {
        throw InputError("Gelman-Rubin needs at least two chains");
    }
    const auto n = chains[0].size();
    for (const auto& c : chains) {
        if (c.size() != n) {
            throw InputError("Gelman-Rubin needs chains of equal length");
        }
    }
    if (n < 2) {
        throw InputError("Gelman-Rubin needs at least two samples per chain");
    }
    const double m = static_cast<double>(chains.size());
    const double nn = static_cast<double>(n);
    Eigen::VectorXd means(chains.size());
    double W = 0.0;
    for (std::size_t j = 0; j < chains.size(); ++j) {
        means(j) = chains[j].mean();
        W += (chains[j].array() - means(j)).square().sum() / (nn - 1.0);
    }
    W /= m;
    const double B = nn * (means.array() - means.mean()).square().sum() / (m - 1.0);
    if (!(W > 0.0)) {
        std::clog << "warning: zero within-chain variance in Gelman-Rubin\n";
        return std::numeric_limits<double>::infinity();
    }
    return std::sqrt(((nn - 1.0) / nn * W + B / nn) / W);
}

double gelman_rubin(const std::vector<PosteriorChain>& chains, int dim)
{
    std::vector<Eigen::VectorXd> cols;
    for (const auto& c : chains) {
        cols.push_back(c.samples.col(dim));
    }
    return gelman_rubin(cols);
}

double weighted_quantile(std::vector<std::pair<double, double>> vw, double q)
{
    if (vw.empty()) {
        throw InputError("quantile of an empty sample");
    }
    std::sort(vw.begin(), vw.end());
    double total = 0.0;
    for (auto& [v, w] : vw) {
        total += w;
    }
    // midpoint positions of each atom on the cumulative weight scale
    double acc = 0.0;
    double prev_pos = 0.0, prev_val = vw.front().first;
    for (std::size_t i = 0; i < vw.size(); ++i) {
        const double pos = (acc + 0.5 * vw[i].second) / total;
        acc += vw[i].second;
        if (q <= pos) {
            if (i == 0) {
                return vw[i].first;
            }
            const double t = (q - prev_pos) / (pos - prev_pos);
            return prev_val + t * (vw[i].first - prev_val);
        }
        prev_pos = pos;
        prev_val = vw[i].first;
    }
    return vw.back().first;
}

std::vector<DimensionSummary> posterior_summary(const std::vector<Eigen::MatrixXd>& chains,
                                                const std::vector<std::string>& names,
                                                const std::vector<double>& weights)
{
    if (chains.empty()) {
        throw InputError("posterior summary of no chains");
    }
    if (!weights.empty() && weights.size() != chains.size()) {
        throw InputError("one weight per chain required");
    }
    const auto d = chains[0].cols();
    for (const auto& c : chains) {
        if (c.rows() == 0) {
            throw InputError("posterior summary of an empty chain");
        }
        if (c.cols() != d) {
            throw InputError("chains of different dimension");
        }
    }
    std::vector<DimensionSummary> out(d);
    for (Eigen::Index i = 0; i < d; ++i) {
        std::vector<std::pair<double, double>> vw;
        double wsum = 0.0, m1 = 0.0, m2 = 0.0;
        for (std::size_t c = 0; c < chains.size(); ++c) {
            const double wc = (weights.empty() ? 1.0 : weights[c]) / static_cast<double>(chains[c].rows());
            for (Eigen::Index r = 0; r < chains[c].rows(); ++r) {
                const double v = chains[c](r, i);
                vw.emplace_back(v, wc);
                wsum += wc;
                m1 += wc * v;
            }
        }
        m1 /= wsum;
        for (auto& [v, w] : vw) {
            m2 += w * (v - m1) * (v - m1);
        }
        auto& s = out[i];
        s.name = i < static_cast<Eigen::Index>(names.size()) ? names[i] : "dim" + std::to_string(i);
        s.mean = m1;
        s.sd = std::sqrt(std::max(0.0, m2 / wsum));
        s.lo95 = weighted_quantile(vw, 0.025);
        s.lo68 = weighted_quantile(vw, 0.16);
        s.median = weighted_quantile(vw, 0.5);
        s.hi68 = weighted_quantile(vw, 0.84);
        s.hi95 = weighted_quantile(vw, 0.975);
    }
    return out;
}

std::vector<DimensionSummary> posterior_summary(const std::vector<PosteriorChain>& chains,
                                                const std::vector<double>& weights)
{
    std::vector<Eigen::MatrixXd> m;
    for (const auto& c : chains) {
        m.push_back(c.samples);
    }
    return posterior_summary(m, chains.empty() ? std::vector<std::string>{} : chains[0].names, weights);
}

void write_chain(const std::string& csv_path, const std::string& json_path, const PosteriorChain& chain,
                 const nlohmann::json& extra)
{
    {
        std::ofstream out(csv_path);
        if (!out) {
            throw InputError("cannot write '" + csv_path + "'");
        }
        out.precision(17);
        for (const auto& n : chain.names) {
            out << n << ',';
        }
        out << "log_posterior,accepted\n";
        for (int r = 0; r < chain.size(); ++r) {
            for (int c = 0; c < chain.dim(); ++c) {
                out << chain.samples(r, c) << ',';
            }
            out << chain.log_posterior[r] << ',' << static_cast<int>(chain.accepted[r]) << '\n';
        }
    }
    nlohmann::json j = {{"names", chain.names},
                        {"num_windows", chain.num_windows},
                        {"window_days", chain.window_days},
                        {"seed", chain.seed},
                        {"total_steps", chain.total_steps},
                        {"total_accepted", chain.total_accepted},
                        {"acceptance_rate", chain.acceptance_rate()},
                        {"likelihood_failures", chain.likelihood_failures},
                        {"samples", chain.size()}};
    for (auto it = extra.begin(); extra.is_object() && it != extra.end(); ++it) {
        j[it.key()] = it.value();
    }
    std::ofstream out(json_path);
    if (!out) {
        throw InputError("cannot write '" + json_path + "'");
    }
    out << j.dump(2) << '\n';
}

PosteriorChain read_chain(const std::string& csv_path, const std::string& json_path)
{
    std::ifstream js(json_path);
    if (!js) {
        throw InputError("cannot open '" + json_path + "'");
    }
    nlohmann::json j;
    try {
        js >> j;
    }
    catch (const nlohmann::json::exception& e) {
        throw InputError("malformed chain sidecar '" + json_path + "': " + e.what());
    }
    PosteriorChain chain;
    chain.names = j.at("names").get<std::vector<std::string>>();
    chain.num_windows = j.at("num_windows").get<int>();
    chain.window_days = j.value("window_days", 28);
    chain.seed = j.value("seed", std::uint64_t{0});
    chain.total_steps = j.value("total_steps", 0L);
    chain.total_accepted = j.value("total_accepted", 0L);
    chain.likelihood_failures = j.value("likelihood_failures", 0L);

    std::ifstream in(csv_path);
    if (!in) {
        throw InputError("cannot open '" + csv_path + "'");
    }
    std::string line;
    std::getline(in, line);
    const int d = static_cast<int>(chain.names.size());
    std::vector<std::vector<double>> rows;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        std::vector<double> row;
        std::stringstream ss(line);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            try {
                row.push_back(std::stod(tok));
            }
            catch (const std::exception&) {
                throw InputError(csv_path + ":" + std::to_string(line_no) + ": not a number");
            }
        }
        if (static_cast<int>(row.size()) != d + 2) {
            throw InputError(csv_path + ":" + std::to_string(line_no) + ": wrong number of columns");
        }
        rows.push_back(std::move(row));
    }
    chain.samples.resize(static_cast<Eigen::Index>(rows.size()), d);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (int c = 0; c < d; ++c) {
            chain.samples(static_cast<Eigen::Index>(r), c) = rows[r][c];
        }
        chain.log_posterior.push_back(rows[r][d]);
        chain.accepted.push_back(rows[r][d + 1] != 0.0 ? 1 : 0);
    }
    return chain;
}

} // namespace covmon
