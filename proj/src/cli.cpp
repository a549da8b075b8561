#include "covmon/cli.hpp"
#include "covmon/analysis.hpp"
#include "covmon/bootstrap.hpp"
#include "covmon/data.hpp"
#include "covmon/priors.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <fstream>
#include <iostream>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;
using nlohmann::json;

namespace covmon::cli {

namespace {

ObsVector obs_from_json(const json& j, const char* key)
{
    if (!j.is_array() || j.size() != kObsDim) {
        throw InputError(std::string("noise.") + key + " must be an array of 3 numbers");
    }
    return ObsVector(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

std::string resolve(const std::string& p, const fs::path& base)
{
    if (p.empty() || base.empty() || fs::path(p).is_absolute()) {
        return p;
    }
    return (base / p).string();
}

void write_json(const std::string& path, const json& j)
{
    std::ofstream out(path);
    if (!out) {
        throw InputError("cannot write '" + path + "'");
    }
    out << j.dump(2) << '\n';
}

std::string safe_name(const std::string& region)
{
    std::string out = region;
    for (char& c : out) {
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') {
            c = '_';
        }
    }
    return out;
}

std::uint64_t require_seed(const RunConfig& cfg, const char* command)
{
    if (!cfg.seed) {
        throw InputError(std::string(command) + " needs a seed (--seed or \"seed\" in the config)");
    }
    return *cfg.seed;
}

PriorSet load_priors(const RunConfig& cfg)
{
    return cfg.priors.empty() ? PriorSet::defaults() : PriorSet::load(cfg.priors);
}

/// Runs `body(i)` for every region index with up to `jobs` threads; the first exception wins.
template <class Body>
void for_regions(int n, int jobs, Body body)
{
    const int workers = std::max(1, std::min(jobs, n));
    if (workers == 1) {
        for (int i = 0; i < n; ++i) {
            body(i);
        }
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr failure;
    std::mutex m;
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (int i = next++; i < n; i = next++) {
                try {
                    body(i);
                }
                catch (...) {
                    std::lock_guard<std::mutex> lock(m);
                    if (!failure) {
                        failure = std::current_exception();
                    }
                }
            }
        });
    }
    for (auto& t : pool) {
        t.join();
    }
    if (failure) {
        std::rethrow_exception(failure);
    }
}

AmConfig region_am(const RunConfig& cfg)
{
    AmConfig am = cfg.am;
    am.window_days = cfg.window_days;
    if (cfg.jobs > 1 && am.jobs == 0) {
        am.jobs = std::max(1u, std::thread::hardware_concurrency() / static_cast<unsigned>(cfg.jobs));
    }
    return am;
}

fs::path fit_dir_of(const RunConfig& cfg, const std::string& opt)
{
    return opt.empty() ? fs::path(cfg.output_dir) / "fit" : fs::path(opt);
}

json summary_json(const std::vector<DimensionSummary>& dims)
{
    json out = json::array();
    for (const auto& d : dims) {
        out.push_back({{"name", d.name}, {"mean", d.mean}, {"sd", d.sd}, {"lo68", d.lo68}, {"hi68", d.hi68},
                       {"lo95", d.lo95}, {"hi95", d.hi95}});
    }
    return out;
}

json band_json(const Band& b)
{
    return {{"mean", b.mean}, {"lo68", b.lo68}, {"hi68", b.hi68}, {"lo95", b.lo95}, {"hi95", b.hi95}};
}

json obs_json(const ObsVector& v)
{
    return {{"H", v(0)}, {"W", v(1)}, {"D", v(2)}};
}

json forecast_json(const std::vector<ForecastPoint>& pts)
{
    json out = json::array();
    for (const auto& p : pts) {
        out.push_back({{"date", p.date.to_string()}, {"mean", obs_json(p.mean)}, {"sd", obs_json(p.sd)},
                       {"lo68", obs_json(p.lo68)}, {"hi68", obs_json(p.hi68)}, {"lo95", obs_json(p.lo95)},
                       {"hi95", obs_json(p.hi95)}});
    }
    return out;
}

std::vector<ForecastPoint> read_predictive_csv(const std::string& path)
{
    std::ifstream in(path);
    if (!in) {
        throw InputError("cannot read forecast file '" + path + "'");
    }
    std::string line;
    std::getline(in, line);
    if (line.rfind("date,compartment,mean,sd,lo68,hi68,lo95,hi95", 0) != 0) {
        throw InputError("'" + path + "' is not a predictive CSV");
    }
    std::vector<ForecastPoint> out;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::stringstream ss(line);
        std::string f[8];
        for (auto& x : f) {
            std::getline(ss, x, ',');
        }
        const Date d = Date::parse(f[0]);
        if (out.empty() || out.back().date != d) {
            ForecastPoint p;
            p.date = d;
            out.push_back(p);
        }
        const int i = f[1] == "H" ? 0 : f[1] == "W" ? 1 : f[1] == "D" ? 2 : -1;
        if (i < 0) {
            throw InputError("unknown compartment '" + f[1] + "' in '" + path + "'");
        }
        auto& p = out.back();
        p.mean(i) = std::stod(f[2]);
        p.sd(i) = std::stod(f[3]);
        p.lo68(i) = std::stod(f[4]);
        p.hi68(i) = std::stod(f[5]);
        p.lo95(i) = std::stod(f[6]);
        p.hi95(i) = std::stod(f[7]);
    }
    return out;
}

void reject_unknown_keys(const json& j, const json& known, const std::string& section)
{
    for (const auto& [key, _] : j.items()) {
        if (!known.contains(key)) {
            throw InputError("unknown " + section + " configuration key '" + key + "'");
        }
    }
}

} // namespace

NoiseConfig noise_from_json(const json& j)
{
    NoiseConfig n;
    reject_unknown_keys(j, noise_to_json(n), "noise");
    n.epsilon = j.value("epsilon", n.epsilon);
    n.q_diag = j.value("q_diag", n.q_diag);
    if (j.contains("r0")) {
        n.r0 = obs_from_json(j["r0"], "r0");
    }
    if (j.contains("rd")) {
        n.rd = obs_from_json(j["rd"], "rd");
    }
    n.state_dependent = j.value("state_dependent", n.state_dependent);
    n.validate();
    return n;
}

json noise_to_json(const NoiseConfig& n)
{
    return {{"epsilon", n.epsilon},
            {"q_diag", n.q_diag},
            {"r0", {n.r0(0), n.r0(1), n.r0(2)}},
            {"rd", {n.rd(0), n.rd(1), n.rd(2)}},
            {"state_dependent", n.state_dependent}};
}

HorizonConfig horizon_from_json(const json& j)
{
    HorizonConfig h;
    reject_unknown_keys(j, horizon_to_json(h), "horizon");
    h.prediction_horizon = j.value("prediction_horizon", h.prediction_horizon);
    h.step = j.value("step", h.step);
    h.c = j.value("c", h.c);
    h.gradient_tol = j.value("gradient_tol", h.gradient_tol);
    h.cost_tol = j.value("cost_tol", h.cost_tol);
    h.max_iterations = j.value("max_iterations", h.max_iterations);
    h.beta_lower = j.value("beta_lower", h.beta_lower);
    h.beta_upper = j.value("beta_upper", h.beta_upper);
    h.optimize_x0 = j.value("optimize_x0", h.optimize_x0);
    h.validate();
    return h;
}

json horizon_to_json(const HorizonConfig& h)
{
    return {{"prediction_horizon", h.prediction_horizon}, {"step", h.step}, {"c", h.c},
            {"gradient_tol", h.gradient_tol}, {"cost_tol", h.cost_tol}, {"max_iterations", h.max_iterations},
            {"beta_lower", h.beta_lower}, {"beta_upper", h.beta_upper}, {"optimize_x0", h.optimize_x0}};
}

RunConfig RunConfig::from_json(const json& j, const fs::path& base_dir)
{
    if (!j.is_object()) {
        throw InputError("configuration must be a JSON object");
    }
    static const std::set<std::string> known = {
        "data", "priors", "regions", "start", "end", "window_days", "am", "horizon", "noise", "output_dir",
        "seed", "jobs", "kernel_width", "max_gap", "forecast_samples", "warm_burn_in", "recovered_anchor"};
    for (const auto& [key, _] : j.items()) {
        if (!known.count(key)) {
            throw InputError("unknown configuration key '" + key + "'");
        }
    }
    RunConfig c;
    try {
        c.data = resolve(j.value("data", c.data), base_dir);
        c.priors = resolve(j.value("priors", c.priors), base_dir);
        c.regions = j.value("regions", c.regions);
        if (j.contains("start")) {
            c.start = Date::parse(j["start"].get<std::string>());
        }
        if (j.contains("end")) {
            c.end = Date::parse(j["end"].get<std::string>());
        }
        c.window_days = j.value("window_days", c.window_days);
        if (j.contains("am")) {
            c.am = AmConfig::from_json(j["am"]);
        }
        if (j.contains("horizon")) {
            c.horizon = horizon_from_json(j["horizon"]);
        }
        if (j.contains("noise")) {
            c.noise = noise_from_json(j["noise"]);
        }
        c.output_dir = resolve(j.value("output_dir", c.output_dir), base_dir);
        if (j.contains("seed")) {
            c.seed = j["seed"].get<std::uint64_t>();
        }
        c.jobs = j.value("jobs", c.jobs);
        c.kernel_width = j.value("kernel_width", c.kernel_width);
        c.max_gap = j.value("max_gap", c.max_gap);
        c.forecast_samples = j.value("forecast_samples", c.forecast_samples);
        c.warm_burn_in = j.value("warm_burn_in", c.warm_burn_in);
        if (j.contains("recovered_anchor")) {
            const auto& a = j["recovered_anchor"];
            c.recovered_anchor = std::make_pair(Date::parse(a.at("date").get<std::string>()),
                                                a.at("fraction").get<double>());
        }
    }
    catch (const json::exception& e) {
        throw InputError(std::string("configuration: ") + e.what());
    }
    c.validate();
    return c;
}

json RunConfig::to_json() const
{
    json j = {{"data", data},
              {"priors", priors},
              {"regions", regions},
              {"window_days", window_days},
              {"am", am.to_json()},
              {"horizon", horizon_to_json(horizon)},
              {"noise", noise_to_json(noise)},
              {"output_dir", output_dir},
              {"jobs", jobs},
              {"kernel_width", kernel_width},
              {"max_gap", max_gap},
              {"forecast_samples", forecast_samples},
              {"warm_burn_in", warm_burn_in}};
    if (start) {
        j["start"] = start->to_string();
    }
    if (end) {
        j["end"] = end->to_string();
    }
    if (seed) {
        j["seed"] = *seed;
    }
    if (recovered_anchor) {
        j["recovered_anchor"] = {{"date", recovered_anchor->first.to_string()},
                                 {"fraction", recovered_anchor->second}};
    }
    return j;
}

void RunConfig::validate() const
{
    am.validate();
    horizon.validate();
    noise.validate();
    if (window_days < 1) {
        throw InputError("window_days must be positive");
    }
    if (jobs < 1) {
        throw InputError("jobs must be at least 1");
    }
    if (kernel_width < 1 || max_gap < 0) {
        throw InputError("kernel_width must be positive and max_gap nonnegative");
    }
    if (forecast_samples < 1 || warm_burn_in < 0) {
        throw InputError("forecast_samples must be positive and warm_burn_in nonnegative");
    }
    if (start && end && *end < *start) {
        throw InputError("analysis period ends before it starts");
    }
    if (recovered_anchor && !(recovered_anchor->second >= 0.0 && recovered_anchor->second <= 1.0)) {
        throw InputError("recovered_anchor.fraction must lie in [0, 1]");
    }
}

Staging::Staging(const fs::path& output_dir) : out_(output_dir)
{
    fs::create_directories(out_);
    static std::atomic<unsigned> counter{0};
    std::random_device rd;
    for (int attempt = 0; attempt < 100; ++attempt) {
        tmp_ = out_ / (".staging-" + std::to_string(rd()) + "-" + std::to_string(counter++));
        if (fs::create_directory(tmp_)) {
            return;
        }
    }
    throw InputError("cannot create a staging directory in '" + out_.string() + "'");
}

Staging::~Staging()
{
    std::error_code ec;
    fs::remove_all(tmp_, ec);
}

std::string Staging::path(const fs::path& relative)
{
    const fs::path p = tmp_ / relative;
    fs::create_directories(p.parent_path());
    files_.push_back(relative);
    return p.string();
}

void Staging::commit()
{
    for (const auto& rel : files_) {
        const fs::path dst = out_ / rel;
        fs::create_directories(dst.parent_path());
        fs::rename(tmp_ / rel, dst);
    }
    committed_ = true;
}

std::uint64_t region_seed(std::uint64_t master, const std::string& region)
{
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : region) {
        h = (h ^ c) * 1099511628211ULL;
    }
    return derive_seed(master, h);
}

std::vector<ObservationSeries> load_series(const std::string& path, std::ostream& log)
{
    if (path.empty()) {
        throw InputError("no data path given (--data or \"data\" in the config)");
    }
    std::vector<std::string> files;
    if (fs::is_directory(path)) {
        for (const auto& e : fs::directory_iterator(path)) {
            if (e.is_regular_file() && e.path().extension() == ".csv") {
                files.push_back(e.path().string());
            }
        }
        std::sort(files.begin(), files.end());
        if (files.empty()) {
            throw InputError("no CSV files in '" + path + "'");
        }
    }
    else if (fs::exists(path)) {
        files.push_back(path);
    }
    else {
        throw InputError("data file '" + path + "' does not exist");
    }
    std::vector<ObservationSeries> out;
    std::set<std::string> seen;
    for (const auto& f : files) {
        auto res = parse_regional_csv(f);
        for (const auto& w : res.warnings) {
            log << "warning: " << f << ": " << w << '\n';
        }
        for (auto& s : res.series) {
            if (!seen.insert(s.region_id).second) {
                throw InputError("region '" + s.region_id + "' appears in more than one file");
            }
            out.push_back(std::move(s));
        }
    }
    std::sort(out.begin(), out.end(),
              [](const ObservationSeries& a, const ObservationSeries& b) { return a.region_id < b.region_id; });
    return out;
}

std::vector<ObservationSeries> select_series(const RunConfig& cfg, std::vector<ObservationSeries> all)
{
    std::vector<ObservationSeries> chosen;
    if (cfg.regions.empty()) {
        chosen = std::move(all);
    }
    else {
        for (const auto& r : cfg.regions) {
            auto it = std::find_if(all.begin(), all.end(), [&](const ObservationSeries& s) { return s.region_id == r; });
            if (it == all.end()) {
                throw InputError("region '" + r + "' not found in the data");
            }
            chosen.push_back(*it);
        }
    }
    for (auto& s : chosen) {
        if (s.empty()) {
            throw InputError("region '" + s.region_id + "' has no data");
        }
        int first = 0, last = s.size();
        if (cfg.start) {
            first = *cfg.start - s.dates.front();
            if (first < 0 || first >= s.size()) {
                throw InputError("analysis start " + cfg.start->to_string() + " is outside the data of region '"
                                 + s.region_id + "'");
            }
        }
        if (cfg.end) {
            last = *cfg.end - s.dates.front() + 1;
            if (last <= first || last > s.size()) {
                throw InputError("analysis end " + cfg.end->to_string() + " is outside the data of region '"
                                 + s.region_id + "'");
            }
        }
        s = s.slice(first, last);
    }
    return chosen;
}

std::vector<PosteriorChain> load_chains(const fs::path& fit_dir, const std::string& region)
{
    const fs::path dir = fit_dir / safe_name(region);
    std::vector<PosteriorChain> out;
    for (int c = 0;; ++c) {
        const fs::path csv = dir / ("chain_" + std::to_string(c) + ".csv");
        const fs::path js = dir / ("chain_" + std::to_string(c) + ".json");
        if (!fs::exists(csv)) {
            break;
        }
        out.push_back(read_chain(csv.string(), js.string()));
    }
    if (out.empty()) {
        throw InputError("no stored chains for region '" + region + "' in '" + dir.string() + "'");
    }
    return out;
}

void cmd_ingest(const RunConfig& cfg, const IngestOptions& opt, std::ostream& log)
{
    cfg.validate();
    const auto series = select_series(cfg, load_series(cfg.data, log));
    json reports = json::array();
    std::vector<ObservationSeries> cleaned(series.size());
    std::vector<std::vector<std::string>> provenance(series.size());
    for (std::size_t i = 0; i < series.size(); ++i) {
        CleanResult c = clean_series(series[i], cfg.kernel_width, cfg.max_gap);
        SmoothResult s = smooth_series(c.series);
        c.report.outliers_smoothed = s.outliers_smoothed;
        c.report.d_smooth = smoothing_distance(series[i], s.series);
        for (auto& w : s.warnings) {
            c.report.warnings.push_back(w);
        }
        for (int k = 0; k < s.series.size(); ++k) {
            if (s.modified[k] && c.provenance[k] == "original") {
                c.provenance[k] = "smoothed";
            }
        }
        for (const auto& w : c.report.warnings) {
            log << "warning: " << series[i].region_id << ": " << w << '\n';
        }
        reports.push_back(c.report.to_json());
        cleaned[i] = std::move(s.series);
        provenance[i] = std::move(c.provenance);
    }
    if (opt.dry_run) {
        log << reports.dump(2) << '\n';
        log << "dry run: no files written\n";
        return;
    }
    Staging stage(cfg.output_dir);
    for (std::size_t i = 0; i < cleaned.size(); ++i) {
        write_regional_csv(stage.path(fs::path("cleaned") / (safe_name(cleaned[i].region_id) + ".csv")), {cleaned[i]},
                           {provenance[i]});
    }
    write_json(stage.path("cleaning_report.json"), reports);
    stage.commit();
    log << "ingest: " << cleaned.size() << " region(s) written to " << (fs::path(cfg.output_dir) / "cleaned").string()
        << '\n';
}

void cmd_fit(const RunConfig& cfg, const FitOptions& opt, std::ostream& log)
{
    cfg.validate();
    const std::uint64_t seed = require_seed(cfg, "fit");
    const PriorSet priors = load_priors(cfg);
    const auto series = select_series(cfg, load_series(cfg.data, log));
    const AmConfig base = region_am(cfg);
    Staging stage(cfg.output_dir);
    std::vector<std::string> paths_msg(series.size());
    std::mutex m;
    for_regions(static_cast<int>(series.size()), cfg.jobs, [&](int r) {
        const auto& s = series[r];
        AmConfig am = base;
        std::vector<Eigen::VectorXd> starts;
        if (!opt.warm_start.empty()) {
            for (const auto& c : load_chains(opt.warm_start, s.region_id)) {
                if (c.size() == 0) {
                    continue;
                }
                if (c.num_windows != windows_for(s.size(), cfg.window_days)) {
                    // a longer period adds windows; extend with the last window's values
                    auto point = c.point(c.size() - 1);
                    const int W = windows_for(s.size(), cfg.window_days);
                    point.schedule.r_t.resize(W, point.schedule.r_t.back());
                    point.schedule.ifr.resize(W, point.schedule.ifr.back());
                    point.schedule.window_days = cfg.window_days;
                    starts.push_back(ParameterLayout(W, cfg.window_days).pack(point.params, point.schedule));
                }
                else {
                    starts.push_back(c.samples.row(c.size() - 1).transpose());
                }
            }
            am.burn_in = std::min(am.burn_in, cfg.warm_burn_in);
            std::lock_guard<std::mutex> lock(m);
            log << "fit: " << s.region_id << ": warm start from " << starts.size() << " stored chain(s), burn-in "
                << am.burn_in << '\n';
        }
        const auto chains = am_run(priors, s, am, cfg.noise, region_seed(seed, s.region_id), starts);
        json rhat = json::object();
        const auto names = chains[0].names;
        for (int dim = 0; dim < chains[0].dim(); ++dim) {
            rhat[names[dim]] = chains.size() > 1 ? gelman_rubin(chains, dim) : std::nan("");
        }
        const std::string dir = safe_name(s.region_id);
        json extra = {{"region", s.region_id},
                      {"first_date", s.dates.front().to_string()},
                      {"last_date", s.dates.back().to_string()},
                      {"gelman_rubin", rhat},
                      {"warm_start", !opt.warm_start.empty()}};
        std::vector<std::string> csv(chains.size()), js(chains.size());
        {
            std::lock_guard<std::mutex> lock(m);
            for (std::size_t c = 0; c < chains.size(); ++c) {
                csv[c] = stage.path(fs::path("fit") / dir / ("chain_" + std::to_string(c) + ".csv"));
                js[c] = stage.path(fs::path("fit") / dir / ("chain_" + std::to_string(c) + ".json"));
            }
        }
        for (std::size_t c = 0; c < chains.size(); ++c) {
            write_chain(csv[c], js[c], chains[c], extra);
        }
        std::string summary_path;
        {
            std::lock_guard<std::mutex> lock(m);
            summary_path = stage.path(fs::path("fit") / dir / "summary.json");
        }
        write_json(summary_path, {{"region", s.region_id},
                                  {"gelman_rubin", rhat},
                                  {"summary", summary_json(posterior_summary(chains))},
                                  {"summary_time_averaged", [&] {
                                       std::vector<Eigen::MatrixXd> mats;
                                       for (const auto& c : chains) {
                                           mats.push_back(summary_dimensions(c));
                                       }
                                       return summary_json(posterior_summary(mats, summary_dimension_names()));
                                   }()}});
        double worst = 0.0;
        for (const auto& [k, v] : rhat.items()) {
            if (v.is_number()) {
                worst = std::max(worst, v.get<double>());
            }
        }
        std::lock_guard<std::mutex> lock(m);
        log << "fit: " << s.region_id << ": " << chains.size() << " chain(s) x " << chains[0].size()
            << " samples, worst Gelman-Rubin " << worst << '\n';
    });
    stage.commit();
}

void cmd_predict(const RunConfig& cfg, const PredictOptions& opt, std::ostream& log)
{
    cfg.validate();
    const std::uint64_t seed = require_seed(cfg, "predict");
    if (opt.horizon < 1) {
        throw InputError("horizon must be at least one day");
    }
    const auto series = select_series(cfg, load_series(cfg.data, log));
    const fs::path fit_dir = fit_dir_of(cfg, opt.fit_dir);
    Staging stage(cfg.output_dir);
    std::vector<std::string> paths(series.size());
    for (std::size_t r = 0; r < series.size(); ++r) {
        paths[r] = stage.path(fs::path("predict") / (safe_name(series[r].region_id) + ".csv"));
    }
    for_regions(static_cast<int>(series.size()), cfg.jobs, [&](int r) {
        const auto& s = series[r];
        const auto samples = thin_posterior(load_chains(fit_dir, s.region_id), cfg.forecast_samples);
        const auto pts = posterior_forecast(samples, s, s.size() - 1, opt.horizon, cfg.noise,
                                            region_seed(seed, s.region_id));
        write_predictive_csv(paths[r], pts);
    });
    stage.commit();
    log << "predict: " << series.size() << " region(s), " << opt.horizon << "-day horizon\n";
}

void cmd_beta(const RunConfig& cfg, const BetaOptions& opt, std::ostream& log)
{
    cfg.validate();
    const auto series = select_series(cfg, load_series(cfg.data, log));
    const fs::path fit_dir = fit_dir_of(cfg, opt.fit_dir);
    Staging stage(cfg.output_dir);
    std::vector<std::string> paths(series.size());
    for (std::size_t r = 0; r < series.size(); ++r) {
        paths[r] = stage.path(fs::path("beta") / (safe_name(series[r].region_id) + ".csv"));
    }
    std::mutex m;
    for_regions(static_cast<int>(series.size()), cfg.jobs, [&](int r) {
        const auto& s = series[r];
        const PriorDraw mmse = posterior_mean(load_chains(fit_dir, s.region_id));
        const BetaTrajectory traj = optimize_receding(mmse.params, mmse.schedule, s, cfg.noise, cfg.horizon);
        write_beta_csv(paths[r], traj);
        std::lock_guard<std::mutex> lock(m);
        log << "beta: " << s.region_id << ": " << traj.beta.size() << " days, c = " << traj.c
            << (traj.converged ? "" : " (not all windows converged)") << '\n';
    });
    stage.commit();
}

void cmd_bootstrap(const RunConfig& cfg, const BootstrapOptions& opt, std::ostream& log)
{
    cfg.validate();
    const std::uint64_t seed = require_seed(cfg, "bootstrap");
    if (opt.n_boot < 1) {
        throw InputError("n_boot must be at least 1");
    }
    const PriorSet priors = load_priors(cfg);
    const auto series = select_series(cfg, load_series(cfg.data, log));
    const fs::path fit_dir = fit_dir_of(cfg, opt.fit_dir);
    const AmConfig am = region_am(cfg);
    Staging stage(cfg.output_dir);
    std::mutex m;
    for_regions(static_cast<int>(series.size()), cfg.jobs, [&](int r) {
        const auto& s = series[r];
        SimulationOptions sim;
        sim.noise = cfg.noise;
        sim.region_id = s.region_id;
        sim.population = s.population;
        const auto ref = load_chains(fit_dir, s.region_id);
        const BootstrapRun run =
            run_bootstrap(priors, ref, s, am, cfg.noise, opt.n_boot, region_seed(seed, s.region_id), sim);
        const std::string dir = safe_name(s.region_id);
        std::lock_guard<std::mutex> lock(m);
        write_json(stage.path(fs::path("bootstrap") / dir / "bias.json"), run.report.to_json());
        for (std::size_t b = 0; b < run.datasets.size(); ++b) {
            const std::string base = "replicate_" + std::to_string(b);
            write_synthetic(stage.path(fs::path("bootstrap") / dir / (base + ".csv")),
                            stage.path(fs::path("bootstrap") / dir / (base + ".json")), run.datasets[b]);
        }
        log << "bootstrap: " << s.region_id << ": " << opt.n_boot << " replicate(s), median CoB "
            << run.report.stats.median_cob << '\n';
    });
    stage.commit();
}

void cmd_report(const RunConfig& cfg, const ReportOptions& opt, std::ostream& log)
{
    cfg.validate();
    const std::uint64_t seed = require_seed(cfg, "report");
    if (opt.horizon < 1) {
        throw InputError("horizon must be at least one day");
    }
    const auto series = select_series(cfg, load_series(cfg.data, log));
    const fs::path fit_dir = fit_dir_of(cfg, opt.fit_dir);
    const fs::path beta_dir = opt.beta_dir.empty() ? fs::path(cfg.output_dir) / "beta" : fs::path(opt.beta_dir);
    std::vector<ForecastPoint> earlier;
    if (!opt.forecast.empty()) {
        earlier = read_predictive_csv(opt.forecast);
    }
    std::vector<json> regions(series.size());
    std::vector<std::vector<TidyRow>> tidy_rows(series.size());
    for_regions(static_cast<int>(series.size()), cfg.jobs, [&](int r) {
        const auto& s = series[r];
        const auto chains = load_chains(fit_dir, s.region_id);
        const auto samples = thin_posterior(chains, cfg.forecast_samples);
        const auto hidden = hidden_states(samples, s, cfg.noise, cfg.recovered_anchor);
        const auto forecast =
            posterior_forecast(samples, s, s.size() - 1, opt.horizon, cfg.noise, region_seed(seed, s.region_id), 10);
        const auto deaths = death_decomposition(samples, s, cfg.noise);
        const Eigen::MatrixXd cfr = cfr_samples(samples);

        json rt = json::array();
        for (const auto& d : posterior_summary(chains)) {
            if (d.name.rfind("R_t[", 0) == 0) {
                rt.push_back({{"name", d.name}, {"mean", d.mean}, {"lo68", d.lo68}, {"hi68", d.hi68},
                              {"lo95", d.lo95}, {"hi95", d.hi95}});
            }
        }
        json ifr = json::array();
        for (const auto& w : ifr_window_summary(chains)) {
            ifr.push_back({{"first_window", w.first_window}, {"last_window", w.last_window}, {"mean", w.mean},
                           {"lo68", w.lo68}, {"hi68", w.hi68}});
        }
        json hs = json::object();
        for (int i = 0; i < kStateDim; ++i) {
            hs[std::string(kCompartmentNames[i])] = band_json(hidden.states[i]);
        }
        hs["recovered_fraction"] = band_json(hidden.recovered_fraction);
        hs["symptomatic_incidence"] = band_json(hidden.incidence);
        std::vector<std::string> dates;
        for (const auto& d : hidden.dates) {
            dates.push_back(d.to_string());
        }
        json j = {{"region", s.region_id},
                  {"last_date", s.dates.back().to_string()},
                  {"forecast", forecast_json(forecast)},
                  {"r_t_windows", rt},
                  {"ifr_windows", ifr},
                  {"hidden_states", {{"dates", dates}, {"bands", hs}}},
                  {"deaths_by_source",
                   {{"I", deaths.mean[0]}, {"H", deaths.mean[1]}, {"W", deaths.mean[2]}}},
                  {"cfr", {{"I", cfr.col(0).mean()}, {"H", cfr.col(1).mean()}, {"W", cfr.col(2).mean()}}}};
        const fs::path beta_file = beta_dir / (safe_name(s.region_id) + ".csv");
        if (fs::exists(beta_file)) {
            const BetaTrajectory traj = read_beta_csv(beta_file.string());
            std::vector<std::string> bd;
            for (const auto& d : traj.dates) {
                bd.push_back(d.to_string());
            }
            j["r_t_daily"] = {{"dates", bd}, {"r_t", traj.r_t}};
        }
        if (!earlier.empty()) {
            try {
                const ForecastScore sc = forecast_scores(earlier, s);
                j["scores"] = {{"coverage68", obs_json(sc.coverage68)}, {"coverage95", obs_json(sc.coverage95)},
                               {"coverage68_all", sc.coverage68_all}, {"coverage95_all", sc.coverage95_all},
                               {"nrmse", obs_json(sc.nrmse)}, {"n_points", sc.n_points}};
            }
            catch (const InputError& e) {
                j["scores"] = nullptr;
            }
        }
        tidy_rows[r] = tidy(hidden);
        for (auto& row : tidy(forecast)) {
            tidy_rows[r].push_back(std::move(row));
        }
        regions[r] = std::move(j);
    });
    Staging stage(cfg.output_dir);
    for (std::size_t r = 0; r < series.size(); ++r) {
        write_tidy_csv(stage.path(fs::path("report") / (safe_name(series[r].region_id) + "_tidy.csv")), tidy_rows[r]);
    }
    write_json(stage.path(fs::path("report") / "report.json"), {{"regions", regions}, {"config", cfg.to_json()}});
    stage.commit();
    log << "report: " << series.size() << " region(s) written to "
        << (fs::path(cfg.output_dir) / "report" / "report.json").string() << '\n';
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Regional epidemic monitoring: ingest, fit, predict, beta, bootstrap, report"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path, data, output_dir;
    std::optional<std::uint64_t> seed;
    int jobs = 0;
    app.add_option("--config", config_path, "run configuration JSON");
    app.add_option("--seed", seed, "master seed");
    app.add_option("--jobs", jobs, "regions processed concurrently");
    app.add_option("--output-dir", output_dir, "output directory");
    app.add_option("--data", data, "regional CSV file or directory");

    IngestOptions ingest;
    auto* c_ingest = app.add_subcommand("ingest", "clean and smooth raw regional data");
    c_ingest->add_flag("--dry-run", ingest.dry_run, "print the cleaning report without writing files");

    FitOptions fit;
    auto* c_fit = app.add_subcommand("fit", "sample the posterior per region");
    c_fit->add_option("--warm-start", fit.warm_start, "directory of chains from an earlier fit");

    PredictOptions predict;
    auto* c_predict = app.add_subcommand("predict", "k-day-ahead forecasts from stored chains");
    c_predict->add_option("--horizon", predict.horizon, "forecast horizon in days");
    c_predict->add_option("--fit-dir", predict.fit_dir, "directory of stored chains");

    BetaOptions beta;
    auto* c_beta = app.add_subcommand("beta", "daily transmission rate at the posterior mean");
    c_beta->add_option("--fit-dir", beta.fit_dir, "directory of stored chains");

    BootstrapOptions boot;
    auto* c_boot = app.add_subcommand("bootstrap", "parametric bootstrap of the posterior");
    c_boot->add_option("--n-boot", boot.n_boot, "number of bootstrap replicates");
    c_boot->add_option("--fit-dir", boot.fit_dir, "directory of stored chains");

    ReportOptions report;
    auto* c_report = app.add_subcommand("report", "weekly JSON bundle of forecasts, R_t and hidden states");
    c_report->add_option("--fit-dir", report.fit_dir, "directory of stored chains");
    c_report->add_option("--beta-dir", report.beta_dir, "directory of daily beta files");
    c_report->add_option("--score", report.forecast, "earlier predictive CSV to score");
    c_report->add_option("--horizon", report.horizon, "forecast horizon in days");

    try {
        app.parse(argc, argv);
    }
    catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    }
    catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    }
    catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return 2;
    }

    try {
        RunConfig cfg;
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            if (!in) {
                throw InputError("cannot read config file '" + config_path + "'");
            }
            json j;
            try {
                in >> j;
            }
            catch (const json::exception& e) {
                throw InputError("config file '" + config_path + "': " + e.what());
            }
            cfg = RunConfig::from_json(j, fs::path(config_path).parent_path());
        }
        if (!data.empty()) {
            cfg.data = data;
        }
        if (!output_dir.empty()) {
            cfg.output_dir = output_dir;
        }
        if (seed) {
            cfg.seed = seed;
        }
        if (jobs != 0) {
            cfg.jobs = jobs;
        }
        cfg.validate();
        if (!cfg.priors.empty()) {
            (void)PriorSet::load(cfg.priors);
        }

        if (c_ingest->parsed()) {
            cmd_ingest(cfg, ingest, err);
        }
        else if (c_fit->parsed()) {
            cmd_fit(cfg, fit, err);
        }
        else if (c_predict->parsed()) {
            cmd_predict(cfg, predict, err);
        }
        else if (c_beta->parsed()) {
            cmd_beta(cfg, beta, err);
        }
        else if (c_boot->parsed()) {
            cmd_bootstrap(cfg, boot, err);
        }
        else if (c_report->parsed()) {
            cmd_report(cfg, report, err);
        }
    }
    catch (const InputError& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    }
    catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

} // namespace covmon::cli
