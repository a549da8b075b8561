#include "covmon/data.hpp"
#include "covmon/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

namespace covmon {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool is_integral(double x)
{
    return std::isfinite(x) && std::floor(x) == x;
}

std::string trim(std::string_view s)
{
    auto b = s.find_first_not_of(" \t\r\"");
    if (b == std::string_view::npos) {
        return {};
    }
    auto e = s.find_last_not_of(" \t\r\"");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& line)
{
    std::vector<std::string> out;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) {
        out.push_back(trim(field));
    }
    if (!line.empty() && line.back() == ',') {
        out.emplace_back();
    }
    return out;
}

bool parse_value(const std::string& s, double& out)
{
    if (s.empty() || s == "NA" || s == "NaN" || s == "nan" || s == "null") {
        out = kNaN;
        return true;
    }
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && ptr == s.data() + s.size();
}

std::string format_value(double v)
{
    if (!std::isfinite(v)) {
        return "";
    }
    std::ostringstream os;
    os.precision(15);
    os << v;
    return os.str();
}

/// Splits `total` over slots proportionally to `weights`, never exceeding `caps`. Integral totals
/// and caps produce integral allocations (largest-remainder rounding). Returns the allocation;
/// whatever could not be placed is written to `unallocated`.
std::vector<double> apportion(double total, const std::vector<double>& weights, const std::vector<double>& caps,
                              double& unallocated)
{
    const std::size_t n = weights.size();
    std::vector<double> alloc(n, 0.0);
    bool integral = is_integral(total);
    for (double c : caps) {
        integral = integral && (is_integral(c) || std::isinf(c));
    }
    std::vector<bool> active(n);
    for (std::size_t i = 0; i < n; ++i) {
        active[i] = caps[i] > 0.0;
    }
    double remaining = total;
    for (std::size_t round = 0; round <= n && remaining > 0.0; ++round) {
        std::vector<double> w(n, 0.0);
        double wsum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (active[i]) {
                w[i] = std::max(0.0, weights[i]);
                wsum += w[i];
            }
        }
        if (wsum <= 0.0) {
            // no informative weights left: spread uniformly over open slots
            for (std::size_t i = 0; i < n; ++i) {
                w[i] = active[i] ? 1.0 : 0.0;
                wsum += w[i];
            }
            if (wsum <= 0.0) {
                break;
            }
        }
        std::vector<double> share(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            share[i] = remaining * w[i] / wsum;
        }
        if (integral) {
            double assigned = 0.0;
            std::vector<std::pair<double, std::size_t>> rest;
            for (std::size_t i = 0; i < n; ++i) {
                const double f = std::floor(share[i]);
                rest.emplace_back(share[i] - f, i);
                share[i] = f;
                assigned += f;
            }
            std::stable_sort(rest.begin(), rest.end(), [](auto& a, auto& b) { return a.first > b.first; });
            double leftover = remaining - assigned;
            for (auto& [frac, i] : rest) {
                if (leftover < 1.0) {
                    break;
                }
                if (w[i] > 0.0) {
                    share[i] += 1.0;
                    leftover -= 1.0;
                }
            }
        }
        bool capped = false;
        for (std::size_t i = 0; i < n; ++i) {
            if (!active[i]) {
                continue;
            }
            const double room = caps[i] - alloc[i];
            const double give = std::min(share[i], room);
            alloc[i] += give;
            remaining -= give;
            if (give >= room) {
                active[i] = false;
                capped = true;
            }
        }
        if (!capped || std::abs(remaining) < 1e-12) {
            break;
        }
    }
    unallocated = std::abs(remaining) < 1e-12 ? 0.0 : remaining;
    return alloc;
}

std::vector<int> present_indices(const std::vector<double>& v)
{
    std::vector<int> idx;
    for (int i = 0; i < static_cast<int>(v.size()); ++i) {
        if (std::isfinite(v[i])) {
            idx.push_back(i);
        }
    }
    return idx;
}

void add_label(std::vector<std::string>& prov, int i, const std::string& label)
{
    auto& p = prov[i];
    if (p.find(label) != std::string::npos) {
        return;
    }
    p = (p.empty() || p == "raw") ? label : p + ";" + label;
}

} // namespace

ObsVector ObservationSeries::observation(int k) const
{
    return ObsVector(hospital.at(k), icu.at(k), dead.at(k));
}

void ObservationSeries::push_back(Date d, double h, double w, double dead_cumulative)
{
    dates.push_back(d);
    hospital.push_back(h);
    icu.push_back(w);
    dead.push_back(dead_cumulative);
}

void ObservationSeries::validate() const
{
    const auto n = dates.size();
    if (hospital.size() != n || icu.size() != n || dead.size() != n) {
        throw InputError("series '" + region_id + "' has fields of different lengths");
    }
    for (std::size_t i = 1; i < n; ++i) {
        if (dates[i] - dates[i - 1] != 1) {
            throw InputError("series '" + region_id + "' is not daily at " + dates[i].to_string());
        }
    }
}

ObservationSeries ObservationSeries::slice(int first, int last) const
{
    first = std::max(0, first);
    last = std::min(size(), last);
    ObservationSeries out;
    out.region_id = region_id;
    out.population = population;
    for (int i = first; i < last; ++i) {
        out.push_back(dates[i], hospital[i], icu[i], dead[i]);
    }
    return out;
}

nlohmann::json CleaningReport::to_json() const
{
    return {{"region", region_id},
            {"negatives_repaired", negatives_repaired},
            {"gaps_interpolated", gaps_interpolated},
            {"marked_missing", marked_missing},
            {"residual_deficit", residual_deficit},
            {"outliers_smoothed", outliers_smoothed},
            {"d_smooth", d_smooth},
            {"warnings", warnings}};
}

ParseResult parse_regional_csv_text(const std::string& text, const std::string& source)
{
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) {
        throw InputError(source + ": missing header");
    }
    const auto header = split(line);
    std::map<std::string, int> col;
    for (int i = 0; i < static_cast<int>(header.size()); ++i) {
        col[header[i]] = i;
    }
    for (const char* required : {"date", "region", "hospital", "icu", "dead_cumulative"}) {
        if (!col.count(required)) {
            throw InputError(source + ": header lacks column '" + std::string(required) + "'");
        }
    }
    const bool has_population = col.count("population") != 0;

    ParseResult out;
    std::map<std::string, ObservationSeries> by_region;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        const auto fields = split(line);
        if (fields.size() != header.size()) {
            out.warnings.push_back(source + ":" + std::to_string(line_no) + ": expected "
                                   + std::to_string(header.size()) + " fields, got " + std::to_string(fields.size()));
            continue;
        }
        Date date;
        try {
            date = Date::parse(fields[col["date"]]);
        }
        catch (const InputError& e) {
            out.warnings.push_back(source + ":" + std::to_string(line_no) + ": " + e.what());
            continue;
        }
        double h = 0, w = 0, d = 0, pop = 0;
        if (!parse_value(fields[col["hospital"]], h) || !parse_value(fields[col["icu"]], w)
            || !parse_value(fields[col["dead_cumulative"]], d)
            || (has_population && !parse_value(fields[col["population"]], pop))) {
            out.warnings.push_back(source + ":" + std::to_string(line_no) + ": unparseable number");
            continue;
        }
        const std::string region = fields[col["region"]];
        auto& s = by_region[region];
        s.region_id = region;
        if (has_population && std::isfinite(pop)) {
            s.population = pop;
        }
        if (!s.dates.empty()) {
            const int step = date - s.dates.back();
            if (step <= 0) {
                throw InputError(source + ":" + std::to_string(line_no) + ": date " + date.to_string()
                                 + " does not advance past " + s.dates.back().to_string() + " for region '" + region
                                 + "'");
            }
            if (step > 1) {
                out.warnings.push_back(source + ":" + std::to_string(line_no) + ": " + std::to_string(step - 1)
                                       + " missing day(s) before " + date.to_string() + " filled as missing");
                for (int k = 1; k < step; ++k) {
                    s.push_back(s.dates.back() + 1, kNaN, kNaN, kNaN);
                }
            }
        }
        s.push_back(date, h, w, d);
    }
    for (auto& [name, s] : by_region) {
        out.series.push_back(std::move(s));
    }
    return out;
}

ParseResult parse_regional_csv(const std::string& path)
{
    std::ifstream in(path);
    if (!in) {
        throw InputError("cannot open '" + path + "'");
    }
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_regional_csv_text(buf.str(), path);
}

void write_regional_csv(const std::string& path, const std::vector<ObservationSeries>& series,
                        const std::vector<std::vector<std::string>>& provenance)
{
    std::ofstream out(path);
    if (!out) {
        throw InputError("cannot write '" + path + "'");
    }
    out << "date,region,hospital,icu,dead_cumulative,population,provenance\n";
    for (std::size_t r = 0; r < series.size(); ++r) {
        const auto& s = series[r];
        for (int i = 0; i < s.size(); ++i) {
            std::string prov = "raw";
            if (r < provenance.size() && i < static_cast<int>(provenance[r].size()) && !provenance[r][i].empty()) {
                prov = provenance[r][i];
            }
            out << s.dates[i].to_string() << ',' << s.region_id << ',' << format_value(s.hospital[i]) << ','
                << format_value(s.icu[i]) << ',' << format_value(s.dead[i]) << ',' << format_value(s.population)
                << ',' << prov << '\n';
        }
    }
    if (!out) {
        throw InputError("failed writing '" + path + "'");
    }
}

std::vector<double> daily_increments(const std::vector<double>& cumulative)
{
    std::vector<double> inc(cumulative.size(), kNaN);
    double last = kNaN;
    for (std::size_t i = 0; i < cumulative.size(); ++i) {
        if (!std::isfinite(cumulative[i])) {
            continue;
        }
        inc[i] = std::isfinite(last) ? cumulative[i] - last : 0.0;
        last = cumulative[i];
    }
    return inc;
}

CleanResult clean_series(const ObservationSeries& s, int kernel_width, int max_gap)
{
    s.validate();
    if (kernel_width < 1) {
        throw InputError("kernel width must be at least one day");
    }
    CleanResult res{s, {}, std::vector<std::string>(s.size(), "raw")};
    res.report.region_id = s.region_id;
    auto& out = res.series;
    const int n = s.size();

    // short interior gaps: linear interpolation between the neighbouring present values
    for (auto* field : {&out.hospital, &out.icu, &out.dead}) {
        auto& v = *field;
        int i = 0;
        while (i < n) {
            if (std::isfinite(v[i])) {
                ++i;
                continue;
            }
            int j = i;
            while (j < n && !std::isfinite(v[j])) {
                ++j;
            }
            const int len = j - i;
            if (i > 0 && j < n && len <= max_gap) {
                const double a = v[i - 1];
                const double b = v[j];
                for (int k = i; k < j; ++k) {
                    v[k] = a + (b - a) * (k - i + 1) / (len + 1);
                    add_label(res.provenance, k, "interpolated");
                }
                res.report.gaps_interpolated += len;
            }
            i = j;
        }
    }

    for (auto* field : {&out.hospital, &out.icu}) {
        for (int i = 0; i < n; ++i) {
            if ((*field)[i] < 0.0) {
                (*field)[i] = 0.0;
                ++res.report.negatives_repaired;
                add_label(res.provenance, i, "negative-repaired");
            }
        }
    }

    const auto idx = present_indices(out.dead);
    if (idx.size() >= 2) {
        std::vector<double> inc(idx.size(), 0.0);
        for (std::size_t j = 1; j < idx.size(); ++j) {
            inc[j] = out.dead[idx[j]] - out.dead[idx[j - 1]];
        }
        if (out.dead[idx[0]] < 0.0) {
            out.dead[idx[0]] = 0.0;
            ++res.report.negatives_repaired;
        }
        for (std::size_t j = 1; j < idx.size(); ++j) {
            if (inc[j] >= 0.0) {
                continue;
            }
            const double deficit = -inc[j];
            inc[j] = 0.0;
            ++res.report.negatives_repaired;
            add_label(res.provenance, idx[j], "negative-repaired");
            std::vector<std::size_t> slots;
            std::vector<double> weights, caps;
            for (std::size_t age = 0; age < static_cast<std::size_t>(kernel_width) && age + 1 <= j - 1 + 1; ++age) {
                if (j < age + 1 || j - 1 - age < 1) {
                    break;
                }
                const std::size_t m = j - 1 - age;
                slots.push_back(m);
                weights.push_back(static_cast<double>(kernel_width - static_cast<int>(age)));
                caps.push_back(std::max(0.0, inc[m]));
            }
            double residual = deficit;
            if (!slots.empty()) {
                const auto removed = apportion(deficit, weights, caps, residual);
                for (std::size_t q = 0; q < slots.size(); ++q) {
                    if (removed[q] > 0.0) {
                        inc[slots[q]] -= removed[q];
                        add_label(res.provenance, idx[slots[q]], "deficit-absorbed");
                    }
                }
            }
            if (residual > 0.0) {
                res.report.residual_deficit += residual;
                res.report.warnings.push_back("deficit of " + format_value(residual) + " at "
                                              + s.dates[idx[j]].to_string() + " exceeds preceding mass");
            }
        }
        double acc = out.dead[idx[0]];
        for (std::size_t j = 1; j < idx.size(); ++j) {
            acc += inc[j];
            out.dead[idx[j]] = acc;
        }
    }

    for (int i = 0; i < n; ++i) {
        if (!std::isfinite(out.hospital[i]) || !std::isfinite(out.icu[i]) || !std::isfinite(out.dead[i])) {
            ++res.report.marked_missing;
            add_label(res.provenance, i, "missing");
        }
    }
    return res;
}

namespace {

struct IncrementView {
    std::vector<int> idx; // positions of present values
    std::vector<double> inc; // inc[0] is the baseline slot (always 0)
};

IncrementView increments_of(const std::vector<double>& dead)
{
    IncrementView v;
    v.idx = present_indices(dead);
    v.inc.assign(v.idx.size(), 0.0);
    for (std::size_t j = 1; j < v.idx.size(); ++j) {
        v.inc[j] = dead[v.idx[j]] - dead[v.idx[j - 1]];
    }
    return v;
}

constexpr int kTrailingDays = 28;
constexpr int kMinHistory = 7;
constexpr int kSpreadDays = 7;

struct Trailing {
    std::size_t first = 0;
    double mean = 0.0;
    bool ok = false;
};

Trailing trailing_window(const std::vector<double>& inc, std::size_t j)
{
    Trailing t;
    t.first = j > static_cast<std::size_t>(kTrailingDays) ? j - kTrailingDays : 1;
    if (j < t.first + kMinHistory) {
        return t;
    }
    double sum = 0.0;
    for (std::size_t m = t.first; m < j; ++m) {
        sum += inc[m];
    }
    t.mean = sum / static_cast<double>(j - t.first);
    t.ok = true;
    return t;
}

double outlier_scale(double mean)
{
    return std::sqrt(std::max(mean, 1.0));
}

} // namespace

double max_outlier_score(const ObservationSeries& s)
{
    const auto v = increments_of(s.dead);
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 1; j < v.inc.size(); ++j) {
        const auto t = trailing_window(v.inc, j);
        if (t.ok) {
            best = std::max(best, (v.inc[j] - t.mean) / outlier_scale(t.mean));
        }
    }
    return best;
}

SmoothResult smooth_series(const ObservationSeries& s, const std::vector<double>& thresholds)
{
    s.validate();
    SmoothResult res{s, 0, {}, std::vector<bool>(s.size(), false)};
    auto v = increments_of(s.dead);
    const std::size_t n = v.inc.size();
    if (n < static_cast<std::size_t>(kMinHistory)) {
        res.warnings.push_back("series '" + s.region_id + "' shorter than 7 days; smoothing skipped");
        return res;
    }
    for (std::size_t a = 1; a < thresholds.size(); ++a) {
        if (thresholds[a] > thresholds[a - 1]) {
            throw InputError("smoothing thresholds must be in descending order");
        }
    }
    bool integral = true;
    for (double x : v.inc) {
        integral = integral && is_integral(x);
    }
    const std::size_t max_moves = 50 * n + 1000;

    for (double k : thresholds) {
        for (std::size_t move = 0; move < max_moves; ++move) {
            std::size_t best_j = 0;
            double best_z = k;
            Trailing best_t;
            for (std::size_t j = 1; j < n; ++j) {
                const auto t = trailing_window(v.inc, j);
                if (!t.ok) {
                    continue;
                }
                const double z = (v.inc[j] - t.mean) / outlier_scale(t.mean);
                if (z > best_z) {
                    best_z = z;
                    best_j = j;
                    best_t = t;
                }
            }
            if (best_j == 0) {
                break;
            }
            double capped = best_t.mean + k * outlier_scale(best_t.mean);
            if (integral) {
                capped = std::floor(capped);
            }
            const double excess = v.inc[best_j] - capped;

            // per-weekday means over the trailing window
            std::array<double, 7> wsum{}, wcount{};
            for (std::size_t m = best_t.first; m < best_j; ++m) {
                const int wd = s.dates[v.idx[m]].weekday();
                wsum[wd] += v.inc[m];
                wcount[wd] += 1.0;
            }
            double weekly = 0.0;
            int covered = 0;
            std::array<double, 7> wmean{};
            for (int wd = 0; wd < 7; ++wd) {
                if (wcount[wd] > 0.0) {
                    wmean[wd] = wsum[wd] / wcount[wd];
                    weekly += wmean[wd];
                    ++covered;
                }
            }
            weekly /= std::max(covered, 1);

            std::vector<std::size_t> slots;
            std::vector<double> weights;
            for (std::size_t m = best_j - 1; m >= 1 && slots.size() < static_cast<std::size_t>(kSpreadDays); --m) {
                const int wd = s.dates[v.idx[m]].weekday();
                slots.push_back(m);
                weights.push_back(std::max(0.0, weekly - wmean[wd]));
            }
            double unplaced = 0.0;
            const auto add = apportion(excess, weights, std::vector<double>(slots.size(), INFINITY), unplaced);
            v.inc[best_j] = capped + unplaced;
            for (std::size_t q = 0; q < slots.size(); ++q) {
                v.inc[slots[q]] += add[q];
                if (add[q] != 0.0) {
                    res.modified[v.idx[slots[q]]] = true;
                }
            }
            res.modified[v.idx[best_j]] = true;
            ++res.outliers_smoothed;
        }
    }

    double acc = s.dead[v.idx[0]];
    for (std::size_t j = 1; j < n; ++j) {
        acc += v.inc[j];
        res.series.dead[v.idx[j]] = acc;
    }
    return res;
}

double smoothing_distance(const ObservationSeries& raw, const ObservationSeries& smooth)
{
    if (raw.dates != smooth.dates) {
        throw InputError("smoothing_distance needs series on identical dates");
    }
    double total = 0.0;
    int days = 0;
    for (int t = 0; t < raw.size(); ++t) {
        double worst = 0.0;
        bool any = false;
        const std::array<std::pair<double, double>, 3> pairs = {std::pair{raw.hospital[t], smooth.hospital[t]},
                                                                {raw.icu[t], smooth.icu[t]},
                                                                {raw.dead[t], smooth.dead[t]}};
        for (auto [x, xs] : pairs) {
            if (!std::isfinite(x) || !std::isfinite(xs)) {
                continue;
            }
            any = true;
            worst = std::max(worst, std::abs(xs - x) / std::max(1.0, std::abs(x)));
        }
        if (any) {
            total += worst;
            ++days;
        }
    }
    return days == 0 ? 0.0 : total / days;
}

} // namespace covmon
