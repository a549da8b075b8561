#include "covmon/date.hpp"
#include "covmon/errors.hpp"

#include <charconv>
#include <cstdio>

namespace covmon {

// Civil-calendar conversions after H. Hinnant's public-domain algorithms.
Date Date::from_ymd(int year, unsigned month, unsigned day)
{
    year -= month <= 2;
    const int era = (year >= 0 ? year : year - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(year - era * 400);
    const unsigned doy = (153 * (month + (month > 2 ? -3 : 9)) + 2) / 5 + day - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return Date(era * 146097 + static_cast<int>(doe) - 719468);
}

Date Date::parse(std::string_view iso)
{
    auto fail = [&]() -> Date { throw InputError("invalid ISO-8601 date '" + std::string(iso) + "'"); };
    if (iso.size() != 10 || iso[4] != '-' || iso[7] != '-') {
        return fail();
    }
    int y = 0;
    unsigned m = 0, d = 0;
    auto parse_part = [&](std::string_view s, auto& out) {
        auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
        return ec == std::errc{} && ptr == s.data() + s.size();
    };
    if (!parse_part(iso.substr(0, 4), y) || !parse_part(iso.substr(5, 2), m) || !parse_part(iso.substr(8, 2), d)) {
        return fail();
    }
    if (m < 1 || m > 12 || d < 1 || d > 31) {
        return fail();
    }
    const Date out = from_ymd(y, m, d);
    // reject e.g. 2021-02-30, which would silently roll over
    if (out.to_string() != iso) {
        return fail();
    }
    return out;
}

std::string Date::to_string() const
{
    const int z = days_ + 719468;
    const int era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    int y = static_cast<int>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    const unsigned d = doy - (153 * mp + 2) / 5 + 1;
    const unsigned m = mp < 10 ? mp + 3 : mp - 9;
    y += m <= 2;
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", y, m, d);
    return buf;
}

int Date::weekday() const
{
    // 1970-01-01 was a Thursday
    const int w = (days_ + 3) % 7;
    return w < 0 ? w + 7 : w;
}

} // namespace covmon
