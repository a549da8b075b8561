#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <string_view>

namespace covmon {

/// Calendar day, stored as days since 1970-01-01 (proleptic Gregorian).
class Date {
public:
    constexpr Date() = default;
    constexpr explicit Date(std::int32_t days_since_epoch)
        : days_(days_since_epoch)
    {
    }

    static Date from_ymd(int year, unsigned month, unsigned day);

    /// Parses YYYY-MM-DD; throws InputError otherwise.
    static Date parse(std::string_view iso);

    std::string to_string() const;

    constexpr std::int32_t days() const { return days_; }

    /// 0 = Monday ... 6 = Sunday.
    int weekday() const;

    friend constexpr Date operator+(Date d, int n) { return Date(d.days_ + n); }
    friend constexpr Date operator-(Date d, int n) { return Date(d.days_ - n); }
    friend constexpr int operator-(Date a, Date b) { return a.days_ - b.days_; }
    friend constexpr auto operator<=>(Date, Date) = default;

private:
    std::int32_t days_ = 0;
};

} // namespace covmon
