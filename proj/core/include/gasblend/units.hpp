#pragma once

namespace gasblend::units {

// Document-facing units are km, MPa, hours; everything inside the library
// is SI (m, Pa, s, kg).  Conversions are exact constants.
inline constexpr double kMetersPerKm = 1000.0;
inline constexpr double kPaPerMPa = 1.0e6;
inline constexpr double kSecondsPerHour = 3600.0;

inline constexpr double km_to_m(double km) { return km * kMetersPerKm; }
inline constexpr double m_to_km(double m) { return m / kMetersPerKm; }
inline constexpr double mpa_to_pa(double mpa) { return mpa * kPaPerMPa; }
inline constexpr double pa_to_mpa(double pa) { return pa / kPaPerMPa; }
inline constexpr double hours_to_s(double h) { return h * kSecondsPerHour; }
inline constexpr double s_to_hours(double s) { return s / kSecondsPerHour; }

} // namespace gasblend::units
