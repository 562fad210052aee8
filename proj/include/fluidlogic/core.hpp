#pragma once

// Units, fluids and channel geometry shared by the netlist, solver and gate
// layers, plus the hydraulic resistance of a rectangular microchannel.
//
// Everything is SI and gauge: pressures are pascals relative to the local
// atmosphere (atmosphere = 0), lengths are metres, resistances are Pa*s/m^3.
// The flow model is laminar, incompressible and fully developed; entrance
// effects and gas compressibility are not modelled.

#include <algorithm>
#include <cmath>
#include <compare>
#include <numbers>
#include <stdexcept>
#include <string>

namespace fluidlogic {

class InvalidGeometry : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class InvalidFluid : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Gauge pressure in pascals. May be negative (vacuum side).
struct Pressure {
    double pa = 0.0;

    static constexpr Pressure from_kpa(double kpa) { return Pressure{kpa * 1e3}; }
    constexpr double kpa() const { return pa * 1e-3; }

    friend constexpr auto operator<=>(const Pressure&, const Pressure&) = default;
    friend constexpr Pressure operator+(Pressure a, Pressure b) { return Pressure{a.pa + b.pa}; }
    friend constexpr Pressure operator-(Pressure a, Pressure b) { return Pressure{a.pa - b.pa}; }
    friend constexpr Pressure operator*(Pressure a, double k) { return Pressure{a.pa * k}; }
    friend constexpr Pressure operator*(double k, Pressure a) { return Pressure{a.pa * k}; }
    friend constexpr Pressure operator/(Pressure a, double k) { return Pressure{a.pa / k}; }
    friend constexpr double operator/(Pressure a, Pressure b) { return a.pa / b.pa; }
};

/// Hydraulic resistance in Pa*s/m^3. A closed valve is never represented by
/// an infinite resistance; non-conduction lives in the valve state.
struct Resistance {
    double value = 0.0;

    friend constexpr auto operator<=>(const Resistance&, const Resistance&) = default;
    friend constexpr Resistance operator+(Resistance a, Resistance b) {
        return Resistance{a.value + b.value};
    }
    friend constexpr Resistance operator*(Resistance a, double k) { return Resistance{a.value * k}; }
    friend constexpr Resistance operator*(double k, Resistance a) { return Resistance{a.value * k}; }
    friend constexpr double operator/(Resistance a, Resistance b) { return a.value / b.value; }
    constexpr double conductance() const { return 1.0 / value; }
};

namespace literals {
constexpr Pressure operator""_Pa(long double v) { return Pressure{static_cast<double>(v)}; }
constexpr Pressure operator""_Pa(unsigned long long v) { return Pressure{static_cast<double>(v)}; }
constexpr Pressure operator""_kPa(long double v) { return Pressure::from_kpa(static_cast<double>(v)); }
constexpr Pressure operator""_kPa(unsigned long long v) {
    return Pressure::from_kpa(static_cast<double>(v));
}
}  // namespace literals

struct Fluid {
    std::string name;
    double dynamic_viscosity = 0.0;  // Pa*s

    friend bool operator==(const Fluid&, const Fluid&) = default;

    /// Air at 20 C; the default working medium.
    static Fluid air() { return {"air", 1.81e-5}; }
    static Fluid water() { return {"water", 1.00e-3}; }
};

/// Rectangular channel. The cross-section is stored with height <= width;
/// the resistance is symmetric in the two sides, so construction swaps them
/// when needed.
class ChannelGeometry {
public:
    ChannelGeometry(double length, double width, double height)
        : length_(length), width_(std::max(width, height)), height_(std::min(width, height)) {
        const bool finite = std::isfinite(length) && std::isfinite(width) && std::isfinite(height);
        if (!finite || length <= 0.0 || width <= 0.0 || height <= 0.0) {
            throw InvalidGeometry("channel dimensions must be finite and positive");
        }
    }

    double length() const { return length_; }
    double width() const { return width_; }
    double height() const { return height_; }
    /// h/w in (0, 1].
    double aspect_ratio() const { return height_ / width_; }

    friend bool operator==(const ChannelGeometry&, const ChannelGeometry&) = default;

private:
    double length_;
    double width_;
    double height_;
};

inline constexpr int kMaxSeriesTerms = 51;

/// Shape correction S(a) = 1 - (192 a / pi^5) * sum_{n odd} tanh(n pi / 2a) / n^5
/// for aspect ratio a = h/w in (0, 1]. The sum is evaluated as
/// sum_{n odd} 1/n^5 - sum_{n odd} (1 - tanh(n pi / 2a)) / n^5, where the first
/// part is (31/32) zeta(5) and the second decays like exp(-n pi / a). The
/// second sum stops once a term falls below round-off, or after max_terms terms.
inline double series_correction(double aspect, int max_terms = kMaxSeriesTerms) {
    constexpr double pi = std::numbers::pi;
    constexpr double odd_zeta5 = 31.0 / 32.0 * 1.0369277551433699263;
    double deficit = 0.0;
    for (int k = 0; k < max_terms; ++k) {
        const double n = 2.0 * k + 1.0;
        const double term = 2.0 / (std::exp(n * pi / aspect) + 1.0) / (n * n * n * n * n);
        deficit += term;
        if (term < 1e-18 * odd_zeta5) {
            break;
        }
    }
    return 1.0 - (192.0 * aspect / (pi * pi * pi * pi * pi)) * (odd_zeta5 - deficit);
}

namespace detail {
inline void check_fluid(const Fluid& fluid) {
    if (!(std::isfinite(fluid.dynamic_viscosity) && fluid.dynamic_viscosity > 0.0)) {
        throw InvalidFluid("fluid '" + fluid.name + "' must have positive dynamic viscosity");
    }
}

inline double parallel_plate_resistance(const ChannelGeometry& g, const Fluid& fluid) {
    const double h = g.height();
    return 12.0 * fluid.dynamic_viscosity * g.length() / (g.width() * h * h * h);
}
}  // namespace detail

/// Laminar resistance of a rectangular channel from the exact series solution.
inline Resistance rectangular_channel_resistance(const ChannelGeometry& geom, const Fluid& fluid,
                                                 int max_terms = kMaxSeriesTerms) {
    detail::check_fluid(fluid);
    return Resistance{detail::parallel_plate_resistance(geom, fluid) /
                      series_correction(geom.aspect_ratio(), max_terms)};
}

/// One-term approximation 12 mu L / (w h^3 (1 - 0.63 h/w)). Within 1% of the
/// series result for h/w up to about 0.64; 12% off for a square duct.
inline Resistance approx_channel_resistance(const ChannelGeometry& geom, const Fluid& fluid) {
    detail::check_fluid(fluid);
    return Resistance{detail::parallel_plate_resistance(geom, fluid) /
                      (1.0 - 0.63 * geom.aspect_ratio())};
}

}  // namespace fluidlogic
