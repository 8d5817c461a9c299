#ifndef DTA_RATEFN_HPP
#define DTA_RATEFN_HPP

#include <initializer_list>
#include <limits>
#include <vector>

#include "dta/errors.hpp"

namespace dta {

/// Absolute tolerance used when merging breakpoints / values into canonical form.
inline constexpr double kCanonicalTol = 1e-12;

struct Interval {
    double begin = 0.0;
    double end = 0.0;
    double length() const { return end - begin; }
};

inline constexpr double kInfNorm = std::numeric_limits<double>::infinity();

class CumulativeFunction;

/// Nonnegative right-continuous piecewise-constant function of time.
/// Value is implicitly 0 before the first breakpoint and from the last on.
/// Canonical form: strictly increasing breakpoints, no adjacent equal values,
/// no leading/trailing zero pieces.
class RateFunction {
public:
    struct Piece {
        double begin;
        double end;
        double value;
    };

    RateFunction() = default; // the zero function

    /// Build from pieces (disjoint, ascending; gaps filled with value 0).
    static RateFunction from_pieces(const std::vector<Piece>& pieces);
    static RateFunction step(double begin, double end, double value);

    /// Build from the adjacent representation: values[k] on [times[k], times[k+1]).
    static RateFunction from_breakpoints(std::vector<double> times, std::vector<double> values);

    /// Right-continuous evaluation; 0 outside support.
    double operator()(double t) const;

    bool is_zero() const { return values_.empty(); }
    std::size_t piece_count() const { return values_.size(); }
    /// Breakpoint times; size piece_count()+1 (empty for the zero function).
    const std::vector<double>& times() const { return times_; }
    const std::vector<double>& values() const { return values_; }
    double support_begin() const { return times_.empty() ? 0.0 : times_.front(); }
    double support_end() const { return times_.empty() ? 0.0 : times_.back(); }

    std::vector<Piece> pieces() const;

    /// Exact integral over [a, b].
    double integral(double a, double b) const;
    double total_mass() const;

    bool operator==(const RateFunction& other) const = default;

private:
    std::vector<double> times_;  // m+1 breakpoints for m pieces
    std::vector<double> values_; // m values
    friend RateFunction combine(const std::vector<const RateFunction*>&, const std::vector<double>&);
};

/// Nondecreasing continuous piecewise-linear function with value 0 at and
/// before time 0 and constant extension after the last knot.
class CumulativeFunction {
public:
    CumulativeFunction() = default; // identically 0

    static CumulativeFunction from_knots(std::vector<double> times, std::vector<double> values);

    double operator()(double t) const;

    /// Smallest t >= 0 with F(t) = y (generalized left inverse).
    /// Throws errc::out_of_range when y < 0 or y > total().
    double inverse_at(double y) const;

    double total() const { return values_.empty() ? 0.0 : values_.back(); }
    const std::vector<double>& times() const { return times_; }
    const std::vector<double>& values() const { return values_; }

private:
    std::vector<double> times_;
    std::vector<double> values_;
};

/// General continuous piecewise-linear function (knots + values, constant
/// extension on both sides). Used for queue lengths, travel times and path
/// costs, which are piecewise-linear but not monotone.
class PiecewiseLinear {
public:
    PiecewiseLinear() = default; // identically 0
    static PiecewiseLinear constant(double v);
    static PiecewiseLinear from_knots(std::vector<double> times, std::vector<double> values);

    double operator()(double t) const;
    /// Slope immediately to the right of t (0 beyond the last knot).
    double right_slope(double t) const;
    double min_value() const;

    bool empty() const { return times_.empty(); }
    const std::vector<double>& times() const { return times_; }
    const std::vector<double>& values() const { return values_; }

private:
    std::vector<double> times_;
    std::vector<double> values_;
};

// ---- module operations ----------------------------------------------------

/// Right-continuous value at t (0 outside support).
double evaluate(const RateFunction& f, double t);

/// Exact integral of f from 0: a piecewise-linear cumulative.
CumulativeFunction cumulative(const RateFunction& f);

/// Smallest t with F(t) = y.
double inverse_at(const CumulativeFunction& F, double y);

/// Exact linear combination sum_k coeffs[k]*fs[k]. Throws errc::nonnegativity
/// if a combined value is below -1e-12; values in [-1e-12, 0) are clamped to 0.
RateFunction combine(const std::vector<const RateFunction*>& fs, const std::vector<double>& coeffs);
RateFunction combine(std::initializer_list<const RateFunction*> fs, std::initializer_list<double> coeffs);

/// Exact L_p distance between f and g over the interval. p may be kInfNorm.
double distance(const RateFunction& f, const RateFunction& g, Interval iv, double p);

/// f zeroed outside [iv.begin, iv.end).
RateFunction restrict(const RateFunction& f, Interval iv);

// ---- piecewise-linear helpers (solver/routing substrate) -------------------

PiecewiseLinear pl_sum(const std::vector<const PiecewiseLinear*>& fs);
PiecewiseLinear pl_scale_add(const PiecewiseLinear& f, double scale, double offset);
/// Pointwise minimum; inserts exact crossing knots.
PiecewiseLinear pl_min(const PiecewiseLinear& a, const PiecewiseLinear& b);
/// Times in (iv.begin, iv.end) where a - b changes sign or touches 0.
std::vector<double> pl_crossings(const PiecewiseLinear& a, const PiecewiseLinear& b, Interval iv);

} // namespace dta

#endif
