#include "dta/ratefn.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>

namespace dta {

namespace {

bool all_finite(const std::vector<double>& xs) {
    for (double x : xs)
        if (!std::isfinite(x)) return false;
    return true;
}

// Sorted breakpoint list with neighbours closer than kCanonicalTol merged.
std::vector<double> dedupe_sorted(std::vector<double> ts) {
    std::sort(ts.begin(), ts.end());
    std::vector<double> out;
    out.reserve(ts.size());
    for (double t : ts) {
        if (out.empty() || t - out.back() > kCanonicalTol) out.push_back(t);
    }
    return out;
}

} // namespace

// ---- RateFunction -----------------------------------------------------------

RateFunction RateFunction::from_breakpoints(std::vector<double> times, std::vector<double> values) {
    if (times.size() != values.size() + 1 && !(times.empty() && values.empty()))
        throw Error(errc::invalid_input, "rate function needs one more breakpoint than values");
    if (!all_finite(times) || !all_finite(values))
        throw Error(errc::invalid_input, "non-finite rate function data");

    // Clamp tiny negative dust, reject real negatives.
    for (double& v : values) {
        if (v < 0.0) {
            if (v < -kCanonicalTol)
                throw Error(errc::invalid_input, "negative rate value");
            v = 0.0;
        }
    }

    // Drop degenerate pieces (length <= tol), keeping order.
    std::vector<double> ts, vs;
    ts.reserve(times.size());
    vs.reserve(values.size());
    for (std::size_t k = 0; k < values.size(); ++k) {
        if (times[k + 1] - times[k] <= kCanonicalTol) continue;
        if (times[k + 1] < times[k])
            throw Error(errc::invalid_input, "breakpoints not increasing");
        if (!ts.empty() && times[k] < ts.back() - kCanonicalTol)
            throw Error(errc::invalid_input, "breakpoints not increasing");
        if (ts.empty() || times[k] > ts.back() + kCanonicalTol) {
            // gap between previous piece and this one: explicit zero piece
            if (!ts.empty()) {
                vs.push_back(0.0);
                ts.push_back(times[k]);
            } else {
                ts.push_back(times[k]);
            }
        }
        vs.push_back(values[k]);
        ts.push_back(times[k + 1]);
    }

    // Merge adjacent pieces with equal values (tolerance kCanonicalTol).
    std::vector<double> mts, mvs;
    for (std::size_t k = 0; k < vs.size(); ++k) {
        if (!mvs.empty() && std::fabs(mvs.back() - vs[k]) <= kCanonicalTol) {
            mts.back() = ts[k + 1];
        } else {
            if (mvs.empty()) mts.push_back(ts[k]);
            mvs.push_back(vs[k]);
            mts.push_back(ts[k + 1]);
        }
    }

    // Trim zero-valued ends (value 0 is implicit outside the support).
    std::size_t lo = 0, hi = mvs.size();
    while (lo < hi && mvs[lo] <= kCanonicalTol) ++lo;
    while (hi > lo && mvs[hi - 1] <= kCanonicalTol) --hi;

    RateFunction f;
    if (lo < hi) {
        f.values_.assign(mvs.begin() + lo, mvs.begin() + hi);
        f.times_.assign(mts.begin() + lo, mts.begin() + hi + 1);
    }
    return f;
}

RateFunction RateFunction::from_pieces(const std::vector<Piece>& pieces) {
    std::vector<Piece> ps = pieces;
    std::sort(ps.begin(), ps.end(), [](const Piece& a, const Piece& b) { return a.begin < b.begin; });
    std::vector<double> times, values;
    double prev_end = 0.0;
    bool first = true;
    for (const Piece& p : ps) {
        if (!std::isfinite(p.begin) || !std::isfinite(p.end) || !std::isfinite(p.value))
            throw Error(errc::invalid_input, "non-finite piece");
        if (p.end <= p.begin + kCanonicalTol) continue;
        if (!first && p.begin < prev_end - kCanonicalTol)
            throw Error(errc::invalid_input, "overlapping pieces");
        if (first) {
            times.push_back(p.begin);
        } else if (p.begin > prev_end + kCanonicalTol) {
            values.push_back(0.0);
            times.push_back(p.begin);
        }
        values.push_back(p.value);
        times.push_back(p.end);
        prev_end = p.end;
        first = false;
    }
    return from_breakpoints(std::move(times), std::move(values));
}

RateFunction RateFunction::step(double begin, double end, double value) {
    return from_pieces({Piece{begin, end, value}});
}

double RateFunction::operator()(double t) const {
    if (times_.empty() || t < times_.front() || t >= times_.back()) return 0.0;
    auto it = std::upper_bound(times_.begin(), times_.end(), t);
    std::size_t idx = static_cast<std::size_t>(it - times_.begin()) - 1;
    return values_[idx];
}

std::vector<RateFunction::Piece> RateFunction::pieces() const {
    std::vector<Piece> out;
    out.reserve(values_.size());
    for (std::size_t k = 0; k < values_.size(); ++k)
        out.push_back(Piece{times_[k], times_[k + 1], values_[k]});
    return out;
}

double RateFunction::integral(double a, double b) const {
    if (times_.empty() || b <= a) return 0.0;
    double acc = 0.0;
    for (std::size_t k = 0; k < values_.size(); ++k) {
        double lo = std::max(a, times_[k]);
        double hi = std::min(b, times_[k + 1]);
        if (hi > lo) acc += values_[k] * (hi - lo);
    }
    return acc;
}

double RateFunction::total_mass() const {
    if (times_.empty()) return 0.0;
    return integral(times_.front(), times_.back());
}

// ---- operations -------------------------------------------------------------

double evaluate(const RateFunction& f, double t) { return f(t); }

CumulativeFunction cumulative(const RateFunction& f) {
    if (f.is_zero()) return CumulativeFunction();
    if (f.support_begin() < -kCanonicalTol)
        throw Error(errc::invalid_input, "cumulative requires support in [0, inf)");
    std::vector<double> ts = f.times();
    std::vector<double> vs(ts.size(), 0.0);
    for (std::size_t k = 0; k < f.values().size(); ++k)
        vs[k + 1] = vs[k] + f.values()[k] * (ts[k + 1] - ts[k]);
    return CumulativeFunction::from_knots(std::move(ts), std::move(vs));
}

double inverse_at(const CumulativeFunction& F, double y) { return F.inverse_at(y); }

RateFunction combine(const std::vector<const RateFunction*>& fs, const std::vector<double>& coeffs) {
    if (fs.size() != coeffs.size())
        throw Error(errc::invalid_input, "combine: one coefficient per function required");
    std::vector<double> grid;
    for (const RateFunction* f : fs)
        for (double t : f->times()) grid.push_back(t);
    grid = dedupe_sorted(std::move(grid));
    if (grid.size() < 2) return RateFunction();

    std::vector<double> values(grid.size() - 1, 0.0);
    for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
        double acc = 0.0;
        for (std::size_t j = 0; j < fs.size(); ++j) acc += coeffs[j] * (*fs[j])(grid[k]);
        if (acc < -kCanonicalTol)
            throw Error(errc::nonnegativity, "combine produced a negative rate");
        values[k] = std::max(acc, 0.0);
    }
    return RateFunction::from_breakpoints(std::move(grid), std::move(values));
}

RateFunction combine(std::initializer_list<const RateFunction*> fs, std::initializer_list<double> coeffs) {
    return combine(std::vector<const RateFunction*>(fs), std::vector<double>(coeffs));
}

double distance(const RateFunction& f, const RateFunction& g, Interval iv, double p) {
    bool is_inf = std::isinf(p);
    if (!is_inf && p < 1.0)
        throw Error(errc::invalid_input, "distance: p must be >= 1 or infinity");
    if (iv.end <= iv.begin) return 0.0;

    std::vector<double> grid{iv.begin, iv.end};
    for (double t : f.times())
        if (t > iv.begin && t < iv.end) grid.push_back(t);
    for (double t : g.times())
        if (t > iv.begin && t < iv.end) grid.push_back(t);
    grid = dedupe_sorted(std::move(grid));

    double acc = 0.0, worst = 0.0;
    for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
        double d = std::fabs(f(grid[k]) - g(grid[k]));
        double len = grid[k + 1] - grid[k];
        if (is_inf)
            worst = std::max(worst, d);
        else
            acc += std::pow(d, p) * len;
    }
    if (is_inf) return worst;
    return p == 1.0 ? acc : std::pow(acc, 1.0 / p);
}

RateFunction restrict(const RateFunction& f, Interval iv) {
    if (f.is_zero() || iv.end <= iv.begin) return RateFunction();
    std::vector<RateFunction::Piece> out;
    for (const auto& p : f.pieces()) {
        double lo = std::max(p.begin, iv.begin);
        double hi = std::min(p.end, iv.end);
        if (hi > lo) out.push_back(RateFunction::Piece{lo, hi, p.value});
    }
    return RateFunction::from_pieces(out);
}

// ---- CumulativeFunction -----------------------------------------------------

CumulativeFunction CumulativeFunction::from_knots(std::vector<double> times, std::vector<double> values) {
    if (times.size() != values.size())
        throw Error(errc::invalid_input, "cumulative knots/values size mismatch");
    if (!all_finite(times) || !all_finite(values))
        throw Error(errc::invalid_input, "non-finite cumulative data");
    if (times.empty()) return CumulativeFunction();
    for (std::size_t k = 0; k + 1 < times.size(); ++k) {
        if (times[k + 1] <= times[k])
            throw Error(errc::invalid_input, "cumulative knots not increasing");
        if (values[k + 1] < values[k] - kCanonicalTol)
            throw Error(errc::invalid_input, "cumulative function must be nondecreasing");
        values[k + 1] = std::max(values[k + 1], values[k]);
    }
    if (times.front() < -kCanonicalTol || std::fabs(values.front()) > kCanonicalTol)
        throw Error(errc::invalid_input, "cumulative function must start at value 0 at time >= 0");
    values.front() = 0.0;
    CumulativeFunction F;
    F.times_ = std::move(times);
    F.values_ = std::move(values);
    return F;
}

double CumulativeFunction::operator()(double t) const {
    if (times_.empty()) return 0.0;
    if (t <= times_.front()) return 0.0;
    if (t >= times_.back()) return values_.back();
    auto it = std::upper_bound(times_.begin(), times_.end(), t);
    std::size_t k = static_cast<std::size_t>(it - times_.begin());
    double w = (t - times_[k - 1]) / (times_[k] - times_[k - 1]);
    return values_[k - 1] + w * (values_[k] - values_[k - 1]);
}

double CumulativeFunction::inverse_at(double y) const {
    double hi = total();
    if (y < -kCanonicalTol || y > hi + kCanonicalTol)
        throw Error(errc::out_of_range, "inverse_at: value outside the function's range");
    y = std::min(std::max(y, 0.0), hi);
    if (y <= 0.0) return 0.0;
    // First knot with value >= y; the segment before it carries the rise.
    auto it = std::lower_bound(values_.begin(), values_.end(), y);
    std::size_t k = static_cast<std::size_t>(it - values_.begin());
    double t0 = times_[k - 1], t1 = times_[k];
    double v0 = values_[k - 1], v1 = values_[k];
    return t0 + (y - v0) / (v1 - v0) * (t1 - t0);
}

// ---- PiecewiseLinear --------------------------------------------------------

PiecewiseLinear PiecewiseLinear::constant(double v) {
    PiecewiseLinear f;
    f.times_ = {0.0};
    f.values_ = {v};
    return f;
}

PiecewiseLinear PiecewiseLinear::from_knots(std::vector<double> times, std::vector<double> values) {
    if (times.size() != values.size())
        throw Error(errc::invalid_input, "piecewise-linear knots/values size mismatch");
    if (!all_finite(times) || !all_finite(values))
        throw Error(errc::invalid_input, "non-finite piecewise-linear data");
    for (std::size_t k = 0; k + 1 < times.size(); ++k)
        if (times[k + 1] <= times[k])
            throw Error(errc::invalid_input, "piecewise-linear knots not increasing");
    PiecewiseLinear f;
    f.times_ = std::move(times);
    f.values_ = std::move(values);
    return f;
}

double PiecewiseLinear::operator()(double t) const {
    if (times_.empty()) return 0.0;
    if (t <= times_.front()) return values_.front();
    if (t >= times_.back()) return values_.back();
    auto it = std::upper_bound(times_.begin(), times_.end(), t);
    std::size_t k = static_cast<std::size_t>(it - times_.begin());
    double w = (t - times_[k - 1]) / (times_[k] - times_[k - 1]);
    return values_[k - 1] + w * (values_[k] - values_[k - 1]);
}

double PiecewiseLinear::right_slope(double t) const {
    if (times_.size() < 2 || t >= times_.back() - kCanonicalTol || t < times_.front() - kCanonicalTol)
        return 0.0;
    auto it = std::upper_bound(times_.begin(), times_.end(), t + kCanonicalTol);
    std::size_t k = static_cast<std::size_t>(it - times_.begin());
    if (k == 0) k = 1;
    return (values_[k] - values_[k - 1]) / (times_[k] - times_[k - 1]);
}

double PiecewiseLinear::min_value() const {
    double m = std::numeric_limits<double>::infinity();
    for (double v : values_) m = std::min(m, v);
    return times_.empty() ? 0.0 : m;
}

PiecewiseLinear pl_sum(const std::vector<const PiecewiseLinear*>& fs) {
    std::vector<double> grid;
    for (const PiecewiseLinear* f : fs)
        for (double t : f->times()) grid.push_back(t);
    grid = dedupe_sorted(std::move(grid));
    if (grid.empty()) return PiecewiseLinear();
    std::vector<double> vals(grid.size(), 0.0);
    for (std::size_t k = 0; k < grid.size(); ++k)
        for (const PiecewiseLinear* f : fs) vals[k] += (*f)(grid[k]);
    return PiecewiseLinear::from_knots(std::move(grid), std::move(vals));
}

PiecewiseLinear pl_scale_add(const PiecewiseLinear& f, double scale, double offset) {
    if (f.empty()) return PiecewiseLinear::constant(offset);
    std::vector<double> vals = f.values();
    for (double& v : vals) v = v * scale + offset;
    return PiecewiseLinear::from_knots(f.times(), std::move(vals));
}

PiecewiseLinear pl_min(const PiecewiseLinear& a, const PiecewiseLinear& b) {
    if (a.empty()) return b;
    if (b.empty()) return a;
    std::vector<double> grid;
    for (double t : a.times()) grid.push_back(t);
    for (double t : b.times()) grid.push_back(t);
    double lo = std::min(a.times().front(), b.times().front());
    double hi = std::max(a.times().back(), b.times().back());
    for (double t : pl_crossings(a, b, Interval{lo, hi})) grid.push_back(t);
    grid = dedupe_sorted(std::move(grid));
    std::vector<double> vals(grid.size());
    for (std::size_t k = 0; k < grid.size(); ++k) vals[k] = std::min(a(grid[k]), b(grid[k]));
    return PiecewiseLinear::from_knots(std::move(grid), std::move(vals));
}

std::vector<double> pl_crossings(const PiecewiseLinear& a, const PiecewiseLinear& b, Interval iv) {
    std::vector<double> grid{iv.begin, iv.end};
    for (double t : a.times())
        if (t > iv.begin && t < iv.end) grid.push_back(t);
    for (double t : b.times())
        if (t > iv.begin && t < iv.end) grid.push_back(t);
    grid = dedupe_sorted(std::move(grid));
    std::vector<double> out;
    for (std::size_t k = 0; k < grid.size(); ++k) {
        double d0 = a(grid[k]) - b(grid[k]);
        if (d0 == 0.0 && grid[k] > iv.begin && grid[k] < iv.end) out.push_back(grid[k]);
        if (k + 1 < grid.size()) {
            double d1 = a(grid[k + 1]) - b(grid[k + 1]);
            if (d0 * d1 < 0.0) {
                double t = grid[k] + d0 / (d0 - d1) * (grid[k + 1] - grid[k]);
                if (t > iv.begin && t < iv.end) out.push_back(t);
            }
        }
    }
    return dedupe_sorted(std::move(out));
}

} // namespace dta
