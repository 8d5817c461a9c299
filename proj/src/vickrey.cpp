#include <algorithm>
#include <cmath>

#include "dta/edge_loading.hpp"
#include "dta/parallel.hpp"

namespace dta {

namespace {

struct EdgeLoadOutput {
    std::vector<RateFunction> out; // per commodity
    PiecewiseLinear z, cost, exit_time;
};

// Exact point-queue sweep for one edge. Events are inflow breakpoints plus
// queue-depletion times; between events the queue is linear and the outflow
// constant, so the output is exactly piecewise-constant.
EdgeLoadOutput load_edge(double nu, double c0, const std::vector<const RateFunction*>& fin,
                         double horizon) {
    std::vector<double> ones(fin.size(), 1.0);
    RateFunction g = combine(fin, ones);

    // march points: 0, horizon, inflow breakpoints inside (0, horizon)
    std::vector<double> marks{0.0, horizon};
    for (double t : g.times())
        if (t > 0.0 && t < horizon) marks.push_back(t);
    std::sort(marks.begin(), marks.end());
    marks.erase(std::unique(marks.begin(), marks.end()), marks.end());

    std::vector<double> z_times{0.0}, z_vals{0.0};
    std::vector<double> h_times{0.0}, h_vals; // aggregate outflow in entry-time domain
    double z = 0.0;

    auto emit = [&](double upto, double z_end, double out_rate) {
        h_vals.push_back(out_rate);
        h_times.push_back(upto);
        z_times.push_back(upto);
        z_vals.push_back(z_end);
        z = z_end;
    };

    for (std::size_t k = 0; k + 1 < marks.size(); ++k) {
        double a = marks[k], b = marks[k + 1];
        double rho = g(a);
        while (a < b) {
            if (z > 0.0 && rho < nu) {
                double t_dep = a + z / (nu - rho);
                if (t_dep < b) {
                    emit(t_dep, 0.0, nu);
                    a = t_dep;
                    continue;
                }
                emit(b, z - (nu - rho) * (b - a), nu);
            } else if (z > 0.0) { // rho >= nu: queue persists or grows
                emit(b, z + (rho - nu) * (b - a), nu);
            } else if (rho > nu) { // queue starts growing from zero
                emit(b, (rho - nu) * (b - a), nu);
            } else { // empty queue, no congestion
                emit(b, 0.0, rho);
            }
            a = b;
        }
    }

    // shift outflow by the free-flow time and clip to the horizon
    std::vector<double> out_times = h_times;
    for (double& t : out_times) t += c0;
    RateFunction h = restrict(RateFunction::from_breakpoints(std::move(out_times), h_vals),
                              Interval{0.0, horizon});

    EdgeLoadOutput result;
    result.z = PiecewiseLinear::from_knots(z_times, z_vals);
    result.cost = pl_scale_add(result.z, 1.0 / nu, c0);
    {
        std::vector<double> ts = z_times, vs(z_times.size());
        for (std::size_t k = 0; k < ts.size(); ++k) vs[k] = ts[k] + result.cost(ts[k]);
        result.exit_time = PiecewiseLinear::from_knots(std::move(ts), std::move(vs));
    }

    // FIFO commodity split: mass leaving at s entered at the smallest time xi
    // with F_in(xi) = F_out(s); within each refined piece the entering parcel
    // has constant composition, so one evaluation per piece is exact.
    result.out.resize(fin.size());
    if (fin.size() == 1) {
        result.out[0] = h;
        return result;
    }
    if (h.is_zero()) return result;

    CumulativeFunction F_in = cumulative(g);
    CumulativeFunction F_out = cumulative(h);
    std::vector<double> grid = h.times();
    const double lo = grid.front(), hi = grid.back();
    // composition can change where the aggregate does not: refine by the exit
    // times of every per-commodity breakpoint
    for (const RateFunction* f : fin) {
        for (double t : f->times()) {
            double s = result.exit_time(t);
            if (s > lo && s < hi) grid.push_back(s);
        }
    }
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end(),
                           [](double x, double y) { return y - x <= kCanonicalTol; }),
               grid.end());

    std::vector<std::vector<double>> vals(fin.size(), std::vector<double>(grid.size() - 1, 0.0));
    for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
        double rate = h(grid[k]);
        if (rate <= 0.0) continue;
        double mid = 0.5 * (grid[k] + grid[k + 1]);
        double y = std::min(F_out(mid), F_in.total());
        double xi = F_in.inverse_at(y);
        double agg = g(xi);
        if (agg <= 0.0) continue; // boundary parcel: no mass attributable
        // The largest share takes the remainder so the rounded shares can
        // never sum above the service rate.
        std::size_t big = 0;
        double best = -1.0;
        for (std::size_t i = 0; i < fin.size(); ++i) {
            const double share = (*fin[i])(xi);
            if (share > best) {
                best = share;
                big = i;
            }
        }
        double acc = 0.0;
        for (std::size_t i = 0; i < fin.size(); ++i) {
            if (i == big) continue;
            vals[i][k] = rate * (*fin[i])(xi) / agg;
            acc += vals[i][k];
        }
        vals[big][k] = std::max(0.0, rate - acc);
    }
    for (std::size_t i = 0; i < fin.size(); ++i)
        result.out[i] = RateFunction::from_breakpoints(grid, std::move(vals[i]));
    return result;
}

} // namespace

LoadResult vickrey_load(const Network& net, const Flow& inflows, double horizon) {
    if (!std::isfinite(horizon) || horizon <= 0.0)
        throw Error(errc::invalid_input, "horizon must be positive and finite");
    if (inflows.edge_count() != net.edge_count() || inflows.commodity_count() != net.commodity_count())
        throw Error(errc::invalid_input, "flow dimensions do not match the network");

    LoadResult r;
    r.flow = inflows;
    r.state.model = "vickrey";
    r.state.horizon = horizon;
    int E = net.edge_count(), I = net.commodity_count();
    r.state.backlog.resize(static_cast<std::size_t>(E));
    r.state.cost.resize(static_cast<std::size_t>(E));
    r.state.exit_time.resize(static_cast<std::size_t>(E));

    parallel_for(E, [&](int e) {
        std::vector<const RateFunction*> fin;
        fin.reserve(static_cast<std::size_t>(I));
        for (int i = 0; i < I; ++i) fin.push_back(&inflows.inflow(e, i));
        EdgeLoadOutput out = load_edge(net.edge(e).capacity, net.edge(e).free_flow_time, fin, horizon);
        for (int i = 0; i < I; ++i) r.flow.outflow(e, i) = std::move(out.out[static_cast<std::size_t>(i)]);
        r.state.backlog[static_cast<std::size_t>(e)] = std::move(out.z);
        r.state.cost[static_cast<std::size_t>(e)] = std::move(out.cost);
        r.state.exit_time[static_cast<std::size_t>(e)] = std::move(out.exit_time);
    });
    return r;
}

} // namespace dta
