#include "dta/solver.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "dta/errors.hpp"

namespace dta {

namespace {

constexpr double kTimeTol = 1e-12;
constexpr double kQueueTol = 1e-9;
constexpr double kStallFactor = 0.98;
constexpr int kStallWindow = 8;

double sup_distance(const std::vector<double>& a, const std::vector<double>& b) {
    double worst = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) worst = std::max(worst, std::abs(a[k] - b[k]));
    return worst;
}

} // namespace

ContractionOutcome banach_iterate(
    const std::function<std::vector<double>(const std::vector<double>&)>& op,
    std::vector<double>& x, double tol, int max_iter) {
    ContractionOutcome out;
    bool seen_threshold = false;
    double threshold_low = 0.0;
    for (int k = 1; k <= max_iter; ++k) {
        std::vector<double> next = op(x);
        if (next.size() != x.size()) {
            throw Error(errc::invalid_input, "operator changed the state dimension");
        }
        const double r = sup_distance(x, next);
        x = std::move(next);
        out.history.push_back(r);
        out.iterations = k;
        out.residual = r;
        if (seen_threshold && r > threshold_low + 1e-15) out.monotone_after_threshold = false;
        if (r < tol * 10.0) {
            seen_threshold = true;
            threshold_low = r;
        }
        if (r <= tol) {
            out.converged = true;
            return out;
        }
        if (k >= kStallWindow + 1 &&
            r >= kStallFactor * out.history[static_cast<std::size_t>(k - 1 - kStallWindow)]) {
            out.stalled = true;
            return out;
        }
    }
    return out;
}

StepControllerResult run_windows(WindowedProblem& prob, const StepControllerConfig& cfg) {
    StepControllerResult res;
    const double T = prob.horizon();
    double start = 0.0;
    double alpha = cfg.alpha0;
    int guard = 0;
    while (start < T - kTimeTol) {
        if (++guard > 100000) {
            res.failure = "window controller exceeded 100000 windows";
            res.reached = start;
            return res;
        }
        const double end = std::min(start + alpha, T);
        prob.begin_window(start, end);
        WindowLog log;
        log.start = start;
        log.end = end;
        log.alpha = alpha;
        bool seen_threshold = false;
        double threshold_low = 0.0;
        bool ok = false;
        for (int k = 1; k <= cfg.max_iter; ++k) {
            const double r = prob.iterate();
            ++res.total_iterations;
            log.history.push_back(r);
            log.iterations = k;
            log.residual = r;
            if (seen_threshold && r > threshold_low + 1e-15) log.monotone_after_threshold = false;
            if (r < cfg.tol * 10.0) {
                seen_threshold = true;
                threshold_low = r;
            }
            // Accept once the distance to the window's fixed point — not just
            // the last step — is inside tolerance. Under contraction with
            // factor q the remaining error is at most r*q/(1-q); q is
            // estimated from the residual history and clamped so a flat or
            // noisy tail cannot fake convergence. While contraction stays
            // fast, keep polishing toward the exact fixed point: committed
            // errors feed every later window through the integrated queue
            // state, so cheap extra accuracy here is never wasted.
            double q_hat = 0.5;
            if (k >= 2 && log.history[static_cast<std::size_t>(k - 2)] > 0.0) {
                q_hat = r / log.history[static_cast<std::size_t>(k - 2)];
                q_hat = std::min(0.95, std::max(0.05, q_hat));
            }
            const double est = r * q_hat / (1.0 - q_hat);
            if (r <= 0.0 || (est <= 0.5 * cfg.tol && (q_hat >= 0.6 || r <= 1e-12))) {
                ok = true;
                break;
            }
            if (k >= kStallWindow + 1 &&
                r >= kStallFactor * log.history[static_cast<std::size_t>(k - 1 - kStallWindow)]) {
                log.stalled = true;
                break;
            }
        }
        if (ok) {
            prob.commit();
            log.accepted = true;
            res.windows.push_back(std::move(log));
            start = end;
            alpha = std::min(alpha * cfg.grow, cfg.alpha0);
        } else {
            prob.abandon();
            res.windows.push_back(std::move(log));
            alpha *= 0.5;
            if (alpha < cfg.alpha_min - kTimeTol) {
                char buf[160];
                std::snprintf(buf, sizeof(buf),
                              "fixed-point window starting at t=%.6f failed to contract above "
                              "the minimum step",
                              start);
                res.failure = buf;
                res.reached = start;
                return res;
            }
        }
    }
    res.converged = true;
    res.reached = T;
    return res;
}

void SolverConfig::validate() const {
    if (!(alpha_min > 0.0) || alpha_min > alpha0) {
        throw Error(errc::invalid_input, "need 0 < alpha_min <= alpha0");
    }
    if (!(tol_fp > 0.0)) throw Error(errc::invalid_input, "fixed-point tolerance must be positive");
    if (!(routing_step > 0.0) || routing_step > alpha_min + kTimeTol) {
        throw Error(errc::invalid_input, "routing step must be positive and at most alpha_min");
    }
    if (max_iter < 1) throw Error(errc::invalid_input, "max_iter must be at least 1");
    if (mc_samples < 1) throw Error(errc::invalid_input, "mc_samples must be at least 1");
    if (routing != "dpe" && routing != "spe" && routing != "stochastic-ide") {
        throw Error(errc::invalid_input, "unknown routing mode: '" + routing + "'");
    }
    if (!(distance_p >= 1.0)) {
        throw Error(errc::invalid_input, "residual norm order must be at least 1");
    }
    if (!(tie_tol > 0.0)) throw Error(errc::invalid_input, "tie tolerance must be positive");
}

const std::map<int, double>* SplitSchedule::at(double theta) const {
    if (cell_starts.empty() || theta < cell_starts.front() - kTimeTol || theta >= end + kTimeTol) {
        return nullptr;
    }
    auto it = std::upper_bound(cell_starts.begin(), cell_starts.end(), theta + kTimeTol);
    const std::size_t idx = static_cast<std::size_t>(it - cell_starts.begin());
    return &fractions[idx == 0 ? 0 : idx - 1];
}

namespace {

// ---- piecewise-linear scratch helpers -------------------------------------

PiecewiseLinear pl_lincom(const std::vector<std::pair<const PiecewiseLinear*, double>>& terms) {
    std::vector<double> knots;
    for (const auto& [f, s] : terms) {
        (void)s;
        for (double t : f->times()) knots.push_back(t);
    }
    std::sort(knots.begin(), knots.end());
    knots.erase(std::unique(knots.begin(), knots.end(),
                            [](double a, double b) { return std::abs(a - b) <= kTimeTol; }),
                knots.end());
    auto value = [&terms](double t) {
        double v = 0.0;
        for (const auto& [f, s] : terms) v += s * (*f)(t);
        return v;
    };
    if (knots.empty()) return PiecewiseLinear::constant(value(0.0));
    if (knots.size() == 1) return PiecewiseLinear::constant(value(knots.front()));
    std::vector<double> vals;
    vals.reserve(knots.size());
    for (double t : knots) vals.push_back(value(t));
    return PiecewiseLinear::from_knots(std::move(knots), std::move(vals));
}

// Minimum predicted continuation cost from node v for commodity i, as a
// function of time, from the current edge cost curves.
PiecewiseLinear continuation_pl(const Network& net, const EdgeState& state, int v, int i) {
    if (v == net.commodity(i).sink) return PiecewiseLinear();
    const auto& paths = net.paths(v, i);
    PiecewiseLinear best;
    bool have = false;
    for (const Path& p : paths) {
        std::vector<const PiecewiseLinear*> costs;
        for (int e : p.edges) costs.push_back(&state.cost[static_cast<std::size_t>(e)]);
        PiecewiseLinear total = pl_sum(costs);
        best = have ? pl_min(best, total) : std::move(total);
        have = true;
    }
    return best;
}

struct ContinuationCache {
    const Network& net;
    const EdgeState& state;
    std::map<std::pair<int, int>, PiecewiseLinear> store;

    const PiecewiseLinear& get(int v, int i) {
        auto key = std::make_pair(v, i);
        auto it = store.find(key);
        if (it == store.end()) it = store.emplace(key, continuation_pl(net, state, v, i)).first;
        return it->second;
    }
};

// ---- the network extension problem -----------------------------------------

struct CellRecord {
    double t0 = 0.0;
    std::map<int, double> fractions;
};
using CellList = std::vector<CellRecord>;

class NetworkProblem final : public WindowedProblem {
public:
    NetworkProblem(const Network& net, const SolverConfig& cfg,
                   std::shared_ptr<const LoadingModel> model,
                   std::shared_ptr<const Predictor> pred)
        : net_(net),
          cfg_(cfg),
          model_(std::move(model)),
          pred_(std::move(pred)),
          committed_(net.edge_count(), net.commodity_count()),
          cur_(net.edge_count(), net.commodity_count()) {
        sched_.resize(static_cast<std::size_t>(net.node_count()));
        last_split_.resize(static_cast<std::size_t>(net.node_count()));
        for (int v = 0; v < net.node_count(); ++v) {
            sched_[static_cast<std::size_t>(v)].resize(
                static_cast<std::size_t>(net.commodity_count()));
            last_split_[static_cast<std::size_t>(v)].resize(
                static_cast<std::size_t>(net.commodity_count()));
        }
    }

    double horizon() const override { return net_.horizon(); }

    void begin_window(double start, double end) override {
        start_ = start;
        end_ = end;
        cur_ = committed_;
        pending_.clear();
        if (!cfg_.zero_initial_guess && start > kTimeTol) {
            // Constant extrapolation of the committed inflow rates.
            for (int e = 0; e < net_.edge_count(); ++e) {
                for (int i = 0; i < net_.commodity_count(); ++i) {
                    const double tail = evaluate(committed_.inflow(e, i), start - 1e-9);
                    if (tail <= kTimeTol) continue;
                    auto pieces = committed_.inflow(e, i).pieces();
                    pieces.push_back({start, end, tail});
                    cur_.inflow(e, i) = RateFunction::from_pieces(pieces);
                }
            }
        }
    }

    double iterate() override {
        // Trial loading horizon: a predictor that prices with state at the
        // decision time alone never looks past the window, so the loading can
        // stop there. Loading further would run the physics into the
        // artificial inflow cliff where the trial rates end, which a
        // volume-delay edge answers by folding its exit times.
        const double load_to =
            std::min(net_.horizon(), std::max(end_, pred_->state_demand(end_, net_.horizon())));
        const LoadResult lr = model_->load(net_, cur_, load_to);
        ContinuationCache cache{net_, lr.state, {}};

        // Routing grid: regular steps plus every event inside the window.
        std::vector<double> grid;
        for (int k = 0; start_ + k * cfg_.routing_step < end_ - kTimeTol; ++k) {
            grid.push_back(start_ + k * cfg_.routing_step);
        }
        grid.push_back(end_);
        auto add_interior = [&](double t) {
            if (t > start_ + kTimeTol && t < end_ - kTimeTol) grid.push_back(t);
        };
        for (int e = 0; e < net_.edge_count(); ++e) {
            for (double t : lr.state.backlog[static_cast<std::size_t>(e)].times()) add_interior(t);
            for (int i = 0; i < net_.commodity_count(); ++i) {
                for (double t : lr.flow.outflow(e, i).times()) add_interior(t);
            }
        }
        for (int i = 0; i < net_.commodity_count(); ++i) {
            for (const auto& [v, u] : net_.commodity(i).inflows) {
                (void)v;
                for (double t : u.times()) add_interior(t);
            }
        }
        for (int i = 0; i < net_.commodity_count(); ++i) {
            for (int v = 0; v < net_.node_count(); ++v) {
                if (!net_.carries_flow(v, i) || v == net_.commodity(i).sink) continue;
                // Active-set changes happen where first-edge continuations cross.
                std::vector<int> firsts;
                std::vector<PiecewiseLinear> through;
                for (const Path& p : net_.paths(v, i)) {
                    if (firsts.empty() || firsts.back() != p.edges.front()) {
                        if (std::find(firsts.begin(), firsts.end(), p.edges.front()) !=
                            firsts.end()) {
                            continue;
                        }
                        firsts.push_back(p.edges.front());
                        through.push_back(pl_lincom(
                            {{&lr.state.cost[static_cast<std::size_t>(p.edges.front())], 1.0},
                             {&cache.get(net_.edge(p.edges.front()).to, i), 1.0}}));
                    }
                }
                for (std::size_t a = 0; a + 1 < through.size(); ++a) {
                    for (std::size_t b2 = a + 1; b2 < through.size(); ++b2) {
                        for (double t :
                             pl_crossings(through[a], through[b2], {start_, end_})) {
                            add_interior(t);
                        }
                    }
                }
            }
        }
        std::sort(grid.begin(), grid.end());
        grid.erase(std::unique(grid.begin(), grid.end(),
                               [](double a, double b) { return std::abs(a - b) <= kTimeTol; }),
                   grid.end());

        // Split every node inflow across the window cells.
        Flow next = committed_;
        std::vector<std::vector<CellList>> records(static_cast<std::size_t>(net_.node_count()));
        for (auto& r : records) r.resize(static_cast<std::size_t>(net_.commodity_count()));
        // window values per (e, i), aligned with grid cells
        const std::size_t cells = grid.size() - 1;
        std::vector<std::vector<double>> win_vals(
            static_cast<std::size_t>(net_.edge_count() * net_.commodity_count()),
            std::vector<double>(cells, 0.0));

        for (int i = 0; i < net_.commodity_count(); ++i) {
            for (int v = 0; v < net_.node_count(); ++v) {
                if (!net_.carries_flow(v, i) || v == net_.commodity(i).sink) continue;
                if (net_.paths(v, i).empty()) continue;
                const RateFunction b_fn = node_inflow(lr, v, i);
                std::map<int, double> prev = last_split_[static_cast<std::size_t>(v)]
                                                        [static_cast<std::size_t>(i)];
                auto& rec = records[static_cast<std::size_t>(v)][static_cast<std::size_t>(i)];
                for (std::size_t c = 0; c < cells; ++c) {
                    const double t0 = grid[c];
                    const double b_val = evaluate(b_fn, t0);
                    std::map<int, double> frac =
                        cell_split(lr, cache, v, i, t0, b_val, prev.empty() ? nullptr : &prev);
                    for (const auto& [e, f] : frac) {
                        win_vals[static_cast<std::size_t>(e * net_.commodity_count() + i)][c] =
                            f * b_val;
                    }
                    rec.push_back({t0, frac});
                    prev = frac;
                }
            }
        }

        // Assemble the next iterate and measure the step.
        double residual = 0.0;
        const Interval window{start_, end_};
        for (int e = 0; e < net_.edge_count(); ++e) {
            for (int i = 0; i < net_.commodity_count(); ++i) {
                const auto& vals =
                    win_vals[static_cast<std::size_t>(e * net_.commodity_count() + i)];
                auto pieces = committed_.inflow(e, i).pieces();
                for (std::size_t c = 0; c < cells; ++c) {
                    if (vals[c] > 0.0) pieces.push_back({grid[c], grid[c + 1], vals[c]});
                }
                next.inflow(e, i) = RateFunction::from_pieces(pieces);
                residual = std::max(residual, distance(cur_.inflow(e, i), next.inflow(e, i),
                                                       window, cfg_.distance_p));
            }
        }
        cur_ = std::move(next);
        pending_ = std::move(records);
        return residual;
    }

    void commit() override {
        committed_ = cur_;
        reached_ = end_;
        if (pending_.empty()) return;
        for (int v = 0; v < net_.node_count(); ++v) {
            for (int i = 0; i < net_.commodity_count(); ++i) {
                auto& rec = pending_[static_cast<std::size_t>(v)][static_cast<std::size_t>(i)];
                if (rec.empty()) continue;
                auto& sched = sched_[static_cast<std::size_t>(v)][static_cast<std::size_t>(i)];
                for (auto& cell : rec) {
                    sched.push_back(std::move(cell));
                }
                last_split_[static_cast<std::size_t>(v)][static_cast<std::size_t>(i)] =
                    sched.back().fractions;
            }
        }
        pending_.clear();
    }

    void abandon() override {
        cur_ = committed_;
        pending_.clear();
    }

    const Flow& committed() const { return committed_; }
    double reached() const { return reached_; }

    std::vector<SplitSchedule> schedules() const {
        std::vector<SplitSchedule> out;
        for (int v = 0; v < net_.node_count(); ++v) {
            for (int i = 0; i < net_.commodity_count(); ++i) {
                const auto& rec =
                    sched_[static_cast<std::size_t>(v)][static_cast<std::size_t>(i)];
                if (rec.empty()) continue;
                SplitSchedule s;
                s.v = v;
                s.i = i;
                s.end = reached_;
                for (const auto& cell : rec) {
                    s.cell_starts.push_back(cell.t0);
                    s.fractions.push_back(cell.fractions);
                }
                out.push_back(std::move(s));
            }
        }
        return out;
    }

private:
    RateFunction node_inflow(const LoadResult& lr, int v, int i) const {
        std::vector<const RateFunction*> terms;
        std::vector<double> coeffs;
        const RateFunction* u = net_.commodity(i).inflow_at(v);
        if (u != nullptr) {
            terms.push_back(u);
            coeffs.push_back(1.0);
        }
        for (int e : net_.in_edges(v)) {
            terms.push_back(&lr.flow.outflow(e, i));
            coeffs.push_back(1.0);
        }
        if (terms.empty()) return RateFunction();
        return combine(terms, coeffs);
    }

    std::map<int, double> cell_split(const LoadResult& lr, ContinuationCache& cache, int v, int i,
                                     double t0, double b_val, const std::map<int, double>* prev) {
        // Only one way forward: no choice to resolve.
        {
            int single = -1;
            bool multiple = false;
            for (const Path& p : net_.paths(v, i)) {
                if (single == -1) {
                    single = p.edges.front();
                } else if (single != p.edges.front()) {
                    multiple = true;
                    break;
                }
            }
            if (!multiple && single >= 0) return {{single, 1.0}};
        }
        if (cfg_.routing == "dpe") {
            const std::vector<int> active =
                active_edges(net_, *pred_, lr.state, v, i, t0, cfg_.tie_tol);
            if (b_val <= 1e-12) return dpe_split(active, prev, cfg_.tie_policy);
            // Allocate so the tied continuations' costs keep rising together:
            // each active edge responds with a flat-then-linear cost rate.
            std::vector<CostRateArm> arms;
            std::vector<double> weights;
            double prev_mass = 0.0;
            for (int e : active) {
                if (prev != nullptr) {
                    auto it = prev->find(e);
                    if (it != prev->end()) prev_mass += std::max(0.0, it->second);
                }
            }
            for (int e : active) {
                const Edge& edge = net_.edge(e);
                double other = 0.0;
                for (int j = 0; j < net_.commodity_count(); ++j) {
                    if (j != i) other += evaluate(cur_.inflow(e, j), t0);
                }
                const double drift = cache.get(edge.to, i).right_slope(t0);
                CostRateArm arm;
                arm.inv_capacity = 1.0 / edge.capacity;
                const bool queued =
                    lr.state.model == "vickrey"
                        ? lr.state.backlog[static_cast<std::size_t>(e)](t0) > kQueueTol
                        : true;
                if (lr.state.model == "vickrey" && !queued) {
                    arm.level = drift;
                    arm.free = std::max(0.0, edge.capacity - other);
                } else if (lr.state.model == "vickrey") {
                    arm.level = drift + (other - edge.capacity) / edge.capacity;
                    arm.free = 0.0;
                } else {
                    // volume dynamics: the cost rate tracks inflow minus outflow
                    const double out = evaluate(lr.flow.aggregate_outflow(e), t0);
                    arm.level = drift + (other - out) / edge.capacity;
                    arm.free = 0.0;
                }
                arms.push_back(arm);
                double w;
                if (prev != nullptr && prev_mass > 1e-12) {
                    auto it = prev->find(e);
                    w = it != prev->end() ? std::max(0.0, it->second) : 0.0;
                } else {
                    w = cfg_.tie_policy == TiePolicy::sticky ? edge.capacity : 1.0;
                }
                weights.push_back(w);
            }
            const std::vector<double> alloc =
                balanced_allocation(arms, b_val, weights, cfg_.tie_tol);
            double total = 0.0;
            for (double x : alloc) total += x;
            std::map<int, double> frac;
            for (std::size_t k = 0; k < active.size(); ++k) {
                frac[active[k]] = total > 0.0 ? alloc[k] / total : 0.0;
            }
            return frac;
        }
        // Perceived-choice routing: expected split of the sampled best sets.
        // The query is pinned to the routing lattice's left endpoint, so the
        // split is held constant across the whole lattice cell and cells that
        // iterate-specific knots carve out of it inherit the same draw. Knots
        // move between iterates; letting them reseed the sampler would make
        // the converged flow depend on the iteration path at sampling-noise
        // scale instead of tolerance scale.
        const double rstep = cfg_.routing_step;
        double theta_q = start_ + std::floor((t0 - start_ + kTimeTol) / rstep) * rstep;
        if (theta_q > t0 + kTimeTol) theta_q -= rstep;
        if (theta_q < start_) theta_q = start_;
        const ActiveSetProbabilities pi = estimate_pi(net_, *pred_, lr.state, cfg_.noise, v, i,
                                                      theta_q, cfg_.mc_samples, cfg_.seed);
        const std::vector<double> r = stochastic_split(pi);
        std::map<int, double> frac;
        for (std::size_t j = 0; j < pi.out_edges.size(); ++j) {
            if (r[j] > 0.0) frac[pi.out_edges[j]] = r[j];
        }
        return frac;
    }

    const Network& net_;
    const SolverConfig& cfg_;
    std::shared_ptr<const LoadingModel> model_;
    std::shared_ptr<const Predictor> pred_;

    Flow committed_;
    Flow cur_;
    double reached_ = 0.0;
    double start_ = 0.0, end_ = 0.0;
    std::vector<std::vector<CellList>> sched_;   // [v][i] committed cells
    std::vector<std::vector<CellList>> pending_; // [v][i] cells of the last iterate
    std::vector<std::vector<std::map<int, double>>> last_split_;
};

// Re-propagate flows holding the committed split functions fixed, so the
// final flow satisfies node balance and loading consistency to rounding
// rather than to the fixed-point tolerance.
int closure_passes(const Network& net, const LoadingModel& model,
                   const std::vector<SplitSchedule>& schedules, Flow& cur, double T) {
    const double c0min = net.min_free_flow_time();
    int max_sweeps = c0min > 0.0 ? static_cast<int>(std::ceil(T / c0min)) + 2 : 8;
    max_sweeps = std::min(max_sweeps, 64);
    std::vector<const SplitSchedule*> by_node(
        static_cast<std::size_t>(net.node_count() * net.commodity_count()), nullptr);
    for (const auto& s : schedules) {
        by_node[static_cast<std::size_t>(s.v * net.commodity_count() + s.i)] = &s;
    }
    int sweeps = 0;
    for (int pass = 0; pass < max_sweeps; ++pass) {
        const LoadResult lr = model.load(net, cur, T);
        Flow next(net.edge_count(), net.commodity_count());
        for (int i = 0; i < net.commodity_count(); ++i) {
            for (int v = 0; v < net.node_count(); ++v) {
                const SplitSchedule* sched =
                    by_node[static_cast<std::size_t>(v * net.commodity_count() + i)];
                if (sched == nullptr) continue;
                std::vector<const RateFunction*> terms;
                std::vector<double> coeffs;
                const RateFunction* u = net.commodity(i).inflow_at(v);
                if (u != nullptr) {
                    terms.push_back(u);
                    coeffs.push_back(1.0);
                }
                for (int e : net.in_edges(v)) {
                    terms.push_back(&lr.flow.outflow(e, i));
                    coeffs.push_back(1.0);
                }
                if (terms.empty()) continue;
                const RateFunction b_fn = combine(terms, coeffs);
                if (b_fn.is_zero()) continue;

                std::vector<double> grid = sched->cell_starts;
                grid.push_back(sched->end);
                for (double t : b_fn.times()) {
                    if (t > grid.front() + kTimeTol && t < grid.back() - kTimeTol) {
                        grid.push_back(t);
                    }
                }
                std::sort(grid.begin(), grid.end());
                grid.erase(
                    std::unique(grid.begin(), grid.end(),
                                [](double a, double b) { return std::abs(a - b) <= kTimeTol; }),
                    grid.end());
                for (std::size_t c = 0; c + 1 < grid.size(); ++c) {
                    const double t0 = grid[c];
                    const std::map<int, double>* frac = sched->at(t0);
                    if (frac == nullptr) continue;
                    const double b_val = evaluate(b_fn, t0);
                    if (b_val <= 0.0) continue;
                    for (const auto& [e, f] : *frac) {
                        if (f <= 0.0) continue;
                        auto pieces = next.inflow(e, i).pieces();
                        pieces.push_back({t0, grid[c + 1], f * b_val});
                        next.inflow(e, i) = RateFunction::from_pieces(pieces);
                    }
                }
            }
        }
        double change = 0.0;
        const Interval all{0.0, T};
        for (int e = 0; e < net.edge_count(); ++e) {
            for (int i = 0; i < net.commodity_count(); ++i) {
                change = std::max(change,
                                  distance(cur.inflow(e, i), next.inflow(e, i), all, kInfNorm));
            }
        }
        cur = std::move(next);
        ++sweeps;
        if (change <= 1e-14) break;
    }
    return sweeps;
}

} // namespace

SolveResult solve(const Network& net, const SolverConfig& cfg) {
    cfg.validate();
    auto model = make_loading_model(cfg.loading_model, cfg.phys_step);
    auto pred = parse_predictor(cfg.predictor);
    if (!pred->is_causal()) {
        throw Error(errc::invalid_input,
                    "the '" + cfg.predictor +
                        "' predictor needs physics beyond the stepping window; use "
                        "composite:<cutoff> or constant");
    }
    NetworkProblem prob(net, cfg, model, pred);
    StepControllerConfig scc;
    scc.alpha0 = cfg.alpha0;
    scc.alpha_min = cfg.alpha_min;
    scc.tol = cfg.tol_fp;
    scc.max_iter = cfg.max_iter;
    const StepControllerResult sres = run_windows(prob, scc);

    SolveResult out;
    out.windows = sres.windows;
    out.converged = sres.converged;
    out.reached = sres.reached;
    out.failure = sres.failure;
    out.total_iterations = sres.total_iterations;
    out.splits = prob.schedules();
    for (int i = 0; i < net.commodity_count(); ++i) {
        for (const auto& [v, u] : net.commodity(i).inflows) {
            (void)v;
            out.total_inflow_mass += u.total_mass();
        }
    }

    Flow cur = prob.committed();
    if (!sres.converged) {
        // Partial result: the committed prefix is still a valid flow on
        // [0, reached]; expose it without equilibrium metrics.
        const double T = std::max(sres.reached, kTimeTol);
        const LoadResult lr = model->load(net, sres.reached > kTimeTol ? cur : Flow(net.edge_count(), net.commodity_count()), T);
        out.flow = lr.flow;
        out.state = lr.state;
        return out;
    }

    const double T = net.horizon();
    out.closure_sweeps = closure_passes(net, *model, out.splits, cur, T);
    const LoadResult lr = model->load(net, cur, T);
    out.flow = lr.flow;
    out.state = lr.state;

    out.conservation = conservation_residual(net, out.flow, T);
    out.consistency = consistency_residual(net, out.flow, *model, T);
    for (const auto& row : out.conservation) {
        for (double x : row) out.max_conservation_per_unit = std::max(out.max_conservation_per_unit, x / T);
    }
    for (const auto& row : out.consistency) {
        for (double x : row) out.max_consistency_per_unit = std::max(out.max_consistency_per_unit, x / T);
    }
    out.dpe_gap_value = dpe_gap(net, out.flow, out.state);
    if (cfg.routing != "dpe") {
        out.has_spe_gap = true;
        out.spe = spe_gap(net, out.flow, out.state, *pred, cfg.noise, cfg.mc_samples,
                          cfg.seed ^ 0xa5a5a5a5a5a5a5a5ull, cfg.routing_step, cfg.tol_fp);
    }
    return out;
}

double dpe_gap(const Network& net, const Flow& flow, const EdgeState& state) {
    ContinuationCache cache{net, state, {}};
    const double T = state.horizon;
    double gap = 0.0;
    for (int i = 0; i < net.commodity_count(); ++i) {
        for (int e = 0; e < net.edge_count(); ++e) {
            const RateFunction& f = flow.inflow(e, i);
            if (f.is_zero()) continue;
            const Edge& edge = net.edge(e);
            const int head = edge.to;
            const bool head_ok =
                head == net.commodity(i).sink || !net.paths(head, i).empty();
            const bool tail_ok = !net.paths(edge.from, i).empty();
            if (!head_ok || !tail_ok) {
                if (f.total_mass() > 1e-12) return std::numeric_limits<double>::infinity();
                continue;
            }
            const PiecewiseLinear& a_head = cache.get(head, i);
            const PiecewiseLinear& a_tail = cache.get(edge.from, i);
            const PiecewiseLinear through = pl_lincom(
                {{&state.cost[static_cast<std::size_t>(e)], 1.0}, {&a_head, 1.0}});
            const PiecewiseLinear excess = pl_lincom({{&through, 1.0}, {&a_tail, -1.0}});

            std::vector<double> grid;
            grid.push_back(0.0);
            grid.push_back(T);
            for (double t : excess.times()) {
                if (t > kTimeTol && t < T - kTimeTol) grid.push_back(t);
            }
            for (double t : f.times()) {
                if (t > kTimeTol && t < T - kTimeTol) grid.push_back(t);
            }
            for (double t : pl_crossings(excess, PiecewiseLinear(), {0.0, T})) {
                if (t > kTimeTol && t < T - kTimeTol) grid.push_back(t);
            }
            std::sort(grid.begin(), grid.end());
            grid.erase(
                std::unique(grid.begin(), grid.end(),
                            [](double a, double b) { return std::abs(a - b) <= kTimeTol; }),
                grid.end());
            for (std::size_t c = 0; c + 1 < grid.size(); ++c) {
                const double rate = evaluate(f, grid[c]);
                if (rate <= 0.0) continue;
                const double d0 = std::max(0.0, excess(grid[c]));
                const double d1 = std::max(0.0, excess(grid[c + 1]));
                gap += rate * 0.5 * (d0 + d1) * (grid[c + 1] - grid[c]);
            }
        }
    }
    return gap;
}

SpeGapReport spe_gap(const Network& net, const Flow& flow, const EdgeState& state,
                     const Predictor& pred, const NoiseModel& noise, int samples,
                     std::uint64_t seed, double step, double tol_fp) {
    SpeGapReport rep;
    const double T = state.horizon;
    double weighted_se = 0.0;
    for (int i = 0; i < net.commodity_count(); ++i) {
        for (int v = 0; v < net.node_count(); ++v) {
            if (!net.carries_flow(v, i) || v == net.commodity(i).sink) continue;
            if (net.paths(v, i).empty()) continue;
            std::vector<const RateFunction*> terms;
            std::vector<double> coeffs;
            const RateFunction* u = net.commodity(i).inflow_at(v);
            if (u != nullptr) {
                terms.push_back(u);
                coeffs.push_back(1.0);
            }
            for (int e : net.in_edges(v)) {
                terms.push_back(&flow.outflow(e, i));
                coeffs.push_back(1.0);
            }
            if (terms.empty()) continue;
            const RateFunction b_fn = combine(terms, coeffs);
            for (double t0 = 0.0; t0 < T - kTimeTol; t0 += step) {
                const double t1 = std::min(t0 + step, T);
                const double b_val = evaluate(b_fn, t0);
                if (b_val <= 1e-12) continue;
                const auto pi =
                    estimate_pi(net, pred, state, noise, v, i, t0, samples, seed);
                const std::vector<double> mandated = stochastic_split(pi);
                std::vector<double> realized(pi.out_edges.size(), 0.0);
                double rsum = 0.0;
                for (std::size_t j = 0; j < pi.out_edges.size(); ++j) {
                    realized[j] = evaluate(flow.inflow(pi.out_edges[j], i), t0) / b_val;
                    rsum += realized[j];
                }
                double l1 = 0.0;
                for (std::size_t j = 0; j < pi.out_edges.size(); ++j) {
                    l1 += std::abs(realized[j] - mandated[j]);
                }
                const double len = t1 - t0;
                rep.gap += len * b_val * l1;
                double se_sum = 0.0;
                for (double se : pi.std_error) se_sum += se;
                weighted_se += len * b_val * se_sum;
                rep.max_std_error = std::max(rep.max_std_error, pi.max_std_error());

                if (rsum > 1e-9 && pi.out_edges.size() <= 12) {
                    std::vector<double> unit(realized);
                    for (double& x : unit) x /= rsum;
                    const auto dec = decompose_split(unit, pi);
                    if (!dec.feasible && !dec.total_sum_violated) {
                        double lhs = 0.0;
                        for (std::size_t j = 0; j < unit.size(); ++j) {
                            if (dec.witness & (1ull << j)) lhs += unit[j];
                        }
                        rep.worst_violation =
                            std::max(rep.worst_violation, rho(pi, dec.witness) - lhs);
                    }
                }
            }
        }
    }
    // Two independent unbiased estimates of the same split differ by ~sqrt(2)
    // standard errors per mask; 3 sigma plus the solver tolerance leakage.
    rep.budget = 6.0 * weighted_se + 20.0 * tol_fp * (1.0 + T);
    return rep;
}

std::vector<std::vector<double>> conservation_residual(const Network& net, const Flow& flow,
                                                       double horizon) {
    std::vector<std::vector<double>> res(
        static_cast<std::size_t>(net.node_count()),
        std::vector<double>(static_cast<std::size_t>(net.commodity_count()), 0.0));
    const Interval all{0.0, horizon};
    for (int i = 0; i < net.commodity_count(); ++i) {
        for (int v = 0; v < net.node_count(); ++v) {
            std::vector<const RateFunction*> out_terms;
            std::vector<double> out_coeffs;
            for (int e : net.out_edges(v)) {
                out_terms.push_back(&flow.inflow(e, i));
                out_coeffs.push_back(1.0);
            }
            RateFunction outs =
                out_terms.empty() ? RateFunction() : combine(out_terms, out_coeffs);

            RateFunction target;
            if (v != net.commodity(i).sink) {
                std::vector<const RateFunction*> in_terms;
                std::vector<double> in_coeffs;
                const RateFunction* u = net.commodity(i).inflow_at(v);
                if (u != nullptr) {
                    in_terms.push_back(u);
                    in_coeffs.push_back(1.0);
                }
                for (int e : net.in_edges(v)) {
                    in_terms.push_back(&flow.outflow(e, i));
                    in_coeffs.push_back(1.0);
                }
                if (!in_terms.empty()) target = combine(in_terms, in_coeffs);
            }
            res[static_cast<std::size_t>(v)][static_cast<std::size_t>(i)] =
                distance(outs, target, all, 1.0);
        }
    }
    return res;
}

} // namespace dta
