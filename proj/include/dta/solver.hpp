#ifndef DTA_SOLVER_HPP
#define DTA_SOLVER_HPP

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "dta/edge_loading.hpp"
#include "dta/network.hpp"
#include "dta/predictors.hpp"
#include "dta/routing.hpp"

namespace dta {

// ---- generic fixed-point machinery ----

struct ContractionOutcome {
    bool converged = false;
    bool stalled = false;
    int iterations = 0;
    double residual = std::numeric_limits<double>::infinity();
    std::vector<double> history;
    bool monotone_after_threshold = true; // logged, never enforced
};

/// Iterate x <- op(x) until the sup-norm step drops to tol. Flags a stall
/// when eight successive iterations fail to shave 2% off the residual.
ContractionOutcome banach_iterate(
    const std::function<std::vector<double>(const std::vector<double>&)>& op,
    std::vector<double>& x, double tol, int max_iter);

/// One window of a time-stepped fixed-point computation. Implementations keep
/// a committed prefix internally; the controller never looks inside.
class WindowedProblem {
public:
    virtual ~WindowedProblem() = default;
    virtual double horizon() const = 0;
    virtual void begin_window(double start, double end) = 0;
    /// Apply the operator once over the current window; return the residual.
    virtual double iterate() = 0;
    virtual void commit() = 0;
    virtual void abandon() = 0;
};

struct WindowLog {
    double start = 0.0, end = 0.0, alpha = 0.0;
    int iterations = 0;
    double residual = std::numeric_limits<double>::infinity();
    bool accepted = false;
    bool stalled = false;
    bool monotone_after_threshold = true;
    std::vector<double> history;
};

struct StepControllerConfig {
    double alpha0 = 0.5;
    double alpha_min = 0.015625;
    double tol = 1e-6;
    int max_iter = 100;
    double grow = 1.5;
};

struct StepControllerResult {
    bool converged = false;
    double reached = 0.0;
    std::string failure; // empty on success
    std::vector<WindowLog> windows;
    int total_iterations = 0;
};

/// March windows across [0, horizon]: converged windows commit and let the
/// step grow 1.5x (capped at alpha0); failed windows halve it. Dropping below
/// alpha_min is a hard failure reported in `failure`.
StepControllerResult run_windows(WindowedProblem& prob, const StepControllerConfig& cfg);

// ---- the traffic solver ----

struct SolverConfig {
    std::string routing = "dpe";           // dpe | spe | stochastic-ide
    std::string predictor = "constant";    // parse_predictor() grammar
    std::string loading_model = "vickrey"; // vickrey | linear-delay | registered
    double phys_step = 0.0;                // linear-delay grid step (0 = auto)
    NoiseModel noise;                      // perception noise for spe / stochastic-ide
    int mc_samples = 20000;
    std::uint64_t seed = 0;
    TiePolicy tie_policy = TiePolicy::sticky;
    double tie_tol = 1e-9;
    double alpha0 = 0.5;
    double alpha_min = 0.015625;
    double tol_fp = 1e-6;
    double routing_step = 0.015625;
    int max_iter = 100;
    double distance_p = 1.0;         // window residual norm order
    bool zero_initial_guess = false; // uniqueness probe: start every window at zero

    void validate() const; // throws errc::invalid_input
};

/// Committed split fractions: one row per (node, commodity), cells half-open
/// [cell_starts[k], cell_starts[k+1]) with the last cell ending at `end`.
struct SplitSchedule {
    int v = -1, i = -1;
    std::vector<double> cell_starts;
    std::vector<std::map<int, double>> fractions; // edge id -> fraction
    double end = 0.0;
    const std::map<int, double>* at(double theta) const; // nullptr outside
};

struct SpeGapReport {
    double gap = 0.0;             // b-weighted L1 between realized and mandated splits
    double budget = 0.0;          // sampling-noise allowance for the gap
    double worst_violation = 0.0; // largest decomposition-cut violation found
    double max_std_error = 0.0;
};

struct SolveResult {
    Flow flow;        // inflows and outflows per (edge, commodity) on [0, reached]
    EdgeState state;  // physics of the final flow
    std::vector<SplitSchedule> splits;
    std::vector<WindowLog> windows;
    bool converged = false;
    double reached = 0.0;
    std::string failure; // empty on success
    int total_iterations = 0;
    int closure_sweeps = 0;

    // residual metrics of the final flow
    std::vector<std::vector<double>> conservation; // per (node, commodity) L1
    std::vector<std::vector<double>> consistency;  // per (edge, commodity) L1
    double max_conservation_per_unit = 0.0;        // max L1 / horizon
    double max_consistency_per_unit = 0.0;
    double dpe_gap_value = 0.0;
    bool has_spe_gap = false;
    SpeGapReport spe;
    double total_inflow_mass = 0.0;
};

SolveResult solve(const Network& net, const SolverConfig& cfg);

// ---- equilibrium and feasibility metrics ----

/// Mass-weighted excess of the chosen continuations over the best one,
/// integrated exactly over [0, horizon]. Infinite if flow rides an edge with
/// no continuation to its sink.
double dpe_gap(const Network& net, const Flow& flow, const EdgeState& state);

/// Realized-versus-mandated split deviation under perception noise, on a
/// fresh sample stream, plus the worst decomposition violation.
SpeGapReport spe_gap(const Network& net, const Flow& flow, const EdgeState& state,
                     const Predictor& pred, const NoiseModel& noise, int samples,
                     std::uint64_t seed, double step, double tol_fp);

/// Per (node, commodity) L1 norm over [0, horizon] of the node balance
/// violation: edge inflows minus exogenous plus upstream arrivals.
std::vector<std::vector<double>> conservation_residual(const Network& net, const Flow& flow,
                                                       double horizon);

} // namespace dta

#endif
