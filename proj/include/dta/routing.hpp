#ifndef DTA_ROUTING_HPP
#define DTA_ROUTING_HPP

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dta/edge_loading.hpp"
#include "dta/network.hpp"
#include "dta/predictors.hpp"

namespace dta {

// --- deterministic choice sets ---

/// Out-edges of v whose cheapest continuation comes within tie_tol of the
/// node's best predicted cost at theta. Ascending edge ids; throws when no
/// path leaves (v, i).
std::vector<int> active_edges(const Network& net, const Predictor& pred, const EdgeState& state,
                              int v, int i, double theta, double tie_tol = 1e-9);

enum class TiePolicy { uniform, sticky };
TiePolicy parse_tie_policy(const std::string& text);

/// Split fractions over the active edges. `previous` holds the last committed
/// fractions over delta+(v) (nullptr means none). Sticky renormalizes the
/// surviving previous mass, falling back to uniform when none survives.
std::map<int, double> dpe_split(const std::vector<int>& active,
                                const std::map<int, double>* previous, TiePolicy policy);

// --- perception noise ---

struct NoiseModel {
    enum class Kind { gaussian, uniform, degenerate };
    Kind kind = Kind::degenerate;
    double a = 0.0, b = 0.0;  // uniform support
    double sigma = 0.0;       // gaussian scale

    double sample(std::mt19937_64& rng) const;
    std::string text() const;
    /// "gaussian:<sigma>" | "uniform:<a>,<b>" | "none"
    static NoiseModel parse(const std::string& text);
};

/// Independent, reproducible stream per (node, commodity, time) site.
std::uint64_t mix_seed(std::uint64_t seed, int v, int i, double theta);

// --- perceived-choice-set probabilities ---

struct ActiveSetProbabilities {
    int v = -1, i = -1;
    double theta = 0.0;
    std::vector<int> out_edges;                       // delta+(v), ascending edge ids
    std::vector<std::pair<std::uint64_t, double>> pi; // (mask over out_edges positions, prob)
    std::vector<double> std_error;                    // per mask: sqrt(p(1-p)/N)
    int samples = 0;

    double probability(std::uint64_t mask) const;     // 0 when never observed
    double max_std_error() const;
};

/// Monte-Carlo estimate of the distribution of perceived-best first edges:
/// each sample perturbs every edge cost once, scores all paths, and tallies
/// the set of first edges of paths within 1e-12 of the perceived minimum.
ActiveSetProbabilities estimate_pi(const Network& net, const Predictor& pred,
                                   const EdgeState& state, const NoiseModel& noise, int v, int i,
                                   double theta, int samples, std::uint64_t seed);

/// rho(M) = probability that the perceived set is contained in M (positions mask).
double rho(const ActiveSetProbabilities& pi, std::uint64_t mask);

/// Expected split r_j = pi({j}) + sum over larger observed sets of pi_M / |M|.
std::vector<double> stochastic_split(const ActiveSetProbabilities& pi);

// --- split decomposition (membership certificate) ---

struct SplitDecomposition {
    bool feasible = false;
    // feasible: weights[k][j] = mass routed to out_edges position j by agents
    // whose perceived set is pi.pi[k].first; row k sums to pi.pi[k].second.
    std::vector<std::vector<double>> weights;
    // infeasible: positions mask M with sum_{j in M} split[j] < rho(M), or
    // total_sum_violated when the split does not sum to 1.
    std::uint64_t witness = 0;
    bool total_sum_violated = false;
};

/// Decides whether `split` (one fraction per out-edge position) can arise from
/// agents each choosing inside their perceived set, via a four-layer max-flow.
/// At most 12 out-edges.
SplitDecomposition decompose_split(const std::vector<double>& split,
                                   const ActiveSetProbabilities& pi, double tol = 1e-9);

// --- derivative-balancing allocation (deterministic solver) ---

/// One out-edge's cost-rate response: the time-derivative of the cheapest
/// continuation through the edge as a function of the flow x routed into it.
/// Flat at `level` while x <= free, then rising with slope inv_capacity.
struct CostRateArm {
    double level = 0.0;
    double free = 0.0;
    double inv_capacity = 0.0;
};

/// Allocate b >= 0 across arms so cost rates equalize at the lowest feasible
/// water level; freedom on flat arms follows `weights` with per-arm caps
/// (clipped waterfall). Returns allocations summing to b.
std::vector<double> balanced_allocation(const std::vector<CostRateArm>& arms, double b,
                                        const std::vector<double>& weights, double tie_tol = 1e-9);

} // namespace dta

#endif
