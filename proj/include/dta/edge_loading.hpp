#ifndef DTA_EDGE_LOADING_HPP
#define DTA_EDGE_LOADING_HPP

#include <memory>
#include <string>
#include <vector>

#include "dta/network.hpp"
#include "dta/ratefn.hpp"

namespace dta {

/// Per-(edge, commodity) inflow/outflow rate functions.
class Flow {
public:
    Flow() = default;
    Flow(int edges, int commodities)
        : edges_(edges),
          commodities_(commodities),
          in_(static_cast<std::size_t>(edges * commodities)),
          out_(static_cast<std::size_t>(edges * commodities)) {}

    int edge_count() const { return edges_; }
    int commodity_count() const { return commodities_; }

    RateFunction& inflow(int e, int i) { return in_[idx(e, i)]; }
    const RateFunction& inflow(int e, int i) const { return in_[idx(e, i)]; }
    RateFunction& outflow(int e, int i) { return out_[idx(e, i)]; }
    const RateFunction& outflow(int e, int i) const { return out_[idx(e, i)]; }

    RateFunction aggregate_inflow(int e) const;
    RateFunction aggregate_outflow(int e) const;
    CumulativeFunction cumulative_inflow(int e, int i) const { return cumulative(inflow(e, i)); }
    CumulativeFunction cumulative_outflow(int e, int i) const { return cumulative(outflow(e, i)); }

private:
    std::size_t idx(int e, int i) const {
        return static_cast<std::size_t>(e) * static_cast<std::size_t>(commodities_) +
               static_cast<std::size_t>(i);
    }
    int edges_ = 0;
    int commodities_ = 0;
    std::vector<RateFunction> in_, out_;
};

/// Physical state computed by a loading model.
struct EdgeState {
    std::string model;                       // "vickrey" or "linear-delay"
    double horizon = 0.0;
    std::vector<PiecewiseLinear> backlog;    // per edge: queue z_e or volume X_e
    std::vector<PiecewiseLinear> cost;       // c_e(theta), seconds
    std::vector<PiecewiseLinear> exit_time;  // tau_e(theta) = theta + c_e(theta)
    // linear-delay only: per-edge max |F+(th) - F-(tau(th))|, raw and per unit
    // of cumulative flow.
    std::vector<double> residual_raw;
    std::vector<double> residual_per_unit;
};

struct LoaderMetadata {
    double causality_offset = 0.0;            // min_e c0_e
    bool is_uniformly_strictly_causal = false; // all c0_e > 0
    double capacity_bound = 0.0;               // max_e nu_e
};

struct LoadResult {
    Flow flow;       // inflows copied from input, outflows computed
    EdgeState state;
};

/// Point-queue dynamics: queues drain at capacity, FIFO commodity splits.
/// Exact event sweep; piecewise-constant in, piecewise-constant out.
LoadResult vickrey_load(const Network& net, const Flow& inflows, double horizon);

/// Volume-delay dynamics c_e = c0_e + X_e/nu_e advanced explicitly on a grid.
/// grid_step <= 0 picks min_e c0_e / 40. Requires all c0_e > 0 and
/// grid_step <= min_e c0_e / 4.
LoadResult linear_delay_load(const Network& net, const Flow& inflows, double horizon,
                             double grid_step = 0.0);

/// Travel time c_e(theta). Throws errc::out_of_horizon outside [0, horizon].
double travel_time(const EdgeState& state, int e, double theta);

/// Model-agnostic loading interface; third-party dynamics can be registered.
class LoadingModel {
public:
    virtual ~LoadingModel() = default;
    virtual std::string name() const = 0;
    virtual LoadResult load(const Network& net, const Flow& inflows, double horizon) const = 0;
    virtual LoaderMetadata metadata(const Network& net) const = 0;
};

std::shared_ptr<const LoadingModel> make_vickrey_model();
std::shared_ptr<const LoadingModel> make_linear_delay_model(double grid_step = 0.0);

/// Registry for additional models (name -> factory taking the grid step).
void register_loading_model(const std::string& name,
                            std::function<std::shared_ptr<const LoadingModel>(double)> factory);
/// "vickrey", "linear-delay", or a registered name. Unknown -> invalid_input.
std::shared_ptr<const LoadingModel> make_loading_model(const std::string& name, double grid_step = 0.0);

/// Per-(edge, commodity) L1 distance between flow's outflows and the model's
/// reloading of flow's inflows, over [0, horizon].
std::vector<std::vector<double>> consistency_residual(const Network& net, const Flow& flow,
                                                      const LoadingModel& model, double horizon);

} // namespace dta

#endif
