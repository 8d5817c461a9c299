#include <cmath>
#include <functional>
#include <map>

#include "dta/edge_loading.hpp"

namespace dta {

RateFunction Flow::aggregate_inflow(int e) const {
    std::vector<const RateFunction*> fs;
    std::vector<double> ones(static_cast<std::size_t>(commodities_), 1.0);
    for (int i = 0; i < commodities_; ++i) fs.push_back(&inflow(e, i));
    return combine(fs, ones);
}

RateFunction Flow::aggregate_outflow(int e) const {
    std::vector<const RateFunction*> fs;
    std::vector<double> ones(static_cast<std::size_t>(commodities_), 1.0);
    for (int i = 0; i < commodities_; ++i) fs.push_back(&outflow(e, i));
    return combine(fs, ones);
}

double travel_time(const EdgeState& state, int e, double theta) {
    if (theta < -1e-9 || theta > state.horizon + 1e-9)
        throw Error(errc::out_of_horizon, "travel time queried outside the computed horizon");
    return state.cost[static_cast<std::size_t>(e)](theta);
}

namespace {

LoaderMetadata metadata_for(const Network& net) {
    LoaderMetadata md;
    md.causality_offset = net.min_free_flow_time();
    md.is_uniformly_strictly_causal = md.causality_offset > 0.0;
    md.capacity_bound = net.max_capacity();
    return md;
}

class VickreyModel final : public LoadingModel {
public:
    std::string name() const override { return "vickrey"; }
    LoadResult load(const Network& net, const Flow& inflows, double horizon) const override {
        return vickrey_load(net, inflows, horizon);
    }
    LoaderMetadata metadata(const Network& net) const override { return metadata_for(net); }
};

class LinearDelayModel final : public LoadingModel {
public:
    explicit LinearDelayModel(double grid_step) : grid_step_(grid_step) {}
    std::string name() const override { return "linear-delay"; }
    LoadResult load(const Network& net, const Flow& inflows, double horizon) const override {
        return linear_delay_load(net, inflows, horizon, grid_step_);
    }
    LoaderMetadata metadata(const Network& net) const override { return metadata_for(net); }

private:
    double grid_step_;
};

std::map<std::string, std::function<std::shared_ptr<const LoadingModel>(double)>>& registry() {
    static std::map<std::string, std::function<std::shared_ptr<const LoadingModel>(double)>> r;
    return r;
}

} // namespace

std::shared_ptr<const LoadingModel> make_vickrey_model() {
    return std::make_shared<VickreyModel>();
}

std::shared_ptr<const LoadingModel> make_linear_delay_model(double grid_step) {
    return std::make_shared<LinearDelayModel>(grid_step);
}

void register_loading_model(const std::string& name,
                            std::function<std::shared_ptr<const LoadingModel>(double)> factory) {
    registry()[name] = std::move(factory);
}

std::shared_ptr<const LoadingModel> make_loading_model(const std::string& name, double grid_step) {
    if (name == "vickrey") return make_vickrey_model();
    if (name == "linear-delay") return make_linear_delay_model(grid_step);
    auto it = registry().find(name);
    if (it == registry().end())
        throw Error(errc::invalid_input, "unknown loading model '" + name + "'");
    return it->second(grid_step);
}

std::vector<std::vector<double>> consistency_residual(const Network& net, const Flow& flow,
                                                      const LoadingModel& model, double horizon) {
    LoadResult reloaded = model.load(net, flow, horizon);
    std::vector<std::vector<double>> res(static_cast<std::size_t>(net.edge_count()),
                                         std::vector<double>(static_cast<std::size_t>(net.commodity_count()), 0.0));
    for (int e = 0; e < net.edge_count(); ++e)
        for (int i = 0; i < net.commodity_count(); ++i)
            res[static_cast<std::size_t>(e)][static_cast<std::size_t>(i)] =
                distance(flow.outflow(e, i), reloaded.flow.outflow(e, i), Interval{0.0, horizon}, 1.0);
    return res;
}

} // namespace dta
