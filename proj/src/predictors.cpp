#include "dta/predictors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "dta/errors.hpp"

namespace dta {

namespace {

constexpr double kEdgeTol = 1e-9;

class ConstantPredictor final : public Predictor {
public:
    std::string name() const override { return "constant"; }
    bool is_causal() const override { return true; }
    double state_demand(double theta, double) const override { return theta; }

    double predict(const Path& path, double theta, const EdgeState& state) const override {
        double sum = 0.0;
        for (int e : path.edges) sum += travel_time(state, e, theta);
        return sum;
    }
};

class PerfectPredictor final : public Predictor {
public:
    std::string name() const override { return "perfect"; }
    bool is_causal() const override { return false; }

    double predict(const Path& path, double theta, const EdgeState& state) const override {
        double s = theta;
        bool first = true;
        for (int e : path.edges) {
            if (!first && s > state.horizon + kEdgeTol) {
                throw Error(errc::horizon_escape,
                            "exit-time composition leaves the computed horizon at time " +
                                std::to_string(s));
            }
            s += travel_time(state, e, s);
            first = false;
        }
        return s - theta;
    }
};

class CompositePredictor final : public Predictor {
public:
    explicit CompositePredictor(double cutoff) : cutoff_(cutoff) {
        if (std::isnan(cutoff)) throw Error(errc::invalid_input, "composite cutoff is NaN");
    }

    std::string name() const override { return "composite:" + std::to_string(cutoff_); }
    bool is_causal() const override { return true; }
    double state_demand(double theta, double horizon) const override {
        return std::min(horizon, std::max(theta, cutoff_));
    }

    double predict(const Path& path, double theta, const EdgeState& state) const override {
        double s = theta;
        std::size_t k = 0;
        bool first = true;
        for (; k < path.edges.size(); ++k) {
            if (!first && s > state.horizon + kEdgeTol) {
                throw Error(errc::horizon_escape,
                            "exit-time composition leaves the computed horizon at time " +
                                std::to_string(s));
            }
            const double next = s + travel_time(state, path.edges[k], s);
            if (!(next < cutoff_)) break;
            s = next;
            first = false;
        }
        double cost = s - theta;
        for (; k < path.edges.size(); ++k) cost += travel_time(state, path.edges[k], cutoff_);
        return cost;
    }

private:
    double cutoff_;
};

class CustomPredictor final : public Predictor {
public:
    CustomPredictor(std::string name, CustomPredictFn fn, bool causal)
        : name_(std::move(name)), fn_(std::move(fn)), causal_(causal) {}

    std::string name() const override { return name_; }
    bool is_causal() const override { return causal_; }

    double predict(const Path& path, double theta, const EdgeState& state) const override {
        auto accessor = [&state](int e, double t) { return travel_time(state, e, t); };
        return fn_(path, theta, accessor);
    }

private:
    std::string name_;
    CustomPredictFn fn_;
    bool causal_;
};

} // namespace

std::shared_ptr<const Predictor> make_constant_predictor() {
    return std::make_shared<ConstantPredictor>();
}

std::shared_ptr<const Predictor> make_perfect_predictor() {
    return std::make_shared<PerfectPredictor>();
}

std::shared_ptr<const Predictor> make_composite_predictor(double cutoff) {
    return std::make_shared<CompositePredictor>(cutoff);
}

std::shared_ptr<const Predictor> make_custom_predictor(std::string name, CustomPredictFn fn,
                                                       bool causal) {
    if (!fn) throw Error(errc::invalid_input, "custom predictor callback is empty");
    return std::make_shared<CustomPredictor>(std::move(name), std::move(fn), causal);
}

std::shared_ptr<const Predictor> parse_predictor(const std::string& text) {
    if (text == "constant") return make_constant_predictor();
    if (text == "perfect") return make_perfect_predictor();
    const std::string prefix = "composite:";
    if (text.rfind(prefix, 0) == 0) {
        const std::string arg = text.substr(prefix.size());
        double cutoff = 0.0;
        if (arg == "inf") {
            cutoff = std::numeric_limits<double>::infinity();
        } else {
            try {
                std::size_t used = 0;
                cutoff = std::stod(arg, &used);
                if (used != arg.size()) throw std::invalid_argument(arg);
            } catch (const std::exception&) {
                throw Error(errc::invalid_input, "bad composite cutoff: '" + arg + "'");
            }
        }
        return make_composite_predictor(cutoff);
    }
    throw Error(errc::invalid_input, "unknown predictor: '" + text + "'");
}

} // namespace dta
