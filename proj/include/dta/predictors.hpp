#ifndef DTA_PREDICTORS_HPP
#define DTA_PREDICTORS_HPP

#include <functional>
#include <memory>
#include <string>

#include "dta/edge_loading.hpp"

namespace dta {

/// Path cost predictor: maps (path, entry time, physical state) to a
/// predicted traversal cost in seconds.
class Predictor {
public:
    virtual ~Predictor() = default;
    virtual std::string name() const = 0;
    virtual double predict(const Path& path, double theta, const EdgeState& state) const = 0;
    /// True when the prediction at theta depends only on state up to theta
    /// (safe inside the step-by-step solver).
    virtual bool is_causal() const = 0;
    /// Latest state time the prediction at theta may consult. The default is
    /// conservative (everything up to the loading horizon); predictors that
    /// price with state at theta alone can return theta so the solver may
    /// stop trial loadings at the window end.
    virtual double state_demand(double theta, double horizon) const {
        (void)theta;
        return horizon;
    }
};

/// Sum of instantaneous travel times at theta.
std::shared_ptr<const Predictor> make_constant_predictor();

/// Composed exit times minus theta. Throws errc::horizon_escape when an
/// intermediate arrival needs state beyond the computed horizon.
std::shared_ptr<const Predictor> make_perfect_predictor();

/// Exit-time composition while intermediate arrivals stay below the cutoff;
/// remaining edges priced with instantaneous travel times frozen at the
/// cutoff.
std::shared_ptr<const Predictor> make_composite_predictor(double cutoff);

/// Extension hook: the callback receives (path, theta, travel-time accessor).
using CustomPredictFn =
    std::function<double(const Path&, double, const std::function<double(int, double)>&)>;
std::shared_ptr<const Predictor> make_custom_predictor(std::string name, CustomPredictFn fn,
                                                       bool causal = true);

/// "constant" | "perfect" | "composite:<cutoff>" (cutoff "inf" allowed).
std::shared_ptr<const Predictor> parse_predictor(const std::string& text);

} // namespace dta

#endif
