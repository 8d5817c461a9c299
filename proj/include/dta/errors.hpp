#ifndef DTA_ERRORS_HPP
#define DTA_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace dta {

/// Error categories. The CLI maps input/validation-type codes to exit 2 and
/// runtime/solver failures to exit 3.
enum class errc {
    invalid_input,       // malformed values (non-finite, bad counts, ...)
    schema,              // scenario document does not match the schema
    validation,          // semantic scenario problems (capacity, reachability)
    nonnegativity,       // a rate combination went negative beyond tolerance
    out_of_range,        // inverse_at target outside the function's range
    out_of_horizon,      // state queried past the computed horizon
    horizon_escape,      // perfect-predictor composition left the horizon
    path_explosion,      // simple-path enumeration exceeded max_paths
    model_precondition,  // physical model preconditions violated (c0=0, step too large)
    numeric_failure,     // integration produced an inconsistent state
    solver_divergence,   // fixed-point iteration failed below alpha_min
};

class Error : public std::runtime_error {
public:
    Error(errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
    errc code() const { return code_; }

private:
    errc code_;
};

inline const char* errc_name(errc c) {
    switch (c) {
        case errc::invalid_input: return "invalid_input";
        case errc::schema: return "schema";
        case errc::validation: return "validation";
        case errc::nonnegativity: return "nonnegativity";
        case errc::out_of_range: return "out_of_range";
        case errc::out_of_horizon: return "out_of_horizon";
        case errc::horizon_escape: return "horizon_escape";
        case errc::path_explosion: return "path_explosion";
        case errc::model_precondition: return "model_precondition";
        case errc::numeric_failure: return "numeric_failure";
        case errc::solver_divergence: return "solver_divergence";
    }
    return "unknown";
}

} // namespace dta

#endif
