#include "dta/routing.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <deque>
#include <limits>
#include <unordered_map>

#include "dta/errors.hpp"

namespace dta {

namespace {

constexpr double kArgminTol = 1e-12;
constexpr double kTwoPi = 6.283185307179586476925286766559;

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

double unit_open(std::mt19937_64& rng) {
    // (0, 1]: safe for log().
    return static_cast<double>((rng() >> 11) + 1ull) * 0x1.0p-53;
}

double unit_half_open(std::mt19937_64& rng) {
    // [0, 1)
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

} // namespace

std::vector<int> active_edges(const Network& net, const Predictor& pred, const EdgeState& state,
                              int v, int i, double theta, double tie_tol) {
    const auto& paths = net.paths(v, i);
    if (paths.empty()) {
        throw Error(errc::invalid_input, "no route choice at node " + std::to_string(v) +
                                             " for commodity " + std::to_string(i));
    }
    std::map<int, double> best_through;
    double best = std::numeric_limits<double>::infinity();
    for (const Path& p : paths) {
        const double cost = pred.predict(p, theta, state);
        const int first = p.edges.front();
        auto it = best_through.find(first);
        if (it == best_through.end() || cost < it->second) best_through[first] = cost;
        best = std::min(best, cost);
    }
    std::vector<int> active;
    for (const auto& [e, cost] : best_through) {
        if (cost <= best + tie_tol) active.push_back(e);
    }
    return active; // std::map keeps edge ids ascending
}

TiePolicy parse_tie_policy(const std::string& text) {
    if (text == "uniform") return TiePolicy::uniform;
    if (text == "sticky") return TiePolicy::sticky;
    throw Error(errc::invalid_input, "unknown tie policy: '" + text + "'");
}

std::map<int, double> dpe_split(const std::vector<int>& active,
                                const std::map<int, double>* previous, TiePolicy policy) {
    if (active.empty()) throw Error(errc::invalid_input, "empty active edge set");
    std::map<int, double> split;
    if (policy == TiePolicy::sticky && previous != nullptr) {
        double surviving = 0.0;
        for (int e : active) {
            auto it = previous->find(e);
            if (it != previous->end() && it->second > 0.0) surviving += it->second;
        }
        if (surviving > kArgminTol) {
            for (int e : active) {
                auto it = previous->find(e);
                split[e] = (it != previous->end() && it->second > 0.0) ? it->second / surviving
                                                                       : 0.0;
            }
            return split;
        }
    }
    const double share = 1.0 / static_cast<double>(active.size());
    for (int e : active) split[e] = share;
    return split;
}

double NoiseModel::sample(std::mt19937_64& rng) const {
    switch (kind) {
        case Kind::gaussian: {
            const double u1 = unit_open(rng);
            const double u2 = unit_half_open(rng);
            return sigma * std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
        }
        case Kind::uniform:
            return a + (b - a) * unit_half_open(rng);
        case Kind::degenerate:
            return 0.0;
    }
    return 0.0;
}

std::string NoiseModel::text() const {
    char buf[64];
    switch (kind) {
        case Kind::gaussian:
            std::snprintf(buf, sizeof(buf), "gaussian:%g", sigma);
            return buf;
        case Kind::uniform:
            std::snprintf(buf, sizeof(buf), "uniform:%g,%g", a, b);
            return buf;
        case Kind::degenerate:
            return "none";
    }
    return "none";
}

NoiseModel NoiseModel::parse(const std::string& text) {
    NoiseModel m;
    if (text == "none" || text == "degenerate" || text.empty()) {
        m.kind = Kind::degenerate;
        return m;
    }
    auto parse_double = [&text](const std::string& part) {
        try {
            std::size_t used = 0;
            const double value = std::stod(part, &used);
            if (used != part.size() || !std::isfinite(value)) throw std::invalid_argument(part);
            return value;
        } catch (const std::exception&) {
            throw Error(errc::invalid_input, "bad noise parameter '" + part + "' in '" + text + "'");
        }
    };
    const std::string gprefix = "gaussian:";
    const std::string uprefix = "uniform:";
    if (text.rfind(gprefix, 0) == 0) {
        m.kind = Kind::gaussian;
        m.sigma = parse_double(text.substr(gprefix.size()));
        if (m.sigma < 0.0) throw Error(errc::invalid_input, "negative noise scale in '" + text + "'");
        return m;
    }
    if (text.rfind(uprefix, 0) == 0) {
        const std::string args = text.substr(uprefix.size());
        const std::size_t comma = args.find(',');
        if (comma == std::string::npos) {
            throw Error(errc::invalid_input, "uniform noise needs two bounds: '" + text + "'");
        }
        m.kind = Kind::uniform;
        m.a = parse_double(args.substr(0, comma));
        m.b = parse_double(args.substr(comma + 1));
        if (m.a > m.b) throw Error(errc::invalid_input, "uniform noise bounds out of order: '" + text + "'");
        return m;
    }
    throw Error(errc::invalid_input, "unknown noise model: '" + text + "'");
}

std::uint64_t mix_seed(std::uint64_t seed, int v, int i, double theta) {
    std::uint64_t bits;
    static_assert(sizeof(bits) == sizeof(theta));
    std::memcpy(&bits, &theta, sizeof(bits));
    std::uint64_t h = splitmix64(seed);
    h = splitmix64(h ^ static_cast<std::uint64_t>(static_cast<std::uint32_t>(v)));
    h = splitmix64(h ^ static_cast<std::uint64_t>(static_cast<std::uint32_t>(i)));
    h = splitmix64(h ^ bits);
    return h;
}

double ActiveSetProbabilities::probability(std::uint64_t mask) const {
    for (const auto& [m, p] : pi) {
        if (m == mask) return p;
    }
    return 0.0;
}

double ActiveSetProbabilities::max_std_error() const {
    double worst = 0.0;
    for (double se : std_error) worst = std::max(worst, se);
    return worst;
}

ActiveSetProbabilities estimate_pi(const Network& net, const Predictor& pred,
                                   const EdgeState& state, const NoiseModel& noise, int v, int i,
                                   double theta, int samples, std::uint64_t seed) {
    if (samples <= 0) throw Error(errc::invalid_input, "sample count must be positive");
    const auto& paths = net.paths(v, i);
    if (paths.empty()) {
        throw Error(errc::invalid_input, "no route choice at node " + std::to_string(v) +
                                             " for commodity " + std::to_string(i));
    }
    ActiveSetProbabilities out;
    out.v = v;
    out.i = i;
    out.theta = theta;
    out.out_edges = net.out_edges(v);
    if (out.out_edges.size() > 63) {
        throw Error(errc::invalid_input, "choice sets support at most 63 out-edges");
    }
    std::map<int, int> position; // edge id -> bit position in out_edges
    for (std::size_t j = 0; j < out.out_edges.size(); ++j) {
        position[out.out_edges[j]] = static_cast<int>(j);
    }

    // Noise is drawn once per distinct edge appearing in any path, so
    // overlapping paths share perturbations.
    std::vector<int> noisy_edges;
    for (const Path& p : paths) {
        for (int e : p.edges) noisy_edges.push_back(e);
    }
    std::sort(noisy_edges.begin(), noisy_edges.end());
    noisy_edges.erase(std::unique(noisy_edges.begin(), noisy_edges.end()), noisy_edges.end());
    std::map<int, int> noise_slot;
    for (std::size_t k = 0; k < noisy_edges.size(); ++k) noise_slot[noisy_edges[k]] = static_cast<int>(k);

    std::vector<double> base(paths.size());
    std::vector<std::vector<int>> slots(paths.size());
    std::vector<std::uint64_t> first_bit(paths.size());
    for (std::size_t k = 0; k < paths.size(); ++k) {
        base[k] = pred.predict(paths[k], theta, state);
        for (int e : paths[k].edges) slots[k].push_back(noise_slot.at(e));
        first_bit[k] = 1ull << position.at(paths[k].edges.front());
    }

    std::mt19937_64 rng(mix_seed(seed, v, i, theta));
    std::vector<double> eps(noisy_edges.size());
    std::unordered_map<std::uint64_t, long long> tally;
    for (int s = 0; s < samples; ++s) {
        for (double& e : eps) e = noise.sample(rng);
        double best = std::numeric_limits<double>::infinity();
        std::vector<double> cost(paths.size());
        for (std::size_t k = 0; k < paths.size(); ++k) {
            double c = base[k];
            for (int slot : slots[k]) c += eps[slot];
            cost[k] = c;
            best = std::min(best, c);
        }
        std::uint64_t mask = 0;
        for (std::size_t k = 0; k < paths.size(); ++k) {
            if (cost[k] <= best + kArgminTol) mask |= first_bit[k];
        }
        ++tally[mask];
    }

    std::vector<std::pair<std::uint64_t, long long>> sorted(tally.begin(), tally.end());
    std::sort(sorted.begin(), sorted.end());
    out.samples = samples;
    const double n = static_cast<double>(samples);
    for (const auto& [mask, count] : sorted) {
        const double p = static_cast<double>(count) / n;
        out.pi.emplace_back(mask, p);
        out.std_error.push_back(std::sqrt(std::max(0.0, p * (1.0 - p) / n)));
    }
    return out;
}

double rho(const ActiveSetProbabilities& pi, std::uint64_t mask) {
    const std::uint64_t full =
        pi.out_edges.size() >= 64 ? ~0ull : ((1ull << pi.out_edges.size()) - 1ull);
    if ((mask & ~full) != 0) {
        throw Error(errc::invalid_input, "mask is not a subset of the out-edges");
    }
    double sum = 0.0;
    for (const auto& [m, p] : pi.pi) {
        if ((m & ~mask) == 0) sum += p;
    }
    return sum;
}

std::vector<double> stochastic_split(const ActiveSetProbabilities& pi) {
    std::vector<double> r(pi.out_edges.size(), 0.0);
    for (const auto& [mask, p] : pi.pi) {
        const int size = std::popcount(mask);
        if (size == 0) continue;
        const double share = p / static_cast<double>(size);
        for (std::size_t j = 0; j < r.size(); ++j) {
            if (mask & (1ull << j)) r[j] += share;
        }
    }
    return r;
}

namespace {

// Dense-capacity max flow (BFS augmenting paths). Node count stays small:
// 2 + observed subsets + out-degree, with out-degree capped at 12.
struct MaxFlowNet {
    struct Arc {
        int to;
        double cap;
        int rev;
    };
    std::vector<std::vector<Arc>> arcs;

    explicit MaxFlowNet(int nodes) : arcs(nodes) {}

    void add(int from, int to, double cap) {
        arcs[from].push_back({to, cap, static_cast<int>(arcs[to].size())});
        arcs[to].push_back({from, 0.0, static_cast<int>(arcs[from].size()) - 1});
    }

    double augment(int source, int sink) {
        std::vector<int> prev_node(arcs.size(), -1), prev_arc(arcs.size(), -1);
        std::deque<int> queue{source};
        prev_node[source] = source;
        while (!queue.empty() && prev_node[sink] < 0) {
            const int u = queue.front();
            queue.pop_front();
            for (std::size_t k = 0; k < arcs[u].size(); ++k) {
                const Arc& a = arcs[u][k];
                if (a.cap > 1e-12 && prev_node[a.to] < 0) {
                    prev_node[a.to] = u;
                    prev_arc[a.to] = static_cast<int>(k);
                    queue.push_back(a.to);
                }
            }
        }
        if (prev_node[sink] < 0) return 0.0;
        double bottleneck = std::numeric_limits<double>::infinity();
        for (int u = sink; u != source; u = prev_node[u]) {
            bottleneck = std::min(bottleneck, arcs[prev_node[u]][prev_arc[u]].cap);
        }
        for (int u = sink; u != source; u = prev_node[u]) {
            Arc& a = arcs[prev_node[u]][prev_arc[u]];
            a.cap -= bottleneck;
            arcs[a.to][a.rev].cap += bottleneck;
        }
        return bottleneck;
    }

    std::vector<char> reachable(int source) const {
        std::vector<char> seen(arcs.size(), 0);
        std::deque<int> queue{source};
        seen[source] = 1;
        while (!queue.empty()) {
            const int u = queue.front();
            queue.pop_front();
            for (const Arc& a : arcs[u]) {
                if (a.cap > 1e-12 && !seen[a.to]) {
                    seen[a.to] = 1;
                    queue.push_back(a.to);
                }
            }
        }
        return seen;
    }
};

} // namespace

SplitDecomposition decompose_split(const std::vector<double>& split,
                                   const ActiveSetProbabilities& pi, double tol) {
    const int d = static_cast<int>(pi.out_edges.size());
    if (d > 12) {
        throw Error(errc::invalid_input, "split decomposition supports at most 12 out-edges");
    }
    if (static_cast<int>(split.size()) != d) {
        throw Error(errc::invalid_input, "split length does not match the out-edge count");
    }
    double total = 0.0;
    for (double r : split) {
        if (r < -tol) throw Error(errc::invalid_input, "negative split fraction");
        total += r;
    }
    SplitDecomposition dec;
    if (total > 1.0 + tol) {
        // Every subset inequality can hold and the split still cannot arise
        // from unit mass; report the total-sum violation explicitly.
        dec.total_sum_violated = true;
        return dec;
    }
    if (total < 1.0 - tol) {
        dec.total_sum_violated = true;
        dec.witness = d >= 64 ? ~0ull : ((1ull << d) - 1ull); // rho(full) = 1 > total
        return dec;
    }

    const int subsets = static_cast<int>(pi.pi.size());
    const int source = 0;
    const int first_subset = 1;
    const int first_pos = first_subset + subsets;
    const int sink = first_pos + d;
    MaxFlowNet net(sink + 1);
    for (int k = 0; k < subsets; ++k) {
        net.add(source, first_subset + k, pi.pi[k].second);
        for (int j = 0; j < d; ++j) {
            if (pi.pi[k].first & (1ull << j)) net.add(first_subset + k, first_pos + j, 2.0);
        }
    }
    for (int j = 0; j < d; ++j) net.add(first_pos + j, sink, std::max(0.0, split[j]));

    double value = 0.0;
    for (;;) {
        const double pushed = net.augment(source, sink);
        if (pushed <= 0.0) break;
        value += pushed;
    }

    if (value >= 1.0 - tol) {
        dec.feasible = true;
        dec.weights.assign(subsets, std::vector<double>(d, 0.0));
        for (int k = 0; k < subsets; ++k) {
            for (const auto& arc : net.arcs[first_subset + k]) {
                if (arc.to >= first_pos && arc.to < sink) {
                    // flow on the forward arc = gained reverse capacity
                    const double f = net.arcs[arc.to][arc.rev].cap;
                    dec.weights[k][arc.to - first_pos] = f;
                }
            }
        }
        return dec;
    }

    const std::vector<char> side = net.reachable(source);
    std::uint64_t witness = 0;
    for (int j = 0; j < d; ++j) {
        if (side[first_pos + j]) witness |= 1ull << j;
    }
    dec.feasible = false;
    dec.witness = witness;
    return dec;
}

std::vector<double> balanced_allocation(const std::vector<CostRateArm>& arms, double b,
                                        const std::vector<double>& weights, double tie_tol) {
    const std::size_t n = arms.size();
    if (n == 0) throw Error(errc::invalid_input, "no arms to allocate across");
    if (weights.size() != n) {
        throw Error(errc::invalid_input, "weight count does not match arm count");
    }
    for (const CostRateArm& arm : arms) {
        if (!(arm.inv_capacity > 0.0) || arm.free < 0.0) {
            throw Error(errc::invalid_input, "arm needs positive capacity and nonnegative free allocation");
        }
    }
    std::vector<double> x(n, 0.0);
    if (b <= 0.0) return x;

    std::vector<double> levels;
    for (const CostRateArm& arm : arms) levels.push_back(arm.level);
    std::sort(levels.begin(), levels.end());
    levels.erase(std::unique(levels.begin(), levels.end(),
                             [tie_tol](double p, double q) { return std::abs(p - q) <= tie_tol; }),
                 levels.end());

    auto capacity_at = [&](double m) {
        double cap = 0.0;
        for (const CostRateArm& arm : arms) {
            if (arm.level <= m + tie_tol) {
                cap += arm.free + std::max(0.0, m - arm.level) / arm.inv_capacity;
            }
        }
        return cap;
    };

    double level = 0.0;
    bool found = false;
    for (std::size_t k = 0; k < levels.size() && !found; ++k) {
        const double cap = capacity_at(levels[k]);
        if (cap >= b - 1e-15) {
            level = levels[k];
            found = true;
            break;
        }
        double slope = 0.0;
        for (const CostRateArm& arm : arms) {
            if (arm.level <= levels[k] + tie_tol) slope += 1.0 / arm.inv_capacity;
        }
        const double candidate = levels[k] + (b - cap) / slope;
        if (k + 1 == levels.size() || candidate <= levels[k + 1] + tie_tol) {
            level = candidate;
            found = true;
        }
    }
    if (!found) {
        // Unreachable: the last segment always absorbs the remainder.
        throw Error(errc::numeric_failure, "allocation level search failed");
    }

    double pinned = 0.0;
    std::vector<std::size_t> flat;
    std::vector<double> caps;
    for (std::size_t k = 0; k < n; ++k) {
        if (arms[k].level < level - tie_tol) {
            x[k] = arms[k].free + (level - arms[k].level) / arms[k].inv_capacity;
            pinned += x[k];
        } else if (arms[k].level <= level + tie_tol) {
            flat.push_back(k);
            caps.push_back(arms[k].free + std::max(0.0, level - arms[k].level) / arms[k].inv_capacity);
        }
    }

    double remaining = b - pinned;
    if (remaining < 0.0) {
        // Rounding pushed the pinned mass past b; rescale it down.
        const double scale = b / pinned;
        for (double& v : x) v *= scale;
        return x;
    }
    std::vector<char> open(flat.size(), 1);
    std::vector<double> assigned(flat.size(), 0.0);
    while (remaining > 1e-15) {
        double wsum = 0.0;
        int open_count = 0;
        for (std::size_t t = 0; t < flat.size(); ++t) {
            if (open[t]) {
                wsum += std::max(0.0, weights[flat[t]]);
                ++open_count;
            }
        }
        if (open_count == 0) break; // caps exhausted up to rounding
        bool clipped = false;
        const double chunk = remaining;
        for (std::size_t t = 0; t < flat.size() && remaining > 0.0; ++t) {
            if (!open[t]) continue;
            const double w = wsum > 0.0 ? std::max(0.0, weights[flat[t]]) / wsum
                                        : 1.0 / static_cast<double>(open_count);
            double add = chunk * w;
            if (assigned[t] + add >= caps[t] - 1e-15) {
                add = caps[t] - assigned[t];
                open[t] = 0;
                clipped = true;
            }
            assigned[t] += add;
            remaining -= add;
        }
        // A pass with no clipping hands out the whole remainder (shares sum
        // to the chunk), so only clipped passes need another round.
        if (!clipped) break;
    }
    for (std::size_t t = 0; t < flat.size(); ++t) x[flat[t]] = assigned[t];
    return x;
}

} // namespace dta
