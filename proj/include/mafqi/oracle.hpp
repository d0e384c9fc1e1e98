#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "mafqi/mdp.hpp"
#include "mafqi/rng.hpp"

namespace mafqi {
namespace oracle {

// Small enumerable deterministic MDP: delta and r are dense over
// (state, joint control).
struct DeterministicMdp {
    int m = 0;
    int num_states = 0;
    int cardinality = 2;
    std::vector<State> delta;   // [x * |U| + u] -> next state
    std::vector<double> reward; // [x * |U| + u], >= 0

    std::uint64_t num_joint_controls() const {
        std::uint64_t n = 1;
        for (int j = 0; j < m; ++j) n *= static_cast<std::uint64_t>(cardinality);
        return n;
    }

    std::size_t index(State x, std::uint64_t u) const {
        return static_cast<std::size_t>(x) * num_joint_controls() + u;
    }
};

// Random toy with integer rewards so the equality checks stay exact.
inline DeterministicMdp random_deterministic_mdp(int m, int num_states, std::uint64_t seed,
                                                 int cardinality = 2, int reward_max = 5) {
    DeterministicMdp mdp;
    mdp.m = m;
    mdp.num_states = num_states;
    mdp.cardinality = cardinality;
    const std::uint64_t nu = mdp.num_joint_controls();
    Rng rng(seed);
    mdp.delta.resize(static_cast<std::size_t>(num_states) * nu);
    mdp.reward.resize(mdp.delta.size());
    for (std::size_t i = 0; i < mdp.delta.size(); ++i) {
        mdp.delta[i] = static_cast<State>(rng.uniform_index(static_cast<std::uint64_t>(num_states)));
        mdp.reward[i] =
            static_cast<double>(rng.uniform_index(static_cast<std::uint64_t>(reward_max + 1)));
    }
    return mdp;
}

struct TabularQ {
    std::vector<double> table; // [x * |U| + u]
    double beta = 0.0;
};

struct TabularLocalQ {
    // values[j][x * |A| + a]
    std::vector<std::vector<double>> values;
    double beta = 0.0;
};

inline TabularQ make_tabular_q(const DeterministicMdp& mdp, double beta) {
    return {std::vector<double>(mdp.delta.size(), 0.0), beta};
}

inline TabularLocalQ make_tabular_local_q(const DeterministicMdp& mdp, double beta) {
    TabularLocalQ q;
    q.beta = beta;
    q.values.assign(static_cast<std::size_t>(mdp.m),
                    std::vector<double>(static_cast<std::size_t>(mdp.num_states) *
                                            static_cast<std::size_t>(mdp.cardinality),
                                        0.0));
    return q;
}

inline double tabular_max(const DeterministicMdp& mdp, const TabularQ& q, State x) {
    const std::uint64_t nu = mdp.num_joint_controls();
    double best = q.table[mdp.index(x, 0)];
    for (std::uint64_t u = 1; u < nu; ++u) best = std::max(best, q.table[mdp.index(x, u)]);
    return best;
}

inline double tabular_local_max(const DeterministicMdp& mdp, const TabularLocalQ& q, int j, State x) {
    const auto& v = q.values[static_cast<std::size_t>(j)];
    double best = v[static_cast<std::size_t>(x * mdp.cardinality)];
    for (int a = 1; a < mdp.cardinality; ++a)
        best = std::max(best, v[static_cast<std::size_t>(x * mdp.cardinality + a)]);
    return best;
}

// Synchronous sweep of the deterministic Q update over every (x, u) pair:
// Q_N(x,u) = r(x,u) + beta * max_u' Q_{N-1}(delta(x,u), u').
inline TabularQ tabular_q_sweep(const DeterministicMdp& mdp, const TabularQ& q) {
    TabularQ next = q;
    const std::uint64_t nu = mdp.num_joint_controls();
    for (State x = 0; x < mdp.num_states; ++x)
        for (std::uint64_t u = 0; u < nu; ++u) {
            const std::size_t i = mdp.index(x, u);
            next.table[i] = mdp.reward[i] + q.beta * tabular_max(mdp, q, mdp.delta[i]);
        }
    return next;
}

// Synchronous sweep of the distributed update: each (x, u) visit pushes
// q_j(x, u(j)) to max{previous value, r + beta * max_a' q_j(delta(x,u), a')}.
inline TabularLocalQ tabular_distributed_sweep(const DeterministicMdp& mdp,
                                               const TabularLocalQ& q) {
    TabularLocalQ next = q;
    const std::uint64_t nu = mdp.num_joint_controls();
    for (int j = 0; j < mdp.m; ++j) {
        auto& out = next.values[static_cast<std::size_t>(j)];
        for (State x = 0; x < mdp.num_states; ++x) {
            for (std::uint64_t u = 0; u < nu; ++u) {
                const std::size_t i = mdp.index(x, u);
                const JointControl ju = decode_control(u, mdp.m, mdp.cardinality);
                const int a = ju[static_cast<std::size_t>(j)];
                const std::size_t slot = static_cast<std::size_t>(x * mdp.cardinality + a);
                const double candidate =
                    std::max(q.values[static_cast<std::size_t>(j)][slot],
                             mdp.reward[i] + q.beta * tabular_local_max(mdp, q, j, mdp.delta[i]));
                out[slot] = std::max(out[slot], candidate);
            }
        }
    }
    return next;
}

struct Proposition1Result {
    bool holds = false;
    double max_deviation = 0.0;
};

// For every N <= n_max, j, x, a the distributed value must equal the
// per-agent max of the centralized Q over joint controls with u(j) = a.
inline Proposition1Result proposition1_check(const DeterministicMdp& mdp, double beta, int n_max,
                                             double tolerance = 1e-12) {
    TabularQ q = make_tabular_q(mdp, beta);
    TabularLocalQ lq = make_tabular_local_q(mdp, beta);
    const std::uint64_t nu = mdp.num_joint_controls();
    Proposition1Result result{true, 0.0};
    for (int n = 1; n <= n_max; ++n) {
        q = tabular_q_sweep(mdp, q);
        lq = tabular_distributed_sweep(mdp, lq);
        for (int j = 0; j < mdp.m; ++j) {
            for (State x = 0; x < mdp.num_states; ++x) {
                for (int a = 0; a < mdp.cardinality; ++a) {
                    double best = -1.0;
                    for (std::uint64_t u = 0; u < nu; ++u) {
                        if (decode_control(u, mdp.m, mdp.cardinality)[static_cast<std::size_t>(j)] != a)
                            continue;
                        best = std::max(best, q.table[mdp.index(x, u)]);
                    }
                    const double dev = std::abs(
                        lq.values[static_cast<std::size_t>(j)]
                                 [static_cast<std::size_t>(x * mdp.cardinality + a)] -
                        best);
                    result.max_deviation = std::max(result.max_deviation, dev);
                }
            }
        }
    }
    result.holds = result.max_deviation <= tolerance;
    return result;
}

} // namespace oracle
} // namespace mafqi
