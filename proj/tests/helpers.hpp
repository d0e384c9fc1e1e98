#pragma once

#include "mafqi/mdp.hpp"
#include "mafqi/oracle.hpp"

namespace mafqi::test {

// Spec carrying only the dimensions; enough for model construction, which
// never touches the transition matrices.
inline MdpSpec dims_only_spec(int m, int num_states, int cardinality = 2) {
    MdpSpec spec;
    spec.m = m;
    spec.num_states = num_states;
    spec.local_control_cardinality = cardinality;
    return spec;
}

// Batch enumerating every (x, u) pair of a deterministic toy exactly once.
// With n_min = 1 the tree kernels then reduce to exact tabular lookup, so
// the fitted iterations coincide with the tabular sweeps.
inline BatchDataset tabular_dataset(const oracle::DeterministicMdp& mdp) {
    BatchDataset data;
    const std::uint64_t nu = mdp.num_joint_controls();
    for (State x = 0; x < mdp.num_states; ++x) {
        for (std::uint64_t u = 0; u < nu; ++u) {
            const std::size_t i = mdp.index(x, u);
            data.samples.push_back(
                {x, decode_control(u, mdp.m, mdp.cardinality), mdp.delta[i], mdp.reward[i]});
        }
    }
    return data;
}

} // namespace mafqi::test
