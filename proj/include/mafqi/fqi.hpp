#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "mafqi/forest.hpp"
#include "mafqi/mdp.hpp"

namespace mafqi {

struct IterationRecord {
    int iteration = 0;
    double sup_norm = 0.0;
    std::uint64_t eval_count = 0; // Q / local-q evaluations in this iteration
    double wall_ms = 0.0;
};

struct NonConvergenceError : std::runtime_error {
    explicit NonConvergenceError(std::string what, std::vector<IterationRecord> t)
        : std::runtime_error(std::move(what)), trace(std::move(t)) {}
    std::vector<IterationRecord> trace;
};

// Centralized fitted Q iteration over the joint state-control space.
// `outputs` holds the Bellman targets at the batch points; evaluation
// anywhere is a kernel sum over the frozen joint ensemble.
struct CentralQ {
    std::vector<double> outputs;
    TreeEnsemble joint_ensemble;
    FeatureEncoder encoder;
    int m = 0;
    int cardinality = 2;
    int iteration = 0;
    double beta = 0.0;
    std::uint64_t eval_count = 0; // cumulative Q evaluations

    std::uint64_t num_joint_controls() const {
        std::uint64_t n = 1;
        for (int j = 0; j < m; ++j) n *= static_cast<std::uint64_t>(cardinality);
        return n;
    }

    double value_at(State x, std::uint64_t u_id) const {
        return joint_ensemble.predict_regression(outputs, encoder.joint(x, u_id));
    }
};

struct FqiParams {
    double beta = 0.5;
    double epsilon = 1e-3;
    int trees = 5;
    int n_min = 10;
    int iteration_cap = 500;
};

inline CentralQ make_central_q(const BatchDataset& data, const MdpSpec& spec,
                               const FqiParams& params, std::uint64_t forest_seed) {
    FeatureEncoder encoder(spec.num_states, spec.m, spec.local_control_cardinality);
    std::vector<FeatureVector> inputs;
    inputs.reserve(data.size());
    for (const auto& s : data.samples) inputs.push_back(encoder.joint(s.x, s.u));
    return CentralQ{std::vector<double>(data.size(), 0.0),
                    TreeEnsemble::build(std::move(inputs), params.trees, params.n_min, forest_seed),
                    encoder,
                    spec.m,
                    spec.local_control_cardinality,
                    0,
                    params.beta,
                    0};
}

// One Bellman sweep: outputs_l = r_l + beta * max_u' Q(x+_l, u'), the max by
// enumeration over all |U| joint controls. Returns the sup-norm change.
inline double fqi_iteration(const BatchDataset& data, CentralQ& q) {
    const RegressionView view(q.joint_ensemble, q.outputs);
    const std::uint64_t nu = q.num_joint_controls();
    std::vector<double> next(data.size());
    double sup = 0.0;
    for (std::size_t l = 0; l < data.size(); ++l) {
        double best = 0.0;
        bool first = true;
        for (std::uint64_t u = 0; u < nu; ++u) {
            const double v = view.evaluate(q.encoder.joint(data[l].x_plus, u));
            if (first || v > best) { best = v; first = false; }
        }
        q.eval_count += nu;
        next[l] = data[l].r + q.beta * best;
        sup = std::max(sup, std::abs(next[l] - q.outputs[l]));
    }
    q.outputs = std::move(next);
    ++q.iteration;
    return sup;
}

// Max and argmax over joint controls at state x; ties go to the smallest
// control under the mixed-radix ordering.
inline std::pair<double, std::uint64_t> fqi_value(const CentralQ& q, State x) {
    const RegressionView view(q.joint_ensemble, q.outputs);
    const std::uint64_t nu = q.num_joint_controls();
    double best = 0.0;
    std::uint64_t best_u = 0;
    bool first = true;
    for (std::uint64_t u = 0; u < nu; ++u) {
        const double v = view.evaluate(q.encoder.joint(x, u));
        if (first || v > best) { best = v; best_u = u; first = false; }
    }
    return {best, best_u};
}

struct FqiResult {
    CentralQ q;
    std::vector<IterationRecord> trace;
};

// Iterate until the sup-norm of successive batch outputs drops below epsilon.
inline FqiResult fqi_run(const BatchDataset& data, const MdpSpec& spec, const FqiParams& params,
                         std::uint64_t forest_seed) {
    if (params.epsilon <= 0.0) throw ConfigError("fqi_run: epsilon must be positive");
    FqiResult result{make_central_q(data, spec, params, forest_seed), {}};
    for (int n = 1; n <= params.iteration_cap; ++n) {
        const auto start = std::chrono::steady_clock::now();
        const std::uint64_t evals_before = result.q.eval_count;
        const double sup = fqi_iteration(data, result.q);
        const auto stop = std::chrono::steady_clock::now();
        result.trace.push_back(
            {n, sup, result.q.eval_count - evals_before,
             std::chrono::duration<double, std::milli>(stop - start).count()});
        if (sup < params.epsilon) return result;
    }
    throw NonConvergenceError("fqi_run: iteration cap reached", std::move(result.trace));
}

} // namespace mafqi
