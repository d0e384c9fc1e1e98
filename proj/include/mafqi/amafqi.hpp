#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include <json.hpp>

#include "mafqi/fqi.hpp"
#include "mafqi/forest.hpp"
#include "mafqi/mdp.hpp"

namespace mafqi {

// Agent j's local q-function over (state, local control). `targets` are the
// regression outputs that define q_hat_N everywhere through the local
// kernel; `outputs` is the kernel-sum image of those targets at the batch
// points, i.e. q_hat_N(x_l, u_l(j)).
struct LocalQ {
    int agent = 0;
    TreeEnsemble local_ensemble;
    std::vector<double> targets;
    std::vector<double> outputs;
    int iteration = 0;

    double value_at(const FeatureEncoder& encoder, State x, int a) const {
        return local_ensemble.predict_regression(targets, encoder.local(x, a));
    }
};

// q~_N values at the batch points: the joint-kernel estimate of the
// conditional expectation of the Bellman targets. Never maximized over the
// joint control space.
struct AuxQ {
    std::vector<double> values;
};

struct AmafqiParams {
    double beta = 0.5;
    double epsilon = 1e-3;
    double gamma = 1e-3; // gamma >= epsilon
    int trees = 5;
    int n_min = 10;
    int iteration_cap = 500;
    std::vector<std::uint64_t> agent_seeds; // optional per-agent ensemble seeds
};

struct AgentTrace {
    int agent = 0;
    std::vector<IterationRecord> records;
};

struct AmafqiModel {
    int m = 0;
    int num_states = 0;
    int cardinality = 2;
    double beta = 0.0;
    double epsilon = 0.0;
    double gamma = 0.0;
    FeatureEncoder encoder{0, 0, 0};
    std::vector<int> tracked;       // agent indices; all agents or a single one
    std::vector<LocalQ> locals;     // one per tracked agent
    TreeEnsemble joint_ensemble;    // shared across agents
    std::vector<State> states;      // distinct batch states, ascending
    // grid_log[t][n][s * cardinality + a]: q_hat values of tracked agent t at
    // iteration n over distinct states x local controls
    std::vector<std::vector<std::vector<double>>> grid_log;
    std::vector<int> converged_at;  // per tracked agent, n(j)
    std::vector<AgentTrace> traces;
    std::uint64_t local_eval_count = 0; // local-q evaluations in target fitting
    std::uint64_t aux_eval_count = 0;   // joint-kernel evaluations
    int iteration = 0;

    std::size_t state_index_of(State x) const {
        const auto it = std::lower_bound(states.begin(), states.end(), x);
        return static_cast<std::size_t>(it - states.begin());
    }

    double grid_value(std::size_t tracked_idx, int n, std::size_t state_idx, int a) const {
        return grid_log[tracked_idx][static_cast<std::size_t>(n)]
                       [state_idx * static_cast<std::size_t>(cardinality) + static_cast<std::size_t>(a)];
    }

    double grid_max(std::size_t tracked_idx, int n, std::size_t state_idx) const {
        double best = grid_value(tracked_idx, n, state_idx, 0);
        for (int a = 1; a < cardinality; ++a)
            best = std::max(best, grid_value(tracked_idx, n, state_idx, a));
        return best;
    }

    // q_hat of tracked agent at an arbitrary (state, local control)
    double local_q_value(std::size_t tracked_idx, State x, int a) const {
        return locals[tracked_idx].value_at(encoder, x, a);
    }

    nlohmann::json to_json() const;
};

inline std::vector<State> distinct_states(const BatchDataset& data) {
    std::vector<State> states;
    for (const auto& s : data.samples) states.push_back(s.x);
    std::sort(states.begin(), states.end());
    states.erase(std::unique(states.begin(), states.end()), states.end());
    return states;
}

inline AmafqiModel make_amafqi_model(const BatchDataset& data, const MdpSpec& spec,
                                     const AmafqiParams& params, std::vector<int> tracked,
                                     std::uint64_t seed) {
    if (params.epsilon <= 0.0 || params.gamma < params.epsilon)
        throw ConfigError("amafqi: need gamma >= epsilon > 0");
    AmafqiModel model;
    model.m = spec.m;
    model.num_states = spec.num_states;
    model.cardinality = spec.local_control_cardinality;
    model.beta = params.beta;
    model.epsilon = params.epsilon;
    model.gamma = params.gamma;
    model.encoder = FeatureEncoder(spec.num_states, spec.m, spec.local_control_cardinality);
    model.tracked = std::move(tracked);
    model.states = distinct_states(data);

    SeedSequence seq(seed);
    std::vector<FeatureVector> joint_inputs;
    joint_inputs.reserve(data.size());
    for (const auto& s : data.samples) joint_inputs.push_back(model.encoder.joint(s.x, s.u));
    model.joint_ensemble =
        TreeEnsemble::build(std::move(joint_inputs), params.trees, params.n_min, seq.derive(0));

    for (std::size_t t = 0; t < model.tracked.size(); ++t) {
        const int j = model.tracked[t];
        std::vector<FeatureVector> local_inputs;
        local_inputs.reserve(data.size());
        for (const auto& s : data.samples)
            local_inputs.push_back(model.encoder.local(s.x, s.u[static_cast<std::size_t>(j)]));
        const std::uint64_t agent_seed = t < params.agent_seeds.size()
                                             ? params.agent_seeds[t]
                                             : seq.derive(1 + static_cast<std::uint64_t>(j));
        LocalQ lq{j, TreeEnsemble::build(std::move(local_inputs), params.trees, params.n_min, agent_seed),
                  std::vector<double>(data.size(), 0.0), std::vector<double>(data.size(), 0.0), 0};
        model.locals.push_back(std::move(lq));
        model.grid_log.push_back({std::vector<double>(
            model.states.size() * static_cast<std::size_t>(model.cardinality), 0.0)});
        model.converged_at.push_back(-1);
        model.traces.push_back({j, {}});
    }
    return model;
}

// o_l = r_l + beta * max_{a'} q_hat_{N-1}(x+_l, a'); exactly L * |A^j|
// local-q evaluations.
inline std::vector<double> fitting_targets(const BatchDataset& data, AmafqiModel& model,
                                           std::size_t tracked_idx) {
    const LocalQ& lq = model.locals[tracked_idx];
    const RegressionView view(lq.local_ensemble, lq.targets);
    std::vector<double> out(data.size());
    for (std::size_t l = 0; l < data.size(); ++l) {
        double best = 0.0;
        bool first = true;
        for (int a = 0; a < model.cardinality; ++a) {
            const double v = view.evaluate(model.encoder.local(data[l].x_plus, a));
            if (first || v > best) { best = v; first = false; }
        }
        model.local_eval_count += static_cast<std::uint64_t>(model.cardinality);
        out[l] = data[l].r + model.beta * best;
    }
    return out;
}

// q~_N at the batch points through the shared joint ensemble.
inline AuxQ auxiliary_q(const TreeEnsemble& joint_ensemble, const std::vector<double>& targets) {
    const RegressionView view(joint_ensemble, targets);
    AuxQ aux;
    aux.values.resize(targets.size());
    for (std::size_t l = 0; l < targets.size(); ++l)
        aux.values[l] = view.evaluate_training_point(l);
    return aux;
}

// New regression outputs: max of the previous fitted value at the batch
// point and the fresh auxiliary value; stored `outputs` become their
// kernel-sum image. Appends the iteration's evaluation grid.
inline void local_q_update(const BatchDataset& data, AmafqiModel& model, std::size_t tracked_idx,
                           const AuxQ& aux) {
    LocalQ& lq = model.locals[tracked_idx];
    std::vector<double> targets(data.size());
    for (std::size_t l = 0; l < data.size(); ++l)
        targets[l] = std::max(lq.outputs[l], aux.values[l]);
    const RegressionView view(lq.local_ensemble, targets);
    for (std::size_t l = 0; l < data.size(); ++l)
        lq.outputs[l] = view.evaluate_training_point(l);
    lq.targets = std::move(targets);
    ++lq.iteration;

    std::vector<double> grid(model.states.size() * static_cast<std::size_t>(model.cardinality));
    for (std::size_t s = 0; s < model.states.size(); ++s)
        for (int a = 0; a < model.cardinality; ++a)
            grid[s * static_cast<std::size_t>(model.cardinality) + static_cast<std::size_t>(a)] =
                view.evaluate(model.encoder.local(model.states[s], a));
    model.grid_log[tracked_idx].push_back(std::move(grid));
}

// Runs one full iteration for every tracked agent; returns per-agent
// sup-norms over the evaluation grid.
inline std::vector<double> amafqi_step(const BatchDataset& data, AmafqiModel& model) {
    const int n = model.iteration + 1;
    std::vector<double> sups(model.tracked.size(), 0.0);
    for (std::size_t t = 0; t < model.tracked.size(); ++t) {
        const auto start = std::chrono::steady_clock::now();
        const std::uint64_t evals_before = model.local_eval_count;
        const std::vector<double> targets = fitting_targets(data, model, t);
        const AuxQ aux = auxiliary_q(model.joint_ensemble, targets);
        model.aux_eval_count += data.size();
        local_q_update(data, model, t, aux);
        const auto& cur = model.grid_log[t][static_cast<std::size_t>(n)];
        const auto& prev = model.grid_log[t][static_cast<std::size_t>(n - 1)];
        double sup = 0.0;
        for (std::size_t i = 0; i < cur.size(); ++i)
            sup = std::max(sup, std::abs(cur[i] - prev[i]));
        sups[t] = sup;
        const auto stop = std::chrono::steady_clock::now();
        model.traces[t].records.push_back(
            {n, sup, model.local_eval_count - evals_before,
             std::chrono::duration<double, std::milli>(stop - start).count()});
    }
    model.iteration = n;
    return sups;
}

enum class AmafqiMode { AllAgents, SingleAgent };

// Iterates fitting -> auxiliary -> update for every tracked agent until the
// sup-norm over (distinct batch states x local controls) drops below epsilon
// for all of them. `hook` runs after each iteration (the policy search
// consumes it).
inline AmafqiModel amafqi_run(const BatchDataset& data, const MdpSpec& spec,
                              const AmafqiParams& params, AmafqiMode mode, int light_agent,
                              std::uint64_t seed,
                              const std::function<void(AmafqiModel&, int)>& hook = {}) {
    std::vector<int> tracked;
    if (mode == AmafqiMode::AllAgents) {
        for (int j = 0; j < spec.m; ++j) tracked.push_back(j);
    } else {
        if (light_agent < 0 || light_agent >= spec.m)
            throw ConfigError("amafqi_run: light agent index out of range");
        tracked.push_back(light_agent);
    }
    AmafqiModel model = make_amafqi_model(data, spec, params, std::move(tracked), seed);
    for (int n = 1; n <= params.iteration_cap; ++n) {
        const std::vector<double> sups = amafqi_step(data, model);
        if (hook) hook(model, n);
        bool all_converged = true;
        for (std::size_t t = 0; t < sups.size(); ++t) {
            if (sups[t] < params.epsilon) {
                if (model.converged_at[t] < 0) model.converged_at[t] = n;
            } else {
                model.converged_at[t] = -1;
                all_converged = false;
            }
        }
        if (all_converged) return model;
    }
    std::vector<IterationRecord> trace;
    for (const auto& t : model.traces)
        trace.insert(trace.end(), t.records.begin(), t.records.end());
    throw NonConvergenceError("amafqi_run: iteration cap reached", std::move(trace));
}

inline nlohmann::json AmafqiModel::to_json() const {
    nlohmann::json j;
    j["m"] = m;
    j["X"] = num_states;
    j["A"] = cardinality;
    j["beta"] = beta;
    j["epsilon"] = epsilon;
    j["gamma"] = gamma;
    j["iteration"] = iteration;
    j["tracked"] = tracked;
    j["states"] = states;
    j["converged_at"] = converged_at;
    j["joint_ensemble"] = joint_ensemble.to_json();
    auto& ls = j["locals"] = nlohmann::json::array();
    for (const auto& lq : locals)
        ls.push_back({{"agent", lq.agent},
                      {"targets", lq.targets},
                      {"outputs", lq.outputs},
                      {"ensemble", lq.local_ensemble.to_json()}});
    auto& logs = j["maxima_log"] = nlohmann::json::array();
    for (std::size_t t = 0; t < tracked.size(); ++t) {
        nlohmann::json per_agent = nlohmann::json::array();
        for (int n = 0; n <= iteration; ++n) {
            std::vector<double> maxima;
            for (std::size_t s = 0; s < states.size(); ++s)
                maxima.push_back(grid_max(t, n, s));
            per_agent.push_back(std::move(maxima));
        }
        logs.push_back(std::move(per_agent));
    }
    return j;
}

} // namespace mafqi
