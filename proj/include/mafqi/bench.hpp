#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mafqi/amafqi.hpp"
#include "mafqi/fqi.hpp"
#include "mafqi/mdp.hpp"
#include "mafqi/policy.hpp"

namespace mafqi {
namespace bench {

struct ExperimentConfig {
    int m = 3;
    int num_states = 4;
    int cardinality = 2;
    int batch_size = 500;
    double beta = 0.5;
    double epsilon = 1e-3;
    double gamma = 1e-3;
    int trees = 5;
    int n_min = 10;
    int horizon = 100;   // tau
    int trials = 20;
    int instances = 10;
    std::uint64_t seed = 1;
    std::string mode = "all"; // amafqi | amafqi-l | fqi | all
    int light_agent_index = 0;
    int iteration_cap = 500;
    std::string output_dir = "bench-out";

    void validate() const {
        if (m < 2 || num_states < 1 || batch_size < 1 || trees < 1 || n_min < 1 ||
            horizon < 0 || trials < 1 || instances < 1 || iteration_cap < 1)
            throw ConfigError("config: counts must be positive");
        if (beta < 0.0 || beta >= 1.0) throw ConfigError("config: beta must be in [0, 1)");
        if (epsilon <= 0.0 || gamma < epsilon)
            throw ConfigError("config: need gamma >= epsilon > 0");
        if (mode != "amafqi" && mode != "amafqi-l" && mode != "fqi" && mode != "all")
            throw ConfigError("config: unknown mode '" + mode + "'");
        if (light_agent_index < 0 || light_agent_index >= m)
            throw ConfigError("config: light agent index out of range");
    }

    bool wants_amafqi() const { return mode == "amafqi" || mode == "all"; }
    bool wants_light() const { return mode == "amafqi-l" || mode == "all"; }
    bool wants_fqi() const { return mode == "fqi" || mode == "all"; }

    AmafqiParams amafqi_params() const {
        return {beta, epsilon, gamma, trees, n_min, iteration_cap, {}};
    }
    FqiParams fqi_params() const { return {beta, epsilon, trees, n_min, iteration_cap}; }
};

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    c.m = j.value("m", c.m);
    c.num_states = j.value("X", c.num_states);
    c.cardinality = j.value("A", c.cardinality);
    c.batch_size = j.value("L", c.batch_size);
    c.beta = j.value("beta", c.beta);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.gamma = j.value("gamma", c.gamma);
    c.trees = j.value("trees", c.trees);
    c.n_min = j.value("n_min", c.n_min);
    c.horizon = j.value("tau", c.horizon);
    c.trials = j.value("trials", c.trials);
    c.instances = j.value("instances", c.instances);
    c.seed = j.value("seed", c.seed);
    c.mode = j.value("mode", c.mode);
    c.light_agent_index = j.value("light_agent_index", c.light_agent_index);
    c.iteration_cap = j.value("iteration_cap", c.iteration_cap);
    c.output_dir = j.value("output_dir", c.output_dir);
    if (const char* env = std::getenv("MAFQI_OUTPUT_DIR")) c.output_dir = env;
    c.validate();
    return c;
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
    return {{"m", c.m},          {"X", c.num_states},  {"A", c.cardinality},
            {"L", c.batch_size}, {"beta", c.beta},     {"epsilon", c.epsilon},
            {"gamma", c.gamma},  {"trees", c.trees},   {"n_min", c.n_min},
            {"tau", c.horizon},  {"trials", c.trials}, {"instances", c.instances},
            {"seed", c.seed},    {"mode", c.mode},     {"light_agent_index", c.light_agent_index},
            {"iteration_cap", c.iteration_cap},        {"output_dir", c.output_dir}};
}

// |(max_a q_hat_j(x, a) - max_u Q_fqi(x, u)) / max_u Q_fqi(x, u)|;
// empty when the denominator is zero.
inline std::optional<double> delta_metric(const AmafqiModel& model, const CentralQ& central,
                                          State x, std::size_t tracked_idx) {
    const auto [fqi_max, fqi_arg] = fqi_value(central, x);
    (void)fqi_arg;
    if (fqi_max == 0.0) return std::nullopt;
    double local_max = model.local_q_value(tracked_idx, x, 0);
    for (int a = 1; a < model.cardinality; ++a)
        local_max = std::max(local_max, model.local_q_value(tracked_idx, x, a));
    return std::abs((local_max - fqi_max) / fqi_max);
}

struct MethodRun {
    std::string method;
    bool ok = false;
    std::string error;
    int iterations = 0;
    std::uint64_t local_evals_per_iter = 0;
    std::uint64_t aux_evals_per_iter = 0;
    std::vector<AgentTrace> traces;
    std::optional<RewardStats> rewards;
    std::optional<nlohmann::json> policy_bundle; // loadable by `bench act`
};

struct DeltaRecord {
    std::string method; // amafqi or amafqi-l
    int agent = 0;
    State state = 0;
    double value = 0.0;
};

struct InstanceReport {
    int instance = 0;
    std::vector<MethodRun> methods;
    std::vector<DeltaRecord> deltas;
    int undefined_deltas = 0;
    std::optional<GapReport> gap_audit;
};

struct RunReport {
    ExperimentConfig config;
    std::vector<InstanceReport> instances;
    double mean_delta_amafqi = 0.0;
    double mean_delta_light = 0.0;
    double reward_gap_amafqi = 0.0; // relative cumulative-reward gap vs FQI
    double reward_gap_light = 0.0;
};

namespace detail {

inline std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::function<JointControl(State)> fqi_policy(const CentralQ& q, int num_states) {
    std::vector<JointControl> controls;
    controls.reserve(static_cast<std::size_t>(num_states));
    for (State x = 0; x < num_states; ++x)
        controls.push_back(decode_control(fqi_value(q, x).second, q.m, q.cardinality));
    return [controls](State x) { return controls[static_cast<std::size_t>(x)]; };
}

} // namespace detail

// One full problem instance: fresh MDP and batch, every requested method,
// delta metrics and greedy-policy rewards. Errors from one method are
// recorded without aborting the rest.
inline InstanceReport run_instance(const ExperimentConfig& config, int instance) {
    InstanceReport report;
    report.instance = instance;
    const SeedSequence instance_seq(SeedSequence(config.seed).derive(static_cast<std::uint64_t>(instance)));
    const MdpSpec spec = generate_random_mdp(config.m, config.num_states, instance_seq.derive(0),
                                             config.cardinality);
    Rng batch_rng(instance_seq.derive(1));
    const BatchDataset data = sample_batch(spec, static_cast<std::size_t>(config.batch_size), batch_rng);

    std::optional<CentralQ> central;
    std::optional<AmafqiRunResult> amafqi_result;
    std::optional<AmafqiRunResult> light_result;

    if (config.wants_fqi()) {
        MethodRun run;
        run.method = "fqi";
        try {
            FqiResult r = fqi_run(data, spec, config.fqi_params(), instance_seq.derive(2));
            run.iterations = r.q.iteration;
            run.local_evals_per_iter = data.size() * spec.num_joint_controls();
            run.traces.push_back({-1, r.trace});
            run.rewards = evaluate_policy(spec, detail::fqi_policy(r.q, spec.num_states),
                                          config.horizon, config.trials, config.beta,
                                          instance_seq.derive(10));
            central = std::move(r.q);
            run.ok = true;
        } catch (const std::exception& e) {
            run.error = e.what();
        }
        report.methods.push_back(std::move(run));
    }

    if (config.wants_amafqi()) {
        MethodRun run;
        run.method = "amafqi";
        try {
            amafqi_result = amafqi_run_with_policy(data, spec, config.amafqi_params(),
                                                   AmafqiMode::AllAgents, 0, instance_seq.derive(3));
            const AmafqiModel& model = amafqi_result->model;
            run.iterations = model.iteration;
            run.local_evals_per_iter =
                static_cast<std::uint64_t>(model.m) * data.size() *
                static_cast<std::uint64_t>(model.cardinality);
            run.aux_evals_per_iter = static_cast<std::uint64_t>(model.m) * data.size();
            run.traces = model.traces;
            const GeneralizedPolicy policy =
                GeneralizedPolicy::build(amafqi_result->policy, data, model, config.trees,
                                         config.n_min, instance_seq.derive(4));
            run.rewards = evaluate_policy(
                spec, [&policy](State x) { return policy(x); }, config.horizon, config.trials,
                config.beta, instance_seq.derive(11));
            run.policy_bundle = policy.to_json();
            report.gap_audit = greedy_gap_audit(amafqi_result->policy, model);
            run.ok = true;
        } catch (const std::exception& e) {
            run.error = e.what();
        }
        report.methods.push_back(std::move(run));
    }

    if (config.wants_light()) {
        MethodRun run;
        run.method = "amafqi-l";
        try {
            light_result = amafqi_run_with_policy(data, spec, config.amafqi_params(),
                                                  AmafqiMode::SingleAgent, config.light_agent_index,
                                                  instance_seq.derive(5));
            const AmafqiModel& model = light_result->model;
            run.iterations = model.iteration;
            run.local_evals_per_iter =
                data.size() * static_cast<std::uint64_t>(model.cardinality);
            run.aux_evals_per_iter = data.size();
            run.traces = model.traces;
            const GeneralizedPolicy policy =
                GeneralizedPolicy::build(light_result->policy, data, model, config.trees,
                                         config.n_min, instance_seq.derive(6));
            run.rewards = evaluate_policy(
                spec, [&policy](State x) { return policy(x); }, config.horizon, config.trials,
                config.beta, instance_seq.derive(12));
            run.policy_bundle = policy.to_json();
            run.ok = true;
        } catch (const std::exception& e) {
            run.error = e.what();
        }
        report.methods.push_back(std::move(run));
    }

    if (central) {
        const auto collect = [&](const AmafqiRunResult& result, const std::string& name) {
            const AmafqiModel& model = result.model;
            for (std::size_t t = 0; t < model.tracked.size(); ++t) {
                for (State x = 0; x < spec.num_states; ++x) {
                    const auto d = delta_metric(model, *central, x, t);
                    if (d) report.deltas.push_back({name, model.tracked[t], x, *d});
                    else ++report.undefined_deltas;
                }
            }
        };
        if (amafqi_result) collect(*amafqi_result, "amafqi");
        if (light_result) collect(*light_result, "amafqi-l");
    }
    return report;
}

inline void write_csvs(const RunReport& report, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream conv(dir / "convergence.csv");
    conv << "instance,method,agent,iteration,sup_norm,eval_count,wall_ms\n";
    std::ofstream delta(dir / "delta.csv");
    delta << "instance,method,agent,state,delta\n";
    std::ofstream rewards(dir / "rewards.csv");
    rewards << "instance,method,cumulative_mean,cumulative_std,discounted_mean,discounted_std\n";
    std::ofstream work(dir / "work.csv");
    work << "instance,method,iterations,local_evals_per_iter,aux_evals_per_iter\n";
    for (const auto& inst : report.instances) {
        for (const auto& run : inst.methods) {
            for (const auto& trace : run.traces)
                for (const auto& rec : trace.records)
                    conv << inst.instance << ',' << run.method << ',' << trace.agent << ','
                         << rec.iteration << ',' << detail::fmt(rec.sup_norm) << ','
                         << rec.eval_count << ',' << detail::fmt(rec.wall_ms) << '\n';
            if (run.rewards)
                rewards << inst.instance << ',' << run.method << ','
                        << detail::fmt(run.rewards->cumulative_mean) << ','
                        << detail::fmt(run.rewards->cumulative_std) << ','
                        << detail::fmt(run.rewards->discounted_mean) << ','
                        << detail::fmt(run.rewards->discounted_std) << '\n';
            work << inst.instance << ',' << run.method << ',' << run.iterations << ','
                 << run.local_evals_per_iter << ',' << run.aux_evals_per_iter << '\n';
        }
        for (const auto& d : inst.deltas)
            delta << inst.instance << ',' << d.method << ',' << d.agent << ',' << d.state << ','
                  << detail::fmt(d.value) << '\n';
    }
}

inline nlohmann::json to_json(const RunReport& report) {
    nlohmann::json j;
    j["config"] = to_json(report.config);
    j["mean_delta_amafqi"] = report.mean_delta_amafqi;
    j["mean_delta_amafqi_l"] = report.mean_delta_light;
    j["reward_gap_amafqi"] = report.reward_gap_amafqi;
    j["reward_gap_amafqi_l"] = report.reward_gap_light;
    auto& insts = j["instances"] = nlohmann::json::array();
    for (const auto& inst : report.instances) {
        nlohmann::json ij;
        ij["instance"] = inst.instance;
        ij["undefined_deltas"] = inst.undefined_deltas;
        if (inst.gap_audit) {
            ij["gap_audit_fraction_within_gamma"] = inst.gap_audit->fraction_within_gamma();
            ij["gap_audit_non_sentinel_states"] = inst.gap_audit->non_sentinel_states;
        }
        auto& ms = ij["methods"] = nlohmann::json::array();
        for (const auto& run : inst.methods) {
            nlohmann::json mj;
            mj["method"] = run.method;
            mj["ok"] = run.ok;
            if (!run.ok) mj["error"] = run.error;
            mj["iterations"] = run.iterations;
            mj["local_evals_per_iter"] = run.local_evals_per_iter;
            mj["aux_evals_per_iter"] = run.aux_evals_per_iter;
            if (run.rewards) {
                mj["cumulative_mean"] = run.rewards->cumulative_mean;
                mj["cumulative_std"] = run.rewards->cumulative_std;
                mj["discounted_mean"] = run.rewards->discounted_mean;
                mj["discounted_std"] = run.rewards->discounted_std;
            }
            double wall = 0.0;
            for (const auto& trace : run.traces)
                for (const auto& rec : trace.records) wall += rec.wall_ms;
            mj["wall_ms_total"] = wall;
            ms.push_back(std::move(mj));
        }
        insts.push_back(std::move(ij));
    }
    return j;
}

inline RunReport run_experiment(const ExperimentConfig& config) {
    config.validate();
    RunReport report;
    report.config = config;
    for (int i = 0; i < config.instances; ++i)
        report.instances.push_back(run_instance(config, i));

    const auto mean_delta = [&](const std::string& method) {
        double sum = 0.0;
        std::size_t count = 0;
        for (const auto& inst : report.instances)
            for (const auto& d : inst.deltas)
                if (d.method == method) { sum += d.value; ++count; }
        return count ? sum / static_cast<double>(count) : 0.0;
    };
    report.mean_delta_amafqi = mean_delta("amafqi");
    report.mean_delta_light = mean_delta("amafqi-l");

    const auto mean_reward = [&](const std::string& method) -> std::optional<double> {
        double sum = 0.0;
        std::size_t count = 0;
        for (const auto& inst : report.instances)
            for (const auto& run : inst.methods)
                if (run.method == method && run.rewards) {
                    sum += run.rewards->cumulative_mean;
                    ++count;
                }
        if (!count) return std::nullopt;
        return sum / static_cast<double>(count);
    };
    const auto fqi_mean = mean_reward("fqi");
    if (fqi_mean && *fqi_mean != 0.0) {
        if (const auto v = mean_reward("amafqi"))
            report.reward_gap_amafqi = std::abs((*fqi_mean - *v) / *fqi_mean);
        if (const auto v = mean_reward("amafqi-l"))
            report.reward_gap_light = std::abs((*fqi_mean - *v) / *fqi_mean);
    }

    const std::filesystem::path dir(config.output_dir);
    write_csvs(report, dir);
    std::ofstream(dir / "report.json") << to_json(report).dump(2) << '\n';
    for (const auto& inst : report.instances)
        for (const auto& run : inst.methods)
            if (run.policy_bundle) {
                const std::string name =
                    "policy_" + run.method + "_" + std::to_string(inst.instance) + ".json";
                std::ofstream(dir / name) << run.policy_bundle->dump(2) << '\n';
            }
    return report;
}

struct WorkScalingRow {
    int m = 0;
    std::uint64_t amafqi_measured = 0;
    std::uint64_t amafqi_expected = 0;
    std::uint64_t light_measured = 0;
    std::uint64_t light_expected = 0;
    std::uint64_t fqi_measured = 0;
    std::uint64_t fqi_expected = 0;

    bool matches() const {
        return amafqi_measured == amafqi_expected && light_measured == light_expected &&
               fqi_measured == fqi_expected;
    }
};

// Per-iteration evaluation counts from the instrumented counters against the
// analytic m*L*|A|, L*|A|, and L*|A|^m formulas.
inline std::vector<WorkScalingRow> work_scaling_report(const std::vector<int>& agent_counts,
                                                       ExperimentConfig base) {
    std::vector<WorkScalingRow> rows;
    for (int m : agent_counts) {
        ExperimentConfig c = base;
        c.m = m;
        const SeedSequence seq(SeedSequence(c.seed).derive(static_cast<std::uint64_t>(m)));
        const MdpSpec spec = generate_random_mdp(c.m, c.num_states, seq.derive(0), c.cardinality);
        Rng rng(seq.derive(1));
        const BatchDataset data = sample_batch(spec, static_cast<std::size_t>(c.batch_size), rng);
        const std::uint64_t L = data.size();
        const std::uint64_t A = static_cast<std::uint64_t>(c.cardinality);

        WorkScalingRow row;
        row.m = m;
        {
            AmafqiModel model = make_amafqi_model(data, spec, c.amafqi_params(),
                                                  [&] {
                                                      std::vector<int> t;
                                                      for (int j = 0; j < m; ++j) t.push_back(j);
                                                      return t;
                                                  }(),
                                                  seq.derive(2));
            amafqi_step(data, model);
            row.amafqi_measured = model.local_eval_count;
            row.amafqi_expected = static_cast<std::uint64_t>(m) * L * A;
        }
        {
            AmafqiModel model =
                make_amafqi_model(data, spec, c.amafqi_params(), {0}, seq.derive(3));
            amafqi_step(data, model);
            row.light_measured = model.local_eval_count;
            row.light_expected = L * A;
        }
        {
            CentralQ q = make_central_q(data, spec, c.fqi_params(), seq.derive(4));
            fqi_iteration(data, q);
            row.fqi_measured = q.eval_count;
            row.fqi_expected = L * spec.num_joint_controls();
        }
        rows.push_back(row);
    }
    return rows;
}

} // namespace bench
} // namespace mafqi
