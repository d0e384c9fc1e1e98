#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mafqi/rng.hpp"

namespace mafqi {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Reward bound of the random benchmark: mean reward <= 5 plus half-width 1/2.
inline constexpr double kRewardMax = 5.5;

using State = int;
using JointControl = std::vector<int>; // one local control id per agent

// Mixed-radix encoding of a joint control, agent 0 least significant.
// Fixes the control ordering used for tie breaking everywhere.
inline std::uint64_t encode_control(const JointControl& u, int cardinality) {
    std::uint64_t id = 0;
    for (std::size_t j = u.size(); j-- > 0;)
        id = id * static_cast<std::uint64_t>(cardinality) + static_cast<std::uint64_t>(u[j]);
    return id;
}

inline JointControl decode_control(std::uint64_t id, int agents, int cardinality) {
    JointControl u(static_cast<std::size_t>(agents));
    for (int j = 0; j < agents; ++j) {
        u[static_cast<std::size_t>(j)] = static_cast<int>(id % static_cast<std::uint64_t>(cardinality));
        id /= static_cast<std::uint64_t>(cardinality);
    }
    return u;
}

// Multi-agent multi-state random benchmark problem: one row-stochastic
// transition matrix per state (rows indexed by joint control) and a mean
// reward per state. Immutable after generation.
struct MdpSpec {
    int m = 0;                        // agent count
    int num_states = 0;               // |X|
    int local_control_cardinality = 2;
    // transitions[x] is row-major |U| x |X|
    std::vector<std::vector<double>> transitions;
    std::vector<double> mean_reward;  // R(x) in [0, 5]
    std::uint64_t seed = 0;

    std::uint64_t num_joint_controls() const {
        std::uint64_t n = 1;
        for (int j = 0; j < m; ++j) n *= static_cast<std::uint64_t>(local_control_cardinality);
        return n;
    }

    const double* row(State x, std::uint64_t u) const {
        return transitions[static_cast<std::size_t>(x)].data() +
               u * static_cast<std::uint64_t>(num_states);
    }
};

inline MdpSpec generate_random_mdp(int m, int num_states, std::uint64_t seed,
                                   int local_control_cardinality = 2) {
    if (m < 2 || num_states < 1 || local_control_cardinality < 1)
        throw ConfigError("generate_random_mdp: need m >= 2 and at least one state/control");
    MdpSpec spec;
    spec.m = m;
    spec.num_states = num_states;
    spec.local_control_cardinality = local_control_cardinality;
    spec.seed = seed;
    Rng rng(seed);
    const std::uint64_t nu = spec.num_joint_controls();
    spec.transitions.resize(static_cast<std::size_t>(num_states));
    for (int x = 0; x < num_states; ++x) {
        auto& mat = spec.transitions[static_cast<std::size_t>(x)];
        mat.resize(nu * static_cast<std::uint64_t>(num_states));
        for (std::uint64_t u = 0; u < nu; ++u) {
            double* row = mat.data() + u * static_cast<std::uint64_t>(num_states);
            double sum = 0.0;
            for (int x2 = 0; x2 < num_states; ++x2) {
                row[x2] = rng.uniform();
                sum += row[x2];
            }
            for (int x2 = 0; x2 < num_states; ++x2) row[x2] /= sum;
        }
    }
    spec.mean_reward.resize(static_cast<std::size_t>(num_states));
    for (int x = 0; x < num_states; ++x) spec.mean_reward[static_cast<std::size_t>(x)] = rng.uniform(0.0, 5.0);
    return spec;
}

// One environment round: sample the next state from the transition row, then
// the reward around the next state's mean. Reward clamped at 0 so r >= 0
// holds exactly.
inline std::pair<State, double> step(const MdpSpec& spec, State x, std::uint64_t u, Rng& rng) {
    if (x < 0 || x >= spec.num_states || u >= spec.num_joint_controls())
        throw ConfigError("step: state or control out of range");
    const double* row = spec.row(x, u);
    const double draw = rng.uniform();
    double acc = 0.0;
    State next = spec.num_states - 1;
    for (int x2 = 0; x2 < spec.num_states; ++x2) {
        acc += row[x2];
        if (draw < acc) { next = x2; break; }
    }
    const double mean = spec.mean_reward[static_cast<std::size_t>(next)];
    double reward = rng.uniform(mean - 0.5, mean + 0.5);
    if (reward < 0.0) reward = 0.0;
    return {next, reward};
}

struct BatchSample {
    State x = 0;
    JointControl u;
    State x_plus = 0;
    double r = 0.0;
};

// Ordered batch S_L; sample order is part of the contract (tie breaking in
// the policy search scans by index).
struct BatchDataset {
    std::vector<BatchSample> samples;

    std::size_t size() const { return samples.size(); }
    const BatchSample& operator[](std::size_t l) const { return samples[l]; }
};

inline BatchDataset sample_batch(const MdpSpec& spec, std::size_t count, Rng& rng) {
    if (count < 1) throw ConfigError("sample_batch: need at least one sample");
    BatchDataset data;
    data.samples.reserve(count);
    const std::uint64_t nu = spec.num_joint_controls();
    for (std::size_t l = 0; l < count; ++l) {
        BatchSample s;
        s.x = static_cast<State>(rng.uniform_index(static_cast<std::uint64_t>(spec.num_states)));
        const std::uint64_t u = rng.uniform_index(nu);
        s.u = decode_control(u, spec.m, spec.local_control_cardinality);
        auto [xp, r] = step(spec, s.x, u, rng);
        s.x_plus = xp;
        s.r = r;
        data.samples.push_back(std::move(s));
    }
    return data;
}

struct RewardStats {
    std::vector<double> cumulative;  // per trial, undiscounted
    std::vector<double> discounted;  // per trial, sum beta^T r_T
    double cumulative_mean = 0.0;
    double cumulative_std = 0.0;
    double discounted_mean = 0.0;
    double discounted_std = 0.0;
};

inline void finalize_stats(const std::vector<double>& v, double& mean, double& sd) {
    mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    sd = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
}

// Monte-Carlo policy evaluation: uniform random initial state per trial,
// trial t uses the RNG stream derived from (seed, t).
inline RewardStats evaluate_policy(const MdpSpec& spec,
                                   const std::function<JointControl(State)>& policy,
                                   int horizon, int trials, double beta,
                                   std::uint64_t seed) {
    RewardStats stats;
    stats.cumulative.resize(static_cast<std::size_t>(trials));
    stats.discounted.resize(static_cast<std::size_t>(trials));
    SeedSequence seq(seed);
    for (int t = 0; t < trials; ++t) {
        Rng rng = seq.stream(static_cast<std::uint64_t>(t));
        State x = static_cast<State>(rng.uniform_index(static_cast<std::uint64_t>(spec.num_states)));
        double total = 0.0, disc = 0.0, betap = beta;
        for (int round = 0; round < horizon; ++round) {
            const JointControl u = policy(x);
            auto [xp, r] = step(spec, x, encode_control(u, spec.local_control_cardinality), rng);
            total += r;
            disc += betap * r;
            betap *= beta;
            x = xp;
        }
        stats.cumulative[static_cast<std::size_t>(t)] = total;
        stats.discounted[static_cast<std::size_t>(t)] = disc;
    }
    finalize_stats(stats.cumulative, stats.cumulative_mean, stats.cumulative_std);
    finalize_stats(stats.discounted, stats.discounted_mean, stats.discounted_std);
    return stats;
}

// ---- serialization ----

inline nlohmann::json to_json(const MdpSpec& spec) {
    nlohmann::json j;
    j["m"] = spec.m;
    j["X"] = spec.num_states;
    j["A"] = spec.local_control_cardinality;
    j["seed"] = spec.seed;
    j["R"] = spec.mean_reward;
    auto& p = j["P"] = nlohmann::json::array();
    const std::uint64_t nu = spec.num_joint_controls();
    for (int x = 0; x < spec.num_states; ++x) {
        nlohmann::json mat = nlohmann::json::array();
        for (std::uint64_t u = 0; u < nu; ++u) {
            const double* row = spec.row(x, u);
            mat.push_back(std::vector<double>(row, row + spec.num_states));
        }
        p.push_back(std::move(mat));
    }
    return j;
}

inline MdpSpec mdp_from_json(const nlohmann::json& j) {
    MdpSpec spec;
    spec.m = j.at("m").get<int>();
    spec.num_states = j.at("X").get<int>();
    spec.local_control_cardinality = j.at("A").get<int>();
    spec.seed = j.at("seed").get<std::uint64_t>();
    spec.mean_reward = j.at("R").get<std::vector<double>>();
    for (const auto& mat : j.at("P")) {
        std::vector<double> flat;
        for (const auto& row : mat)
            for (const auto& v : row) flat.push_back(v.get<double>());
        spec.transitions.push_back(std::move(flat));
    }
    return spec;
}

inline void write_batch_csv(const BatchDataset& data, int agents, std::ostream& out) {
    out << "x";
    for (int j = 0; j < agents; ++j) out << ",u_" << j;
    out << ",x_plus,r\n";
    char buf[64];
    for (const auto& s : data.samples) {
        out << s.x;
        for (int j = 0; j < agents; ++j) out << ',' << s.u[static_cast<std::size_t>(j)];
        std::snprintf(buf, sizeof(buf), "%.17g", s.r);
        out << ',' << s.x_plus << ',' << buf << '\n';
    }
}

inline nlohmann::json to_json(const BatchDataset& data) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& s : data.samples)
        j.push_back({{"x", s.x}, {"u", s.u}, {"x_plus", s.x_plus}, {"r", s.r}});
    return j;
}

inline BatchDataset batch_from_json(const nlohmann::json& j) {
    BatchDataset data;
    for (const auto& e : j) {
        BatchSample s;
        s.x = e.at("x").get<State>();
        s.u = e.at("u").get<JointControl>();
        s.x_plus = e.at("x_plus").get<State>();
        s.r = e.at("r").get<double>();
        data.samples.push_back(std::move(s));
    }
    return data;
}

} // namespace mafqi
