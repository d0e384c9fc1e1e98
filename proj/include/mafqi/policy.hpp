#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "mafqi/amafqi.hpp"
#include "mafqi/forest.hpp"
#include "mafqi/mdp.hpp"

namespace mafqi {

// Absolute tolerance for the "q_hat equals the maximum" test; both sides are
// kernel sums over the same outputs, exact float equality is brittle.
inline constexpr double kArgmaxTolerance = 1e-9;

// Ordered sample indices l with x_l == x.
inline std::vector<std::size_t> state_index(const BatchDataset& data, State x) {
    std::vector<std::size_t> out;
    for (std::size_t l = 0; l < data.size(); ++l)
        if (data[l].x == x) out.push_back(l);
    return out;
}

struct PolicyEntry {
    bool sentinel = true;            // the p*1 marker: no qualifying batch control
    std::uint64_t control_id = 0;    // mixed-radix encoded joint control
    int last_update = 0;             // iteration of the most recent (re)assignment
    std::size_t chosen_sample = 0;   // batch index the control came from
    int qualifying_alternates = 0;   // other samples that also met the argmax test
};

struct PolicyTable {
    std::vector<State> states;       // distinct batch states, ascending
    std::vector<PolicyEntry> entries;
    double gamma = 0.0;

    bool all_sentinel() const {
        return std::all_of(entries.begin(), entries.end(),
                           [](const PolicyEntry& e) { return e.sentinel; });
    }
    bool any_sentinel() const {
        return std::any_of(entries.begin(), entries.end(),
                           [](const PolicyEntry& e) { return e.sentinel; });
    }
};

// Iterative greedy policy search run interleaved with the q-function
// iterations; consumes the model's logged evaluation grids.
class PolicySearch {
public:
    PolicySearch(const BatchDataset& data, const AmafqiModel& model) {
        table_.states = model.states;
        table_.entries.resize(model.states.size());
        table_.gamma = model.gamma;
        sample_lists_.reserve(model.states.size());
        for (State x : model.states) sample_lists_.push_back(state_index(data, x));
        dataset_ = &data;
    }

    // The three-branch update at iteration n, per distinct batch state:
    // (i) if every tracked agent's maximum rose by >= gamma, scan L(x) in
    // ascending order for the first control whose components all attain the
    // per-agent maxima; no such control restarts the search (sentinel);
    // (ii) otherwise the previous entry carries over.
    void update(const AmafqiModel& model, int n) {
        for (std::size_t s = 0; s < table_.states.size(); ++s) {
            bool all_rose = true;
            for (std::size_t t = 0; t < model.tracked.size(); ++t) {
                if (model.grid_max(t, n, s) - model.grid_max(t, n - 1, s) < model.gamma) {
                    all_rose = false;
                    break;
                }
            }
            if (!all_rose) continue;
            std::optional<std::size_t> chosen;
            int alternates = 0;
            for (std::size_t l : sample_lists_[s]) {
                const JointControl& u = (*dataset_)[l].u;
                bool qualifies = true;
                for (std::size_t t = 0; t < model.tracked.size(); ++t) {
                    const int j = model.tracked[t];
                    const double v = model.grid_value(t, n, s, u[static_cast<std::size_t>(j)]);
                    if (std::abs(v - model.grid_max(t, n, s)) > kArgmaxTolerance) {
                        qualifies = false;
                        break;
                    }
                }
                if (!qualifies) continue;
                if (!chosen) chosen = l;
                else ++alternates;
            }
            PolicyEntry& e = table_.entries[s];
            e.last_update = n;
            if (chosen) {
                e.sentinel = false;
                e.control_id = encode_control((*dataset_)[*chosen].u, model.cardinality);
                e.chosen_sample = *chosen;
                e.qualifying_alternates = alternates;
            } else {
                e.sentinel = true;
            }
        }
    }

    const PolicyTable& table() const { return table_; }

private:
    PolicyTable table_;
    std::vector<std::vector<std::size_t>> sample_lists_;
    const BatchDataset* dataset_ = nullptr;
};

struct InconclusivePolicyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Total policy over states: table lookup on non-sentinel batch states,
// classification-tree generalization elsewhere. When the table has no
// sentinel entry and covers all states, the classifier is skipped.
class GeneralizedPolicy {
public:
    static GeneralizedPolicy build(const PolicyTable& table, const BatchDataset& data,
                                   const AmafqiModel& model, int trees, int n_min,
                                   std::uint64_t seed) {
        if (table.all_sentinel())
            throw InconclusivePolicyError(
                "policy search inconclusive: every table entry is the sentinel");
        GeneralizedPolicy policy;
        policy.m_ = model.m;
        policy.cardinality_ = model.cardinality;
        policy.num_states_ = model.num_states;
        policy.lookup_.assign(static_cast<std::size_t>(model.num_states), -1);
        for (std::size_t s = 0; s < table.states.size(); ++s)
            if (!table.entries[s].sentinel)
                policy.lookup_[static_cast<std::size_t>(table.states[s])] =
                    static_cast<std::int64_t>(table.entries[s].control_id);

        const bool total = !table.any_sentinel() &&
                           table.states.size() == static_cast<std::size_t>(model.num_states);
        if (!total) {
            FeatureEncoder encoder(model.num_states, model.m, model.cardinality);
            std::vector<FeatureVector> inputs;
            std::vector<std::uint64_t> labels;
            for (std::size_t l = 0; l < data.size(); ++l) {
                const std::size_t s = model.state_index_of(data[l].x);
                if (table.entries[s].sentinel) continue;
                inputs.push_back(encoder.state_only(data[l].x));
                labels.push_back(table.entries[s].control_id);
            }
            policy.classifier_ = TreeEnsemble::build(std::move(inputs), trees, n_min, seed);
            policy.labels_ = std::move(labels);
            for (State x = 0; x < model.num_states; ++x) {
                auto& slot = policy.lookup_[static_cast<std::size_t>(x)];
                if (slot < 0)
                    slot = static_cast<std::int64_t>(
                        policy.classifier_->classify(policy.labels_, encoder.state_only(x)));
            }
        }
        return policy;
    }

    JointControl operator()(State x) const {
        return decode_control(static_cast<std::uint64_t>(lookup_[static_cast<std::size_t>(x)]),
                              m_, cardinality_);
    }

    std::uint64_t control_id(State x) const {
        return static_cast<std::uint64_t>(lookup_[static_cast<std::size_t>(x)]);
    }

    nlohmann::json to_json() const {
        return {{"m", m_}, {"A", cardinality_}, {"X", num_states_}, {"controls", lookup_}};
    }

    static GeneralizedPolicy from_json(const nlohmann::json& j) {
        GeneralizedPolicy p;
        p.m_ = j.at("m").get<int>();
        p.cardinality_ = j.at("A").get<int>();
        p.num_states_ = j.at("X").get<int>();
        p.lookup_ = j.at("controls").get<std::vector<std::int64_t>>();
        return p;
    }

private:
    int m_ = 0;
    int cardinality_ = 2;
    int num_states_ = 0;
    std::vector<std::int64_t> lookup_; // state -> encoded control
    std::optional<TreeEnsemble> classifier_;
    std::vector<std::uint64_t> labels_;
};

struct GapEntry {
    State state = 0;
    int agent = 0;
    double gap = 0.0; // max_a q_hat(x, a) - q_hat(x, chosen(j))
};

struct GapReport {
    std::vector<GapEntry> gaps;
    std::size_t non_sentinel_states = 0;
    std::size_t states_within_gamma = 0;

    double fraction_within_gamma() const {
        return non_sentinel_states == 0
                   ? 1.0
                   : static_cast<double>(states_within_gamma) /
                         static_cast<double>(non_sentinel_states);
    }
};

// At convergence, the selected control's per-agent values should still sit
// within gamma of the per-agent maxima; kernel drift after the last policy
// update accounts for any remainder.
inline GapReport greedy_gap_audit(const PolicyTable& table, const AmafqiModel& model) {
    GapReport report;
    const int n = model.iteration;
    for (std::size_t s = 0; s < table.states.size(); ++s) {
        const PolicyEntry& e = table.entries[s];
        if (e.sentinel) continue;
        ++report.non_sentinel_states;
        const JointControl u = decode_control(e.control_id, model.m, model.cardinality);
        bool within = true;
        for (std::size_t t = 0; t < model.tracked.size(); ++t) {
            const int j = model.tracked[t];
            const double gap = model.grid_max(t, n, s) -
                               model.grid_value(t, n, s, u[static_cast<std::size_t>(j)]);
            report.gaps.push_back({table.states[s], j, gap});
            if (gap >= model.gamma) within = false;
        }
        if (within) ++report.states_within_gamma;
    }
    return report;
}

struct AmafqiRunResult {
    AmafqiModel model;
    PolicyTable policy;
};

// Convenience driver: the q-function iterations with the policy search
// interleaved, as one call.
inline AmafqiRunResult amafqi_run_with_policy(const BatchDataset& data, const MdpSpec& spec,
                                              const AmafqiParams& params, AmafqiMode mode,
                                              int light_agent, std::uint64_t seed) {
    std::optional<PolicySearch> search;
    AmafqiModel model = amafqi_run(data, spec, params, mode, light_agent, seed,
                                   [&](AmafqiModel& m, int n) {
                                       if (!search) search.emplace(data, m);
                                       search->update(m, n);
                                   });
    return {std::move(model), search->table()};
}

} // namespace mafqi
