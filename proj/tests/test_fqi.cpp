#include <catch_amalgamated.hpp>

#include <cmath>

#include "helpers.hpp"
#include "mafqi/fqi.hpp"
#include "mafqi/oracle.hpp"

using namespace mafqi;

namespace {

BatchDataset random_batch(const MdpSpec& spec, std::size_t count, std::uint64_t seed) {
    Rng rng(seed);
    return sample_batch(spec, count, rng);
}

} // namespace

TEST_CASE("first iteration reproduces the rewards") {
    const MdpSpec spec = generate_random_mdp(3, 4, 1);
    const BatchDataset data = random_batch(spec, 200, 2);
    CentralQ q = make_central_q(data, spec, {0.5, 1e-3, 5, 10, 500}, 3);
    fqi_iteration(data, q);
    for (std::size_t l = 0; l < data.size(); ++l) REQUIRE(q.outputs[l] == data[l].r);
}

TEST_CASE("beta zero collapses every iteration to the rewards") {
    const MdpSpec spec = generate_random_mdp(2, 3, 5);
    const BatchDataset data = random_batch(spec, 150, 7);
    const FqiParams params{0.0, 1e-3, 5, 10, 500};
    const FqiResult result = fqi_run(data, spec, params, 11);
    for (std::size_t l = 0; l < data.size(); ++l) REQUIRE(result.q.outputs[l] == data[l].r);
    // the fixed point is reached after one sweep; the second only detects it
    REQUIRE(result.q.iteration <= 2);
}

TEST_CASE("tabular kernels reproduce the exact Bellman sweeps") {
    const auto toy = oracle::random_deterministic_mdp(2, 3, 13);
    const BatchDataset data = test::tabular_dataset(toy);
    const MdpSpec spec = test::dims_only_spec(toy.m, toy.num_states, toy.cardinality);
    const double beta = 0.5;
    CentralQ q = make_central_q(data, spec, {beta, 1e-3, 2, 1, 500}, 17);
    oracle::TabularQ tab = oracle::make_tabular_q(toy, beta);
    for (int n = 0; n < 5; ++n) {
        fqi_iteration(data, q);
        tab = oracle::tabular_q_sweep(toy, tab);
        for (std::size_t l = 0; l < data.size(); ++l) {
            const std::size_t i = toy.index(data[l].x, encode_control(data[l].u, toy.cardinality));
            REQUIRE(std::abs(q.outputs[l] - tab.table[i]) < 1e-9);
        }
    }
}

TEST_CASE("value search at zero q returns control zero") {
    const MdpSpec spec = generate_random_mdp(2, 3, 19);
    const BatchDataset data = random_batch(spec, 100, 23);
    const CentralQ q = make_central_q(data, spec, {0.5, 1e-3, 5, 10, 500}, 29);
    const auto [value, control] = fqi_value(q, 0);
    REQUIRE(value == 0.0);
    REQUIRE(control == 0);
}

TEST_CASE("value search matches exhaustive enumeration") {
    const MdpSpec spec = generate_random_mdp(3, 4, 31);
    const BatchDataset data = random_batch(spec, 200, 37);
    const FqiResult result = fqi_run(data, spec, {0.5, 1e-3, 5, 10, 500}, 41);
    for (State x = 0; x < spec.num_states; ++x) {
        double best = 0.0;
        std::uint64_t best_u = 0;
        bool first = true;
        for (std::uint64_t u = 0; u < spec.num_joint_controls(); ++u) {
            const double v = result.q.value_at(x, u);
            if (first || v > best) { best = v; best_u = u; first = false; }
        }
        const auto [value, control] = fqi_value(result.q, x);
        REQUIRE(std::abs(value - best) < 1e-12);
        REQUIRE(control == best_u);
    }
}

TEST_CASE("outputs respect the discounted reward bound") {
    const MdpSpec spec = generate_random_mdp(3, 4, 43);
    const BatchDataset data = random_batch(spec, 300, 47);
    CentralQ q = make_central_q(data, spec, {0.5, 1e-3, 5, 10, 500}, 53);
    for (int n = 0; n < 20; ++n) {
        fqi_iteration(data, q);
        for (double v : q.outputs) {
            REQUIRE(v >= 0.0);
            REQUIRE(v <= kRewardMax / (1.0 - 0.5) + 1e-9);
        }
    }
}

TEST_CASE("per-iteration evaluation count is L times the joint control count") {
    const MdpSpec spec = generate_random_mdp(3, 4, 59);
    const BatchDataset data = random_batch(spec, 120, 61);
    CentralQ q = make_central_q(data, spec, {0.5, 1e-3, 5, 10, 500}, 67);
    fqi_iteration(data, q);
    REQUIRE(q.eval_count == data.size() * spec.num_joint_controls());
    fqi_iteration(data, q);
    REQUIRE(q.eval_count == 2 * data.size() * spec.num_joint_controls());
}

TEST_CASE("run converges with a decreasing tail and records a trace") {
    const MdpSpec spec = generate_random_mdp(3, 4, 71);
    const BatchDataset data = random_batch(spec, 300, 73);
    const FqiResult result = fqi_run(data, spec, {0.5, 1e-3, 5, 10, 500}, 79);
    REQUIRE(!result.trace.empty());
    REQUIRE(result.trace.back().sup_norm < 1e-3);
    REQUIRE(result.trace.size() < 500);
}

TEST_CASE("iteration cap raises a non-convergence error with a trace") {
    const MdpSpec spec = generate_random_mdp(2, 3, 83);
    const BatchDataset data = random_batch(spec, 100, 89);
    try {
        fqi_run(data, spec, {0.5, 1e-12, 5, 10, 3}, 97);
        FAIL("expected NonConvergenceError");
    } catch (const NonConvergenceError& e) {
        REQUIRE(e.trace.size() == 3);
    }
}
