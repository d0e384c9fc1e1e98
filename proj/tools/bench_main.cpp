#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "mafqi/bench.hpp"
#include "mafqi/oracle.hpp"
#include "mafqi/policy.hpp"

namespace {

int cmd_run(const std::string& config_path, const std::string& output_dir) {
    std::ifstream in(config_path);
    if (!in) {
        std::cerr << "bench: cannot open config file " << config_path << "\n";
        return 1;
    }
    nlohmann::json j = nlohmann::json::parse(in);
    mafqi::bench::ExperimentConfig config = mafqi::bench::config_from_json(j);
    if (!output_dir.empty()) config.output_dir = output_dir;
    const mafqi::bench::RunReport report = mafqi::bench::run_experiment(config);
    std::cout << "instances: " << report.instances.size() << "\n";
    if (config.mode == "all") {
        std::cout << "mean delta (amafqi):   " << report.mean_delta_amafqi << "\n"
                  << "mean delta (amafqi-l): " << report.mean_delta_light << "\n"
                  << "reward gap (amafqi):   " << report.reward_gap_amafqi << "\n"
                  << "reward gap (amafqi-l): " << report.reward_gap_light << "\n";
    }
    std::cout << "results written to " << config.output_dir << "\n";
    for (const auto& inst : report.instances)
        for (const auto& run : inst.methods)
            if (!run.ok) {
                std::cerr << "instance " << inst.instance << " " << run.method
                          << " failed: " << run.error << "\n";
                return 1;
            }
    return 0;
}

int cmd_act(const std::string& model_path, int state) {
    std::ifstream in(model_path);
    if (!in) {
        std::cerr << "bench: cannot open model bundle " << model_path << "\n";
        return 1;
    }
    const auto policy = mafqi::GeneralizedPolicy::from_json(nlohmann::json::parse(in));
    const mafqi::JointControl u = policy(state);
    for (std::size_t j = 0; j < u.size(); ++j) std::cout << (j ? " " : "") << u[j];
    std::cout << "\n";
    return 0;
}

int cmd_prop1(int m, int num_states, std::uint64_t seed, int n_max) {
    const auto mdp = mafqi::oracle::random_deterministic_mdp(m, num_states, seed);
    const auto result = mafqi::oracle::proposition1_check(mdp, 0.5, n_max);
    std::cout << (result.holds ? "holds" : "VIOLATED")
              << " max_deviation=" << result.max_deviation << "\n";
    return result.holds ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"batch multi-agent fitted Q iteration benchmark harness"};
    app.require_subcommand(1);

    std::string config_path, output_dir, model_path;
    int state = 0, m = 2, num_states = 2, n_max = 20;
    std::uint64_t seed = 1;

    auto* run = app.add_subcommand("run", "run a seeded experiment from a JSON config");
    run->add_option("--config", config_path, "experiment config (JSON)")->required();
    run->add_option("--output-dir", output_dir, "override the config's output directory");

    auto* act = app.add_subcommand("act", "query a saved policy bundle for a state");
    act->add_option("--model", model_path, "policy bundle JSON")->required();
    act->add_option("--state", state, "state id")->required();

    auto* prop1 = app.add_subcommand(
        "prop1", "check the tabular distributed/centralized equivalence on a random toy");
    prop1->add_option("--m", m, "agent count");
    prop1->add_option("--x", num_states, "state count");
    prop1->add_option("--seed", seed, "rng seed");
    prop1->add_option("--n-max", n_max, "sweeps to check");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(config_path, output_dir);
        if (act->parsed()) return cmd_act(model_path, state);
        if (prop1->parsed()) return cmd_prop1(m, num_states, seed, n_max);
    } catch (const std::exception& e) {
        std::cerr << "bench: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
