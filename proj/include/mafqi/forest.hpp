#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "mafqi/mdp.hpp"
#include "mafqi/rng.hpp"

namespace mafqi {

using FeatureVector = std::vector<double>;

// Input layout used throughout: one-hot state encoding followed by control
// features (a single local control id, or the full m-vector of a joint
// control). One-hot states keep random axis-aligned splits from imposing an
// ordering on state ids.
class FeatureEncoder {
public:
    FeatureEncoder(int num_states, int agents, int local_cardinality)
        : num_states_(num_states), agents_(agents), cardinality_(local_cardinality) {}

    std::size_t local_dim() const { return static_cast<std::size_t>(num_states_) + 1; }
    std::size_t joint_dim() const { return static_cast<std::size_t>(num_states_ + agents_); }
    std::size_t state_dim() const { return static_cast<std::size_t>(num_states_); }

    FeatureVector local(State x, int a) const {
        FeatureVector f(local_dim(), 0.0);
        f[static_cast<std::size_t>(x)] = 1.0;
        f.back() = static_cast<double>(a);
        return f;
    }

    FeatureVector joint(State x, const JointControl& u) const {
        FeatureVector f(joint_dim(), 0.0);
        f[static_cast<std::size_t>(x)] = 1.0;
        for (int j = 0; j < agents_; ++j)
            f[static_cast<std::size_t>(num_states_ + j)] = static_cast<double>(u[static_cast<std::size_t>(j)]);
        return f;
    }

    FeatureVector joint(State x, std::uint64_t u_id) const {
        return joint(x, decode_control(u_id, agents_, cardinality_));
    }

    FeatureVector state_only(State x) const {
        FeatureVector f(state_dim(), 0.0);
        f[static_cast<std::size_t>(x)] = 1.0;
        return f;
    }

private:
    int num_states_;
    int agents_;
    int cardinality_;
};

struct TreeNode {
    int feature = -1;        // -1 marks a leaf
    double threshold = 0.0;  // go left iff value < threshold
    int left = -1;
    int right = -1;
    int leaf_id = -1;
};

struct Tree {
    std::vector<TreeNode> nodes;
    std::vector<std::vector<std::uint32_t>> leaf_members; // training indices per leaf

    int leaf_of(std::span<const double> query) const {
        int n = 0;
        while (nodes[static_cast<std::size_t>(n)].feature >= 0) {
            const auto& node = nodes[static_cast<std::size_t>(n)];
            n = query[static_cast<std::size_t>(node.feature)] < node.threshold ? node.left : node.right;
        }
        return nodes[static_cast<std::size_t>(n)].leaf_id;
    }
};

// Totally randomized trees over a frozen input set. Partitions never change
// after build, so the induced kernel is identical across iterations.
class TreeEnsemble {
public:
    TreeEnsemble() = default;

    static TreeEnsemble build(std::vector<FeatureVector> inputs, int trees, int n_min,
                              std::uint64_t seed) {
        if (inputs.empty()) throw ConfigError("TreeEnsemble: empty input set");
        if (trees < 1 || n_min < 1) throw ConfigError("TreeEnsemble: need trees >= 1 and n_min >= 1");
        TreeEnsemble e;
        e.inputs_ = std::move(inputs);
        e.n_min_ = n_min;
        e.seed_ = seed;
        e.dim_ = e.inputs_.front().size();
        for (const auto& f : e.inputs_)
            if (f.size() != e.dim_) throw ConfigError("TreeEnsemble: inconsistent feature dimensions");
        SeedSequence seq(seed);
        e.trees_.resize(static_cast<std::size_t>(trees));
        for (int k = 0; k < trees; ++k) {
            Rng rng = seq.stream(static_cast<std::uint64_t>(k));
            e.grow_tree(e.trees_[static_cast<std::size_t>(k)], rng);
        }
        // training point l sits in exactly one leaf per tree
        e.training_leaf_.assign(e.trees_.size(), std::vector<std::int32_t>(e.inputs_.size(), -1));
        for (std::size_t k = 0; k < e.trees_.size(); ++k)
            for (std::size_t leaf = 0; leaf < e.trees_[k].leaf_members.size(); ++leaf)
                for (std::uint32_t l : e.trees_[k].leaf_members[leaf])
                    e.training_leaf_[k][l] = static_cast<std::int32_t>(leaf);
        return e;
    }

    std::size_t size() const { return inputs_.size(); }
    std::size_t dimension() const { return dim_; }
    int tree_count() const { return static_cast<int>(trees_.size()); }
    int n_min() const { return n_min_; }
    std::uint64_t seed() const { return seed_; }
    const std::vector<Tree>& trees() const { return trees_; }
    const std::vector<FeatureVector>& training_inputs() const { return inputs_; }
    int training_leaf(std::size_t tree, std::size_t l) const { return training_leaf_[tree][l]; }

    // weight_l = (1/e) sum_k 1[l in leaf_k(query)] / |leaf_k(query)|
    std::vector<double> kernel_weights(std::span<const double> query) const {
        check_query(query);
        std::vector<double> w(inputs_.size(), 0.0);
        const double inv_e = 1.0 / static_cast<double>(trees_.size());
        for (const auto& tree : trees_) {
            const auto& members = tree.leaf_members[static_cast<std::size_t>(tree.leaf_of(query))];
            const double share = inv_e / static_cast<double>(members.size());
            for (std::uint32_t l : members) w[l] += share;
        }
        return w;
    }

    // dot(kernel_weights(query), outputs), computed as the ensemble average
    // of per-leaf output means.
    double predict_regression(std::span<const double> outputs, std::span<const double> query) const {
        check_query(query);
        if (outputs.size() != inputs_.size())
            throw ConfigError("predict_regression: output length must match training set size");
        double acc = 0.0;
        for (const auto& tree : trees_) {
            const auto& members = tree.leaf_members[static_cast<std::size_t>(tree.leaf_of(query))];
            double sum = 0.0;
            for (std::uint32_t l : members) sum += outputs[l];
            acc += sum / static_cast<double>(members.size());
        }
        return acc / static_cast<double>(trees_.size());
    }

    // Kernel-mass argmax over labels; ties go to the smallest label under the
    // mixed-radix control ordering.
    std::uint64_t classify(std::span<const std::uint64_t> labels, std::span<const double> query) const {
        if (labels.size() != inputs_.size())
            throw ConfigError("classify: label count must match training set size");
        const std::vector<double> w = kernel_weights(query);
        // accumulate mass per distinct label
        std::vector<std::pair<std::uint64_t, double>> mass;
        for (std::size_t l = 0; l < labels.size(); ++l) {
            if (w[l] == 0.0) continue;
            auto it = std::find_if(mass.begin(), mass.end(),
                                   [&](const auto& p) { return p.first == labels[l]; });
            if (it == mass.end()) mass.emplace_back(labels[l], w[l]);
            else it->second += w[l];
        }
        bool have = false;
        std::uint64_t best = 0;
        double best_mass = 0.0;
        for (const auto& [label, weight] : mass) {
            const bool wins = !have || weight > best_mass + 1e-12 ||
                              (weight > best_mass - 1e-12 && label < best);
            if (wins) {
                best = label;
                best_mass = std::max(best_mass, weight);
                have = true;
            }
        }
        return best;
    }

    nlohmann::json to_json() const;

private:
    void check_query(std::span<const double> query) const {
        if (query.size() != dim_) throw ConfigError("query dimension mismatch");
    }

    void grow_tree(Tree& tree, Rng& rng) {
        std::vector<std::uint32_t> all(inputs_.size());
        std::iota(all.begin(), all.end(), 0u);
        split_node(tree, std::move(all), rng);
    }

    // Recursive split: uniformly random non-constant feature, uniformly
    // random threshold in the open (min, max) interval of node values. Nodes
    // below n_min or with all-identical points become leaves.
    int split_node(Tree& tree, std::vector<std::uint32_t> points, Rng& rng) {
        const int node_id = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        bool splittable = points.size() >= static_cast<std::size_t>(n_min_);
        std::vector<int> candidates;
        if (splittable) {
            for (std::size_t f = 0; f < dim_; ++f) {
                double lo = inputs_[points[0]][f], hi = lo;
                for (std::uint32_t l : points) {
                    lo = std::min(lo, inputs_[l][f]);
                    hi = std::max(hi, inputs_[l][f]);
                }
                if (hi > lo) candidates.push_back(static_cast<int>(f));
            }
            if (candidates.empty()) splittable = false;
        }
        double threshold = 0.0;
        int feature = -1;
        if (splittable) {
            feature = candidates[rng.uniform_index(candidates.size())];
            double lo = std::numeric_limits<double>::infinity();
            double hi = -std::numeric_limits<double>::infinity();
            for (std::uint32_t l : points) {
                lo = std::min(lo, inputs_[l][static_cast<std::size_t>(feature)]);
                hi = std::max(hi, inputs_[l][static_cast<std::size_t>(feature)]);
            }
            threshold = rng.uniform(lo, hi);
            // keep the cut strictly inside (lo, hi) so both children are
            // non-empty; degenerate draws fall back to a leaf
            if (!(threshold > lo && threshold < hi)) {
                threshold = std::nextafter(hi, lo);
                if (!(threshold > lo && threshold < hi)) splittable = false;
            }
        }
        if (!splittable) {
            const int leaf_id = static_cast<int>(tree.leaf_members.size());
            tree.nodes[static_cast<std::size_t>(node_id)].leaf_id = leaf_id;
            tree.leaf_members.push_back(std::move(points));
            return node_id;
        }
        std::vector<std::uint32_t> left, right;
        for (std::uint32_t l : points) {
            if (inputs_[l][static_cast<std::size_t>(feature)] < threshold) left.push_back(l);
            else right.push_back(l);
        }
        points.clear();
        const int left_id = split_node(tree, std::move(left), rng);
        const int right_id = split_node(tree, std::move(right), rng);
        auto& node = tree.nodes[static_cast<std::size_t>(node_id)];
        node.feature = feature;
        node.threshold = threshold;
        node.left = left_id;
        node.right = right_id;
        return node_id;
    }

    std::vector<FeatureVector> inputs_;
    std::vector<Tree> trees_;
    std::vector<std::vector<std::int32_t>> training_leaf_; // [tree][l] -> leaf id
    std::size_t dim_ = 0;
    int n_min_ = 1;
    std::uint64_t seed_ = 0;
};

// Per-leaf output means frozen for a fixed output vector; makes repeated
// evaluation O(trees * depth) instead of O(L).
class RegressionView {
public:
    RegressionView(const TreeEnsemble& ensemble, std::span<const double> outputs)
        : ensemble_(&ensemble) {
        if (outputs.size() != ensemble.size())
            throw ConfigError("RegressionView: output length mismatch");
        leaf_means_.resize(ensemble.trees().size());
        for (std::size_t k = 0; k < ensemble.trees().size(); ++k) {
            const auto& tree = ensemble.trees()[k];
            leaf_means_[k].resize(tree.leaf_members.size());
            for (std::size_t leaf = 0; leaf < tree.leaf_members.size(); ++leaf) {
                double sum = 0.0;
                for (std::uint32_t l : tree.leaf_members[leaf]) sum += outputs[l];
                leaf_means_[k][leaf] = sum / static_cast<double>(tree.leaf_members[leaf].size());
            }
        }
    }

    double evaluate(std::span<const double> query) const {
        double acc = 0.0;
        for (std::size_t k = 0; k < leaf_means_.size(); ++k)
            acc += leaf_means_[k][static_cast<std::size_t>(ensemble_->trees()[k].leaf_of(query))];
        return acc / static_cast<double>(leaf_means_.size());
    }

    // evaluation at training point l (its own leaf memberships are known)
    double evaluate_training_point(std::size_t l) const {
        double acc = 0.0;
        for (std::size_t k = 0; k < leaf_means_.size(); ++k)
            acc += leaf_means_[k][static_cast<std::size_t>(ensemble_->training_leaf(k, l))];
        return acc / static_cast<double>(leaf_means_.size());
    }

private:
    const TreeEnsemble* ensemble_;
    std::vector<std::vector<double>> leaf_means_;
};

inline nlohmann::json TreeEnsemble::to_json() const {
    nlohmann::json j;
    j["n_min"] = n_min_;
    j["seed"] = seed_;
    j["dimension"] = dim_;
    j["size"] = inputs_.size();
    auto& ts = j["trees"] = nlohmann::json::array();
    for (const auto& tree : trees_) {
        nlohmann::json tj;
        auto& nodes = tj["nodes"] = nlohmann::json::array();
        for (const auto& n : tree.nodes)
            nodes.push_back({{"feature", n.feature}, {"threshold", n.threshold},
                             {"left", n.left}, {"right", n.right}, {"leaf", n.leaf_id}});
        tj["leaf_members"] = tree.leaf_members;
        ts.push_back(std::move(tj));
    }
    return j;
}

} // namespace mafqi
