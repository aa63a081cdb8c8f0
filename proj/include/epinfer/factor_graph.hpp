#pragma once

// Discrete networks approximated by a fully disconnected distribution
// q(x) = prod_k q_k(x_k). ADF over the factors is the Boyen-Koller filter and
// EP over them is loopy belief propagation.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "epinfer/engine.hpp"

namespace epinfer {

struct Variable {
    std::string id;
    std::size_t cardinality = 2;
};

enum class FactorKind { potential, cpt };

struct Factor {
    std::string id;
    std::vector<std::size_t> scope;  // variable indices
    std::vector<double> table;       // row-major, last scope variable fastest
    FactorKind kind = FactorKind::potential;
};

class DiscreteFactorGraph {
public:
    DiscreteFactorGraph() = default;
    /// Validates: scope indices exist and are distinct, table sizes match,
    /// entries are finite and >= 0, and every table has a positive entry.
    DiscreteFactorGraph(std::vector<Variable> variables, std::vector<Factor> factors);

    const std::vector<Variable>& variables() const { return variables_; }
    const std::vector<Factor>& factors() const { return factors_; }
    std::size_t variable_count() const { return variables_.size(); }
    std::size_t factor_count() const { return factors_.size(); }
    std::size_t cardinality(std::size_t k) const { return variables_[k].cardinality; }
    /// Factors whose scope contains variable k, with k's slot in each scope.
    const std::vector<std::pair<std::size_t, std::size_t>>& incident(std::size_t k) const {
        return incident_[k];
    }
    std::optional<std::size_t> variable_index(const std::string& id) const;
    /// True when the variable/factor incidence graph has no cycle.
    bool is_forest() const;
    /// Total number of joint states, saturating at UINT64_MAX.
    std::uint64_t joint_state_count() const;

private:
    std::vector<Variable> variables_;
    std::vector<Factor> factors_;
    std::vector<std::vector<std::pair<std::size_t, std::size_t>>> incident_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Network document:
///   {"variables": [{"id": "a", "cardinality": 2}, ...],
///    "factors": [{"id": "f", "scope": ["a", "b"], "table": [...],
///                 "kind": "cpt" | "potential"}, ...]}
/// Evidence is expressed by factors whose tables already slice it in.
DiscreteFactorGraph load_network(const nlohmann::json& doc);
DiscreteFactorGraph load_network_file(const std::filesystem::path& path);
nlohmann::json network_to_json(const DiscreteFactorGraph& net);

/// Per-variable probability vectors.
using BeliefSet = std::vector<std::vector<double>>;

/// One normalized message t_ik with its log scale: t_ik(x) = exp(log_scale) values[x].
struct Message {
    std::vector<double> values;
    double log_scale = 0.0;
};

/// Site of one factor: t_i(x) = exp(log_z) prod_k t_ik(x_k), messages in scope order.
struct FactorSite {
    std::size_t factor = 0;
    std::vector<Message> messages;
    double log_z = 0.0;
};

struct MessageSet {
    std::vector<FactorSite> factors;

    const Message& at(std::size_t factor, std::size_t slot) const {
        return factors[factor].messages[slot];
    }
};

/// Normalized product of every message into variable k (uniform if none).
/// Throws "contradictory messages" when the product is identically zero.
std::vector<double> belief(const DiscreteFactorGraph& net, const MessageSet& messages,
                           std::size_t k);

/// Engine binding for the fully disconnected family. The base measure is the
/// uniform distribution over joint states, which is treated as the exact prior
/// term; log_base_measure() adds back log prod_k |X_k|.
class DisconnectedBinding {
public:
    using Posterior = BeliefSet;
    using Site = FactorSite;

    explicit DisconnectedBinding(const DiscreteFactorGraph& net) : net_(&net) {}

    std::size_t site_count() const { return net_->factor_count(); }
    BeliefSet prior() const;
    FactorSite vacuous_site(std::size_t i) const;
    /// Cavity beliefs for the factor's scope from the product of the other
    /// incident messages; no division is performed.
    std::optional<BeliefSet> cavity(const BeliefSet& q, std::span<const FactorSite> sites,
                                    std::size_t i, OpTally& tally) const;
    SiteUpdate<BeliefSet, FactorSite> update(const BeliefSet& cavity, std::size_t i,
                                             OpTally& tally) const;
    BeliefSet include(const BeliefSet& cavity, const FactorSite& site, OpTally& tally) const;
    FactorSite damp(const FactorSite& a, const FactorSite& b, double gamma) const;
    double site_change(const FactorSite& a, const FactorSite& b) const;
    double log_evidence(const BeliefSet& q, std::span<const FactorSite> sites) const;
    double log_base_measure() const;

    const DiscreteFactorGraph& net() const { return *net_; }

private:
    const DiscreteFactorGraph* net_;
};

static_assert(SiteModel<DisconnectedBinding>);

struct AdfBeliefs {
    BeliefSet beliefs;
    double log_evidence = 0.0;
};

/// Boyen-Koller: one pass over factors in `order`. Throws "contradictory
/// evidence" naming the factor if some Z_i is zero.
AdfBeliefs bk_adf(const DiscreteFactorGraph& net, std::span<const std::size_t> order);
AdfBeliefs bk_adf(const DiscreteFactorGraph& net);

struct LoopyResult {
    BeliefSet beliefs;
    MessageSet messages;
    bool converged = false;
    int sweeps = 0;
    double log_evidence = 0.0;
    /// The evidence is exact only on forests; elsewhere it is the EP (dual Bethe)
    /// estimate.
    bool evidence_approximate = false;
    Diagnostics diagnostics;
};

LoopyResult loopy_ep(const DiscreteFactorGraph& net, const EPOptions& opts,
                     const SweepObserver<DisconnectedBinding>& observer = {});

/// Beliefs as CSV rows "variable,value,probability".
std::string beliefs_csv(const DiscreteFactorGraph& net, const BeliefSet& beliefs);

}  // namespace epinfer
