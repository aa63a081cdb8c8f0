#include "epinfer/factor_graph.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace epinfer {

namespace {

std::string factor_name(const DiscreteFactorGraph& net, std::size_t i) {
    const auto& id = net.factors()[i].id;
    return id.empty() ? "#" + std::to_string(i) : "'" + id + "'";
}

// Normalizes in place and returns the original sum.
double normalize(std::vector<double>& v) {
    double total = 0.0;
    for (double x : v) total += x;
    if (total > 0.0) {
        for (double& x : v) x /= total;
    }
    return total;
}

// Sum-product over one factor table: for each scope slot k,
// out[k][x_k] = sum over the other scope variables of t(x) prod_{j != k} cav_j(x_j).
// Returns Z = sum_x t(x) prod_j cav_j(x_j).
double factor_messages(const DiscreteFactorGraph& net, const Factor& f,
                       const std::vector<const std::vector<double>*>& cav,
                       std::vector<std::vector<double>>& out, OpTally& tally) {
    const std::size_t arity = f.scope.size();
    out.assign(arity, {});
    for (std::size_t s = 0; s < arity; ++s) out[s].assign(net.cardinality(f.scope[s]), 0.0);
    std::vector<std::size_t> config(arity, 0);
    std::vector<double> prefix(arity + 1), suffix(arity + 1);
    double z = 0.0;
    for (double t : f.table) {
        if (t != 0.0) {
            // prod_{j != s} cav_j via prefix and suffix products
            prefix[0] = 1.0;
            for (std::size_t j = 0; j < arity; ++j) prefix[j + 1] = prefix[j] * (*cav[j])[config[j]];
            suffix[arity] = 1.0;
            for (std::size_t j = arity; j-- > 0;) suffix[j] = suffix[j + 1] * (*cav[j])[config[j]];
            for (std::size_t s = 0; s < arity; ++s) out[s][config[s]] += t * prefix[s] * suffix[s + 1];
            z += t * prefix[arity];
        }
        for (std::size_t j = arity; j-- > 0;) {
            if (++config[j] < out[j].size()) break;
            config[j] = 0;
        }
    }
    tally.add(f.table.size() * (3 * arity + 1));
    return z;
}

}  // namespace

DiscreteFactorGraph::DiscreteFactorGraph(std::vector<Variable> variables, std::vector<Factor> factors)
    : variables_(std::move(variables)), factors_(std::move(factors)) {
    incident_.resize(variables_.size());
    for (std::size_t k = 0; k < variables_.size(); ++k) {
        const auto& v = variables_[k];
        if (v.cardinality < 2) throw Error("variable '" + v.id + "' needs cardinality >= 2");
        if (!index_.emplace(v.id, k).second) throw Error("duplicate variable id '" + v.id + "'");
    }
    for (std::size_t i = 0; i < factors_.size(); ++i) {
        const auto& f = factors_[i];
        const std::string name = "factor '" + f.id + "'";
        std::size_t size = 1;
        std::vector<bool> seen(variables_.size(), false);
        for (std::size_t slot = 0; slot < f.scope.size(); ++slot) {
            const std::size_t k = f.scope[slot];
            if (k >= variables_.size()) throw Error(name + " references an unknown variable");
            if (seen[k]) throw Error(name + " repeats variable '" + variables_[k].id + "'");
            seen[k] = true;
            size *= variables_[k].cardinality;
            incident_[k].emplace_back(i, slot);
        }
        if (f.table.size() != size) {
            throw Error(name + " table has " + std::to_string(f.table.size()) +
                        " entries, expected " + std::to_string(size));
        }
        bool positive = false;
        for (double t : f.table) {
            if (!std::isfinite(t) || t < 0.0) throw Error(name + " has a negative or non-finite entry");
            positive = positive || t > 0.0;
        }
        if (!positive) throw Error(name + " table is all zero");
    }
}

std::optional<std::size_t> DiscreteFactorGraph::variable_index(const std::string& id) const {
    const auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

bool DiscreteFactorGraph::is_forest() const {
    // Bipartite graph: nodes are variables then factors; union-find for cycles.
    std::vector<std::size_t> parent(variables_.size() + factors_.size());
    std::iota(parent.begin(), parent.end(), std::size_t{0});
    auto find = [&](std::size_t a) {
        while (parent[a] != a) a = parent[a] = parent[parent[a]];
        return a;
    };
    for (std::size_t i = 0; i < factors_.size(); ++i) {
        for (std::size_t k : factors_[i].scope) {
            const std::size_t a = find(k);
            const std::size_t b = find(variables_.size() + i);
            if (a == b) return false;
            parent[a] = b;
        }
    }
    return true;
}

std::uint64_t DiscreteFactorGraph::joint_state_count() const {
    constexpr std::uint64_t kMax = std::numeric_limits<std::uint64_t>::max();
    std::uint64_t total = 1;
    for (const auto& v : variables_) {
        if (total > kMax / v.cardinality) return kMax;
        total *= v.cardinality;
    }
    return total;
}

DiscreteFactorGraph load_network(const nlohmann::json& doc) {
    try {
        std::vector<Variable> variables;
        std::unordered_map<std::string, std::size_t> index;
        for (const auto& jv : doc.at("variables")) {
            Variable v{jv.at("id").get<std::string>(), jv.value("cardinality", std::size_t{2})};
            index.emplace(v.id, variables.size());
            variables.push_back(std::move(v));
        }
        std::vector<Factor> factors;
        for (const auto& jf : doc.at("factors")) {
            Factor f;
            f.id = jf.value("id", "f" + std::to_string(factors.size()));
            for (const auto& s : jf.at("scope")) {
                const auto name = s.get<std::string>();
                const auto it = index.find(name);
                if (it == index.end()) {
                    throw Error("factor '" + f.id + "' references unknown variable '" + name + "'");
                }
                f.scope.push_back(it->second);
            }
            f.table = jf.at("table").get<std::vector<double>>();
            const auto kind = jf.value("kind", std::string("potential"));
            if (kind == "cpt") {
                f.kind = FactorKind::cpt;
            } else if (kind != "potential") {
                throw Error("factor '" + f.id + "' has unknown kind '" + kind + "'");
            }
            factors.push_back(std::move(f));
        }
        return DiscreteFactorGraph(std::move(variables), std::move(factors));
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("malformed network document: ") + e.what());
    }
}

DiscreteFactorGraph load_network_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read " + path.string());
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw Error("cannot parse " + path.string() + ": " + e.what());
    }
    return load_network(doc);
}

nlohmann::json network_to_json(const DiscreteFactorGraph& net) {
    nlohmann::json vars = nlohmann::json::array();
    for (const auto& v : net.variables()) vars.push_back({{"id", v.id}, {"cardinality", v.cardinality}});
    nlohmann::json factors = nlohmann::json::array();
    for (const auto& f : net.factors()) {
        std::vector<std::string> scope;
        for (std::size_t k : f.scope) scope.push_back(net.variables()[k].id);
        factors.push_back({{"id", f.id},
                           {"scope", scope},
                           {"table", f.table},
                           {"kind", f.kind == FactorKind::cpt ? "cpt" : "potential"}});
    }
    return {{"variables", vars}, {"factors", factors}};
}

std::vector<double> belief(const DiscreteFactorGraph& net, const MessageSet& messages,
                           std::size_t k) {
    if (k >= net.variable_count()) throw Error("unknown variable index " + std::to_string(k));
    if (messages.factors.size() != net.factor_count()) {
        throw Error("message set does not match the network");
    }
    std::vector<double> b(net.cardinality(k), 1.0);
    for (const auto& [f, slot] : net.incident(k)) {
        const auto& m = messages.at(f, slot).values;
        for (std::size_t x = 0; x < b.size(); ++x) b[x] *= m[x];
    }
    if (!(normalize(b) > 0.0)) {
        throw Error("contradictory messages into variable '" + net.variables()[k].id + "'");
    }
    return b;
}

// ---------------------------------------------------------------------------

BeliefSet DisconnectedBinding::prior() const {
    BeliefSet q(net_->variable_count());
    for (std::size_t k = 0; k < q.size(); ++k) {
        const std::size_t c = net_->cardinality(k);
        q[k].assign(c, 1.0 / static_cast<double>(c));
    }
    return q;
}

FactorSite DisconnectedBinding::vacuous_site(std::size_t i) const {
    FactorSite site;
    site.factor = i;
    for (std::size_t k : net_->factors()[i].scope) {
        const std::size_t c = net_->cardinality(k);
        site.messages.push_back(
            Message{std::vector<double>(c, 1.0 / static_cast<double>(c)), std::log(double(c))});
    }
    return site;
}

std::optional<BeliefSet> DisconnectedBinding::cavity(const BeliefSet& q,
                                                     std::span<const FactorSite> sites,
                                                     std::size_t i, OpTally& tally) const {
    BeliefSet cav = q;
    for (std::size_t k : net_->factors()[i].scope) {
        auto& c = cav[k];
        std::fill(c.begin(), c.end(), 1.0);
        for (const auto& [f, slot] : net_->incident(k)) {
            if (f == i) continue;
            const auto& m = sites[f].messages[slot].values;
            for (std::size_t x = 0; x < c.size(); ++x) c[x] *= m[x];
            tally.add(c.size());
        }
        if (!(normalize(c) > 0.0)) {
            throw Error("contradictory messages into variable '" + net_->variables()[k].id + "'");
        }
    }
    return cav;
}

SiteUpdate<BeliefSet, FactorSite> DisconnectedBinding::update(const BeliefSet& cavity,
                                                              std::size_t i,
                                                              OpTally& tally) const {
    const Factor& f = net_->factors()[i];
    std::vector<const std::vector<double>*> cav;
    cav.reserve(f.scope.size());
    for (std::size_t k : f.scope) cav.push_back(&cavity[k]);
    std::vector<std::vector<double>> raw;
    const double z = factor_messages(*net_, f, cav, raw, tally);
    if (!(z > 0.0)) throw Error("contradictory evidence at factor " + factor_name(*net_, i));
    const double log_z = std::log(z);

    SiteUpdate<BeliefSet, FactorSite> out{cavity, {}, log_z};
    out.site.factor = i;
    out.site.log_z = log_z;
    for (std::size_t s = 0; s < f.scope.size(); ++s) {
        auto& q = out.posterior[f.scope[s]];
        for (std::size_t x = 0; x < q.size(); ++x) q[x] = cavity[f.scope[s]][x] * raw[s][x] / z;
        normalize(q);  // removes rounding drift only
        const double total = normalize(raw[s]);
        out.site.messages.push_back(Message{std::move(raw[s]), std::log(total) - log_z});
    }
    return out;
}

BeliefSet DisconnectedBinding::include(const BeliefSet& cavity, const FactorSite& site,
                                       OpTally& tally) const {
    BeliefSet q = cavity;
    const auto& scope = net_->factors()[site.factor].scope;
    for (std::size_t s = 0; s < scope.size(); ++s) {
        auto& b = q[scope[s]];
        const auto& m = site.messages[s].values;
        for (std::size_t x = 0; x < b.size(); ++x) b[x] *= m[x];
        tally.add(b.size());
        if (!(normalize(b) > 0.0)) {
            throw Error("contradictory messages into variable '" + net_->variables()[scope[s]].id + "'");
        }
    }
    return q;
}

FactorSite DisconnectedBinding::damp(const FactorSite& a, const FactorSite& b,
                                     double gamma) const {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw Error("damping must lie in (0, 1]");
    if (gamma == 1.0) return b;
    FactorSite out;
    out.factor = b.factor;
    out.log_z = (1.0 - gamma) * a.log_z + gamma * b.log_z;
    for (std::size_t s = 0; s < a.messages.size(); ++s) {
        const auto& ma = a.messages[s];
        const auto& mb = b.messages[s];
        Message m;
        m.values.resize(ma.values.size());
        for (std::size_t x = 0; x < m.values.size(); ++x) {
            m.values[x] = std::pow(ma.values[x], 1.0 - gamma) * std::pow(mb.values[x], gamma);
        }
        const double total = normalize(m.values);
        if (!(total > 0.0)) throw Error("damped message vanished");
        m.log_scale = (1.0 - gamma) * ma.log_scale + gamma * mb.log_scale + std::log(total);
        out.messages.push_back(std::move(m));
    }
    return out;
}

double DisconnectedBinding::site_change(const FactorSite& a, const FactorSite& b) const {
    double change = 0.0;
    for (std::size_t s = 0; s < a.messages.size(); ++s) {
        for (std::size_t x = 0; x < a.messages[s].values.size(); ++x) {
            change = std::max(change, std::abs(a.messages[s].values[x] - b.messages[s].values[x]));
        }
    }
    return change;
}

double DisconnectedBinding::log_evidence(const BeliefSet&,
                                         std::span<const FactorSite> sites) const {
    // log sum_x prod_i site_i(x) against counting measure.
    double total = 0.0;
    for (const auto& site : sites) {
        total += site.log_z;
        for (const auto& m : site.messages) total += m.log_scale;
    }
    for (std::size_t k = 0; k < net_->variable_count(); ++k) {
        std::vector<double> b(net_->cardinality(k), 1.0);
        for (const auto& [f, slot] : net_->incident(k)) {
            const auto& m = sites[f].messages[slot].values;
            for (std::size_t x = 0; x < b.size(); ++x) b[x] *= m[x];
        }
        double mass = 0.0;
        for (double v : b) mass += v;
        total += std::log(mass);
    }
    return total;
}

double DisconnectedBinding::log_base_measure() const {
    double total = 0.0;
    for (const auto& v : net_->variables()) total += std::log(static_cast<double>(v.cardinality));
    return total;
}

// ---------------------------------------------------------------------------

AdfBeliefs bk_adf(const DiscreteFactorGraph& net, std::span<const std::size_t> order) {
    const DisconnectedBinding binding(net);
    auto result = run_adf(binding, order);
    return AdfBeliefs{std::move(result.posterior), result.log_evidence};
}

AdfBeliefs bk_adf(const DiscreteFactorGraph& net) {
    const DisconnectedBinding binding(net);
    auto result = run_adf(binding);
    return AdfBeliefs{std::move(result.posterior), result.log_evidence};
}

LoopyResult loopy_ep(const DiscreteFactorGraph& net, const EPOptions& opts,
                     const SweepObserver<DisconnectedBinding>& observer) {
    const DisconnectedBinding binding(net);
    auto result = run_ep(binding, opts, observer);
    LoopyResult out;
    out.messages.factors = std::move(result.sites);
    // Beliefs are rebuilt from the final messages so they are exactly the
    // product of all messages into each variable.
    out.beliefs.resize(net.variable_count());
    for (std::size_t k = 0; k < net.variable_count(); ++k) {
        out.beliefs[k] = belief(net, out.messages, k);
    }
    out.converged = result.converged;
    out.sweeps = result.sweeps;
    out.log_evidence = result.log_evidence;
    out.evidence_approximate = !net.is_forest();
    out.diagnostics = result.diagnostics;
    return out;
}

std::string beliefs_csv(const DiscreteFactorGraph& net, const BeliefSet& beliefs) {
    std::ostringstream out;
    out.precision(17);
    out << "variable,value,probability\n";
    for (std::size_t k = 0; k < beliefs.size(); ++k) {
        for (std::size_t x = 0; x < beliefs[k].size(); ++x) {
            out << net.variables()[k].id << ',' << x << ',' << beliefs[k][x] << '\n';
        }
    }
    return out.str();
}

}  // namespace epinfer
