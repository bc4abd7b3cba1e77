#pragma once

#include <algorithm>
#include <cctype>
#include <deque>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hypothetica/error.hpp"

namespace hypothetica {

enum class NodeRole { treatment, ice, covariate, outcome, latent, other };

inline const char* to_string(NodeRole r) {
    switch (r) {
        case NodeRole::treatment: return "treatment";
        case NodeRole::ice: return "ice";
        case NodeRole::covariate: return "covariate";
        case NodeRole::outcome: return "outcome";
        case NodeRole::latent: return "latent";
        case NodeRole::other: return "other";
    }
    return "other";
}

inline NodeRole parse_role(const std::string& s) {
    static const std::map<std::string, NodeRole> roles{{"treatment", NodeRole::treatment}, {"ice", NodeRole::ice},
                                                       {"covariate", NodeRole::covariate}, {"outcome", NodeRole::outcome},
                                                       {"latent", NodeRole::latent}, {"other", NodeRole::other}};
    const auto it = roles.find(s);
    if (it == roles.end()) throw GraphError("unknown node role '" + s + "'");
    return it->second;
}

struct Node {
    std::string name;
    NodeRole role = NodeRole::other;
    bool fixed = false;  // fixed (intervened) half of a split node
    std::string label;   // display label, e.g. Y^{a1=0}
};

using NodeSet = std::vector<std::size_t>;

/// Directed acyclic graph with named, role-tagged nodes. Acyclicity is
/// enforced edge by edge.
class CausalGraph {
   public:
    std::size_t add_node(const std::string& name, NodeRole role = NodeRole::other) {
        if (name.empty()) throw GraphError("empty node name");
        if (index_.contains(name)) throw GraphError("duplicate node '" + name + "'");
        index_.emplace(name, nodes_.size());
        nodes_.push_back({name, role, false, name});
        parents_.emplace_back();
        children_.emplace_back();
        return nodes_.size() - 1;
    }

    void add_edge(const std::string& from, const std::string& to) { add_edge(at(from), at(to)); }

    void add_edge(std::size_t from, std::size_t to) {
        if (from == to) throw GraphError("self-loop on '" + nodes_[from].name + "'");
        if (has_edge(from, to)) return;
        if (reaches(to, from))
            throw GraphError("edge " + nodes_[from].name + " -> " + nodes_[to].name + " creates a cycle");
        children_[from].push_back(to);
        parents_[to].push_back(from);
        ++edges_;
    }

    static CausalGraph build(const std::vector<std::pair<std::string, NodeRole>>& nodes,
                             const std::vector<std::pair<std::string, std::string>>& edges) {
        CausalGraph g;
        for (const auto& [name, role] : nodes) g.add_node(name, role);
        for (const auto& [from, to] : edges) g.add_edge(from, to);
        return g;
    }

    std::size_t size() const { return nodes_.size(); }
    std::size_t edge_count() const { return edges_; }
    const Node& node(std::size_t i) const { return nodes_[i]; }
    Node& node(std::size_t i) { return nodes_[i]; }
    const NodeSet& parents(std::size_t i) const { return parents_[i]; }
    const NodeSet& children(std::size_t i) const { return children_[i]; }

    std::optional<std::size_t> find(const std::string& name) const {
        const auto it = index_.find(name);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    std::size_t at(const std::string& name) const {
        if (auto i = find(name)) return *i;
        throw GraphError("unknown node '" + name + "'");
    }

    NodeSet at(const std::vector<std::string>& names) const {
        NodeSet out;
        for (const auto& n : names) out.push_back(at(n));
        return out;
    }

    bool has_edge(std::size_t from, std::size_t to) const {
        return std::find(children_[from].begin(), children_[from].end(), to) != children_[from].end();
    }

    /// Directed path from `from` to `to` (a node reaches itself).
    bool reaches(std::size_t from, std::size_t to) const {
        std::vector<bool> seen(nodes_.size(), false);
        std::vector<std::size_t> stack{from};
        while (!stack.empty()) {
            const auto v = stack.back();
            stack.pop_back();
            if (v == to) return true;
            if (seen[v]) continue;
            seen[v] = true;
            for (auto c : children_[v]) stack.push_back(c);
        }
        return false;
    }

    /// Membership mask of `seeds` and all their ancestors.
    std::vector<bool> ancestors_of(const NodeSet& seeds) const {
        std::vector<bool> mark(nodes_.size(), false);
        std::vector<std::size_t> stack(seeds.begin(), seeds.end());
        while (!stack.empty()) {
            const auto v = stack.back();
            stack.pop_back();
            if (mark[v]) continue;
            mark[v] = true;
            for (auto p : parents_[v]) stack.push_back(p);
        }
        return mark;
    }

    std::vector<std::pair<std::size_t, std::size_t>> edges() const {
        std::vector<std::pair<std::size_t, std::size_t>> out;
        for (std::size_t v = 0; v < nodes_.size(); ++v)
            for (auto c : children_[v]) out.emplace_back(v, c);
        return out;
    }

   private:
    std::vector<Node> nodes_;
    std::vector<NodeSet> parents_;
    std::vector<NodeSet> children_;
    std::unordered_map<std::string, std::size_t> index_;
    std::size_t edges_ = 0;
};

/// Line format: `node <name> [role]`, `edge <from> -> <to>`, `#` comments.
inline CausalGraph read_graph(std::istream& in) {
    CausalGraph g;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream ss(line);
        std::string kw;
        if (!(ss >> kw)) continue;
        try {
            if (kw == "node") {
                std::string name, role, extra;
                if (!(ss >> name)) throw ParseError("node needs a name", line_no, 1);
                ss >> role;
                if (ss >> extra) throw ParseError("trailing text after node declaration", line_no, 1);
                g.add_node(name, role.empty() ? NodeRole::other : parse_role(role));
            } else if (kw == "edge") {
                std::string from, arrow, to, extra;
                if (!(ss >> from >> arrow >> to) || arrow != "->" || (ss >> extra))
                    throw ParseError("expected 'edge <from> -> <to>'", line_no, 1);
                g.add_edge(from, to);
            } else {
                throw ParseError("unknown keyword '" + kw + "'", line_no, 1);
            }
        } catch (const GraphError& e) {
            throw GraphError("line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return g;
}

inline CausalGraph read_graph(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    return read_graph(in);
}

inline void write_graph(const CausalGraph& g, std::ostream& out) {
    for (std::size_t v = 0; v < g.size(); ++v) out << "node " << g.node(v).name << ' ' << to_string(g.node(v).role) << '\n';
    for (const auto& [from, to] : g.edges()) out << "edge " << g.node(from).name << " -> " << g.node(to).name << '\n';
}

/// Single-world intervention graph: each intervened node keeps its name and
/// incoming edges, and a new fixed node (`a1=0` for `A1`) takes over its
/// outgoing edges. Labels of affected nodes carry the intervened values.
struct Swig {
    CausalGraph graph;
    std::vector<std::pair<std::string, int>> interventions;

    std::size_t fixed_node(const std::string& intervened) const {
        for (const auto& [name, value] : interventions)
            if (name == intervened) return graph.at(fixed_name(name, value));
        throw GraphError("'" + intervened + "' is not intervened on");
    }

    static std::string fixed_name(const std::string& name, int value) {
        std::string lower = name;
        for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        return lower + "=" + std::to_string(value);
    }
};

inline Swig swig_transform(const CausalGraph& g, const std::vector<std::pair<std::string, int>>& interventions) {
    Swig s;
    s.interventions = interventions;
    std::map<std::size_t, std::size_t> fixed_of;  // original index -> fixed node index
    for (std::size_t v = 0; v < g.size(); ++v) s.graph.add_node(g.node(v).name, g.node(v).role);
    for (const auto& [name, value] : interventions) {
        const auto v = g.at(name);
        if (g.node(v).role == NodeRole::outcome) throw GraphError("cannot intervene on outcome '" + name + "'");
        if (fixed_of.contains(v)) throw GraphError("'" + name + "' intervened on twice");
        const auto f = s.graph.add_node(Swig::fixed_name(name, value), g.node(v).role);
        s.graph.node(f).fixed = true;
        fixed_of.emplace(v, f);
    }
    for (const auto& [from, to] : g.edges()) {
        const auto it = fixed_of.find(from);
        s.graph.add_edge(it == fixed_of.end() ? from : it->second, to);
    }
    for (std::size_t v = 0; v < g.size(); ++v) {
        std::string sup;
        for (const auto& [name, value] : interventions) {
            const auto f = s.graph.at(Swig::fixed_name(name, value));
            if (s.graph.reaches(f, v)) sup += (sup.empty() ? "" : ",") + s.graph.node(f).name;
        }
        if (!sup.empty()) s.graph.node(v).label = g.node(v).name + "^{" + sup + "}";
    }
    return s;
}

namespace graph_detail {

inline void require_disjoint(const CausalGraph& g, const NodeSet& x, const NodeSet& y, const NodeSet& z) {
    std::vector<int> owner(g.size(), 0);
    for (const auto* set : {&x, &y, &z}) {
        std::vector<bool> here(g.size(), false);
        for (auto v : *set) {
            if (v >= g.size()) throw GraphError("node index out of range");
            here[v] = true;
        }
        for (std::size_t v = 0; v < g.size(); ++v)
            if (here[v] && owner[v]++) throw GraphError("node '" + g.node(v).name + "' appears in more than one set");
    }
}

inline std::vector<bool> conditioned(const CausalGraph& g, const NodeSet& z) {
    std::vector<bool> in_z(g.size(), false);
    for (auto v : z) in_z[v] = true;
    for (std::size_t v = 0; v < g.size(); ++v)
        if (g.node(v).fixed) in_z[v] = true;
    return in_z;
}

}  // namespace graph_detail

/// Nodes reachable from `x` along a trail that is active given `z`
/// (ball passing). Fixed SWIG nodes are constants and always block.
inline std::vector<bool> reachable(const CausalGraph& g, const NodeSet& x, const NodeSet& z) {
    const auto in_z = graph_detail::conditioned(g, z);
    NodeSet zs;
    for (std::size_t v = 0; v < g.size(); ++v)
        if (in_z[v]) zs.push_back(v);
    const auto anc_z = g.ancestors_of(zs);

    // state: (node, arrived from a child = going up)
    std::vector<bool> visited_up(g.size(), false), visited_down(g.size(), false), reach(g.size(), false);
    std::deque<std::pair<std::size_t, bool>> queue;
    for (auto v : x) queue.emplace_back(v, true);
    while (!queue.empty()) {
        const auto [v, up] = queue.front();
        queue.pop_front();
        auto& visited = up ? visited_up : visited_down;
        if (visited[v]) continue;
        visited[v] = true;
        if (!in_z[v]) reach[v] = true;
        if (up && !in_z[v]) {
            for (auto p : g.parents(v)) queue.emplace_back(p, true);
            for (auto c : g.children(v)) queue.emplace_back(c, false);
        } else if (!up) {
            if (!in_z[v])
                for (auto c : g.children(v)) queue.emplace_back(c, false);
            if (anc_z[v])
                for (auto p : g.parents(v)) queue.emplace_back(p, true);
        }
    }
    return reach;
}

inline bool d_separated(const CausalGraph& g, const NodeSet& x, const NodeSet& y, const NodeSet& z) {
    graph_detail::require_disjoint(g, x, y, z);
    const auto reach = reachable(g, x, z);
    return std::none_of(y.begin(), y.end(), [&](std::size_t v) { return reach[v]; });
}

inline bool d_separated(const CausalGraph& g, const std::vector<std::string>& x, const std::vector<std::string>& y,
                        const std::vector<std::string>& z) {
    return d_separated(g, g.at(x), g.at(y), g.at(z));
}

/// Whether the simple path `path` (consecutive nodes adjacent) is open given `z`.
inline bool path_open(const CausalGraph& g, const NodeSet& path, const NodeSet& z) {
    const auto in_z = graph_detail::conditioned(g, z);
    NodeSet zs;
    for (std::size_t v = 0; v < g.size(); ++v)
        if (in_z[v]) zs.push_back(v);
    const auto anc_z = g.ancestors_of(zs);
    for (std::size_t i = 1; i + 1 < path.size(); ++i) {
        const auto v = path[i];
        const bool collider = g.has_edge(path[i - 1], v) && g.has_edge(path[i + 1], v);
        if (collider ? !anc_z[v] : in_z[v]) return false;
    }
    return true;
}

/// Renders a path with edge directions, e.g. "A1 <- L1 -> Y".
inline std::string format_path(const CausalGraph& g, const NodeSet& path) {
    std::string out;
    for (std::size_t i = 0; i < path.size(); ++i) {
        if (i) out += g.has_edge(path[i - 1], path[i]) ? " -> " : " <- ";
        out += g.node(path[i]).name;
    }
    return out;
}

/// Shortest open simple path from `from` to `to` given `z`, if any.
/// Exhaustive by increasing length; meant for small graphs.
inline std::optional<NodeSet> open_path(const CausalGraph& g, std::size_t from, std::size_t to, const NodeSet& z) {
    NodeSet path{from};
    std::vector<bool> on_path(g.size(), false);
    on_path[from] = true;
    std::function<bool(std::size_t)> extend = [&](std::size_t remaining) -> bool {
        const auto v = path.back();
        if (remaining == 0) return v == to && path_open(g, path, z);
        if (v == to) return false;
        std::vector<std::size_t> nbrs(g.parents(v).begin(), g.parents(v).end());
        nbrs.insert(nbrs.end(), g.children(v).begin(), g.children(v).end());
        for (auto w : nbrs) {
            if (on_path[w]) continue;
            path.push_back(w);
            on_path[w] = true;
            // prune as soon as the middle node of the newest triple blocks
            const bool ok = path.size() < 3 || path_open(g, NodeSet(path.end() - 3, path.end()), z);
            if (ok && extend(remaining - 1)) return true;
            on_path[w] = false;
            path.pop_back();
        }
        return false;
    };
    for (std::size_t len = 1; len < g.size(); ++len)
        if (extend(len)) return path;
    return std::nullopt;
}

struct IndependenceCheck {
    std::string node;                  // ICE / treatment being tested
    std::vector<std::string> targets;  // future covariates and outcome
    std::vector<std::string> given;
    bool holds = true;
    std::string failing_target;
    std::string witness;  // open path when !holds
};

struct GraphReport {
    std::vector<IndependenceCheck> checks;

    bool holds() const {
        return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.holds; });
    }
};

namespace graph_detail {

inline void validate_sequence(const CausalGraph& g, const std::vector<std::string>& seq, const std::string& outcome,
                              const std::map<std::string, std::vector<std::string>>& history) {
    if (seq.empty()) throw GraphError("no ICE/treatment nodes given");
    const auto y = g.at(outcome);
    for (std::size_t k = 0; k < seq.size(); ++k) {
        const auto v = g.at(seq[k]);
        if (v == y) throw GraphError("outcome '" + outcome + "' listed as intervened node");
        if (k > 0 && g.reaches(v, g.at(seq[k - 1])))
            throw GraphError("nodes out of temporal order: '" + seq[k] + "' precedes '" + seq[k - 1] + "'");
        if (const auto it = history.find(seq[k]); it != history.end())
            for (const auto& h : it->second) {
                const auto hv = g.at(h);
                if (g.node(hv).role == NodeRole::latent) throw GraphError("latent node '" + h + "' cannot be conditioned on");
                if (g.reaches(v, hv)) throw GraphError("history of '" + seq[k] + "' contains its descendant '" + h + "'");
            }
    }
}

inline const std::vector<std::string>& history_of(const std::map<std::string, std::vector<std::string>>& history,
                                                  const std::string& node) {
    static const std::vector<std::string> empty;
    const auto it = history.find(node);
    return it == history.end() ? empty : it->second;
}

inline IndependenceCheck test_node(const Swig& s, const std::string& node, const std::vector<std::string>& targets,
                                   std::vector<std::string> given) {
    IndependenceCheck c;
    c.node = node;
    c.targets = targets;
    std::sort(given.begin(), given.end());
    given.erase(std::unique(given.begin(), given.end()), given.end());
    c.given = given;
    const auto& g = s.graph;
    const NodeSet x{g.at(node)};
    const NodeSet z = g.at(given);
    for (const auto& t : targets) {
        const NodeSet y{g.at(t)};
        if (!d_separated(g, x, y, z)) {
            c.holds = false;
            c.failing_target = g.node(y[0]).label;
            if (const auto p = open_path(g, x[0], y[0], z)) c.witness = format_path(g, *p);
            break;
        }
    }
    return c;
}

}  // namespace graph_detail

/// Sequential MAR for the hypothetical no-ICE outcome: in the SWIG setting
/// every ICE node to 0, each A_k must be independent of the outcome and of
/// covariates measured later, given its history, the treatment nodes, and
/// earlier ICE nodes. The outcome is tested first so that its witness is
/// reported when several targets fail.
inline GraphReport check_mar_hypothetical(const CausalGraph& g, const std::vector<std::string>& ice_nodes,
                                          const std::map<std::string, std::vector<std::string>>& history,
                                          const std::string& outcome) {
    graph_detail::validate_sequence(g, ice_nodes, outcome, history);
    std::vector<std::pair<std::string, int>> regime;
    for (const auto& a : ice_nodes) regime.emplace_back(a, 0);
    const auto s = swig_transform(g, regime);

    GraphReport report;
    for (std::size_t k = 0; k < ice_nodes.size(); ++k) {
        std::vector<std::string> given = graph_detail::history_of(history, ice_nodes[k]);
        for (std::size_t v = 0; v < g.size(); ++v)
            if (g.node(v).role == NodeRole::treatment) given.push_back(g.node(v).name);
        for (std::size_t j = 0; j < k; ++j) given.push_back(ice_nodes[j]);

        std::vector<std::string> targets{outcome};
        for (std::size_t later = k + 1; later < ice_nodes.size(); ++later)
            for (const auto& h : graph_detail::history_of(history, ice_nodes[later]))
                if (std::find(given.begin(), given.end(), h) == given.end() &&
                    std::find(targets.begin(), targets.end(), h) == targets.end())
                    targets.push_back(h);
        report.checks.push_back(graph_detail::test_node(s, ice_nodes[k], targets, given));
    }
    return report;
}

/// No unmeasured confounding of each treatment given earlier treatments and
/// the measured history, read from the SWIG intervening on every treatment.
inline GraphReport check_sequential_exchangeability(const CausalGraph& g, const std::vector<std::string>& treatments,
                                                    const std::map<std::string, std::vector<std::string>>& history,
                                                    const std::string& outcome) {
    graph_detail::validate_sequence(g, treatments, outcome, history);
    std::vector<std::pair<std::string, int>> regime;
    for (const auto& a : treatments) regime.emplace_back(a, 0);
    const auto s = swig_transform(g, regime);

    GraphReport report;
    for (std::size_t k = 0; k < treatments.size(); ++k) {
        std::vector<std::string> given = graph_detail::history_of(history, treatments[k]);
        for (std::size_t j = 0; j < k; ++j) given.push_back(treatments[j]);
        report.checks.push_back(graph_detail::test_node(s, treatments[k], {outcome}, given));
    }
    return report;
}

/// Parses "A1:L0,L1;A2:L0,L1,L2".
inline std::map<std::string, std::vector<std::string>> parse_history_spec(const std::string& text) {
    std::map<std::string, std::vector<std::string>> out;
    std::istringstream entries(text);
    std::string entry;
    while (std::getline(entries, entry, ';')) {
        if (entry.empty()) continue;
        const auto colon = entry.find(':');
        if (colon == std::string::npos || colon == 0) throw GraphError("history entry '" + entry + "' needs 'NODE:a,b'");
        auto& list = out[entry.substr(0, colon)];
        std::istringstream names(entry.substr(colon + 1));
        std::string name;
        while (std::getline(names, name, ','))
            if (!name.empty()) list.push_back(name);
    }
    return out;
}

}  // namespace hypothetica
