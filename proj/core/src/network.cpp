#include "gasblend/network.hpp"
#include "gasblend/errors.hpp"
#include "gasblend/units.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>
#include <sstream>

namespace gasblend {

using nlohmann::json;

int Network::supply_count() const {
    int r = 0;
    for (const auto& n : nodes) {
        if (n.kind == NodeKind::Supply) ++r;
    }
    return r;
}

int Network::node_index(int node_id) const {
    auto it = std::lower_bound(nodes.begin(), nodes.end(), node_id,
                               [](const Node& n, int id) { return n.id < id; });
    if (it == nodes.end() || it->id != node_id)
        throw ValidationError("unknown node id " + std::to_string(node_id));
    return static_cast<int>(it - nodes.begin());
}

int Network::edge_index(int edge_id) const {
    auto it = std::lower_bound(edges.begin(), edges.end(), edge_id,
                               [](const Edge& e, int id) { return e.id < id; });
    if (it == edges.end() || it->id != edge_id)
        throw ValidationError("unknown edge id " + std::to_string(edge_id));
    return static_cast<int>(it - edges.begin());
}

int Network::tail_index(int edge_idx) const { return node_index(edges[edge_idx].from); }
int Network::head_index(int edge_idx) const { return node_index(edges[edge_idx].to); }

double Network::total_length() const {
    double sum = 0.0;
    for (const auto& e : edges) sum += e.length;
    return sum;
}

std::vector<int> Network::unassigned_actuators() const {
    std::vector<char> assigned(actuators.size(), 0);
    for (const auto& e : edges) {
        if (e.inlet_compressor >= 0) assigned[e.inlet_compressor] = 1;
        if (e.outlet_regulator >= 0) assigned[e.outlet_regulator] = 1;
    }
    std::vector<int> out;
    for (std::size_t a = 0; a < assigned.size(); ++a)
        if (!assigned[a]) out.push_back(static_cast<int>(a));
    return out;
}

void Network::validate() const {
    if (nodes.empty()) throw ValidationError("network has no nodes");
    if (edges.empty()) throw ValidationError("network has no edges");

    bool seen_withdrawal = false;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (i > 0 && nodes[i].id <= nodes[i - 1].id)
            throw ValidationError("node ids must be unique and increasing (node " +
                                  std::to_string(nodes[i].id) + ")");
        if (nodes[i].kind == NodeKind::Withdrawal) {
            seen_withdrawal = true;
        } else if (seen_withdrawal) {
            throw ValidationError("supply node " + std::to_string(nodes[i].id) +
                                  " listed after a withdrawal node");
        }
    }
    const int r = supply_count();
    if (r == 0) throw ValidationError("network needs at least one supply node");
    if (r == node_count()) throw ValidationError("network needs at least one withdrawal node");

    for (std::size_t k = 0; k < edges.size(); ++k) {
        const Edge& e = edges[k];
        if (k > 0 && e.id <= edges[k - 1].id)
            throw ValidationError("edge ids must be unique and increasing (edge " +
                                  std::to_string(e.id) + ")");
        if (e.length <= 0.0 || e.diameter <= 0.0 || e.friction <= 0.0)
            throw ValidationError("edge " + std::to_string(e.id) +
                                  ": length, diameter and friction must be positive");
        if (e.from == e.to)
            throw ValidationError("edge " + std::to_string(e.id) + " is a self-loop");
        node_index(e.from);  // throws on unknown reference
        node_index(e.to);
    }

    for (std::size_t a = 0; a < actuators.size(); ++a) {
        const Actuator& act = actuators[a];
        edge_index(act.edge_id);
        if (act.min_ratio < 1.0)
            throw ValidationError("actuator on edge " + std::to_string(act.edge_id) +
                                  ": min_ratio must be >= 1");
        if (act.max_ratio < act.min_ratio)
            throw ValidationError("actuator on edge " + std::to_string(act.edge_id) +
                                  ": max_ratio below min_ratio");
        if (act.position == ActuatorPosition::Inlet && act.role == ActuatorRole::Regulator)
            throw ValidationError("actuator on edge " + std::to_string(act.edge_id) +
                                  ": regulators sit at pipe outlets");
    }

    // Undirected connectivity.
    std::vector<std::vector<int>> adj(nodes.size());
    for (std::size_t k = 0; k < edges.size(); ++k) {
        int t = tail_index(static_cast<int>(k));
        int h = head_index(static_cast<int>(k));
        adj[t].push_back(h);
        adj[h].push_back(t);
    }
    std::vector<char> seen(nodes.size(), 0);
    std::queue<int> bfs;
    bfs.push(0);
    seen[0] = 1;
    int reached = 1;
    while (!bfs.empty()) {
        int v = bfs.front();
        bfs.pop();
        for (int w : adj[v]) {
            if (!seen[w]) {
                seen[w] = 1;
                ++reached;
                bfs.push(w);
            }
        }
    }
    if (reached != node_count()) throw ValidationError("network graph is not connected");
}

namespace {

// Fills the per-edge actuator slots from the actuator list.  A compressor at
// the outlet position means "compressor on the inlet of the edge's final
// segment"; on a single-segment edge that is the edge's own inlet slot.
void assign_actuator_slots(Network& net) {
    for (auto& e : net.edges) {
        e.inlet_compressor = -1;
        e.outlet_regulator = -1;
    }
    // Exact position matches first.
    for (std::size_t a = 0; a < net.actuators.size(); ++a) {
        const Actuator& act = net.actuators[a];
        Edge& e = net.edges[net.edge_index(act.edge_id)];
        if (act.role == ActuatorRole::Compressor && act.position == ActuatorPosition::Inlet) {
            if (e.inlet_compressor >= 0)
                throw ValidationError("edge " + std::to_string(e.id) +
                                      ": duplicate inlet compressor");
            e.inlet_compressor = static_cast<int>(a);
        } else if (act.role == ActuatorRole::Regulator) {
            if (e.outlet_regulator >= 0)
                throw ValidationError("edge " + std::to_string(e.id) +
                                      ": duplicate outlet regulator");
            e.outlet_regulator = static_cast<int>(a);
        }
    }
    // An outlet-positioned compressor acts on the inlet of the edge's final
    // segment; on a single-segment edge that is the edge's own inlet slot.
    // If that slot is taken the actuator stays unassigned until refine()
    // moves it onto its own segment.
    for (std::size_t a = 0; a < net.actuators.size(); ++a) {
        const Actuator& act = net.actuators[a];
        if (act.role != ActuatorRole::Compressor || act.position != ActuatorPosition::Outlet)
            continue;
        Edge& e = net.edges[net.edge_index(act.edge_id)];
        if (e.inlet_compressor < 0) e.inlet_compressor = static_cast<int>(a);
    }
}

NodeKind parse_kind(const std::string& s) {
    if (s == "supply") return NodeKind::Supply;
    if (s == "withdrawal") return NodeKind::Withdrawal;
    throw ValidationError("unknown node kind '" + s + "'");
}

} // namespace

Network parse_network(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("network document is not valid JSON: ") + e.what());
    }
    Network net;
    try {
        for (const auto& jn : doc.at("nodes")) {
            Node n;
            n.id = jn.at("id").get<int>();
            n.kind = parse_kind(jn.at("kind").get<std::string>());
            net.nodes.push_back(n);
        }
        for (const auto& je : doc.at("edges")) {
            Edge e;
            e.id = je.at("id").get<int>();
            e.from = je.at("from").get<int>();
            e.to = je.at("to").get<int>();
            e.length = units::km_to_m(je.at("length_km").get<double>());
            e.diameter = je.at("diameter_m").get<double>();
            e.friction = je.at("friction").get<double>();
            net.edges.push_back(e);
        }
        if (doc.contains("actuators")) {
            for (const auto& ja : doc.at("actuators")) {
                Actuator a;
                a.edge_id = ja.at("edge").get<int>();
                const std::string pos = ja.at("position").get<std::string>();
                if (pos == "inlet") a.position = ActuatorPosition::Inlet;
                else if (pos == "outlet") a.position = ActuatorPosition::Outlet;
                else throw ValidationError("actuator position must be 'inlet' or 'outlet'");
                // default role follows the position: boost in, regulate out
                a.role = a.position == ActuatorPosition::Inlet ? ActuatorRole::Compressor
                                                               : ActuatorRole::Regulator;
                if (ja.contains("role")) {
                    const std::string role = ja.at("role").get<std::string>();
                    if (role == "compressor") a.role = ActuatorRole::Compressor;
                    else if (role == "regulator") a.role = ActuatorRole::Regulator;
                    else throw ValidationError("actuator role must be 'compressor' or 'regulator'");
                }
                a.min_ratio = ja.value("min_ratio", 1.0);
                a.max_ratio = ja.value("max_ratio", 2.0);
                net.actuators.push_back(a);
            }
        }
    } catch (const json::exception& e) {
        throw ValidationError(std::string("network document: ") + e.what());
    }
    net.validate();
    assign_actuator_slots(net);
    return net;
}

Network load_network(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open network file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_network(ss.str());
}

std::string write_network(const Network& net) {
    json doc;
    doc["nodes"] = json::array();
    for (const auto& n : net.nodes) {
        doc["nodes"].push_back({{"id", n.id},
                                {"kind", n.kind == NodeKind::Supply ? "supply" : "withdrawal"}});
    }
    doc["edges"] = json::array();
    for (const auto& e : net.edges) {
        doc["edges"].push_back({{"id", e.id},
                                {"from", e.from},
                                {"to", e.to},
                                {"length_km", units::m_to_km(e.length)},
                                {"diameter_m", e.diameter},
                                {"friction", e.friction}});
    }
    doc["actuators"] = json::array();
    for (const auto& a : net.actuators) {
        doc["actuators"].push_back(
            {{"edge", a.edge_id},
             {"position", a.position == ActuatorPosition::Inlet ? "inlet" : "outlet"},
             {"role", a.role == ActuatorRole::Compressor ? "compressor" : "regulator"},
             {"min_ratio", a.min_ratio},
             {"max_ratio", a.max_ratio}});
    }
    return doc.dump(2) + "\n";
}

void save_network(const Network& net, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write network file '" + path + "'");
    out << write_network(net);
}

RefinedNetwork refine(const Network& net, double cap) {
    if (cap <= 0.0) throw ValidationError("segment cap must be positive");
    net.validate();

    RefinedNetwork out;
    out.segment_length_cap = cap;

    // Parent nodes keep their ids; auxiliary nodes get fresh ids above them.
    out.net.nodes = net.nodes;
    int next_node_id = net.nodes.back().id + 1;

    std::vector<Node> auxiliaries;
    int next_edge_id = 1;

    struct SegRange {
        int first_edge_idx;
        int last_edge_idx;
    };
    std::vector<SegRange> ranges(net.edges.size());

    for (std::size_t k = 0; k < net.edges.size(); ++k) {
        const Edge& pe = net.edges[k];
        const double q = pe.length / cap;
        int nseg = static_cast<int>(std::ceil(q));
        if (nseg > 1 && static_cast<double>(nseg - 1) >= q * (1.0 - 1e-12)) --nseg;
        if (nseg < 1) nseg = 1;
        const double seg_len = pe.length / nseg;

        int prev_node = pe.from;
        ranges[k].first_edge_idx = static_cast<int>(out.net.edges.size());
        for (int s = 0; s < nseg; ++s) {
            int seg_head;
            if (s + 1 == nseg) {
                seg_head = pe.to;
            } else {
                seg_head = next_node_id++;
                auxiliaries.push_back(Node{seg_head, NodeKind::Withdrawal});
            }
            Edge se;
            se.id = next_edge_id++;
            se.from = prev_node;
            se.to = seg_head;
            se.length = seg_len;
            se.diameter = pe.diameter;
            se.friction = pe.friction;
            out.net.edges.push_back(se);
            out.parent_edge[se.id] = pe.id;
            prev_node = seg_head;
        }
        ranges[k].last_edge_idx = static_cast<int>(out.net.edges.size()) - 1;
    }

    out.net.nodes.insert(out.net.nodes.end(), auxiliaries.begin(), auxiliaries.end());

    // Re-home actuators: inlet actuators to the first segment, outlet
    // actuators to the last segment.  An outlet-positioned compressor becomes
    // the inlet compressor of the last segment.
    for (const Actuator& pa : net.actuators) {
        const int pk = net.edge_index(pa.edge_id);
        Actuator a = pa;
        if (pa.position == ActuatorPosition::Inlet) {
            a.edge_id = out.net.edges[ranges[pk].first_edge_idx].id;
        } else {
            a.edge_id = out.net.edges[ranges[pk].last_edge_idx].id;
            if (pa.role == ActuatorRole::Compressor) a.position = ActuatorPosition::Inlet;
        }
        out.net.actuators.push_back(a);
    }

    out.net.validate();
    assign_actuator_slots(out.net);
    if (!out.net.unassigned_actuators().empty())
        throw ValidationError("refinement left colliding actuators on one segment; "
                              "lower the segment cap so each lands on its own segment");
    return out;
}

IncidenceAssembler::IncidenceAssembler(const Network& net) : net_(&net) {
    rows_ = net.edge_count();
    cols_ = net.node_count();
    supplies_ = net.supply_count();
}

IncidenceSet IncidenceAssembler::assemble(const Eigen::VectorXd& ratios) const {
    const Network& net = *net_;
    if (!net.unassigned_actuators().empty())
        throw ValidationError("network has actuators without a segment slot; refine first");
    if (ratios.size() != net.actuator_count())
        throw ValidationError("ratio vector size does not match actuator count");
    for (Eigen::Index i = 0; i < ratios.size(); ++i) {
        if (!(ratios[i] >= 1.0))
            throw ValidationError("actuator ratio " + std::to_string(ratios[i]) +
                                  " below 1 rejected");
    }

    const int E = rows_, V = cols_, r = supplies_;
    using T = Eigen::Triplet<double>;
    std::vector<T> tm, tms, tmw, tmwp, tmwn, tmsp, tqw, tqwp, tqwn, tqs, tqsn;

    IncidenceSet set;
    set.L.resize(E);
    set.K.resize(E);

    for (int k = 0; k < E; ++k) {
        const Edge& e = net.edges[k];
        const int t = net.tail_index(k);
        const int h = net.head_index(k);
        const double mu_in = e.inlet_compressor >= 0 ? ratios[e.inlet_compressor] : 1.0;
        const double mu_out = e.outlet_regulator >= 0 ? ratios[e.outlet_regulator] : 1.0;

        tm.emplace_back(k, h, mu_out);
        tm.emplace_back(k, t, -mu_in);

        if (h < r) {
            tms.emplace_back(k, h, mu_out);
            tmsp.emplace_back(k, h, mu_out);
            tqs.emplace_back(k, h, 1.0);
        } else {
            tmw.emplace_back(k, h - r, mu_out);
            tmwp.emplace_back(k, h - r, mu_out);
            tqw.emplace_back(k, h - r, 1.0);
            tqwp.emplace_back(k, h - r, 1.0);
        }
        if (t < r) {
            tms.emplace_back(k, t, -mu_in);
            tqs.emplace_back(k, t, -1.0);
            tqsn.emplace_back(k, t, -1.0);
        } else {
            tmw.emplace_back(k, t - r, -mu_in);
            tmwn.emplace_back(k, t - r, -mu_in);
            tqw.emplace_back(k, t - r, -1.0);
            tqwn.emplace_back(k, t - r, -1.0);
        }

        set.L[k] = e.length;
        set.K[k] = e.friction / (2.0 * e.diameter);
    }

    auto build = [](int rows, int cols, const std::vector<T>& trips) {
        Eigen::SparseMatrix<double> m(rows, cols);
        m.setFromTriplets(trips.begin(), trips.end());
        return m;
    };
    set.M = build(E, V, tm);
    set.Ms = build(E, r, tms);
    set.Mw = build(E, V - r, tmw);
    set.Mw_pos = build(E, V - r, tmwp);
    set.Mw_neg = build(E, V - r, tmwn);
    set.Ms_pos = build(E, r, tmsp);
    set.Qw = build(E, V - r, tqw);
    set.Qw_pos = build(E, V - r, tqwp);
    set.Qw_neg = build(E, V - r, tqwn);
    set.Qs = build(E, r, tqs);
    set.Qs_neg = build(E, r, tqsn);
    return set;
}

IncidenceSet incidence(const RefinedNetwork& rnet, const Eigen::VectorXd& ratios) {
    return IncidenceAssembler(rnet.net).assemble(ratios);
}

} // namespace gasblend
