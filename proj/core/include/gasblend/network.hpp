#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace gasblend {

struct GasConstituent {
    std::string name;
    double sound_speed = 0.0;  // m/s
};

enum class NodeKind { Supply, Withdrawal };

struct Node {
    int id = 0;
    NodeKind kind = NodeKind::Withdrawal;
};

/// Actuators boost (compressor) or drop (regulator) density across a pipe
/// endpoint by a multiplicative ratio >= 1.
enum class ActuatorPosition { Inlet, Outlet };
enum class ActuatorRole { Compressor, Regulator };

struct Actuator {
    int edge_id = 0;
    ActuatorPosition position = ActuatorPosition::Inlet;
    ActuatorRole role = ActuatorRole::Compressor;
    double min_ratio = 1.0;
    double max_ratio = 2.0;
};

struct Edge {
    int id = 0;
    int from = 0;  // node id, tail; positive flow is from -> to
    int to = 0;    // node id, head
    double length = 0.0;    // m
    double diameter = 0.0;  // m
    double friction = 0.0;  // dimensionless
    // Actuator slot indices into Network::actuators, -1 when unactuated.
    int inlet_compressor = -1;
    int outlet_regulator = -1;
};

/// Directed pipeline graph.  Nodes are ordered by integer label with all
/// supply nodes before all withdrawal nodes.  Immutable after construction.
struct Network {
    std::vector<Node> nodes;
    std::vector<Edge> edges;
    std::vector<Actuator> actuators;

    int node_count() const { return static_cast<int>(nodes.size()); }
    int edge_count() const { return static_cast<int>(edges.size()); }
    int actuator_count() const { return static_cast<int>(actuators.size()); }
    int supply_count() const;
    int withdrawal_count() const { return node_count() - supply_count(); }

    /// Index of a node id in the nodes vector; throws ValidationError if absent.
    int node_index(int node_id) const;
    int edge_index(int edge_id) const;

    /// Tail/head node indices of an edge (by edge index).
    int tail_index(int edge_idx) const;
    int head_index(int edge_idx) const;

    double total_length() const;

    /// Actuator indices not reachable from any edge slot (e.g. an
    /// outlet-positioned compressor whose edge also has an inlet compressor
    /// and has not been refined yet).  Consumers reject such networks.
    std::vector<int> unassigned_actuators() const;

    /// Checks every structural invariant; throws ValidationError on the
    /// first violation.
    void validate() const;
};

/// Network whose every edge is at most segment_length_cap long, produced by
/// refine().  parent_edge maps refined edge id -> original edge id.
struct RefinedNetwork {
    Network net;
    std::map<int, int> parent_edge;
    double segment_length_cap = 0.0;
};

/// Incidence and coefficient matrices of the lumped-segment system for one
/// set of actuator ratios.  Rows are edges; node columns follow the network
/// ordering (supplies first).  The sign matrices do not depend on ratios.
struct IncidenceSet {
    Eigen::SparseMatrix<double> M;       // E x V, +mu_out on head, -mu_in on tail
    Eigen::SparseMatrix<double> Ms;      // E x r      (supply columns of M)
    Eigen::SparseMatrix<double> Mw;      // E x (V-r)  (withdrawal columns of M)
    Eigen::SparseMatrix<double> Mw_pos;  // positive part of Mw
    Eigen::SparseMatrix<double> Mw_neg;  // negative part of Mw
    Eigen::SparseMatrix<double> Ms_pos;  // positive part of Ms
    Eigen::SparseMatrix<double> Qw;      // sign(Mw)
    Eigen::SparseMatrix<double> Qw_pos;  // sign(Mw_pos)
    Eigen::SparseMatrix<double> Qw_neg;  // sign(Mw_neg)
    Eigen::SparseMatrix<double> Qs;      // sign(Ms)
    Eigen::SparseMatrix<double> Qs_neg;  // sign of negative part of Ms
    Eigen::VectorXd L;                   // diagonal of segment lengths
    Eigen::VectorXd K;                   // diagonal of lambda/(2 D)
};

/// Parses and validates a network document (JSON text, lengths in km).
Network parse_network(const std::string& text);
Network load_network(const std::string& path);

/// Serializes back to the document schema (lengths in km).
std::string write_network(const Network& net);
void save_network(const Network& net, const std::string& path);

/// Splits every edge longer than cap into equal segments joined by auxiliary
/// withdrawal nodes.  Inlet actuators land on the first segment; outlet
/// actuators land on the last segment (compressors on its inlet slot,
/// regulators on its outlet slot).
RefinedNetwork refine(const Network& net, double cap);

/// Assembles the incidence set for the given per-actuator ratios
/// (all >= 1; unactuated slots are fixed to 1).
class IncidenceAssembler {
public:
    explicit IncidenceAssembler(const Network& net);

    /// Rebuilds ratio-dependent values; the sparsity structure is cached.
    IncidenceSet assemble(const Eigen::VectorXd& ratios) const;

private:
    const Network* net_;
    int rows_ = 0, cols_ = 0, supplies_ = 0;
};

IncidenceSet incidence(const RefinedNetwork& rnet, const Eigen::VectorXd& ratios);

} // namespace gasblend
