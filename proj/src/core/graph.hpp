#pragma once

// Computation-graph data model and the encoding that turns a graph into the
// token matrix T, degree vector D and effective adjacency consumed by the
// encoder blocks. Everything here is a pure function of its inputs.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace graphrep {

struct OpDescriptor {
  // full scheme: kind + attributes; cell scheme: label
  std::string kind;
  std::map<std::string, double> attributes;
  int label = -1;
};

struct NetworkGraph {
  std::string id;
  std::string family;  // optional; used by family-out splits
  std::vector<OpDescriptor> nodes;
  std::vector<std::pair<int, int>> edges;  // src -> dst, node indices
  std::map<std::string, double> statics;   // batch_size, flops, ...
  std::optional<double> target;

  int node_count() const { return static_cast<int>(nodes.size()); }
  Tensor adjacency() const;  // N x N binary, zero diagonal
};

struct GraphCheck {
  std::vector<std::string> errors;
  std::vector<std::string> warnings;
  bool ok() const { return errors.empty(); }
};

// Checks edge indices, binary/zero-diagonal adjacency, acyclicity, and the
// warn-level predecessor/successor expectations. Never mutates.
GraphCheck validate_graph(const NetworkGraph& g);

// Kahn order, smallest original index first; nullopt if the graph has a cycle.
// For an already topologically listed graph this is the identity.
std::optional<std::vector<int>> topological_order(const NetworkGraph& g);

bool is_topologically_listed(const NetworkGraph& g);

// Reorders nodes (and edge endpoints) into topological_order(g).
NetworkGraph canonicalize(const NetworkGraph& g);

enum class AdjacencyMode { Directed, Symmetric, SymmetricSelf };
AdjacencyMode adjacency_mode_from_string(const std::string& s);
std::string to_string(AdjacencyMode m);

// directed -> A; symmetric -> A or A^T; symmetric+self additionally sets the
// diagonal. Output stays binary.
Tensor effective_adjacency(const Tensor& a, AdjacencyMode mode);

// Distinct-neighbour count per node: row sums of the effective adjacency with
// any self loop excluded.
Tensor degree_vector(const Tensor& a_eff);

// Rows of the effective adjacency scaled to a mean over neighbours (used by
// the mean-aggregation block); all-zero rows stay zero.
Tensor mean_normalized_adjacency(const Tensor& a_eff);

// [sin(2^0 pi x / lambda), cos(2^0 pi x / lambda), ..., sin(2^{L-1} ...)]
std::vector<double> positional_encode(double x, int frequencies, double lambda);

struct AttributeSlot {
  std::string name;
  int frequencies = 16;
  double lambda = 1000.0;
};

struct EncodingConfig {
  std::string scheme = "full";  // full | cell

  // full scheme
  std::vector<std::string> op_vocabulary;
  std::string type_encoding = "onehot";  // onehot | pe
  int type_frequencies = 16;
  double type_lambda = 1000.0;
  std::string attr_encoding = "pe";  // pe | raw
  std::vector<AttributeSlot> attribute_slots;
  double missing_attr_sentinel = -1.0;

  // cell scheme
  int label_count = 7;
  int label_frequencies = 16;
  double label_lambda = 1000.0;

  // node self-position
  int position_frequencies = 16;
  double position_lambda = 1000.0;

  static EncodingConfig full_default();
  static EncodingConfig cell_default();

  int op_width() const;
  int token_dim() const { return op_width() + 2 * position_frequencies; }
  void validate() const;
};

struct TokenLayout {
  int op_begin = 0;
  int op_end = 0;
  int pos_begin = 0;
  int pos_end = 0;
};

struct TokenSequence {
  Tensor tokens;  // N x C
  TokenLayout layout;
};

// t_op for one node under the active scheme.
std::vector<double> encode_operation(const OpDescriptor& op, const EncodingConfig& cfg);

// Row i = encode_operation(node i) ++ positional_encode(i). Nodes must be in
// topological order; a non-topological listing is canonicalized first.
TokenSequence tokenize(const NetworkGraph& g, const EncodingConfig& cfg);

}  // namespace graphrep
