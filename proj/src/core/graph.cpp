#include "core/graph.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace graphrep {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

Tensor NetworkGraph::adjacency() const {
  const int n = node_count();
  Tensor a(n, n);
  for (const auto& [src, dst] : edges) a(src, dst) = 1.0;
  return a;
}

GraphCheck validate_graph(const NetworkGraph& g) {
  GraphCheck check;
  const int n = g.node_count();

  std::set<std::pair<int, int>> seen;
  for (const auto& [src, dst] : g.edges) {
    if (src < 0 || src >= n || dst < 0 || dst >= n) {
      check.errors.push_back("edge (" + std::to_string(src) + "," + std::to_string(dst) +
                             ") references a node outside [0," + std::to_string(n - 1) + "]");
      continue;
    }
    if (src == dst) {
      check.errors.push_back("self-loop on node " + std::to_string(src));
    }
    if (!seen.insert({src, dst}).second) {
      check.errors.push_back("duplicate edge (" + std::to_string(src) + "," +
                             std::to_string(dst) + ")");
    }
  }
  if (!check.errors.empty()) return check;

  if (!topological_order(g).has_value()) {
    check.errors.push_back("cycle detected: no topological order exists");
    return check;
  }

  std::vector<int> in_deg(n, 0), out_deg(n, 0);
  for (const auto& [src, dst] : g.edges) {
    ++out_deg[src];
    ++in_deg[dst];
  }
  for (int i = 0; i < n; ++i) {
    const std::string& kind = g.nodes[i].kind;
    if (in_deg[i] == 0 && !kind.empty() && kind != "input") {
      check.warnings.push_back("node " + std::to_string(i) + " (" + kind + ") has no predecessor");
    }
    if (out_deg[i] == 0 && !kind.empty() && kind != "output") {
      check.warnings.push_back("node " + std::to_string(i) + " (" + kind + ") has no successor");
    }
    for (const auto& [name, value] : g.nodes[i].attributes) {
      if (!std::isfinite(value) || value < 0.0) {
        check.errors.push_back("node " + std::to_string(i) + " attribute '" + name +
                               "' must be finite and >= 0");
      }
    }
  }
  return check;
}

std::optional<std::vector<int>> topological_order(const NetworkGraph& g) {
  const int n = g.node_count();
  std::vector<int> in_deg(n, 0);
  std::vector<std::vector<int>> succ(n);
  for (const auto& [src, dst] : g.edges) {
    if (src < 0 || src >= n || dst < 0 || dst >= n) return std::nullopt;
    ++in_deg[dst];
    succ[src].push_back(dst);
  }
  std::set<int> ready;
  for (int i = 0; i < n; ++i) {
    if (in_deg[i] == 0) ready.insert(i);
  }
  std::vector<int> order;
  order.reserve(n);
  while (!ready.empty()) {
    const int v = *ready.begin();
    ready.erase(ready.begin());
    order.push_back(v);
    for (int w : succ[v]) {
      if (--in_deg[w] == 0) ready.insert(w);
    }
  }
  if (static_cast<int>(order.size()) != n) return std::nullopt;
  return order;
}

bool is_topologically_listed(const NetworkGraph& g) {
  for (const auto& [src, dst] : g.edges) {
    if (src >= dst) return false;
  }
  return true;
}

NetworkGraph canonicalize(const NetworkGraph& g) {
  auto order = topological_order(g);
  if (!order) {
    throw ValidationError("graph '" + g.id + "' contains a cycle");
  }
  std::vector<int> pos(g.node_count());
  for (int i = 0; i < g.node_count(); ++i) pos[(*order)[i]] = i;

  NetworkGraph out = g;
  for (int i = 0; i < g.node_count(); ++i) out.nodes[pos[i]] = g.nodes[i];
  for (auto& [src, dst] : out.edges) {
    src = pos[src];
    dst = pos[dst];
  }
  std::sort(out.edges.begin(), out.edges.end());
  return out;
}

AdjacencyMode adjacency_mode_from_string(const std::string& s) {
  if (s == "directed") return AdjacencyMode::Directed;
  if (s == "symmetric") return AdjacencyMode::Symmetric;
  if (s == "symmetric_self") return AdjacencyMode::SymmetricSelf;
  throw ConfigError("unknown adjacency mode '" + s + "'");
}

std::string to_string(AdjacencyMode m) {
  switch (m) {
    case AdjacencyMode::Directed: return "directed";
    case AdjacencyMode::Symmetric: return "symmetric";
    case AdjacencyMode::SymmetricSelf: return "symmetric_self";
  }
  return "?";
}

Tensor effective_adjacency(const Tensor& a, AdjacencyMode mode) {
  Tensor out = a;
  if (mode == AdjacencyMode::Directed) return out;
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j)
      if (a(j, i) != 0.0) out(i, j) = 1.0;
  if (mode == AdjacencyMode::SymmetricSelf) {
    for (int i = 0; i < a.rows; ++i) out(i, i) = 1.0;
  }
  return out;
}

Tensor degree_vector(const Tensor& a_eff) {
  Tensor d(a_eff.rows, 1);
  for (int i = 0; i < a_eff.rows; ++i) {
    double count = 0.0;
    for (int j = 0; j < a_eff.cols; ++j) {
      if (j != i && a_eff(i, j) != 0.0) count += 1.0;
    }
    d(i, 0) = count;
  }
  return d;
}

Tensor mean_normalized_adjacency(const Tensor& a_eff) {
  Tensor out = a_eff;
  for (int i = 0; i < a_eff.rows; ++i) {
    double sum = 0.0;
    for (int j = 0; j < a_eff.cols; ++j) sum += a_eff(i, j);
    if (sum > 0.0) {
      for (int j = 0; j < a_eff.cols; ++j) out(i, j) /= sum;
    }
  }
  return out;
}

std::vector<double> positional_encode(double x, int frequencies, double lambda) {
  if (frequencies < 1) throw ConfigError("positional_encode: need at least one frequency");
  if (lambda <= 0.0) throw ConfigError("positional_encode: lambda must be positive");
  std::vector<double> out;
  out.reserve(2 * static_cast<std::size_t>(frequencies));
  double freq = kPi / lambda;
  for (int k = 0; k < frequencies; ++k) {
    out.push_back(std::sin(freq * x));
    out.push_back(std::cos(freq * x));
    freq *= 2.0;
  }
  return out;
}

EncodingConfig EncodingConfig::full_default() {
  EncodingConfig cfg;
  cfg.scheme = "full";
  cfg.op_vocabulary = {"input", "output", "conv", "batch_norm", "relu",
                       "pool",  "fc",     "add",  "concat"};
  cfg.attribute_slots = {{"kernel_size", 16, 1000.0},
                         {"groups", 16, 1000.0},
                         {"stride", 16, 1000.0},
                         {"channels", 16, 1000.0}};
  return cfg;
}

EncodingConfig EncodingConfig::cell_default() {
  EncodingConfig cfg;
  cfg.scheme = "cell";
  cfg.label_count = 7;
  return cfg;
}

int EncodingConfig::op_width() const {
  if (scheme == "cell") return 2 * label_frequencies;
  int w = type_encoding == "onehot" ? static_cast<int>(op_vocabulary.size())
                                    : 2 * type_frequencies;
  for (const auto& slot : attribute_slots) {
    w += attr_encoding == "pe" ? 2 * slot.frequencies : 1;
  }
  return w;
}

void EncodingConfig::validate() const {
  if (scheme != "full" && scheme != "cell") throw ConfigError("encoding scheme must be full or cell");
  if (scheme == "full" && op_vocabulary.empty()) throw ConfigError("full encoding needs a vocabulary");
  if (scheme == "cell" && label_count < 1) throw ConfigError("cell encoding needs label_count >= 1");
  if (type_encoding != "onehot" && type_encoding != "pe") throw ConfigError("type_encoding must be onehot or pe");
  if (attr_encoding != "pe" && attr_encoding != "raw") throw ConfigError("attr_encoding must be pe or raw");
  if (position_frequencies < 1 || position_lambda <= 0.0) throw ConfigError("bad position encoding config");
}

std::vector<double> encode_operation(const OpDescriptor& op, const EncodingConfig& cfg) {
  std::vector<double> out;
  if (cfg.scheme == "cell") {
    if (op.label < 0 || op.label >= cfg.label_count) {
      throw ValidationError("operation label " + std::to_string(op.label) +
                            " outside vocabulary of " + std::to_string(cfg.label_count));
    }
    return positional_encode(op.label, cfg.label_frequencies, cfg.label_lambda);
  }

  const auto it = std::find(cfg.op_vocabulary.begin(), cfg.op_vocabulary.end(), op.kind);
  if (it == cfg.op_vocabulary.end()) {
    throw ValidationError("unknown operation kind '" + op.kind + "'");
  }
  const int idx = static_cast<int>(it - cfg.op_vocabulary.begin());
  if (cfg.type_encoding == "onehot") {
    out.assign(cfg.op_vocabulary.size(), 0.0);
    out[static_cast<std::size_t>(idx)] = 1.0;
  } else {
    out = positional_encode(idx, cfg.type_frequencies, cfg.type_lambda);
  }

  for (const auto& slot : cfg.attribute_slots) {
    const auto attr = op.attributes.find(slot.name);
    const double value = attr == op.attributes.end() ? cfg.missing_attr_sentinel : attr->second;
    if (cfg.attr_encoding == "pe") {
      const auto enc = positional_encode(value, slot.frequencies, slot.lambda);
      out.insert(out.end(), enc.begin(), enc.end());
    } else {
      out.push_back(value);
    }
  }
  return out;
}

TokenSequence tokenize(const NetworkGraph& g, const EncodingConfig& cfg) {
  cfg.validate();
  const NetworkGraph* src = &g;
  NetworkGraph sorted;
  if (!is_topologically_listed(g)) {
    sorted = canonicalize(g);
    src = &sorted;
  }

  const int n = src->node_count();
  const int c = cfg.token_dim();
  TokenSequence seq;
  seq.tokens = Tensor(n, c);
  seq.layout.op_begin = 0;
  seq.layout.op_end = cfg.op_width();
  seq.layout.pos_begin = cfg.op_width();
  seq.layout.pos_end = c;

  for (int i = 0; i < n; ++i) {
    const auto op_enc = encode_operation(src->nodes[i], cfg);
    const auto pos_enc = positional_encode(i, cfg.position_frequencies, cfg.position_lambda);
    int col = 0;
    for (double v : op_enc) seq.tokens(i, col++) = v;
    for (double v : pos_enc) seq.tokens(i, col++) = v;
  }
  return seq;
}

}  // namespace graphrep
