#pragma once

#include <string>
#include <vector>

#include "ubalab/latent.hpp"
#include "ubalab/linalg.hpp"

namespace uba {

struct GraphEdge {
  int i, j;         // i < j
  int distance;     // l1 (Hamming) distance between the codes
  double weight;    // weight_min^(distance / threshold)
};

// Class-coupling graph over binary codes: an edge exists iff the code
// distance is strictly below the threshold, weighted by
// weight_min^(d/t) so weight 1 at distance 0 decays toward weight_min as
// the distance approaches the threshold.
struct ClassGraph {
  int node_count = 0;
  int code_length = 0;
  double threshold = 0;
  double weight_min = 0;
  Mat features;               // [K, n] binary codes as doubles (GCN input)
  std::vector<GraphEdge> edges;
  Mat weights;                // [K, K] symmetric, zero diagonal
  Mat normalized_adjacency;   // D^-1/2 (W + I) D^-1/2 with D from W + I
};

int l1_distance(const uint8_t* a, const uint8_t* b, int n);

// Symmetric normalization with self-loops, the GCN propagation operator.
Mat normalize_adjacency(const Mat& weights);

ClassGraph build_class_graph(const BinaryCodeSet& codes, double threshold, double weight_min);

void export_graph_csv(const std::string& path, const ClassGraph& g);

}  // namespace uba
