#include "ubalab/class_graph.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "ubalab/text_format.hpp"

namespace uba {

int l1_distance(const uint8_t* a, const uint8_t* b, int n) {
  int d = 0;
  for (int i = 0; i < n; ++i) d += std::abs(static_cast<int>(a[i]) - static_cast<int>(b[i]));
  return d;
}

Mat normalize_adjacency(const Mat& weights) {
  if (weights.rows != weights.cols)
    throw std::invalid_argument("normalize_adjacency: matrix not square");
  const int k = weights.rows;
  Mat with_loops = weights;
  for (int i = 0; i < k; ++i) with_loops.at(i, i) += 1.0;
  std::vector<double> inv_sqrt_deg(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) {
    double deg = 0;
    for (int j = 0; j < k; ++j) deg += with_loops.at(i, j);
    if (!(deg > 0))
      throw std::invalid_argument("normalize_adjacency: non-positive degree at node " +
                                  std::to_string(i));
    inv_sqrt_deg[static_cast<size_t>(i)] = 1.0 / std::sqrt(deg);
  }
  Mat out(k, k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j)
      out.at(i, j) = inv_sqrt_deg[static_cast<size_t>(i)] * with_loops.at(i, j) *
                     inv_sqrt_deg[static_cast<size_t>(j)];
  return out;
}

ClassGraph build_class_graph(const BinaryCodeSet& codes, double threshold, double weight_min) {
  if (threshold < 0) throw std::invalid_argument("build_class_graph: threshold must be >= 0");
  if (!(weight_min > 0.0) || weight_min > 1.0)
    throw std::invalid_argument("build_class_graph: weight_min must be in (0, 1]");
  const int k = codes.class_count;
  const int n = codes.code_length;
  if (k < 2 || n <= 0) throw std::invalid_argument("build_class_graph: degenerate code set");

  ClassGraph g;
  g.node_count = k;
  g.code_length = n;
  g.threshold = threshold;
  g.weight_min = weight_min;
  g.features = Mat(k, n);
  for (int c = 0; c < k; ++c)
    for (int j = 0; j < n; ++j) g.features.at(c, j) = codes.bit(c, j);

  g.weights = Mat(k, k);
  for (int i = 0; i < k; ++i)
    for (int j = i + 1; j < k; ++j) {
      const int d = l1_distance(&codes.codes[static_cast<size_t>(i) * n],
                                &codes.codes[static_cast<size_t>(j) * n], n);
      // Strict inequality: threshold 0 yields an edgeless graph, and a
      // distance exactly at the threshold does not couple the classes.
      if (static_cast<double>(d) < threshold) {
        const double w = std::pow(weight_min, static_cast<double>(d) / threshold);
        g.edges.push_back({i, j, d, w});
        g.weights.at(i, j) = w;
        g.weights.at(j, i) = w;
      }
    }
  g.normalized_adjacency = normalize_adjacency(g.weights);
  return g;
}

void export_graph_csv(const std::string& path, const ClassGraph& g) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << "i,j,distance,weight\n";
  for (const auto& e : g.edges)
    f << e.i << ',' << e.j << ',' << e.distance << ',' << fmt_double(e.weight) << "\n";
}

}  // namespace uba
