#pragma once

#include <vector>

#include "core/common.hpp"

namespace tict {

// Exact nearest-neighbor retrieval over a labeled training set. All stored
// series are preprocessed (resampled to a common length and z-normalized), so
// distances are z-normalized Euclidean distances.
struct RetrievalIndex {
  std::vector<std::vector<double>> series;  // preprocessed, all length `length`
  std::vector<int> labels;                  // remapped to 0..num_classes-1
  std::vector<int> raw_labels;              // class id -> original label value
  int length = 0;
  int num_classes = 0;

  int size() const { return static_cast<int>(series.size()); }
};

// Preprocesses every training series to length L and remaps raw labels to a
// contiguous 0..C-1 range in first-occurrence order.
RetrievalIndex build_index(const std::vector<std::vector<double>>& train_x,
                           const std::vector<int>& train_y, int L);

struct Neighbor {
  int index = 0;        // position in the training set
  double distance = 0;  // Euclidean distance after preprocessing
};

// Result of a kNN query: neighbors in ascending distance order, ties broken
// by lower training-set index. `shrunken` marks queries against a training
// set smaller than k, which return the whole set.
struct ContextSet {
  std::vector<Neighbor> neighbors;
  bool shrunken = false;
};

// Exact k nearest neighbors of x_test (preprocessed before matching).
ContextSet knn(const RetrievalIndex& index, const std::vector<double>& x_test,
               int k);

// The 1NN-ED baseline: the (remapped) label of the single nearest neighbor.
int one_nn_ed_classify(const RetrievalIndex& index,
                       const std::vector<double>& x_test);

}  // namespace tict
