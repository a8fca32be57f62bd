#include "core/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "core/encoder.hpp"  // preprocess

namespace tict {

RetrievalIndex build_index(const std::vector<std::vector<double>>& train_x,
                           const std::vector<int>& train_y, int L) {
  if (train_x.empty()) fail(ErrCode::kInput, "build_index: empty training set");
  if (train_x.size() != train_y.size()) {
    fail(ErrCode::kInput, "build_index: " + std::to_string(train_x.size()) +
                              " series but " + std::to_string(train_y.size()) +
                              " labels");
  }
  RetrievalIndex index;
  index.length = L;
  index.series.reserve(train_x.size());
  index.labels.reserve(train_y.size());
  for (size_t i = 0; i < train_x.size(); ++i) {
    index.series.push_back(preprocess(train_x[i], L));
    int raw = train_y[i];
    auto it = std::find(index.raw_labels.begin(), index.raw_labels.end(), raw);
    int id;
    if (it == index.raw_labels.end()) {
      id = static_cast<int>(index.raw_labels.size());
      index.raw_labels.push_back(raw);
    } else {
      id = static_cast<int>(it - index.raw_labels.begin());
    }
    index.labels.push_back(id);
  }
  index.num_classes = static_cast<int>(index.raw_labels.size());
  return index;
}

ContextSet knn(const RetrievalIndex& index, const std::vector<double>& x_test,
               int k) {
  if (k < 1) fail(ErrCode::kInput, "knn: k must be >= 1, got " + std::to_string(k));
  if (index.size() == 0) fail(ErrCode::kInput, "knn: empty index");
  auto query = preprocess(x_test, index.length);

  // Exact search: score everything, sort by (distance, index). The desk-scale
  // training sets are small enough that a full sort is never the bottleneck.
  std::vector<std::pair<double, int>> scored;
  scored.reserve(index.series.size());
  for (int i = 0; i < index.size(); ++i) {
    const auto& s = index.series[static_cast<size_t>(i)];
    double acc = 0.0;
    for (size_t j = 0; j < s.size(); ++j) {
      double d = query[j] - s[j];
      acc += d * d;
    }
    scored.emplace_back(acc, i);
  }
  std::sort(scored.begin(), scored.end());

  ContextSet out;
  out.shrunken = index.size() < k;
  const int take = std::min(k, index.size());
  out.neighbors.reserve(static_cast<size_t>(take));
  for (int i = 0; i < take; ++i) {
    out.neighbors.push_back({scored[static_cast<size_t>(i)].second,
                             std::sqrt(scored[static_cast<size_t>(i)].first)});
  }
  return out;
}

int one_nn_ed_classify(const RetrievalIndex& index,
                       const std::vector<double>& x_test) {
  auto context = knn(index, x_test, 1);
  return index.labels[static_cast<size_t>(context.neighbors.front().index)];
}

}  // namespace tict
