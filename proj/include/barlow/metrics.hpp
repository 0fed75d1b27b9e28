#ifndef BARLOW_METRICS_HPP_
#define BARLOW_METRICS_HPP_

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "barlow/data.hpp"
#include "barlow/error.hpp"
#include "barlow/matrix.hpp"
#include "barlow/model.hpp"

namespace barlow {

/// Index of the largest entry; ties go to the lowest index.
template <typename T>
int argmax(std::span<const T> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j)
    if (row[j] > row[best]) best = j;
  return static_cast<int>(best);
}

template <typename T>
std::vector<int> argmax_rows(const Matrix<T>& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t b = 0; b < logits.rows(); ++b) out[b] = argmax(logits.row(b));
  return out;
}

/// Class predictions in evaluation mode (frozen batch-norm statistics), so
/// each row's prediction is independent of the others.
template <typename T>
std::vector<int> predict(const ModelParams<T>& model, const UnlabeledDataset& data, std::size_t chunk = 256) {
  if (data.dim() != model.arch.input_dim) {
    throw ShapeError("predict: dataset dim " + std::to_string(data.dim()) + " does not match model input dim " +
                     std::to_string(model.arch.input_dim));
  }
  std::vector<int> out;
  out.reserve(data.rows());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.rows(); start += chunk) {
    const std::size_t end = std::min(data.rows(), start + chunk);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const auto pred = argmax_rows(infer_logits(model, data.gather<T>(idx)));
    out.insert(out.end(), pred.begin(), pred.end());
  }
  return out;
}

/// (true, predicted) counts.
struct ConfusionCounts {
  int num_classes = 0;
  std::vector<std::size_t> counts;  // row-major M x M

  ConfusionCounts(std::span<const int> truth, std::span<const int> pred, int m) : num_classes(m) {
    if (truth.size() != pred.size()) {
      throw ShapeError("confusion: " + std::to_string(truth.size()) + " labels vs " + std::to_string(pred.size()) +
                       " predictions");
    }
    if (m < 1) throw ConfigError("confusion: class count must be positive");
    counts.assign(static_cast<std::size_t>(m) * m, 0);
    for (std::size_t i = 0; i < truth.size(); ++i) {
      if (truth[i] < 0 || truth[i] >= m || pred[i] < 0 || pred[i] >= m) {
        throw ConfigError("confusion: row " + std::to_string(i) + " has a class outside [0, " + std::to_string(m) + ")");
      }
      ++counts[static_cast<std::size_t>(truth[i]) * m + pred[i]];
    }
  }

  std::size_t at(int t, int p) const { return counts[static_cast<std::size_t>(t) * num_classes + p]; }
  std::size_t total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }
  std::size_t support(int t) const {
    std::size_t s = 0;
    for (int p = 0; p < num_classes; ++p) s += at(t, p);
    return s;
  }
};

/// Correct predictions over total predictions.
inline double micro_accuracy(std::span<const int> truth, std::span<const int> pred) {
  if (truth.size() != pred.size()) throw ShapeError("micro_accuracy: length mismatch");
  if (truth.empty()) throw ConfigError("micro_accuracy: undefined on an empty dataset");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) correct += truth[i] == pred[i];
  return static_cast<double>(correct) / static_cast<double>(truth.size());
}

/// Mean per-class recall. Classes absent from `truth` are left out of the mean.
inline double macro_accuracy(std::span<const int> truth, std::span<const int> pred, int num_classes) {
  if (truth.empty()) throw ConfigError("macro_accuracy: undefined on an empty dataset");
  const ConfusionCounts cm(truth, pred, num_classes);
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < num_classes; ++c) {
    const std::size_t s = cm.support(c);
    if (s == 0) continue;
    sum += static_cast<double>(cm.at(c, c)) / static_cast<double>(s);
    ++present;
  }
  return sum / present;
}

struct Accuracy {
  double macro = 0.0;
  double micro = 0.0;
};

template <typename T>
Accuracy evaluate(const ModelParams<T>& model, const LabeledDataset& data) {
  const auto pred = predict(model, data.unlabeled());
  return {macro_accuracy(data.labels(), pred, data.num_classes()), micro_accuracy(data.labels(), pred)};
}

}  // namespace barlow

#endif  // BARLOW_METRICS_HPP_
