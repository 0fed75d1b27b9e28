#ifndef BARLOW_DATA_HPP_
#define BARLOW_DATA_HPP_

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <variant>
#include <vector>

#include "barlow/error.hpp"
#include "barlow/matrix.hpp"

namespace barlow {

enum class Split { kTrain, kVal, kTest };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

/// Rows of feature vectors, stored as float32 (the on-disk precision).
class UnlabeledDataset {
 public:
  UnlabeledDataset() = default;
  explicit UnlabeledDataset(std::size_t dim) : dim_(dim) {
    if (dim == 0) throw ConfigError("dataset feature dimension must be positive");
  }

  std::size_t dim() const noexcept { return dim_; }
  std::size_t rows() const noexcept { return dim_ == 0 ? 0 : values_.size() / dim_; }
  bool empty() const noexcept { return values_.empty(); }

  std::span<const float> row(std::size_t i) const { return {values_.data() + i * dim_, dim_}; }
  std::span<float> row(std::size_t i) { return {values_.data() + i * dim_, dim_}; }

  void add_row(std::span<const float> v) {
    if (v.size() != dim_) {
      throw ShapeError("dataset row has " + std::to_string(v.size()) + " values, expected " +
                       std::to_string(dim_));
    }
    for (float x : v) {
      if (!std::isfinite(x)) throw DataError("dataset row contains a non-finite value");
    }
    values_.insert(values_.end(), v.begin(), v.end());
  }

  /// Rows `indices` as a batch matrix in the requested precision.
  template <typename T>
  Matrix<T> gather(std::span<const std::size_t> indices) const {
    Matrix<T> m(indices.size(), dim_);
    for (std::size_t r = 0; r < indices.size(); ++r) {
      auto src = row(indices[r]);
      for (std::size_t j = 0; j < dim_; ++j) m(r, j) = static_cast<T>(src[j]);
    }
    return m;
  }

  template <typename T>
  Matrix<T> to_matrix() const {
    std::vector<std::size_t> idx(rows());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return gather<T>(idx);
  }

  friend bool operator==(const UnlabeledDataset&, const UnlabeledDataset&) = default;

 private:
  std::size_t dim_ = 0;
  std::vector<float> values_;
};

/**
 * Feature rows with class labels in [0, num_classes). The trainer never takes
 * this type for the target domain; it only receives `unlabeled()`.
 */
class LabeledDataset {
 public:
  LabeledDataset() = default;
  LabeledDataset(std::size_t dim, int num_classes, Split split = Split::kTrain)
      : features_(dim), num_classes_(num_classes), split_(split) {
    if (num_classes < 1) throw ConfigError("dataset needs at least one class");
  }

  std::size_t dim() const noexcept { return features_.dim(); }
  std::size_t rows() const noexcept { return features_.rows(); }
  bool empty() const noexcept { return features_.empty(); }
  int num_classes() const noexcept { return num_classes_; }
  Split split() const noexcept { return split_; }
  void set_split(Split s) noexcept { split_ = s; }

  std::span<const float> row(std::size_t i) const { return features_.row(i); }
  int label(std::size_t i) const { return labels_[i]; }
  const std::vector<int>& labels() const noexcept { return labels_; }

  const UnlabeledDataset& unlabeled() const noexcept { return features_; }
  UnlabeledDataset& mutable_features() noexcept { return features_; }

  void add_row(std::span<const float> v, int label) {
    if (label < 0 || label >= num_classes_) {
      throw DataError("label " + std::to_string(label) + " outside [0, " + std::to_string(num_classes_) + ")");
    }
    features_.add_row(v);
    labels_.push_back(label);
  }

  template <typename T>
  Matrix<T> gather(std::span<const std::size_t> indices) const {
    return features_.gather<T>(indices);
  }

  std::vector<int> gather_labels(std::span<const std::size_t> indices) const {
    std::vector<int> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(labels_[i]);
    return out;
  }

  friend bool operator==(const LabeledDataset& a, const LabeledDataset& b) {
    return a.features_ == b.features_ && a.labels_ == b.labels_ && a.num_classes_ == b.num_classes_;
  }

 private:
  UnlabeledDataset features_;
  std::vector<int> labels_;
  int num_classes_ = 0;
  Split split_ = Split::kTrain;
};

// ---------------------------------------------------------------------------
// Synthetic domain shift
// ---------------------------------------------------------------------------

struct SplitSizes {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
};

/**
 * Class-conditional Gaussian source domain plus a target domain obtained by
 * target = scale .* (A x) + translation + nuisance(label).
 *
 * A is either given explicitly or built from Givens rotations by
 * `rotation_deg` on the coordinate pairs (0,1), (2,3), ... (the first
 * `rotation_pairs` of them, or all when 0).
 *
 * The nuisance models a domain-specific confound: source rows carry a
 * label-dependent cue of size nuisance_strength * a_c along one random unit
 * direction inside the first `nuisance_dims` coordinates (a_c evenly spaced
 * over [-1, 1], random class order), and the target offset cancels it, so
 * target rows are the shifted draws without the cue.
 */
struct ShiftConfig {
  int num_classes = 8;
  std::size_t dim = 20;
  double class_separation = 3.0;  // expected norm of a class mean
  double within_class_std = 1.0;
  double rotation_deg = 30.0;
  std::size_t rotation_pairs = 0;
  std::optional<std::vector<std::vector<double>>> matrix;
  std::vector<double> scale;        // per-dimension; empty means all ones
  std::vector<double> translation;  // per-dimension; empty means zeros
  double nuisance_strength = 0.0;
  std::size_t nuisance_dims = 0;
  SplitSizes samples_per_class{100, 50, 100};
  std::uint64_t seed = 0;

  /// Fills defaulted vectors to length `dim`.
  void resolve() {
    if (scale.empty()) scale.assign(dim, 1.0);
    if (translation.empty()) translation.assign(dim, 0.0);
  }

  void validate() const;
  Matrix<double> shift_matrix() const;
};

namespace detail {

inline double determinant(Matrix<double> a) {
  const std::size_t n = a.rows();
  double det = 1.0;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(a(i, k)) > std::abs(a(piv, k))) piv = i;
    if (a(piv, k) == 0.0) return 0.0;
    if (piv != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a(k, j), a(piv, j));
      det = -det;
    }
    det *= a(k, k);
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = a(i, k) / a(k, k);
      for (std::size_t j = k; j < n; ++j) a(i, j) -= f * a(k, j);
    }
  }
  return det;
}

}  // namespace detail

inline Matrix<double> ShiftConfig::shift_matrix() const {
  if (matrix) {
    const auto& m = *matrix;
    if (m.size() != dim) throw ConfigError("shift matrix must have " + std::to_string(dim) + " rows");
    Matrix<double> a(dim, dim);
    for (std::size_t i = 0; i < dim; ++i) {
      if (m[i].size() != dim) throw ConfigError("shift matrix row " + std::to_string(i) + " has wrong length");
      for (std::size_t j = 0; j < dim; ++j) a(i, j) = m[i][j];
    }
    return a;
  }
  Matrix<double> a(dim, dim);
  for (std::size_t i = 0; i < dim; ++i) a(i, i) = 1.0;
  const std::size_t pairs = rotation_pairs == 0 ? dim / 2 : std::min(rotation_pairs, dim / 2);
  const double th = rotation_deg * std::numbers::pi / 180.0;
  for (std::size_t p = 0; p < pairs; ++p) {
    const std::size_t i = 2 * p;
    a(i, i) = std::cos(th);
    a(i, i + 1) = -std::sin(th);
    a(i + 1, i) = std::sin(th);
    a(i + 1, i + 1) = std::cos(th);
  }
  return a;
}

inline void ShiftConfig::validate() const {
  if (num_classes < 2) throw ConfigError("shift config: num_classes must be >= 2");
  if (dim == 0) throw ConfigError("shift config: dim must be positive");
  if (!(class_separation >= 0.0)) throw ConfigError("shift config: class_separation must be >= 0");
  if (!(within_class_std > 0.0)) throw ConfigError("shift config: within_class_std must be > 0");
  if (!(nuisance_strength >= 0.0)) throw ConfigError("shift config: nuisance_strength must be >= 0");
  if (nuisance_dims > dim) throw ConfigError("shift config: nuisance_dims exceeds dim");
  if (nuisance_strength > 0.0 && nuisance_dims == 0) {
    throw ConfigError("shift config: nuisance_strength > 0 requires nuisance_dims > 0");
  }
  if (!scale.empty() && scale.size() != dim) throw ConfigError("shift config: scale must have dim entries");
  if (!translation.empty() && translation.size() != dim) {
    throw ConfigError("shift config: translation must have dim entries");
  }
  for (double s : scale) {
    if (!std::isfinite(s) || s == 0.0) throw ConfigError("shift config: scale entries must be finite and nonzero");
  }
  if (samples_per_class.train == 0 || samples_per_class.val == 0 || samples_per_class.test == 0) {
    throw ConfigError("shift config: every split needs at least one sample per class");
  }
  const double det = detail::determinant(shift_matrix());
  if (!(std::abs(det) > 1e-6)) {
    throw ConfigError("shift config: shift matrix is singular (|det| = " + std::to_string(std::abs(det)) + ")");
  }
}

struct DomainSplits {
  LabeledDataset train;
  LabeledDataset val;
  LabeledDataset test;

  const LabeledDataset& get(Split s) const { return s == Split::kTrain ? train : s == Split::kVal ? val : test; }
  LabeledDataset& get(Split s) { return s == Split::kTrain ? train : s == Split::kVal ? val : test; }
};

struct SyntheticShift {
  DomainSplits source;
  DomainSplits target;  // labels exist for evaluation only
};

inline SyntheticShift generate_synthetic_shift(ShiftConfig cfg) {
  cfg.resolve();
  cfg.validate();
  const std::size_t d = cfg.dim;
  const std::size_t nd = cfg.nuisance_dims;
  const int m = cfg.num_classes;

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<std::vector<double>> means(m, std::vector<double>(d, 0.0));
  const double mean_scale = cfg.class_separation / std::sqrt(double(d));
  for (auto& mu : means)
    for (std::size_t j = 0; j < d; ++j) mu[j] = mean_scale * normal(rng);

  std::vector<std::vector<double>> cue(m, std::vector<double>(d, 0.0));
  if (nd > 0) {
    std::vector<double> u(nd);
    double norm = 0.0;
    for (auto& v : u) {
      v = normal(rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    std::vector<int> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (int c = 0; c < m; ++c) {
      const double a = m == 1 ? 0.0 : -1.0 + 2.0 * order[c] / double(m - 1);
      for (std::size_t j = 0; j < nd; ++j) cue[c][j] = cfg.nuisance_strength * a * u[j] / norm;
    }
  }

  const Matrix<double> a = cfg.shift_matrix();
  SyntheticShift out;
  const Split splits[] = {Split::kTrain, Split::kVal, Split::kTest};
  for (Split s : splits) {
    out.source.get(s) = LabeledDataset(d, m, s);
    out.target.get(s) = LabeledDataset(d, m, s);
  }

  std::vector<double> x(d);
  std::vector<float> row(d);
  auto draw = [&](int c) {
    for (std::size_t j = 0; j < d; ++j) x[j] = means[c][j] + cfg.within_class_std * normal(rng);
  };
  for (Split s : splits) {
    const std::size_t n = s == Split::kTrain ? cfg.samples_per_class.train
                          : s == Split::kVal ? cfg.samples_per_class.val
                                             : cfg.samples_per_class.test;
    // interleave classes so files are class-balanced at every prefix
    for (std::size_t k = 0; k < n; ++k) {
      for (int c = 0; c < m; ++c) {
        draw(c);
        for (std::size_t j = 0; j < d; ++j) row[j] = static_cast<float>(x[j] + cue[c][j]);
        out.source.get(s).add_row(row, c);
      }
      for (int c = 0; c < m; ++c) {
        draw(c);
        for (std::size_t i = 0; i < d; ++i) {
          double ax = 0.0;
          for (std::size_t j = 0; j < d; ++j) ax += a(i, j) * x[j];
          row[i] = static_cast<float>(cfg.scale[i] * ax + cfg.translation[i]);
        }
        out.target.get(s).add_row(row, c);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Per-domain normalization
// ---------------------------------------------------------------------------

inline constexpr double kStdFloor = 1e-8;

struct NormalizationStats {
  std::vector<double> mean;
  std::vector<double> std;
};

/// Per-dimension mean and (population) standard deviation, floored at kStdFloor.
inline NormalizationStats fit_normalization(const UnlabeledDataset& train) {
  if (train.empty()) throw DataError("fit_normalization: empty dataset");
  const std::size_t d = train.dim();
  const double n = static_cast<double>(train.rows());
  NormalizationStats s{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
  for (std::size_t i = 0; i < train.rows(); ++i)
    for (std::size_t j = 0; j < d; ++j) s.mean[j] += train.row(i)[j];
  for (double& v : s.mean) v /= n;
  for (std::size_t i = 0; i < train.rows(); ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double dv = train.row(i)[j] - s.mean[j];
      s.std[j] += dv * dv;
    }
  for (double& v : s.std) v = std::max(std::sqrt(v / n), kStdFloor);
  return s;
}

inline NormalizationStats fit_normalization(const LabeledDataset& train) {
  return fit_normalization(train.unlabeled());
}

inline UnlabeledDataset apply_normalization(const UnlabeledDataset& data, const NormalizationStats& s) {
  if (s.mean.size() != data.dim() || s.std.size() != data.dim()) {
    throw ShapeError("apply_normalization: stats for dim " + std::to_string(s.mean.size()) +
                     " applied to data of dim " + std::to_string(data.dim()));
  }
  UnlabeledDataset out(data.dim());
  std::vector<float> row(data.dim());
  for (std::size_t i = 0; i < data.rows(); ++i) {
    auto src = data.row(i);
    for (std::size_t j = 0; j < data.dim(); ++j) row[j] = static_cast<float>((src[j] - s.mean[j]) / s.std[j]);
    out.add_row(row);
  }
  return out;
}

inline LabeledDataset apply_normalization(const LabeledDataset& data, const NormalizationStats& s) {
  const UnlabeledDataset features = apply_normalization(data.unlabeled(), s);
  LabeledDataset out(data.dim(), data.num_classes(), data.split());
  for (std::size_t i = 0; i < data.rows(); ++i) out.add_row(features.row(i), data.label(i));
  return out;
}

/// Normalizes all splits of one domain with statistics fitted on its own train split.
inline DomainSplits normalize_domain(const DomainSplits& d) {
  const auto stats = fit_normalization(d.train);
  return {apply_normalization(d.train, stats), apply_normalization(d.val, stats),
          apply_normalization(d.test, stats)};
}

// ---------------------------------------------------------------------------
// CSV persistence
// ---------------------------------------------------------------------------

namespace detail {

inline std::string format_float(float v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      cells.push_back(line.substr(start));
      break;
    }
    cells.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return cells;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.remove_suffix(1);
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  return s;
}

}  // namespace detail

inline void write_csv(std::ostream& os, const UnlabeledDataset& data, const std::vector<int>* labels) {
  if (labels) os << "label,";
  for (std::size_t j = 0; j < data.dim(); ++j) os << (j ? "," : "") << 'f' << j;
  os << '\n';
  for (std::size_t i = 0; i < data.rows(); ++i) {
    if (labels) os << (*labels)[i] << ',';
    auto r = data.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) os << (j ? "," : "") << detail::format_float(r[j]);
    os << '\n';
  }
}

inline void save_dataset(const std::string& path, const LabeledDataset& data) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  write_csv(os, data.unlabeled(), &data.labels());
}

inline void save_dataset(const std::string& path, const UnlabeledDataset& data) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  write_csv(os, data, nullptr);
}

using AnyDataset = std::variant<LabeledDataset, UnlabeledDataset>;

/**
 * Parses a dataset CSV. A leading `label` column makes the result a
 * LabeledDataset; otherwise it is unlabeled. When `num_classes` is absent it is
 * inferred as max(label) + 1.
 */
inline AnyDataset read_csv(std::istream& is, std::optional<int> num_classes = std::nullopt,
                           Split split = Split::kTrain) {
  std::string line;
  if (!std::getline(is, line)) throw DataError("empty file, missing header", 1);
  const auto header = detail::split_csv(detail::trim(line));
  const bool labeled = !header.empty() && detail::trim(header[0]) == "label";
  const std::size_t first = labeled ? 1 : 0;
  if (header.size() <= first) throw DataError("header declares no feature columns", 1);
  for (std::size_t j = first; j < header.size(); ++j) {
    const std::string expect = "f" + std::to_string(j - first);
    if (detail::trim(header[j]) != expect) {
      throw DataError("malformed header: column " + std::to_string(j) + " is '" + std::string(header[j]) +
                          "', expected '" + expect + "'",
                      1);
    }
  }
  const std::size_t dim = header.size() - first;

  UnlabeledDataset features(dim);
  std::vector<int> labels;
  std::vector<float> row(dim);
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    const auto trimmed = detail::trim(line);
    if (trimmed.empty()) continue;
    const auto cells = detail::split_csv(trimmed);
    if (cells.size() != header.size()) {
      throw DataError("expected " + std::to_string(header.size()) + " cells, found " + std::to_string(cells.size()),
                      lineno);
    }
    if (labeled) {
      const auto cell = detail::trim(cells[0]);
      int lab = 0;
      auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), lab);
      if (ec != std::errc() || p != cell.data() + cell.size() || lab < 0) {
        throw DataError("invalid label '" + std::string(cell) + "'", lineno);
      }
      if (num_classes && lab >= *num_classes) {
        throw DataError("label " + std::to_string(lab) + " >= class count " + std::to_string(*num_classes), lineno);
      }
      labels.push_back(lab);
    }
    for (std::size_t j = 0; j < dim; ++j) {
      const auto cell = detail::trim(cells[first + j]);
      float v = 0;
      auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || p != cell.data() + cell.size()) {
        throw DataError("non-numeric cell '" + std::string(cell) + "' in column f" + std::to_string(j), lineno);
      }
      if (!std::isfinite(v)) {
        throw DataError("non-finite value '" + std::string(cell) + "' in column f" + std::to_string(j), lineno);
      }
      row[j] = v;
    }
    features.add_row(row);
  }
  if (features.empty()) throw DataError("dataset has no rows", lineno);
  if (!labeled) return features;

  int m = num_classes.value_or(*std::max_element(labels.begin(), labels.end()) + 1);
  LabeledDataset out(dim, m, split);
  for (std::size_t i = 0; i < features.rows(); ++i) out.add_row(features.row(i), labels[i]);
  return out;
}

inline AnyDataset load_dataset(const std::string& path, std::optional<int> num_classes = std::nullopt,
                               Split split = Split::kTrain) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open '" + path + "'");
  return read_csv(is, num_classes, split);
}

inline LabeledDataset load_labeled(const std::string& path, std::optional<int> num_classes = std::nullopt,
                                   Split split = Split::kTrain) {
  auto any = load_dataset(path, num_classes, split);
  if (auto* l = std::get_if<LabeledDataset>(&any)) return std::move(*l);
  throw DataError("'" + path + "' has no label column");
}

/// Loads either schema and returns the feature rows only.
inline UnlabeledDataset load_unlabeled(const std::string& path) {
  auto any = load_dataset(path);
  if (auto* l = std::get_if<LabeledDataset>(&any)) return l->unlabeled();
  return std::get<UnlabeledDataset>(std::move(any));
}

}  // namespace barlow

#endif  // BARLOW_DATA_HPP_
