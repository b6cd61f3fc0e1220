#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

namespace recad {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// T x d observations with optional per-step anomaly marks. Immutable once
// constructed; the constructor enforces every invariant.
class MultivariateSeries {
 public:
  explicit MultivariateSeries(Matrix values, std::optional<std::vector<bool>> labels = std::nullopt,
                              std::vector<std::string> dim_names = {});

  std::size_t steps() const { return static_cast<std::size_t>(values_.rows()); }
  std::size_t dims() const { return static_cast<std::size_t>(values_.cols()); }
  const Matrix& values() const { return values_; }
  bool has_labels() const { return labels_.has_value(); }
  const std::vector<bool>& labels() const;
  const std::vector<std::string>& dim_names() const { return dim_names_; }

  // Rows [begin, end) as a new series, labels sliced alongside.
  MultivariateSeries slice(std::size_t begin, std::size_t end) const;
  MultivariateSeries with_labels(std::vector<bool> labels) const;

 private:
  Matrix values_;
  std::optional<std::vector<bool>> labels_;
  std::vector<std::string> dim_names_;
};

// W_t = (x_{t-K+1}, ..., x_t), identified by its last step t.
struct Window {
  Matrix values;
  std::size_t end_index = 0;
};

struct StandardizationStats {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd std;

  std::size_t dims() const { return static_cast<std::size_t>(mean.size()); }
};

// Exactly T-K+1 windows; window i ends at K-1+i.
std::vector<Window> sliding_windows(const MultivariateSeries& series, std::size_t K);

// Population mean and standard deviation per column.
StandardizationStats fit_standardizer(const MultivariateSeries& series);
MultivariateSeries apply_standardizer(const MultivariateSeries& series, const StandardizationStats& stats);
MultivariateSeries invert_standardizer(const MultivariateSeries& series, const StandardizationStats& stats);
Matrix apply_standardizer(const Matrix& values, const StandardizationStats& stats);
Matrix invert_standardizer(const Matrix& values, const StandardizationStats& stats);

nlohmann::json to_json(const StandardizationStats& stats);
StandardizationStats stats_from_json(const nlohmann::json& j);

// CSV: header of dimension names, one row per step, optional trailing
// `label` column holding 0/1.
MultivariateSeries read_series_csv(const std::filesystem::path& path);
void write_series_csv(const std::filesystem::path& path, const MultivariateSeries& series);
// Plain numeric matrix with a header; used for exogenous traces and rollouts.
void write_matrix_csv(const std::filesystem::path& path, const Matrix& values,
                      const std::vector<std::string>& header);

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace recad
