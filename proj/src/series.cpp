#include "recad/series.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "recad/errors.hpp"

namespace recad {

MultivariateSeries::MultivariateSeries(Matrix values, std::optional<std::vector<bool>> labels,
                                       std::vector<std::string> dim_names)
    : values_(std::move(values)), labels_(std::move(labels)), dim_names_(std::move(dim_names)) {
  if (values_.rows() < 1 || values_.cols() < 1) throw EmptyInput("a series needs T >= 1 and d >= 1");
  if (!values_.allFinite()) throw InvalidArgument("series contains non-finite values");
  if (labels_ && labels_->size() != steps()) {
    throw DimensionMismatch("labels have length " + std::to_string(labels_->size()) + ", series has " +
                            std::to_string(steps()) + " steps");
  }
  if (!dim_names_.empty() && dim_names_.size() != dims())
    throw DimensionMismatch("dim_names length does not match d");
}

const std::vector<bool>& MultivariateSeries::labels() const {
  if (!labels_) throw InvalidArgument("series has no labels");
  return *labels_;
}

MultivariateSeries MultivariateSeries::slice(std::size_t begin, std::size_t end) const {
  if (begin >= end || end > steps()) throw InvalidArgument("bad slice bounds");
  std::optional<std::vector<bool>> labels;
  if (labels_) labels = std::vector<bool>(labels_->begin() + begin, labels_->begin() + end);
  return MultivariateSeries(values_.middleRows(begin, end - begin), std::move(labels), dim_names_);
}

MultivariateSeries MultivariateSeries::with_labels(std::vector<bool> labels) const {
  return MultivariateSeries(values_, std::move(labels), dim_names_);
}

std::vector<Window> sliding_windows(const MultivariateSeries& series, std::size_t K) {
  if (K < 2) throw InvalidArgument("window length must be at least 2");
  if (series.steps() < K) {
    throw EmptyInput("series has " + std::to_string(series.steps()) + " steps, window needs " +
                     std::to_string(K));
  }
  std::vector<Window> out;
  out.reserve(series.steps() - K + 1);
  for (std::size_t end = K - 1; end < series.steps(); ++end) {
    out.push_back(Window{series.values().middleRows(end + 1 - K, K), end});
  }
  return out;
}

StandardizationStats fit_standardizer(const MultivariateSeries& series) {
  if (series.steps() < 2) throw EmptyInput("standardization needs at least two steps");
  const Matrix& x = series.values();
  StandardizationStats stats;
  stats.mean = x.colwise().mean();
  stats.std.resize(x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double var = (x.col(j).array() - stats.mean(j)).square().mean();
    const double sd = std::sqrt(var);
    if (!(sd > 1e-12 * std::max(1.0, std::abs(stats.mean(j))))) {
      const auto& names = series.dim_names();
      throw DegenerateDimension(static_cast<std::size_t>(j), names.empty() ? "" : names[j]);
    }
    stats.std(j) = sd;
  }
  return stats;
}

namespace {

void check_stats(const StandardizationStats& stats, Eigen::Index d) {
  if (stats.mean.size() != d || stats.std.size() != d) {
    throw DimensionMismatch("standardization stats have " + std::to_string(stats.mean.size()) +
                            " dims, data has " + std::to_string(d));
  }
  if ((stats.std.array() <= 0.0).any()) throw InvalidArgument("standardization std must be positive");
}

}  // namespace

Matrix apply_standardizer(const Matrix& values, const StandardizationStats& stats) {
  check_stats(stats, values.cols());
  return ((values.rowwise() - stats.mean).array().rowwise() / stats.std.array()).matrix();
}

Matrix invert_standardizer(const Matrix& values, const StandardizationStats& stats) {
  check_stats(stats, values.cols());
  return ((values.array().rowwise() * stats.std.array()).matrix().rowwise() + stats.mean);
}

MultivariateSeries apply_standardizer(const MultivariateSeries& series, const StandardizationStats& stats) {
  std::optional<std::vector<bool>> labels;
  if (series.has_labels()) labels = series.labels();
  return MultivariateSeries(apply_standardizer(series.values(), stats), std::move(labels), series.dim_names());
}

MultivariateSeries invert_standardizer(const MultivariateSeries& series, const StandardizationStats& stats) {
  std::optional<std::vector<bool>> labels;
  if (series.has_labels()) labels = series.labels();
  return MultivariateSeries(invert_standardizer(series.values(), stats), std::move(labels),
                            series.dim_names());
}

nlohmann::json to_json(const StandardizationStats& stats) {
  return {{"schema", 1},
          {"mean", std::vector<double>(stats.mean.data(), stats.mean.data() + stats.mean.size())},
          {"std", std::vector<double>(stats.std.data(), stats.std.data() + stats.std.size())}};
}

StandardizationStats stats_from_json(const nlohmann::json& j) {
  if (j.value("schema", 0) != 1) throw FormatError("unsupported standardization schema");
  const auto mean = j.at("mean").get<std::vector<double>>();
  const auto sd = j.at("std").get<std::vector<double>>();
  if (mean.size() != sd.size() || mean.empty()) throw FormatError("mean/std length mismatch");
  StandardizationStats stats;
  stats.mean = Eigen::Map<const Eigen::RowVectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
  stats.std = Eigen::Map<const Eigen::RowVectorXd>(sd.data(), static_cast<Eigen::Index>(sd.size()));
  check_stats(stats, stats.mean.size());
  return stats;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    std::size_t start = 0;
    while (start < cell.size() && cell[start] == ' ') ++start;
    out.push_back(cell.substr(start));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_cell(const std::string& cell, std::size_t line_no) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(cell, &used);
  } catch (const std::exception&) {
    throw FormatError("line " + std::to_string(line_no) + ": '" + cell + "' is not a number");
  }
  if (used != cell.size()) throw FormatError("line " + std::to_string(line_no) + ": trailing characters in '" + cell + "'");
  return v;
}

}  // namespace

MultivariateSeries read_series_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw EmptyInput(path.string() + " is empty");
  std::vector<std::string> header = split_csv_line(line);
  const bool has_label = !header.empty() && header.back() == "label";
  if (has_label) header.pop_back();
  const std::size_t d = header.size();
  if (d == 0) throw FormatError("CSV header names no dimensions");

  std::vector<double> data;
  std::vector<bool> labels;
  std::size_t line_no = 1;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto cells = split_csv_line(line);
    if (cells.size() != d + (has_label ? 1 : 0)) {
      throw FormatError("line " + std::to_string(line_no) + ": expected " +
                        std::to_string(d + (has_label ? 1 : 0)) + " fields, got " + std::to_string(cells.size()));
    }
    for (std::size_t j = 0; j < d; ++j) data.push_back(parse_cell(cells[j], line_no));
    if (has_label) {
      if (cells[d] != "0" && cells[d] != "1") throw FormatError("line " + std::to_string(line_no) + ": label must be 0 or 1");
      labels.push_back(cells[d] == "1");
    }
    ++rows;
  }
  if (rows == 0) throw EmptyInput(path.string() + " has no data rows");
  Matrix values(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(d));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) values(r, j) = data[r * d + j];
  std::optional<std::vector<bool>> lab;
  if (has_label) lab = std::move(labels);
  return MultivariateSeries(std::move(values), std::move(lab), std::move(header));
}

namespace {

std::vector<std::string> default_names(std::size_t d) {
  std::vector<std::string> names;
  for (std::size_t j = 0; j < d; ++j) names.push_back("x" + std::to_string(j + 1));
  return names;
}

}  // namespace

void write_series_csv(const std::filesystem::path& path, const MultivariateSeries& series) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  const auto names = series.dim_names().empty() ? default_names(series.dims()) : series.dim_names();
  for (std::size_t j = 0; j < names.size(); ++j) out << (j ? "," : "") << names[j];
  if (series.has_labels()) out << ",label";
  out << '\n' << std::setprecision(17);
  const Matrix& x = series.values();
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) out << (j ? "," : "") << x(r, j);
    if (series.has_labels()) out << ',' << (series.labels()[r] ? 1 : 0);
    out << '\n';
  }
}

void write_matrix_csv(const std::filesystem::path& path, const Matrix& values,
                      const std::vector<std::string>& header) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  const auto names = header.empty() ? default_names(static_cast<std::size_t>(values.cols())) : header;
  for (std::size_t j = 0; j < names.size(); ++j) out << (j ? "," : "") << names[j];
  out << '\n' << std::setprecision(17);
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    for (Eigen::Index j = 0; j < values.cols(); ++j) out << (j ? "," : "") << values(r, j);
    out << '\n';
  }
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace recad
