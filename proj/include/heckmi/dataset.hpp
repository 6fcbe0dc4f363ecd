#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace heckmi {

/// Column-named table read from CSV. Every cell keeps its original text so
/// untouched cells are written back byte-for-byte; numeric views use NaN for
/// missing (empty or "NA") and non-numeric cells.
class TabularDataset {
 public:
  TabularDataset() = default;

  static TabularDataset read_csv(const std::string& path);
  static TabularDataset parse_csv(std::istream& in);
  /// Numeric columns; NaN becomes a missing cell.
  static TabularDataset from_columns(std::vector<std::string> names,
                                     const std::vector<std::vector<double>>& columns);

  void write_csv(std::ostream& out) const;
  void write_csv(const std::string& path) const;

  std::size_t n_rows() const { return n_rows_; }
  std::size_t n_cols() const { return names_.size(); }
  const std::vector<std::string>& column_names() const { return names_; }
  bool has_column(const std::string& name) const;
  /// Throws ValidationError naming the column when absent.
  std::size_t column_index(const std::string& name) const;

  const std::vector<double>& values(std::size_t col) const { return values_[col]; }
  const std::vector<double>& values(const std::string& name) const { return values_[column_index(name)]; }
  const std::string& text(std::size_t col, std::size_t row) const { return text_[col][row]; }
  bool is_missing(std::size_t col, std::size_t row) const { return missing_[col][row] != 0; }
  std::size_t missing_count(std::size_t col) const;

  /// Replaces a cell with a numeric value (shortest round-trip text).
  void set_value(std::size_t col, std::size_t row, double value);
  /// Replaces a cell with explicit text and numeric value.
  void set_cell(std::size_t col, std::size_t row, std::string text, double value);
  /// Overrides the numeric view of a column without touching its text
  /// (used for recoded binary columns).
  void set_numeric_view(std::size_t col, std::vector<double> values);

  /// Rows for which `keep[row]` is true.
  TabularDataset filter_rows(const std::vector<char>& keep) const;

 private:
  std::vector<std::string> names_;
  std::vector<std::vector<std::string>> text_;
  std::vector<std::vector<double>> values_;
  std::vector<std::vector<char>> missing_;
  std::size_t n_rows_ = 0;
};

std::string format_double(double v);
bool is_missing_token(const std::string& s);

}  // namespace heckmi
