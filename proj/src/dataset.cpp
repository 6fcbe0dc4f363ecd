#include "heckmi/dataset.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "heckmi/errors.hpp"

namespace heckmi {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::string quote_if_needed(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

double parse_number(const std::string& s) {
  const std::string t = trim(s);
  if (t.empty()) return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  const char* first = t.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size()) return std::numeric_limits<double>::quiet_NaN();
  return v;
}

}  // namespace

bool is_missing_token(const std::string& s) {
  const std::string t = trim(s);
  return t.empty() || t == "NA";
}

std::string format_double(double v) {
  if (std::isnan(v)) return "NA";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

TabularDataset TabularDataset::read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open data file '" + path + "'");
  return parse_csv(in);
}

TabularDataset TabularDataset::parse_csv(std::istream& in) {
  TabularDataset ds;
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("CSV input is empty");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  for (auto& name : split_csv_line(line)) ds.names_.push_back(trim(name));
  for (std::size_t i = 0; i < ds.names_.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (ds.names_[i] == ds.names_[j]) throw ValidationError("duplicate CSV column '" + ds.names_[i] + "'");
  const std::size_t nc = ds.names_.size();
  ds.text_.resize(nc);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != nc)
      throw ValidationError("CSV line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                            " fields, expected " + std::to_string(nc));
    for (std::size_t c = 0; c < nc; ++c) ds.text_[c].push_back(std::move(cells[c]));
    ++ds.n_rows_;
  }
  ds.values_.resize(nc);
  ds.missing_.resize(nc);
  for (std::size_t c = 0; c < nc; ++c) {
    ds.values_[c].resize(ds.n_rows_);
    ds.missing_[c].resize(ds.n_rows_);
    for (std::size_t r = 0; r < ds.n_rows_; ++r) {
      ds.missing_[c][r] = is_missing_token(ds.text_[c][r]) ? 1 : 0;
      ds.values_[c][r] = ds.missing_[c][r] ? std::numeric_limits<double>::quiet_NaN() : parse_number(ds.text_[c][r]);
    }
  }
  return ds;
}

TabularDataset TabularDataset::from_columns(std::vector<std::string> names,
                                            const std::vector<std::vector<double>>& columns) {
  if (names.size() != columns.size()) throw ContractViolation("from_columns: names/columns mismatch");
  TabularDataset ds;
  ds.names_ = std::move(names);
  ds.n_rows_ = columns.empty() ? 0 : columns.front().size();
  for (const auto& col : columns) {
    if (col.size() != ds.n_rows_) throw ContractViolation("from_columns: ragged columns");
    std::vector<std::string> text;
    std::vector<char> miss;
    text.reserve(col.size());
    for (double v : col) {
      text.push_back(std::isnan(v) ? std::string() : format_double(v));
      miss.push_back(std::isnan(v) ? 1 : 0);
    }
    ds.text_.push_back(std::move(text));
    ds.values_.push_back(col);
    ds.missing_.push_back(std::move(miss));
  }
  return ds;
}

void TabularDataset::write_csv(std::ostream& out) const {
  for (std::size_t c = 0; c < names_.size(); ++c) out << (c ? "," : "") << quote_if_needed(names_[c]);
  out << '\n';
  for (std::size_t r = 0; r < n_rows_; ++r) {
    for (std::size_t c = 0; c < names_.size(); ++c) out << (c ? "," : "") << quote_if_needed(text_[c][r]);
    out << '\n';
  }
}

void TabularDataset::write_csv(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  write_csv(out);
}

bool TabularDataset::has_column(const std::string& name) const {
  for (const auto& n : names_)
    if (n == name) return true;
  return false;
}

std::size_t TabularDataset::column_index(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return i;
  throw ValidationError("column '" + name + "' not found");
}

std::size_t TabularDataset::missing_count(std::size_t col) const {
  std::size_t n = 0;
  for (char m : missing_[col]) n += m ? 1 : 0;
  return n;
}

void TabularDataset::set_value(std::size_t col, std::size_t row, double value) {
  set_cell(col, row, format_double(value), value);
}

void TabularDataset::set_cell(std::size_t col, std::size_t row, std::string text, double value) {
  text_[col][row] = std::move(text);
  values_[col][row] = value;
  missing_[col][row] = std::isnan(value) ? 1 : 0;
}

void TabularDataset::set_numeric_view(std::size_t col, std::vector<double> values) {
  if (values.size() != n_rows_) throw ContractViolation("set_numeric_view: size mismatch");
  values_[col] = std::move(values);
}

TabularDataset TabularDataset::filter_rows(const std::vector<char>& keep) const {
  TabularDataset ds;
  ds.names_ = names_;
  ds.text_.resize(n_cols());
  ds.values_.resize(n_cols());
  ds.missing_.resize(n_cols());
  for (std::size_t r = 0; r < n_rows_; ++r) {
    if (!keep[r]) continue;
    for (std::size_t c = 0; c < n_cols(); ++c) {
      ds.text_[c].push_back(text_[c][r]);
      ds.values_[c].push_back(values_[c][r]);
      ds.missing_[c].push_back(missing_[c][r]);
    }
    ++ds.n_rows_;
  }
  return ds;
}

}  // namespace heckmi
