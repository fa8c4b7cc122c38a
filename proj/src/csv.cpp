#include "cistonet/csv.hpp"

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace cistonet {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << content;
  if (!out) throw IoError("write failed for " + path);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  cells.push_back(cur);
  return cells;
}

double parse_cell(const std::string& s, const std::string& context) {
  if (s.empty()) throw IoError("missing cell in " + context);
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || errno == ERANGE)
    throw IoError("non-numeric cell '" + s + "' in " + context);
  if (!std::isfinite(v))
    throw IoError("non-finite cell '" + s + "' in " + context);
  return v;
}

}  // namespace

std::string dataset_to_csv(const Dataset& data) {
  std::ostringstream os;
  for (int j = 0; j < data.d_a(); ++j) os << (j ? "," : "") << "a_" << j + 1;
  for (int j = 0; j < data.d_y(); ++j) os << ",y_" << j + 1;
  for (int j = 0; j < data.d_x(); ++j) os << ",x_" << j + 1;
  os << '\n';
  for (int i = 0; i < data.n(); ++i) {
    for (int j = 0; j < data.d_a(); ++j)
      os << (j ? "," : "") << format_double(data.a(i, j));
    for (int j = 0; j < data.d_y(); ++j) os << ',' << format_double(data.y(i, j));
    for (int j = 0; j < data.d_x(); ++j) os << ',' << format_double((*data.x)(i, j));
    os << '\n';
  }
  return os.str();
}

void write_dataset_csv(const std::string& path, const Dataset& data) {
  write_file(path, dataset_to_csv(data));
}

std::string truth_to_csv(const DatasetTruth& truth) {
  std::ostringstream os;
  const bool has_cate = truth.cate.size() > 0;
  if (has_cate) os << "cate";
  for (Eigen::Index j = 0; j < truth.z.cols(); ++j)
    os << (has_cate || j ? "," : "") << "true_z_" << j + 1;
  os << '\n';
  const Eigen::Index n = has_cate ? truth.cate.size() : truth.z.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (has_cate) os << format_double(truth.cate[i]);
    for (Eigen::Index j = 0; j < truth.z.cols(); ++j)
      os << (has_cate || j ? "," : "") << format_double(truth.z(i, j));
    os << '\n';
  }
  return os.str();
}

void write_truth_csv(const std::string& path, const DatasetTruth& truth) {
  write_file(path, truth_to_csv(truth));
}

Dataset load_dataset_csv(const std::string& path, const CsvSchema& schema) {
  std::istringstream in(read_file(path));
  std::string line;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    header = split_csv_line(line);
    break;
  }
  if (header.empty()) throw IoError(path + ": empty file or missing header");

  auto role_of = [&](const std::string& name) -> int {
    auto in_list = [&](const std::vector<std::string>& v) {
      for (const auto& s : v)
        if (s == name) return true;
      return false;
    };
    const bool explicit_schema = !schema.treatment_cols.empty() ||
                                 !schema.outcome_cols.empty() ||
                                 !schema.proxy_cols.empty();
    if (explicit_schema) {
      if (in_list(schema.treatment_cols)) return 0;
      if (in_list(schema.outcome_cols)) return 1;
      if (in_list(schema.proxy_cols)) return 2;
      return -1;
    }
    if (name.rfind("a_", 0) == 0) return 0;
    if (name.rfind("y_", 0) == 0) return 1;
    if (name.rfind("x_", 0) == 0) return 2;
    return -1;
  };

  std::vector<int> roles(header.size());
  int d_a = 0, d_y = 0, d_x = 0;
  for (std::size_t c = 0; c < header.size(); ++c) {
    roles[c] = role_of(header[c]);
    if (roles[c] < 0)
      throw IoError(path + ": column '" + header[c] + "' has no declared role");
    (roles[c] == 0 ? d_a : roles[c] == 1 ? d_y : d_x)++;
  }
  if (d_a == 0) throw IoError(path + ": no treatment column");
  if (d_y == 0) throw IoError(path + ": no outcome column");

  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw IoError(path + ": ragged row at line " + std::to_string(line_no));
    std::vector<double> vals(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c)
      vals[c] = parse_cell(cells[c], path + ":" + std::to_string(line_no));
    rows.push_back(std::move(vals));
  }
  if (rows.empty()) throw IoError(path + ": no data rows");

  Dataset data;
  const auto n = static_cast<Eigen::Index>(rows.size());
  data.a.resize(n, d_a);
  data.y.resize(n, d_y);
  if (d_x > 0) data.x = Matrix(n, d_x);
  for (Eigen::Index i = 0; i < n; ++i) {
    int ia = 0, iy = 0, ix = 0;
    for (std::size_t c = 0; c < header.size(); ++c) {
      const double v = rows[static_cast<std::size_t>(i)][c];
      if (roles[c] == 0)
        data.a(i, ia++) = v;
      else if (roles[c] == 1)
        data.y(i, iy++) = v;
      else
        (*data.x)(i, ix++) = v;
    }
  }
  return data;
}

void write_table_csv(const std::string& path, const std::string& manifest,
                     const std::vector<std::string>& header,
                     const std::vector<std::vector<std::string>>& rows) {
  std::ostringstream os;
  if (!manifest.empty()) os << "# " << manifest << '\n';
  for (std::size_t c = 0; c < header.size(); ++c)
    os << (c ? "," : "") << header[c];
  os << '\n';
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) os << (c ? "," : "") << row[c];
    os << '\n';
  }
  write_file(path, os.str());
}

}  // namespace cistonet
