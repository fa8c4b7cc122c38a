#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cistonet/stonet.hpp"

namespace cistonet {

// Column roles for loading external datasets. Empty lists mean "match by
// header prefix" (a_* treatment, y_* outcome, x_* proxy).
struct CsvSchema {
  std::vector<std::string> treatment_cols;
  std::vector<std::string> outcome_cols;
  std::vector<std::string> proxy_cols;
};

// Header row a_1..a_dA,y_1..y_dY[,x_1..x_dX]; values printed with 17
// significant digits so a load() round-trips bit-identically.
std::string dataset_to_csv(const Dataset& data);
void write_dataset_csv(const std::string& path, const Dataset& data);

// Sibling truth file: [cate,]true_z_1..true_z_dz
std::string truth_to_csv(const DatasetTruth& truth);
void write_truth_csv(const std::string& path, const DatasetTruth& truth);

// Strict parse: every column must have a declared role, cells must be finite
// numerals, rows must be rectangular. Lines starting with '#' are skipped.
Dataset load_dataset_csv(const std::string& path, const CsvSchema& schema = {});

// Generic table writer for metrics/results. `manifest` becomes a leading
// "# ..." comment line when non-empty.
void write_table_csv(const std::string& path, const std::string& manifest,
                     const std::vector<std::string>& header,
                     const std::vector<std::vector<std::string>>& rows);

std::string format_double(double v);  // %.17g
std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

}  // namespace cistonet
