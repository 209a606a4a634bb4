#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "bdh/training.hpp"

namespace bdh {

// Header row, comma separator, '.' decimal point, fields quoted only when needed.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, std::vector<std::string> header);
  void row(const std::vector<std::string>& fields);
  static std::string field(double v);
  static std::string field(const std::string& s);

 private:
  std::string path_;
  std::size_t columns_;
  std::ofstream out_;
};

// step,loss,lr,grad_norm,sparsity_l0..sparsity_l{L-1}; sparsity cells are empty on unsampled steps.
class MetricsCsv {
 public:
  MetricsCsv(const std::string& path, std::size_t layers);
  void write(const StepMetrics& m);

 private:
  std::size_t layers_;
  CsvWriter csv_;
};

}  // namespace bdh
