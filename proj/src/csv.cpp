#include "bdh/csv.hpp"

#include <cmath>
#include <cstdio>

namespace bdh {

CsvWriter::CsvWriter(const std::string& path, std::vector<std::string> header)
    : path_(path), columns_(header.size()), out_(path, std::ios::trunc) {
  if (!out_) throw std::runtime_error(path + ": cannot open for writing");
  std::vector<std::string> quoted;
  for (const auto& h : header) quoted.push_back(field(h));
  columns_ = quoted.size();
  row(quoted);
}

void CsvWriter::row(const std::vector<std::string>& fields) {
  if (fields.size() != columns_) throw std::logic_error(path_ + ": row has the wrong number of columns");
  for (std::size_t i = 0; i < fields.size(); ++i) out_ << (i ? "," : "") << fields[i];
  out_ << '\n';
  out_.flush();
  if (!out_) throw std::runtime_error(path_ + ": write failed");
}

std::string CsvWriter::field(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  // %.17g round-trips doubles and is locale-independent for the C locale.
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string CsvWriter::field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

namespace {

std::vector<std::string> metrics_header(std::size_t layers) {
  std::vector<std::string> h{"step", "loss", "lr", "grad_norm"};
  for (std::size_t l = 0; l < layers; ++l) h.push_back("sparsity_l" + std::to_string(l));
  return h;
}

}  // namespace

MetricsCsv::MetricsCsv(const std::string& path, std::size_t layers)
    : layers_(layers), csv_(path, metrics_header(layers)) {}

void MetricsCsv::write(const StepMetrics& m) {
  std::vector<std::string> f{std::to_string(m.step), CsvWriter::field(m.loss), CsvWriter::field(m.lr),
                             CsvWriter::field(m.grad_norm)};
  for (std::size_t l = 0; l < layers_; ++l) f.push_back(l < m.sparsity.size() ? CsvWriter::field(m.sparsity[l]) : "");
  csv_.row(f);
}

}  // namespace bdh
