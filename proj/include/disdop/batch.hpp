#pragma once

#include <charconv>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "disdop/dsdp.hpp"
#include "disdop/errors.hpp"
#include "disdop/matrix.hpp"
#include "disdop/relational.hpp"

namespace disdop::batch {

namespace detail {

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  for (std::size_t k = 0; k <= line.size(); ++k) {
    if (k == line.size() || line[k] == '\t') {
      fields.push_back(line.substr(start, k - start));
      start = k + 1;
    }
  }
  return fields;
}

inline std::size_t parse_row(std::string_view field, const std::string& path) {
  std::size_t out = 0;
  const char* end = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(field.data(), end, out);
  if (ec != std::errc{} || ptr != end)
    throw IoFailure(path + ": bad row index '" + std::string(field) + "'");
  return out;
}

inline void check_identifier(std::string_view id, const std::string& what) {
  if (id.find('\t') != std::string_view::npos ||
      id.find('\n') != std::string_view::npos ||
      id.find('\r') != std::string_view::npos)
    throw IoFailure(what + " contains tab or newline");
}

inline Matrix field_matrix(std::span<const relational::Instance> batch,
                           Vector relational::Instance::* member,
                           std::size_t d) {
  Matrix m(batch.size(), d);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Vector& v = batch[i].*member;
    for (std::size_t k = 0; k < d; ++k) m(i, k) = v[k];
  }
  return m;
}

}  // namespace detail

/// Writes a batch as a directory: four N x D tensors (f_v.dsdp, f_g.dsdp,
/// t.dsdp, f_c.dsdp) plus instances.tsv with one `row<TAB>image_id<TAB>
/// category_id` line per instance.
inline void save_instance_batch(const std::string& dir,
                                std::span<const relational::Instance> batch) {
  if (batch.empty()) throw EmptyBatch();
  const std::size_t d = relational::detail::common_dim(batch);

  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoFailure("cannot create directory: " + dir);

  using relational::Instance;
  save_tensor(dir + "/f_v.dsdp",
              Tensor::from_matrix(detail::field_matrix(batch, &Instance::f_v, d)));
  save_tensor(dir + "/f_g.dsdp",
              Tensor::from_matrix(detail::field_matrix(batch, &Instance::f_g, d)));
  save_tensor(dir + "/t.dsdp",
              Tensor::from_matrix(detail::field_matrix(batch, &Instance::t, d)));
  save_tensor(dir + "/f_c.dsdp",
              Tensor::from_matrix(detail::field_matrix(batch, &Instance::f_c, d)));

  const std::string path = dir + "/instances.tsv";
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoFailure("cannot open for writing: " + path);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    detail::check_identifier(batch[i].image_id, "image_id");
    detail::check_identifier(batch[i].category_id, "category_id");
    out << i << '\t' << batch[i].image_id << '\t' << batch[i].category_id
        << '\n';
  }
  if (!out.flush()) throw IoFailure("write failed: " + path);
}

inline std::vector<relational::Instance> load_instance_batch(
    const std::string& dir) {
  const Matrix f_v = load_tensor(dir + "/f_v.dsdp").to_matrix();
  const Matrix f_g = load_tensor(dir + "/f_g.dsdp").to_matrix();
  const Matrix t = load_tensor(dir + "/t.dsdp").to_matrix();
  const Matrix f_c = load_tensor(dir + "/f_c.dsdp").to_matrix();
  const std::size_t n = f_v.rows();
  const std::size_t d = f_v.cols();
  for (const Matrix* m : {&f_g, &t, &f_c}) {
    if (m->rows() != n || m->cols() != d)
      throw DimensionMismatch("batch tensors disagree on shape");
  }
  if (n == 0) throw EmptyBatch();

  std::vector<relational::Instance> batch(n);
  for (std::size_t i = 0; i < n; ++i) {
    batch[i].f_v.assign(f_v.row(i).begin(), f_v.row(i).end());
    batch[i].f_g.assign(f_g.row(i).begin(), f_g.row(i).end());
    batch[i].t.assign(t.row(i).begin(), t.row(i).end());
    batch[i].f_c.assign(f_c.row(i).begin(), f_c.row(i).end());
  }

  const std::string path = dir + "/instances.tsv";
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open: " + path);
  std::vector<bool> seen(n, false);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = detail::split_tabs(line);
    if (fields.size() != 3)
      throw IoFailure(path + ": expected 3 tab-separated fields");
    const std::size_t row = detail::parse_row(fields[0], path);
    if (row >= n) throw IoFailure(path + ": row index out of range");
    if (seen[row]) throw IoFailure(path + ": duplicate row index");
    seen[row] = true;
    batch[row].image_id = std::string(fields[1]);
    batch[row].category_id = std::string(fields[2]);
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!seen[i])
      throw IoFailure(path + ": missing entry for row " + std::to_string(i));
  }
  return batch;
}

struct LabelTable {
  std::vector<int> labels;
  std::vector<std::size_t> outlier_rows;
};

/// One `row<TAB>cluster<TAB>outlier01` line per row, rows in order.
inline void save_labels(const std::string& path, std::span<const int> labels,
                        std::span<const std::size_t> outlier_rows) {
  std::vector<bool> is_outlier(labels.size(), false);
  for (std::size_t r : outlier_rows) {
    if (r >= labels.size())
      throw DimensionMismatch("outlier row index out of range");
    is_outlier[r] = true;
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoFailure("cannot open for writing: " + path);
  for (std::size_t i = 0; i < labels.size(); ++i)
    out << i << '\t' << labels[i] << '\t' << (is_outlier[i] ? 1 : 0) << '\n';
  if (!out.flush()) throw IoFailure("write failed: " + path);
}

inline LabelTable load_labels(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open: " + path);
  LabelTable table;
  std::string line;
  std::size_t expect = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = detail::split_tabs(line);
    if (fields.size() != 3)
      throw IoFailure(path + ": expected 3 tab-separated fields");
    const std::size_t row = detail::parse_row(fields[0], path);
    if (row != expect) throw IoFailure(path + ": rows must appear in order");
    int label = 0;
    {
      const auto f = fields[1];
      const char* end = f.data() + f.size();
      const auto [ptr, ec] = std::from_chars(f.data(), end, label);
      if (ec != std::errc{} || ptr != end)
        throw IoFailure(path + ": bad cluster label '" + std::string(f) + "'");
    }
    if (fields[2] != "0" && fields[2] != "1")
      throw IoFailure(path + ": outlier flag must be 0 or 1");
    table.labels.push_back(label);
    if (fields[2] == "1") table.outlier_rows.push_back(row);
    ++expect;
  }
  return table;
}

}  // namespace disdop::batch
