#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "solarmlr/error.hpp"
#include "solarmlr/opcount.hpp"

namespace solarmlr {

using NodeId = std::uint32_t;

namespace detail {
inline void require_finite(std::span<const double> values, const char* where) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw Error(ErrorCode::NonFinite, std::string(where) + " produced a non-finite value");
    }
  }
}
}  // namespace detail

/// Dense real vector. A default-constructed Vector is empty and only serves
/// as a placeholder; every sized constructor requires len >= 1.
class Vector {
 public:
  Vector() = default;
  explicit Vector(std::size_t len, double fill = 0.0) : data_(len, fill) {
    if (len == 0) throw Error(ErrorCode::InvalidArgument, "vector length must be >= 1");
  }
  Vector(std::initializer_list<double> values) : Vector(std::vector<double>(values)) {}
  explicit Vector(std::vector<double> values) : data_(std::move(values)) {
    if (data_.empty()) throw Error(ErrorCode::InvalidArgument, "vector length must be >= 1");
    detail::require_finite(data_, "Vector");
  }

  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }
  const std::vector<double>& values() const { return data_; }
  auto begin() const { return data_.begin(); }
  auto end() const { return data_.end(); }

  friend bool operator==(const Vector&, const Vector&) = default;

 private:
  std::vector<double> data_;
};

/// Dense real matrix indexed (row, col). Storage is column-major so that a
/// column can be handed out as a contiguous span.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {
    if (rows == 0 || cols == 0) throw Error(ErrorCode::InvalidArgument, "matrix dims must be >= 1");
  }
  /// Row-major nested initializer, convenient in tests: {{1, 2}, {3, 4}}.
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    if (rows_ == 0 || cols_ == 0) throw Error(ErrorCode::InvalidArgument, "matrix dims must be >= 1");
    data_.assign(rows_ * cols_, 0.0);
    std::size_t r = 0;
    for (const auto& row : rows) {
      if (row.size() != cols_) throw Error(ErrorCode::DimensionMismatch, "ragged matrix initializer");
      std::size_t c = 0;
      for (double v : row) (*this)(r, c++) = v;
      ++r;
    }
    detail::require_finite(data_, "Matrix");
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }
  /// Builds from row-major data.
  static Matrix from_rows(std::size_t rows, std::size_t cols, std::span<const double> row_major) {
    if (row_major.size() != rows * cols) throw Error(ErrorCode::DimensionMismatch, "from_rows size");
    Matrix m(rows, cols);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) m(r, c) = row_major[r * cols + c];
    detail::require_finite(m.data_, "Matrix");
    return m;
  }
  static Matrix from_columns(const std::vector<std::vector<double>>& columns) {
    if (columns.empty() || columns.front().empty())
      throw Error(ErrorCode::InvalidArgument, "matrix dims must be >= 1");
    Matrix m(columns.front().size(), columns.size());
    for (std::size_t c = 0; c < columns.size(); ++c) {
      if (columns[c].size() != m.rows_) throw Error(ErrorCode::DimensionMismatch, "ragged columns");
      std::copy(columns[c].begin(), columns[c].end(), m.col(c).begin());
    }
    detail::require_finite(m.data_, "Matrix");
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[c * rows_ + r]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[c * rows_ + r]; }

  std::span<double> col(std::size_t c) { return {data_.data() + c * rows_, rows_}; }
  std::span<const double> col(std::size_t c) const { return {data_.data() + c * rows_, rows_}; }
  std::span<const double> storage() const { return data_; }

  Vector row(std::size_t r) const {
    Vector v(cols_);
    for (std::size_t c = 0; c < cols_; ++c) v[c] = (*this)(r, c);
    return v;
  }

  /// Copies the listed columns, in order, into a new matrix.
  Matrix select_columns(std::span<const std::size_t> which) const {
    Matrix m(rows_, which.size());
    for (std::size_t j = 0; j < which.size(); ++j) {
      if (which[j] >= cols_) throw Error(ErrorCode::DimensionMismatch, "column index out of range");
      std::copy(col(which[j]).begin(), col(which[j]).end(), m.col(j).begin());
    }
    return m;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline double dot(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw Error(ErrorCode::DimensionMismatch, "dot length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
  ops::add(u.size());
  return s;
}
inline double dot(const Vector& u, const Vector& v) { return dot(u.span(), v.span()); }

inline double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  ops::add(v.size() + 1);
  return std::sqrt(s);
}
inline double l2_norm(const Vector& v) { return l2_norm(v.span()); }

inline double frobenius_norm(const Matrix& a) { return l2_norm(a.storage()); }

/// y <- y - alpha * x
inline void axpy_sub(double alpha, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw Error(ErrorCode::DimensionMismatch, "axpy length mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] -= alpha * x[i];
  ops::add(x.size());
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) t(c, r) = a(r, c);
  return t;
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw Error(ErrorCode::DimensionMismatch, "matmul inner dimensions");
  Matrix out(a.rows(), b.cols());
  for (std::size_t j = 0; j < b.cols(); ++j) {
    auto oc = out.col(j);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double bkj = b(k, j);
      auto ac = a.col(k);
      for (std::size_t i = 0; i < a.rows(); ++i) oc[i] += ac[i] * bkj;
    }
  }
  ops::add(a.rows() * a.cols() * b.cols());
  detail::require_finite(out.storage(), "matmul");
  return out;
}

inline Vector matvec(const Matrix& a, const Vector& x) {
  if (a.cols() != x.size()) throw Error(ErrorCode::DimensionMismatch, "matvec dimensions");
  std::vector<double> y(a.rows(), 0.0);
  for (std::size_t k = 0; k < a.cols(); ++k) {
    auto ac = a.col(k);
    for (std::size_t i = 0; i < a.rows(); ++i) y[i] += ac[i] * x[k];
  }
  ops::add(a.rows() * a.cols());
  return Vector(std::move(y));
}

inline Vector scale(double c, const Vector& v) {
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x *= c;
  ops::add(out.size());
  return Vector(std::move(out));
}

inline Vector add(const Vector& u, const Vector& v) {
  if (u.size() != v.size()) throw Error(ErrorCode::DimensionMismatch, "add length mismatch");
  std::vector<double> out(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) out[i] = u[i] + v[i];
  ops::add(out.size());
  return Vector(std::move(out));
}

inline Vector sub(const Vector& u, const Vector& v) {
  if (u.size() != v.size()) throw Error(ErrorCode::DimensionMismatch, "sub length mismatch");
  std::vector<double> out(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) out[i] = u[i] - v[i];
  ops::add(out.size());
  return Vector(std::move(out));
}

inline Matrix scale(double c, const Matrix& a) {
  Matrix out = a;
  for (std::size_t j = 0; j < a.cols(); ++j)
    for (double& x : out.col(j)) x *= c;
  ops::add(a.rows() * a.cols());
  detail::require_finite(out.storage(), "scale");
  return out;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw Error(ErrorCode::DimensionMismatch, "add dimensions");
  Matrix out = a;
  for (std::size_t j = 0; j < a.cols(); ++j) {
    auto oc = out.col(j);
    auto bc = b.col(j);
    for (std::size_t i = 0; i < a.rows(); ++i) oc[i] += bc[i];
  }
  ops::add(a.rows() * a.cols());
  detail::require_finite(out.storage(), "add");
  return out;
}

inline Matrix sub(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw Error(ErrorCode::DimensionMismatch, "sub dimensions");
  Matrix out = a;
  for (std::size_t j = 0; j < a.cols(); ++j) {
    auto oc = out.col(j);
    auto bc = b.col(j);
    for (std::size_t i = 0; i < a.rows(); ++i) oc[i] -= bc[i];
  }
  ops::add(a.rows() * a.cols());
  detail::require_finite(out.storage(), "sub");
  return out;
}

/// Assignment of matrix columns to nodes. Each node owns one contiguous,
/// non-empty run of columns; blocks are listed in global column order, which
/// is also the order in which control passes during distributed QR.
class ColumnPartition {
 public:
  struct Block {
    NodeId node;
    std::vector<std::size_t> cols;
  };

  ColumnPartition() = default;

  /// Everything on one node.
  static ColumnPartition single(std::size_t total_cols, NodeId node = 0) {
    return contiguous({total_cols}, {node});
  }

  /// sizes[k] columns go to nodes[k], in order.
  static ColumnPartition contiguous(const std::vector<std::size_t>& sizes, const std::vector<NodeId>& nodes) {
    if (sizes.size() != nodes.size() || sizes.empty())
      throw Error(ErrorCode::InvalidArgument, "partition needs one size per node");
    std::vector<NodeId> owners;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
      if (sizes[k] == 0) throw Error(ErrorCode::InvalidArgument, "partition block must be non-empty");
      owners.insert(owners.end(), sizes[k], nodes[k]);
    }
    return from_owners(owners);
  }

  /// Equal-as-possible split of total_cols over nodes 0..node_count-1.
  static ColumnPartition even(std::size_t total_cols, std::size_t node_count) {
    if (node_count == 0 || node_count > total_cols)
      throw Error(ErrorCode::InvalidArgument, "node count must be in [1, total_cols]");
    std::vector<std::size_t> sizes(node_count, total_cols / node_count);
    for (std::size_t k = 0; k < total_cols % node_count; ++k) ++sizes[k];
    std::vector<NodeId> nodes(node_count);
    for (std::size_t k = 0; k < node_count; ++k) nodes[k] = static_cast<NodeId>(k);
    return contiguous(sizes, nodes);
  }

  /// owners[c] is the node owning column c; each node's columns must be contiguous.
  static ColumnPartition from_owners(const std::vector<NodeId>& owners) {
    if (owners.empty()) throw Error(ErrorCode::InvalidArgument, "partition needs >= 1 column");
    ColumnPartition p;
    p.owners_ = owners;
    for (std::size_t c = 0; c < owners.size(); ++c) {
      if (c == 0 || owners[c] != owners[c - 1]) {
        for (const auto& b : p.blocks_) {
          if (b.node == owners[c])
            throw Error(ErrorCode::InvalidArgument,
                        "node " + std::to_string(owners[c]) + " owns a non-contiguous run of columns");
        }
        p.blocks_.push_back({owners[c], {}});
      }
      p.blocks_.back().cols.push_back(c);
    }
    return p;
  }

  std::size_t total_cols() const { return owners_.size(); }
  std::size_t node_count() const { return blocks_.size(); }
  NodeId owner(std::size_t col) const { return owners_.at(col); }
  const std::vector<NodeId>& owners() const { return owners_; }
  const std::vector<Block>& blocks() const { return blocks_; }
  NodeId controller() const { return blocks_.front().node; }

  const Block* block_of(NodeId node) const {
    for (const auto& b : blocks_)
      if (b.node == node) return &b;
    return nullptr;
  }

  friend bool operator==(const ColumnPartition& a, const ColumnPartition& b) { return a.owners_ == b.owners_; }

 private:
  std::vector<NodeId> owners_;
  std::vector<Block> blocks_;
};

}  // namespace solarmlr
