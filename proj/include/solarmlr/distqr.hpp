#pragma once

// Column-partitioned modified Gram-Schmidt QR.
//
// Each node holds a contiguous block of columns of A and overwrites them with
// the matching columns of Q. Control follows global column order: the owner of
// the next unfinished column normalises it, broadcasts it, and every node
// projects that column out of its own unfinished columns. Because each column
// k sees the projections of columns 0..k-1 in the same order regardless of
// where the block boundaries fall, the arithmetic is identical to the
// single-node routine below.

#include <cstddef>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "solarmlr/linalg.hpp"

namespace solarmlr {

inline constexpr double kPivotRelTolerance = 1e-12;

/// Absolute pivot threshold for a matrix: 1e-12 * ||A||_F.
inline double pivot_tolerance(const Matrix& a) {
  double s = 0.0;
  for (double x : a.storage()) s += x * x;
  return kPivotRelTolerance * std::sqrt(s);
}

namespace detail {

// Shared by the distributed and centralized paths so both execute the same
// floating point sequence.
inline double normalize_column(std::span<double> col) {
  const double norm = l2_norm(col);
  for (double& x : col) x /= norm;
  ops::add(col.size());
  return norm;
}

inline double project_out(std::span<const double> q, std::span<double> col) {
  const double r = dot(q, col);
  axpy_sub(r, q, col);
  return r;
}

}  // namespace detail

enum class QrPhase { Idle, Updating, Controlling, Done };

/// A finalized column of Q, as broadcast to the other nodes.
struct QColumn {
  std::size_t index = 0;
  std::vector<double> values;
};

/// One node's share of a distributed QR.
class QrState {
 public:
  /// owned_cols are the global column indices (contiguous, increasing) whose
  /// data is stored, in the same order, as the columns of block.
  QrState(std::vector<std::size_t> owned_cols, Matrix block, std::size_t total_cols, double pivot_tolerance)
      : owned_(std::move(owned_cols)),
        q_(std::move(block)),
        r_(total_cols, owned_.empty() ? 1 : owned_.size()),
        total_cols_(total_cols),
        tol_(pivot_tolerance) {
    if (owned_.empty() || owned_.size() != q_.cols())
      throw Error(ErrorCode::InvalidArgument, "owned column list must match block width");
    for (std::size_t j = 0; j < owned_.size(); ++j) {
      if (owned_[j] >= total_cols_ || (j > 0 && owned_[j] != owned_[j - 1] + 1))
        throw Error(ErrorCode::InvalidArgument, "owned columns must be contiguous and in range");
    }
    if (q_.rows() < total_cols_) throw Error(ErrorCode::InvalidArgument, "QR needs rows >= cols");
  }

  QrPhase phase() const { return phase_; }
  /// Global index of the next column to be finalized anywhere in the group.
  std::size_t current_col() const { return next_col_; }
  bool owns(std::size_t col) const { return col >= owned_.front() && col <= owned_.back(); }
  const std::vector<std::size_t>& owned_cols() const { return owned_; }
  const Matrix& q_block() const { return q_; }
  /// Column j holds R(0..n-1, owned_cols()[j]); entries below the diagonal are zero.
  const Matrix& r_block() const { return r_; }
  std::size_t total_cols() const { return total_cols_; }

  /// Node owning column 0 begins the decomposition.
  QColumn start() {
    if (phase_ != QrPhase::Idle) throw Error(ErrorCode::InvalidArgument, "QR already started");
    if (owned_.front() != 0) throw Error(ErrorCode::InvalidArgument, "only the owner of column 0 starts QR");
    return finalize_next();
  }

  /// While in control, finalizes the next local column.
  std::optional<QColumn> advance() {
    if (phase_ != QrPhase::Controlling) return std::nullopt;
    return finalize_next();
  }

  /// Applies a column finalized elsewhere. When it is the column just before
  /// this node's block, control passes here and every local column is
  /// finalized; the returned broadcasts are in column order.
  std::vector<QColumn> receive_column(std::size_t col_index, std::span<const double> q_col) {
    if (col_index != next_col_ || owns(col_index)) {
      throw Error(ErrorCode::OutOfOrderColumn,
                  "expected column " + std::to_string(next_col_) + ", received " + std::to_string(col_index));
    }
    if (q_col.size() != q_.rows()) throw Error(ErrorCode::DimensionMismatch, "Q column length");
    double nrm2 = 0.0;
    for (double x : q_col) nrm2 += x * x;
    if (std::abs(std::sqrt(nrm2) - 1.0) > 1e-8)
      throw Error(ErrorCode::InvalidArgument, "received Q column is not unit norm");

    for (std::size_t j = 0; j < owned_.size(); ++j) {
      if (owned_[j] > col_index) r_(col_index, j) = detail::project_out(q_col, q_.col(j));
    }
    next_col_ = col_index + 1;

    std::vector<QColumn> out;
    if (next_col_ == owned_.front()) {
      phase_ = QrPhase::Controlling;
      while (auto c = advance()) out.push_back(std::move(*c));
    } else if (phase_ == QrPhase::Idle) {
      phase_ = QrPhase::Updating;
    }
    return out;
  }

  /// q_k = Q_k^T b for each owned column.
  Vector qtb(const Vector& b) const {
    if (b.size() != q_.rows()) throw Error(ErrorCode::DimensionMismatch, "b length must equal rows");
    Vector out(owned_.size());
    for (std::size_t j = 0; j < owned_.size(); ++j) out[j] = dot(q_.col(j), b.span());
    return out;
  }

 private:
  QColumn finalize_next() {
    const std::size_t j = next_col_ - owned_.front();
    auto col = q_.col(j);
    double nrm2 = 0.0;
    for (double x : col) nrm2 += x * x;
    if (!(std::sqrt(nrm2) > tol_)) {
      throw Error(ErrorCode::ZeroColumn, "column " + std::to_string(next_col_) + " norm is below pivot tolerance");
    }
    r_(next_col_, j) = detail::normalize_column(col);
    for (std::size_t k = j + 1; k < owned_.size(); ++k) r_(next_col_, k) = detail::project_out(col, q_.col(k));

    QColumn msg{next_col_, std::vector<double>(col.begin(), col.end())};
    ++next_col_;
    phase_ = next_col_ <= owned_.back() ? QrPhase::Controlling : QrPhase::Done;
    return msg;
  }

  std::vector<std::size_t> owned_;
  Matrix q_;
  Matrix r_;
  std::size_t total_cols_;
  double tol_;
  std::size_t next_col_ = 0;
  QrPhase phase_ = QrPhase::Idle;
};

struct QrResult {
  Matrix q;
  Matrix r;
};

/// Single-node modified Gram-Schmidt. Throws RankDeficient when a pivot norm
/// falls to 1e-12 * ||A||_F or below.
inline QrResult qr_centralized(const Matrix& a) {
  if (a.rows() < a.cols()) throw Error(ErrorCode::InvalidArgument, "QR needs rows >= cols");
  const double tol = pivot_tolerance(a);
  Matrix q = a;
  Matrix r(a.cols(), a.cols());
  for (std::size_t i = 0; i < a.cols(); ++i) {
    auto qi = q.col(i);
    double nrm2 = 0.0;
    for (double x : qi) nrm2 += x * x;
    if (!(std::sqrt(nrm2) > tol))
      throw Error(ErrorCode::RankDeficient, "column " + std::to_string(i) + " is linearly dependent");
    r(i, i) = detail::normalize_column(qi);
    for (std::size_t k = i + 1; k < a.cols(); ++k) r(i, k) = detail::project_out(qi, q.col(k));
  }
  return {std::move(q), std::move(r)};
}

struct DistributedQrResult {
  Matrix q;
  Matrix r;
  std::size_t broadcasts = 0;
};

/// Runs the column-partitioned QR over an in-process, loss-free FIFO
/// transport and assembles the global factors.
inline DistributedQrResult qr_distributed(const Matrix& a, const ColumnPartition& partition) {
  if (partition.total_cols() != a.cols()) throw Error(ErrorCode::DimensionMismatch, "partition width");
  const double tol = pivot_tolerance(a);
  std::vector<QrState> nodes;
  nodes.reserve(partition.node_count());
  for (const auto& block : partition.blocks()) {
    nodes.emplace_back(block.cols, a.select_columns(block.cols), a.cols(), tol);
  }

  std::deque<std::pair<std::size_t, QColumn>> wire;  // (sender slot, column)
  std::size_t broadcasts = 0;
  wire.emplace_back(0, nodes[0].start());
  while (auto more = nodes[0].advance()) wire.emplace_back(0, std::move(*more));

  while (!wire.empty()) {
    auto [sender, column] = std::move(wire.front());
    wire.pop_front();
    ++broadcasts;
    for (std::size_t s = 0; s < nodes.size(); ++s) {
      if (s == sender) continue;
      for (auto& out : nodes[s].receive_column(column.index, column.values)) wire.emplace_back(s, std::move(out));
    }
  }

  DistributedQrResult result{Matrix(a.rows(), a.cols()), Matrix(a.cols(), a.cols()), broadcasts};
  for (std::size_t s = 0; s < nodes.size(); ++s) {
    const auto& owned = nodes[s].owned_cols();
    for (std::size_t j = 0; j < owned.size(); ++j) {
      auto src = nodes[s].q_block().col(j);
      std::copy(src.begin(), src.end(), result.q.col(owned[j]).begin());
      auto rsrc = nodes[s].r_block().col(j);
      std::copy(rsrc.begin(), rsrc.end(), result.r.col(owned[j]).begin());
    }
  }
  return result;
}

}  // namespace solarmlr
