#pragma once

// Least-squares calibration: distributed QR -> SVD of R at the controlling
// node -> pseudoinverse combination x = V diag(1/sigma) U^T (Q^T b).

#include <algorithm>
#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "solarmlr/distqr.hpp"
#include "solarmlr/jacobisvd.hpp"
#include "solarmlr/linalg.hpp"

namespace solarmlr {

inline constexpr double kSigmaRelCutoff = 1e-10;

enum class CalibrationPhase { Wait, Qr, Svd, Pinv, Distribute, Done, Failed };

enum class FailureReason { ZeroFirstColumn, QOutOfOrder, QMissing, RMissing, ZeroCoefficients, Timeout, RankDeficient };

inline std::string_view to_string(CalibrationPhase p) {
  switch (p) {
    case CalibrationPhase::Wait: return "wait";
    case CalibrationPhase::Qr: return "qr";
    case CalibrationPhase::Svd: return "svd";
    case CalibrationPhase::Pinv: return "pinv";
    case CalibrationPhase::Distribute: return "distribute";
    case CalibrationPhase::Done: return "done";
    case CalibrationPhase::Failed: return "failed";
  }
  return "?";
}

inline std::string_view to_string(FailureReason r) {
  switch (r) {
    case FailureReason::ZeroFirstColumn: return "zero_first_column";
    case FailureReason::QOutOfOrder: return "q_out_of_order";
    case FailureReason::QMissing: return "q_missing";
    case FailureReason::RMissing: return "r_missing";
    case FailureReason::ZeroCoefficients: return "zero_coefficients";
    case FailureReason::Timeout: return "timeout";
    case FailureReason::RankDeficient: return "rank_deficient";
  }
  return "?";
}

/// Phase tracker for one calibration attempt. Only the forward chain
/// Wait -> Qr -> Svd -> Pinv -> Distribute -> Done is legal, plus a jump to
/// Failed from any non-terminal phase.
class CalibrationRound {
 public:
  CalibrationRound(std::size_t round_id, ColumnPartition partition)
      : round_id_(round_id), partition_(std::move(partition)) {}

  std::size_t round_id() const { return round_id_; }
  const ColumnPartition& partition() const { return partition_; }
  CalibrationPhase phase() const { return phase_; }
  std::optional<FailureReason> failure_reason() const { return reason_; }
  bool closed() const { return phase_ == CalibrationPhase::Done || phase_ == CalibrationPhase::Failed; }

  void advance(CalibrationPhase next) {
    if (closed() || next == CalibrationPhase::Failed || static_cast<int>(next) != static_cast<int>(phase_) + 1) {
      throw Error(ErrorCode::InvalidArgument, std::string("illegal calibration transition ") +
                                                  std::string(to_string(phase_)) + " -> " +
                                                  std::string(to_string(next)));
    }
    phase_ = next;
  }

  void fail(FailureReason reason) {
    if (closed()) throw Error(ErrorCode::InvalidArgument, "round already closed");
    phase_ = CalibrationPhase::Failed;
    reason_ = reason;
  }

 private:
  std::size_t round_id_;
  ColumnPartition partition_;
  CalibrationPhase phase_ = CalibrationPhase::Wait;
  std::optional<FailureReason> reason_;
};

struct CoefficientVector {
  Vector weights;
  std::size_t fitted_at = 0;
  std::size_t round_id = 0;
};

inline bool all_zero(const Vector& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
}

/// Validates and wraps a fitted weight vector; all-zero results are rejected.
inline CoefficientVector make_coefficients(Vector weights, std::size_t fitted_at = 0, std::size_t round_id = 0) {
  if (weights.empty()) throw Error(ErrorCode::InvalidArgument, "empty coefficient vector");
  detail::require_finite(weights.span(), "coefficients");
  if (all_zero(weights)) throw Error(ErrorCode::ZeroCoefficients, "coefficients are all zero");
  return {std::move(weights), fitted_at, round_id};
}

/// T = V diag(sigma^+) U^T, with sigma entries at or below
/// 1e-10 * max(sigma) treated as zero.
inline Matrix pinv_core(const Matrix& u, const Vector& sigma, const Matrix& v, bool* truncated = nullptr) {
  const std::size_t n = sigma.size();
  if (u.cols() != n || v.cols() != n) throw Error(ErrorCode::DimensionMismatch, "pinv_core factor widths");
  const double smax = *std::max_element(sigma.begin(), sigma.end());
  const double cutoff = kSigmaRelCutoff * smax;
  Matrix vs = v;
  bool cut = false;
  for (std::size_t k = 0; k < n; ++k) {
    const double inv = sigma[k] > cutoff ? 1.0 / sigma[k] : 0.0;
    if (sigma[k] <= cutoff) cut = true;
    for (double& x : vs.col(k)) x *= inv;
  }
  ops::add(n + v.rows() * n);
  if (truncated) *truncated = cut;
  return matmul(vs, transpose(u));
}

/// x_opt = T q, where T comes from the SVD of R and q = Q^T b.
inline Vector pinv_combine(const Matrix& u, const Vector& sigma, const Matrix& v, const Vector& q,
                           bool* truncated = nullptr) {
  if (q.size() != u.rows()) throw Error(ErrorCode::DimensionMismatch, "q length");
  return matvec(pinv_core(u, sigma, v, truncated), q);
}

/// Concatenates per-node q slices (partition block order) into the length-n q.
inline Vector assemble_qtb(const ColumnPartition& partition, const std::vector<std::optional<Vector>>& slices) {
  if (slices.size() != partition.node_count()) throw Error(ErrorCode::DimensionMismatch, "one q slice per node");
  Vector q(partition.total_cols());
  for (std::size_t s = 0; s < slices.size(); ++s) {
    const auto& block = partition.blocks()[s];
    if (!slices[s]) {
      throw Error(ErrorCode::InsufficientData, "q contribution from node " + std::to_string(block.node) + " missing");
    }
    if (slices[s]->size() != block.cols.size()) throw Error(ErrorCode::DimensionMismatch, "q slice width");
    for (std::size_t j = 0; j < block.cols.size(); ++j) q[block.cols[j]] = (*slices[s])[j];
  }
  return q;
}

struct NodeTraffic {
  NodeId node = 0;
  std::size_t sent = 0;
  std::size_t received = 0;
  std::uint64_t flops = 0;
};

struct CalibrationResult {
  CoefficientVector coeffs;
  Matrix r;
  bool truncated = false;
  std::vector<NodeTraffic> traffic;  // partition block order
  std::uint64_t flops = 0;
};

/// Distributed calibration over a loss-free in-process transport. blocks[k]
/// holds the columns owned by partition.blocks()[k]; every node holds b.
/// Broadcasts count once for the sender and once per receiver.
inline CalibrationResult calibrate_distributed(const std::vector<Matrix>& blocks, const ColumnPartition& partition,
                                               const Vector& b) {
  const std::size_t nodes = partition.node_count();
  if (blocks.size() != nodes) throw Error(ErrorCode::DimensionMismatch, "one block per partition node");
  const std::size_t m = b.size();
  double fro2 = 0.0;
  for (std::size_t s = 0; s < nodes; ++s) {
    if (blocks[s].rows() != m || blocks[s].cols() != partition.blocks()[s].cols.size())
      throw Error(ErrorCode::DimensionMismatch, "block shape does not match partition / b");
    for (double x : blocks[s].storage()) fro2 += x * x;
  }
  const std::size_t n = partition.total_cols();
  if (m < n) throw Error(ErrorCode::InsufficientData, "calibration needs rows >= cols");
  const double tol = kPivotRelTolerance * std::sqrt(fro2);

  CalibrationResult out;
  out.traffic.resize(nodes);
  for (std::size_t s = 0; s < nodes; ++s) out.traffic[s].node = partition.blocks()[s].node;
  auto charge = [&](std::size_t slot, const ops::Scope& scope) { out.traffic[slot].flops += scope.count(); };
  auto broadcast = [&](std::size_t from) {
    ++out.traffic[from].sent;
    for (std::size_t s = 0; s < nodes; ++s)
      if (s != from) ++out.traffic[s].received;
  };
  auto unicast = [&](std::size_t from, std::size_t to) {
    ++out.traffic[from].sent;
    ++out.traffic[to].received;
  };

  std::vector<QrState> qr;
  qr.reserve(nodes);
  for (std::size_t s = 0; s < nodes; ++s) qr.emplace_back(partition.blocks()[s].cols, blocks[s], n, tol);

  std::deque<std::pair<std::size_t, QColumn>> wire;
  {
    ops::Scope scope;
    wire.emplace_back(0, qr[0].start());
    while (auto more = qr[0].advance()) wire.emplace_back(0, std::move(*more));
    charge(0, scope);
  }
  while (!wire.empty()) {
    auto [from, column] = std::move(wire.front());
    wire.pop_front();
    broadcast(from);
    for (std::size_t s = 0; s < nodes; ++s) {
      if (s == from) continue;
      ops::Scope scope;
      for (auto& c : qr[s].receive_column(column.index, column.values)) wire.emplace_back(s, std::move(c));
      charge(s, scope);
    }
  }

  // Gather R and q = Q^T b at the controller.
  Matrix r(n, n);
  std::vector<std::optional<Vector>> q_slices(nodes);
  for (std::size_t s = 0; s < nodes; ++s) {
    ops::Scope scope;
    q_slices[s] = qr[s].qtb(b);
    charge(s, scope);
    const auto& owned = qr[s].owned_cols();
    for (std::size_t j = 0; j < owned.size(); ++j) {
      auto src = qr[s].r_block().col(j);
      std::copy(src.begin(), src.end(), r.col(owned[j]).begin());
    }
    if (s != 0) {
      unicast(s, 0);  // R block
      unicast(s, 0);  // q slice
    }
  }

  Vector x;
  {
    ops::Scope scope;
    const SvdResult svd = svd_square(r);
    x = pinv_combine(svd.u, svd.sigma, svd.v, assemble_qtb(partition, q_slices), &out.truncated);
    charge(0, scope);
  }
  broadcast(0);  // coefficients

  out.coeffs = make_coefficients(std::move(x));
  out.r = std::move(r);
  for (const auto& t : out.traffic) out.flops += t.flops;
  return out;
}

/// Convenience overload splitting a full X by the partition.
inline CalibrationResult calibrate_distributed(const Matrix& x, const ColumnPartition& partition, const Vector& b) {
  if (partition.total_cols() != x.cols()) throw Error(ErrorCode::DimensionMismatch, "partition width");
  std::vector<Matrix> blocks;
  for (const auto& block : partition.blocks()) blocks.push_back(x.select_columns(block.cols));
  return calibrate_distributed(blocks, partition, b);
}

/// Single-node least squares through a one-sided Jacobi SVD of X itself.
/// Rank deficiency is handled by truncating small singular values, which
/// gives the minimum-norm solution; `truncated` reports it.
inline CalibrationResult calibrate_centralized(const Matrix& x, const Vector& b) {
  if (x.rows() != b.size()) throw Error(ErrorCode::DimensionMismatch, "X rows must equal b length");
  if (x.rows() < x.cols()) throw Error(ErrorCode::InsufficientData, "calibration needs rows >= cols");
  ops::Scope scope;
  CalibrationResult out;
  const SvdResult svd = svd_one_sided(x);
  const Matrix t = pinv_core(svd.u, svd.sigma, svd.v, &out.truncated);
  Vector coeffs = matvec(t, b);
  out.flops = scope.count();
  out.traffic = {NodeTraffic{0, 0, 0, out.flops}};
  out.coeffs = make_coefficients(std::move(coeffs));
  return out;
}

}  // namespace solarmlr
