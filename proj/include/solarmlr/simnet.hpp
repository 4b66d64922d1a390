#pragma once

// Deterministic discrete-tick simulation of a node group running the
// calibration and prediction protocols.
//
// Per tick: node online/offline transitions are applied, due messages are
// delivered (recipients in ascending id order, each in send order), then
// every node checks its timeouts. Messages sent while handling tick t arrive
// at t + hop_delay. Every random choice comes from one seeded generator, so a
// (config, workload, fault plan) triple always produces the same log.
//
// Calibration round, as seen by the controller (owner of column 0):
//   Wait -> Qr          broadcast LoadData, then Q columns it finalizes
//   Qr -> Svd           all n columns seen; wait for R blocks and q slices
//   Svd -> Pinv -> Distribute -> Done
//                       SVD of R, x = V diag(1/sigma) U^T q, broadcast x
// Other nodes load their block on LoadData, finalize their columns when
// control reaches them, send R and q to the controller and return to Wait.
// A failed round distributes nothing, so every node keeps its coefficients.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "solarmlr/calibrate.hpp"
#include "solarmlr/dataio.hpp"
#include "solarmlr/features.hpp"
#include "solarmlr/metrics.hpp"
#include "solarmlr/predictor.hpp"
#include "solarmlr/rng.hpp"

namespace solarmlr::sim {

inline constexpr NodeId kBroadcast = std::numeric_limits<NodeId>::max();

enum class MessageKind { LoadData, QColumn, RTransfer, QtbTransfer, Coefficients, PredictShare, Ack };

inline std::string_view to_string(MessageKind k) {
  switch (k) {
    case MessageKind::LoadData: return "load_data";
    case MessageKind::QColumn: return "q_column";
    case MessageKind::RTransfer: return "r_transfer";
    case MessageKind::QtbTransfer: return "qtb_transfer";
    case MessageKind::Coefficients: return "coefficients";
    case MessageKind::PredictShare: return "predict_share";
    case MessageKind::Ack: return "ack";
  }
  return "?";
}

struct LoadDataPayload {
  double pivot_tolerance = 0.0;
  std::vector<NodeId> owners;  // column -> node
};
struct QColumnPayload {
  std::size_t index = 0;
  std::vector<double> values;
};
struct RTransferPayload {
  std::vector<std::size_t> cols;
  Matrix r_block;  // n x cols.size()
};
struct QtbPayload {
  std::vector<std::size_t> cols;
  std::vector<double> values;
};
struct CoefficientsPayload {
  std::vector<double> weights;
  std::vector<NodeId> owners;
};
struct SharePayload {
  double tau = 0.0;
  std::size_t coeff_round = 0;
};
struct AckPayload {};

// Alternative order matches MessageKind.
using Payload = std::variant<LoadDataPayload, QColumnPayload, RTransferPayload, QtbPayload, CoefficientsPayload,
                             SharePayload, AckPayload>;

struct SimMessage {
  NodeId from = 0;
  NodeId to = kBroadcast;
  std::size_t round_id = 0;  // calibration round, or prediction id for PredictShare
  std::size_t tick_sent = 0;
  Payload payload;

  MessageKind kind() const { return static_cast<MessageKind>(payload.index()); }
};

// --- faults -------------------------------------------------------------------

struct MessageMatcher {
  std::optional<MessageKind> kind;
  std::optional<NodeId> from;
  std::optional<NodeId> to;
  std::optional<std::size_t> round;
  std::optional<std::size_t> column;  // QColumn index

  bool matches(const SimMessage& m, NodeId recipient) const {
    if (kind && *kind != m.kind()) return false;
    if (from && *from != m.from) return false;
    if (to && *to != recipient) return false;
    if (round && *round != m.round_id) return false;
    if (column) {
      const auto* q = std::get_if<QColumnPayload>(&m.payload);
      if (!q || q->index != *column) return false;
    }
    return true;
  }
};

struct DropMessage {
  MessageMatcher match;
};
struct NodeOffline {
  NodeId node = 0;
  std::size_t from_tick = 0;
  std::size_t to_tick = 0;  // exclusive
};
struct ZeroFirstColumn {
  std::size_t round = 0;
};
struct ZeroCoefficients {
  std::size_t round = 0;
};
struct ReorderColumns {
  std::size_t round = 0;
};

using Fault = std::variant<DropMessage, NodeOffline, ZeroFirstColumn, ZeroCoefficients, ReorderColumns>;

struct FaultPlan {
  std::vector<Fault> faults;
};

struct NetworkConfig {
  std::size_t node_count = 1;
  std::size_t hop_delay = 1;
  std::size_t timeout_ticks = 50;
  double drop_probability = 0.0;
  std::uint64_t seed = 1;

  void validate() const {
    if (node_count == 0) throw Error(ErrorCode::Validation, "network.node_count must be >= 1");
    if (hop_delay == 0) throw Error(ErrorCode::Validation, "network.hop_delay must be >= 1");
    if (timeout_ticks == 0) throw Error(ErrorCode::Validation, "network.timeout_ticks must be >= 1");
    if (drop_probability < 0.0 || drop_probability >= 1.0)
      throw Error(ErrorCode::Validation, "network.drop_probability must be in [0, 1)");
  }
};

// --- log ------------------------------------------------------------------------

enum class Delivery { Delivered, Dropped, Offline, Discarded };

inline std::string_view to_string(Delivery d) {
  switch (d) {
    case Delivery::Delivered: return "delivered";
    case Delivery::Dropped: return "dropped";
    case Delivery::Offline: return "offline";
    case Delivery::Discarded: return "discarded";
  }
  return "?";
}

struct MessageTrace {
  std::size_t tick_sent = 0;
  std::size_t tick_delivered = 0;
  MessageKind kind = MessageKind::Ack;
  NodeId from = 0;
  NodeId to = 0;
  std::size_t round_id = 0;
  Delivery status = Delivery::Delivered;
};

struct RoundRecord {
  std::size_t round_id = 0;
  std::size_t start_tick = 0;
  std::size_t end_tick = 0;
  NodeId controller = 0;
  CalibrationPhase outcome = CalibrationPhase::Wait;
  std::optional<FailureReason> reason;
  std::vector<CalibrationPhase> phases;
  std::vector<NodeTraffic> traffic;  // indexed by node id
  std::uint64_t flops = 0;
  std::size_t acks = 0;
  std::optional<Vector> coefficients;

  bool succeeded() const { return outcome == CalibrationPhase::Done; }
  std::size_t controller_messages() const {
    const auto& t = traffic.at(controller);
    return t.sent + t.received;
  }
};

struct PredictionEvent {
  std::size_t prediction_id = 0;
  std::size_t tick = 0;
  NodeId node = 0;
  std::optional<double> value;
  std::size_t coeff_round = 0;
};

struct NodeEvent {
  std::size_t tick = 0;
  NodeId node = 0;
  std::string what;
};

struct SimulationLog {
  std::vector<MessageTrace> messages;
  std::vector<RoundRecord> rounds;
  std::vector<PredictionEvent> predictions;
  std::vector<NodeEvent> events;
  std::vector<Counters> counters;  // indexed by node id

  std::size_t attempts() const { return rounds.size(); }
  std::size_t successes() const {
    return static_cast<std::size_t>(std::count_if(rounds.begin(), rounds.end(), [](const auto& r) { return r.succeeded(); }));
  }
};

/// successes / attempts.
inline double success_rate(std::size_t successes, std::size_t attempts) {
  if (attempts == 0) throw Error(ErrorCode::TooFewPoints, "success rate needs at least one attempted round");
  return static_cast<double>(successes) / static_cast<double>(attempts);
}

inline double success_rate(const SimulationLog& log) { return success_rate(log.successes(), log.attempts()); }

/// Line records, fields comma-separated, in this order:
///   msg,tick_sent,tick_delivered,kind,from,to,round,status
///   round,id,start_tick,end_tick,controller,outcome,reason,controller_messages,flops,acks
///   pred,id,tick,node,value,coeff_round
///   event,tick,node,text
///   counter,node,flops,sent,received,values_stored_peak
/// Absent values are written as '-'; reals use %.17g.
inline void write_log(std::ostream& os, const SimulationLog& log) {
  os << "# solarmlr simulation log v1\n";
  for (const auto& m : log.messages) {
    os << "msg," << m.tick_sent << ',' << m.tick_delivered << ',' << to_string(m.kind) << ',' << m.from << ','
       << (m.to == kBroadcast ? std::string("*") : std::to_string(m.to)) << ',' << m.round_id << ','
       << to_string(m.status) << '\n';
  }
  for (const auto& r : log.rounds) {
    os << "round," << r.round_id << ',' << r.start_tick << ',' << r.end_tick << ',' << r.controller << ','
       << to_string(r.outcome) << ',' << (r.reason ? to_string(*r.reason) : std::string_view("-")) << ','
       << r.controller_messages() << ',' << r.flops << ',' << r.acks << '\n';
  }
  for (const auto& p : log.predictions) {
    os << "pred," << p.prediction_id << ',' << p.tick << ',' << p.node << ','
       << (p.value ? format_value(*p.value) : std::string("-")) << ',' << p.coeff_round << '\n';
  }
  for (const auto& e : log.events) os << "event," << e.tick << ',' << e.node << ',' << e.what << '\n';
  for (std::size_t n = 0; n < log.counters.size(); ++n) {
    const auto& c = log.counters[n];
    os << "counter," << n << ',' << c.flops << ',' << c.messages_sent << ',' << c.messages_received << ','
       << c.values_stored_peak << '\n';
  }
}

inline std::string to_text(const SimulationLog& log) {
  std::ostringstream os;
  write_log(os, log);
  return os.str();
}

// --- network ----------------------------------------------------------------------

class Network {
 public:
  explicit Network(NetworkConfig config, FaultPlan faults = {})
      : cfg_(config), faults_(std::move(faults)), rng_(config.seed) {
    cfg_.validate();
    nodes_.resize(cfg_.node_count);
    for (std::size_t i = 0; i < nodes_.size(); ++i) nodes_[i].id = static_cast<NodeId>(i);
    log_.counters.resize(cfg_.node_count);
    for (const auto& f : faults_.faults) {
      if (const auto* off = std::get_if<NodeOffline>(&f); off && off->node >= cfg_.node_count)
        throw Error(ErrorCode::Validation, "fault references unknown node " + std::to_string(off->node));
    }
  }

  std::size_t now() const { return now_; }
  const SimulationLog& log() const { return log_; }
  const NetworkConfig& config() const { return cfg_; }
  bool online(NodeId id) const { return nodes_.at(id).online; }
  CalibrationPhase phase(NodeId id) const { return nodes_.at(id).phase; }
  const std::optional<CoefficientVector>& coefficients(NodeId id) const { return nodes_.at(id).active; }
  std::size_t rounds_started() const { return log_.rounds.size(); }

  /// Deposits each node's block of the window and has the controller start a
  /// round at the current tick. Returns the round id, or nothing when the
  /// controller is offline or still busy.
  std::optional<std::size_t> start_calibration(const FeatureMatrix& window, const ColumnPartition& partition) {
    return start_calibration(window.x, window.targets, partition);
  }

  std::optional<std::size_t> start_calibration(const Matrix& x, const Vector& b, const ColumnPartition& partition) {
    if (partition.total_cols() != x.cols() || x.rows() != b.size())
      throw Error(ErrorCode::DimensionMismatch, "window does not match partition / targets");
    for (const auto& block : partition.blocks())
      if (block.node >= nodes_.size()) throw Error(ErrorCode::InvalidArgument, "partition names unknown node");
    apply_online_transitions();

    const std::size_t round_id = log_.rounds.size() + 1;
    for (const auto& block : partition.blocks()) {
      auto& store = nodes_[block.node].store;
      store.erase(store.begin(), store.lower_bound(round_id > 4 ? round_id - 4 : 0));
      store[round_id] = StoredBlock{block.cols, x.select_columns(block.cols), b};
    }
    const NodeId ctl = partition.controller();
    Node& c = nodes_[ctl];
    if (!c.online || c.phase != CalibrationPhase::Wait) {
      for (const auto& block : partition.blocks()) nodes_[block.node].store.erase(round_id);
      log_.events.push_back({now_, ctl, "calibration skipped: controller unavailable"});
      return std::nullopt;
    }

    RoundRecord rec;
    rec.round_id = round_id;
    rec.start_tick = now_;
    rec.controller = ctl;
    rec.traffic.resize(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) rec.traffic[i].node = static_cast<NodeId>(i);
    log_.rounds.push_back(std::move(rec));

    c.ctl.emplace(CalibrationRound(round_id, partition));
    c.round_id = round_id;
    c.ctl->tolerance = pivot_tolerance(x);
    c.ctl->r = Matrix(x.cols(), x.cols());
    c.ctl->q = Vector(x.cols());
    c.ctl->have_r.assign(partition.node_count(), false);
    c.ctl->have_q.assign(partition.node_count(), false);
    c.ctl->reorder_column = reorder_column_for(partition);
    advance_round(c, CalibrationPhase::Qr);

    ops::Scope scope;
    bool zero_first = false;
    for (const auto& f : faults_.faults)
      if (const auto* z = std::get_if<ZeroFirstColumn>(&f); z && z->round == round_id) zero_first = true;
    StoredBlock& mine = c.store[round_id];
    if (zero_first)
      for (double& v : mine.block.col(0)) v = 0.0;

    c.qr.emplace(mine.cols, mine.block, partition.total_cols(), c.ctl->tolerance);
    c.b = mine.b;
    c.phase = CalibrationPhase::Qr;
    std::vector<QColumn> columns;
    try {
      columns.push_back(c.qr->start());
      while (auto more = c.qr->advance()) columns.push_back(std::move(*more));
    } catch (const Error& e) {
      charge(c, scope, round_id);
      if (e.code() != ErrorCode::ZeroColumn) throw;
      close_round(c, FailureReason::ZeroFirstColumn);
      return round_id;
    }
    send(c, kBroadcast, round_id, LoadDataPayload{c.ctl->tolerance, partition.owners()});
    for (auto& col : columns) send(c, kBroadcast, round_id, QColumnPayload{col.index, std::move(col.values)});
    c.ctl->expected_col = c.qr->current_col();
    c.ctl->have_r[0] = c.ctl->have_q[0] = true;
    absorb_r(*c.ctl, c.qr->owned_cols(), c.qr->r_block());
    const Vector myq = c.qr->qtb(c.b);
    for (std::size_t j = 0; j < myq.size(); ++j) c.ctl->q[c.qr->owned_cols()[j]] = myq[j];
    c.store.erase(round_id);
    charge(c, scope, round_id);
    c.deadline = now_ + cfg_.timeout_ticks;
    if (c.ctl->expected_col == partition.total_cols()) enter_gather(c);
    return round_id;
  }

  /// Each node with active coefficients computes and broadcasts its share of
  /// row . x over the columns it owns.
  std::optional<std::size_t> start_prediction(const Vector& row) {
    apply_online_transitions();
    for (const auto& n : nodes_)
      if (n.pred) return std::nullopt;
    const std::size_t id = ++prediction_counter_;
    bool any = false;
    for (auto& n : nodes_) {
      if (!n.online || !n.active || !n.active_partition.block_of(n.id)) continue;
      if (n.active->weights.size() != row.size()) continue;
      const auto* block = n.active_partition.block_of(n.id);
      ops::Scope scope;
      const std::size_t lo = block->cols.front();
      const auto share = compute_share(n.id, row.span().subspan(lo, block->cols.size()),
                                       n.active->weights.span().subspan(lo, block->cols.size()));
      charge(n, scope);
      n.pred.emplace(PendingPrediction{id, now_ + cfg_.timeout_ticks, n.active->round_id, {}});
      n.pred->shares[n.id] = SharePayload{share.tau, n.active->round_id};
      send(n, kBroadcast, id, SharePayload{share.tau, n.active->round_id});
      any = true;
      try_finish_prediction(n);
    }
    if (!any) return std::nullopt;
    return id;
  }

  /// Advances the clock by one tick.
  void tick() {
    apply_online_transitions();
    auto due = in_flight_.equal_range(now_);
    std::vector<Envelope> batch;
    for (auto it = due.first; it != due.second; ++it) batch.push_back(std::move(it->second));
    in_flight_.erase(due.first, due.second);
    std::stable_sort(batch.begin(), batch.end(), [](const Envelope& a, const Envelope& b) {
      return a.recipient != b.recipient ? a.recipient < b.recipient : a.seq < b.seq;
    });
    for (auto& env : batch) deliver(env);
    for (auto& n : nodes_) check_timeouts(n);
    ++now_;
  }

  void advance_to(std::size_t tick_target) {
    while (now_ < tick_target) tick();
  }

  bool idle() const {
    if (!in_flight_.empty()) return false;
    for (const auto& n : nodes_)
      if (n.ctl || n.pred || n.phase != CalibrationPhase::Wait) return false;
    return true;
  }

  /// Ticks until the network is quiet (bounded by a generous cap).
  void run_until_idle() {
    const std::size_t cap = now_ + 16 * (cfg_.timeout_ticks + cfg_.hop_delay) * (nodes_.size() + 4) + 1000;
    while (!idle() && now_ < cap) tick();
  }

  /// Runs one calibration round to completion and returns its record.
  std::optional<RoundRecord> calibrate(const FeatureMatrix& window, const ColumnPartition& partition) {
    auto id = start_calibration(window, partition);
    run_until_idle();
    if (!id) return std::nullopt;
    return log_.rounds.at(*id - 1);
  }

  /// Runs one prediction exchange; per node id, the value each node obtained.
  std::vector<std::optional<double>> predict(const Vector& row) {
    const std::size_t first_event = log_.predictions.size();
    auto id = start_prediction(row);
    run_until_idle();
    std::vector<std::optional<double>> out(nodes_.size());
    if (!id) return out;
    for (std::size_t k = first_event; k < log_.predictions.size(); ++k) {
      const auto& p = log_.predictions[k];
      if (p.prediction_id == *id) out[p.node] = p.value;
    }
    return out;
  }

 private:
  struct StoredBlock {
    std::vector<std::size_t> cols;
    Matrix block;
    Vector b;
  };

  struct Controller {
    explicit Controller(CalibrationRound r) : round(std::move(r)) {}

    CalibrationRound round;
    double tolerance = 0.0;
    std::size_t expected_col = 0;
    Matrix r;
    Vector q;
    std::vector<bool> have_r;
    std::vector<bool> have_q;
    std::optional<std::size_t> reorder_column;
    std::set<std::size_t> early;  // Q columns seen ahead of expected_col
  };

  struct PendingPrediction {
    std::size_t id = 0;
    std::size_t deadline = 0;
    std::size_t coeff_round = 0;
    std::map<NodeId, SharePayload> shares;
  };

  struct Node {
    NodeId id = 0;
    bool online = true;
    CalibrationPhase phase = CalibrationPhase::Wait;
    std::size_t round_id = 0;
    std::size_t finished_round = 0;
    std::map<std::size_t, StoredBlock> store;
    std::optional<QrState> qr;
    Vector b;
    std::size_t deadline = 0;
    std::optional<Controller> ctl;
    std::optional<CoefficientVector> active;
    ColumnPartition active_partition;
    std::optional<PendingPrediction> pred;
  };

  struct Envelope {
    std::size_t seq = 0;
    NodeId recipient = 0;
    SimMessage msg;
  };

  // --- transport ---

  void send(Node& from, NodeId to, std::size_t round_id, Payload payload) {
    SimMessage msg{from.id, to, round_id, now_, std::move(payload)};
    ++log_.counters[from.id].messages_sent;
    count_round_traffic(msg, from.id, true);

    std::vector<NodeId> recipients;
    if (to == kBroadcast) {
      for (const auto& n : nodes_)
        if (n.id != from.id) recipients.push_back(n.id);
    } else {
      recipients.push_back(to);
    }
    for (NodeId r : recipients) {
      std::size_t when = now_ + cfg_.hop_delay + extra_delay(msg, r);
      bool dropped = false;
      for (const auto& f : faults_.faults)
        if (const auto* d = std::get_if<DropMessage>(&f); d && d->match.matches(msg, r)) dropped = true;
      if (cfg_.drop_probability > 0.0 && rng_.uniform() < cfg_.drop_probability) dropped = true;
      if (dropped) {
        log_.messages.push_back({now_, when, msg.kind(), msg.from, r, round_id, Delivery::Dropped});
        continue;
      }
      in_flight_.emplace(when, Envelope{next_seq_++, r, msg});
    }
  }

  std::size_t extra_delay(const SimMessage& msg, NodeId recipient) const {
    const auto* q = std::get_if<QColumnPayload>(&msg.payload);
    if (!q) return 0;
    for (const auto& f : faults_.faults) {
      const auto* re = std::get_if<ReorderColumns>(&f);
      if (!re || re->round != msg.round_id) continue;
      const auto& owners = reorder_owners_.find(msg.round_id);
      if (owners == reorder_owners_.end()) continue;
      const auto [column, next_owner] = owners->second;
      if (q->index == column && recipient != next_owner) return 2 * cfg_.hop_delay + 1;
    }
    return 0;
  }

  // First column c whose owner and successor's owner differ from each other
  // and from the controller; delaying it makes column c + 1 overtake it.
  std::optional<std::size_t> reorder_column_for(const ColumnPartition& p) {
    const std::size_t round_id = log_.rounds.size();
    const NodeId ctl = p.controller();
    for (std::size_t c = 1; c + 1 < p.total_cols(); ++c) {
      if (p.owner(c) != ctl && p.owner(c + 1) != ctl && p.owner(c) != p.owner(c + 1)) {
        reorder_owners_[round_id] = {c, p.owner(c + 1)};
        return c;
      }
    }
    return std::nullopt;
  }

  void deliver(Envelope& env) {
    Node& n = nodes_[env.recipient];
    const SimMessage& msg = env.msg;
    if (!n.online) {
      log_.messages.push_back({msg.tick_sent, now_, msg.kind(), msg.from, env.recipient, msg.round_id, Delivery::Offline});
      return;
    }
    ++log_.counters[n.id].messages_received;
    count_round_traffic(msg, n.id, false);
    std::optional<std::size_t> round;
    if (msg.kind() != MessageKind::PredictShare && msg.round_id >= 1 && msg.round_id <= log_.rounds.size())
      round = msg.round_id;
    ops::Scope scope;
    const bool used = handle(n, msg);
    charge(n, scope, round);
    log_.messages.push_back({msg.tick_sent, now_, msg.kind(), msg.from, env.recipient, msg.round_id,
                             used ? Delivery::Delivered : Delivery::Discarded});
    update_storage(n);
  }

  void count_round_traffic(const SimMessage& msg, NodeId node, bool sent) {
    if (msg.kind() == MessageKind::PredictShare) return;
    if (msg.round_id == 0 || msg.round_id > log_.rounds.size()) return;
    auto& t = log_.rounds[msg.round_id - 1].traffic[node];
    (sent ? t.sent : t.received) += 1;
  }

  void charge(Node& n, const ops::Scope& scope, std::optional<std::size_t> round = std::nullopt) {
    const auto c = scope.count();
    log_.counters[n.id].flops += c;
    if (round) log_.rounds[*round - 1].flops += c;
  }

  void update_storage(const Node& n) {
    std::uint64_t values = 0;
    if (n.qr) values += n.qr->q_block().rows() * n.qr->q_block().cols() + n.qr->r_block().rows() * n.qr->r_block().cols();
    values += n.b.size();
    if (n.ctl) values += n.ctl->r.rows() * n.ctl->r.cols() + n.ctl->q.size();
    if (n.active) values += n.active->weights.size();
    auto& peak = log_.counters[n.id].values_stored_peak;
    peak = std::max(peak, values);
  }

  // --- node behaviour ---

  bool handle(Node& n, const SimMessage& msg) {
    switch (msg.kind()) {
      case MessageKind::LoadData: return on_load_data(n, msg);
      case MessageKind::QColumn: return on_q_column(n, msg);
      case MessageKind::RTransfer:
      case MessageKind::QtbTransfer: return on_gather(n, msg);
      case MessageKind::Coefficients: return on_coefficients(n, msg);
      case MessageKind::PredictShare: return on_share(n, msg);
      case MessageKind::Ack: return on_ack(msg);
    }
    return false;
  }

  bool on_load_data(Node& n, const SimMessage& msg) {
    const auto& p = std::get<LoadDataPayload>(msg.payload);
    if (n.ctl) return false;
    auto it = n.store.find(msg.round_id);
    if (it == n.store.end()) return false;
    if (n.phase != CalibrationPhase::Wait)
      log_.events.push_back({now_, n.id, "abandoned round " + std::to_string(n.round_id) + " for newer round"});
    reset_round_state(n);
    n.round_id = msg.round_id;
    n.qr.emplace(it->second.cols, it->second.block, p.owners.size(), p.pivot_tolerance);
    n.b = it->second.b;
    n.phase = CalibrationPhase::Qr;
    n.deadline = now_ + cfg_.timeout_ticks;
    n.store.erase(n.store.begin(), std::next(it));
    return true;
  }

  bool on_q_column(Node& n, const SimMessage& msg) {
    const auto& p = std::get<QColumnPayload>(msg.payload);
    if (n.ctl) {
      Controller& c = *n.ctl;
      if (msg.round_id != c.round.round_id() || c.round.phase() != CalibrationPhase::Qr) return false;
      if (p.index < c.expected_col || c.early.contains(p.index)) return false;
      // A column overtaken by a later one is out of order; a gap that never
      // fills is caught by the timeout as a missing column.
      if (!c.early.empty() && p.index < *c.early.rbegin()) {
        close_round(n, FailureReason::QOutOfOrder);
        return true;
      }
      n.deadline = now_ + cfg_.timeout_ticks;
      if (p.index != c.expected_col) {
        c.early.insert(p.index);
        return true;
      }
      ++c.expected_col;
      if (c.expected_col == c.round.partition().total_cols()) enter_gather(n);
      return true;
    }
    if (msg.round_id != n.round_id || n.phase != CalibrationPhase::Qr || !n.qr) return false;
    std::vector<QColumn> mine;
    try {
      mine = n.qr->receive_column(p.index, p.values);
    } catch (const Error& e) {
      log_.events.push_back({now_, n.id, std::string("left round ") + std::to_string(n.round_id) + ": " +
                                             std::string(solarmlr::to_string(e.code()))});
      reset_round_state(n);
      return true;
    }
    n.deadline = now_ + cfg_.timeout_ticks;
    for (auto& col : mine) send(n, kBroadcast, n.round_id, QColumnPayload{col.index, std::move(col.values)});
    if (n.qr->phase() == QrPhase::Done) {
      const NodeId ctl = controller_of(n);
      send(n, ctl, n.round_id, RTransferPayload{n.qr->owned_cols(), n.qr->r_block()});
      const Vector q = n.qr->qtb(n.b);
      send(n, ctl, n.round_id, QtbPayload{n.qr->owned_cols(), q.values()});
      n.finished_round = n.round_id;
      reset_round_state(n);
    }
    return true;
  }

  NodeId controller_of(const Node& n) const { return log_.rounds.at(n.round_id - 1).controller; }

  bool on_gather(Node& n, const SimMessage& msg) {
    if (!n.ctl || msg.round_id != n.ctl->round.round_id()) return false;
    Controller& c = *n.ctl;
    const auto& blocks = c.round.partition().blocks();
    std::size_t slot = blocks.size();
    for (std::size_t s = 0; s < blocks.size(); ++s)
      if (blocks[s].node == msg.from) slot = s;
    if (slot == blocks.size()) return false;
    if (const auto* r = std::get_if<RTransferPayload>(&msg.payload)) {
      absorb_r(c, r->cols, r->r_block);
      c.have_r[slot] = true;
    } else {
      const auto& q = std::get<QtbPayload>(msg.payload);
      for (std::size_t j = 0; j < q.cols.size(); ++j) c.q[q.cols[j]] = q.values[j];
      c.have_q[slot] = true;
    }
    n.deadline = now_ + cfg_.timeout_ticks;
    if (c.round.phase() == CalibrationPhase::Svd) try_solve(n);
    return true;
  }

  static void absorb_r(Controller& c, const std::vector<std::size_t>& cols, const Matrix& block) {
    for (std::size_t j = 0; j < cols.size(); ++j) {
      auto src = block.col(j);
      std::copy(src.begin(), src.end(), c.r.col(cols[j]).begin());
    }
  }

  void enter_gather(Node& n) {
    advance_round(n, CalibrationPhase::Svd);
    n.phase = CalibrationPhase::Svd;
    try_solve(n);
  }

  void try_solve(Node& n) {
    Controller& c = *n.ctl;
    for (std::size_t s = 0; s < c.have_r.size(); ++s)
      if (!c.have_r[s] || !c.have_q[s]) return;

    Vector x;
    try {
      const SvdResult svd = svd_square(c.r);
      advance_round(n, CalibrationPhase::Pinv);
      n.phase = CalibrationPhase::Pinv;
      x = pinv_combine(svd.u, svd.sigma, svd.v, c.q);
    } catch (const Error&) {
      close_round(n, FailureReason::RankDeficient);
      return;
    }
    for (const auto& f : faults_.faults)
      if (const auto* z = std::get_if<ZeroCoefficients>(&f); z && z->round == c.round.round_id())
        for (double& v : x.span()) v = 0.0;
    if (all_zero(x)) {
      close_round(n, FailureReason::ZeroCoefficients);
      return;
    }
    advance_round(n, CalibrationPhase::Distribute);
    n.phase = CalibrationPhase::Distribute;
    const std::size_t round_id = c.round.round_id();
    send(n, kBroadcast, round_id, CoefficientsPayload{x.values(), c.round.partition().owners()});
    n.active = CoefficientVector{x, now_, round_id};
    n.active_partition = c.round.partition();
    log_.rounds[round_id - 1].coefficients = x;
    advance_round(n, CalibrationPhase::Done);
    close_round(n, std::nullopt);
  }

  bool on_coefficients(Node& n, const SimMessage& msg) {
    const auto& p = std::get<CoefficientsPayload>(msg.payload);
    bool valid = !p.weights.empty() && p.weights.size() == p.owners.size();
    for (double v : p.weights) valid = valid && std::isfinite(v);
    if (!valid || std::all_of(p.weights.begin(), p.weights.end(), [](double v) { return v == 0.0; })) {
      log_.events.push_back({now_, n.id, "rejected coefficients of round " + std::to_string(msg.round_id)});
      return false;
    }
    if (n.active && n.active->round_id >= msg.round_id) return false;
    n.active = CoefficientVector{Vector(p.weights), now_, msg.round_id};
    n.active_partition = ColumnPartition::from_owners(p.owners);
    send(n, msg.from, msg.round_id, AckPayload{});
    return true;
  }

  bool on_ack(const SimMessage& msg) {
    if (msg.round_id == 0 || msg.round_id > log_.rounds.size()) return false;
    ++log_.rounds[msg.round_id - 1].acks;
    return true;
  }

  bool on_share(Node& n, const SimMessage& msg) {
    if (!n.pred || n.pred->id != msg.round_id) return false;
    n.pred->shares[msg.from] = std::get<SharePayload>(msg.payload);
    try_finish_prediction(n);
    return true;
  }

  void try_finish_prediction(Node& n) {
    PendingPrediction& p = *n.pred;
    const auto& blocks = n.active_partition.blocks();
    for (const auto& b : blocks)
      if (!p.shares.contains(b.node)) return;
    std::vector<PredictionShare> ordered;
    bool consistent = true;
    for (const auto& b : blocks) {
      const auto& s = p.shares.at(b.node);
      consistent = consistent && s.coeff_round == p.coeff_round;
      ordered.push_back({b.node, s.tau});
    }
    std::optional<double> value;
    if (consistent) {
      ops::Scope scope;
      value = combine_shares(ordered);
      charge(n, scope);
    } else {
      log_.events.push_back({now_, n.id, "prediction " + std::to_string(p.id) + " skipped: mixed coefficient rounds"});
    }
    log_.predictions.push_back({p.id, now_, n.id, value, p.coeff_round});
    n.pred.reset();
  }

  void check_timeouts(Node& n) {
    if (!n.online) return;
    if (n.pred && now_ >= n.pred->deadline) {
      log_.events.push_back({now_, n.id, "prediction " + std::to_string(n.pred->id) + " share timeout"});
      log_.predictions.push_back({n.pred->id, now_, n.id, std::nullopt, n.pred->coeff_round});
      n.pred.reset();
    }
    if (n.phase == CalibrationPhase::Wait || now_ < n.deadline) return;
    if (n.ctl) {
      const Controller& c = *n.ctl;
      if (c.round.phase() == CalibrationPhase::Qr) {
        close_round(n, FailureReason::QMissing);
      } else {
        bool r_missing = false;
        for (bool have : c.have_r) r_missing = r_missing || !have;
        close_round(n, r_missing ? FailureReason::RMissing : FailureReason::Timeout);
      }
      return;
    }
    log_.events.push_back({now_, n.id, "round " + std::to_string(n.round_id) + " timed out"});
    reset_round_state(n);
  }

  void advance_round(Node& n, CalibrationPhase next) {
    n.ctl->round.advance(next);
    log_.rounds[n.ctl->round.round_id() - 1].phases.push_back(next);
  }

  void close_round(Node& n, std::optional<FailureReason> reason) {
    Controller& c = *n.ctl;
    if (reason) {
      c.round.fail(*reason);
      log_.rounds[c.round.round_id() - 1].phases.push_back(CalibrationPhase::Failed);
    }
    RoundRecord& rec = log_.rounds[c.round.round_id() - 1];
    rec.end_tick = now_;
    rec.outcome = c.round.phase();
    rec.reason = c.round.failure_reason();
    n.finished_round = c.round.round_id();
    n.ctl.reset();
    reset_round_state(n);
  }

  static void reset_round_state(Node& n) {
    n.phase = CalibrationPhase::Wait;
    n.qr.reset();
    n.b = Vector();
  }

  void apply_online_transitions() {
    for (auto& n : nodes_) {
      bool should_be_online = true;
      for (const auto& f : faults_.faults) {
        if (const auto* off = std::get_if<NodeOffline>(&f);
            off && off->node == n.id && now_ >= off->from_tick && now_ < off->to_tick)
          should_be_online = false;
      }
      if (should_be_online == n.online) continue;
      n.online = should_be_online;
      log_.events.push_back({now_, n.id, n.online ? "online" : "offline"});
      if (!n.online) {
        if (n.ctl) close_round(n, FailureReason::Timeout);
        reset_round_state(n);
        n.pred.reset();
      }
    }
  }

  NetworkConfig cfg_;
  FaultPlan faults_;
  Rng rng_;
  std::vector<Node> nodes_;
  std::multimap<std::size_t, Envelope> in_flight_;
  std::map<std::size_t, std::pair<std::size_t, NodeId>> reorder_owners_;
  std::size_t next_seq_ = 0;
  std::size_t now_ = 0;
  std::size_t prediction_counter_ = 0;
  SimulationLog log_;
};

// --- scheduled runs ------------------------------------------------------------

/// Tick intervals; an epoch advances every measure_interval ticks.
struct Schedule {
  std::size_t measure_interval = 15;
  std::size_t predict_interval = 15;
  std::size_t calibrate_interval = 90;
  std::size_t total_ticks = 24 * 60;

  void validate() const {
    if (measure_interval == 0 || predict_interval == 0 || calibrate_interval == 0)
      throw Error(ErrorCode::Validation, "schedule intervals must be > 0");
  }
};

/// Data the nodes measure: the calibration window and the current feature
/// row at each epoch, plus the column ownership.
struct Workload {
  std::function<FeatureMatrix(std::size_t epoch)> window;
  std::function<Vector(std::size_t epoch)> row;
  ColumnPartition partition;
};

/// Drives a Network over the schedule and returns its log.
inline SimulationLog run(const NetworkConfig& config, const Workload& workload, const Schedule& schedule,
                         const FaultPlan& faults = {}) {
  schedule.validate();
  Network net(config, faults);
  for (std::size_t t = 0; t < schedule.total_ticks; ++t) {
    const std::size_t epoch = t / schedule.measure_interval;
    if (t % schedule.calibrate_interval == 0) net.start_calibration(workload.window(epoch), workload.partition);
    if (workload.row && t % schedule.predict_interval == 0) net.start_prediction(workload.row(epoch));
    net.tick();
  }
  net.run_until_idle();
  return net.log();
}

}  // namespace solarmlr::sim
