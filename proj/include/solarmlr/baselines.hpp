#pragma once

#include <array>
#include <cstddef>

#include "solarmlr/error.hpp"
#include "solarmlr/opcount.hpp"

namespace solarmlr {

inline constexpr double kDefaultEwmaAlpha = 0.15;

/// Persistence: tomorrow looks like today.
inline double persistence_predict(double x_t) { return x_t; }

struct EwmaState {
  double alpha = kDefaultEwmaAlpha;
  double current = 0.0;
  bool initialized = false;
};

/// current <- alpha * current + (1 - alpha) * x_t, seeded with the first
/// observation. Returns the prediction for t + lead.
inline double ewma_update(EwmaState& state, double x_t) {
  if (!(state.alpha >= 0.0 && state.alpha <= 1.0)) throw Error(ErrorCode::InvalidArgument, "alpha must be in [0, 1]");
  if (!state.initialized) {
    state.current = x_t;
    state.initialized = true;
    return state.current;
  }
  const double keep = 1.0 - state.alpha;  // fixed per run, not counted
  state.current = state.alpha * state.current + keep * x_t;
  ops::add(3);
  return state.current;
}

/// Hour-of-day EWMA: one independent recursion per hour, each fed only the
/// observations from its own hour on successive days.
class HourlyEwma {
 public:
  explicit HourlyEwma(double alpha = kDefaultEwmaAlpha) {
    for (auto& s : states_) s.alpha = alpha;
  }

  double update(std::size_t hour, double x) { return ewma_update(states_.at(hour), x); }
  double predict(std::size_t hour) const { return states_.at(hour).current; }
  bool initialized(std::size_t hour) const { return states_.at(hour).initialized; }

 private:
  std::array<EwmaState, 24> states_{};
};

}  // namespace solarmlr
