#pragma once

// Crash indicators: the lane-change ACC/AEB surrogate and analytic scenarios
// with known probabilities.

#include <functional>
#include <string>
#include <vector>

#include "raresim/accel.hpp"
#include "raresim/monoset.hpp"
#include "raresim/tgmm.hpp"

namespace raresim {

/// Cut-in event with a closing lead vehicle.
struct LaneChangeEvent {
  double v = 0.0;      ///< lead speed, m/s
  double ttc = 0.0;    ///< time to collision, s
  double range = 0.0;  ///< gap, m
};

struct AVConfig {
  double acc_time_gap = 1.4;      ///< s
  double acc_speed_gain = 0.8;    ///< 1/s, on range rate
  double acc_spacing_gain = 0.25; ///< 1/s^2, on spacing error
  double aeb_ttc_trigger = 1.2;   ///< s
  double aeb_decel = 6.0;         ///< m/s^2, magnitude
  double max_decel = 8.0;         ///< m/s^2, magnitude
  double reaction_delay = 0.2;    ///< s, between AEB trigger and braking
  double dt = 0.01;               ///< s
  double horizon = 15.0;          ///< s
  double crash_range = 0.1;       ///< m

  /// Throws InputError naming the first broken constraint.
  void validate() const;
};

/// Standstill spacing added to the ACC desired gap, m.
inline constexpr double kAccStandstill = 2.0;
/// Upper clamp of the ACC command, m/s^2.
inline constexpr double kAccMaxAccel = 2.0;

/// -range / range_rate. Throws ContractViolation unless range > 0 and
/// range_rate < 0.
double ttc_from_range_rate(double range, double range_rate);

/// Fixed-step two-vehicle longitudinal simulation. The lead holds speed v;
/// the follower starts `range` behind at v + range / ttc. ACC tracks
/// range = v * time_gap + standstill; AEB brakes at aeb_decel once the
/// instantaneous TTC has stayed below the trigger for reaction_delay, and
/// releases when the gap stops closing. Returns 1 iff the gap reaches
/// crash_range within the horizon.
int simulate(const LaneChangeEvent& e, const AVConfig& cfg);

/// Model coordinates of the lane-change model: (v, 1/ttc, 1/range).
VectorXd lane_change_to_model(const LaneChangeEvent& e);
LaneChangeEvent lane_change_from_model(const VectorXd& x);

struct MonotoneViolation {
  VectorXd point;
  int coordinate = 0;
  VectorXd moved;  ///< the point after the membership-preserving move
};

/// Samples `probes` points uniformly in `envelope` (finite bounds). Rare
/// points are moved up, safe points down, along each canonical coordinate by
/// 1%, 5% and 20% of the envelope width (clipped to the envelope); every move
/// that changes the indicator value is reported.
std::vector<MonotoneViolation> check_monotone(const Indicator& indicator, const DirectionMask& mask,
                                              const Rect& envelope, int probes, Rng& rng);

/// Indicator, its direction mask and, when known, the exact probability
/// under a supplied model.
struct Scenario {
  std::string kind;
  Indicator indicator;
  DirectionMask mask;
  std::function<double(const TruncatedGMM&)> truth;  ///< empty when unknown
};

struct AnalyticParams {
  VectorXd weights;   ///< halfspace: w in {w . x >= threshold}
  double threshold = 0.0;
  VectorXd corner;    ///< orthant: {x >= corner}
};

/// kind is "halfspace", "orthant" or "mixture-tail".
///   halfspace: exact for an unbounded support (any d), for a single nonzero
///     weight (any d), and by tensor Gauss-Legendre integration for d = 2.
///   orthant: exact rectangle probabilities, any d.
///   mixture-tail: {x >= threshold} for d = 1, summing component tails.
/// Throws InputError for unknown kinds or bad parameters; the truth function
/// throws InputError for an unsupported (kind, d) combination.
Scenario analytic_scenario(const std::string& kind, const AnalyticParams& params);

/// Union of monotone scenarios sharing a direction mask; truth unknown.
Scenario union_scenario(const std::vector<Scenario>& members);

/// Lane-change simulator on model coordinates (v, 1/ttc, 1/range) with mask
/// (-1, +1, +1).
Scenario lane_change_scenario(const AVConfig& cfg);

}  // namespace raresim
