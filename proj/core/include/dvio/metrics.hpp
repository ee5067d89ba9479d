#pragma once

#include <string>
#include <vector>

#include "dvio/geometry.hpp"

namespace dvio {

struct AteResult {
  double rmse = 0.0;
  Similarity alignment;
  std::vector<std::pair<double, double>> errors;  // (reference timestamp, aligned position error)
};

/// Position RMSE after aligning the estimate onto the reference. Pairs are associated by nearest
/// timestamp within `tolerance`. Throws DegenerateGeometry with fewer than 3 pairs.
AteResult compute_ate_detailed(const Trajectory& estimated, const Trajectory& reference,
                               AlignmentMode mode = AlignmentMode::SE3, double tolerance = 0.02);
double compute_ate(const Trajectory& estimated, const Trajectory& reference, AlignmentMode mode = AlignmentMode::SE3,
                   double tolerance = 0.02);

struct RpeResult {
  double translation = 0.0;  // m/s
  double rotation = 0.0;     // deg/s
  int pairs = 0;
};

/// Relative pose error over pairs `delta_t` apart, normalized by the actual pair separation.
/// Throws InsufficientSpan when no pair spans `delta_t`.
RpeResult compute_rpe(const Trajectory& estimated, const Trajectory& reference, double delta_t = 1.0,
                      double tolerance = 0.02);

/// Fraction of reference timestamps with an estimate within `tolerance` s whose aligned position error
/// is at most `position_tolerance`. The alignment uses every associated pair (identity with fewer than 3).
double compute_correct_rate(const Trajectory& estimated, const Trajectory& reference, double position_tolerance = 0.3,
                            double tolerance = 0.02);

struct EvalResult {
  double ate_rmse = 0.0;
  double t_rpe_rmse = 0.0;
  double r_rpe_rmse = 0.0;
  double correct_rate = 0.0;
  double cr_tolerance = 0.3;
  bool aligned = false;
  int matched = 0;
  std::vector<std::pair<double, double>> per_frame_errors;
};

struct EvalOptions {
  AlignmentMode alignment = AlignmentMode::SE3;
  double rpe_delta = 1.0;
  double cr_tolerance = 0.3;
  double association_tolerance = 0.02;
};

/// All metrics at once. RPE is reported as 0 when the trajectory is shorter than the RPE delta.
EvalResult evaluate(const Trajectory& estimated, const Trajectory& reference, const EvalOptions& options = {});
std::string to_json(const EvalResult& result, int indent = 2);

}  // namespace dvio
