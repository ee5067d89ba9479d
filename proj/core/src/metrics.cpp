#include "dvio/metrics.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>

#include "dvio/dataset.hpp"
#include "dvio/error.hpp"

namespace dvio {

namespace {

struct Matched {
  std::vector<double> times;  // reference timestamps
  std::vector<PoseSE3> est;
  std::vector<PoseSE3> ref;
};

Matched match(const Trajectory& estimated, const Trajectory& reference, double tolerance) {
  std::vector<double> te, tr;
  for (const auto& s : estimated) te.push_back(s.first);
  for (const auto& s : reference) tr.push_back(s.first);
  Matched m;
  auto pairs = associate(te, tr, tolerance);
  std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) { return a.second < b.second; });
  for (const auto& [i, j] : pairs) {
    m.times.push_back(tr[j]);
    m.est.push_back(estimated[i].second);
    m.ref.push_back(reference[j].second);
  }
  return m;
}

Similarity align(const Matched& m, AlignmentMode mode) {
  std::vector<Vec3> e, r;
  for (size_t k = 0; k < m.est.size(); ++k) {
    e.push_back(m.est[k].translation());
    r.push_back(m.ref[k].translation());
  }
  return align_umeyama(e, r, mode);
}

}  // namespace

AteResult compute_ate_detailed(const Trajectory& estimated, const Trajectory& reference, AlignmentMode mode,
                               double tolerance) {
  const Matched m = match(estimated, reference, tolerance);
  if (m.times.size() < 3)
    throw Error(ErrorCode::DegenerateGeometry,
                "ATE needs at least 3 associated poses, got " + std::to_string(m.times.size()));
  AteResult out;
  out.alignment = align(m, mode);
  double sum = 0.0;
  for (size_t k = 0; k < m.times.size(); ++k) {
    const double e = (out.alignment.apply(m.est[k].translation()) - m.ref[k].translation()).norm();
    out.errors.emplace_back(m.times[k], e);
    sum += e * e;
  }
  out.rmse = std::sqrt(sum / static_cast<double>(m.times.size()));
  return out;
}

double compute_ate(const Trajectory& estimated, const Trajectory& reference, AlignmentMode mode, double tolerance) {
  return compute_ate_detailed(estimated, reference, mode, tolerance).rmse;
}

RpeResult compute_rpe(const Trajectory& estimated, const Trajectory& reference, double delta_t, double tolerance) {
  const Matched m = match(estimated, reference, tolerance);
  RpeResult out;
  double st = 0.0, sr = 0.0;
  size_t j = 0;
  for (size_t i = 0; i < m.times.size(); ++i) {
    j = std::max(j, i + 1);
    while (j < m.times.size() && m.times[j] - m.times[i] < delta_t) ++j;
    if (j >= m.times.size()) break;
    const double dt = m.times[j] - m.times[i];
    const PoseSE3 rel_ref = m.ref[i].inverse() * m.ref[j];
    const PoseSE3 rel_est = m.est[i].inverse() * m.est[j];
    const PoseSE3 err = rel_ref.inverse() * rel_est;
    const double et = err.translation().norm() / dt;
    const double er = rotation_angle(err.rotation()) * 180.0 / M_PI / dt;
    st += et * et;
    sr += er * er;
    ++out.pairs;
  }
  if (out.pairs == 0) {
    const double span = m.times.empty() ? 0.0 : m.times.back() - m.times.front();
    throw Error(ErrorCode::InsufficientSpan,
                "matched span " + std::to_string(span) + " s is shorter than the RPE delta " + std::to_string(delta_t));
  }
  out.translation = std::sqrt(st / out.pairs);
  out.rotation = std::sqrt(sr / out.pairs);
  return out;
}

double compute_correct_rate(const Trajectory& estimated, const Trajectory& reference, double position_tolerance,
                            double tolerance) {
  if (reference.empty()) return 0.0;
  const Matched m = match(estimated, reference, tolerance);
  const Similarity a = m.times.size() >= 3 ? align(m, AlignmentMode::SE3) : Similarity{};
  int correct = 0;
  for (size_t k = 0; k < m.times.size(); ++k)
    if ((a.apply(m.est[k].translation()) - m.ref[k].translation()).norm() <= position_tolerance) ++correct;
  return static_cast<double>(correct) / static_cast<double>(reference.size());
}

EvalResult evaluate(const Trajectory& estimated, const Trajectory& reference, const EvalOptions& options) {
  EvalResult r;
  r.cr_tolerance = options.cr_tolerance;
  const AteResult ate = compute_ate_detailed(estimated, reference, options.alignment, options.association_tolerance);
  r.ate_rmse = ate.rmse;
  r.aligned = true;
  r.matched = static_cast<int>(ate.errors.size());
  r.per_frame_errors = ate.errors;
  try {
    const RpeResult rpe = compute_rpe(estimated, reference, options.rpe_delta, options.association_tolerance);
    r.t_rpe_rmse = rpe.translation;
    r.r_rpe_rmse = rpe.rotation;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::InsufficientSpan) throw;
  }
  r.correct_rate =
      compute_correct_rate(estimated, reference, options.cr_tolerance, options.association_tolerance);
  return r;
}

std::string to_json(const EvalResult& result, int indent) {
  nlohmann::json j;
  j["ate_rmse"] = result.ate_rmse;
  j["t_rpe"] = result.t_rpe_rmse;
  j["r_rpe"] = result.r_rpe_rmse;
  j["correct_rate"] = result.correct_rate;
  j["cr_tolerance"] = result.cr_tolerance;
  j["aligned"] = result.aligned;
  j["matched"] = result.matched;
  auto& pf = j["per_frame_errors"] = nlohmann::json::array();
  for (const auto& [t, e] : result.per_frame_errors) pf.push_back({{"timestamp", t}, {"error", e}});
  return j.dump(indent);
}

}  // namespace dvio
