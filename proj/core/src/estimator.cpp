#include "dvio/estimator.hpp"

#include <Eigen/Cholesky>
#include <Eigen/SVD>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "dvio/error.hpp"

namespace dvio {

using namespace imu_index;

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

// Huber on a squared norm: returns rho(s) and writes rho'(s).
double huber(double s, double delta, double* weight) {
  const double d2 = delta * delta;
  if (s <= d2) {
    *weight = 1.0;
    return s;
  }
  const double r = std::sqrt(s);
  *weight = delta / r;
  return 2.0 * delta * r - d2;
}

}  // namespace

bool keyframe_decision(double parallax, int tracked_count, const KeyframePolicy& policy) {
  return parallax > policy.parallax_px || tracked_count < policy.count_floor;
}

void EstimatorConfig::validate() const {
  if (window_size < 2) throw Error(ErrorCode::ConfigInvalid, "estimator.window_size must be >= 2");
  if (!(pixel_sigma > 0.0) || !(huber_scale > 0.0))
    throw Error(ErrorCode::ConfigInvalid, "estimator.pixel_sigma and huber_scale must be > 0");
  if (!(depth_sigma > 0.0) || !(depth_sigma_floor > 0.0))
    throw Error(ErrorCode::ConfigInvalid, "estimator.depth_sigma must be > 0");
  if (max_iterations < 1) throw Error(ErrorCode::ConfigInvalid, "estimator.max_iterations must be >= 1");
  if (min_stable_features < 0) throw Error(ErrorCode::ConfigInvalid, "estimator.min_stable_features must be >= 0");
  consistency.validate();
}

SlidingWindowEstimator::SlidingWindowEstimator(const EstimatorConfig& cfg, const PinholeCamera& cam,
                                               const PoseSE3& body_from_camera)
    : cfg_(cfg), cam_(cam), body_from_camera_(body_from_camera) {
  cfg_.validate();
  cam_.validate();
}

void SlidingWindowEstimator::initialize(const NavState& state) {
  initial_state_ = state;
  initialized_ = true;
  frames_.clear();
  features_.clear();
}

int SlidingWindowEstimator::slot_of(FrameIndex index) const {
  for (size_t i = 0; i < frames_.size(); ++i)
    if (frames_[i].frame_index == index) return static_cast<int>(i);
  return -1;
}

bool SlidingWindowEstimator::usable(const WindowFeature& f) const {
  return !f.dynamic() && f.depth_initialized && f.observations.size() >= 2;
}

std::optional<Vec3> SlidingWindowEstimator::world_point(const WindowFeature& f) const {
  if (!f.depth_initialized || f.observations.empty()) return std::nullopt;
  const int host = slot_of(f.observations.front().frame_index);
  if (host < 0) return std::nullopt;
  const Vec3 p_c = cam_.normalized(f.observations.front().pixel) / f.inverse_depth;
  return frames_[host].pose * (body_from_camera_ * p_c);
}

void SlidingWindowEstimator::remove_frame(size_t slot) {
  const FrameIndex idx = frames_[slot].frame_index;
  for (auto it = features_.begin(); it != features_.end();) {
    WindowFeature& f = it->second;
    auto obs_it = std::find_if(f.observations.begin(), f.observations.end(),
                               [idx](const FeatureObservation& o) { return o.frame_index == idx; });
    if (obs_it == f.observations.end()) {
      ++it;
      continue;
    }
    const bool was_host = obs_it == f.observations.begin();
    const std::optional<Vec3> pw = was_host ? world_point(f) : std::nullopt;
    f.observations.erase(obs_it);
    if (f.observations.empty()) {
      it = features_.erase(it);
      continue;
    }
    if (was_host) {
      f.depth_initialized = false;
      const int new_host = slot_of(f.observations.front().frame_index);
      if (pw && new_host >= 0) {
        const PoseSE3 cam_from_world = (frames_[new_host].pose * body_from_camera_).inverse();
        const double z = (cam_from_world * *pw).z();
        if (z > 0.05) {
          f.inverse_depth = 1.0 / z;
          f.depth_initialized = true;
        }
      }
    }
    ++it;
  }
  frames_.erase(frames_.begin() + static_cast<std::ptrdiff_t>(slot));
  if (!frames_.empty()) frames_.front().delta_from_prev.reset();
}

void SlidingWindowEstimator::make_room() {
  // Caller merges the dropped trailing frame's IMU span when needed.
  if (frames_.size() >= 2 && !frames_.back().is_keyframe)
    remove_frame(frames_.size() - 1);
  else
    remove_frame(0);
}

void SlidingWindowEstimator::add_observations(const TrackingInput& input) {
  for (const auto& o : input.observations) {
    WindowFeature& f = features_[o.feature_id];
    f.feature_id = o.feature_id;
    FeatureObservation obs = o;
    obs.frame_index = input.frame_index;
    if (!cfg_.use_depth) obs.depth = 0.0;
    f.observations.push_back(obs);
    if (f.status == FeatureStatus::New && f.observations.size() >= 2) f.status = FeatureStatus::Stable;
  }
}

int SlidingWindowEstimator::initialize_depths() {
  int count = 0;
  const double min_angle = cfg_.min_triangulation_angle_deg * M_PI / 180.0;
  for (auto& [id, f] : features_) {
    if (f.depth_initialized || f.observations.empty()) continue;
    const FeatureObservation& h = f.observations.front();
    const int hs = slot_of(h.frame_index);
    if (hs < 0) continue;
    if (h.depth > 0.0) {
      f.inverse_depth = 1.0 / h.depth;
      f.depth_initialized = true;
      ++count;
      continue;
    }
    const PoseSE3 world_from_host = frames_[hs].pose * body_from_camera_;
    const PoseSE3 host_from_world = world_from_host.inverse();
    bool done = false;
    for (size_t k = 1; k < f.observations.size() && !done; ++k) {
      const auto& o = f.observations[k];
      if (!(o.depth > 0.0)) continue;
      const int s = slot_of(o.frame_index);
      if (s < 0) continue;
      const Vec3 pw = frames_[s].pose * (body_from_camera_ * cam_.unproject(o.pixel, o.depth));
      const double z = (host_from_world * pw).z();
      if (z > 0.05) {
        f.inverse_depth = 1.0 / z;
        f.depth_initialized = done = true;
      }
    }
    if (done) {
      ++count;
      continue;
    }
    if (f.observations.size() < 2) continue;
    // Multi-view linear triangulation in the host camera frame.
    Eigen::MatrixXd A(2 * f.observations.size(), 4);
    const Vec3 bh = cam_.normalized(h.pixel).normalized();
    double max_angle = 0.0;
    for (size_t k = 0; k < f.observations.size(); ++k) {
      const auto& o = f.observations[k];
      const int s = slot_of(o.frame_index);
      const PoseSE3 ck_from_host = ((frames_[s].pose * body_from_camera_).inverse()) * world_from_host;
      Eigen::Matrix<double, 3, 4> P;
      P.leftCols<3>() = ck_from_host.rotation_matrix();
      P.col(3) = ck_from_host.translation();
      const Vec3 b = cam_.normalized(o.pixel);
      A.row(2 * k) = b.x() * P.row(2) - P.row(0);
      A.row(2 * k + 1) = b.y() * P.row(2) - P.row(1);
      const Vec3 bk_in_host = ck_from_host.rotation().inverse() * b.normalized();
      max_angle = std::max(max_angle, std::acos(std::clamp(bk_in_host.dot(bh), -1.0, 1.0)));
    }
    if (max_angle < min_angle) continue;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
    const Eigen::Vector4d X = svd.matrixV().col(3);
    if (std::abs(X(3)) < 1e-12) continue;
    const double z = X(2) / X(3);
    if (z > 0.05 && std::isfinite(z)) {
      f.inverse_depth = 1.0 / z;
      f.depth_initialized = true;
      ++count;
    }
  }
  return count;
}

void SlidingWindowEstimator::run_consistency_check(bool /*newest_is_prediction*/) {
  reports_.clear();
  if (!cfg_.consistency_check) return;
  std::vector<PosedObservation> posed;
  for (auto& [id, f] : features_) {
    if (f.consistency.semantic_dynamic || f.observations.size() < 2) continue;
    posed.clear();
    for (const auto& o : f.observations) {
      const int s = slot_of(o.frame_index);
      posed.push_back({frames_[s].pose, o.pixel, o.depth});
    }
    ResidualReport report;
    try {
      report = reprojection_residual(id, posed, cam_, body_from_camera_, world_point(f));
    } catch (const Error&) {
      continue;
    }
    switch (check_and_recycle(report, f.consistency, cfg_.consistency)) {
      case ConsistencyVerdict::Dynamic:
        f.status = FeatureStatus::Dynamic;
        ++f.mcc_flag_count;
        flagged_mcc_.insert(id);
        break;
      case ConsistencyVerdict::Recycled:
        f.status = FeatureStatus::Recycled;
        break;
      case ConsistencyVerdict::Stable:
        break;
    }
    reports_.push_back(report);
  }
}

double SlidingWindowEstimator::parallax_to_last_keyframe(int* tracked) const {
  *tracked = 0;
  const size_t n = frames_.size();
  if (n < 2) return 0.0;
  int kf = -1;
  for (int s = static_cast<int>(n) - 2; s >= 0; --s)
    if (frames_[s].is_keyframe) {
      kf = s;
      break;
    }
  if (kf < 0) kf = 0;
  const FrameIndex newest = frames_.back().frame_index;
  const FrameIndex prev = frames_[n - 2].frame_index;
  const FrameIndex key = frames_[kf].frame_index;
  double sum = 0.0;
  int count = 0;
  for (const auto& [id, f] : features_) {
    if (f.dynamic() || f.observations.size() < 2) continue;
    const auto& last = f.observations.back();
    if (last.frame_index != newest) continue;
    const auto& before = f.observations[f.observations.size() - 2];
    if (before.frame_index == prev) ++*tracked;
    for (const auto& o : f.observations)
      if (o.frame_index == key) {
        sum += (last.pixel - o.pixel).norm();
        ++count;
        break;
      }
  }
  return count > 0 ? sum / count : 0.0;
}

void SlidingWindowEstimator::refresh_preintegration() {
  for (size_t k = 1; k < frames_.size(); ++k) {
    auto& d = frames_[k].delta_from_prev;
    if (!d) continue;
    const ImuBias& b = frames_[k - 1].bias;
    if ((b.accel - d->bias_ref().accel).norm() > cfg_.bias_reintegrate_accel ||
        (b.gyro - d->bias_ref().gyro).norm() > cfg_.bias_reintegrate_gyro)
      d = d->reintegrated(b);
  }
}

FrameResult SlidingWindowEstimator::process_frame(const TrackingInput& input,
                                                  const std::unordered_set<FeatureId>& semantic_dynamic,
                                                  const PreintegratedDelta* delta) {
  if (!initialized_) throw Error(ErrorCode::ConfigInvalid, "estimator used before initialize()");
  FrameResult res;
  res.frame_index = input.frame_index;
  res.timestamp = input.timestamp;
  if (!frames_.empty() && !(input.timestamp > frames_.back().timestamp))
    throw Error(ErrorCode::NonMonotonicTimestamp, "frame timestamps must increase");

  std::optional<PreintegratedDelta> span;
  if (cfg_.use_imu && delta) span = *delta;

  if (!frames_.empty() && static_cast<int>(frames_.size()) >= cfg_.window_size) {
    const bool drop_trailing = frames_.size() >= 2 && !frames_.back().is_keyframe;
    if (drop_trailing && span && frames_.back().delta_from_prev) {
      PreintegratedDelta merged = *frames_.back().delta_from_prev;
      merged.append(span->samples(), 1e300);
      span = std::move(merged);
    }
    make_room();
  }

  FrameState frame;
  frame.frame_index = input.frame_index;
  frame.timestamp = input.timestamp;
  if (frames_.empty()) {
    frame.set_nav(initial_state_);
  } else {
    const FrameState& last = frames_.back();
    if (span) {
      if ((last.bias.accel - span->bias_ref().accel).norm() > 1e-9 ||
          (last.bias.gyro - span->bias_ref().gyro).norm() > 1e-9)
        span = span->reintegrated(last.bias);
      frame.set_nav(predict_pose(last.nav(), *span, cfg_.gravity));
      frame.delta_from_prev = span;
    } else if (frames_.size() >= 2) {
      // Constant velocity in SE(3), scaled to the new interval.
      const FrameState& prev = frames_[frames_.size() - 2];
      const PoseSE3 rel = prev.pose.inverse() * last.pose;
      const double ratio = (input.timestamp - last.timestamp) / std::max(1e-9, last.timestamp - prev.timestamp);
      const PoseSE3 step(so3_exp(so3_log(rel.rotation()) * ratio), rel.translation() * ratio);
      frame.set_nav({last.pose * step, last.velocity, last.bias});
    } else {
      frame.set_nav(last.nav());
    }
  }
  const bool first = frames_.empty();
  frames_.push_back(frame);
  add_observations(input);
  for (FeatureId id : semantic_dynamic) {
    auto it = features_.find(id);
    if (it == features_.end()) continue;
    it->second.consistency.semantic_dynamic = true;
    it->second.status = FeatureStatus::Dynamic;
    flagged_semantic_.insert(id);
  }
  initialize_depths();

  if (!first) {
    const bool mcc_first = cfg_.use_imu;
    auto t0 = Clock::now();
    if (mcc_first) run_consistency_check(true);
    res.consistency_ms = ms_since(t0);

    t0 = Clock::now();
    try {
      res.summary = optimize();
      res.optimized = true;
      if (!mcc_first) {
        const auto t1 = Clock::now();
        const size_t before = flagged_mcc_.size();
        run_consistency_check(false);
        res.consistency_ms += ms_since(t1);
        if (flagged_mcc_.size() != before) res.summary = optimize();
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::InsufficientConstraints) throw;
      res.insufficient_constraints = true;
    }
    res.optimization_ms = ms_since(t0);
  }

  int tracked = 0;
  res.parallax = parallax_to_last_keyframe(&tracked);
  frames_.back().is_keyframe = first || keyframe_decision(res.parallax, tracked, cfg_.keyframe);
  res.keyframe = frames_.back().is_keyframe;
  res.state = frames_.back().nav();
  for (const auto& [id, f] : features_) {
    if (f.consistency.semantic_dynamic)
      ++res.semantic_dynamic;
    else if (f.consistency.mcc_dynamic)
      ++res.mcc_dynamic;
    else if (usable(f))
      ++res.usable_features;
    if (f.status == FeatureStatus::Recycled) ++res.recycled;
  }
  return res;
}

double SlidingWindowEstimator::cost_of(const std::vector<NavState>& states, const std::vector<double>& inv_depths,
                                       const std::vector<const WindowFeature*>& feats) const {
  double cost = 0.0;
  double w = 0.0;
  for (size_t l = 0; l < feats.size(); ++l) {
    const WindowFeature& f = *feats[l];
    const double lambda = inv_depths[l];
    if (!(lambda > 0.0) || !std::isfinite(lambda)) return std::numeric_limits<double>::infinity();
    const auto& h = f.observations.front();
    const int hs = slot_of(h.frame_index);
    const Vec3 bearing = cam_.normalized(h.pixel);
    if (cfg_.use_depth && h.depth > 0.0) {
      const double sigma = std::max(cfg_.depth_sigma_floor, cfg_.depth_sigma * h.depth * h.depth);
      const double r = (1.0 / lambda - h.depth) / sigma;
      cost += huber(r * r, cfg_.huber_scale, &w);
    }
    for (size_t k = 1; k < f.observations.size(); ++k) {
      const auto& o = f.observations[k];
      const int s = slot_of(o.frame_index);
      const ReprojectionFactor rf = evaluate_reprojection(states[hs].pose, states[s].pose, body_from_camera_, cam_,
                                                          bearing, lambda, o.pixel);
      if (!rf.valid) continue;
      const Vec2 r = rf.residual / cfg_.pixel_sigma;
      cost += huber(r.squaredNorm(), cfg_.huber_scale, &w);
      if (cfg_.use_depth && o.depth > 0.0) {
        const double sigma = std::max(cfg_.depth_sigma_floor, cfg_.depth_sigma * o.depth * o.depth);
        const double rd = (rf.point_target.z() - o.depth) / sigma;
        cost += huber(rd * rd, cfg_.huber_scale, &w);
      }
    }
  }
  if (cfg_.use_imu) {
    for (size_t k = 1; k < frames_.size(); ++k) {
      const auto& d = frames_[k].delta_from_prev;
      if (!d) continue;
      const ImuFactor f = evaluate_imu_factor(states[k - 1], states[k], *d, cfg_.gravity);
      cost += (imu_sqrt_information(*d) * f.residual).squaredNorm();
    }
  }
  return 0.5 * cost;
}

double SlidingWindowEstimator::evaluate_cost() const {
  std::vector<NavState> states;
  for (const auto& f : frames_) states.push_back(f.nav());
  std::vector<const WindowFeature*> feats;
  std::vector<double> lambdas;
  for (const auto& [id, f] : features_)
    if (usable(f)) {
      feats.push_back(&f);
      lambdas.push_back(f.inverse_depth);
    }
  return cost_of(states, lambdas, feats);
}

OptimizationSummary SlidingWindowEstimator::optimize() {
  const int n_frames = static_cast<int>(frames_.size());
  if (n_frames < 2) throw Error(ErrorCode::InsufficientConstraints, "window holds fewer than 2 frames");
  if (cfg_.use_imu) refresh_preintegration();

  std::vector<const WindowFeature*> feats;
  std::vector<WindowFeature*> feats_mut;
  std::vector<double> lambdas;
  for (auto& [id, f] : features_)
    if (usable(f)) {
      feats.push_back(&f);
      feats_mut.push_back(&f);
      lambdas.push_back(f.inverse_depth);
    }
  if (static_cast<int>(feats.size()) < cfg_.min_stable_features)
    throw Error(ErrorCode::InsufficientConstraints,
                "only " + std::to_string(feats.size()) + " usable features in the window");

  // Parameter layout: the oldest pose is the gauge and stays fixed.
  const bool imu = cfg_.use_imu;
  std::vector<int> pose_off(n_frames, -1), vb_off(n_frames, -1);
  int n = 0;
  for (int k = 0; k < n_frames; ++k) {
    if (k > 0) {
      pose_off[k] = n;
      n += 6;
    }
    if (imu) {
      vb_off[k] = n;
      n += 9;
    }
  }
  // Feature -> slot of each observation.
  std::vector<std::vector<int>> obs_slots(feats.size());
  for (size_t l = 0; l < feats.size(); ++l)
    for (const auto& o : feats[l]->observations) obs_slots[l].push_back(slot_of(o.frame_index));

  std::vector<Mat15x15> sqrt_info(n_frames, Mat15x15::Zero());
  if (imu)
    for (int k = 1; k < n_frames; ++k)
      if (frames_[k].delta_from_prev) sqrt_info[k] = imu_sqrt_information(*frames_[k].delta_from_prev);

  std::vector<NavState> states;
  for (const auto& f : frames_) states.push_back(f.nav());

  const size_t L = feats.size();
  Eigen::MatrixXd Hpp(n, n);
  Eigen::VectorXd gp(n);
  std::vector<double> Hll(L), gl(L);
  std::vector<Eigen::VectorXd> Hpl(L);
  std::vector<std::vector<int>> touched(L);  // pose offsets touched by each feature

  auto linearize = [&]() {
    Hpp.setZero();
    gp.setZero();
    for (size_t l = 0; l < L; ++l) {
      const WindowFeature& f = *feats[l];
      const double lambda = lambdas[l];
      Hll[l] = 0.0;
      gl[l] = 0.0;
      Hpl[l] = Eigen::VectorXd::Zero(n);
      touched[l].clear();
      const auto& h = f.observations.front();
      const int hs = obs_slots[l][0];
      const int oh = pose_off[hs];
      if (oh >= 0) touched[l].push_back(oh);
      const Vec3 bearing = cam_.normalized(h.pixel);
      double w = 0.0;
      if (cfg_.use_depth && h.depth > 0.0) {
        const double sigma = std::max(cfg_.depth_sigma_floor, cfg_.depth_sigma * h.depth * h.depth);
        const double r = (1.0 / lambda - h.depth) / sigma;
        const double j = -1.0 / (lambda * lambda) / sigma;
        huber(r * r, cfg_.huber_scale, &w);
        Hll[l] += w * j * j;
        gl[l] += w * j * r;
      }
      for (size_t k = 1; k < f.observations.size(); ++k) {
        const auto& o = f.observations[k];
        const int s = obs_slots[l][k];
        const int ot = pose_off[s];
        if (ot >= 0) touched[l].push_back(ot);
        const ReprojectionFactor rf = evaluate_reprojection(states[hs].pose, states[s].pose, body_from_camera_,
                                                            cam_, bearing, lambda, o.pixel);
        if (!rf.valid) continue;
        const double inv_sigma = 1.0 / cfg_.pixel_sigma;
        const Vec2 r = rf.residual * inv_sigma;
        huber(r.squaredNorm(), cfg_.huber_scale, &w);
        const Mat2x6 Jh = rf.jacobian_host * inv_sigma;
        const Mat2x6 Jt = rf.jacobian_target * inv_sigma;
        const Vec2 Jl = rf.jacobian_inverse_depth * inv_sigma;
        if (oh >= 0) {
          Hpp.block<6, 6>(oh, oh) += w * Jh.transpose() * Jh;
          gp.segment<6>(oh) += w * Jh.transpose() * r;
          Hpl[l].segment<6>(oh) += w * Jh.transpose() * Jl;
        }
        if (ot >= 0) {
          Hpp.block<6, 6>(ot, ot) += w * Jt.transpose() * Jt;
          gp.segment<6>(ot) += w * Jt.transpose() * r;
          Hpl[l].segment<6>(ot) += w * Jt.transpose() * Jl;
        }
        if (oh >= 0 && ot >= 0) {
          const Eigen::Matrix<double, 6, 6> c = w * Jh.transpose() * Jt;
          Hpp.block<6, 6>(oh, ot) += c;
          Hpp.block<6, 6>(ot, oh) += c.transpose();
        }
        Hll[l] += w * Jl.squaredNorm();
        gl[l] += w * Jl.dot(r);

        if (cfg_.use_depth && o.depth > 0.0) {
          const double sigma = std::max(cfg_.depth_sigma_floor, cfg_.depth_sigma * o.depth * o.depth);
          const double rd = (rf.point_target.z() - o.depth) / sigma;
          huber(rd * rd, cfg_.huber_scale, &w);
          const Eigen::Matrix<double, 1, 6> jh = rf.depth_jacobian_host / sigma;
          const Eigen::Matrix<double, 1, 6> jt = rf.depth_jacobian_target / sigma;
          const double jl = rf.depth_jacobian_inverse_depth / sigma;
          if (oh >= 0) {
            Hpp.block<6, 6>(oh, oh) += w * jh.transpose() * jh;
            gp.segment<6>(oh) += w * jh.transpose() * rd;
            Hpl[l].segment<6>(oh) += w * jh.transpose() * jl;
          }
          if (ot >= 0) {
            Hpp.block<6, 6>(ot, ot) += w * jt.transpose() * jt;
            gp.segment<6>(ot) += w * jt.transpose() * rd;
            Hpl[l].segment<6>(ot) += w * jt.transpose() * jl;
          }
          if (oh >= 0 && ot >= 0) {
            const Eigen::Matrix<double, 6, 6> c = w * jh.transpose() * jt;
            Hpp.block<6, 6>(oh, ot) += c;
            Hpp.block<6, 6>(ot, oh) += c.transpose();
          }
          Hll[l] += w * jl * jl;
          gl[l] += w * jl * rd;
        }
      }
      std::sort(touched[l].begin(), touched[l].end());
      touched[l].erase(std::unique(touched[l].begin(), touched[l].end()), touched[l].end());
    }
    if (imu) {
      for (int k = 1; k < n_frames; ++k) {
        const auto& d = frames_[k].delta_from_prev;
        if (!d) continue;
        const ImuFactor f = evaluate_imu_factor(states[k - 1], states[k], *d, cfg_.gravity);
        const Mat15x15& S = sqrt_info[k];
        const Vec15 r = S * f.residual;
        const Mat15x15 Ji = S * f.jacobian_i;
        const Mat15x15 Jj = S * f.jacobian_j;
        // (param offset, jacobian, first column, width)
        struct Seg {
          int off;
          const Mat15x15* J;
          int col;
          int width;
        };
        Seg segs[4];
        int ns = 0;
        if (pose_off[k - 1] >= 0) segs[ns++] = {pose_off[k - 1], &Ji, 0, 6};
        segs[ns++] = {vb_off[k - 1], &Ji, 6, 9};
        if (pose_off[k] >= 0) segs[ns++] = {pose_off[k], &Jj, 0, 6};
        segs[ns++] = {vb_off[k], &Jj, 6, 9};
        for (int a = 0; a < ns; ++a) {
          const auto Ja = segs[a].J->middleCols(segs[a].col, segs[a].width);
          gp.segment(segs[a].off, segs[a].width) += Ja.transpose() * r;
          for (int b = 0; b < ns; ++b) {
            const auto Jb = segs[b].J->middleCols(segs[b].col, segs[b].width);
            Hpp.block(segs[a].off, segs[b].off, segs[a].width, segs[b].width) += Ja.transpose() * Jb;
          }
        }
      }
    }
  };

  OptimizationSummary summary;
  double cost = cost_of(states, lambdas, feats);
  summary.initial_cost = cost;
  summary.cost_history.push_back(cost);
  summary.residual_features = static_cast<int>(L);

  double mu = cfg_.initial_damping;
  double nu = 2.0;
  bool need_linearize = true;
  Eigen::VectorXd dp(n);
  std::vector<double> dl(L);

  for (int it = 0; it < cfg_.max_iterations; ++it) {
    if (need_linearize) {
      linearize();
      need_linearize = false;
    }
    double gmax = gp.size() ? gp.cwiseAbs().maxCoeff() : 0.0;
    for (size_t l = 0; l < L; ++l) gmax = std::max(gmax, std::abs(gl[l]));
    if (gmax < cfg_.gradient_tolerance) {
      summary.converged = true;
      break;
    }
    ++summary.iterations;

    // Damped reduced system.
    Eigen::MatrixXd S = Hpp;
    for (int i = 0; i < n; ++i) S(i, i) += mu * std::clamp(Hpp(i, i), 1e-6, 1e32);
    Eigen::VectorXd rhs = -gp;
    std::vector<double> hll_d(L);
    for (size_t l = 0; l < L; ++l) {
      hll_d[l] = Hll[l] + mu * std::clamp(Hll[l], 1e-6, 1e32);
      const double inv = 1.0 / hll_d[l];
      const auto& t = touched[l];
      for (int a : t) {
        rhs.segment<6>(a) += Hpl[l].segment<6>(a) * (gl[l] * inv);
        for (int b : t) S.block<6, 6>(a, b) -= Hpl[l].segment<6>(a) * Hpl[l].segment<6>(b).transpose() * inv;
      }
    }
    dp = S.ldlt().solve(rhs);
    double step_sq = dp.squaredNorm();
    for (size_t l = 0; l < L; ++l) {
      dl[l] = (-gl[l] - Hpl[l].dot(dp)) / hll_d[l];
      step_sq += dl[l] * dl[l];
    }
    if (!dp.allFinite()) {
      mu *= nu;
      nu *= 2.0;
      continue;
    }
    if (std::sqrt(step_sq) < cfg_.step_tolerance) {
      summary.converged = true;
      break;
    }

    // Predicted decrease of the undamped quadratic model.
    double dHd = dp.dot(Hpp * dp);
    double gd = gp.dot(dp);
    for (size_t l = 0; l < L; ++l) {
      dHd += 2.0 * dl[l] * Hpl[l].dot(dp) + Hll[l] * dl[l] * dl[l];
      gd += gl[l] * dl[l];
    }
    const double predicted = -gd - 0.5 * dHd;

    std::vector<NavState> trial = states;
    for (int k = 0; k < n_frames; ++k) {
      Eigen::VectorXd d = Eigen::VectorXd::Zero(imu ? 15 : 6);
      if (pose_off[k] >= 0) d.head<6>() = dp.segment<6>(pose_off[k]);
      if (imu) d.segment<9>(6) = dp.segment<9>(vb_off[k]);
      trial[k] = retract(states[k], d);
    }
    std::vector<double> trial_l = lambdas;
    for (size_t l = 0; l < L; ++l) trial_l[l] += dl[l];
    const double new_cost = cost_of(trial, trial_l, feats);

    if (std::isfinite(new_cost) && new_cost < cost) {
      const double rho = predicted > 0.0 ? (cost - new_cost) / predicted : 0.5;
      states = std::move(trial);
      lambdas = std::move(trial_l);
      cost = new_cost;
      summary.cost_history.push_back(cost);
      ++summary.accepted_steps;
      mu *= std::max(1.0 / 3.0, 1.0 - std::pow(2.0 * rho - 1.0, 3));
      nu = 2.0;
      need_linearize = true;
    } else {
      mu *= nu;
      nu *= 2.0;
    }
  }

  for (int k = 0; k < n_frames; ++k) frames_[k].set_nav(states[k]);
  for (size_t l = 0; l < L; ++l) feats_mut[l]->inverse_depth = lambdas[l];
  summary.final_cost = cost;
  return summary;
}

std::vector<std::pair<double, PoseSE3>> propagate_imu_rate(const NavState& state, std::span<const ImuSample> samples,
                                                           const Vec3& gravity) {
  std::vector<std::pair<double, PoseSE3>> out;
  if (samples.empty()) return out;
  out.emplace_back(samples.front().timestamp, state.pose);
  PreintegratedDelta delta(state.bias);
  for (size_t k = 1; k < samples.size(); ++k) {
    delta.integrate(samples[k - 1], samples[k], 1e300);
    out.emplace_back(samples[k].timestamp, predict_pose(state, delta, gravity).pose);
  }
  return out;
}

}  // namespace dvio
