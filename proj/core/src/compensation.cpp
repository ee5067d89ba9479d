#include "dvio/compensation.hpp"

#include <algorithm>
#include <tuple>

#include "dvio/error.hpp"

namespace dvio {

void CompensationConfig::validate() const {
  if (miss_limit < 0) throw Error(ErrorCode::ConfigInvalid, "compensation.miss_limit must be >= 0");
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0))
    throw Error(ErrorCode::ConfigInvalid, "compensation.iou_threshold must be in (0, 1]");
}

ObjectRegistry::ObjectRegistry(CompensationConfig cfg) : cfg_(cfg) { cfg_.validate(); }

std::vector<int> ObjectRegistry::associate_and_update(std::span<const DetectionBox> detections, FrameIndex frame) {
  struct Pair {
    double iou;
    size_t obj;
    size_t det;
  };
  std::vector<Pair> pairs;
  for (size_t o = 0; o < objects_.size(); ++o) {
    const DetectionBox predicted = objects_[o].box.translated(objects_[o].velocity_smoothed);
    for (size_t d = 0; d < detections.size(); ++d) {
      if (detections[d].class_label != objects_[o].class_label) continue;
      const double v = iou(predicted, detections[d]);
      if (v >= cfg_.iou_threshold) pairs.push_back({v, o, d});
    }
  }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    return std::tie(b.iou, a.obj, a.det) < std::tie(a.iou, b.obj, b.det);
  });

  std::vector<int> assigned(detections.size(), -1);
  std::vector<bool> obj_used(objects_.size(), false);
  for (const Pair& p : pairs) {
    if (obj_used[p.obj] || assigned[p.det] >= 0) continue;
    obj_used[p.obj] = true;
    TrackedObject& obj = objects_[p.obj];
    const DetectionBox& det = detections[p.det];
    const FrameIndex gap = std::max<FrameIndex>(1, frame - obj.last_detected_frame);
    const Vec2 v = (det.center() - obj.last_detected_center) / static_cast<double>(gap);
    if (obj.detections == 1 && cfg_.seed_velocity)
      obj.velocity_smoothed = v;
    else
      obj.velocity_smoothed = 0.5 * (v + obj.velocity_smoothed);
    obj.box = det;
    obj.box.object_id = obj.object_id;
    obj.last_detected_center = det.center();
    obj.last_detected_frame = frame;
    obj.missed_count = 0;
    ++obj.detections;
    assigned[p.det] = obj.object_id;
  }

  for (size_t d = 0; d < detections.size(); ++d) {
    if (assigned[d] >= 0) continue;
    TrackedObject obj;
    obj.object_id = next_id_++;
    obj.class_label = detections[d].class_label;
    obj.box = detections[d];
    obj.box.object_id = obj.object_id;
    obj.last_detected_center = detections[d].center();
    obj.last_detected_frame = frame;
    obj.detections = 1;
    assigned[d] = obj.object_id;
    objects_.push_back(std::move(obj));
  }
  return assigned;
}

std::vector<DetectionBox> ObjectRegistry::predict_missed(FrameIndex frame, int width, int height) {
  std::vector<DetectionBox> out;
  std::vector<TrackedObject> kept;
  kept.reserve(objects_.size());
  for (TrackedObject& obj : objects_) {
    if (obj.last_detected_frame == frame) {
      kept.push_back(std::move(obj));
      continue;
    }
    ++obj.missed_count;
    if (obj.missed_count > cfg_.miss_limit) continue;
    obj.box = obj.box.translated(obj.velocity_smoothed);
    obj.box.frame_index = frame;
    obj.box.compensated = true;
    const DetectionBox clamped = obj.box.clamped(width, height);
    if (!clamped.empty()) out.push_back(clamped);
    kept.push_back(std::move(obj));
  }
  objects_ = std::move(kept);
  return out;
}

}  // namespace dvio
