#pragma once

#include <cmath>
#include <optional>

#include "lookback/action.hpp"
#include "lookback/util.hpp"

namespace lookback {

/// Shared matching knobs. The grounding threshold is the normalized Euclidean
/// distance a predicted point may be from the ground-truth point when no
/// element box is available.
struct MatchPolicy {
  double grounding_threshold = 0.14;
};

inline double point_distance(Point a, Point b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

/// Whether a predicted point hits the target: inside the element bbox when one
/// is known, within the distance threshold of the ground-truth point otherwise.
inline bool point_hits(Point pred, Point gt, const std::optional<BBox>& gt_bbox,
                       const MatchPolicy& policy) {
  if (gt_bbox) return gt_bbox->contains(pred);
  return point_distance(pred, gt) <= policy.grounding_threshold;
}

/// Full parameter-level match between a predicted and a ground-truth action.
/// Kinds must be equal; parameters are compared per kind:
///   point actions  — predicted point hits the ground-truth element
///   type           — text equal after trim and ASCII case-fold
///   scroll         — direction equal (magnitude ignored)
///   open_app       — name equal case-insensitively
///   drag           — both endpoints within the grounding threshold
///   hotkey         — key sequence equal case-insensitively
///   wait/finished/press_home/press_back — kind equality suffices
inline bool matches_ground_truth(const Action& pred, const Action& gt,
                                 const std::optional<BBox>& gt_bbox = std::nullopt,
                                 const MatchPolicy& policy = {}) {
  if (pred.is_retrieve() || gt.is_retrieve()) {
    throw Error(Errc::invalid_argument, "retrieve is a tool action and has no ground truth");
  }
  if (pred.kind() != gt.kind()) return false;
  switch (gt.kind()) {
    case ActionKind::click:
    case ActionKind::long_press:
    case ActionKind::left_double:
    case ActionKind::right_single:
      return point_hits(*pred.point(), *gt.point(), gt_bbox, policy);
    case ActionKind::type_text:
      return casefold_trim_eq(pred.get<TypeText>().text, gt.get<TypeText>().text);
    case ActionKind::scroll:
      return pred.get<Scroll>().direction == gt.get<Scroll>().direction;
    case ActionKind::open_app:
      return casefold_trim_eq(pred.get<OpenApp>().name, gt.get<OpenApp>().name);
    case ActionKind::drag: {
      const auto& p = pred.get<Drag>();
      const auto& g = gt.get<Drag>();
      return point_distance(p.from, g.from) <= policy.grounding_threshold &&
             point_distance(p.to, g.to) <= policy.grounding_threshold;
    }
    case ActionKind::hotkey: {
      const auto& p = pred.get<Hotkey>().keys;
      const auto& g = gt.get<Hotkey>().keys;
      if (p.size() != g.size()) return false;
      for (std::size_t i = 0; i < p.size(); ++i) {
        if (!casefold_trim_eq(p[i], g[i])) return false;
      }
      return true;
    }
    case ActionKind::wait:
    case ActionKind::finished:
    case ActionKind::press_home:
    case ActionKind::press_back:
      return true;
    case ActionKind::retrieve:
      break;
  }
  return false;
}

} // namespace lookback
