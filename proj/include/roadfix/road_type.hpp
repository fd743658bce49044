#pragma once

#include <array>
#include <string>
#include <string_view>

#include "roadfix/errors.hpp"

namespace roadfix {

enum class RoadType { kStraight, kCurvy, kTJunction, kIntersection, kUnknown };

inline constexpr std::array<RoadType, 5> kAllRoadTypes = {RoadType::kStraight, RoadType::kCurvy, RoadType::kTJunction,
                                                          RoadType::kIntersection, RoadType::kUnknown};

inline std::string to_string(RoadType t) {
  switch (t) {
    case RoadType::kStraight: return "straight";
    case RoadType::kCurvy: return "curvy";
    case RoadType::kTJunction: return "t_junction";
    case RoadType::kIntersection: return "intersection";
    case RoadType::kUnknown: break;
  }
  return "unknown";
}

inline RoadType parse_road_type(std::string_view s) {
  for (RoadType t : kAllRoadTypes)
    if (to_string(t) == s) return t;
  throw FormatError("unknown road type '" + std::string(s) +
                    "' (expected straight, curvy, t_junction, intersection or unknown)");
}

}  // namespace roadfix
