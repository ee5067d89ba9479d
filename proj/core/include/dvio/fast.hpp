#pragma once

#include <array>
#include <vector>

#include "dvio/image.hpp"

namespace dvio {

class CircularMask;

/// Half-open pixel rectangle [x0, x1) x [y0, y1).
struct PixelRect {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
  int area() const { return x1 > x0 && y1 > y0 ? (x1 - x0) * (y1 - y0) : 0; }
};

struct CornerCandidate {
  int x = 0;
  int y = 0;
  int score = 0;
};

/// Orders by score descending, then row-major pixel position.
inline bool candidate_before(const CornerCandidate& a, const CornerCandidate& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.y != b.y) return a.y < b.y;
  return a.x < b.x;
}

inline constexpr int kFastRadius = 3;

/// Bresenham circle of radius 3, clockwise from 12 o'clock.
inline constexpr std::array<std::array<int, 2>, 16> kFastRing = {{{0, -3},
                                                                 {1, -3},
                                                                 {2, -2},
                                                                 {3, -1},
                                                                 {3, 0},
                                                                 {3, 1},
                                                                 {2, 2},
                                                                 {1, 3},
                                                                 {0, 3},
                                                                 {-1, 3},
                                                                 {-2, 2},
                                                                 {-3, 1},
                                                                 {-3, 0},
                                                                 {-3, -1},
                                                                 {-2, -2},
                                                                 {-1, -3}}};

/// FAST-9 score: the largest threshold t for which 9 contiguous ring pixels are all
/// brighter than p + t or all darker than p - t. -1 when not a corner even at t = 0.
/// (x, y) must be at least 3 pixels from the border.
int fast9_score(const GrayImage& image, int x, int y);

/// Segment test with early rejection; equivalent to fast9_score(image, x, y) >= threshold.
bool fast9_is_corner(const GrayImage& image, int x, int y, int threshold);

/// Corners whose position lies inside `cell` (clamped to the ring-safe interior),
/// skipping pixels blocked by `mask` when given. Sorted with candidate_before.
std::vector<CornerCandidate> fast_detect_cell(const GrayImage& image, const PixelRect& cell, const CircularMask* mask,
                                              int threshold);

}  // namespace dvio
