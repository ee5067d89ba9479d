#include "dvio/fast.hpp"

#include <algorithm>

#include "dvio/frontend.hpp"

namespace dvio {

namespace {

inline void ring_diffs(const GrayImage& image, int x, int y, std::array<int, 16>& d) {
  const int p = image(x, y);
  for (int k = 0; k < 16; ++k) d[k] = static_cast<int>(image(x + kFastRing[k][0], y + kFastRing[k][1])) - p;
}

}  // namespace

int fast9_score(const GrayImage& image, int x, int y) {
  std::array<int, 16> d{};
  ring_diffs(image, x, y, d);
  int best = -1;
  for (int start = 0; start < 16; ++start) {
    int min_bright = 256;
    int min_dark = 256;
    for (int k = 0; k < 9; ++k) {
      const int v = d[(start + k) & 15];
      min_bright = std::min(min_bright, v);
      min_dark = std::min(min_dark, -v);
    }
    // Strict comparison: brighter means d > t, i.e. t <= d - 1.
    best = std::max({best, min_bright - 1, min_dark - 1});
  }
  return best < 0 ? -1 : best;
}

bool fast9_is_corner(const GrayImage& image, int x, int y, int threshold) {
  const int p = image(x, y);
  const int hi = p + threshold;
  const int lo = p - threshold;
  // Any 9-arc contains at least two of the four compass pixels.
  int bright = 0;
  int dark = 0;
  for (int k = 0; k < 16; k += 4) {
    const int v = image(x + kFastRing[k][0], y + kFastRing[k][1]);
    bright += v > hi;
    dark += v < lo;
  }
  if (bright < 2 && dark < 2) return false;

  std::array<int, 16> v{};
  for (int k = 0; k < 16; ++k) v[k] = image(x + kFastRing[k][0], y + kFastRing[k][1]);
  for (int pass = 0; pass < 2; ++pass) {
    if ((pass == 0 && bright < 2) || (pass == 1 && dark < 2)) continue;
    int run = 0;
    for (int k = 0; k < 16 + 8; ++k) {
      const int val = v[k & 15];
      const bool hit = pass == 0 ? val > hi : val < lo;
      run = hit ? run + 1 : 0;
      if (run >= 9) return true;
    }
  }
  return false;
}

std::vector<CornerCandidate> fast_detect_cell(const GrayImage& image, const PixelRect& cell, const CircularMask* mask,
                                              int threshold) {
  std::vector<CornerCandidate> out;
  const int x0 = std::max(cell.x0, kFastRadius);
  const int y0 = std::max(cell.y0, kFastRadius);
  const int x1 = std::min(cell.x1, image.width() - kFastRadius);
  const int y1 = std::min(cell.y1, image.height() - kFastRadius);
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      if (mask && mask->blocked(x, y)) continue;
      if (!fast9_is_corner(image, x, y, threshold)) continue;
      out.push_back({x, y, fast9_score(image, x, y)});
    }
  }
  std::sort(out.begin(), out.end(), candidate_before);
  return out;
}

}  // namespace dvio
