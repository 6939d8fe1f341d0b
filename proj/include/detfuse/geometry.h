#pragma once

#include <array>

namespace detfuse {

// Axis-aligned box in pixel coordinates, stored as corners.
// Construction enforces x1 < x2, y1 < y2 and finite coordinates, so every
// Box in the program has strictly positive area.
class Box {
 public:
  Box(double x1, double y1, double x2, double y2);

  double x1() const noexcept { return c_[0]; }
  double y1() const noexcept { return c_[1]; }
  double x2() const noexcept { return c_[2]; }
  double y2() const noexcept { return c_[3]; }
  double width() const noexcept { return c_[2] - c_[0]; }
  double height() const noexcept { return c_[3] - c_[1]; }

  // Corner vector (x1, y1, x2, y2).
  const std::array<double, 4>& corners() const noexcept { return c_; }

  bool contains(const Box& other) const noexcept;

  friend bool operator==(const Box&, const Box&) = default;

 private:
  std::array<double, 4> c_;
};

// True when (x1, y1, x2, y2) would make a valid Box.
bool is_valid_box(double x1, double y1, double x2, double y2) noexcept;

double area(const Box& b) noexcept;

// Intersection area over union area. Boxes that only share an edge have
// IoU 0. Exact for identical boxes and for nested boxes
// (iou(a, b) == area(a) / area(b) when a is inside b).
double iou(const Box& a, const Box& b) noexcept;

}  // namespace detfuse
