#include "detfuse/geometry.h"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "detfuse/errors.h"

namespace detfuse {

bool is_valid_box(double x1, double y1, double x2, double y2) noexcept {
  return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) &&
         std::isfinite(y2) && x1 < x2 && y1 < y2;
}

Box::Box(double x1, double y1, double x2, double y2) : c_{x1, y1, x2, y2} {
  if (!is_valid_box(x1, y1, x2, y2)) {
    std::ostringstream os;
    os.precision(17);
    os << "invalid box [" << x1 << ", " << y1 << ", " << x2 << ", " << y2
       << "]: need finite corners with x1 < x2 and y1 < y2";
    throw ValidationError(os.str());
  }
}

bool Box::contains(const Box& o) const noexcept {
  return c_[0] <= o.c_[0] && c_[1] <= o.c_[1] && o.c_[2] <= c_[2] &&
         o.c_[3] <= c_[3];
}

double area(const Box& b) noexcept {
  return (b.x2() - b.x1()) * (b.y2() - b.y1());
}

double iou(const Box& a, const Box& b) noexcept {
  const double ix1 = std::max(a.x1(), b.x1());
  const double iy1 = std::max(a.y1(), b.y1());
  const double ix2 = std::min(a.x2(), b.x2());
  const double iy2 = std::min(a.y2(), b.y2());
  if (ix2 <= ix1 || iy2 <= iy1) return 0.0;
  const double inter = (ix2 - ix1) * (iy2 - iy1);
  const double area_a = area(a);
  const double area_b = area(b);
  // union = larger + (smaller - inter): the bracket is exactly zero when the
  // smaller box is nested, which keeps identity and containment exact.
  const double larger = std::max(area_a, area_b);
  const double smaller = std::min(area_a, area_b);
  const double uni = larger + (smaller - inter);
  return std::clamp(inter / uni, 0.0, 1.0);
}

}  // namespace detfuse
