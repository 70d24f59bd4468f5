#include "facepatch/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace facepatch {

void validate_patch(const Patch& patch) {
  if (patch.height() < 2 || patch.width() < 2)
    throw GeometryError("patch '" + patch.name + "': must be at least 2x2");
  if (!(patch.pixels.array() >= 0.0f).all() || !(patch.pixels.array() <= 1.0f).all())
    throw GeometryError("patch '" + patch.name + "': pixels must lie in [0, 1]");
}

Quad Quad::rectangle(double x0, double y0, double x1, double y1) {
  return Quad{{Point{x0, y0}, Point{x1, y0}, Point{x1, y1}, Point{x0, y1}}};
}

double Quad::area() const {
  double twice = 0.0;
  for (int i = 0; i < 4; ++i) {
    const auto& a = corners[i];
    const auto& b = corners[(i + 1) % 4];
    twice += a.x * b.y - b.x * a.y;
  }
  return 0.5 * std::abs(twice);
}

namespace {

double cross(const Point& o, const Point& a, const Point& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

bool segments_cross(const Point& a, const Point& b, const Point& c, const Point& d) {
  const double d1 = cross(c, d, a), d2 = cross(c, d, b);
  const double d3 = cross(a, b, c), d4 = cross(a, b, d);
  return ((d1 > 0) != (d2 > 0)) && ((d3 > 0) != (d4 > 0)) && d1 != 0 && d2 != 0 && d3 != 0 && d4 != 0;
}

bool has_collinear_triple(const Quad& q) {
  for (int skip = 0; skip < 4; ++skip) {
    std::array<Point, 3> t{};
    for (int i = 0, k = 0; i < 4; ++i)
      if (i != skip) t[k++] = q.corners[i];
    const double ab = std::hypot(t[1].x - t[0].x, t[1].y - t[0].y);
    const double ac = std::hypot(t[2].x - t[0].x, t[2].y - t[0].y);
    if (std::abs(cross(t[0], t[1], t[2])) <= 1e-9 * std::max(ab * ac, 1e-300)) return true;
  }
  return false;
}

// Similarity transform taking the points to zero mean and mean distance sqrt(2).
Eigen::Matrix3d normalizer(const Quad& q) {
  double cx = 0, cy = 0;
  for (const auto& p : q.corners) {
    cx += p.x / 4;
    cy += p.y / 4;
  }
  double dist = 0;
  for (const auto& p : q.corners) dist += std::hypot(p.x - cx, p.y - cy) / 4;
  const double s = std::sqrt(2.0) / dist;
  Eigen::Matrix3d t;
  t << s, 0, -s * cx, 0, s, -s * cy, 0, 0, 1;
  return t;
}

}  // namespace

bool Quad::is_simple() const {
  if (!(area() > 0.0)) return false;
  return !segments_cross(corners[0], corners[1], corners[2], corners[3]) &&
         !segments_cross(corners[1], corners[2], corners[3], corners[0]);
}

Point Homography::apply(const Point& p) const {
  const Eigen::Vector3d v = matrix * Eigen::Vector3d(p.x, p.y, 1.0);
  return {v.x() / v.z(), v.y() / v.z()};
}

Homography Homography::inverse() const {
  Eigen::Matrix3d inv = matrix.inverse();
  return {inv / inv(2, 2)};
}

Homography compute_homography(const Quad& src, const Quad& dst) {
  if (has_collinear_triple(src) || has_collinear_triple(dst))
    throw GeometryError("homography: singular configuration (three collinear corners)");
  const Eigen::Matrix3d ts = normalizer(src);
  const Eigen::Matrix3d td = normalizer(dst);

  Eigen::Matrix<double, 8, 8> a;
  Eigen::Matrix<double, 8, 1> b;
  for (int i = 0; i < 4; ++i) {
    const Eigen::Vector3d s = ts * Eigen::Vector3d(src.corners[i].x, src.corners[i].y, 1.0);
    const Eigen::Vector3d d = td * Eigen::Vector3d(dst.corners[i].x, dst.corners[i].y, 1.0);
    const double x = s.x(), y = s.y(), u = d.x(), v = d.y();
    a.row(2 * i) << x, y, 1, 0, 0, 0, -u * x, -u * y;
    a.row(2 * i + 1) << 0, 0, 0, x, y, 1, -v * x, -v * y;
    b(2 * i) = u;
    b(2 * i + 1) = v;
  }
  Eigen::FullPivLU<Eigen::Matrix<double, 8, 8>> lu(a);
  if (lu.rank() < 8) throw GeometryError("homography: singular configuration");
  const Eigen::Matrix<double, 8, 1> h = lu.solve(b);

  Eigen::Matrix3d hn;
  hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), 1.0;
  Eigen::Matrix3d m = td.inverse() * hn * ts;
  m /= m(2, 2);
  if (!(std::abs(m.determinant()) > 1e-12)) throw GeometryError("homography: matrix is not invertible");
  return {m};
}

template <class T>
SparseOp<T> warp_operator(int patch_height, int patch_width, const std::array<double, 4>& src, const Homography& h,
                          int canvas_height, int canvas_width) {
  const Homography inv = h.inverse();

  // Canvas bounding box of the source rectangle grown by one patch pixel.
  int bx0 = 0, by0 = 0, bx1 = canvas_width, by1 = canvas_height;
  {
    const std::array<Point, 4> grown{Point{src[0] - 1, src[1] - 1}, Point{src[2] + 1, src[1] - 1},
                                     Point{src[2] + 1, src[3] + 1}, Point{src[0] - 1, src[3] + 1}};
    double minx = std::numeric_limits<double>::infinity(), miny = minx, maxx = -minx, maxy = -minx;
    bool finite = true;
    for (const auto& p : grown) {
      const Eigen::Vector3d v = h.matrix * Eigen::Vector3d(p.x, p.y, 1.0);
      if (!(v.z() > 0)) {
        finite = false;
        break;
      }
      minx = std::min(minx, v.x() / v.z());
      maxx = std::max(maxx, v.x() / v.z());
      miny = std::min(miny, v.y() / v.z());
      maxy = std::max(maxy, v.y() / v.z());
    }
    if (finite) {
      bx0 = std::clamp(static_cast<int>(std::floor(minx)) - 1, 0, canvas_width);
      by0 = std::clamp(static_cast<int>(std::floor(miny)) - 1, 0, canvas_height);
      bx1 = std::clamp(static_cast<int>(std::ceil(maxx)) + 1, 0, canvas_width);
      by1 = std::clamp(static_cast<int>(std::ceil(maxy)) + 1, 0, canvas_height);
    }
  }

  auto inside = [&](int i, int j) {
    return i >= 0 && j >= 0 && i < patch_height && j < patch_width && j + 0.5 >= src[0] && j + 0.5 <= src[2] &&
           i + 0.5 >= src[1] && i + 0.5 <= src[3];
  };

  std::vector<Eigen::Triplet<T>> triplets;
  for (int y = by0; y < by1; ++y)
    for (int x = bx0; x < bx1; ++x) {
      const Eigen::Vector3d v = inv.matrix * Eigen::Vector3d(x + 0.5, y + 0.5, 1.0);
      if (!(v.z() > 0)) continue;
      const double fx = v.x() / v.z() - 0.5;
      const double fy = v.y() / v.z() - 0.5;
      if (!(fx > -1.0 && fy > -1.0 && fx < patch_width && fy < patch_height)) continue;
      const int j0 = static_cast<int>(std::floor(fx));
      const int i0 = static_cast<int>(std::floor(fy));
      const double ax = fx - j0, ay = fy - i0;
      const int row = y * canvas_width + x;
      const std::array<std::tuple<int, int, double>, 4> taps{
          std::tuple{i0, j0, (1 - ax) * (1 - ay)}, std::tuple{i0, j0 + 1, ax * (1 - ay)},
          std::tuple{i0 + 1, j0, (1 - ax) * ay}, std::tuple{i0 + 1, j0 + 1, ax * ay}};
      for (const auto& [i, j, w] : taps)
        if (w > 0.0 && inside(i, j)) triplets.emplace_back(row, i * patch_width + j, static_cast<T>(w));
    }
  SparseOp<T> op(canvas_height * canvas_width, patch_height * patch_width);
  op.setFromTriplets(triplets.begin(), triplets.end());
  return op;
}

template <class T>
WarpResult<T> warp_patch(const Plane<T>& patch, const Homography& h, int canvas_height, int canvas_width) {
  const int ph = static_cast<int>(patch.rows()), pw = static_cast<int>(patch.cols());
  const auto op = warp_operator<T>(ph, pw, {0.0, 0.0, double(pw), double(ph)}, h, canvas_height, canvas_width);
  Eigen::Map<const Vector<T>> p(patch.data(), patch.size());
  WarpResult<T> out;
  out.layer.resize(canvas_height, canvas_width);
  out.mask.resize(canvas_height, canvas_width);
  Eigen::Map<Vector<T>>(out.layer.data(), out.layer.size()) = op * p;
  Eigen::Map<Vector<T>>(out.mask.data(), out.mask.size()) = op * Vector<T>::Ones(p.size());
  return out;
}

template <class T>
Compositor<T>::Compositor(int height, int width, const PatchSet<T>& patches, const PlacementMap& placement)
    : height_(height), width_(width) {
  for (const auto& p : patches) patch_shapes_.emplace_back(p.height(), p.width());
  for (const auto& entry : placement.entries) {
    auto it = std::find_if(patches.begin(), patches.end(), [&](const auto& p) { return p.name == entry.patch; });
    if (it == patches.end()) throw GeometryError("placement references unknown patch '" + entry.patch + "'");
    const size_t index = static_cast<size_t>(it - patches.begin());
    const auto& s = entry.src;
    if (!(s[2] > s[0] && s[3] > s[1] && s[0] >= 0 && s[1] >= 0 && s[2] <= it->width() && s[3] <= it->height()))
      throw GeometryError("placement for '" + entry.patch + "': source rectangle outside the patch");
    const Homography h = compute_homography(Quad::rectangle(s[0], s[1], s[2], s[3]), entry.dst);
    SparseOp<T> op = warp_operator<T>(it->height(), it->width(), s, h, height, width);

    auto group = std::find_if(groups_.begin(), groups_.end(), [&](const Group& g) { return g.patch_index == index; });
    if (group == groups_.end()) {
      groups_.push_back({index, std::move(op), {}});
    } else {
      group->op = SparseOp<T>(group->op + op);
    }
  }
  for (auto& g : groups_) {
    Vector<T> cover = g.op * Vector<T>::Ones(g.op.cols());
    for (int r = 0; r < g.op.outerSize(); ++r) {
      if (cover[r] <= T(1)) continue;
      const T inv = T(1) / cover[r];
      for (typename SparseOp<T>::InnerIterator it(g.op, r); it; ++it) it.valueRef() *= inv;
      cover[r] = T(1);
    }
    g.keep = Vector<T>::Ones(cover.size()) - cover;
  }
}

template <class T>
Image<T> Compositor<T>::apply(const Image<T>& image, const PatchSet<T>& patches) const {
  if (image.height() != height_ || image.width() != width_)
    throw GeometryError("compositor: image size does not match the placement geometry");
  Image<T> out = image;
  for (const auto& g : groups_) {
    const auto& pix = patches.at(g.patch_index).pixels;
    const Vector<T> layer = g.op * Eigen::Map<const Vector<T>>(pix.data(), pix.size());
    for (auto& c : out.channels) {
      Eigen::Map<Vector<T>> v(c.data(), c.size());
      v = v.cwiseProduct(g.keep) + layer;
    }
  }
  return out;
}

template <class T>
std::vector<Plane<T>> Compositor<T>::backward(const Image<T>& grad_out) const {
  std::vector<Plane<T>> grads;
  for (const auto& [h, w] : patch_shapes_) grads.push_back(Plane<T>::Zero(h, w));
  Image<T> g = grad_out;
  for (auto it = groups_.rbegin(); it != groups_.rend(); ++it) {
    Vector<T> sum = Vector<T>::Zero(static_cast<Eigen::Index>(height_) * width_);
    for (const auto& c : g.channels) sum += Eigen::Map<const Vector<T>>(c.data(), c.size());
    auto& dst = grads[it->patch_index];
    Eigen::Map<Vector<T>>(dst.data(), dst.size()) += it->op.transpose() * sum;
    for (auto& c : g.channels) {
      Eigen::Map<Vector<T>> v(c.data(), c.size());
      v = v.cwiseProduct(it->keep);
    }
  }
  return grads;
}

template <class T>
Plane<T> Compositor<T>::coverage() const {
  Vector<T> transparent = Vector<T>::Ones(static_cast<Eigen::Index>(height_) * width_);
  for (const auto& g : groups_) transparent = transparent.cwiseProduct(g.keep);
  Plane<T> out(height_, width_);
  Eigen::Map<Vector<T>>(out.data(), out.size()) = Vector<T>::Ones(transparent.size()) - transparent;
  return out;
}

template <class T>
Image<T> apply_patches(const Image<T>& image, const PatchSet<T>& patches, const PlacementMap& placement) {
  return Compositor<T>(image.height(), image.width(), patches, placement).apply(image, patches);
}

#define FACEPATCH_INSTANTIATE(T)                                                                          \
  template SparseOp<T> warp_operator<T>(int, int, const std::array<double, 4>&, const Homography&, int, int); \
  template WarpResult<T> warp_patch<T>(const Plane<T>&, const Homography&, int, int);                      \
  template class Compositor<T>;                                                                           \
  template Image<T> apply_patches<T>(const Image<T>&, const PatchSet<T>&, const PlacementMap&);

FACEPATCH_INSTANTIATE(float)
FACEPATCH_INSTANTIATE(double)

#undef FACEPATCH_INSTANTIATE

}  // namespace facepatch
