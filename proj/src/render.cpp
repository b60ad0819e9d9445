#include "softsense/render.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <tuple>

namespace softsense::render {

namespace {

using sim::Vec3;

constexpr double kNear = 0.01;

float channel(std::uint8_t v) { return static_cast<float>(v) / 255.0f; }

struct Target {
  std::vector<double> inv_depth = std::vector<double>(kWidth * kHeight, 0.0);
  std::vector<Rgb8> color = std::vector<Rgb8>(kWidth * kHeight, palette::kBackground);

  void shade(int x, int y, double w, const Rgb8& c) {
    const int idx = y * kWidth + x;
    if (w > inv_depth[idx]) {
      inv_depth[idx] = w;
      color[idx] = c;
    }
  }
};

struct ScreenVertex {
  double x, y, w;  // pixel coordinates and 1/depth
};

ScreenVertex project(const Vec3& view, double focal) {
  const double w = 1.0 / view.z();
  return {0.5 * kWidth + focal * view.x() * w, 0.5 * kHeight - focal * view.y() * w, w};
}

// Evaluated in a canonical vertex order so that two triangles sharing an edge
// get exactly opposite values and no pixel center falls through the crack.
double edge(const ScreenVertex& a, const ScreenVertex& b, double px, double py) {
  if (std::tie(b.x, b.y) < std::tie(a.x, a.y)) return -edge(b, a, px, py);
  return (b.x - a.x) * (py - a.y) - (b.y - a.y) * (px - a.x);
}

// Top-left fill rule for the clockwise-on-screen (y down) orientation used below.
bool top_left(const ScreenVertex& a, const ScreenVertex& b) {
  const double dx = b.x - a.x;
  const double dy = b.y - a.y;
  return (dy == 0.0 && dx > 0.0) || dy < 0.0;
}

void raster_triangle(Target& target, ScreenVertex a, ScreenVertex b, ScreenVertex c, const Rgb8& color) {
  double area = edge(a, b, c.x, c.y);
  if (area == 0.0) return;
  if (area < 0.0) {
    std::swap(b, c);
    area = -area;
  }
  const int x0 = std::max(0, static_cast<int>(std::floor(std::min({a.x, b.x, c.x}))));
  const int x1 = std::min(kWidth - 1, static_cast<int>(std::ceil(std::max({a.x, b.x, c.x}))));
  const int y0 = std::max(0, static_cast<int>(std::floor(std::min({a.y, b.y, c.y}))));
  const int y1 = std::min(kHeight - 1, static_cast<int>(std::ceil(std::max({a.y, b.y, c.y}))));
  const bool tl_bc = top_left(b, c);
  const bool tl_ca = top_left(c, a);
  const bool tl_ab = top_left(a, b);
  for (int y = y0; y <= y1; ++y) {
    const double py = y + 0.5;
    for (int x = x0; x <= x1; ++x) {
      const double px = x + 0.5;
      const double e0 = edge(b, c, px, py);
      const double e1 = edge(c, a, px, py);
      const double e2 = edge(a, b, px, py);
      const bool inside = (e0 > 0 || (e0 == 0 && tl_bc)) && (e1 > 0 || (e1 == 0 && tl_ca)) &&
                          (e2 > 0 || (e2 == 0 && tl_ab));
      if (!inside) continue;
      const double w = (e0 * a.w + e1 * b.w + e2 * c.w) / area;
      target.shade(x, y, w, color);
    }
  }
}

// Clips a view-space polygon to z > kNear (Sutherland-Hodgman on one plane).
std::vector<Vec3> clip_near(const std::vector<Vec3>& poly) {
  std::vector<Vec3> out;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Vec3& p = poly[i];
    const Vec3& q = poly[(i + 1) % poly.size()];
    const bool p_in = p.z() > kNear;
    const bool q_in = q.z() > kNear;
    if (p_in) out.push_back(p);
    if (p_in != q_in) {
      const double t = (kNear - p.z()) / (q.z() - p.z());
      out.push_back(p + t * (q - p));
    }
  }
  return out;
}

void draw_triangle(Target& target, const PinholeCamera& cam, const Triangle& tri) {
  const auto poly = clip_near({cam.to_view(tri.a), cam.to_view(tri.b), cam.to_view(tri.c)});
  if (poly.size() < 3) return;
  const auto v0 = project(poly[0], cam.focal());
  for (std::size_t i = 1; i + 1 < poly.size(); ++i) {
    raster_triangle(target, v0, project(poly[i], cam.focal()), project(poly[i + 1], cam.focal()), tri.color);
  }
}

void draw_segment(Target& target, const PinholeCamera& cam, const Segment& seg) {
  Vec3 a = cam.to_view(seg.a);
  Vec3 b = cam.to_view(seg.b);
  if (a.z() <= kNear && b.z() <= kNear) return;
  if (a.z() <= kNear) a = a + (kNear - a.z()) / (b.z() - a.z()) * (b - a);
  if (b.z() <= kNear) b = b + (kNear - b.z()) / (a.z() - b.z()) * (a - b);
  const auto sa = project(a, cam.focal());
  const auto sb = project(b, cam.focal());
  const double r_max = cam.focal() * seg.radius * std::max(sa.w, sb.w);
  const int x0 = std::max(0, static_cast<int>(std::floor(std::min(sa.x, sb.x) - r_max)));
  const int x1 = std::min(kWidth - 1, static_cast<int>(std::ceil(std::max(sa.x, sb.x) + r_max)));
  const int y0 = std::max(0, static_cast<int>(std::floor(std::min(sa.y, sb.y) - r_max)));
  const int y1 = std::min(kHeight - 1, static_cast<int>(std::ceil(std::max(sa.y, sb.y) + r_max)));
  const double dx = sb.x - sa.x;
  const double dy = sb.y - sa.y;
  const double len2 = dx * dx + dy * dy;
  for (int y = y0; y <= y1; ++y) {
    const double py = y + 0.5;
    for (int x = x0; x <= x1; ++x) {
      const double px = x + 0.5;
      const double t_raw = len2 > 0.0 ? ((px - sa.x) * dx + (py - sa.y) * dy) / len2 : 0.0;
      if (!seg.round_caps && (t_raw < 0.0 || t_raw > 1.0)) continue;
      const double t = std::clamp(t_raw, 0.0, 1.0);
      const double qx = sa.x + t * dx - px;
      const double qy = sa.y + t * dy - py;
      const double w = sa.w + t * (sb.w - sa.w);
      const double r = cam.focal() * seg.radius * w;
      if (qx * qx + qy * qy > r * r) continue;
      target.shade(x, y, w, seg.color);
    }
  }
}

}  // namespace

PinholeCamera::PinholeCamera(const CameraSpec& spec) {
  origin_ = {spec.position[0], spec.position[1], spec.position[2]};
  const Vec3 target{spec.look_at[0], spec.look_at[1], spec.look_at[2]};
  const Vec3 forward = (target - origin_).normalized();
  Vec3 right = forward.cross(Vec3::UnitZ());
  if (right.norm() < 1e-9) right = Vec3::UnitX();
  right.normalize();
  const Vec3 up = right.cross(forward);
  world_to_view_.row(0) = right.transpose();
  world_to_view_.row(1) = up.transpose();
  world_to_view_.row(2) = forward.transpose();
  focal_ = 0.5 * kHeight / std::tan(0.5 * spec.vertical_fov);
}

Vec3 PinholeCamera::to_view(const Vec3& world) const { return world_to_view_ * (world - origin_); }

Vec3 PinholeCamera::ray_direction(int x, int y) const {
  const Vec3 view{(x + 0.5 - 0.5 * kWidth) / focal_, -(y + 0.5 - 0.5 * kHeight) / focal_, 1.0};
  return world_to_view_.transpose() * view;
}

void append_box(Scene& scene, const sim::BoxBody& box, const Rgb8& color) {
  const sim::Mat3 yaw = Eigen::AngleAxisd(box.yaw, Vec3::UnitZ()).toRotationMatrix();
  const Vec3 c = box.center();
  const Vec3& h = box.half_extents;
  std::array<Vec3, 8> v;
  for (int i = 0; i < 8; ++i) {
    const Vec3 local{(i & 1 ? 1 : -1) * h.x(), (i & 2 ? 1 : -1) * h.y(), (i & 4 ? 1 : -1) * h.z()};
    v[i] = c + yaw * local;
  }
  static constexpr int kFaces[6][4] = {{0, 1, 3, 2}, {4, 6, 7, 5}, {0, 4, 5, 1},
                                       {2, 3, 7, 6}, {0, 2, 6, 4}, {1, 5, 7, 3}};
  for (const auto& f : kFaces) {
    scene.triangles.push_back({v[f[0]], v[f[1]], v[f[2]], color});
    scene.triangles.push_back({v[f[0]], v[f[2]], v[f[3]], color});
  }
}

Scene build_scene(const sim::World& world) {
  Scene scene;
  constexpr double kGround = 8.0;
  const Vec3 g0{-kGround, -kGround, 0}, g1{kGround, -kGround, 0}, g2{kGround, kGround, 0}, g3{-kGround, kGround, 0};
  scene.triangles.push_back({g0, g1, g2, palette::kGround});
  scene.triangles.push_back({g0, g2, g3, palette::kGround});
  for (std::size_t i = 0; i < world.boxes.size(); ++i) {
    append_box(scene, world.boxes[i], palette::kBoxes[i % palette::kBoxes.size()]);
  }
  const auto kin = sim::forward_kinematics(world.arm.q, world.finger, world.cfg);
  const auto& geo = world.cfg.arm;
  scene.segments.push_back({kin.column_base, kin.column_top, geo.column_radius, false, palette::kColumn});
  scene.segments.push_back({kin.shoulder, kin.arm_tip, geo.link_radius, false, palette::kArm});
  for (const auto& link : kin.finger) {
    scene.segments.push_back({link.position, link.distal, world.cfg.finger.render_radius, true, palette::kFinger});
  }
  return scene;
}

Frame render(const Scene& scene, const CameraSpec& cam) {
  const PinholeCamera camera(cam);
  Target target;
  for (const auto& tri : scene.triangles) draw_triangle(target, camera, tri);
  for (const auto& seg : scene.segments) draw_segment(target, camera, seg);
  Frame frame;
  for (int i = 0; i < kWidth * kHeight; ++i) {
    for (int c = 0; c < kChannels; ++c) frame.pixels[i * kChannels + c] = channel(target.color[i][c]);
  }
  return frame;
}

Frame render(const sim::World& world, const CameraSpec& cam) { return render(build_scene(world), cam); }

FlowFrame frame_diff(const Frame& prev, const Frame& next) {
  FlowFrame flow;
  for (int i = 0; i < kPixels; ++i) flow.pixels[i] = next.pixels[i] - prev.pixels[i];
  return flow;
}

FrameBytes quantize(const Frame& frame) {
  FrameBytes out{};
  for (int i = 0; i < kPixels; ++i) {
    const float v = std::clamp(frame.pixels[i], 0.0f, 1.0f);
    out[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  return out;
}

Frame dequantize(const FrameBytes& bytes) {
  Frame frame;
  for (int i = 0; i < kPixels; ++i) frame.pixels[i] = channel(bytes[i]);
  return frame;
}

void write_ppm(const std::string& path, std::span<const std::uint8_t> rgb, int width, int height) {
  if (rgb.size() != static_cast<std::size_t>(width) * height * 3) {
    throw std::invalid_argument("write_ppm: pixel buffer does not match " + std::to_string(width) + "x" +
                                std::to_string(height));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write image: " + path);
  out << "P6\n" << width << " " << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  if (!out) throw std::runtime_error("failed writing image: " + path);
}

void write_ppm(const std::string& path, const FrameBytes& bytes) { write_ppm(path, bytes, kWidth, kHeight); }

void write_ppm(const std::string& path, const Frame& frame) { write_ppm(path, quantize(frame)); }

FrameBytes flow_to_bytes(const FlowFrame& flow) {
  FrameBytes out{};
  for (int i = 0; i < kPixels; ++i) {
    const double v = std::clamp(static_cast<double>(flow.pixels[i]), -1.0, 1.0);
    out[i] = static_cast<std::uint8_t>(std::lround((v + 1.0) * 127.5));
  }
  return out;
}

std::vector<std::uint8_t> hstack(const std::vector<FrameBytes>& frames) {
  const int n = static_cast<int>(frames.size());
  std::vector<std::uint8_t> out(static_cast<std::size_t>(n) * kPixels);
  for (int y = 0; y < kHeight; ++y) {
    for (int i = 0; i < n; ++i) {
      const auto* src = frames[i].data() + y * kWidth * kChannels;
      auto* dst = out.data() + (static_cast<std::size_t>(y) * n * kWidth + i * kWidth) * kChannels;
      std::copy(src, src + kWidth * kChannels, dst);
    }
  }
  return out;
}

}  // namespace softsense::render
