#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "softsense/config.hpp"
#include "softsense/sim.hpp"

namespace softsense::render {

inline constexpr int kWidth = CameraSpec::kWidth;
inline constexpr int kHeight = CameraSpec::kHeight;
inline constexpr int kChannels = 3;
inline constexpr int kPixels = kWidth * kHeight * kChannels;

using Rgb8 = std::array<std::uint8_t, 3>;

/// Camera observation; interleaved RGB rows (y, x, channel), every value in [0,1].
struct Frame {
  std::vector<float> pixels = std::vector<float>(kPixels, 0.0f);
  float at(int y, int x, int c) const { return pixels[(y * kWidth + x) * kChannels + c]; }
  bool operator==(const Frame&) const = default;
};

/// Frame difference next - prev, every value in [-1,1].
struct FlowFrame {
  std::vector<float> pixels = std::vector<float>(kPixels, 0.0f);
  bool operator==(const FlowFrame&) const = default;
};

/// 8-bit frame as stored on disk.
using FrameBytes = std::array<std::uint8_t, kPixels>;

namespace palette {
inline constexpr Rgb8 kBackground{191, 217, 242};
inline constexpr Rgb8 kGround{128, 128, 128};
inline constexpr Rgb8 kArm{38, 77, 204};
inline constexpr Rgb8 kColumn{26, 51, 153};
inline constexpr Rgb8 kFinger{26, 191, 51};
inline constexpr std::array<Rgb8, 4> kBoxes{{{217, 26, 26}, {230, 102, 26}, {179, 13, 89}, {242, 64, 64}}};
}  // namespace palette

struct Triangle {
  sim::Vec3 a, b, c;
  Rgb8 color;
};

/// A tube between two points; round caps render a capsule, flat caps a cylinder.
struct Segment {
  sim::Vec3 a, b;
  double radius = 0.0;
  bool round_caps = true;
  Rgb8 color;
};

struct Scene {
  std::vector<Triangle> triangles;
  std::vector<Segment> segments;
};

/// Ground quad, box meshes, arm cylinders and finger capsules for the world.
Scene build_scene(const sim::World& world);

/// Twelve triangles of a box's surface.
void append_box(Scene& scene, const sim::BoxBody& box, const Rgb8& color);

Frame render(const Scene& scene, const CameraSpec& cam);
Frame render(const sim::World& world, const CameraSpec& cam);

/// Pinhole camera used by the rasterizer: view-space depth and pixel coordinates.
class PinholeCamera {
 public:
  explicit PinholeCamera(const CameraSpec& spec);
  sim::Vec3 to_view(const sim::Vec3& world) const;  // x right, y up, z forward
  double focal() const { return focal_; }
  /// World-space ray direction through the center of pixel (x, y).
  sim::Vec3 ray_direction(int x, int y) const;
  const sim::Vec3& origin() const { return origin_; }

 private:
  sim::Vec3 origin_;
  sim::Mat3 world_to_view_;
  double focal_;
};

FlowFrame frame_diff(const Frame& prev, const Frame& next);

FrameBytes quantize(const Frame& frame);
Frame dequantize(const FrameBytes& bytes);

/// Binary PPM (P6, 8-bit).
void write_ppm(const std::string& path, std::span<const std::uint8_t> rgb, int width, int height);
void write_ppm(const std::string& path, const FrameBytes& bytes);
void write_ppm(const std::string& path, const Frame& frame);
/// Flow mapped affinely from [-1,1] to [0,255].
FrameBytes flow_to_bytes(const FlowFrame& flow);
/// Images placed side by side (each kWidth x kHeight) into one row.
std::vector<std::uint8_t> hstack(const std::vector<FrameBytes>& frames);

}  // namespace softsense::render
