#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace softsense {

/// Raised for malformed configuration text or values that violate an invariant.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class JointAxis { FlexionExtension, AdductionAbduction };

struct FingerConfig {
  int n_joints = 20;
  double link_length = 0.0;
  double link_mass = 0.0;
  double spring_k = 0.0;
  double joint_damping = 0.0;
  double rest_curl = 0.0;  // spring rest angle of flexion/extension joints
  double contact_radius = 0.0;
  double render_radius = 0.0;

  /// Axis of joint `i`: flexion/extension on even indices, adduction/abduction on odd.
  static JointAxis axis(int i) {
    return i % 2 == 0 ? JointAxis::FlexionExtension : JointAxis::AdductionAbduction;
  }
  std::vector<JointAxis> axis_pattern() const;
  /// Spring rest angle of joint `i`.
  double rest_angle(int i) const { return axis(i) == JointAxis::FlexionExtension ? rest_curl : 0.0; }
  double length() const { return link_length * n_joints; }
};

struct ContactParams {
  double penalty_stiffness = 0.0;
  double penalty_damping = 0.0;
  double friction_mu = 0.0;
  // Slope of the regularized Coulomb law below the sliding limit.
  double friction_damping = 0.0;
};

struct ArmGeometry {
  double column_height = 0.0;
  double shoulder_height = 0.0;
  double radial_offset = 0.0;
  double column_radius = 0.0;
  double link_radius = 0.0;
  double mount_pitch = 0.0;
};

struct BoxSpawn {
  int count = 0;
  double side_min = 0.0;
  double side_max = 0.0;
  double radius_min = 0.0;
  double radius_max = 0.0;
  double angle_min = 0.0;
  double angle_max = 0.0;
  double mass = 0.0;
  double ground_mu = 0.0;
  double ground_damping = 0.0;
};

struct CameraSpec {
  std::array<double, 3> position{};
  std::array<double, 3> look_at{};
  double vertical_fov = 0.0;
  static constexpr int kWidth = 64;
  static constexpr int kHeight = 64;
};

struct SimConfig {
  FingerConfig finger;
  ContactParams contact;
  ArmGeometry arm;
  BoxSpawn boxes;
  CameraSpec camera;
  double gravity = 9.81;
  double max_joint_speed = 0.0;

  /// Checks every field invariant; throws ConfigError naming the first violation.
  void validate() const;
};

/// Parses the `key = value` format; every known key is required.
/// The production finger must have exactly 20 joints.
SimConfig parse_config(std::string_view text);
SimConfig load_config_file(const std::string& path);

/// Text of config/softsense.cfg as compiled into the binary.
std::string_view default_config_text();
SimConfig default_config();

}  // namespace softsense
