#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <vector>

#include "softsense/config.hpp"

namespace softsense::sim {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kPhysicsDt = 1e-3;

/// Raised when the finger state becomes non-finite or a joint reaches |angle| >= pi.
class InstabilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Cylindrical arm joints: q1 rotary base [rad], q2 vertical [m], q3 radial [m].
struct ArmState {
  double q1 = 0.0;
  double q2 = 0.0;
  double q3 = 0.0;
  bool operator==(const ArmState&) const = default;
};

/// Kinematic arm sample: position, velocity and acceleration of each joint.
struct ArmMotion {
  ArmState q;
  ArmState qd;
  ArmState qdd;
};

struct FingerState {
  std::vector<double> angles;
  std::vector<double> velocities;
  bool operator==(const FingerState&) const = default;
};

/// A box resting on the ground, moving in the plane (x, y, yaw).
struct BoxBody {
  Vec3 half_extents = Vec3::Zero();
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;
  double vx = 0.0;
  double vy = 0.0;
  double wz = 0.0;
  double mass = 0.0;

  Vec3 center() const { return {x, y, half_extents.z()}; }
  bool operator==(const BoxBody&) const = default;
};

struct World {
  ArmMotion arm;
  FingerState finger;
  std::vector<BoxBody> boxes;
  double time = 0.0;
  SimConfig cfg;

  /// Finger straight and at rest, arm stationary at `arm_q`, no boxes.
  static World at_rest(const SimConfig& cfg, const ArmState& arm_q);
};

struct LinkFrame {
  Vec3 position = Vec3::Zero();     // proximal end (joint origin)
  Mat3 orientation = Mat3::Identity();
  Vec3 distal = Vec3::Zero();       // distal end, where the link's mass and contact sphere sit
};

struct Kinematics {
  Vec3 column_base = Vec3::Zero();
  Vec3 column_top = Vec3::Zero();
  Vec3 shoulder = Vec3::Zero();     // carriage on the column at the current height
  Vec3 arm_tip = Vec3::Zero();
  std::vector<LinkFrame> finger;    // one frame per finger link, base to tip
};

/// Places the arm links by cylindrical kinematics and chains the finger links from the arm tip.
Kinematics forward_kinematics(const ArmState& arm, const FingerState& finger, const SimConfig& cfg);

struct BoxWrench {
  double fx = 0.0;
  double fy = 0.0;
  double tz = 0.0;
};

struct ContactForces {
  std::vector<double> per_link_normal;  // total normal magnitude per finger link [N]
  std::vector<Vec3> per_link_force;     // total force (normal + friction) on each link [N]
  std::vector<BoxWrench> box_reaction;  // planar reaction wrench on each box
};

ContactForces contact_forces(const World& world);

/// Advances one physics step of exactly kPhysicsDt. `next` is the arm trajectory sample at time + dt.
/// Throws InstabilityError when the finger state blows up.
void step(World& world, const ArmMotion& next, double dt);

/// Kinetic + gravitational + spring + penalty-contact energy of the finger and boxes [J].
double mechanical_energy(const World& world);

/// Largest finger joint speed [rad/s].
double max_joint_speed(const FingerState& finger);

}  // namespace softsense::sim
