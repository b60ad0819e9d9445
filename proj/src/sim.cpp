#include "softsense/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace softsense::sim {

namespace {

Mat3 rot_z(double a) { return Eigen::AngleAxisd(a, Vec3::UnitZ()).toRotationMatrix(); }

Vec3 local_axis(int joint) {
  return FingerConfig::axis(joint) == JointAxis::FlexionExtension ? Vec3::UnitY() : Vec3::UnitX();
}

// Arm tip motion in world coordinates for the cylindrical joints.
struct TipMotion {
  Vec3 position;
  Vec3 velocity;
  Vec3 acceleration;
  Vec3 omega;
  Vec3 alpha;
};

TipMotion tip_motion(const ArmMotion& arm, const ArmGeometry& geo) {
  const double c = std::cos(arm.q.q1);
  const double s = std::sin(arm.q.q1);
  const double r = geo.radial_offset + arm.q.q3;
  const double rd = arm.qd.q3;
  const double rdd = arm.qdd.q3;
  const double w = arm.qd.q1;
  const double wd = arm.qdd.q1;
  TipMotion m;
  m.position = {r * c, r * s, geo.shoulder_height + arm.q.q2};
  m.velocity = {rd * c - r * s * w, rd * s + r * c * w, arm.qd.q2};
  m.acceleration = {rdd * c - 2 * rd * s * w - r * c * w * w - r * s * wd,
                    rdd * s + 2 * rd * c * w - r * s * w * w + r * c * wd, arm.qdd.q2};
  m.omega = {0, 0, w};
  m.alpha = {0, 0, wd};
  return m;
}

// Finger chain quantities needed by the dynamics. Mass point i sits at the
// distal end of link i.
struct Chain {
  std::vector<Vec3> joint_origin;  // o_k
  std::vector<Vec3> axis;          // world joint axes u_k
  std::vector<Vec3> point;         // mass points
  std::vector<Vec3> velocity;      // mass point velocities
  std::vector<Vec3> bias_accel;    // mass point accelerations at zero joint acceleration
};

Chain evaluate_chain(const ArmMotion& arm, const FingerState& finger, const SimConfig& cfg) {
  const int n = cfg.finger.n_joints;
  const auto tip = tip_motion(arm, cfg.arm);
  const Mat3 mount = rot_z(arm.q.q1) * Eigen::AngleAxisd(cfg.arm.mount_pitch, Vec3::UnitY()).toRotationMatrix();
  const Vec3 link_local{0, 0, -cfg.finger.link_length};

  Chain ch;
  ch.joint_origin.resize(n);
  ch.axis.resize(n);
  ch.point.resize(n);
  ch.velocity.resize(n);
  ch.bias_accel.resize(n);

  Mat3 rot = mount;
  Vec3 origin = tip.position;
  Vec3 vel = tip.velocity;
  Vec3 acc = tip.acceleration;
  Vec3 omega = tip.omega;
  Vec3 alpha = tip.alpha;
  for (int k = 0; k < n; ++k) {
    const Vec3 u = rot * local_axis(k);
    const double qd = finger.velocities[k];
    rot = rot * Eigen::AngleAxisd(finger.angles[k], local_axis(k)).toRotationMatrix();
    alpha = alpha + omega.cross(u * qd);
    omega = omega + u * qd;
    const Vec3 d = rot * link_local;
    ch.joint_origin[k] = origin;
    ch.axis[k] = u;
    origin = origin + d;
    acc = acc + alpha.cross(d) + omega.cross(omega.cross(d));
    vel = vel + omega.cross(d);
    ch.point[k] = origin;
    ch.velocity[k] = vel;
    ch.bias_accel[k] = acc;
  }
  return ch;
}

struct PointContact {
  double normal = 0.0;        // normal force magnitude
  Vec3 force = Vec3::Zero();  // force on the finger point
  double depth = 0.0;
};

// Penalty spring-damper along `n` with regularized Coulomb friction. `depth`
// is the penetration, `v_rel` the finger point velocity relative to the surface.
PointContact penalty(double depth, const Vec3& n, const Vec3& v_rel, const ContactParams& cp) {
  PointContact c;
  c.depth = depth;
  const double vn = v_rel.dot(n);
  c.normal = std::max(0.0, cp.penalty_stiffness * depth - cp.penalty_damping * vn);
  c.force = c.normal * n;
  const Vec3 vt = v_rel - vn * n;
  const double speed = vt.norm();
  if (speed > 0.0 && c.normal > 0.0) {
    const double mag = std::min(cp.friction_mu * c.normal, cp.friction_damping * speed);
    c.force -= (mag / speed) * vt;
  }
  return c;
}

// Signed penetration of a sphere into a box; returns depth <= 0 when separated.
double sphere_box(const BoxBody& box, const Vec3& p, double radius, Vec3& normal_world) {
  const Mat3 yaw = rot_z(box.yaw);
  const Vec3 local = yaw.transpose() * (p - box.center());
  const Vec3& h = box.half_extents;
  const Vec3 closest = local.cwiseMax(-h).cwiseMin(h);
  const Vec3 delta = local - closest;
  const double dist = delta.norm();
  if (dist > 0.0) {
    normal_world = yaw * (delta / dist);
    return radius - dist;
  }
  // Center inside the box: push out through the nearest face.
  int axis = 0;
  double best = h[0] - std::abs(local[0]);
  for (int a = 1; a < 3; ++a) {
    const double gap = h[a] - std::abs(local[a]);
    if (gap < best) {
      best = gap;
      axis = a;
    }
  }
  Vec3 n = Vec3::Zero();
  n[axis] = local[axis] >= 0 ? 1.0 : -1.0;
  normal_world = yaw * n;
  return radius + best;
}

Vec3 box_point_velocity(const BoxBody& box, const Vec3& p) {
  const Vec3 r = p - box.center();
  return {box.vx - box.wz * r.y(), box.vy + box.wz * r.x(), 0.0};
}

struct ContactEval {
  ContactForces forces;
  double penalty_energy = 0.0;
};

ContactEval evaluate_contacts(const World& world, const Chain& ch) {
  const int n = world.cfg.finger.n_joints;
  const double radius = world.cfg.finger.contact_radius;
  const auto& cp = world.cfg.contact;
  ContactEval out;
  out.forces.per_link_normal.assign(n, 0.0);
  out.forces.per_link_force.assign(n, Vec3::Zero());
  out.forces.box_reaction.assign(world.boxes.size(), BoxWrench{});

  for (int i = 0; i < n; ++i) {
    const Vec3& p = ch.point[i];
    const double ground_depth = radius - p.z();
    if (ground_depth > 0.0) {
      const auto c = penalty(ground_depth, Vec3::UnitZ(), ch.velocity[i], cp);
      out.forces.per_link_normal[i] += c.normal;
      out.forces.per_link_force[i] += c.force;
      out.penalty_energy += 0.5 * cp.penalty_stiffness * ground_depth * ground_depth;
    }
    for (std::size_t b = 0; b < world.boxes.size(); ++b) {
      const auto& box = world.boxes[b];
      Vec3 nrm;
      const double depth = sphere_box(box, p, radius, nrm);
      if (depth <= 0.0) continue;
      const auto c = penalty(depth, nrm, ch.velocity[i] - box_point_velocity(box, p), cp);
      out.forces.per_link_normal[i] += c.normal;
      out.forces.per_link_force[i] += c.force;
      out.penalty_energy += 0.5 * cp.penalty_stiffness * depth * depth;
      const Vec3 r = p - box.center();
      auto& w = out.forces.box_reaction[b];
      w.fx -= c.force.x();
      w.fy -= c.force.y();
      w.tz -= r.x() * c.force.y() - r.y() * c.force.x();
    }
  }
  return out;
}

void check_finite(const World& world) {
  const auto& f = world.finger;
  for (std::size_t i = 0; i < f.angles.size(); ++i) {
    if (!std::isfinite(f.angles[i]) || !std::isfinite(f.velocities[i])) {
      throw InstabilityError("finger joint " + std::to_string(i) + " became non-finite at t=" +
                             std::to_string(world.time));
    }
    if (std::abs(f.angles[i]) >= std::numbers::pi) {
      throw InstabilityError("finger joint " + std::to_string(i) + " reached |angle| >= pi at t=" +
                             std::to_string(world.time) + "; check stiffness and dt");
    }
  }
  for (const auto& b : world.boxes) {
    if (!std::isfinite(b.x) || !std::isfinite(b.y) || !std::isfinite(b.yaw) || !std::isfinite(b.vx) ||
        !std::isfinite(b.vy) || !std::isfinite(b.wz)) {
      throw InstabilityError("box state became non-finite at t=" + std::to_string(world.time));
    }
  }
}

void step_box(BoxBody& box, const BoxWrench& w, const SimConfig& cfg, double dt) {
  const auto& spawn = cfg.boxes;
  const double a = box.half_extents.x();
  const double b = box.half_extents.y();
  const double inertia = box.mass * (a * a + b * b) / 3.0;
  const double support = box.mass * cfg.gravity;
  const double limit = spawn.ground_mu * support;

  double fx = w.fx;
  double fy = w.fy;
  const double speed = std::hypot(box.vx, box.vy);
  if (speed > 0.0) {
    const double mag = std::min(limit, spawn.ground_damping * speed);
    fx -= mag * box.vx / speed;
    fy -= mag * box.vy / speed;
  }
  const double arm = 0.5 * std::hypot(a, b);
  double tz = w.tz;
  if (box.wz != 0.0) {
    const double mag = std::min(limit * arm, spawn.ground_damping * arm * arm * std::abs(box.wz));
    tz -= std::copysign(mag, box.wz);
  }
  box.vx += dt * fx / box.mass;
  box.vy += dt * fy / box.mass;
  box.wz += dt * tz / inertia;
  box.x += dt * box.vx;
  box.y += dt * box.vy;
  box.yaw += dt * box.wz;
}

}  // namespace

World World::at_rest(const SimConfig& cfg, const ArmState& arm_q) {
  World w;
  w.cfg = cfg;
  w.arm.q = arm_q;
  w.finger.angles.resize(cfg.finger.n_joints);
  for (int i = 0; i < cfg.finger.n_joints; ++i) w.finger.angles[i] = cfg.finger.rest_angle(i);
  w.finger.velocities.assign(cfg.finger.n_joints, 0.0);
  return w;
}

Kinematics forward_kinematics(const ArmState& arm, const FingerState& finger, const SimConfig& cfg) {
  Kinematics k;
  const auto& geo = cfg.arm;
  const double height = geo.shoulder_height + arm.q2;
  k.column_base = Vec3::Zero();
  k.column_top = {0, 0, geo.column_height};
  k.shoulder = {0, 0, height};
  const double r = geo.radial_offset + arm.q3;
  k.arm_tip = {r * std::cos(arm.q1), r * std::sin(arm.q1), height};

  Mat3 rot = rot_z(arm.q1) * Eigen::AngleAxisd(geo.mount_pitch, Vec3::UnitY()).toRotationMatrix();
  Vec3 origin = k.arm_tip;
  const Vec3 link_local{0, 0, -cfg.finger.link_length};
  const int n = cfg.finger.n_joints;
  k.finger.resize(n);
  for (int i = 0; i < n; ++i) {
    rot = rot * Eigen::AngleAxisd(finger.angles[i], local_axis(i)).toRotationMatrix();
    auto& f = k.finger[i];
    f.position = origin;
    f.orientation = rot;
    origin = origin + rot * link_local;
    f.distal = origin;
  }
  return k;
}

ContactForces contact_forces(const World& world) {
  const auto ch = evaluate_chain(world.arm, world.finger, world.cfg);
  return evaluate_contacts(world, ch).forces;
}

void step(World& world, const ArmMotion& next, double dt) {
  if (std::abs(dt - kPhysicsDt) > 1e-12) {
    throw std::invalid_argument("physics step must be " + std::to_string(kPhysicsDt) + " s");
  }
  const auto& cfg = world.cfg;
  const int n = cfg.finger.n_joints;
  const double m = cfg.finger.link_mass;
  const Vec3 gravity{0, 0, -cfg.gravity};

  const auto ch = evaluate_chain(world.arm, world.finger, cfg);
  const auto contacts = evaluate_contacts(world, ch);

  // Point-mass chain: M = sum m J_i^T J_i, tau = sum J_i^T (m g + F_i - m a_bias_i).
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(3 * n, n);
  Eigen::VectorXd load(3 * n);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k <= i; ++k) {
      jac.block<3, 1>(3 * i, k) = ch.axis[k].cross(ch.point[i] - ch.joint_origin[k]);
    }
    load.segment<3>(3 * i) = m * gravity + contacts.forces.per_link_force[i] - m * ch.bias_accel[i];
  }
  const Eigen::MatrixXd mass = m * (jac.transpose() * jac);
  const Eigen::VectorXd tau = jac.transpose() * load;

  const Eigen::Map<const Eigen::VectorXd> q(world.finger.angles.data(), n);
  const Eigen::Map<const Eigen::VectorXd> qd(world.finger.velocities.data(), n);
  const double k = cfg.finger.spring_k;
  const double c = cfg.finger.joint_damping;

  // Springs and joint damping are treated implicitly; everything else explicitly.
  Eigen::MatrixXd system = mass;
  system.diagonal().array() += dt * c + dt * dt * k;
  Eigen::VectorXd rest(n);
  for (int i = 0; i < n; ++i) rest[i] = cfg.finger.rest_angle(i);
  const Eigen::VectorXd rhs = mass * qd + dt * (tau - k * (q - rest));
  const Eigen::VectorXd qd_next = system.ldlt().solve(rhs);
  const Eigen::VectorXd q_next = q + dt * qd_next;
  for (int i = 0; i < n; ++i) {
    world.finger.velocities[i] = qd_next[i];
    world.finger.angles[i] = q_next[i];
  }

  for (std::size_t b = 0; b < world.boxes.size(); ++b) {
    step_box(world.boxes[b], contacts.forces.box_reaction[b], cfg, dt);
  }
  world.arm = next;
  world.time += dt;
  check_finite(world);
}

double mechanical_energy(const World& world) {
  const auto& cfg = world.cfg;
  const auto ch = evaluate_chain(world.arm, world.finger, cfg);
  const double m = cfg.finger.link_mass;
  double energy = 0.0;
  for (int i = 0; i < cfg.finger.n_joints; ++i) {
    energy += 0.5 * m * ch.velocity[i].squaredNorm();
    energy += m * cfg.gravity * ch.point[i].z();
    const double bend = world.finger.angles[i] - cfg.finger.rest_angle(i);
    energy += 0.5 * cfg.finger.spring_k * bend * bend;
  }
  for (const auto& b : world.boxes) {
    const double a = b.half_extents.x();
    const double c = b.half_extents.y();
    energy += 0.5 * b.mass * (b.vx * b.vx + b.vy * b.vy);
    energy += 0.5 * b.mass * (a * a + c * c) / 3.0 * b.wz * b.wz;
  }
  energy += evaluate_contacts(world, ch).penalty_energy;
  return energy;
}

double max_joint_speed(const FingerState& finger) {
  double best = 0.0;
  for (double v : finger.velocities) best = std::max(best, std::abs(v));
  return best;
}

}  // namespace softsense::sim
