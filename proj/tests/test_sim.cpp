#include "doctest.h"

#include <cmath>
#include <numbers>
#include <random>

#include "softsense/dataset.hpp"
#include "softsense/sim.hpp"

using namespace softsense;
using sim::Vec3;

namespace {

constexpr double kPi = std::numbers::pi;

sim::ArmMotion still(const sim::ArmState& q) {
  sim::ArmMotion m;
  m.q = q;
  return m;
}

SimConfig single_link(double spring_k, double damping) {
  auto cfg = default_config();
  cfg.finger.n_joints = 1;
  cfg.finger.spring_k = spring_k;
  cfg.finger.joint_damping = damping;
  cfg.finger.rest_curl = 0.0;
  cfg.arm.mount_pitch = kPi / 2;  // link horizontal at zero angle
  return cfg;
}

double bisect(auto f, double lo, double hi) {
  double flo = f(lo);
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    const double fm = f(mid);
    if ((fm < 0) == (flo < 0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

// Distance from a point to an oriented planar box's surface (negative inside).
double box_distance(const sim::BoxBody& b, const Vec3& p) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const Vec3 d = p - b.center();
  const Vec3 local{c * d.x() + s * d.y(), -s * d.x() + c * d.y(), d.z()};
  const Vec3 q = local.cwiseAbs() - b.half_extents;
  const double outside = q.cwiseMax(0.0).norm();
  const double inside = std::min(q.maxCoeff(), 0.0);
  return outside + inside;
}

}  // namespace

TEST_CASE("fk: zero angles give a straight chain along the mount axis") {
  const auto cfg = default_config();
  sim::FingerState f;
  f.angles.assign(20, 0.0);
  f.velocities.assign(20, 0.0);
  const sim::ArmState arm{kPi, -0.5, 0.75};
  const auto k = sim::forward_kinematics(arm, f, cfg);
  REQUIRE(k.finger.size() == 20);
  for (int i = 0; i < 20; ++i) {
    const Vec3 expect = k.arm_tip + Vec3(0, 0, -cfg.finger.link_length * (i + 1));
    CHECK((k.finger[i].distal - expect).norm() < 1e-12);
  }
}

TEST_CASE("fk: rotating the base by pi reflects every link through the z axis") {
  const auto cfg = default_config();
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> ang(-0.5, 0.5);
  sim::FingerState f;
  for (int i = 0; i < 20; ++i) f.angles.push_back(ang(gen));
  f.velocities.assign(20, 0.0);
  const sim::ArmState a{2.6, -0.3, 1.1};
  const auto k0 = sim::forward_kinematics(a, f, cfg);
  const auto k1 = sim::forward_kinematics({a.q1 + kPi, a.q2, a.q3}, f, cfg);
  for (int i = 0; i < 20; ++i) {
    const Vec3 p = k0.finger[i].distal, r = k1.finger[i].distal;
    CHECK(r.x() == doctest::Approx(-p.x()).epsilon(1e-12));
    CHECK(r.y() == doctest::Approx(-p.y()).epsilon(1e-12));
    CHECK(r.z() == doctest::Approx(p.z()).epsilon(1e-12));
  }
}

TEST_CASE("fk: single bent joint matches a planar two-link oracle") {
  auto cfg = default_config();
  cfg.finger.n_joints = 2;
  const double L = cfg.finger.link_length;
  const sim::ArmState arm{0.0, 0.0, 0.0};  // mount frame aligned with the world
  for (double theta : {kPi / 2, -kPi / 2, 0.7}) {
    sim::FingerState f{{theta, 0.0}, {0.0, 0.0}};
    const auto k = sim::forward_kinematics(arm, f, cfg);
    // Joint 0 turns about y; a link along -z rotated by theta about y points to (-sin, 0, -cos).
    const Vec3 dir{-std::sin(theta), 0.0, -std::cos(theta)};
    const Vec3 tip = k.arm_tip + 2 * L * dir;
    CHECK((k.finger[1].distal - tip).norm() < 1e-12);
  }
}

TEST_CASE("contact: finger above the ground has all-zero forces") {
  const auto cfg = default_config();
  auto w = sim::World::at_rest(cfg, data::kRestCommand.as_arm());
  const auto f = sim::contact_forces(w);
  REQUIRE(f.per_link_normal.size() == 20);
  for (double v : f.per_link_normal) CHECK(v == 0.0);
}

TEST_CASE("contact: non-negativity and no-contact nullity over random states") {
  const auto cfg = default_config();
  std::mt19937_64 gen(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int touching = 0, free = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    sim::ArmState arm;
    const auto& r = data::Command::kRanges;
    arm.q1 = r[0].lo + u(gen) * (r[0].hi - r[0].lo);
    arm.q2 = r[1].lo + u(gen) * (r[1].hi - r[1].lo);
    arm.q3 = r[2].lo + u(gen) * (r[2].hi - r[2].lo);
    auto w = sim::World::at_rest(cfg, arm);
    for (int i = 0; i < 20; ++i) {
      w.finger.angles[i] = 1.2 * (u(gen) - 0.5);
      w.finger.velocities[i] = 4.0 * (u(gen) - 0.5);
    }
    w.arm.qd = {u(gen) - 0.5, u(gen) - 0.5, u(gen) - 0.5};
    if (trial % 2) w.boxes = data::spawn_boxes(cfg.boxes, trial);
    const auto f = sim::contact_forces(w);
    const auto k = sim::forward_kinematics(w.arm.q, w.finger, cfg);
    bool any_near = false;
    for (int i = 0; i < 20; ++i) {
      REQUIRE(f.per_link_normal[i] >= 0.0);
      const Vec3 p = k.finger[i].distal;
      double dist = p.z() - cfg.finger.contact_radius;
      for (const auto& b : w.boxes) dist = std::min(dist, box_distance(b, p) - cfg.finger.contact_radius);
      if (dist > 0.0) {
        REQUIRE(f.per_link_normal[i] == 0.0);
      } else {
        any_near = true;
      }
    }
    (any_near ? touching : free) += 1;
  }
  // Both branches of the property were exercised.
  CHECK(touching > 100);
  CHECK(free > 100);
}

TEST_CASE("contact: a link resting on the ground carries its weight") {
  // Near-zero joint spring, so at equilibrium the contact supports the lumped link mass.
  auto cfg = single_link(1e-7, 0.002);
  const double radius = cfg.finger.contact_radius;
  const sim::ArmState arm{0.0, radius - cfg.arm.shoulder_height, 0.0};  // pivot at sphere-center height
  auto w = sim::World::at_rest(cfg, arm);
  for (int s = 0; s < 20000; ++s) sim::step(w, still(arm), sim::kPhysicsDt);
  const double theta = w.finger.angles[0];
  const double L = cfg.finger.link_length;
  // Static balance about the pivot: N L cos(theta) = m g L cos(theta) + k theta.
  const double weight = cfg.finger.link_mass * cfg.gravity;
  const double expected = weight + cfg.finger.spring_k * theta / (L * std::cos(theta));
  const double normal = sim::contact_forces(w).per_link_normal[0];
  CHECK(std::abs(normal - expected) <= 0.01 * expected);
  CHECK(std::abs(w.finger.velocities[0]) < 1e-6);
}

TEST_CASE("step: zero gravity at rest is a fixed point") {
  auto cfg = default_config();
  cfg.gravity = 0.0;
  const auto arm = data::kRestCommand.as_arm();
  auto w = sim::World::at_rest(cfg, arm);
  const auto start = w.finger;
  for (int s = 0; s < 2000; ++s) sim::step(w, still(arm), sim::kPhysicsDt);
  CHECK(w.finger == start);
}

TEST_CASE("step: a deflected joint decays in peak amplitude") {
  auto cfg = default_config();
  cfg.gravity = 0.0;
  const auto arm = data::kRestCommand.as_arm();
  auto w = sim::World::at_rest(cfg, arm);
  const int j = 6;
  w.finger.angles[j] = cfg.finger.rest_angle(j) + 0.3;
  double prev_peak = 0.3;
  for (int window = 0; window < 30; ++window) {
    double peak = 0.0;
    for (int s = 0; s < 100; ++s) {
      sim::step(w, still(arm), sim::kPhysicsDt);
      peak = std::max(peak, std::abs(w.finger.angles[j] - cfg.finger.rest_angle(j)));
    }
    CHECK(peak <= prev_peak + 1e-12);
    prev_peak = peak;
  }
  CHECK(prev_peak < 0.3);
}

TEST_CASE("step: single-link pendulum settles at the static balance angle") {
  auto cfg = single_link(0.005, 0.0005);
  const sim::ArmState arm{0.0, 0.0, 0.0};  // far above the ground
  auto w = sim::World::at_rest(cfg, arm);
  for (int s = 0; s < 5000; ++s) sim::step(w, still(arm), sim::kPhysicsDt);
  // Positive angles lift the horizontal link: k theta + m g L cos(theta) = 0.
  const double mgl = cfg.finger.link_mass * cfg.gravity * cfg.finger.link_length;
  const double k = cfg.finger.spring_k;
  const double oracle = bisect([&](double t) { return k * t + mgl * std::cos(t); }, -kPi / 2, 0.0);
  REQUIRE(oracle < -0.1);
  CHECK(std::abs(w.finger.angles[0] - oracle) <= 0.01 * std::abs(oracle));
}

TEST_CASE("step: rejects any other timestep") {
  auto w = sim::World::at_rest(default_config(), data::kRestCommand.as_arm());
  CHECK_THROWS_AS(sim::step(w, w.arm, 2e-3), std::invalid_argument);
}

TEST_CASE("step: instability is reported") {
  auto cfg = default_config();
  cfg.contact.penalty_stiffness = 1e9;  // far too stiff for the explicit contact at 1 kHz
  const sim::ArmState arm{kPi, -0.9, 0.7};
  auto w = sim::World::at_rest(cfg, arm);
  CHECK_THROWS_AS(
      {
        for (int s = 0; s < 1000; ++s) sim::step(w, still(arm), sim::kPhysicsDt);
      },
      sim::InstabilityError);
}

TEST_CASE("passivity: frozen arm, energy never rises between 10 Hz samples") {
  const auto cfg = default_config();
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> ang(-0.3, 0.3);
  for (int trial = 0; trial < 4; ++trial) {
    // Low enough that the released finger hits the ground and, on odd trials, boxes.
    const sim::ArmState arm{kPi, -0.75, 0.7};
    auto w = sim::World::at_rest(cfg, arm);
    if (trial % 2) w.boxes = data::spawn_boxes(cfg.boxes, 100 + trial);
    for (auto& a : w.finger.angles) a += ang(gen);
    const double e0 = sim::mechanical_energy(w);
    REQUIRE(e0 > 0.0);
    double prev = e0;
    for (int sample = 0; sample < 30; ++sample) {
      for (int s = 0; s < data::kStepsPerSample; ++s) sim::step(w, still(arm), sim::kPhysicsDt);
      const double e = sim::mechanical_energy(w);
      CHECK(e <= prev + 1e-3 * e0);
      prev = e;
    }
  }
}

TEST_CASE("determinism: identical runs give bit-identical trajectories") {
  const auto cfg = default_config();
  const auto cmds = data::generate_commands(6, 21);
  data::EpisodeOptions opt;
  opt.scenario = data::Scenario::Cluttered;
  opt.seed = 21;
  const std::string text(default_config_text());
  const auto a = data::run_episode(cmds, cfg, text, opt);
  const auto b = data::run_episode(cmds, cfg, text, opt);
  CHECK(a == b);
  CHECK(data::serialize(a) == data::serialize(b));
}
