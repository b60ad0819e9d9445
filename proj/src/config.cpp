#include "softsense/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "softsense/default_config.hpp"

namespace softsense {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<double> parse_numbers(std::string_view key, std::string_view value) {
  std::vector<double> out;
  std::istringstream in{std::string(value)};
  std::string token;
  while (in >> token) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
    if (ec != std::errc() || ptr != token.data() + token.size() || !std::isfinite(v)) {
      throw ConfigError("config key '" + std::string(key) + "': not a number: '" + token + "'");
    }
    out.push_back(v);
  }
  return out;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("invalid config: " + what);
}

}  // namespace

std::vector<JointAxis> FingerConfig::axis_pattern() const {
  std::vector<JointAxis> pattern(static_cast<std::size_t>(n_joints));
  for (int i = 0; i < n_joints; ++i) pattern[static_cast<std::size_t>(i)] = axis(i);
  return pattern;
}

void SimConfig::validate() const {
  require(finger.n_joints >= 1, "finger.n_joints must be >= 1");
  require(finger.link_length > 0, "finger.link_length must be > 0");
  require(finger.link_mass > 0, "finger.link_mass must be > 0");
  require(finger.spring_k > 0, "finger.spring_k must be > 0");
  require(finger.joint_damping >= 0, "finger.joint_damping must be >= 0");
  require(std::abs(finger.rest_curl) < 0.5, "finger.rest_curl must be within (-0.5, 0.5) rad");
  require(finger.contact_radius > 0, "finger.contact_radius must be > 0");
  require(finger.render_radius > 0, "finger.render_radius must be > 0");
  require(contact.penalty_stiffness >= 0, "contact.penalty_stiffness must be >= 0");
  require(contact.penalty_damping >= 0, "contact.penalty_damping must be >= 0");
  require(contact.friction_mu >= 0, "contact.friction_mu must be >= 0");
  require(contact.friction_damping >= 0, "contact.friction_damping must be >= 0");
  require(arm.column_height > 0 && arm.shoulder_height > 0, "arm heights must be > 0");
  require(arm.radial_offset >= 0, "arm.radial_offset must be >= 0");
  require(arm.column_radius > 0 && arm.link_radius > 0, "arm radii must be > 0");
  require(boxes.count >= 0, "boxes.count must be >= 0");
  require(boxes.side_min > 0 && boxes.side_max >= boxes.side_min, "boxes side range");
  require(boxes.radius_min >= 0 && boxes.radius_max >= boxes.radius_min, "boxes radius range");
  require(boxes.angle_max >= boxes.angle_min, "boxes angle range");
  require(boxes.mass > 0, "boxes.mass must be > 0");
  require(boxes.ground_mu >= 0 && boxes.ground_damping >= 0, "boxes ground friction");
  require(camera.position != camera.look_at, "camera.position must differ from camera.look_at");
  require(camera.vertical_fov > 0 && camera.vertical_fov < 3.1, "camera.vertical_fov out of range");
  require(gravity >= 0, "world.gravity must be >= 0");
  require(max_joint_speed > 0, "sampling.max_joint_speed must be > 0");
}

SimConfig parse_config(std::string_view text) {
  SimConfig cfg;
  auto scalar = [](double& dst) {
    return [&dst](std::string_view key, const std::vector<double>& v) {
      if (v.size() != 1) throw ConfigError("config key '" + std::string(key) + "' expects 1 value");
      dst = v[0];
    };
  };
  auto integer = [](int& dst) {
    return [&dst](std::string_view key, const std::vector<double>& v) {
      if (v.size() != 1 || v[0] != std::floor(v[0])) {
        throw ConfigError("config key '" + std::string(key) + "' expects an integer");
      }
      dst = static_cast<int>(v[0]);
    };
  };
  auto vec3 = [](std::array<double, 3>& dst) {
    return [&dst](std::string_view key, const std::vector<double>& v) {
      if (v.size() != 3) throw ConfigError("config key '" + std::string(key) + "' expects 3 values");
      dst = {v[0], v[1], v[2]};
    };
  };

  using Setter = std::function<void(std::string_view, const std::vector<double>&)>;
  const std::map<std::string, Setter, std::less<>> setters = {
      {"finger.n_joints", integer(cfg.finger.n_joints)},
      {"finger.link_length", scalar(cfg.finger.link_length)},
      {"finger.link_mass", scalar(cfg.finger.link_mass)},
      {"finger.spring_k", scalar(cfg.finger.spring_k)},
      {"finger.joint_damping", scalar(cfg.finger.joint_damping)},
      {"finger.rest_curl", scalar(cfg.finger.rest_curl)},
      {"finger.contact_radius", scalar(cfg.finger.contact_radius)},
      {"finger.render_radius", scalar(cfg.finger.render_radius)},
      {"contact.penalty_stiffness", scalar(cfg.contact.penalty_stiffness)},
      {"contact.penalty_damping", scalar(cfg.contact.penalty_damping)},
      {"contact.friction_mu", scalar(cfg.contact.friction_mu)},
      {"contact.friction_damping", scalar(cfg.contact.friction_damping)},
      {"arm.column_height", scalar(cfg.arm.column_height)},
      {"arm.shoulder_height", scalar(cfg.arm.shoulder_height)},
      {"arm.radial_offset", scalar(cfg.arm.radial_offset)},
      {"arm.column_radius", scalar(cfg.arm.column_radius)},
      {"arm.link_radius", scalar(cfg.arm.link_radius)},
      {"arm.mount_pitch", scalar(cfg.arm.mount_pitch)},
      {"world.gravity", scalar(cfg.gravity)},
      {"boxes.count", integer(cfg.boxes.count)},
      {"boxes.side_min", scalar(cfg.boxes.side_min)},
      {"boxes.side_max", scalar(cfg.boxes.side_max)},
      {"boxes.radius_min", scalar(cfg.boxes.radius_min)},
      {"boxes.radius_max", scalar(cfg.boxes.radius_max)},
      {"boxes.angle_min", scalar(cfg.boxes.angle_min)},
      {"boxes.angle_max", scalar(cfg.boxes.angle_max)},
      {"boxes.mass", scalar(cfg.boxes.mass)},
      {"boxes.ground_mu", scalar(cfg.boxes.ground_mu)},
      {"boxes.ground_damping", scalar(cfg.boxes.ground_damping)},
      {"camera.position", vec3(cfg.camera.position)},
      {"camera.look_at", vec3(cfg.camera.look_at)},
      {"camera.vertical_fov", scalar(cfg.camera.vertical_fov)},
      {"sampling.max_joint_speed", scalar(cfg.max_joint_speed)},
  };

  std::map<std::string, int, std::less<>> seen;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    const auto it = setters.find(key);
    if (it == setters.end()) {
      throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + std::string(key) + "'");
    }
    if (seen.contains(key)) {
      throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + std::string(key) + "'");
    }
    seen.emplace(std::string(key), line_no);
    it->second(key, parse_numbers(key, value));
  }
  for (const auto& [key, setter] : setters) {
    if (!seen.contains(key)) throw ConfigError("config is missing key '" + key + "'");
  }
  if (cfg.finger.n_joints != 20) {
    throw ConfigError("invalid config: finger.n_joints must be 20 (got " +
                      std::to_string(cfg.finger.n_joints) + ")");
  }
  cfg.validate();
  return cfg;
}

SimConfig load_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string_view default_config_text() { return kDefaultConfigText; }

SimConfig default_config() { return parse_config(default_config_text()); }

}  // namespace softsense
