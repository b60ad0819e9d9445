#include "softsense/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>

#include "softsense/binio.hpp"

namespace softsense::data {

namespace {

constexpr char kMagic[4] = {'S', 'S', 'D', '1'};
constexpr std::size_t kFixedHeader = 4 + 4 + 1 + 1 + 2 + 8 + 4;
constexpr std::size_t kNormBytes = kNormChannels * 2 * sizeof(float);
constexpr std::size_t kRecordBytes = 4 + sizeof(float) * (3 + 3 + kFingerDims + kForceDims);

double uniform(std::mt19937_64& rng, double lo, double hi) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

// Independent stream per purpose so adding boxes never perturbs the command sequence.
std::mt19937_64 stream(std::uint64_t seed, std::uint64_t purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(purpose)};
  return std::mt19937_64(seq);
}

template <std::size_t N>
std::array<float, N> to_float(const std::vector<double>& v) {
  std::array<float, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = static_cast<float>(v[i]);
  return out;
}

}  // namespace

std::string to_string(Scenario s) { return s == Scenario::Empty ? "empty" : "cluttered"; }

Scenario scenario_from_string(const std::string& s) {
  if (s == "empty") return Scenario::Empty;
  if (s == "cluttered") return Scenario::Cluttered;
  throw std::invalid_argument("unknown scenario '" + s + "' (expected empty or cluttered)");
}

bool Command::in_range() const {
  const std::array<double, 3> q{q1, q2, q3};
  for (int i = 0; i < 3; ++i) {
    if (!(q[i] >= kRanges[i].lo && q[i] <= kRanges[i].hi)) return false;
  }
  return true;
}

std::array<double, 3> Command::normalized() const {
  const std::array<double, 3> q{q1, q2, q3};
  std::array<double, 3> out{};
  for (int i = 0; i < 3; ++i) {
    const auto [lo, hi] = kRanges[i];
    out[i] = 2.0 * (q[i] - lo) / (hi - lo) - 1.0;
  }
  return out;
}

double smooth_step(double x0, double x1, double u) {
  if (!(u >= 0.0 && u <= 1.0)) throw std::domain_error("smooth_step: u must lie in [0,1]");
  return x0 + (x1 - x0) * (u * u * (3.0 - 2.0 * u));
}

sim::ArmMotion SmoothSegment::at(double t) const {
  const double u = std::clamp(t / duration, 0.0, 1.0);
  const double s = u * u * (3.0 - 2.0 * u);
  const double ds = 6.0 * u * (1.0 - u) / duration;
  const double dds = (6.0 - 12.0 * u) / (duration * duration);
  auto joint = [&](double a, double b, double& q, double& qd, double& qdd) {
    q = a + (b - a) * s;
    qd = (b - a) * ds;
    qdd = (b - a) * dds;
  };
  sim::ArmMotion m;
  joint(from.q1, to.q1, m.q.q1, m.qd.q1, m.qdd.q1);
  joint(from.q2, to.q2, m.q.q2, m.qd.q2, m.qdd.q2);
  joint(from.q3, to.q3, m.q.q3, m.qd.q3, m.qdd.q3);
  return m;
}

std::vector<Command> generate_commands(int n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("generate_commands: n must be >= 1");
  auto rng = stream(seed, 1);
  std::vector<Command> out(static_cast<std::size_t>(n));
  for (auto& c : out) {
    c.q1 = uniform(rng, Command::kRanges[0].lo, Command::kRanges[0].hi);
    c.q2 = uniform(rng, Command::kRanges[1].lo, Command::kRanges[1].hi);
    c.q3 = uniform(rng, Command::kRanges[2].lo, Command::kRanges[2].hi);
  }
  return out;
}

std::vector<sim::BoxBody> spawn_boxes(const BoxSpawn& spawn, std::uint64_t seed) {
  auto rng = stream(seed, 2);
  std::vector<sim::BoxBody> boxes(static_cast<std::size_t>(spawn.count));
  for (auto& b : boxes) {
    const double side = uniform(rng, spawn.side_min, spawn.side_max);
    // Uniform over the annular sector's area.
    const double r2 = uniform(rng, spawn.radius_min * spawn.radius_min, spawn.radius_max * spawn.radius_max);
    const double r = std::sqrt(r2);
    const double angle = uniform(rng, spawn.angle_min, spawn.angle_max);
    b.half_extents = sim::Vec3::Constant(0.5 * side);
    b.x = r * std::cos(angle);
    b.y = r * std::sin(angle);
    b.yaw = uniform(rng, 0.0, std::numbers::pi / 2);
    b.mass = spawn.mass;
  }
  return boxes;
}

Dataset run_episode(const std::vector<Command>& commands, const SimConfig& cfg, const std::string& config_text,
                    const EpisodeOptions& options, EpisodeTrace* trace) {
  if (commands.empty()) throw std::invalid_argument("run_episode: no commands");
  for (const auto& c : commands) {
    if (!c.in_range()) throw std::invalid_argument("run_episode: command outside the workspace ranges");
  }
  cfg.validate();

  Dataset ds;
  ds.scenario = options.scenario;
  ds.seed = options.seed;
  ds.has_vision = options.with_vision;
  ds.config_text = config_text;
  ds.samples.reserve(commands.size() * kSamplesPerCommand);

  auto world = sim::World::at_rest(cfg, kRestCommand.as_arm());
  if (options.scenario == Scenario::Cluttered) world.boxes = spawn_boxes(cfg.boxes, options.seed);

  sim::ArmState from = kRestCommand.as_arm();
  try {
    for (std::size_t seg = 0; seg < commands.size(); ++seg) {
      const SmoothSegment path{from, commands[seg].as_arm(), kStepsPerSegment * sim::kPhysicsDt};
      for (int s = 1; s <= kStepsPerSegment; ++s) {
        sim::step(world, path.at(s * sim::kPhysicsDt), sim::kPhysicsDt);
        if (s % kStepsPerSample != 0) continue;
        Sample sample;
        sample.index = static_cast<std::uint32_t>(ds.samples.size());
        const auto& cmd = commands[seg];
        sample.action = {static_cast<float>(cmd.q1), static_cast<float>(cmd.q2), static_cast<float>(cmd.q3)};
        sample.arm_q = {static_cast<float>(world.arm.q.q1), static_cast<float>(world.arm.q.q2),
                        static_cast<float>(world.arm.q.q3)};
        sample.finger_q = to_float<kFingerDims>(world.finger.angles);
        sample.forces = to_float<kForceDims>(sim::contact_forces(world).per_link_normal);
        if (options.with_vision) sample.frame = render::quantize(render::render(world, cfg.camera));
        if (trace) {
          trace->max_joint_speed.push_back(sim::max_joint_speed(world.finger));
          trace->energy.push_back(sim::mechanical_energy(world));
        }
        ds.samples.push_back(std::move(sample));
      }
      from = commands[seg].as_arm();
      if (options.progress) options.progress(seg + 1, commands.size());
    }
  } catch (const sim::InstabilityError& e) {
    throw EpisodeError(std::string("episode aborted, no dataset written: ") + e.what(), ds.samples.size());
  }
  ds.stats = compute_norm_stats(ds);
  return ds;
}

NormStats compute_norm_stats(const Dataset& ds) {
  if (ds.samples.empty()) throw std::invalid_argument("compute_norm_stats: dataset is empty");
  std::array<double, kNormChannels> sum{};
  std::array<double, kNormChannels> sq{};
  auto channels = [](const Sample& s, auto&& fn) {
    for (int i = 0; i < kFingerDims; ++i) fn(NormStats::kFingerOffset + i, s.finger_q[i]);
    for (int i = 0; i < kForceDims; ++i) fn(NormStats::kForceOffset + i, s.forces[i]);
    for (int i = 0; i < kActionDims; ++i) fn(NormStats::kActionOffset + i, s.action[i]);
  };
  for (const auto& s : ds.samples) channels(s, [&](int c, float v) { sum[c] += v; });
  const double n = static_cast<double>(ds.samples.size());
  std::array<double, kNormChannels> mean{};
  for (int c = 0; c < kNormChannels; ++c) mean[c] = sum[c] / n;
  for (const auto& s : ds.samples) {
    channels(s, [&](int c, float v) {
      const double d = v - mean[c];
      sq[c] += d * d;
    });
  }
  NormStats out;
  for (int c = 0; c < kNormChannels; ++c) {
    const double sd = std::sqrt(sq[c] / n);
    out.mean[c] = static_cast<float>(mean[c]);
    out.clamped[c] = sd < 1e-8;
    out.std[c] = out.clamped[c] ? 1.0f : static_cast<float>(sd);
  }
  return out;
}

std::size_t serialized_size(std::size_t n_samples, bool has_vision, std::size_t config_bytes) {
  const std::size_t record = kRecordBytes + (has_vision ? render::kPixels : 0);
  return kFixedHeader + 4 + config_bytes + kNormBytes + n_samples * record + 4;
}

std::vector<std::uint8_t> serialize(const Dataset& ds) {
  binio::Writer w;
  for (char c : kMagic) w.put(static_cast<std::uint8_t>(c));
  w.put(kFormatVersion);
  w.put(static_cast<std::uint8_t>(ds.scenario));
  w.put(static_cast<std::uint8_t>(ds.has_vision ? 1 : 0));
  w.put(std::uint16_t{0});
  w.put(ds.seed);
  w.put(static_cast<std::uint32_t>(ds.samples.size()));
  w.put_string(ds.config_text);
  for (float m : ds.stats.mean) w.put(m);
  for (float s : ds.stats.std) w.put(s);
  for (const auto& s : ds.samples) {
    if (s.frame.has_value() != ds.has_vision) {
      throw std::invalid_argument("serialize: sample " + std::to_string(s.index) + " frame presence disagrees with has_vision");
    }
    w.put(s.index);
    for (float v : s.action) w.put(v);
    for (float v : s.arm_q) w.put(v);
    for (float v : s.finger_q) w.put(v);
    for (float v : s.forces) w.put(v);
    if (s.frame) w.put_bytes(*s.frame);
  }
  w.seal();
  return w.bytes();
}

Dataset deserialize(std::span<const std::uint8_t> bytes) {
  const std::string what = "SSD1 dataset";
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw binio::MagicMismatchError(what + ": bad magic (not an SSD1 file)");
  }
  binio::Reader r(bytes, what);
  r.get_bytes(4);
  const auto version = r.get<std::uint32_t>();
  if (version != kFormatVersion) {
    throw binio::VersionMismatchError(what + ": unsupported format version " + std::to_string(version));
  }
  Dataset ds;
  const auto scenario = r.get<std::uint8_t>();
  if (scenario > 1) throw binio::FormatError(what + ": invalid scenario tag");
  ds.scenario = static_cast<Scenario>(scenario);
  ds.has_vision = r.get<std::uint8_t>() != 0;
  r.get<std::uint16_t>();
  ds.seed = r.get<std::uint64_t>();
  const auto count = r.get<std::uint32_t>();
  const auto cfg_len = r.get<std::uint32_t>();
  if (bytes.size() != serialized_size(count, ds.has_vision, cfg_len)) {
    if (bytes.size() < serialized_size(count, ds.has_vision, cfg_len)) {
      throw binio::TruncatedFileError(what + ": file is truncated");
    }
    throw binio::FormatError(what + ": trailing bytes after payload");
  }
  binio::verify_crc(bytes, what);
  const auto cfg_raw = r.get_bytes(cfg_len);
  ds.config_text.assign(cfg_raw.begin(), cfg_raw.end());
  for (auto& m : ds.stats.mean) m = r.get<float>();
  for (auto& s : ds.stats.std) s = r.get<float>();
  ds.samples.resize(count);
  for (auto& s : ds.samples) {
    s.index = r.get<std::uint32_t>();
    for (auto& v : s.action) v = r.get<float>();
    for (auto& v : s.arm_q) v = r.get<float>();
    for (auto& v : s.finger_q) v = r.get<float>();
    for (auto& v : s.forces) v = r.get<float>();
    if (ds.has_vision) {
      const auto raw = r.get_bytes(render::kPixels);
      render::FrameBytes frame;
      std::copy(raw.begin(), raw.end(), frame.begin());
      s.frame = frame;
    }
  }
  // Clamp flags are not stored; they follow from the samples.
  if (!ds.samples.empty()) ds.stats.clamped = compute_norm_stats(ds).clamped;
  return ds;
}

void save(const Dataset& ds, const std::string& path) { binio::write_file_atomic(path, serialize(ds)); }

Dataset load(const std::string& path) { return deserialize(binio::read_file(path)); }

}  // namespace softsense::data
