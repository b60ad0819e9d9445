#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "softsense/config.hpp"
#include "softsense/render.hpp"
#include "softsense/sim.hpp"

namespace softsense::data {

inline constexpr int kFingerDims = 20;
inline constexpr int kForceDims = 20;
inline constexpr int kActionDims = 3;
inline constexpr int kNormChannels = kFingerDims + kForceDims + kActionDims;

inline constexpr int kStepsPerSegment = 1000;  // 1 s of 1 kHz physics per command
inline constexpr int kStepsPerSample = 100;    // 10 Hz sampling
inline constexpr int kSamplesPerCommand = kStepsPerSegment / kStepsPerSample;
inline constexpr double kSamplePeriod = kStepsPerSample * sim::kPhysicsDt;

enum class Scenario : std::uint8_t { Empty = 0, Cluttered = 1 };

std::string to_string(Scenario s);
Scenario scenario_from_string(const std::string& s);

/// Target arm joint configuration for one command segment.
struct Command {
  double q1 = 0.0;
  double q2 = 0.0;
  double q3 = 0.0;

  struct Range {
    double lo, hi;
  };
  static constexpr std::array<Range, 3> kRanges{{{3 * std::numbers::pi / 4, 5 * std::numbers::pi / 4},
                                                  {-1.0, 0.0},
                                                  {0.0, 1.5}}};

  bool in_range() const;
  /// Each joint mapped affinely from its range onto [-1,1].
  std::array<double, 3> normalized() const;
  sim::ArmState as_arm() const { return {q1, q2, q3}; }
  bool operator==(const Command&) const = default;
};

/// Arm rest configuration every episode starts from.
inline constexpr Command kRestCommand{std::numbers::pi, -0.5, 0.75};

/// x0 + (x1 - x0)(3u^2 - 2u^3); throws std::domain_error for u outside [0,1].
double smooth_step(double x0, double x1, double u);

/// Smooth-step transition of all three arm joints from `from` to `to` over `duration` seconds.
struct SmoothSegment {
  sim::ArmState from;
  sim::ArmState to;
  double duration = 1.0;
  sim::ArmMotion at(double t) const;
};

std::vector<Command> generate_commands(int n, std::uint64_t seed);

std::vector<sim::BoxBody> spawn_boxes(const BoxSpawn& spawn, std::uint64_t seed);

struct Sample {
  std::uint32_t index = 0;
  std::array<float, 3> action{};  // commanded target, raw units
  std::array<float, 3> arm_q{};
  std::array<float, kFingerDims> finger_q{};
  std::array<float, kForceDims> forces{};
  std::optional<render::FrameBytes> frame;

  Command command() const { return {action[0], action[1], action[2]}; }
  bool operator==(const Sample&) const = default;
};

/// Per-channel standardization statistics. Channels: finger_q (0..19), forces (20..39), action (40..42).
struct NormStats {
  std::array<float, kNormChannels> mean{};
  std::array<float, kNormChannels> std{};
  std::array<bool, kNormChannels> clamped{};  // std was below 1e-8 and forced to 1

  static constexpr int kFingerOffset = 0;
  static constexpr int kForceOffset = kFingerDims;
  static constexpr int kActionOffset = kFingerDims + kForceDims;

  double standardize(int channel, double v) const { return (v - mean[channel]) / std[channel]; }
  double destandardize(int channel, double z) const { return z * std[channel] + mean[channel]; }
  bool operator==(const NormStats&) const = default;
};

struct Dataset {
  Scenario scenario = Scenario::Empty;
  std::uint64_t seed = 0;
  bool has_vision = false;
  std::string config_text;
  NormStats stats;
  std::vector<Sample> samples;

  bool operator==(const Dataset&) const = default;
};

/// Raised when an episode cannot complete; no dataset is produced.
class EpisodeError : public std::runtime_error {
 public:
  EpisodeError(const std::string& what, std::size_t recorded)
      : std::runtime_error(what), samples_recorded(recorded) {}
  std::size_t samples_recorded;
};

struct EpisodeOptions {
  Scenario scenario = Scenario::Empty;
  std::uint64_t seed = 0;
  bool with_vision = false;
  /// Called after every command segment with (segments done, total).
  std::function<void(std::size_t, std::size_t)> progress;
};

/// Simulation state observed at each sample instant, for property checks.
struct EpisodeTrace {
  std::vector<double> max_joint_speed;  // per sample
  std::vector<double> energy;           // per sample
};

/// Runs every command as a 1 s smooth-step segment of 1 kHz physics and records 10 samples per segment.
/// Throws EpisodeError if the simulation becomes unstable.
Dataset run_episode(const std::vector<Command>& commands, const SimConfig& cfg, const std::string& config_text,
                    const EpisodeOptions& options, EpisodeTrace* trace = nullptr);

NormStats compute_norm_stats(const Dataset& ds);

inline constexpr std::uint32_t kFormatVersion = 1;

void save(const Dataset& ds, const std::string& path);
Dataset load(const std::string& path);
std::vector<std::uint8_t> serialize(const Dataset& ds);
Dataset deserialize(std::span<const std::uint8_t> bytes);

/// Exact byte size of a serialized dataset.
std::size_t serialized_size(std::size_t n_samples, bool has_vision, std::size_t config_bytes);

}  // namespace softsense::data
