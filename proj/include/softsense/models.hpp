#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "softsense/dataset.hpp"
#include "softsense/nn/checkpoint.hpp"
#include "softsense/nn/layers.hpp"

namespace softsense::models {

using Tensor = nn::Tensor<float>;
using Tape = nn::Tape<float>;
using Var = Tape::Var;

class InvalidArchError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Input modality does not match the model variant (frames given to P1 or missing for P2).
class ModalityError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DatasetTooSmallError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Variant : std::uint8_t { P1 = 1, P2 = 2 };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

inline constexpr int kTargetDims = data::kFingerDims + data::kForceDims;
inline constexpr int kFrameChannels = render::kChannels;
inline constexpr int kFrameSize = render::kWidth;

struct ArchSpec {
  Variant variant = Variant::P1;
  int latent = 4;
  int hidden = 256;
  int conv_channels = 8;
  bool allow_any_latent = false;

  static std::array<int, 3> paper_latents(Variant v);
  /// Throws InvalidArchError.
  void validate() const;
  std::string descriptor() const;
  static ArchSpec from_descriptor(const std::string& text);
  bool operator==(const ArchSpec&) const = default;
};

/// Network-ready tensors for a set of transitions (sample k -> sample k+1).
struct Batch {
  Tensor finger;  // [N, 20] standardized q_k
  Tensor frame;   // [N, 3, 64, 64] in [0,1]; empty unless vision
  Tensor action;  // [N, 3] command of sample k+1 mapped to [-1,1]
  Tensor target;  // [N, 40] standardized q_{k+1} then forces_{k+1}
  Tensor flow;    // [N, 3, 64, 64] frame_{k+1} - frame_k; empty unless vision
  int size() const { return finger.rows(); }
  bool has_vision() const { return frame.size() > 0; }
};

/// Transition start indices: k such that (k, k+1) are consecutive samples of the episode.
std::vector<std::uint32_t> transition_starts(const data::Dataset& ds);

struct Split {
  std::vector<std::uint32_t> train;
  std::vector<std::uint32_t> validation;
};

/// Block split: the first (1 - validation_fraction) of transitions train, the rest validate.
Split block_split(const data::Dataset& ds, double validation_fraction = 0.1);

Batch make_batch(const data::Dataset& ds, const data::NormStats& stats, std::span<const std::uint32_t> starts,
                 bool with_vision);

struct Latent {
  Tensor mu;      // [N, L]
  Tensor logvar;  // [N, L]
};

/// Predicted next-step targets in physical units.
struct Prediction {
  Tensor finger_q;  // [N, 20] rad
  Tensor forces;    // [N, 20] N
  Tensor flow;      // [N, 3, 64, 64]; P2 only
  Tensor standardized;  // [N, 40] raw decoder output for q and forces
};

/// CVAE: fusion encoder f -> latent sample -> action-conditioned predictive decoder p.
class FusionModel {
 public:
  static FusionModel build(const ArchSpec& arch, const data::NormStats& stats, std::uint64_t seed);
  static FusionModel from_checkpoint(const nn::Checkpoint& ckpt);

  FusionModel(FusionModel&&) = default;
  FusionModel& operator=(FusionModel&&) = default;
  FusionModel(const FusionModel&) = delete;
  FusionModel& operator=(const FusionModel&) = delete;

  const ArchSpec& arch() const { return arch_; }
  const data::NormStats& stats() const { return stats_; }
  nn::ParameterSet<float>& params() { return params_; }
  const nn::ParameterSet<float>& params() const { return params_; }
  std::vector<nn::Parameter<float>*> encoder_params();
  std::vector<nn::Parameter<float>*> decoder_params();

  struct EncodedVars {
    Var mu, logvar;
  };
  struct DecodedVars {
    Var target;
    std::optional<Var> flow;
  };
  EncodedVars encode(Tape& tape, const Batch& batch) const;
  DecodedVars decode(Tape& tape, Var z, Var action) const;

  /// Deterministic encoder output.
  Latent encode(const Batch& batch) const;
  /// Mean-mode (eps = 0) unless `eps` [N, L] is given.
  Prediction predict(const Batch& batch, const Tensor* eps = nullptr) const;

  nn::Checkpoint checkpoint() const;
  void save(const std::string& path) const;
  static FusionModel load(const std::string& path);

 private:
  FusionModel(const ArchSpec& arch, const data::NormStats& stats, std::uint64_t seed);
  void check_modality(const Batch& batch) const;

  ArchSpec arch_;
  data::NormStats stats_;
  nn::ParameterSet<float> params_;
  std::optional<nn::Conv<float>> enc_conv_;
  nn::Dense<float> enc_fc1_, enc_fc2_, enc_head_;
  nn::Dense<float> dec_fc1_, dec_fc2_, dec_head_;
  std::optional<nn::Dense<float>> dec_flow_fc_;
  std::optional<nn::ConvTranspose<float>> dec_flow_deconv_;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 1024;
  int max_epochs = 200;
  /// Stop after this many optimizer steps; 0 means no limit.
  int max_steps = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  double validation_fraction = 0.1;
  std::function<void(int epoch, int max_epochs)> progress;

  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  double train_mse = 0.0;  // per-sample summed squared error, standardized units
  double train_kl = 0.0;
  double val_mse = 0.0;  // mean-mode, same reduction
};

struct TrainResult {
  std::vector<EpochStats> history;
  int steps = 0;
  double final_loss = 0.0;  // mean total loss of the last epoch
};

/// Minimizes squared error on standardized targets plus KL to N(0, I).
TrainResult train(FusionModel& model, const data::Dataset& ds, const TrainConfig& cfg);
TrainResult train(FusionModel& model, const data::Dataset& ds, const TrainConfig& cfg, const Split& split);

void write_history_csv(const std::vector<EpochStats>& history, const std::string& path);

/// Decoder r trained on the frozen encoder's mean latents to reproduce the input proprioception.
class ReconModel {
 public:
  ReconModel(const FusionModel& encoder, std::uint64_t seed);

  const FusionModel& encoder() const { return *encoder_; }
  nn::ParameterSet<float>& params() { return params_; }
  Var decode(Tape& tape, Var latent) const;
  /// Reconstructed finger angles in physical units, [N, 20].
  Tensor reconstruct(const Batch& batch) const;

  ReconModel(ReconModel&&) = default;
  ReconModel(const ReconModel&) = delete;

 private:
  const FusionModel* encoder_;
  nn::ParameterSet<float> params_;
  nn::Dense<float> fc1_, fc2_, head_;
};

struct ReconResult {
  ReconModel model;
  std::vector<EpochStats> history;  // train_kl unused
};

/// Samples are the first sample of each transition in the split; the encoder is never updated.
ReconResult train_reconstruction(const FusionModel& model, const data::Dataset& ds, const TrainConfig& cfg);
ReconResult train_reconstruction(const FusionModel& model, const data::Dataset& ds, const TrainConfig& cfg,
                                 const Split& split);

}  // namespace softsense::models
