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
#include "softsense/models.hpp"

namespace softsense::metrics {

class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};
/// Σ|actual| = 0, so WMAPE is undefined (an all-zero force column).
class ZeroDenominatorError : public MetricError {
 public:
  using MetricError::MetricError;
};
/// Actual values have zero variance, so R2 is undefined.
class DegenerateVarianceError : public MetricError {
 public:
  using MetricError::MetricError;
};

/// Symmetric MAPE in percent; terms where both values are 0 contribute 0.
double smape(std::span<const double> actual, std::span<const double> predicted);
/// 100 Σ|a - p| / Σ|a|.
double wmape(std::span<const double> actual, std::span<const double> predicted);
/// 1 - SS_res / SS_tot.
double r2(std::span<const double> actual, std::span<const double> predicted);

struct LinkForceStats {
  double mean = 0.0;
  double max = 0.0;
  double nonzero_rate = 0.0;
};

struct ForceTable {
  std::array<LinkForceStats, data::kForceDims> links{};
  double proximal_mean = 0.0;  // mean over links 0..9 and samples
  double distal_mean = 0.0;    // mean over links 10..19 and samples
  std::size_t samples = 0;
};

ForceTable force_histogram(const data::Dataset& ds);
std::string force_table_csv(const ForceTable& t);

/// Joints 0, 2, ... flex/extend; 1, 3, ... adduct/abduct.
inline constexpr std::array<int, 2> kFingertipJoints{data::kFingerDims - 2, data::kFingerDims - 1};

struct EvalReport {
  data::Scenario scenario = data::Scenario::Empty;
  models::Variant variant = models::Variant::P1;
  int latent = 0;
  std::size_t n = 0;
  double smape_fe = 0.0;    // mean of per-joint SMAPE over flexion/extension joints
  double smape_aa = 0.0;    // same over adduction/abduction joints
  double smape_mean = 0.0;  // over all 20 joints
  double r2_fe = 0.0;       // pooled over the group's channels
  double r2_aa = 0.0;
  std::optional<double> force_wmape;  // empty when the held-out block has no contact
  std::optional<double> force_r2;
  double fingertip_smape = 0.0;
  std::optional<double> fingertip_force_wmape;
  std::optional<double> recon_smape;  // frozen-encoder proprioception reconstruction
};

/// Mean-mode predictions for transitions starting at `starts`, compared with the true next samples.
EvalReport evaluate(const models::FusionModel& model, const data::Dataset& ds, std::span<const std::uint32_t> starts);

/// Mean per-joint SMAPE of reconstructed proprioception for the samples at `starts`.
double reconstruction_smape(const models::ReconModel& recon, const data::Dataset& ds,
                            std::span<const std::uint32_t> starts);

std::string report_csv_header();
std::string report_csv_row(const EvalReport& r);
std::string report_text(const EvalReport& r);

struct SweepCell {
  data::Scenario scenario;
  models::Variant variant;
  int latent;
};

struct SweepConfig {
  std::vector<const data::Dataset*> datasets;  // one per scenario
  std::vector<models::Variant> variants{models::Variant::P1, models::Variant::P2};
  std::array<int, 3> p1_latents = models::ArchSpec::paper_latents(models::Variant::P1);
  std::array<int, 3> p2_latents = models::ArchSpec::paper_latents(models::Variant::P2);
  models::TrainConfig train;
  std::uint64_t seed = 0;
  bool reconstruction = true;
  int flow_examples = 3;  // triptychs per P2 cell
  std::string out_dir;    // empty: nothing written
  std::function<void(const std::string&)> log;
};

/// Best-cell comparison of the two variants within one scenario.
struct Comparison {
  data::Scenario scenario;
  std::optional<double> p1_force_wmape, p2_force_wmape;  // best (lowest) over latent sizes
  std::optional<double> p1_force_r2, p2_force_r2;        // best (highest)
  double p1_smape = 0.0, p2_smape = 0.0;                 // best (lowest) mean proprioception SMAPE
  /// Reconstruction SMAPE per matched pair (i-th P1 latent with i-th P2 latent).
  std::vector<std::pair<double, double>> recon_pairs;
};

struct SweepResult {
  std::vector<EvalReport> reports;
  std::vector<Comparison> comparisons;
};

/// Trains and evaluates every (scenario, variant, latent) cell on the block split.
/// With an output directory, each cell's report and loss history are flushed as soon as it finishes.
SweepResult sweep(const SweepConfig& cfg);

std::vector<Comparison> compare(const std::vector<EvalReport>& reports, const std::array<int, 3>& p1_latents,
                                const std::array<int, 3>& p2_latents);
std::string comparison_text(const std::vector<Comparison>& comparisons);

/// Side-by-side current frame, reference flow and predicted flow.
std::vector<std::uint8_t> flow_triptych(const render::FrameBytes& frame, const models::Tensor& reference,
                                        const models::Tensor& predicted, int row);

}  // namespace softsense::metrics
