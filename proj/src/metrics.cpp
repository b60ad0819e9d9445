#include "softsense/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "softsense/binio.hpp"
#include "softsense/render.hpp"

namespace softsense::metrics {
namespace {

void check_lengths(std::span<const double> a, std::span<const double> p, const char* what) {
  if (a.empty()) throw MetricError(std::string(what) + ": empty input");
  if (a.size() != p.size()) {
    throw MetricError(std::string(what) + ": length mismatch (" + std::to_string(a.size()) + " actual, " +
                      std::to_string(p.size()) + " predicted)");
  }
}

template <class Fn>
std::optional<double> defined(Fn&& fn) {
  try {
    return fn();
  } catch (const ZeroDenominatorError&) {
    return std::nullopt;
  } catch (const DegenerateVarianceError&) {
    return std::nullopt;
  }
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : "NA"; }

void write_text(const std::string& path, const std::string& text) {
  binio::write_file_atomic(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

}  // namespace

double smape(std::span<const double> actual, std::span<const double> predicted) {
  check_lengths(actual, predicted, "smape");
  double sum = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    const double den = std::abs(actual[i]) + std::abs(predicted[i]);
    if (den > 0) sum += std::abs(predicted[i] - actual[i]) / den;
  }
  return 100.0 * sum / static_cast<double>(actual.size());
}

double wmape(std::span<const double> actual, std::span<const double> predicted) {
  check_lengths(actual, predicted, "wmape");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    num += std::abs(actual[i] - predicted[i]);
    den += std::abs(actual[i]);
  }
  if (den == 0.0) throw ZeroDenominatorError("wmape: actual values are all zero");
  return 100.0 * num / den;
}

double r2(std::span<const double> actual, std::span<const double> predicted) {
  check_lengths(actual, predicted, "r2");
  if (actual.size() < 2) throw MetricError("r2: needs at least 2 values");
  double mean = 0.0;
  for (double a : actual) mean += a;
  mean /= static_cast<double>(actual.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    ss_res += (actual[i] - predicted[i]) * (actual[i] - predicted[i]);
    ss_tot += (actual[i] - mean) * (actual[i] - mean);
  }
  if (ss_tot == 0.0) throw DegenerateVarianceError("r2: actual values have zero variance");
  return 1.0 - ss_res / ss_tot;
}

ForceTable force_histogram(const data::Dataset& ds) {
  ForceTable t;
  t.samples = ds.samples.size();
  if (ds.samples.empty()) return t;
  const double n = static_cast<double>(ds.samples.size());
  constexpr int half = data::kForceDims / 2;
  for (const auto& s : ds.samples) {
    for (int j = 0; j < data::kForceDims; ++j) {
      const double f = s.forces[j];
      auto& l = t.links[j];
      l.mean += f / n;
      l.max = std::max(l.max, f);
      if (f != 0.0) l.nonzero_rate += 1.0 / n;
      (j < half ? t.proximal_mean : t.distal_mean) += f / (n * half);
    }
  }
  return t;
}

std::string force_table_csv(const ForceTable& t) {
  std::ostringstream os;
  os.precision(9);
  os << "link,mean,max,nonzero_rate\n";
  for (int j = 0; j < data::kForceDims; ++j) {
    os << j << ',' << t.links[j].mean << ',' << t.links[j].max << ',' << t.links[j].nonzero_rate << '\n';
  }
  os << "proximal," << t.proximal_mean << ",,\n";
  os << "distal," << t.distal_mean << ",,\n";
  return os.str();
}

EvalReport evaluate(const models::FusionModel& model, const data::Dataset& ds, std::span<const std::uint32_t> starts) {
  if (starts.empty()) throw MetricError("evaluate: no transitions to evaluate");
  const bool vision = model.arch().variant == models::Variant::P2;
  const std::size_t n = starts.size();
  // Column-major per channel so every metric sees one contiguous vector.
  std::vector<std::vector<double>> q_true(data::kFingerDims), q_pred(data::kFingerDims);
  std::vector<std::vector<double>> f_true(data::kForceDims), f_pred(data::kForceDims);
  constexpr std::size_t kChunk = 256;
  for (std::size_t begin = 0; begin < n; begin += kChunk) {
    const auto chunk = starts.subspan(begin, std::min(kChunk, n - begin));
    const auto batch = models::make_batch(ds, model.stats(), chunk, vision);
    const auto p = model.predict(batch);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const auto& next = ds.samples[chunk[i] + 1];
      for (int j = 0; j < data::kFingerDims; ++j) {
        q_true[j].push_back(next.finger_q[j]);
        q_pred[j].push_back(p.finger_q.row(static_cast<int>(i))[j]);
      }
      for (int j = 0; j < data::kForceDims; ++j) {
        f_true[j].push_back(next.forces[j]);
        f_pred[j].push_back(p.forces.row(static_cast<int>(i))[j]);
      }
    }
  }

  auto pooled = [](const std::vector<std::vector<double>>& cols, auto&& keep) {
    std::vector<double> out;
    for (std::size_t j = 0; j < cols.size(); ++j) {
      if (keep(static_cast<int>(j))) out.insert(out.end(), cols[j].begin(), cols[j].end());
    }
    return out;
  };
  auto is_fe = [](int j) { return FingerConfig::axis(j) == JointAxis::FlexionExtension; };
  auto is_aa = [](int j) { return FingerConfig::axis(j) == JointAxis::AdductionAbduction; };
  auto all = [](int) { return true; };
  auto tip = [](int j) { return j == kFingertipJoints[0] || j == kFingertipJoints[1]; };

  EvalReport r;
  r.scenario = ds.scenario;
  r.variant = model.arch().variant;
  r.latent = model.arch().latent;
  r.n = n;
  double fe = 0.0, aa = 0.0, sum = 0.0, tip_sum = 0.0;
  int n_fe = 0, n_aa = 0;
  for (int j = 0; j < data::kFingerDims; ++j) {
    const double s = smape(q_true[j], q_pred[j]);
    sum += s;
    if (is_fe(j)) {
      fe += s;
      ++n_fe;
    } else {
      aa += s;
      ++n_aa;
    }
    if (tip(j)) tip_sum += s;
  }
  r.smape_fe = fe / n_fe;
  r.smape_aa = aa / n_aa;
  r.smape_mean = sum / data::kFingerDims;
  r.fingertip_smape = tip_sum / static_cast<double>(kFingertipJoints.size());
  r.r2_fe = defined([&] { return r2(pooled(q_true, is_fe), pooled(q_pred, is_fe)); }).value_or(std::nan(""));
  r.r2_aa = defined([&] { return r2(pooled(q_true, is_aa), pooled(q_pred, is_aa)); }).value_or(std::nan(""));
  r.force_wmape = defined([&] { return wmape(pooled(f_true, all), pooled(f_pred, all)); });
  r.force_r2 = defined([&] { return r2(pooled(f_true, all), pooled(f_pred, all)); });
  r.fingertip_force_wmape = defined([&] { return wmape(pooled(f_true, tip), pooled(f_pred, tip)); });
  return r;
}

double reconstruction_smape(const models::ReconModel& recon, const data::Dataset& ds,
                            std::span<const std::uint32_t> starts) {
  if (starts.empty()) throw MetricError("reconstruction_smape: no samples");
  const bool vision = recon.encoder().arch().variant == models::Variant::P2;
  std::vector<std::vector<double>> truth(data::kFingerDims), pred(data::kFingerDims);
  constexpr std::size_t kChunk = 256;
  for (std::size_t begin = 0; begin < starts.size(); begin += kChunk) {
    const auto chunk = starts.subspan(begin, std::min(kChunk, starts.size() - begin));
    const auto batch = models::make_batch(ds, recon.encoder().stats(), chunk, vision);
    const auto out = recon.reconstruct(batch);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      for (int j = 0; j < data::kFingerDims; ++j) {
        truth[j].push_back(ds.samples[chunk[i]].finger_q[j]);
        pred[j].push_back(out.row(static_cast<int>(i))[j]);
      }
    }
  }
  double sum = 0.0;
  for (int j = 0; j < data::kFingerDims; ++j) sum += smape(truth[j], pred[j]);
  return sum / data::kFingerDims;
}

std::string report_csv_header() {
  return "scenario,variant,latent,n,smape_fe,smape_aa,smape_mean,r2_fe,r2_aa,force_wmape,force_r2,"
         "fingertip_smape,fingertip_force_wmape,recon_smape";
}

std::string report_csv_row(const EvalReport& r) {
  std::ostringstream os;
  os << data::to_string(r.scenario) << ',' << models::to_string(r.variant) << ',' << r.latent << ',' << r.n << ','
     << fmt(r.smape_fe) << ',' << fmt(r.smape_aa) << ',' << fmt(r.smape_mean) << ',' << fmt(r.r2_fe) << ','
     << fmt(r.r2_aa) << ',' << fmt(r.force_wmape) << ',' << fmt(r.force_r2) << ',' << fmt(r.fingertip_smape) << ','
     << fmt(r.fingertip_force_wmape) << ',' << fmt(r.recon_smape);
  return os.str();
}

std::string report_text(const EvalReport& r) {
  std::ostringstream os;
  os << "scenario " << data::to_string(r.scenario) << ", " << models::to_string(r.variant) << " latent " << r.latent
     << ", n = " << r.n << "\n"
     << "  proprioception SMAPE  FE " << fmt(r.smape_fe) << " %  AA " << fmt(r.smape_aa) << " %  mean "
     << fmt(r.smape_mean) << " %\n"
     << "  proprioception R2     FE " << fmt(r.r2_fe) << "  AA " << fmt(r.r2_aa) << "\n"
     << "  force WMAPE " << fmt(r.force_wmape) << " %  force R2 " << fmt(r.force_r2) << "\n"
     << "  fingertip SMAPE " << fmt(r.fingertip_smape) << " %  fingertip force WMAPE "
     << fmt(r.fingertip_force_wmape) << " %\n";
  if (r.recon_smape) os << "  reconstruction SMAPE " << fmt(r.recon_smape) << " %\n";
  return os.str();
}

std::vector<std::uint8_t> flow_triptych(const render::FrameBytes& frame, const models::Tensor& reference,
                                        const models::Tensor& predicted, int row) {
  constexpr int plane = render::kWidth * render::kHeight;
  auto to_flow = [&](const models::Tensor& t) {
    render::FlowFrame f;
    const float* src = t.row(row);
    for (int p = 0; p < plane; ++p) {
      for (int c = 0; c < render::kChannels; ++c) f.pixels[p * render::kChannels + c] = src[c * plane + p];
    }
    return render::flow_to_bytes(f);
  };
  return render::hstack({frame, to_flow(reference), to_flow(predicted)});
}

std::vector<Comparison> compare(const std::vector<EvalReport>& reports, const std::array<int, 3>& p1_latents,
                                const std::array<int, 3>& p2_latents) {
  std::vector<Comparison> out;
  for (auto scenario : {data::Scenario::Empty, data::Scenario::Cluttered}) {
    auto find = [&](models::Variant v, int latent) -> const EvalReport* {
      for (const auto& r : reports) {
        if (r.scenario == scenario && r.variant == v && r.latent == latent) return &r;
      }
      return nullptr;
    };
    Comparison c{scenario, {}, {}, {}, {}, 0.0, 0.0, {}};
    bool any = false;
    auto best = [&](models::Variant v, const std::array<int, 3>& latents, std::optional<double>& wm,
                    std::optional<double>& r2v, double& sm) {
      sm = std::numeric_limits<double>::infinity();
      for (int l : latents) {
        const auto* r = find(v, l);
        if (!r) continue;
        any = true;
        sm = std::min(sm, r->smape_mean);
        if (r->force_wmape && (!wm || *r->force_wmape < *wm)) wm = r->force_wmape;
        if (r->force_r2 && (!r2v || *r->force_r2 > *r2v)) r2v = r->force_r2;
      }
    };
    best(models::Variant::P1, p1_latents, c.p1_force_wmape, c.p1_force_r2, c.p1_smape);
    best(models::Variant::P2, p2_latents, c.p2_force_wmape, c.p2_force_r2, c.p2_smape);
    for (std::size_t i = 0; i < p1_latents.size(); ++i) {
      const auto* a = find(models::Variant::P1, p1_latents[i]);
      const auto* b = find(models::Variant::P2, p2_latents[i]);
      if (a && b && a->recon_smape && b->recon_smape) c.recon_pairs.emplace_back(*a->recon_smape, *b->recon_smape);
    }
    if (any) out.push_back(c);
  }
  return out;
}

std::string comparison_text(const std::vector<Comparison>& comparisons) {
  std::ostringstream os;
  for (const auto& c : comparisons) {
    os << "scenario " << data::to_string(c.scenario) << "\n"
       << "  best force WMAPE   P1 " << fmt(c.p1_force_wmape) << " %  P2 " << fmt(c.p2_force_wmape) << " %\n"
       << "  best force R2      P1 " << fmt(c.p1_force_r2) << "  P2 " << fmt(c.p2_force_r2) << "\n"
       << "  best proprio SMAPE P1 " << fmt(c.p1_smape) << " %  P2 " << fmt(c.p2_smape) << " %\n";
    for (const auto& [a, b] : c.recon_pairs) os << "  reconstruction SMAPE P1 " << fmt(a) << " %  P2 " << fmt(b) << " %\n";
  }
  return os.str();
}

SweepResult sweep(const SweepConfig& cfg) {
  namespace fs = std::filesystem;
  cfg.train.validate();
  auto log = [&](const std::string& msg) {
    if (cfg.log) cfg.log(msg);
  };
  const bool write = !cfg.out_dir.empty();
  std::ofstream csv, timings;
  if (write) {
    fs::create_directories(fs::path(cfg.out_dir) / "cells");
    fs::create_directories(fs::path(cfg.out_dir) / "flow");
    csv.open(fs::path(cfg.out_dir) / "reports.csv");
    csv << report_csv_header() << '\n' << std::flush;
    timings.open(fs::path(cfg.out_dir) / "timings.csv");
    timings << "cell,seconds\n" << std::flush;
  }

  SweepResult result;
  for (const auto* ds : cfg.datasets) {
    const auto split = models::block_split(*ds, cfg.train.validation_fraction);
    for (auto variant : cfg.variants) {
      const auto& latents = variant == models::Variant::P1 ? cfg.p1_latents : cfg.p2_latents;
      for (int latent : latents) {
        const std::string tag = data::to_string(ds->scenario) + "_" + models::to_string(variant) + "_L" +
                                std::to_string(latent);
        log("training " + tag);
        const auto started = std::chrono::steady_clock::now();
        models::ArchSpec arch;
        arch.variant = variant;
        arch.latent = latent;
        arch.allow_any_latent = true;
        auto model = models::FusionModel::build(arch, ds->stats, cfg.seed);
        auto tc = cfg.train;
        tc.seed = cfg.seed;
        const auto trained = models::train(model, *ds, tc, split);
        auto report = evaluate(model, *ds, split.validation);
        if (cfg.reconstruction) {
          const auto recon = models::train_reconstruction(model, *ds, tc, split);
          report.recon_smape = reconstruction_smape(recon.model, *ds, split.validation);
        }
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        log(report_text(report) + "  cell time " + fmt(seconds) + " s");
        if (write) {
          timings << tag << ',' << fmt(seconds) << '\n' << std::flush;
          models::write_history_csv(trained.history, (fs::path(cfg.out_dir) / "cells" / (tag + "_history.csv")).string());
          csv << report_csv_row(report) << '\n' << std::flush;
          if (variant == models::Variant::P2 && cfg.flow_examples > 0) {
            const int count = std::min<int>(cfg.flow_examples, static_cast<int>(split.validation.size()));
            // Evenly spaced held-out transitions.
            std::vector<std::uint32_t> picks;
            for (int i = 0; i < count; ++i) picks.push_back(split.validation[i * split.validation.size() / count]);
            const auto batch = models::make_batch(*ds, model.stats(), picks, true);
            const auto pred = model.predict(batch);
            for (int i = 0; i < count; ++i) {
              const auto rgb = flow_triptych(*ds->samples[picks[i]].frame, batch.flow, pred.flow, i);
              render::write_ppm((fs::path(cfg.out_dir) / "flow" / (tag + "_" + std::to_string(picks[i]) + ".ppm")).string(),
                                rgb, 3 * render::kWidth, render::kHeight);
            }
          }
        }
        result.reports.push_back(report);
      }
    }
  }
  result.comparisons = compare(result.reports, cfg.p1_latents, cfg.p2_latents);
  if (write) {
    std::string summary;
    for (const auto& r : result.reports) summary += report_text(r);
    summary += "\n" + comparison_text(result.comparisons);
    write_text((fs::path(cfg.out_dir) / "summary.txt").string(), summary);
  }
  return result;
}

}  // namespace softsense::metrics
