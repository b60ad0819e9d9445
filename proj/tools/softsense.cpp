#include <charconv>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "softsense/binio.hpp"
#include "softsense/config.hpp"
#include "softsense/dataset.hpp"
#include "softsense/metrics.hpp"
#include "softsense/models.hpp"
#include "softsense/render.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace softsense;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

/// Bad flags or a refused output; exits with kExitUsage.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Preset {
  int commands;
  int batch;
  int epochs;
};

Preset preset_values(const std::string& name) {
  if (name == "desk") return {400, 256, 50};
  if (name == "paper") return {4000, 1024, 200};
  throw UsageError("unknown preset '" + name + "' (expected desk or paper)");
}

struct SeedChoice {
  std::uint64_t value = 0;
  std::string source;
};

SeedChoice resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return {*flag, "flag"};
  if (const char* env = std::getenv("SOFTSENSE_SEED"); env && *env) {
    std::uint64_t v = 0;
    const auto* end = env + std::char_traits<char>::length(env);
    const auto [p, ec] = std::from_chars(env, end, v);
    if (ec != std::errc() || p != end) throw UsageError(std::string("SOFTSENSE_SEED is not an unsigned integer: ") + env);
    return {v, "SOFTSENSE_SEED"};
  }
  return {0, "default"};
}

std::string hex32(std::uint32_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(8) << std::setfill('0') << v;
  return os.str();
}

std::string text_digest(std::string_view text) {
  return "crc32:" + hex32(binio::crc32({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()}));
}

std::string file_digest(const std::string& path) { return "crc32:" + hex32(binio::crc32(binio::read_file(path))); }

std::string utc_stamp(const char* format) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, format);
  return os.str();
}

void require_input(const std::string& path) {
  if (!fs::exists(path)) throw std::runtime_error("input not found: " + path);
}

/// Outputs are write-once: refuse any path that already exists.
void claim_output(const std::string& path) {
  if (path.empty()) throw UsageError("--out is required");
  if (fs::exists(path)) throw UsageError("refusing to overwrite existing " + path);
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

std::string sidecar(const std::string& artifact) { return artifact + ".manifest.json"; }

/// Flags as a command line: true bools become --name, false ones --no-name.
json command_line(const std::string& subcommand, const json& flags) {
  json argv = json::array({"softsense", subcommand});
  for (const auto& [key, value] : flags.items()) {
    if (value.is_null()) continue;
    if (value.is_boolean()) {
      argv.push_back((value.get<bool>() ? "--" : "--no-") + key);
    } else if (value.is_array()) {
      for (const auto& v : value) {
        argv.push_back("--" + key);
        argv.push_back(v.is_string() ? v.get<std::string>() : v.dump());
      }
    } else {
      argv.push_back("--" + key);
      argv.push_back(value.is_string() ? value.get<std::string>() : value.dump());
    }
  }
  return argv;
}

struct Manifest {
  std::string subcommand;
  json flags = json::object();
  SeedChoice seed;
  std::string config_digest;
  std::string config_text;  // stored when the run read a config file
  json inputs = json::object();
  json outputs = json::array();

  void write(const std::string& path) const {
    json m;
    m["tool"] = "softsense";
    m["version"] = SOFTSENSE_VERSION;
    m["subcommand"] = subcommand;
    m["flags"] = flags;
    m["seeds"] = {{"seed", seed.value}, {"source", seed.source}};
    m["config_digest"] = config_digest;
    if (!config_text.empty()) m["config_text"] = config_text;
    m["inputs"] = inputs;
    m["outputs"] = outputs;
    m["command"] = command_line(subcommand, flags);
    m["created_utc"] = utc_stamp("%Y-%m-%dT%H:%M:%SZ");
    const auto text = m.dump(2) + "\n";
    binio::write_file_atomic(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
  }
};

void add_input(Manifest& m, const std::string& path) { m.inputs[path] = file_digest(path); }

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
  std::string scenario = "empty";
  std::optional<int> commands;
  bool vision = true;
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

int run_simulate(const SimulateArgs& a, const Preset& preset, const std::string& preset_name) {
  const auto scenario = data::scenario_from_string(a.scenario);
  const int n = a.commands.value_or(preset.commands);
  if (n < 1) throw UsageError("--commands must be at least 1");
  const auto seed = resolve_seed(a.seed);
  claim_output(a.out);
  claim_output(sidecar(a.out));

  std::string text(default_config_text());
  if (!a.config.empty()) {
    require_input(a.config);
    std::ifstream in(a.config, std::ios::binary);
    text.assign(std::istreambuf_iterator<char>(in), {});
  }
  const auto cfg = parse_config(text);

  data::EpisodeOptions opt;
  opt.scenario = scenario;
  opt.seed = seed.value;
  opt.with_vision = a.vision;
  opt.progress = [](std::size_t done, std::size_t total) {
    if (done == total || done % std::max<std::size_t>(1, total / 10) == 0) {
      std::cerr << "simulate: " << done << "/" << total << " commands\n";
    }
  };
  const auto ds = data::run_episode(data::generate_commands(n, seed.value), cfg, text, opt);
  data::save(ds, a.out);

  const auto forces = metrics::force_histogram(ds);
  std::cout << "wrote " << a.out << ": " << ds.samples.size() << " samples, scenario " << a.scenario
            << ", vision " << (a.vision ? "yes" : "no") << "\n"
            << "mean link force proximal " << forces.proximal_mean << " N, distal " << forces.distal_mean << " N\n";

  Manifest m;
  m.subcommand = "simulate";
  m.flags = {{"preset", preset_name}, {"scenario", a.scenario}, {"commands", n}, {"vision", a.vision},
             {"seed", seed.value}, {"out", a.out}};
  if (!a.config.empty()) m.flags["config"] = a.config;
  m.seed = seed;
  m.config_digest = text_digest(text);
  if (!a.config.empty()) m.config_text = text;
  m.outputs.push_back({{"path", a.out}, {"digest", file_digest(a.out)}, {"samples", ds.samples.size()}});
  m.write(sidecar(a.out));
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string data;
  std::string arch = "p1";
  std::optional<int> latent;
  bool allow_any_latent = false;
  std::optional<int> epochs;
  std::optional<int> batch;
  double lr = 1e-3;
  int max_steps = 0;
  std::optional<std::uint64_t> seed;
  std::string out;
};

models::Variant parse_variant(const std::string& s) {
  if (s == "p1" || s == "P1") return models::Variant::P1;
  if (s == "p2" || s == "P2") return models::Variant::P2;
  throw UsageError("unknown architecture '" + s + "' (expected p1 or p2)");
}

int run_train(const TrainArgs& a, const Preset& preset, const std::string& preset_name) {
  models::ArchSpec arch;
  arch.variant = parse_variant(a.arch);
  if (!a.latent) throw UsageError("--latent is required");
  arch.latent = *a.latent;
  arch.allow_any_latent = a.allow_any_latent;
  try {
    arch.validate();
  } catch (const models::InvalidArchError& e) {
    throw UsageError(e.what());
  }
  const auto seed = resolve_seed(a.seed);
  models::TrainConfig cfg;
  cfg.learning_rate = a.lr;
  cfg.batch_size = a.batch.value_or(preset.batch);
  cfg.max_epochs = a.epochs.value_or(preset.epochs);
  cfg.max_steps = a.max_steps;
  cfg.seed = seed.value;
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const std::string history = a.out + ".history.csv";
  claim_output(a.out);
  claim_output(history);
  claim_output(sidecar(a.out));
  require_input(a.data);

  const auto ds = data::load(a.data);
  if (arch.variant == models::Variant::P2 && !ds.has_vision) {
    throw UsageError("P2 needs a dataset with frames; " + a.data + " has none");
  }
  auto model = models::FusionModel::build(arch, ds.stats, seed.value);
  cfg.progress = [](int epoch, int total) {
    if (epoch == total || epoch % std::max(1, total / 10) == 0) std::cerr << "train: epoch " << epoch << "/" << total << "\n";
  };
  const auto result = models::train(model, ds, cfg);
  model.save(a.out);
  models::write_history_csv(result.history, history);
  std::cout << "wrote " << a.out << ": " << models::to_string(arch.variant) << " L=" << arch.latent << ", "
            << result.history.size() << " epochs, " << result.steps << " steps, final loss " << result.final_loss
            << "\n";

  Manifest m;
  m.subcommand = "train";
  m.flags = {{"preset", preset_name}, {"data", a.data},        {"arch", a.arch},
             {"latent", arch.latent}, {"allow-any-latent", a.allow_any_latent},
             {"lr", cfg.learning_rate}, {"batch", cfg.batch_size}, {"epochs", cfg.max_epochs},
             {"max-steps", cfg.max_steps}, {"seed", seed.value},  {"out", a.out}};
  m.seed = seed;
  m.config_digest = text_digest(ds.config_text);
  add_input(m, a.data);
  m.outputs.push_back({{"path", a.out}, {"digest", file_digest(a.out)}});
  m.outputs.push_back({{"path", history}, {"digest", file_digest(history)}});
  m.write(sidecar(a.out));
  return 0;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string model;
  std::string data;
  std::string split = "validation";
  std::string out;
};

int run_eval(const EvalArgs& a) {
  if (a.split != "validation" && a.split != "all") throw UsageError("--split must be validation or all");
  claim_output(a.out);
  claim_output(sidecar(a.out));
  require_input(a.model);
  require_input(a.data);
  const auto model = models::FusionModel::load(a.model);
  const auto ds = data::load(a.data);
  if (model.arch().variant == models::Variant::P2 && !ds.has_vision) {
    throw UsageError("P2 model needs a dataset with frames; " + a.data + " has none");
  }
  const auto starts = a.split == "all" ? models::transition_starts(ds) : models::block_split(ds).validation;
  const auto report = metrics::evaluate(model, ds, starts);
  const auto text = metrics::report_csv_header() + "\n" + metrics::report_csv_row(report) + "\n";
  binio::write_file_atomic(a.out, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
  std::cout << metrics::report_text(report);

  Manifest m;
  m.subcommand = "eval";
  m.flags = {{"model", a.model}, {"data", a.data}, {"split", a.split}, {"out", a.out}};
  m.seed = {0, "unused"};
  m.config_digest = text_digest(ds.config_text);
  add_input(m, a.model);
  add_input(m, a.data);
  m.outputs.push_back({{"path", a.out}, {"digest", file_digest(a.out)}});
  m.write(sidecar(a.out));
  return 0;
}

// ---------------------------------------------------------------- sweep

struct SweepArgs {
  std::vector<std::string> data;
  std::optional<int> epochs;
  std::optional<int> batch;
  double lr = 1e-3;
  bool recon = true;
  int flow_examples = 3;
  int jobs = 1;
  std::optional<std::uint64_t> seed;
  std::string out = "runs";
};

int run_sweep(const SweepArgs& a, const Preset& preset, const std::string& preset_name) {
  if (a.data.empty() || a.data.size() > 2) throw UsageError("--data takes one dataset per scenario (1 or 2)");
  if (a.jobs < 1) throw UsageError("--jobs must be at least 1");
  if (a.flow_examples < 0) throw UsageError("--flow-examples must be non-negative");
  const auto seed = resolve_seed(a.seed);
  models::TrainConfig train;
  train.learning_rate = a.lr;
  train.batch_size = a.batch.value_or(preset.batch);
  train.max_epochs = a.epochs.value_or(preset.epochs);
  train.seed = seed.value;
  try {
    train.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  for (const auto& p : a.data) require_input(p);

  std::vector<data::Dataset> datasets;
  for (const auto& p : a.data) datasets.push_back(data::load(p));
  if (datasets.size() == 2 && datasets[0].scenario == datasets[1].scenario) {
    throw UsageError("the two datasets must cover different scenarios");
  }
  const auto dir = (fs::path(a.out) / ("sweep_" + utc_stamp("%Y%m%dT%H%M%SZ") + "_seed" + std::to_string(seed.value))).string();
  claim_output(dir);
  fs::create_directories(dir);

  metrics::SweepConfig cfg;
  for (const auto& d : datasets) cfg.datasets.push_back(&d);
  cfg.train = train;
  cfg.seed = seed.value;
  cfg.reconstruction = a.recon;
  cfg.flow_examples = a.flow_examples;
  cfg.out_dir = dir;
  cfg.log = [](const std::string& line) { std::cerr << "sweep: " << line << "\n"; };
  // Cells run one after another; --jobs only bounds concurrency.
  const auto result = metrics::sweep(cfg);
  std::cout << metrics::comparison_text(result.comparisons) << "results in " << dir << "\n";

  Manifest m;
  m.subcommand = "sweep";
  m.flags = {{"preset", preset_name},     {"data", a.data},   {"epochs", train.max_epochs},
             {"batch", train.batch_size}, {"lr", a.lr},       {"recon", a.recon},
             {"flow-examples", a.flow_examples}, {"jobs", a.jobs}, {"seed", seed.value},
             {"out", a.out}};
  m.seed = seed;
  m.config_digest = text_digest(datasets.front().config_text);
  for (const auto& p : a.data) add_input(m, p);
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) m.outputs.push_back(fs::relative(e.path(), dir).string());
  }
  m.write((fs::path(dir) / "manifest.json").string());
  return 0;
}

// ---------------------------------------------------------------- render / flow

struct FrameArgs {
  std::string model;
  std::string data;
  int index = 0;
  std::string out;
};

const data::Sample& pick(const data::Dataset& ds, int index, const std::string& path) {
  if (!ds.has_vision) throw UsageError(path + " has no frames");
  if (index < 0 || static_cast<std::size_t>(index) >= ds.samples.size()) {
    throw UsageError("--index " + std::to_string(index) + " outside 0.." + std::to_string(ds.samples.size() - 1));
  }
  return ds.samples[index];
}

int run_render(const FrameArgs& a) {
  claim_output(a.out);
  claim_output(sidecar(a.out));
  require_input(a.data);
  const auto ds = data::load(a.data);
  render::write_ppm(a.out, *pick(ds, a.index, a.data).frame);
  std::cout << "wrote " << a.out << "\n";

  Manifest m;
  m.subcommand = "render";
  m.flags = {{"data", a.data}, {"index", a.index}, {"out", a.out}};
  m.seed = {0, "unused"};
  m.config_digest = text_digest(ds.config_text);
  add_input(m, a.data);
  m.outputs.push_back({{"path", a.out}, {"digest", file_digest(a.out)}});
  m.write(sidecar(a.out));
  return 0;
}

int run_flow(const FrameArgs& a) {
  claim_output(a.out);
  claim_output(sidecar(a.out));
  require_input(a.model);
  require_input(a.data);
  const auto model = models::FusionModel::load(a.model);
  if (model.arch().variant != models::Variant::P2) throw UsageError(a.model + " is not a P2 model");
  const auto ds = data::load(a.data);
  const auto& sample = pick(ds, a.index, a.data);
  const auto starts = models::transition_starts(ds);
  if (std::find(starts.begin(), starts.end(), static_cast<std::uint32_t>(a.index)) == starts.end()) {
    throw UsageError("--index " + std::to_string(a.index) + " has no following sample");
  }
  const std::vector<std::uint32_t> one{static_cast<std::uint32_t>(a.index)};
  const auto batch = models::make_batch(ds, model.stats(), one, true);
  const auto pred = model.predict(batch);
  const auto rgb = metrics::flow_triptych(*sample.frame, batch.flow, pred.flow, 0);
  render::write_ppm(a.out, rgb, 3 * render::kWidth, render::kHeight);
  std::cout << "wrote " << a.out << " (frame | reference flow | predicted flow)\n";

  Manifest m;
  m.subcommand = "flow";
  m.flags = {{"model", a.model}, {"data", a.data}, {"index", a.index}, {"out", a.out}};
  m.seed = {0, "unused"};
  m.config_digest = text_digest(ds.config_text);
  add_input(m, a.model);
  add_input(m, a.data);
  m.outputs.push_back({{"path", a.out}, {"digest", file_digest(a.out)}});
  m.write(sidecar(a.out));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"softsense: soft finger simulation, multimodal CVAE training and evaluation"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string preset_name = "paper";
  app.add_option("--preset", preset_name, "default scale: desk or paper")->check(CLI::IsMember({"desk", "paper"}));

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "run the arm and finger, write an SSD1 dataset");
  s->add_option("--scenario", sim.scenario, "empty or cluttered")->check(CLI::IsMember({"empty", "cluttered"}));
  s->add_option("--commands", sim.commands, "number of 1 s commands (10 samples each)");
  s->add_flag("--vision,!--no-vision", sim.vision, "record camera frames (default on)");
  s->add_option("--config", sim.config, "simulation config file (default: built-in)");
  s->add_option("--seed", sim.seed, "seed (fallback: SOFTSENSE_SEED, then 0)");
  s->add_option("--out", sim.out, "output .ssd path")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train a P1 or P2 model");
  t->add_option("--data", tr.data, "dataset .ssd")->required();
  t->add_option("--arch", tr.arch, "p1 (proprioception) or p2 (proprioception + vision)");
  t->add_option("--latent", tr.latent, "latent size: P1 2|4|16, P2 16|64|128");
  t->add_flag("--allow-any-latent,!--no-allow-any-latent", tr.allow_any_latent, "accept other latent sizes");
  t->add_option("--epochs", tr.epochs, "epochs (preset default)");
  t->add_option("--batch", tr.batch, "batch size (preset default)");
  t->add_option("--lr", tr.lr, "Adam learning rate");
  t->add_option("--max-steps", tr.max_steps, "stop after this many steps (0: no limit)");
  t->add_option("--seed", tr.seed, "seed (fallback: SOFTSENSE_SEED, then 0)");
  t->add_option("--out", tr.out, "output .ssm path")->required();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "evaluate a model on a dataset");
  e->add_option("--model", ev.model, "model .ssm")->required();
  e->add_option("--data", ev.data, "dataset .ssd")->required();
  e->add_option("--split", ev.split, "validation (held-out block) or all");
  e->add_option("--out", ev.out, "output report .csv")->required();

  SweepArgs sw;
  auto* w = app.add_subcommand("sweep", "train and evaluate every variant and latent size");
  w->add_option("--data", sw.data, "dataset .ssd per scenario")->required();
  w->add_option("--epochs", sw.epochs, "epochs per cell (preset default)");
  w->add_option("--batch", sw.batch, "batch size (preset default)");
  w->add_option("--lr", sw.lr, "Adam learning rate");
  w->add_flag("--recon,!--no-recon", sw.recon, "train reconstruction decoders (default on)");
  w->add_option("--flow-examples", sw.flow_examples, "flow triptychs per P2 cell");
  w->add_option("--jobs", sw.jobs, "maximum concurrent cells");
  w->add_option("--seed", sw.seed, "seed (fallback: SOFTSENSE_SEED, then 0)");
  w->add_option("--out", sw.out, "parent directory of the run directory");

  FrameArgs rd;
  auto* r = app.add_subcommand("render", "export a dataset frame as PPM");
  r->add_option("--data", rd.data, "dataset .ssd")->required();
  r->add_option("--index", rd.index, "sample index");
  r->add_option("--out", rd.out, "output .ppm")->required();

  FrameArgs fl;
  auto* f = app.add_subcommand("flow", "export frame, reference flow and predicted flow side by side");
  f->add_option("--model", fl.model, "P2 model .ssm")->required();
  f->add_option("--data", fl.data, "dataset .ssd")->required();
  f->add_option("--index", fl.index, "transition start sample");
  f->add_option("--out", fl.out, "output .ppm")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    const auto preset = preset_values(preset_name);
    if (s->parsed()) return run_simulate(sim, preset, preset_name);
    if (t->parsed()) return run_train(tr, preset, preset_name);
    if (e->parsed()) return run_eval(ev);
    if (w->parsed()) return run_sweep(sw, preset, preset_name);
    if (r->parsed()) return run_render(rd);
    if (f->parsed()) return run_flow(fl);
  } catch (const UsageError& err) {
    std::cerr << "softsense: " << err.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& err) {
    std::cerr << "softsense: " << err.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
