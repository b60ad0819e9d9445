#include "softsense/models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "softsense/binio.hpp"
#include "softsense/nn/adam.hpp"

namespace softsense::models {
namespace {

constexpr int kEvalChunk = 256;

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

Tensor normal_tensor(nn::Shape shape, nn::Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = static_cast<float>(rng.normal());
  return t;
}

template <class Fn>
void for_chunks(std::span<const std::uint32_t> idx, int chunk, Fn&& fn) {
  for (std::size_t begin = 0; begin < idx.size(); begin += chunk) {
    const std::size_t n = std::min<std::size_t>(chunk, idx.size() - begin);
    fn(idx.subspan(begin, n));
  }
}

double squared_error_sum(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - b.data[i];
    s += d * d;
  }
  return s;
}

void shuffle(std::vector<std::uint32_t>& v, nn::Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

// Every step reallocates multi-megabyte activations. By default glibc serves
// those with fresh mmap pages, and the page faults cost more than the math.
void keep_large_blocks_in_heap() {
#ifdef __GLIBC__
  static const bool once = [] {
    mallopt(M_MMAP_THRESHOLD, 512 << 20);
    mallopt(M_TRIM_THRESHOLD, 1024 << 20);
    return true;
  }();
  (void)once;
#endif
}

nn::AdamConfig adam_config(const TrainConfig& cfg) {
  return {cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon};
}

}  // namespace

std::string to_string(Variant v) { return v == Variant::P1 ? "P1" : "P2"; }

Variant variant_from_string(const std::string& s) {
  const auto l = lower(s);
  if (l == "p1") return Variant::P1;
  if (l == "p2") return Variant::P2;
  throw InvalidArchError("unknown architecture '" + s + "' (expected p1 or p2)");
}

std::array<int, 3> ArchSpec::paper_latents(Variant v) {
  return v == Variant::P1 ? std::array<int, 3>{2, 4, 16} : std::array<int, 3>{16, 64, 128};
}

void ArchSpec::validate() const {
  if (variant != Variant::P1 && variant != Variant::P2) throw InvalidArchError("unknown architecture variant");
  if (latent < 1) throw InvalidArchError("latent size must be at least 1");
  if (hidden < 1) throw InvalidArchError("hidden width must be at least 1");
  if (variant == Variant::P2 && conv_channels < 1) throw InvalidArchError("conv channels must be at least 1");
  const auto allowed = paper_latents(variant);
  if (!allow_any_latent && std::find(allowed.begin(), allowed.end(), latent) == allowed.end()) {
    throw InvalidArchError("latent size " + std::to_string(latent) + " is not allowed for " + to_string(variant) +
                           " (allowed: " + std::to_string(allowed[0]) + ", " + std::to_string(allowed[1]) + ", " +
                           std::to_string(allowed[2]) + "; pass the override to use other sizes)");
  }
}

std::string ArchSpec::descriptor() const {
  std::ostringstream os;
  os << "variant=" << to_string(variant) << ";latent=" << latent << ";hidden=" << hidden
     << ";conv_channels=" << conv_channels << ";allow_any_latent=" << (allow_any_latent ? 1 : 0);
  return os.str();
}

ArchSpec ArchSpec::from_descriptor(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string item;
  while (std::getline(is, item, ';')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw InvalidArchError("malformed architecture descriptor: " + text);
    kv[item.substr(0, eq)] = item.substr(eq + 1);
  }
  auto get = [&](const char* key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw InvalidArchError(std::string("architecture descriptor lacks '") + key + "'");
    return it->second;
  };
  ArchSpec a;
  try {
    a.variant = variant_from_string(get("variant"));
    a.latent = std::stoi(get("latent"));
    a.hidden = std::stoi(get("hidden"));
    a.conv_channels = std::stoi(get("conv_channels"));
    a.allow_any_latent = get("allow_any_latent") == "1";
  } catch (const std::logic_error& e) {
    if (dynamic_cast<const InvalidArchError*>(&e)) throw;
    throw InvalidArchError("malformed architecture descriptor: " + text);
  }
  a.validate();
  return a;
}

std::vector<std::uint32_t> transition_starts(const data::Dataset& ds) {
  std::vector<std::uint32_t> out;
  for (std::size_t k = 0; k + 1 < ds.samples.size(); ++k) out.push_back(static_cast<std::uint32_t>(k));
  return out;
}

Split block_split(const data::Dataset& ds, double validation_fraction) {
  auto all = transition_starts(ds);
  const auto n_train = static_cast<std::size_t>(std::lround(all.size() * (1.0 - validation_fraction)));
  Split s;
  s.train.assign(all.begin(), all.begin() + std::min(n_train, all.size()));
  s.validation.assign(all.begin() + s.train.size(), all.end());
  return s;
}

Batch make_batch(const data::Dataset& ds, const data::NormStats& stats, std::span<const std::uint32_t> starts,
                 bool with_vision) {
  using data::NormStats;
  if (with_vision && !ds.has_vision) throw ModalityError("dataset has no camera frames");
  const int n = static_cast<int>(starts.size());
  constexpr int plane = kFrameSize * kFrameSize;
  Batch b;
  b.finger = Tensor({n, data::kFingerDims});
  b.action = Tensor({n, data::kActionDims});
  b.target = Tensor({n, kTargetDims});
  if (with_vision) {
    b.frame = Tensor({n, kFrameChannels, kFrameSize, kFrameSize});
    b.flow = Tensor({n, kFrameChannels, kFrameSize, kFrameSize});
  }
  for (int i = 0; i < n; ++i) {
    const std::size_t k = starts[i];
    if (k + 1 >= ds.samples.size()) throw std::out_of_range("transition start " + std::to_string(k) + " has no successor");
    const auto& cur = ds.samples[k];
    const auto& next = ds.samples[k + 1];
    for (int j = 0; j < data::kFingerDims; ++j) {
      b.finger.row(i)[j] = static_cast<float>(stats.standardize(NormStats::kFingerOffset + j, cur.finger_q[j]));
      b.target.row(i)[j] = static_cast<float>(stats.standardize(NormStats::kFingerOffset + j, next.finger_q[j]));
    }
    for (int j = 0; j < data::kForceDims; ++j) {
      b.target.row(i)[data::kFingerDims + j] =
          static_cast<float>(stats.standardize(NormStats::kForceOffset + j, next.forces[j]));
    }
    const auto a = next.command().normalized();
    for (int j = 0; j < data::kActionDims; ++j) b.action.row(i)[j] = static_cast<float>(a[j]);
    if (with_vision) {
      const auto& f0 = *cur.frame;
      const auto& f1 = *next.frame;
      float* img = b.frame.row(i);
      float* flow = b.flow.row(i);
      for (int p = 0; p < plane; ++p) {
        for (int c = 0; c < kFrameChannels; ++c) {
          const int src = p * kFrameChannels + c;
          img[c * plane + p] = f0[src] / 255.0f;
          flow[c * plane + p] = f1[src] / 255.0f - f0[src] / 255.0f;
        }
      }
    }
  }
  return b;
}

FusionModel::FusionModel(const ArchSpec& arch, const data::NormStats& stats, std::uint64_t seed)
    : arch_(arch), stats_(stats) {
  arch_.validate();
  nn::Rng rng(seed, 11);
  const int h = arch_.hidden;
  const int latent = arch_.latent;
  int enc_in = data::kFingerDims;
  const int conv_hw = nn::conv_out(kFrameSize);
  const int conv_features = arch_.conv_channels * conv_hw * conv_hw;
  if (arch_.variant == Variant::P2) {
    enc_conv_ = nn::Conv<float>::make(params_, "encoder.conv", kFrameChannels, arch_.conv_channels, rng);
    enc_in += conv_features;
  }
  enc_fc1_ = nn::Dense<float>::make(params_, "encoder.fc1", enc_in, h, rng);
  enc_fc2_ = nn::Dense<float>::make(params_, "encoder.fc2", h, h, rng);
  enc_head_ = nn::Dense<float>::make(params_, "encoder.head", h, 2 * latent, rng);
  dec_fc1_ = nn::Dense<float>::make(params_, "decoder.fc1", latent + data::kActionDims, h, rng);
  dec_fc2_ = nn::Dense<float>::make(params_, "decoder.fc2", h, h, rng);
  dec_head_ = nn::Dense<float>::make(params_, "decoder.head", h, kTargetDims, rng);
  if (arch_.variant == Variant::P2) {
    dec_flow_fc_ = nn::Dense<float>::make(params_, "decoder.flow_fc", h, conv_features, rng);
    dec_flow_deconv_ =
        nn::ConvTranspose<float>::make(params_, "decoder.flow_deconv", arch_.conv_channels, kFrameChannels, rng);
  }
}

FusionModel FusionModel::build(const ArchSpec& arch, const data::NormStats& stats, std::uint64_t seed) {
  return FusionModel(arch, stats, seed);
}

FusionModel FusionModel::from_checkpoint(const nn::Checkpoint& ckpt) {
  ArchSpec arch;
  try {
    arch = ArchSpec::from_descriptor(ckpt.descriptor);
  } catch (const InvalidArchError& e) {
    throw binio::FormatError(std::string("model file: ") + e.what());
  }
  FusionModel m(arch, ckpt.stats, 0);
  nn::restore(m.params_, ckpt);
  return m;
}

std::vector<nn::Parameter<float>*> FusionModel::encoder_params() {
  std::vector<nn::Parameter<float>*> out;
  for (auto& p : params_.all()) {
    if (p.name.starts_with("encoder.")) out.push_back(&p);
  }
  return out;
}

std::vector<nn::Parameter<float>*> FusionModel::decoder_params() {
  std::vector<nn::Parameter<float>*> out;
  for (auto& p : params_.all()) {
    if (p.name.starts_with("decoder.")) out.push_back(&p);
  }
  return out;
}

void FusionModel::check_modality(const Batch& batch) const {
  if (arch_.variant == Variant::P2 && !batch.has_vision()) {
    throw ModalityError("P2 model needs camera frames but the observation has none");
  }
  if (arch_.variant == Variant::P1 && batch.has_vision()) {
    throw ModalityError("P1 model takes proprioception only but the observation carries camera frames");
  }
}

FusionModel::EncodedVars FusionModel::encode(Tape& tape, const Batch& batch) const {
  check_modality(batch);
  const int n = batch.size();
  Var x = tape.constant(batch.finger);
  if (enc_conv_) {
    Var img = nn::relu(tape, (*enc_conv_)(tape, tape.constant(batch.frame)));
    img = nn::reshape(tape, img, {n, static_cast<int>(tape.value(img).size() / n)});
    x = nn::concat(tape, img, x);
  }
  Var h = nn::relu(tape, enc_fc1_(tape, x));
  h = nn::relu(tape, enc_fc2_(tape, h));
  Var out = enc_head_(tape, h);
  return {nn::slice(tape, out, 0, arch_.latent), nn::slice(tape, out, arch_.latent, 2 * arch_.latent)};
}

FusionModel::DecodedVars FusionModel::decode(Tape& tape, Var z, Var action) const {
  const int n = tape.value(z).rows();
  Var h = nn::concat(tape, z, action);
  h = nn::relu(tape, dec_fc1_(tape, h));
  h = nn::relu(tape, dec_fc2_(tape, h));
  DecodedVars out{dec_head_(tape, h), std::nullopt};
  if (dec_flow_fc_) {
    const int hw = nn::conv_out(kFrameSize);
    Var f = nn::relu(tape, (*dec_flow_fc_)(tape, h));
    f = nn::reshape(tape, f, {n, arch_.conv_channels, hw, hw});
    out.flow = (*dec_flow_deconv_)(tape, f);
  }
  return out;
}

Latent FusionModel::encode(const Batch& batch) const {
  Tape tape;
  tape.disable_grad();
  auto e = encode(tape, batch);
  return {tape.value(e.mu), tape.value(e.logvar)};
}

Prediction FusionModel::predict(const Batch& batch, const Tensor* eps) const {
  Tape tape;
  tape.disable_grad();
  auto e = encode(tape, batch);
  Var z = e.mu;
  if (eps) z = nn::reparameterize(tape, e.mu, e.logvar, *eps);
  auto d = decode(tape, z, tape.constant(batch.action));
  const int n = batch.size();
  Prediction p;
  p.standardized = tape.value(d.target);
  p.finger_q = Tensor({n, data::kFingerDims});
  p.forces = Tensor({n, data::kForceDims});
  for (int i = 0; i < n; ++i) {
    const float* row = p.standardized.row(i);
    for (int j = 0; j < data::kFingerDims; ++j) {
      p.finger_q.row(i)[j] =
          static_cast<float>(stats_.destandardize(data::NormStats::kFingerOffset + j, row[j]));
    }
    for (int j = 0; j < data::kForceDims; ++j) {
      p.forces.row(i)[j] = static_cast<float>(
          stats_.destandardize(data::NormStats::kForceOffset + j, row[data::kFingerDims + j]));
    }
  }
  if (d.flow) p.flow = tape.value(*d.flow);
  return p;
}

nn::Checkpoint FusionModel::checkpoint() const { return nn::snapshot(params_, arch_.descriptor(), stats_); }

void FusionModel::save(const std::string& path) const { nn::save_checkpoint(checkpoint(), path); }

FusionModel FusionModel::load(const std::string& path) { return from_checkpoint(nn::load_checkpoint(path)); }

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw std::invalid_argument("learning rate must be positive");
  if (batch_size < 1) throw std::invalid_argument("batch size must be at least 1");
  if (max_epochs < 1) throw std::invalid_argument("epoch count must be at least 1");
  if (max_steps < 0) throw std::invalid_argument("step limit must be non-negative");
  if (!(validation_fraction >= 0 && validation_fraction < 1)) {
    throw std::invalid_argument("validation fraction must be in [0, 1)");
  }
}

namespace {

// Mean-mode squared error summed per sample and averaged over the transitions.
double validation_error(const FusionModel& model, const data::Dataset& ds, std::span<const std::uint32_t> idx) {
  if (idx.empty()) return std::numeric_limits<double>::quiet_NaN();
  const bool vision = model.arch().variant == Variant::P2;
  double total = 0.0;
  for_chunks(idx, kEvalChunk, [&](std::span<const std::uint32_t> chunk) {
    const auto batch = make_batch(ds, model.stats(), chunk, vision);
    const auto p = model.predict(batch);
    total += squared_error_sum(p.standardized, batch.target);
    if (vision) total += squared_error_sum(p.flow, batch.flow);
  });
  return total / static_cast<double>(idx.size());
}

void check_trainable(const data::Dataset& ds, const Split& split, bool vision) {
  if (ds.samples.size() < 2) {
    throw DatasetTooSmallError("dataset has " + std::to_string(ds.samples.size()) +
                               " samples; training needs at least 2");
  }
  if (split.train.empty()) throw DatasetTooSmallError("no training transitions after the validation split");
  if (vision && !ds.has_vision) throw ModalityError("P2 needs a dataset recorded with camera frames");
}

}  // namespace

TrainResult train(FusionModel& model, const data::Dataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  return train(model, ds, cfg, block_split(ds, cfg.validation_fraction));
}

TrainResult train(FusionModel& model, const data::Dataset& ds, const TrainConfig& cfg, const Split& split) {
  cfg.validate();
  const bool vision = model.arch().variant == Variant::P2;
  check_trainable(ds, split, vision);
  keep_large_blocks_in_heap();
  nn::Adam<float> opt(
      [&] {
        std::vector<nn::Parameter<float>*> all;
        for (auto& p : model.params().all()) all.push_back(&p);
        return all;
      }(),
      adam_config(cfg));
  nn::Rng rng(cfg.seed, 3);
  auto order = split.train;
  TrainResult result;
  bool done = false;
  for (int epoch = 1; epoch <= cfg.max_epochs && !done; ++epoch) {
    shuffle(order, rng);
    double rec_sum = 0.0, kl_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t n = std::min<std::size_t>(cfg.batch_size, order.size() - begin);
      const auto batch = make_batch(ds, model.stats(), std::span(order).subspan(begin, n), vision);
      const auto eps = normal_tensor({static_cast<int>(n), model.arch().latent}, rng);
      try {
        Tape tape;
        auto enc = model.encode(tape, batch);
        Var z = nn::reparameterize(tape, enc.mu, enc.logvar, eps);
        auto dec = model.decode(tape, z, tape.constant(batch.action));
        Var rec = nn::row_squared_error(tape, dec.target, tape.constant(batch.target));
        if (dec.flow) rec = nn::add(tape, rec, nn::row_squared_error(tape, *dec.flow, tape.constant(batch.flow)));
        Var kl = nn::kl_standard_normal(tape, enc.mu, enc.logvar);
        Var loss = nn::add(tape, rec, kl);
        opt.zero_grad();
        tape.backward(loss);
        opt.step();
        rec_sum += tape.value(rec).data[0] * static_cast<double>(n);
        kl_sum += tape.value(kl).data[0] * static_cast<double>(n);
      } catch (const nn::NonFiniteError& e) {
        throw nn::NonFiniteError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", step " +
                                 std::to_string(result.steps + 1) + " (" + to_string(model.arch().variant) +
                                 ", latent " + std::to_string(model.arch().latent) + ")");
      }
      seen += n;
      ++result.steps;
      if (cfg.max_steps > 0 && result.steps >= cfg.max_steps) {
        done = true;
        break;
      }
    }
    EpochStats s;
    s.epoch = epoch;
    s.train_mse = rec_sum / static_cast<double>(seen);
    s.train_kl = kl_sum / static_cast<double>(seen);
    s.val_mse = validation_error(model, ds, split.validation);
    result.history.push_back(s);
    result.final_loss = s.train_mse + s.train_kl;
    if (cfg.progress) cfg.progress(epoch, cfg.max_epochs);
  }
  return result;
}

void write_history_csv(const std::vector<EpochStats>& history, const std::string& path) {
  std::ostringstream os;
  os.precision(9);
  os << "epoch,train_mse,train_kl,val_mse\n";
  for (const auto& s : history) os << s.epoch << ',' << s.train_mse << ',' << s.train_kl << ',' << s.val_mse << '\n';
  const auto text = os.str();
  binio::write_file_atomic(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

ReconModel::ReconModel(const FusionModel& encoder, std::uint64_t seed) : encoder_(&encoder) {
  nn::Rng rng(seed, 12);
  const int h = encoder.arch().hidden;
  fc1_ = nn::Dense<float>::make(params_, "recon.fc1", encoder.arch().latent, h, rng);
  fc2_ = nn::Dense<float>::make(params_, "recon.fc2", h, h, rng);
  head_ = nn::Dense<float>::make(params_, "recon.head", h, data::kFingerDims, rng);
}

Var ReconModel::decode(Tape& tape, Var latent) const {
  Var h = nn::relu(tape, fc1_(tape, latent));
  h = nn::relu(tape, fc2_(tape, h));
  return head_(tape, h);
}

Tensor ReconModel::reconstruct(const Batch& batch) const {
  const auto latent = encoder_->encode(batch);
  Tape tape;
  tape.disable_grad();
  Tensor out = tape.value(decode(tape, tape.constant(latent.mu)));
  const auto& stats = encoder_->stats();
  for (int i = 0; i < out.rows(); ++i) {
    for (int j = 0; j < data::kFingerDims; ++j) {
      out.row(i)[j] = static_cast<float>(stats.destandardize(data::NormStats::kFingerOffset + j, out.row(i)[j]));
    }
  }
  return out;
}

ReconResult train_reconstruction(const FusionModel& model, const data::Dataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  return train_reconstruction(model, ds, cfg, block_split(ds, cfg.validation_fraction));
}

ReconResult train_reconstruction(const FusionModel& model, const data::Dataset& ds, const TrainConfig& cfg,
                                 const Split& split) {
  cfg.validate();
  const bool vision = model.arch().variant == Variant::P2;
  check_trainable(ds, split, vision);
  keep_large_blocks_in_heap();
  const int latent = model.arch().latent;

  // The encoder is frozen, so its mean latents are computed once.
  auto encode_all = [&](std::span<const std::uint32_t> idx, Tensor& mu, Tensor& target) {
    const int n = static_cast<int>(idx.size());
    mu = Tensor({n, latent});
    target = Tensor({n, data::kFingerDims});
    int row = 0;
    for_chunks(idx, kEvalChunk, [&](std::span<const std::uint32_t> chunk) {
      const auto batch = make_batch(ds, model.stats(), chunk, vision);
      const auto enc = model.encode(batch);
      std::copy(enc.mu.data.begin(), enc.mu.data.end(), mu.row(row));
      std::copy(batch.finger.data.begin(), batch.finger.data.end(), target.row(row));
      row += static_cast<int>(chunk.size());
    });
  };
  Tensor train_mu, train_q, val_mu, val_q;
  encode_all(split.train, train_mu, train_q);
  encode_all(split.validation, val_mu, val_q);

  ReconResult result{ReconModel(model, cfg.seed), {}};
  auto& r = result.model;
  std::vector<nn::Parameter<float>*> ps;
  for (auto& p : r.params().all()) ps.push_back(&p);
  nn::Adam<float> opt(ps, adam_config(cfg));
  nn::Rng rng(cfg.seed, 4);
  std::vector<std::uint32_t> order(split.train.size());
  std::iota(order.begin(), order.end(), 0u);

  auto gather = [](const Tensor& src, std::span<const std::uint32_t> rows) {
    Tensor out({static_cast<int>(rows.size()), src.cols()});
    for (std::size_t i = 0; i < rows.size(); ++i) {
      std::copy(src.row(rows[i]), src.row(rows[i]) + src.cols(), out.row(static_cast<int>(i)));
    }
    return out;
  };

  int steps = 0;
  bool done = false;
  for (int epoch = 1; epoch <= cfg.max_epochs && !done; ++epoch) {
    shuffle(order, rng);
    double sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t n = std::min<std::size_t>(cfg.batch_size, order.size() - begin);
      const auto rows = std::span<const std::uint32_t>(order).subspan(begin, n);
      Tape tape;
      Var pred = r.decode(tape, tape.constant(gather(train_mu, rows)));
      Var loss = nn::row_squared_error(tape, pred, tape.constant(gather(train_q, rows)));
      opt.zero_grad();
      tape.backward(loss);
      opt.step();
      sum += tape.value(loss).data[0] * static_cast<double>(n);
      seen += n;
      if (cfg.max_steps > 0 && ++steps >= cfg.max_steps) {
        done = true;
        break;
      }
    }
    EpochStats s;
    s.epoch = epoch;
    s.train_mse = sum / static_cast<double>(seen);
    if (val_mu.rows() > 0) {
      Tape tape;
      tape.disable_grad();
      s.val_mse = squared_error_sum(tape.value(r.decode(tape, tape.constant(val_mu))), val_q) / val_mu.rows();
    } else {
      s.val_mse = std::numeric_limits<double>::quiet_NaN();
    }
    result.history.push_back(s);
    if (cfg.progress) cfg.progress(epoch, cfg.max_epochs);
  }
  return result;
}

}  // namespace softsense::models
