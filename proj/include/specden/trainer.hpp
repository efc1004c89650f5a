// specden/trainer.hpp
//
// Training protocol: MSE + weighted KL loss, Adam with linear warm-up,
// periodic validation with early stopping, atomic checkpointing, and the
// enhancement pipeline (chunked spectral mapping + noisy-phase resynthesis).
//
// Copyright 2026  specden authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef SPECDEN_TRAINER_HPP_
#define SPECDEN_TRAINER_HPP_

#include <cmath>
#include <deque>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "specden/datagen.hpp"
#include "specden/dsp.hpp"
#include "specden/model.hpp"

namespace specden {

struct TrainConfig {
  int max_epochs = 200;
  int patience_validations = 10;
  int warmup_batches = 500;
  double peak_lr = 0.001;
  int batch_size = 8;
  int validations_per_epoch = 2;
  uint64_t seed = 0;
  double kl_weight = 1e-3;

  void validate() const {
    SPECDEN_CHECK(max_epochs >= 1 && patience_validations >= 1 && warmup_batches >= 1 &&
                      batch_size >= 1 && validations_per_epoch >= 1,
                  "TrainConfig: counts must be >= 1");
    SPECDEN_CHECK(peak_lr > 0, "TrainConfig: peak_lr must be positive");
    SPECDEN_CHECK(kl_weight >= 0, "TrainConfig: kl_weight must be >= 0");
  }
};

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  return nlohmann::json{{"max_epochs", c.max_epochs},
                        {"patience_validations", c.patience_validations},
                        {"warmup_batches", c.warmup_batches},
                        {"peak_lr", c.peak_lr},
                        {"batch_size", c.batch_size},
                        {"validations_per_epoch", c.validations_per_epoch},
                        {"seed", c.seed},
                        {"kl_weight", c.kl_weight}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.max_epochs = j.at("max_epochs").get<int>();
  c.patience_validations = j.at("patience_validations").get<int>();
  c.warmup_batches = j.at("warmup_batches").get<int>();
  c.peak_lr = j.at("peak_lr").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.validations_per_epoch = j.at("validations_per_epoch").get<int>();
  c.seed = j.at("seed").get<uint64_t>();
  c.kl_weight = j.at("kl_weight").get<double>();
  return c;
}

struct LossBreakdown {
  double total = 0.0;
  double mse = 0.0;
  double kl = 0.0;
  double kl_weighted = 0.0;
};

// L = L_MSE + w_KL * D_KL. The KL term is zero when no latent is present.
template <typename S>
LossBreakdown total_loss(const Tensor4<S>& y, const Tensor4<S>& target,
                         const nn::LatentStats<S>* latent, double w_kl) {
  SPECDEN_CHECK(latent != nullptr || w_kl == 0.0,
                "total_loss: latent stats missing on a variational path (wiring bug)");
  LossBreakdown lb;
  lb.mse = nn::mse(y, target);
  lb.kl = latent ? nn::kl_standard_normal(*latent) : 0.0;
  lb.kl_weighted = w_kl * lb.kl;
  lb.total = lb.mse + lb.kl_weighted;
  return lb;
}

// Linear warm-up to peak_lr over warmup_batches, constant afterwards.
inline double lr_schedule(long batch_index, const TrainConfig& cfg) {
  SPECDEN_CHECK(batch_index >= 0, "lr_schedule: negative batch index");
  if (batch_index < cfg.warmup_batches)
    return cfg.peak_lr * static_cast<double>(batch_index + 1) / cfg.warmup_batches;
  return cfg.peak_lr;
}

// Standard bias-corrected Adam over a parameter list.
template <typename S>
class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(std::vector<nn::Param<S>*>& params, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (auto* p : params) {
      if (!p->trainable) continue;
      auto& st = state_[p->name];
      if (st.m.size() != p->value.size()) {
        st.m = Tensor4<S>(p->value.n, p->value.c, p->value.h, p->value.w);
        st.v = Tensor4<S>(p->value.n, p->value.c, p->value.h, p->value.w);
      }
      for (size_t i = 0; i < p->value.size(); ++i) {
        const double g = p->grad.v[i];
        SPECDEN_CHECK(std::isfinite(g), "diverged: NaN/Inf gradient in " + p->name);
        st.m.v[i] = static_cast<S>(beta1_ * st.m.v[i] + (1.0 - beta1_) * g);
        st.v.v[i] = static_cast<S>(beta2_ * st.v.v[i] + (1.0 - beta2_) * g * g);
        const double mhat = st.m.v[i] / bc1;
        const double vhat = st.v.v[i] / bc2;
        p->value.v[i] -= static_cast<S>(lr * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

  long t() const { return t_; }
  void set_t(long t) { t_ = t; }

  struct State {
    Tensor4<S> m, v;
  };
  std::map<std::string, State>& state() { return state_; }

 private:
  double beta1_, beta2_, eps_;
  long t_ = 0;
  std::map<std::string, State> state_;
};

// Global standardization of log-power features, stored in the checkpoint.
struct FeatureNormalizer {
  double mean = 0.0;
  double std = 1.0;

  double apply(double v) const { return (v - mean) / std; }
  double invert(double v) const { return v * std + mean; }
};

// Tracks the best validation loss; stops after `patience` consecutive
// non-improving validations.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {}

  // Returns true if this validation improved on the best so far.
  bool observe(double val_loss) {
    if (val_loss < best_) {
      best_ = val_loss;
      bad_ = 0;
      return true;
    }
    ++bad_;
    return false;
  }

  bool should_stop() const { return bad_ >= patience_; }
  double best() const { return best_; }

 private:
  int patience_;
  int bad_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

struct HistoryRow {
  long step = 0;
  double train_loss = 0.0;
  double mse = 0.0;
  double kl = 0.0;
  double val_loss = std::numeric_limits<double>::quiet_NaN();
  double lr = 0.0;
};

// ---- checkpoint container ----
// magic "SPCK", version u16, u64 header length, JSON header, then named
// little-endian f32 row-major tensor blobs in header order.

struct Checkpoint {
  uint16_t format_version = 1;
  ModelConfig model_config;
  TrainConfig train_config;
  StftConfig stft;
  double floor_eps = 1e-10;
  FeatureNormalizer normalizer;
  std::vector<HistoryRow> history;
  long adam_t = 0;
  std::map<std::string, Tensor4<float>> tensors;  // params, running stats, Adam moments
};

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["format_version"] = ckpt.format_version;
  header["model_config"] = model_config_to_json(ckpt.model_config);
  header["train_config"] = train_config_to_json(ckpt.train_config);
  header["stft"] = {{"fft_size", ckpt.stft.fft_size},
                    {"win_length", ckpt.stft.win_length},
                    {"hop_length", ckpt.stft.hop_length},
                    {"floor_eps", ckpt.floor_eps}};
  header["normalizer"] = {{"mean", ckpt.normalizer.mean}, {"std", ckpt.normalizer.std}};
  header["adam_t"] = ckpt.adam_t;
  header["history_len"] = ckpt.history.size();
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& r : ckpt.history) {
    hist.push_back({{"step", r.step},
                    {"train_loss", r.train_loss},
                    {"mse", r.mse},
                    {"kl", r.kl},
                    {"val_loss", std::isnan(r.val_loss) ? nlohmann::json(nullptr)
                                                        : nlohmann::json(r.val_loss)},
                    {"lr", r.lr}});
  }
  header["history"] = hist;
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& [name, t] : ckpt.tensors)
    tensors.push_back({{"name", name}, {"shape", {t.n, t.c, t.h, t.w}}});
  header["tensors"] = tensors;

  const std::string hs = header.dump();
  atomic_write_file(path, [&](std::ostream& os) {
    write_bytes(os, "SPCK", 4);
    write_le<uint16_t>(os, ckpt.format_version);
    write_le<uint64_t>(os, hs.size());
    write_bytes(os, hs.data(), hs.size());
    for (const auto& [name, t] : ckpt.tensors)
      write_bytes(os, t.v.data(), t.v.size() * sizeof(float));
  });
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  SPECDEN_CHECK(is.is_open(), "cannot open checkpoint: " + path.string());
  char magic[4];
  read_bytes(is, magic, 4);
  SPECDEN_CHECK(std::memcmp(magic, "SPCK", 4) == 0, "bad checkpoint magic");
  Checkpoint ckpt;
  ckpt.format_version = read_le<uint16_t>(is);
  SPECDEN_CHECK(ckpt.format_version == 1, "unsupported checkpoint version");
  uint64_t hlen = read_le<uint64_t>(is);
  std::string hs(hlen, '\0');
  read_bytes(is, hs.data(), hlen);
  nlohmann::json header = nlohmann::json::parse(hs);

  ckpt.model_config = model_config_from_json(header.at("model_config"));
  ckpt.train_config = train_config_from_json(header.at("train_config"));
  ckpt.stft.fft_size = header.at("stft").at("fft_size").get<int>();
  ckpt.stft.win_length = header.at("stft").at("win_length").get<int>();
  ckpt.stft.hop_length = header.at("stft").at("hop_length").get<int>();
  ckpt.floor_eps = header.at("stft").at("floor_eps").get<double>();
  ckpt.normalizer.mean = header.at("normalizer").at("mean").get<double>();
  ckpt.normalizer.std = header.at("normalizer").at("std").get<double>();
  ckpt.adam_t = header.at("adam_t").get<long>();
  for (const auto& r : header.at("history")) {
    HistoryRow row;
    row.step = r.at("step").get<long>();
    row.train_loss = r.at("train_loss").get<double>();
    row.mse = r.at("mse").get<double>();
    row.kl = r.at("kl").get<double>();
    row.val_loss = r.at("val_loss").is_null() ? std::numeric_limits<double>::quiet_NaN()
                                              : r.at("val_loss").get<double>();
    row.lr = r.at("lr").get<double>();
    ckpt.history.push_back(row);
  }
  for (const auto& tj : header.at("tensors")) {
    const auto name = tj.at("name").get<std::string>();
    const auto shape = tj.at("shape");
    Tensor4<float> t(shape.at(0).get<int>(), shape.at(1).get<int>(), shape.at(2).get<int>(),
                     shape.at(3).get<int>());
    read_bytes(is, t.v.data(), t.v.size() * sizeof(float));
    ckpt.tensors.emplace(name, std::move(t));
  }
  return ckpt;
}

// Snapshot of model parameters + optimizer moments into a checkpoint.
inline Checkpoint make_checkpoint(Model<float>& model, Adam<float>* adam,
                                  const TrainConfig& tcfg, const StftConfig& stft,
                                  double floor_eps, const FeatureNormalizer& norm,
                                  const std::vector<HistoryRow>& history) {
  Checkpoint ckpt;
  ckpt.model_config = model.config();
  ckpt.train_config = tcfg;
  ckpt.stft = stft;
  ckpt.floor_eps = floor_eps;
  ckpt.normalizer = norm;
  ckpt.history = history;
  for (auto* p : model.params()) ckpt.tensors[p->name] = p->value;
  if (adam) {
    ckpt.adam_t = adam->t();
    for (auto& [name, st] : adam->state()) {
      ckpt.tensors[name + ".adam_m"] = st.m;
      ckpt.tensors[name + ".adam_v"] = st.v;
    }
  }
  return ckpt;
}

inline Model<float> model_from_checkpoint(const Checkpoint& ckpt, Adam<float>* adam = nullptr) {
  Model<float> model(ckpt.model_config, /*init_seed=*/0);
  for (auto* p : model.params()) {
    auto it = ckpt.tensors.find(p->name);
    SPECDEN_CHECK(it != ckpt.tensors.end(), "checkpoint missing tensor: " + p->name);
    SPECDEN_CHECK(it->second.size() == p->value.size(),
                  "checkpoint tensor size mismatch: " + p->name);
    p->value = it->second;
  }
  if (adam) {
    adam->set_t(ckpt.adam_t);
    for (auto* p : model.params()) {
      auto mit = ckpt.tensors.find(p->name + ".adam_m");
      auto vit = ckpt.tensors.find(p->name + ".adam_v");
      if (mit != ckpt.tensors.end() && vit != ckpt.tensors.end()) {
        adam->state()[p->name].m = mit->second;
        adam->state()[p->name].v = vit->second;
      }
    }
  }
  return model;
}

// ---- chunked spectrogram dataset over rendered mixtures ----

class ChunkDataset {
 public:
  ChunkDataset(const std::filesystem::path& manifest_path, const StftConfig& stft,
               double floor_eps, int frames_per_chunk, int bins_kept)
      : stft_(stft), floor_eps_(floor_eps), frames_per_chunk_(frames_per_chunk),
        bins_kept_(bins_kept) {
    auto records = load_manifest(manifest_path);
    SPECDEN_CHECK(!records.empty(), "empty manifest: " + manifest_path.string());
    const auto dir = manifest_path.parent_path();
    for (const auto& r : records) {
      FileEntry e;
      e.noisy = dir / (r.mixture_id + "_noisy.wav");
      e.clean = dir / (r.mixture_id + "_clean.wav");
      files_.push_back(std::move(e));
    }
    build_index();
  }

  // Direct construction from (noisy, clean) WAV pairs.
  ChunkDataset(std::vector<std::pair<std::filesystem::path, std::filesystem::path>> pairs,
               const StftConfig& stft, double floor_eps, int frames_per_chunk, int bins_kept)
      : stft_(stft), floor_eps_(floor_eps), frames_per_chunk_(frames_per_chunk),
        bins_kept_(bins_kept) {
    for (auto& [n, c] : pairs) files_.push_back({n, c});
    build_index();
  }

  size_t num_chunks() const { return index_.size(); }
  size_t num_files() const { return files_.size(); }

  // Chunk pair (noisy, clean), full chunks only. Returned by value: the
  // file cache may evict the backing spectrogram before the batch is built.
  std::pair<RealMatrix, RealMatrix> chunk(size_t i) {
    const auto& [fi, ci] = index_[i];
    const Loaded& ld = load_file(fi);
    return {ld.noisy.chunks[ci], ld.clean.chunks[ci]};
  }

  // Accumulates log-power mean/std (kept bins) over all training chunks.
  FeatureNormalizer compute_normalizer() {
    double sum = 0.0, sumsq = 0.0;
    long count = 0;
    for (size_t fi = 0; fi < files_.size(); ++fi) {
      const Loaded* ld = try_load_file(fi);
      if (!ld) continue;
      for (size_t ci = 0; ci < ld->noisy.chunks.size(); ++ci) {
        if (ld->noisy.valid_frames[ci] != frames_per_chunk_) continue;
        for (double v : ld->noisy.chunks[ci].v) {
          sum += v;
          sumsq += v * v;
          ++count;
        }
      }
    }
    SPECDEN_CHECK(count > 0, "no usable training chunks for normalization");
    FeatureNormalizer n;
    n.mean = sum / count;
    const double var = std::max(sumsq / count - n.mean * n.mean, 1e-12);
    n.std = std::sqrt(var);
    return n;
  }

 private:
  struct FileEntry {
    std::filesystem::path noisy, clean;
  };
  struct Loaded {
    size_t file_idx = SIZE_MAX;
    ChunkSet noisy, clean;
  };

  void build_index() {
    for (size_t fi = 0; fi < files_.size(); ++fi) {
      const Loaded* ld = try_load_file(fi);
      if (!ld) {
        log_warn("skipping_unreadable_mixture", {{"noisy", files_[fi].noisy.string()}});
        continue;
      }
      for (size_t ci = 0; ci < ld->noisy.chunks.size(); ++ci)
        if (ld->noisy.valid_frames[ci] == frames_per_chunk_) index_.emplace_back(fi, ci);
    }
    SPECDEN_CHECK(!index_.empty(), "dataset contains no full chunks");
  }

  const Loaded* try_load_file(size_t fi) {
    try {
      return &load_file(fi);
    } catch (const std::exception& e) {
      log_warn("chunk_load_failed", {{"file", files_[fi].noisy.string()}, {"error", e.what()}});
      return nullptr;
    }
  }

  const Loaded& load_file(size_t fi) {
    for (const auto& ld : cache_)
      if (ld.file_idx == fi) return ld;
    Loaded ld;
    ld.file_idx = fi;
    Waveform noisy = wavio::read(files_[fi].noisy);
    Waveform clean = wavio::read(files_[fi].clean);
    ld.noisy = chunk_spectrogram(log_power(stft(noisy, stft_), floor_eps_), frames_per_chunk_,
                                 bins_kept_);
    ld.clean = chunk_spectrogram(log_power(stft(clean, stft_), floor_eps_), frames_per_chunk_,
                                 bins_kept_);
    cache_.push_front(std::move(ld));
    if (cache_.size() > 4) cache_.pop_back();
    return cache_.front();
  }

  StftConfig stft_;
  double floor_eps_;
  int frames_per_chunk_, bins_kept_;
  std::vector<FileEntry> files_;
  std::vector<std::pair<size_t, size_t>> index_;  // (file, chunk)
  std::deque<Loaded> cache_;
};

namespace detail {

template <typename S>
Tensor4<S> batch_from_chunks(const std::vector<RealMatrix>& chunks,
                             const FeatureNormalizer& norm) {
  const int h = chunks[0].cols, w = chunks[0].rows;
  Tensor4<S> t(static_cast<int>(chunks.size()), 1, h, w);
  for (size_t b = 0; b < chunks.size(); ++b)
    for (int r = 0; r < w; ++r)
      for (int c = 0; c < h; ++c)
        t.at(static_cast<int>(b), 0, c, r) = static_cast<S>(norm.apply(chunks[b].at(r, c)));
  return t;
}

}  // namespace detail

// One optimization step: forward, total loss, backward (including the KL
// gradient on the latent stats), Adam update at the scheduled rate.
inline LossBreakdown train_step(Model<float>& model, Adam<float>& adam,
                                std::vector<nn::Param<float>*>& params,
                                const Tensor4<float>& x, const Tensor4<float>& target,
                                const TrainConfig& tcfg, long batch_index,
                                uint64_t step_seed) {
  model.zero_grad();
  auto res = model.forward(x, /*train=*/true, step_seed);
  const bool variational = model.config().variational;
  const double w_kl = variational ? tcfg.kl_weight : 0.0;
  LossBreakdown lb =
      total_loss(res.y, target, res.latent ? &*res.latent : nullptr, w_kl);

  Tensor4<float> gy = nn::mse_backward(res.y, target);
  if (variational) {
    Tensor4<float> gmu, glv;
    nn::kl_standard_normal_backward(*res.latent, w_kl, gmu, glv);
    model.backward(gy, gmu, glv);
  } else {
    model.backward(gy);
  }
  adam.step(params, lr_schedule(batch_index, tcfg));
  return lb;
}

// Mean validation total loss over all full chunks, eval mode (z = mu).
inline double validate(Model<float>& model, ChunkDataset& val, const FeatureNormalizer& norm,
                       const TrainConfig& tcfg, int batch_size) {
  const bool variational = model.config().variational;
  const double w_kl = variational ? tcfg.kl_weight : 0.0;
  double acc = 0.0;
  long batches = 0;
  for (size_t i = 0; i < val.num_chunks(); i += batch_size) {
    std::vector<RealMatrix> xs, ys;
    for (size_t k = i; k < std::min(val.num_chunks(), i + batch_size); ++k) {
      auto [n, c] = val.chunk(k);
      xs.push_back(std::move(n));
      ys.push_back(std::move(c));
    }
    Tensor4<float> x = detail::batch_from_chunks<float>(xs, norm);
    Tensor4<float> t = detail::batch_from_chunks<float>(ys, norm);
    auto res = model.forward(x, /*train=*/false);
    acc += total_loss(res.y, t, res.latent ? &*res.latent : nullptr, w_kl).total;
    ++batches;
  }
  return acc / std::max<long>(batches, 1);
}

struct TrainResult {
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
  std::vector<HistoryRow> history;
  double best_val_loss = std::numeric_limits<double>::infinity();
  long steps = 0;
};

inline void export_history_csv(const std::filesystem::path& path,
                               const std::vector<HistoryRow>& history) {
  atomic_write_file(path, [&](std::ostream& os) {
    os << "step,train_loss,mse,kl,val_loss,lr\n";
    char buf[256];
    for (const auto& r : history) {
      if (std::isnan(r.val_loss))
        std::snprintf(buf, sizeof(buf), "%ld,%.9g,%.9g,%.9g,,%.9g\n", r.step, r.train_loss,
                      r.mse, r.kl, r.lr);
      else
        std::snprintf(buf, sizeof(buf), "%ld,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.step,
                      r.train_loss, r.mse, r.kl, r.val_loss, r.lr);
      os << buf;
    }
  });
}

// Full training run per the protocol: chunk batching, Adam + warm-up,
// validations_per_epoch validations per epoch, early stopping on the
// validation total loss, best/last checkpoints under out_dir.
inline TrainResult train(const std::filesystem::path& manifest_train,
                         const std::filesystem::path& manifest_val,
                         const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                         const std::filesystem::path& out_dir,
                         const StftConfig& stft_cfg = {}, double floor_eps = 1e-10,
                         long max_steps = -1) {
  train_cfg.validate();
  std::filesystem::create_directories(out_dir);

  ChunkDataset train_ds(manifest_train, stft_cfg, floor_eps, model_cfg.input_width,
                        model_cfg.input_height);
  ChunkDataset val_ds(manifest_val, stft_cfg, floor_eps, model_cfg.input_width,
                      model_cfg.input_height);

  log_info("computing_feature_normalizer");
  const FeatureNormalizer norm = train_ds.compute_normalizer();
  log_info("normalizer", {{"mean", std::to_string(norm.mean)}, {"std", std::to_string(norm.std)}});

  Model<float> model(model_cfg, train_cfg.seed);
  Adam<float> adam;
  auto params = model.params();

  const long steps_per_epoch =
      std::max<long>(1, static_cast<long>(train_ds.num_chunks()) / train_cfg.batch_size);
  const long val_interval = std::max<long>(1, steps_per_epoch / train_cfg.validations_per_epoch);

  TrainResult result;
  result.best_checkpoint = out_dir / "best.spck";
  result.last_checkpoint = out_dir / "last.spck";
  EarlyStopping stopper(train_cfg.patience_validations);
  long global_step = 0;
  bool stop = false;

  for (int epoch = 0; epoch < train_cfg.max_epochs && !stop; ++epoch) {
    std::vector<size_t> order(train_ds.num_chunks());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 shuffle_rng(derive_seed(train_cfg.seed, 0x500ULL + epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    for (long s = 0; s < steps_per_epoch && !stop; ++s) {
      std::vector<RealMatrix> xs, ys;
      for (int b = 0; b < train_cfg.batch_size; ++b) {
        auto [n, c] = train_ds.chunk(order[(s * train_cfg.batch_size + b) % order.size()]);
        xs.push_back(std::move(n));
        ys.push_back(std::move(c));
      }
      Tensor4<float> x = detail::batch_from_chunks<float>(xs, norm);
      Tensor4<float> t = detail::batch_from_chunks<float>(ys, norm);

      LossBreakdown lb = train_step(model, adam, params, x, t, train_cfg, global_step,
                                    derive_seed(train_cfg.seed, 0xabc000ULL + global_step));
      HistoryRow row;
      row.step = global_step;
      row.train_loss = lb.total;
      row.mse = lb.mse;
      row.kl = lb.kl;
      row.lr = lr_schedule(global_step, train_cfg);
      ++global_step;

      if (global_step % val_interval == 0) {
        const double vl = validate(model, val_ds, norm, train_cfg, train_cfg.batch_size);
        row.val_loss = vl;
        const bool improved = stopper.observe(vl);
        log_info("validation", {{"step", std::to_string(global_step)},
                                {"val_loss", std::to_string(vl)},
                                {"improved", improved ? "1" : "0"}});
        if (improved) {
          result.best_val_loss = vl;
          save_checkpoint(result.best_checkpoint,
                          make_checkpoint(model, &adam, train_cfg, stft_cfg, floor_eps, norm,
                                          result.history));
        }
        if (stopper.should_stop()) {
          log_info("early_stopping", {{"step", std::to_string(global_step)}});
          stop = true;
        }
      }
      result.history.push_back(row);
      if (max_steps > 0 && global_step >= max_steps) stop = true;
    }
    log_info("epoch_done", {{"epoch", std::to_string(epoch)},
                            {"step", std::to_string(global_step)}});
  }

  result.steps = global_step;
  save_checkpoint(result.last_checkpoint, make_checkpoint(model, &adam, train_cfg, stft_cfg,
                                                          floor_eps, norm, result.history));
  if (!std::filesystem::exists(result.best_checkpoint))
    save_checkpoint(result.best_checkpoint, make_checkpoint(model, &adam, train_cfg, stft_cfg,
                                                            floor_eps, norm, result.history));
  export_history_csv(out_dir / "history.csv", result.history);
  return result;
}

// ---- enhancement pipeline ----

using ChunkEnhancer = std::function<RealMatrix(const RealMatrix&)>;

// Chunk, enhance each chunk, reassemble (Nyquist column restored from the
// noisy input). The enhancer maps one raw log-power chunk to another.
inline LogPowerSpectrogram enhance_spectra(const LogPowerSpectrogram& noisy,
                                           const ChunkEnhancer& enhance, int frames_per_chunk,
                                           int bins_kept) {
  ChunkSet cs = chunk_spectrogram(noisy, frames_per_chunk, bins_kept);
  for (auto& chunk : cs.chunks) chunk = enhance(chunk);
  return reassemble_chunks(cs);
}

// Raw-chunk enhancer wrapping a model: normalize, map, denormalize.
inline ChunkEnhancer model_chunk_enhancer(Model<float>& model, const FeatureNormalizer& norm) {
  return [&model, norm](const RealMatrix& chunk) {
    RealMatrix in(chunk.rows, chunk.cols);
    for (size_t i = 0; i < chunk.v.size(); ++i) in.v[i] = norm.apply(chunk.v[i]);
    RealMatrix out = enhance_chunk(model, in);
    for (auto& v : out.v) v = norm.invert(v);
    return out;
  };
}

struct EnhanceReport {
  LogPowerSpectrogram noisy_spectra;
  LogPowerSpectrogram enhanced_spectra;
  size_t samples = 0;
};

// WAV in -> enhanced WAV out, using the noisy phase for resynthesis.
inline EnhanceReport enhance_file_with(const ChunkEnhancer& enhancer, const StftConfig& stft_cfg,
                                       double floor_eps, int frames_per_chunk, int bins_kept,
                                       const std::filesystem::path& noisy_wav_path,
                                       const std::filesystem::path& out_wav_path) {
  Waveform noisy = wavio::read(noisy_wav_path);
  SPECDEN_CHECK(noisy.sample_rate == 16000,
                "sample-rate mismatch (expected 16 kHz): " + noisy_wav_path.string());
  ComplexSpectrogram spec = stft(noisy, stft_cfg);
  EnhanceReport rep;
  rep.noisy_spectra = log_power(spec, floor_eps);
  PhaseMatrix phase = phase_of(spec);
  rep.enhanced_spectra =
      enhance_spectra(rep.noisy_spectra, enhancer, frames_per_chunk, bins_kept);

  Waveform out = istft_with_phase(rep.enhanced_spectra, phase, stft_cfg, noisy.samples.size(),
                                  noisy.sample_rate);
  double peak = 0.0;
  for (double s : out.samples) peak = std::max(peak, std::fabs(s));
  if (peak > 0.999) {
    const double g = 0.999 / peak;
    for (auto& s : out.samples) s *= g;
  }
  rep.samples = out.samples.size();
  wavio::write_pcm16(out_wav_path, out);
  return rep;
}

inline EnhanceReport enhance_file(const Checkpoint& ckpt,
                                  const std::filesystem::path& noisy_wav_path,
                                  const std::filesystem::path& out_wav_path) {
  Model<float> model = model_from_checkpoint(ckpt);
  return enhance_file_with(model_chunk_enhancer(model, ckpt.normalizer), ckpt.stft,
                           ckpt.floor_eps, ckpt.model_config.input_width,
                           ckpt.model_config.input_height, noisy_wav_path, out_wav_path);
}

}  // namespace specden

#endif  // SPECDEN_TRAINER_HPP_
