#pragma once

#include <string>
#include <vector>

#include "datcft/network.hpp"
#include "datcft/signal.hpp"

namespace datcft {

enum class LossMode { Combined, WaveformOnly, SpectralOnly };

std::string to_string(LossMode m);
LossMode loss_mode_from_string(const std::string& s);

struct TrainConfig {
  double lr = 1e-3;
  double lr_decay = 0.5;       // applied when validation stalls
  int lr_patience = 3;         // stalled epochs before a decay
  double grad_clip_norm = 5.0;
  int batch = 1;               // utterances averaged per optimizer step
  int epochs = 1;
  double loss_alpha = 0.3;     // spectral-term weight
  LossMode loss_mode = LossMode::Combined;
  uint64_t seed = 1;
  void validate() const;
};

// Differentiable training objective.  The waveform term is a smooth
// scale-invariant SDR: both log arguments carry a 1e-6 cross-floor so the
// value saturates at +/-60 dB instead of diverging; the spectral term is a
// mean L1 distance between spectrogram magnitudes.
struct LossTerms {
  Var total;
  double sisdr_db = 0;   // value of the smooth waveform term
  double mag_l1 = 0;     // value of the spectral term
};
LossTerms enhancement_loss(const CVar& enh_spec, const Waveform& clean, const StftConfig& cfg,
                           double alpha, LossMode mode = LossMode::Combined);

// Smooth SI-SDR of a waveform-domain estimate against a fixed reference.
Var si_sdr_smooth(const Var& est, const Tensor& ref);

// Adam with bias correction; state tensors are checkpointed alongside the
// model so training resumes bit-exactly.
struct AdamOptimizer {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int64_t t = 0;
  std::vector<Tensor> m, v;
  void init(const ParamList& params);
  void step(ParamList& params, double lr);
};

// Scales gradients so their global L2 norm is at most max_norm; returns the
// pre-clip norm.
double clip_gradients(const ParamList& params, double max_norm);

struct EpochStats {
  int epoch = 0;
  double train_loss = 0;
  double train_sisdr_db = 0;
  double val_loss = 0;
  double val_sisdr_db = 0;
  double val_stoi = 0;
  double val_lsd_db = 0;
  double lr = 0;
};

struct TrainCheckpoint {
  Model model;
  AdamOptimizer opt;
  int epoch = 0;
  double lr = 0;
  double best_val = 0;
  int best_epoch = 0;
  int stall = 0;  // epochs since the validation loss last improved
  std::vector<EpochStats> history;
};

void save_train_checkpoint(const std::string& path, const Model& m, const AdamOptimizer& opt,
                           int epoch, double lr, double best_val, int best_epoch, int stall,
                           const std::vector<EpochStats>& history);
TrainCheckpoint load_train_checkpoint(const std::string& path);

struct TrainResult {
  std::vector<EpochStats> history;  // includes epochs from a resumed run
  double best_val = 0;
  int best_epoch = 0;
  std::string best_path;  // empty when out_dir is empty
  std::string last_path;
  std::string log_path;
};

// Runs tcfg.epochs additional epochs.  Gradients are accumulated one
// utterance at a time and averaged over the batch; out_dir (optional)
// receives train_log.csv plus best/last checkpoints.
TrainResult train(Model& m, const std::vector<Utterance>& corpus,
                  const std::vector<MixRecipe>& train_recipes,
                  const std::vector<MixRecipe>& val_recipes, const TrainConfig& tcfg,
                  const std::string& out_dir = "", const TrainCheckpoint* resume = nullptr);

struct OverfitReport {
  double noisy_sisdr_db = 0;      // mixture scored against the clean reference
  double initial_sisdr_db = 0;    // untrained model output
  double final_sisdr_db = 0;      // after training
  int steps_run = 0;
  bool reached_target = false;
  std::vector<double> loss_curve;
};

// Trains a fresh model on a single (noisy, clean) pair, stopping early once
// the SI-SDR improvement over the mixture reaches target_gain_db.
OverfitReport overfit_single(const ModelConfig& mcfg, const Utterance& utt, const Waveform& noise,
                             double snr_db, int max_steps, const TrainConfig& tcfg,
                             double target_gain_db = 6.0);

// Central finite differences over every parameter and input element of a
// tiny instance of the named module; returns the worst relative error.
double grad_audit(const std::string& module_id, double eps = 1e-5);
const std::vector<std::string>& grad_audit_modules();

}  // namespace datcft
