#pragma once

#include <cmath>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "stabkit/corruption.hpp"
#include "stabkit/metrics.hpp"
#include "stabkit/optimizer.hpp"
#include "stabkit/stabilizers.hpp"
#include "stabkit/svg.hpp"
#include "stabkit/video.hpp"

namespace stabkit {

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

struct TrainConfig {
  double lambda = 0.2;
  int tau_train = 8;
  int epochs = 5;
  int steps_per_epoch = 200;
  double lr = 1e-4;
  std::vector<int> lr_drop_epochs = {3, 4};  // x0.1 after these (1-based) epochs
  double lr_drop_factor = 0.1;
  double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
  int batch_frames = 8;  // base fine-tuning batch
  int val_every = 1;     // epochs between validation passes (0 = final only)
  bool joint_base = false;
  MetricKind delta = MetricKind::l2_norm_of_difference;
  std::uint64_t seed = 1;

  // Returns human-readable warnings; between the oracle and collapse bounds
  // the landscape theory guarantees nothing.
  std::vector<std::string> validate() const {
    if (lambda < 0) throw std::invalid_argument("config: lambda must be >= 0");
    if (tau_train < 2) throw std::invalid_argument("config: tau_train must be >= 2");
    if (epochs < 1 || steps_per_epoch < 1) throw std::invalid_argument("config: empty schedule");
    std::vector<std::string> warnings;
    if (lambda >= 0.5 && lambda <= tau_train - 1)
      warnings.push_back("lambda=" + std::to_string(lambda) +
                         " lies between the oracle bound (1/2) and the collapse bound (tau-1=" +
                         std::to_string(tau_train - 1) + "); behavior is unguaranteed");
    return warnings;
  }

  double lr_at_epoch(int epoch) const {  // 1-based
    double value = lr;
    for (int drop : lr_drop_epochs)
      if (epoch > drop) value *= lr_drop_factor;
    return value;
  }
};

// ---------------------------------------------------------------------------
// synthetic datasets
// ---------------------------------------------------------------------------

enum class Task { denoising, enhancement };

inline const char* task_name(Task t) { return t == Task::denoising ? "denoising" : "enhancement"; }

inline Task task_from_name(const std::string& s) {
  if (s == "denoising") return Task::denoising;
  if (s == "enhancement") return Task::enhancement;
  throw std::invalid_argument("unknown task: " + s);
}

struct DatasetConfig {
  int n_train = 10;
  int n_val = 4;
  int tau_train_seq = 24;
  int tau_val = 32;
  Shape shape = {1, 32, 32};
  double noise_sigma = 0.1;               // denoising input noise
  std::vector<CorruptionSpec> extra;      // robustness corruptions, after noise
  std::uint64_t seed = 1;
};

// Sequences whose frames already carry the input corruption chain and whose
// targets are the task targets.
struct Dataset {
  Task task = Task::denoising;
  std::vector<VideoSequence> train, val;
  std::vector<CorruptionSpec> corruption;  // the chain that produced the inputs
};

inline Dataset make_dataset(Task task, const DatasetConfig& cfg) {
  Dataset data;
  data.task = task;
  if (task == Task::denoising && cfg.noise_sigma > 0) {
    CorruptionSpec noise;
    noise.kind = CorruptionKind::gaussian_noise;
    noise.sigma = cfg.noise_sigma;
    data.corruption.push_back(noise);  // noise first, then other corruptions
  }
  for (const auto& c : cfg.extra) data.corruption.push_back(c);

  auto build = [&](int count, int tau, std::uint64_t salt, std::vector<VideoSequence>& out) {
    for (int i = 0; i < count; ++i) {
      std::uint64_t scene_seed = cfg.seed * 7919 + salt * 104729 + i;
      MotionModel motion =
          i % 2 == 0 ? MotionModel::translating_shapes : MotionModel::oscillating_texture;
      VideoSequence clean = generate_sequence(scene_seed, tau, cfg.shape, motion);
      if (task == Task::enhancement)
        for (auto& t : clean.targets) t = unsharp_mask(t);
      auto chain = data.corruption;
      for (std::size_t c = 0; c < chain.size(); ++c)
        chain[c].seed = chain[c].seed * 31 + scene_seed * 2 + c + 1;
      VideoSequence corrupted = corrupt_chain(clean, chain);
      out.push_back(std::move(corrupted));
    }
  };
  build(cfg.n_train, cfg.tau_train_seq, 1, data.train);
  build(cfg.n_val, cfg.tau_val, 2, data.val);
  return data;
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

struct EvalModelRef {
  std::function<void()> reset;
  std::function<Tensor(const Tensor&)> step;
};

inline EvalModelRef eval_ref(const FrameModel& model) {
  return {[] {}, [&model](const Tensor& f) { return model.forward(f); }};
}

inline EvalModelRef eval_ref(StabilizedModel& model) {
  return {[&model] { model.reset(); }, [&model](const Tensor& f) { return model.step(f); }};
}

struct EvalReport {
  std::vector<SequenceMetricsRow> rows;
  double mean_psnr = 0.0;
  double mean_instability = 0.0;
  double mean_robustness_error = 0.0;

  nlohmann::json to_json() const {
    auto j = metrics_summary_json(rows);
    j["mean_robustness_error"] = mean_robustness_error;
    return j;
  }
};

// Single pass per sequence (evaluation tau may exceed training tau); state
// reset per sequence; reported instability uses the mean-over-pairs
// reduction so values are comparable across sequence lengths.
inline EvalReport evaluate(const EvalModelRef& model, const std::vector<VideoSequence>& sequences,
                           const Metric& delta_report = metric_l2(Reduction::mean_over_pairs),
                           double lambda_for_report = 0.0) {
  EvalReport report;
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    const auto& seq = sequences[s];
    model.reset();
    std::vector<Tensor> preds;
    preds.reserve(seq.frames.size());
    double psnr_acc = 0.0;
    for (int t = 0; t < seq.tau(); ++t) {
      Tensor pred = model.step(seq.frames[t]);
      psnr_acc += psnr(pred, seq.targets[t]);
      preds.push_back(std::move(pred));
    }
    SequenceMetricsRow row;
    row.sequence_id = "seq" + std::to_string(s);
    row.psnr = psnr_acc / seq.tau();
    row.instability = corruption_instability(preds, delta_report).item();
    row.accuracy_term = corruption_robustness_error(preds, seq.targets, delta_report).item();
    row.stability_term = row.instability;
    row.lambda = lambda_for_report;
    report.mean_psnr += row.psnr;
    report.mean_instability += row.instability;
    report.mean_robustness_error += row.accuracy_term;
    report.rows.push_back(std::move(row));
  }
  if (!report.rows.empty()) {
    report.mean_psnr /= report.rows.size();
    report.mean_instability /= report.rows.size();
    report.mean_robustness_error /= report.rows.size();
  }
  return report;
}

// ---------------------------------------------------------------------------
// training loops
// ---------------------------------------------------------------------------

struct EpochRow {
  int epoch = 0;
  double train_loss = 0.0;
  double accuracy_term = 0.0;
  double stability_term = 0.0;
  double val_psnr = 0.0;
  double val_instability = 0.0;
};

struct TrainLog {
  std::vector<EpochRow> rows;
  std::string base_hash_before, base_hash_after;
  std::string checkpoint;  // path of the final saved checkpoint, when any

  const EpochRow& final_row() const {
    if (rows.empty()) throw std::logic_error("empty training log");
    return rows.back();
  }
};

inline void write_train_log_csv(const std::filesystem::path& path, const TrainLog& log) {
  std::ofstream out(path, std::ios::trunc);
  out << "epoch,train_loss,accuracy_term,stability_term,val_psnr,val_instability\n";
  for (const auto& r : log.rows)
    out << r.epoch << ',' << r.train_loss << ',' << r.accuracy_term << ',' << r.stability_term
        << ',' << r.val_psnr << ',' << r.val_instability << "\n";
}

// Per-frame MSE fine-tuning of an unfrozen base model.
inline TrainLog train_base(FrameModel& model, const Dataset& data, const TrainConfig& config) {
  for (const auto& w : config.validate()) std::cerr << "[train-base] warning: " << w << "\n";
  if (model.frozen()) throw std::invalid_argument("train_base: model is frozen");
  if (data.train.empty()) throw std::invalid_argument("train_base: empty dataset");
  model.unfreeze();

  Adam opt(model.parameters(), config.adam_beta1, config.adam_beta2, config.adam_eps);
  Rng rng(config.seed);
  TrainLog log;
  log.base_hash_before = model.parameter_hash();

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    double lr = config.lr_at_epoch(epoch);
    double loss_acc = 0.0;
    for (int step = 0; step < config.steps_per_epoch; ++step) {
      Tape tape;
      TapeScope scope(tape);
      Tensor loss;
      for (int b = 0; b < config.batch_frames; ++b) {
        const auto& seq = data.train[rng.index(data.train.size())];
        int t = static_cast<int>(rng.index(seq.tau()));
        Tensor pred = model.forward(seq.frames[t]);
        Tensor err = mul_scalar(sum_squares(sub(pred, seq.targets[t])),
                                1.0 / static_cast<double>(pred.size()));
        loss = loss.defined() ? add(loss, err) : err;
      }
      loss = mul_scalar(loss, 1.0 / config.batch_frames);
      if (!std::isfinite(loss.item()))
        throw std::runtime_error("train_base: NaN loss at epoch " + std::to_string(epoch) +
                                 " step " + std::to_string(step));
      tape.backward(loss);
      opt.step(lr);
      loss_acc += loss.item();
    }
    EpochRow row;
    row.epoch = epoch;
    row.train_loss = loss_acc / config.steps_per_epoch;
    bool validate_now = config.val_every > 0 ? epoch % config.val_every == 0 : epoch == config.epochs;
    if (validate_now) {
      auto rep = evaluate(eval_ref(model), data.val);
      row.val_psnr = rep.mean_psnr;
      row.val_instability = rep.mean_instability;
    }
    log.rows.push_back(row);
  }
  log.base_hash_after = model.parameter_hash();
  return log;
}

// BPTT over snippets of tau_train frames with the unified loss (sum
// reduction, matching the analysis) on the model output. The base stays
// frozen unless joint_base is set.
inline TrainLog train_stabilizer(StabilizedModel& model, const Dataset& data,
                                 const TrainConfig& config) {
  for (const auto& w : config.validate()) std::cerr << "[train-stab] warning: " << w << "\n";
  if (data.train.empty()) throw std::invalid_argument("train_stabilizer: empty dataset");
  if (config.joint_base)
    model.base().unfreeze();
  else if (!model.base().frozen())
    throw std::invalid_argument("train_stabilizer: base must be frozen unless joint_base");

  std::vector<Tensor> params = model.trainable_parameters();
  if (config.joint_base)
    for (auto& p : model.base().parameters()) params.push_back(p);
  if (params.empty()) throw std::invalid_argument("train_stabilizer: nothing to train");

  Adam opt(params, config.adam_beta1, config.adam_beta2, config.adam_eps);
  Rng rng(config.seed);
  Metric delta{config.delta, Reduction::sum_over_pairs};
  TrainLog log;
  log.base_hash_before = model.base().parameter_hash();

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    double lr = config.lr_at_epoch(epoch);
    double loss_acc = 0.0, acc_acc = 0.0, stab_acc = 0.0;
    for (int step = 0; step < config.steps_per_epoch; ++step) {
      const auto& seq = data.train[rng.index(data.train.size())];
      int window = std::min(config.tau_train, seq.tau());
      int start = seq.tau() > window ? static_cast<int>(rng.index(seq.tau() - window + 1)) : 0;

      model.reset();  // no state leakage between snippets
      Tape tape;
      TapeScope scope(tape);
      std::vector<Tensor> preds, targets;
      for (int t = start; t < start + window; ++t) {
        preds.push_back(model.step(seq.frames[t]));
        targets.push_back(seq.targets[t]);
      }
      auto rep = unified_loss(preds, targets, config.lambda, delta);
      if (!std::isfinite(rep.total))
        throw std::runtime_error("train_stabilizer: NaN loss at epoch " + std::to_string(epoch) +
                                 " step " + std::to_string(step));
      tape.backward(rep.total_tensor);
      opt.step(lr);
      loss_acc += rep.total;
      acc_acc += rep.accuracy_term;
      stab_acc += rep.stability_term;
    }
    EpochRow row;
    row.epoch = epoch;
    row.train_loss = loss_acc / config.steps_per_epoch;
    row.accuracy_term = acc_acc / config.steps_per_epoch;
    row.stability_term = stab_acc / config.steps_per_epoch;
    bool validate_now = config.val_every > 0 ? epoch % config.val_every == 0 : epoch == config.epochs;
    if (validate_now) {
      auto rep = evaluate(eval_ref(model), data.val);
      row.val_psnr = rep.mean_psnr;
      row.val_instability = rep.mean_instability;
    }
    log.rows.push_back(row);
  }
  log.base_hash_after = model.base().parameter_hash();
  if (!config.joint_base && log.base_hash_after != log.base_hash_before)
    throw std::logic_error("train_stabilizer: frozen base parameters changed");
  model.reset();
  return log;
}

// ---------------------------------------------------------------------------
// lambda sweep: one full stabilizer training per value
// ---------------------------------------------------------------------------

struct SweepRow {
  double lambda = 0.0;
  double psnr = 0.0;
  double instability = 0.0;
};

inline std::vector<SweepRow> sweep(const std::function<StabilizedModel()>& make_stabilized,
                                   const Dataset& data, TrainConfig config,
                                   const std::vector<double>& lambdas) {
  if (lambdas.empty()) throw std::invalid_argument("sweep: empty lambda list");
  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    TrainConfig cfg = config;
    cfg.lambda = lambdas[i];
    cfg.seed = config.seed * 1000003ULL + i;  // independent stream per run
    StabilizedModel model = make_stabilized();
    auto log = train_stabilizer(model, data, cfg);
    rows.push_back({lambdas[i], log.final_row().val_psnr, log.final_row().val_instability});
  }
  return rows;
}

inline void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  out << "lambda,psnr,instability\n";
  for (const auto& r : rows) out << r.lambda << ',' << r.psnr << ',' << r.instability << "\n";
}

// Frontier orientation: instability on x (less is better), PSNR on y.
inline void write_frontier_svg(const std::filesystem::path& path,
                               const std::vector<SweepRow>& rows) {
  std::vector<SvgPoint> pts;
  for (const auto& r : rows) {
    std::ostringstream label;
    label << "lambda=" << r.lambda;
    pts.push_back({r.instability, r.psnr, label.str()});
  }
  write_svg_scatter(path, pts, "instability", "PSNR (dB)", "accuracy-stability frontier");
}

}  // namespace stabkit
