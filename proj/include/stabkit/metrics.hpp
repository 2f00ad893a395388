#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "stabkit/ops.hpp"

namespace stabkit {

enum class MetricKind { l2_norm_of_difference, l1_norm_of_difference };
enum class Reduction { sum_over_pairs, mean_over_pairs };

// delta(a,b) = zeta(a-b) with zeta a norm, so the metric axioms hold by
// construction. Differentiable end-to-end when the inputs sit on a tape.
struct Metric {
  MetricKind kind = MetricKind::l2_norm_of_difference;
  Reduction reduction = Reduction::mean_over_pairs;

  Tensor distance(const Tensor& a, const Tensor& b) const {
    Tensor d = sub(a, b);
    return kind == MetricKind::l2_norm_of_difference ? l2_norm(d) : l1_norm(d);
  }
  double distance_value(const Tensor& a, const Tensor& b) const {
    if (!same_shape(a, b)) throw_shape_error("metric", a, b);
    double acc = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) {
      double d = a.data()[i] - b.data()[i];
      acc += kind == MetricKind::l2_norm_of_difference ? d * d : std::abs(d);
    }
    return kind == MetricKind::l2_norm_of_difference ? std::sqrt(acc) : acc;
  }
};

inline Metric metric_l2(Reduction r = Reduction::mean_over_pairs) {
  return {MetricKind::l2_norm_of_difference, r};
}
inline Metric metric_l1(Reduction r = Reduction::mean_over_pairs) {
  return {MetricKind::l1_norm_of_difference, r};
}

namespace metrics_detail {

inline Tensor reduce_pairs(std::vector<Tensor> terms, Reduction reduction) {
  if (terms.empty()) return Tensor::scalar(0.0);
  Tensor acc = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  if (reduction == Reduction::mean_over_pairs)
    acc = mul_scalar(acc, 1.0 / static_cast<double>(terms.size()));
  return acc;
}

}  // namespace metrics_detail

// Sum (or mean) of delta between adjacent predictions; zero for a single
// frame. This is the positive counterpart of the stability score.
inline Tensor instability(const std::vector<Tensor>& preds, const Metric& delta) {
  if (preds.empty()) throw std::invalid_argument("instability: need at least one prediction");
  for (const auto& p : preds)
    if (!same_shape(p, preds[0])) throw_shape_error("instability", p, preds[0]);
  std::vector<Tensor> terms;
  for (std::size_t t = 0; t + 1 < preds.size(); ++t)
    terms.push_back(delta.distance(preds[t], preds[t + 1]));
  return metrics_detail::reduce_pairs(std::move(terms), delta.reduction);
}

// Positive prediction error against targets under whatever corruption the
// predictions were produced with (the negated robustness score).
inline Tensor corruption_robustness_error(const std::vector<Tensor>& preds,
                                          const std::vector<Tensor>& targets,
                                          const Metric& delta) {
  if (preds.size() != targets.size() || preds.empty())
    throw std::invalid_argument("corruption_robustness_error: length mismatch (" +
                                std::to_string(preds.size()) + " vs " +
                                std::to_string(targets.size()) + ")");
  std::vector<Tensor> terms;
  for (std::size_t t = 0; t < preds.size(); ++t)
    terms.push_back(delta.distance(preds[t], targets[t]));
  return metrics_detail::reduce_pairs(std::move(terms), delta.reduction);
}

// Instability of predictions computed on corrupted inputs. Same arithmetic
// as instability; the separate name keeps call sites honest about inputs.
inline Tensor corruption_instability(const std::vector<Tensor>& preds_under_corruption,
                                     const Metric& delta) {
  return instability(preds_under_corruption, delta);
}

struct UnifiedLossReport {
  double accuracy_term = 0.0;
  double stability_term = 0.0;
  double lambda = 0.0;
  double total = 0.0;
  Tensor total_tensor;  // carries the graph when inputs were taped
};

// total = accuracy + lambda * stability under the metric's reduction.
inline UnifiedLossReport unified_loss(const std::vector<Tensor>& preds,
                                      const std::vector<Tensor>& targets, double lambda,
                                      const Metric& delta) {
  if (lambda < 0) throw std::invalid_argument("unified_loss: lambda must be >= 0");
  Tensor acc = corruption_robustness_error(preds, targets, delta);
  Tensor stab = instability(preds, delta);
  UnifiedLossReport report;
  report.accuracy_term = acc.item();
  report.stability_term = stab.item();
  report.lambda = lambda;
  report.total_tensor = add(acc, mul_scalar(stab, lambda));
  report.total = report.total_tensor.item();
  return report;
}

// 10*log10(peak^2 / MSE) in dB; +infinity for an exact match.
inline double psnr(const Tensor& pred, const Tensor& target, double peak = 1.0) {
  if (!same_shape(pred, target)) throw_shape_error("psnr", pred, target);
  double mse = 0.0;
  for (std::int64_t i = 0; i < pred.size(); ++i) {
    double d = pred.data()[i] - target.data()[i];
    mse += d * d;
  }
  mse /= static_cast<double>(pred.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

// ---------------------------------------------------------------------------
// report serialization
// ---------------------------------------------------------------------------

struct SequenceMetricsRow {
  std::string sequence_id;
  double psnr = 0.0;
  double instability = 0.0;
  double accuracy_term = 0.0;
  double stability_term = 0.0;
  double lambda = 0.0;
};

inline void write_metrics_csv(const std::filesystem::path& path,
                              const std::vector<SequenceMetricsRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << "sequence_id,psnr,instability,accuracy_term,stability_term,lambda\n";
  for (const auto& r : rows)
    out << r.sequence_id << ',' << r.psnr << ',' << r.instability << ',' << r.accuracy_term << ','
        << r.stability_term << ',' << r.lambda << "\n";
}

inline nlohmann::json metrics_summary_json(const std::vector<SequenceMetricsRow>& rows) {
  double psnr = 0, inst = 0, acc = 0, stab = 0;
  for (const auto& r : rows) {
    psnr += r.psnr;
    inst += r.instability;
    acc += r.accuracy_term;
    stab += r.stability_term;
  }
  std::size_t n = std::max<std::size_t>(1, rows.size());
  return {{"sequences", rows.size()},
          {"mean_psnr", psnr / n},
          {"mean_instability", inst / n},
          {"mean_accuracy_term", acc / n},
          {"mean_stability_term", stab / n}};
}

}  // namespace stabkit
