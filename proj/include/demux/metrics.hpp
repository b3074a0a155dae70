#ifndef DEMUX_METRICS_HPP
#define DEMUX_METRICS_HPP

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "demux/trace.hpp"

namespace demux::metrics {

// Indices of the k largest scores, best first; ties go to the lower index.
std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k);

double p_at_k(const LabelVector& truth, std::span<const double> scores, std::size_t k);

// Mean of P@1 .. P@k over one ranked list.
double map_at_k(const LabelVector& truth, std::span<const double> scores, std::size_t k);

// One-vs-all AUC of a single site: probability that a random positive
// outscores a random negative, ties counting one half. Needs both classes.
double site_auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct AucSummary {
  double auc = 0.0;  // macro average over eligible sites
  std::size_t eligible_sites = 0;
  std::vector<std::size_t> skipped_sites;  // no positive or no negative instance
};

// scores is row-major (instances x classes). Throws std::domain_error when no
// site is eligible.
AucSummary macro_auc(std::span<const double> scores, std::span<const LabelVector> labels);

struct KPolicy {
  enum class Kind { TrueCount, Fixed, AucOnly } kind = Kind::TrueCount;
  std::size_t k = 0;  // for Fixed

  static KPolicy true_count() { return {}; }
  static KPolicy fixed(std::size_t k) { return {Kind::Fixed, k}; }
  static KPolicy auc_only() { return {Kind::AucOnly, 0}; }
};

struct InstanceRow {
  std::size_t index = 0;
  std::size_t k = 0;
  double p_at_k = 0.0;
  double map_at_k = 0.0;

  friend bool operator==(const InstanceRow&, const InstanceRow&) = default;
};

struct EvalResult {
  std::optional<double> loss;
  double auc = 0.0;
  std::optional<double> p_at_k;
  std::optional<double> map_at_k;
  // K shared by every ranked instance; 0 when true counts differ per instance.
  std::size_t k_used = 0;
  std::vector<InstanceRow> per_instance;
  std::vector<std::size_t> skipped_sites;

  friend bool operator==(const EvalResult&, const EvalResult&) = default;
};

EvalResult evaluate(std::span<const double> scores, std::span<const LabelVector> labels, const KPolicy& policy);

// Summary rows share the trainer log columns plus k_used:
// epoch,split,loss,auc,p_at_k,map_at_k,k_used,skipped_sites (';'-separated).
// Absent values are empty fields.
std::string eval_summary_csv(const EvalResult& result, const std::string& split);
std::string eval_instances_csv(const EvalResult& result);
// Rebuilds an EvalResult from the two CSV documents written above.
EvalResult parse_eval_csv(const std::string& summary_csv, const std::string& instances_csv);

std::string format_real(double v);

}  // namespace demux::metrics

#endif  // DEMUX_METRICS_HPP
