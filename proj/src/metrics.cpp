#include "demux/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace demux::metrics {

namespace {

void check_k(std::size_t k, std::size_t m) {
  if (k < 1 || k > m)
    throw std::out_of_range("K=" + std::to_string(k) + " outside [1, " + std::to_string(m) + "]");
}

void check_sizes(const LabelVector& truth, std::span<const double> scores) {
  if (truth.size() != scores.size())
    throw std::invalid_argument("label vector has " + std::to_string(truth.size()) + " classes, scores have " +
                                std::to_string(scores.size()));
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::optional<double> parse_optional(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return std::stod(s);
}

std::vector<std::string> data_lines(const std::string& csv, const std::string& expected_header) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || line != expected_header)
    throw std::runtime_error("unexpected CSV header '" + line + "', wanted '" + expected_header + "'");
  std::vector<std::string> out;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(line);
  return out;
}

constexpr const char* kSummaryHeader = "epoch,split,loss,auc,p_at_k,map_at_k,k_used,skipped_sites";
constexpr const char* kInstanceHeader = "index,k,p_at_k,map_at_k";

}  // namespace

std::string format_real(double v) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k) {
  check_k(k, scores.size());
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  idx.resize(k);
  return idx;
}

double p_at_k(const LabelVector& truth, std::span<const double> scores, std::size_t k) {
  check_sizes(truth, scores);
  std::size_t hits = 0;
  for (auto i : top_k(scores, k)) hits += truth.test(i) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(k);
}

double map_at_k(const LabelVector& truth, std::span<const double> scores, std::size_t k) {
  check_sizes(truth, scores);
  const auto ranked = top_k(scores, k);
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    hits += truth.test(ranked[i]) ? 1 : 0;
    sum += static_cast<double>(hits) / static_cast<double>(i + 1);
  }
  return sum / static_cast<double>(k);
}

double site_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("site_auc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of 1-based average ranks of the positives.
  double rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t)
      if (labels[order[t]]) {
        rank_sum += avg_rank;
        ++positives;
      }
    i = j;
  }
  const std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0) throw std::domain_error("site_auc: needs at least one positive and one negative");
  const double p = static_cast<double>(positives);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(negatives));
}

AucSummary macro_auc(std::span<const double> scores, std::span<const LabelVector> labels) {
  if (labels.empty()) throw std::domain_error("AUC: empty evaluation set");
  const std::size_t n = labels.size();
  const std::size_t m = labels.front().size();
  if (scores.size() != n * m) throw std::invalid_argument("AUC: score matrix does not match labels");
  AucSummary summary;
  double total = 0.0;
  std::vector<double> column(n);
  std::vector<std::uint8_t> truth(n);
  for (std::size_t c = 0; c < m; ++c) {
    std::size_t positives = 0;
    for (std::size_t i = 0; i < n; ++i) {
      column[i] = scores[i * m + c];
      truth[i] = labels[i].test(c) ? 1 : 0;
      positives += truth[i];
    }
    if (positives == 0 || positives == n) {
      summary.skipped_sites.push_back(c);
      continue;
    }
    total += site_auc(column, truth);
    ++summary.eligible_sites;
  }
  if (summary.eligible_sites == 0) throw std::domain_error("AUC: no site has both positive and negative instances");
  summary.auc = total / static_cast<double>(summary.eligible_sites);
  return summary;
}

EvalResult evaluate(std::span<const double> scores, std::span<const LabelVector> labels, const KPolicy& policy) {
  const auto summary = macro_auc(scores, labels);
  EvalResult result;
  result.auc = summary.auc;
  result.skipped_sites = summary.skipped_sites;
  if (policy.kind == KPolicy::Kind::AucOnly) return result;
  const std::size_t m = labels.front().size();
  double p_sum = 0.0, map_sum = 0.0;
  std::optional<std::size_t> shared_k;
  bool uniform = true;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::size_t k = policy.kind == KPolicy::Kind::Fixed ? policy.k : labels[i].popcount();
    if (k == 0) continue;  // nothing monitored to rank
    const auto row = scores.subspan(i * m, m);
    InstanceRow r{i, k, p_at_k(labels[i], row, k), map_at_k(labels[i], row, k)};
    p_sum += r.p_at_k;
    map_sum += r.map_at_k;
    if (!shared_k) shared_k = k;
    uniform = uniform && *shared_k == k;
    result.per_instance.push_back(r);
  }
  if (!result.per_instance.empty()) {
    const double n = static_cast<double>(result.per_instance.size());
    result.p_at_k = p_sum / n;
    result.map_at_k = map_sum / n;
    result.k_used = uniform ? *shared_k : 0;
  }
  return result;
}

std::string eval_summary_csv(const EvalResult& r, const std::string& split) {
  auto opt = [](const std::optional<double>& v) { return v ? format_real(*v) : std::string(); };
  std::string skipped;
  for (auto s : r.skipped_sites) skipped += (skipped.empty() ? "" : ";") + std::to_string(s);
  std::string out = std::string(kSummaryHeader) + "\n";
  out += "," + split + "," + opt(r.loss) + "," + format_real(r.auc) + "," + opt(r.p_at_k) + "," + opt(r.map_at_k) + "," +
         std::to_string(r.k_used) + "," + skipped + "\n";
  return out;
}

std::string eval_instances_csv(const EvalResult& r) {
  std::string out = std::string(kInstanceHeader) + "\n";
  for (const auto& row : r.per_instance)
    out += std::to_string(row.index) + "," + std::to_string(row.k) + "," + format_real(row.p_at_k) + "," +
           format_real(row.map_at_k) + "\n";
  return out;
}

EvalResult parse_eval_csv(const std::string& summary_csv, const std::string& instances_csv) {
  const auto rows = data_lines(summary_csv, kSummaryHeader);
  if (rows.size() != 1) throw std::runtime_error("summary CSV must hold exactly one data row");
  const auto f = split_fields(rows.front());
  if (f.size() != 8) throw std::runtime_error("summary row has " + std::to_string(f.size()) + " fields, expected 8");
  EvalResult r;
  r.loss = parse_optional(f[2]);
  r.auc = std::stod(f[3]);
  r.p_at_k = parse_optional(f[4]);
  r.map_at_k = parse_optional(f[5]);
  r.k_used = std::stoul(f[6]);
  std::istringstream skipped(f[7]);
  for (std::string id; std::getline(skipped, id, ';');)
    if (!id.empty()) r.skipped_sites.push_back(std::stoul(id));
  for (const auto& line : data_lines(instances_csv, kInstanceHeader)) {
    const auto g = split_fields(line);
    if (g.size() != 4) throw std::runtime_error("instance row has " + std::to_string(g.size()) + " fields, expected 4");
    r.per_instance.push_back({std::stoul(g[0]), std::stoul(g[1]), std::stod(g[2]), std::stod(g[3])});
  }
  return r;
}

}  // namespace demux::metrics
