#include "fedsim/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace fedsim::model {

double aupr_from_scores(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size() || scores.empty())
    throw ValidationError("aupr: scores and labels must be non-empty and equal length");
  std::uint64_t total_pos = 0;
  for (int y : labels)
    if (y > 0) ++total_pos;
  if (total_pos == 0) throw ValidationError("aupr: needs at least one positive label");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  // Step-wise interpolation: AP = sum over thresholds of (R_i - R_{i-1}) * P_i,
  // with tied scores entering as one group.
  double ap = 0;
  double prev_recall = 0;
  std::uint64_t tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      if (labels[order[j]] > 0)
        ++tp;
      else
        ++fp;
      ++j;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(total_pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return ap;
}

double eval_aupr(const Architecture& arch, const ModelParams& params,
                 const std::vector<data::ClientRecord>& test_records) {
  std::vector<double> scores(test_records.size());
  std::vector<int> labels(test_records.size());
  for (std::size_t i = 0; i < test_records.size(); ++i) {
    scores[i] = score(arch, params.weights, test_records[i]);
    labels[i] = test_records[i].label > 0 ? 1 : 0;
  }
  return aupr_from_scores(scores, labels);
}

double ndcg_from_groups(const std::vector<RankingGroup>& groups, std::size_t k) {
  if (k < 1) throw ValidationError("ndcg: k must be >= 1");
  double total = 0;
  std::size_t counted = 0;
  for (const auto& g : groups) {
    if (g.scores.size() != g.relevances.size() || g.scores.empty())
      throw ValidationError("ndcg: malformed group");
    const bool any_rel = std::any_of(g.relevances.begin(), g.relevances.end(),
                                     [](int r) { return r > 0; });
    if (!any_rel) continue;  // undefined ideal; excluded from the mean

    std::vector<std::size_t> order(g.scores.size());
    std::iota(order.begin(), order.end(), 0);
    // Stable on score ties: input order decides, keeping the metric invariant
    // under strictly monotone score transforms.
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return g.scores[a] > g.scores[b]; });

    std::vector<int> ideal = g.relevances;
    std::sort(ideal.begin(), ideal.end(), std::greater<>());

    double dcg = 0, idcg = 0;
    const std::size_t depth = std::min(k, g.scores.size());
    for (std::size_t r = 0; r < depth; ++r) {
      const double discount = std::log2(static_cast<double>(r) + 2.0);
      dcg += (std::pow(2.0, g.relevances[order[r]]) - 1.0) / discount;
      idcg += (std::pow(2.0, ideal[r]) - 1.0) / discount;
    }
    total += dcg / idcg;
    ++counted;
  }
  if (counted == 0) throw ValidationError("ndcg: every group has all-zero relevance");
  return total / static_cast<double>(counted);
}

double eval_ndcg(const Architecture& arch, const ModelParams& params,
                 const std::vector<data::ClientRecord>& test_records, std::size_t k) {
  std::map<std::int64_t, RankingGroup> by_group;
  for (const auto& r : test_records) {
    auto& g = by_group[r.group_id];
    g.scores.push_back(score(arch, params.weights, r));
    g.relevances.push_back(r.label);
  }
  std::vector<RankingGroup> groups;
  groups.reserve(by_group.size());
  for (auto& [id, g] : by_group) {
    (void)id;
    groups.push_back(std::move(g));
  }
  return ndcg_from_groups(groups, k);
}

}  // namespace fedsim::model
