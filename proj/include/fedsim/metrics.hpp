#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fedsim/data.hpp"
#include "fedsim/model.hpp"
#include "fedsim/types.hpp"

namespace fedsim::model {

// Area under the precision-recall curve, step-wise interpolation over all
// score thresholds with ties grouped.  Requires at least one positive label.
double aupr_from_scores(std::span<const double> scores, std::span<const int> labels);

double eval_aupr(const Architecture& arch, const ModelParams& params,
                 const std::vector<data::ClientRecord>& test_records);

// One ranking query: graded relevances in model-score order are produced by
// the caller or by eval_ndcg from grouped records.
struct RankingGroup {
  std::vector<double> scores;
  std::vector<int> relevances;
};

// NDCG@k with gain 2^rel - 1 and log2(rank+1) discount, mean over groups.
// Groups with all-zero relevance are excluded; all excluded is an error.
double ndcg_from_groups(const std::vector<RankingGroup>& groups, std::size_t k);

// Groups test records by group_id, scores them with the model.
double eval_ndcg(const Architecture& arch, const ModelParams& params,
                 const std::vector<data::ClientRecord>& test_records, std::size_t k);

}  // namespace fedsim::model
