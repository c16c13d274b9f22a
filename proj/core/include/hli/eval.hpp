#ifndef HLI_EVAL_HPP_
#define HLI_EVAL_HPP_

#include <filesystem>
#include <span>
#include <vector>

#include "hli/tensor.hpp"

namespace hli {

// Gallery indices by ascending Euclidean distance between L2-normalized
// vectors; equal distances keep ascending index order.
std::vector<int> rank_gallery(const Eigen::RowVectorXd& query, const Matrix& gallery);

struct EvalProtocol {
  // Drop gallery items that share both identity and camera with the query.
  bool exclude_same_camera_matches = true;
};

struct RetrievalResult {
  std::vector<std::vector<int>> rankings;  // per evaluated query, sample indices
  std::vector<int> query_index;            // sample index of each evaluated query
  std::vector<double> average_precision;   // per evaluated query
  std::vector<double> cmc;                 // cmc[k] = P(first hit at rank <= k+1)
  double mean_ap = 0.0;
  int skipped_queries = 0;  // queries with no valid positive

  double top_k(int k) const;
};

// All-vs-all retrieval: every sample queries every other sample.
RetrievalResult evaluate(const Matrix& embeddings, std::span<const int> identities,
                         std::span<const int> nuisance_ids, const EvalProtocol& protocol = {});

// metric,value rows (mAP, top1, top5, top10, queries, skipped).
void write_retrieval_summary_csv(const std::filesystem::path& path, const RetrievalResult& r);
// rank,cmc rows.
void write_cmc_csv(const std::filesystem::path& path, const RetrievalResult& r);
void write_cmc_plot(const std::filesystem::path& path, const RetrievalResult& r, const std::string& title);

}  // namespace hli

#endif  // HLI_EVAL_HPP_
