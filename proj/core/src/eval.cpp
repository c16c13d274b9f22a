#include "hli/eval.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <numeric>

#include "hli/image_io.hpp"
#include "hli/normalize.hpp"

namespace hli {

std::vector<int> rank_gallery(const Eigen::RowVectorXd& query, const Matrix& gallery) {
  if (gallery.rows() == 0) throw Error("rank_gallery: empty gallery");
  if (gallery.cols() != query.size()) throw Error("rank_gallery: dimension mismatch");
  if (!query.allFinite()) throw Error("rank_gallery: non-finite query");
  Matrix q(1, query.size());
  q.row(0) = query;
  const Matrix qn = l2_normalize_rows(q);
  const Matrix gn = l2_normalize_rows(gallery);
  std::vector<double> dist(static_cast<std::size_t>(gallery.rows()));
  for (Eigen::Index j = 0; j < gallery.rows(); ++j) dist[j] = (gn.row(j) - qn.row(0)).squaredNorm();
  std::vector<int> order(dist.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return dist[a] < dist[b]; });
  return order;
}

double RetrievalResult::top_k(int k) const {
  if (cmc.empty() || k <= 0) return 0.0;
  return cmc[static_cast<std::size_t>(std::min<int>(k, static_cast<int>(cmc.size())) - 1)];
}

RetrievalResult evaluate(const Matrix& embeddings, std::span<const int> identities,
                         std::span<const int> nuisance_ids, const EvalProtocol& protocol) {
  const auto n = static_cast<std::size_t>(embeddings.rows());
  if (identities.size() != n || nuisance_ids.size() != n) throw Error("evaluate: label arrays must match embeddings");
  if (n < 2) throw Error("evaluate: need at least two samples");

  RetrievalResult out;
  std::vector<int> first_hit_histogram(n, 0);
  for (std::size_t q = 0; q < n; ++q) {
    std::vector<int> gallery_idx;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == q) continue;
      if (protocol.exclude_same_camera_matches && identities[j] == identities[q] &&
          nuisance_ids[j] == nuisance_ids[q]) {
        continue;
      }
      gallery_idx.push_back(static_cast<int>(j));
    }
    const bool has_positive = std::any_of(gallery_idx.begin(), gallery_idx.end(),
                                          [&](int j) { return identities[j] == identities[q]; });
    if (!has_positive) {
      ++out.skipped_queries;
      continue;
    }
    const Matrix gallery = rows_of(embeddings, gallery_idx);
    const std::vector<int> order = rank_gallery(embeddings.row(static_cast<Eigen::Index>(q)), gallery);

    std::vector<int> ranking(order.size());
    double precision_sum = 0;
    int hits = 0, first_hit = -1;
    for (std::size_t r = 0; r < order.size(); ++r) {
      ranking[r] = gallery_idx[order[r]];
      if (identities[ranking[r]] == identities[q]) {
        ++hits;
        precision_sum += static_cast<double>(hits) / static_cast<double>(r + 1);
        if (first_hit < 0) first_hit = static_cast<int>(r);
      }
    }
    ++first_hit_histogram[first_hit];
    out.average_precision.push_back(precision_sum / hits);
    out.rankings.push_back(std::move(ranking));
    out.query_index.push_back(static_cast<int>(q));
  }
  if (out.average_precision.empty()) throw Error("evaluate: every query was skipped (no valid positives)");

  const double nq = static_cast<double>(out.average_precision.size());
  out.mean_ap = std::accumulate(out.average_precision.begin(), out.average_precision.end(), 0.0) / nq;
  out.cmc.resize(n - 1);
  int cumulative = 0;
  for (std::size_t k = 0; k + 1 < n; ++k) {
    cumulative += first_hit_histogram[k];
    out.cmc[k] = cumulative / nq;
  }
  return out;
}

void write_retrieval_summary_csv(const std::filesystem::path& path, const RetrievalResult& r) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << std::setprecision(17);
  out << "metric,value\n"
      << "mAP," << r.mean_ap << "\n"
      << "top1," << r.top_k(1) << "\n"
      << "top5," << r.top_k(5) << "\n"
      << "top10," << r.top_k(10) << "\n"
      << "queries," << r.average_precision.size() << "\n"
      << "skipped," << r.skipped_queries << "\n";
}

void write_cmc_csv(const std::filesystem::path& path, const RetrievalResult& r) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << std::setprecision(17) << "rank,cmc\n";
  for (std::size_t k = 0; k < r.cmc.size(); ++k) out << k + 1 << "," << r.cmc[k] << "\n";
}

void write_cmc_plot(const std::filesystem::path& path, const RetrievalResult& r, const std::string& title) {
  PlotSeries s{"CMC", {}, {}};
  const std::size_t shown = std::min<std::size_t>(r.cmc.size(), 20);
  for (std::size_t k = 0; k < shown; ++k) {
    s.x.push_back(static_cast<double>(k + 1));
    s.y.push_back(r.cmc[k]);
  }
  write_line_plot_svg(path, title, "rank", "matching rate", std::span<const PlotSeries>(&s, 1));
}

}  // namespace hli
