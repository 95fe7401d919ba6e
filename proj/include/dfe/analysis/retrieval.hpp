#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dfe/analysis/diversity.hpp"
#include "dfe/numcore/rng.hpp"

namespace dfe::analysis {

struct RetrievalOptions {
  std::size_t min_matches = 5;
  /// Query i is database frame i; it is left out of its own group.
  bool queries_in_database = false;
};

struct RetrievalGroup {
  std::vector<std::size_t> members;  // database indices, ascending
  bool included = false;             // members.size() >= min_matches
};

/// Database frames whose presence code equals each query's, via a hash index.
std::vector<RetrievalGroup> retrieve_exact(std::span<const BinaryCode> queries, std::span<const BinaryCode> database,
                                           const RetrievalOptions& options = {});
/// Same result by a linear scan per query.
std::vector<RetrievalGroup> retrieve_brute_force(std::span<const BinaryCode> queries, std::span<const BinaryCode> database,
                                                 const RetrievalOptions& options = {});

struct RetrievalMetrics {
  double mean_cosine = 0.0;
  double mean_euclidean = 0.0;
  double mean_std = 0.0;
  std::size_t included = 0;
  std::size_t excluded = 0;
};

/// Per included query: mean cosine and Euclidean distance between the query's
/// reference vector and each member's, and the per-dimension (population)
/// standard deviation across the members averaged over dimensions. Reported
/// values average over included queries. A zero vector has cosine 0 with anything.
RetrievalMetrics retrieval_metrics(std::span<const RetrievalGroup> groups, const nc::Tensor& query_features,
                                   const nc::Tensor& database_features);

/// Mean over dimensions of the population std of the selected rows.
double group_std(const nc::Tensor& features, std::span<const std::size_t> rows);

/// Control for retrieval_metrics: for each included group, the std of a
/// random group of the same size drawn without replacement, averaged over
/// groups and then over `trials`.
double random_group_std(std::span<const RetrievalGroup> groups, const nc::Tensor& database_features, std::size_t trials, Rng& rng);

}  // namespace dfe::analysis
