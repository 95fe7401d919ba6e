#include "dfe/analysis/retrieval.hpp"

#include <cmath>
#include <numeric>
#include <string>
#include <unordered_map>

#include "dfe/numcore/errors.hpp"

namespace dfe::analysis {

using nc::Tensor;

namespace {

void check_widths(std::span<const BinaryCode> queries, std::span<const BinaryCode> database) {
  const std::size_t k = !database.empty() ? database.front().bits() : !queries.empty() ? queries.front().bits() : 0;
  for (const auto& c : queries)
    if (c.bits() != k) throw ContractViolation("retrieval: query and database codes differ in width");
  for (const auto& c : database)
    if (c.bits() != k) throw ContractViolation("retrieval: database codes differ in width");
}

void finish(std::vector<RetrievalGroup>& groups, const RetrievalOptions& o, std::size_t db_size) {
  if (o.queries_in_database && groups.size() != db_size)
    throw ContractViolation("retrieval: queries_in_database needs as many queries as database frames");
  for (std::size_t q = 0; q < groups.size(); ++q) {
    auto& m = groups[q].members;
    if (o.queries_in_database) std::erase(m, q);
    groups[q].included = m.size() >= o.min_matches;
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

std::vector<RetrievalGroup> retrieve_exact(std::span<const BinaryCode> queries, std::span<const BinaryCode> database,
                                           const RetrievalOptions& options) {
  check_widths(queries, database);
  std::unordered_map<BinaryCode, std::vector<std::size_t>, BinaryCodeHash> index;
  for (std::size_t i = 0; i < database.size(); ++i) index[database[i]].push_back(i);
  std::vector<RetrievalGroup> out(queries.size());
  for (std::size_t q = 0; q < queries.size(); ++q)
    if (auto it = index.find(queries[q]); it != index.end()) out[q].members = it->second;
  finish(out, options, database.size());
  return out;
}

std::vector<RetrievalGroup> retrieve_brute_force(std::span<const BinaryCode> queries, std::span<const BinaryCode> database,
                                                 const RetrievalOptions& options) {
  check_widths(queries, database);
  std::vector<RetrievalGroup> out(queries.size());
  for (std::size_t q = 0; q < queries.size(); ++q)
    for (std::size_t i = 0; i < database.size(); ++i)
      if (database[i] == queries[q]) out[q].members.push_back(i);
  finish(out, options, database.size());
  return out;
}

double group_std(const Tensor& f, std::span<const std::size_t> rows) {
  if (rows.empty()) throw ContractViolation("group_std: empty group");
  const std::size_t d = f.cols();
  double total = 0.0;
  for (std::size_t c = 0; c < d; ++c) {
    double mean = 0.0;
    for (std::size_t r : rows) mean += f.at(r, c);
    mean /= double(rows.size());
    double var = 0.0;
    for (std::size_t r : rows) var += (f.at(r, c) - mean) * (f.at(r, c) - mean);
    total += std::sqrt(var / double(rows.size()));
  }
  return d ? total / double(d) : 0.0;
}

RetrievalMetrics retrieval_metrics(std::span<const RetrievalGroup> groups, const Tensor& qf, const Tensor& df) {
  if (qf.rank() != 2 || df.rank() != 2 || qf.cols() != df.cols())
    throw ContractViolation("retrieval_metrics: query and database features must be matrices of equal width");
  if (qf.rows() != groups.size())
    throw ContractViolation("retrieval_metrics: " + std::to_string(groups.size()) + " queries but " + std::to_string(qf.rows()) +
                            " query feature rows");
  RetrievalMetrics m;
  for (std::size_t q = 0; q < groups.size(); ++q) {
    const auto& g = groups[q];
    if (!g.included) {
      ++m.excluded;
      continue;
    }
    for (std::size_t r : g.members)
      if (r >= df.rows()) throw ContractViolation("retrieval_metrics: no reference features for database frame " + std::to_string(r));
    const auto a = qf.row(q);
    const double na = std::sqrt(dot(a, a));
    double cos = 0.0, euc = 0.0;
    for (std::size_t r : g.members) {
      const auto b = df.row(r);
      const double nb = std::sqrt(dot(b, b));
      if (na > 0.0 && nb > 0.0) cos += dot(a, b) / (na * nb);
      double s = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
      euc += std::sqrt(s);
    }
    m.mean_cosine += cos / double(g.members.size());
    m.mean_euclidean += euc / double(g.members.size());
    m.mean_std += group_std(df, g.members);
    ++m.included;
  }
  if (m.included) {
    m.mean_cosine /= double(m.included);
    m.mean_euclidean /= double(m.included);
    m.mean_std /= double(m.included);
  }
  return m;
}

double random_group_std(std::span<const RetrievalGroup> groups, const Tensor& df, std::size_t trials, Rng& rng) {
  if (trials == 0) throw ContractViolation("random_group_std: need at least one trial");
  const std::size_t n = df.rows();
  std::vector<std::size_t> perm(n);
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& g : groups) {
      if (!g.included) continue;
      const std::size_t size = g.members.size();
      if (size > n) throw ContractViolation("random_group_std: group larger than the database");
      std::iota(perm.begin(), perm.end(), std::size_t(0));
      // partial Fisher-Yates
      for (std::size_t i = 0; i < size; ++i) std::swap(perm[i], perm[i + rng.index(n - i)]);
      sum += group_std(df, std::span(perm).first(size));
      ++count;
    }
    if (count) {
      total += sum / double(count);
      ++used;
    }
  }
  return used ? total / double(used) : 0.0;
}

}  // namespace dfe::analysis
