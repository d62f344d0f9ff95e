#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "mrsys/data.hpp"
#include "mrsys/embeddings.hpp"
#include "mrsys/tensor.hpp"

namespace mrsys {

struct AlsConfig {
  std::size_t dim = 32;
  double lambda = 0.1;
  double alpha = 40.0;
  int iterations = 15;
  std::uint64_t seed = 0;
};

/// Implicit-feedback factorization: binary preference on observed cells with
/// confidence c = 1 + alpha * weight, confidence 1 elsewhere.
struct FactorModel {
  IdIndex row_ids;
  IdIndex col_ids;
  Tensor row_factors;  // [rows x d]
  Tensor col_factors;  // [cols x d]
  std::size_t dim = 0;
  double lambda = 0.0;
  double alpha = 0.0;
  /// Objective after every half-step (rows first, then columns).
  std::vector<double> objective_trace;
};

FactorModel als_fit(const InteractionMatrix& matrix, const AlsConfig& config);

/// Re-solves every row (or column) factor with the other side held fixed.
void als_half_step(const InteractionMatrix& matrix, bool solve_rows, Tensor& target,
                   const Tensor& fixed, double lambda, double alpha);

/// sum_{all cells} c (p - x.y)^2 + lambda (|X|^2 + |Y|^2)
double als_objective(const InteractionMatrix& matrix, const Tensor& rows, const Tensor& cols,
                     double lambda, double alpha);

/// Column factors keyed by item id; items absent from training have no entry.
Embeddings behavioral_item_embeddings(const FactorModel& model);
Embeddings user_embeddings(const FactorModel& model);

/// Factorizes the user x postcode visit-count matrix and returns postcode factors.
Embeddings location_embeddings(const EventLog& log,
                               const std::unordered_map<std::string, std::string>& item_postcodes,
                               const AlsConfig& config);

/// Top-n items by dot(user, item) excluding `exclude`; `eligible` optionally
/// restricts the candidate set.
std::vector<ScoredItem> mf_recommend(const FactorModel& model, const std::string& user_id,
                                     const std::unordered_set<std::string>& exclude,
                                     std::size_t top_n,
                                     const std::function<bool(const std::string&)>& eligible = {});

}  // namespace mrsys
