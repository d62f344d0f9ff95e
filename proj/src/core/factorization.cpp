#include "mrsys/factorization.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "mrsys/error.hpp"
#include "mrsys/random.hpp"

namespace mrsys {

namespace {

using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const MatrixRM> view(const Tensor& t) {
  return {t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

}  // namespace

void als_half_step(const InteractionMatrix& matrix, bool solve_rows, Tensor& target,
                   const Tensor& fixed, double lambda, double alpha) {
  const std::size_t d = fixed.cols();
  const auto f = view(fixed);
  const Eigen::MatrixXd gram = f.transpose() * f;
  const std::size_t n = solve_rows ? matrix.row_count() : matrix.col_count();
  require(target.rows() == n && target.cols() == d, "ALS factor shape mismatch");

  Eigen::MatrixXd a(d, d);
  Eigen::VectorXd b(d);
  for (std::size_t k = 0; k < n; ++k) {
    a = gram;
    a.diagonal().array() += lambda;
    b.setZero();
    const auto entries = solve_rows ? matrix.row(k) : matrix.col(k);
    for (const auto& e : entries) {
      const double c = 1.0 + alpha * e.weight;
      const auto y = f.row(static_cast<Eigen::Index>(e.index)).transpose();
      a.noalias() += (c - 1.0) * y * y.transpose();
      b.noalias() += c * y;
    }
    const Eigen::VectorXd x = a.ldlt().solve(b);
    for (std::size_t j = 0; j < d; ++j) target(k, j) = x[static_cast<Eigen::Index>(j)];
  }
}

double als_objective(const InteractionMatrix& matrix, const Tensor& rows, const Tensor& cols,
                     double lambda, double alpha) {
  const auto x = view(rows);
  const auto y = view(cols);
  // Unobserved cells contribute s^2 with unit confidence; sum s^2 over all
  // cells equals <X^T X, Y^T Y>.
  const Eigen::MatrixXd gx = x.transpose() * x;
  const Eigen::MatrixXd gy = y.transpose() * y;
  double total = (gx.array() * gy.array()).sum();
  for (std::size_t r = 0; r < matrix.row_count(); ++r)
    for (const auto& e : matrix.row(r)) {
      const double s = dot(rows.row(r), cols.row(e.index));
      const double c = 1.0 + alpha * e.weight;
      total += c * (1.0 - s) * (1.0 - s) - s * s;
    }
  total += lambda * (x.squaredNorm() + y.squaredNorm());
  return total;
}

FactorModel als_fit(const InteractionMatrix& matrix, const AlsConfig& config) {
  require(config.dim >= 1, "ALS dimension must be >= 1");
  require(config.lambda > 0.0, "ALS lambda must be positive");
  require(config.iterations >= 1, "ALS needs at least one iteration");
  if (matrix.empty()) throw ValidationError("ALS: empty interaction matrix");

  FactorModel model;
  model.row_ids = matrix.rows();
  model.col_ids = matrix.cols();
  model.dim = config.dim;
  model.lambda = config.lambda;
  model.alpha = config.alpha;
  model.row_factors = Tensor({matrix.row_count(), config.dim});
  model.col_factors = Tensor({matrix.col_count(), config.dim});
  Rng rng(config.seed);
  for (double& v : model.col_factors.data()) v = uniform(rng, -0.01, 0.01);
  for (double& v : model.row_factors.data()) v = uniform(rng, -0.01, 0.01);

  for (int it = 0; it < config.iterations; ++it) {
    als_half_step(matrix, true, model.row_factors, model.col_factors, config.lambda, config.alpha);
    model.objective_trace.push_back(
        als_objective(matrix, model.row_factors, model.col_factors, config.lambda, config.alpha));
    als_half_step(matrix, false, model.col_factors, model.row_factors, config.lambda, config.alpha);
    model.objective_trace.push_back(
        als_objective(matrix, model.row_factors, model.col_factors, config.lambda, config.alpha));
  }
  if (!model.row_factors.all_finite() || !model.col_factors.all_finite())
    throw RuntimeError("ALS produced non-finite factors");
  return model;
}

namespace {
Embeddings table_of(const IdIndex& ids, const Tensor& factors) {
  Embeddings out;
  for (std::size_t k = 0; k < ids.size(); ++k) {
    const auto row = factors.row(k);
    out.emplace(ids.id(k), std::vector<double>(row.begin(), row.end()));
  }
  return out;
}
}  // namespace

Embeddings behavioral_item_embeddings(const FactorModel& model) {
  return table_of(model.col_ids, model.col_factors);
}

Embeddings user_embeddings(const FactorModel& model) {
  return table_of(model.row_ids, model.row_factors);
}

Embeddings location_embeddings(const EventLog& log,
                               const std::unordered_map<std::string, std::string>& item_postcodes,
                               const AlsConfig& config) {
  if (log.empty()) throw ValidationError("location embeddings: empty event log");
  IdIndex users, postcodes;
  std::vector<std::tuple<std::size_t, std::size_t, double>> cells;
  for (const auto& e : log.events()) {
    auto it = item_postcodes.find(e.item_id);
    if (it == item_postcodes.end())
      throw ValidationError("location embeddings: item '" + e.item_id + "' has no postcode");
    cells.emplace_back(users.intern(e.user_id), postcodes.intern(it->second), 1.0);
  }
  const InteractionMatrix matrix(std::move(users), std::move(postcodes), cells);
  return behavioral_item_embeddings(als_fit(matrix, config));
}

std::vector<ScoredItem> mf_recommend(const FactorModel& model, const std::string& user_id,
                                     const std::unordered_set<std::string>& exclude,
                                     std::size_t top_n,
                                     const std::function<bool(const std::string&)>& eligible) {
  const auto u = model.row_ids.find(user_id);
  if (!u) throw ValidationError("mf_recommend: unknown user '" + user_id + "'");
  std::vector<ScoredItem> scored;
  if (top_n == 0) return scored;
  const auto uf = model.row_factors.row(*u);
  for (std::size_t i = 0; i < model.col_ids.size(); ++i) {
    const auto& id = model.col_ids.id(i);
    if (exclude.count(id) || (eligible && !eligible(id))) continue;
    scored.push_back({id, dot(uf, model.col_factors.row(i))});
  }
  const std::size_t keep = std::min(top_n, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end(),
                    [](const ScoredItem& a, const ScoredItem& b) {
                      if (a.score != b.score) return a.score > b.score;
                      return a.item_id < b.item_id;
                    });
  scored.resize(keep);
  return scored;
}

}  // namespace mrsys
