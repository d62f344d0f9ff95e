#include "mrsys/sequence.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "mrsys/error.hpp"

namespace mrsys {

namespace {

std::map<std::string, std::vector<std::string>> clicks_by_user(const EventLog& log) {
  std::map<std::string, std::vector<std::string>> out;
  for (const auto& e : log.events())
    if (e.kind == EventKind::Click) out[e.user_id].push_back(e.item_id);
  return out;
}

std::string join(std::span<const std::string> items) {
  std::string s;
  for (std::size_t i = 0; i < items.size(); ++i) s += (i ? "," : "") + items[i];
  return s;
}

}  // namespace

std::vector<SequenceExample> build_sequences(const EventLog& log, std::size_t n, std::size_t k) {
  require(n > 1, "sequence look-back n must be greater than 1");
  require(k >= 1, "sequence horizon k must be at least 1");
  std::vector<SequenceExample> out;
  for (const auto& [user, clicks] : clicks_by_user(log)) {
    for (std::size_t t = 1; t + 1 < clicks.size(); ++t) {
      SequenceExample ex;
      ex.user_id = user;
      const std::size_t first = t + 1 > n ? t + 1 - n : 0;
      ex.history.assign(clicks.begin() + static_cast<std::ptrdiff_t>(first),
                        clicks.begin() + static_cast<std::ptrdiff_t>(t + 1));
      const std::size_t last = std::min(clicks.size(), t + 1 + k);
      ex.future.assign(clicks.begin() + static_cast<std::ptrdiff_t>(t + 1),
                       clicks.begin() + static_cast<std::ptrdiff_t>(last));
      out.push_back(std::move(ex));
    }
  }
  return out;
}

std::map<std::string, std::vector<std::string>> latest_histories(const EventLog& log, std::size_t n) {
  require(n >= 1, "history length must be positive");
  auto out = clicks_by_user(log);
  for (auto& [user, clicks] : out)
    if (clicks.size() > n) clicks.erase(clicks.begin(), clicks.end() - static_cast<std::ptrdiff_t>(n));
  return out;
}

void save_sequences(std::span<const SequenceExample> examples, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot write " + path.string());
  for (const auto& ex : examples) out << ex.user_id << '\t' << join(ex.history) << '\t' << join(ex.future) << '\n';
}

// ---------------------------------------------------------------------------
// Model

SeqModel::SeqModel(std::size_t embedding_dim, std::size_t hidden, std::size_t n, std::size_t k)
    : n_(n), k_(k), gru_(embedding_dim, hidden), head_(hidden, k * embedding_dim, Activation::Identity) {
  require(n > 1, "sequence look-back n must be greater than 1");
  require(k >= 1, "sequence horizon k must be at least 1");
}

void SeqModel::init(Rng& rng) {
  gru_.init(rng);
  head_.init(rng);
}

Tensor SeqModel::history_inputs(std::span<const std::string> history, const Embeddings& table) const {
  if (history.empty()) throw ValidationError("empty history");
  const std::size_t first = history.size() > n_ ? history.size() - n_ : 0;
  const std::size_t d = embedding_dim();
  Tensor x({history.size() - first, d});
  for (std::size_t t = first; t < history.size(); ++t) {
    auto it = table.find(history[t]);
    if (it == table.end()) throw ValidationError("item '" + history[t] + "' has no hybrid embedding");
    if (it->second.size() != d) throw ValidationError("embedding dimension mismatch for '" + history[t] + "'");
    std::copy(it->second.begin(), it->second.end(), x.row(t - first).begin());
  }
  return x;
}

Tensor SeqModel::forward(const Tensor& inputs) const {
  const Tensor states = gru_.forward(inputs, Tensor({hidden_dim()}));
  const auto last = states.row(states.rows() - 1);
  const Tensor y = head_.forward(Tensor::vector(last));
  return Tensor({k_, embedding_dim()}, std::vector<double>(y.data().begin(), y.data().end()));
}

double SeqModel::loss(std::span<const SequenceExample> examples, const Embeddings& table, bool grads) {
  require(!examples.empty(), "sequence loss needs at least one example");
  if (grads) zero_grads(params());
  const std::size_t d = embedding_dim(), h = hidden_dim();
  const double inv = 1.0 / static_cast<double>(examples.size());
  double total = 0.0;
  for (const auto& ex : examples) {
    require(!ex.future.empty(), "sequence example without future");
    const Tensor x = history_inputs(ex.history, table);
    Gru::Cache gcache;
    Dense::Cache hcache;
    const Tensor states = gru_.forward(x, Tensor({h}), grads ? &gcache : nullptr);
    const std::size_t steps = std::min(k_, ex.future.size());
    const Tensor y = head_.forward(Tensor::vector(states.row(states.rows() - 1)), grads ? &hcache : nullptr);
    Tensor pred({steps, d}, std::vector<double>(y.data().begin(), y.data().begin() + static_cast<std::ptrdiff_t>(steps * d)));
    const Tensor target = history_inputs(ex.future, table);
    const auto l = cosine_distance_loss(pred, target);
    total += l.value * inv;
    if (!grads) continue;
    Tensor dy({k_ * d});
    for (std::size_t j = 0; j < steps * d; ++j) dy[j] = l.grad.data()[j] * inv;
    const Tensor dlast = head_.backward(hcache, dy);
    Tensor dstates(states.shape());
    std::copy(dlast.data().begin(), dlast.data().end(), dstates.row(states.rows() - 1).begin());
    gru_.backward(gcache, dstates);
  }
  return total;
}

ParamList SeqModel::params() {
  ParamList out;
  gru_.collect("gru", out);
  head_.collect("head", out);
  return out;
}

Checkpoint SeqModel::to_checkpoint() {
  Checkpoint ckpt;
  ckpt.put("", params());
  ckpt.put_scalar("config.n", static_cast<double>(n_));
  ckpt.put_scalar("config.k", static_cast<double>(k_));
  return ckpt;
}

SeqModel SeqModel::from_checkpoint(const Checkpoint& ckpt) {
  const auto& wz = ckpt.get("gru.w_z");
  SeqModel model(wz.cols(), wz.rows(), static_cast<std::size_t>(ckpt.scalar("config.n")),
                 static_cast<std::size_t>(ckpt.scalar("config.k")));
  ckpt.restore("", model.params());
  return model;
}

SeqModel train_sequence_model(std::span<const SequenceExample> examples, const Embeddings& table,
                              const SeqConfig& config) {
  if (examples.empty()) throw ValidationError("sequence training needs at least one example");
  if (table.empty()) throw ValidationError("sequence training needs hybrid embeddings");
  require(config.epochs >= 1 && config.batch >= 1, "sequence: epochs and batch must be positive");
  for (const auto& ex : examples) {
    if (ex.history.size() < 2) throw ValidationError("training example for '" + ex.user_id + "' has fewer than 2 history items");
    for (const auto* list : {&ex.history, &ex.future})
      for (const auto& item : *list)
        if (!table.count(item))
          throw RuntimeError("item '" + item + "' has no hybrid embedding; train the hybrid stage first");
  }
  const std::size_t d = table.begin()->second.size();
  SeqModel model(d, config.hidden, config.n, config.k);
  Rng rng(config.seed);
  model.init(rng);
  auto params = model.params();

  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<SequenceExample> probe;
  {
    Rng prng(sub_seed(config.seed, "probe"));
    auto idx = order;
    std::shuffle(idx.begin(), idx.end(), prng);
    for (std::size_t i = 0; i < std::min<std::size_t>(idx.size(), 1000); ++i) probe.push_back(examples[idx[i]]);
  }
  model.loss_trace.push_back(model.loss(probe, table, false));

  const std::size_t per_epoch =
      config.max_examples > 0 ? std::min(config.max_examples, examples.size()) : examples.size();
  std::vector<SequenceExample> batch;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < per_epoch; start += config.batch) {
      const std::size_t end = std::min(per_epoch, start + config.batch);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(examples[order[i]]);
      model.loss(batch, table, true);
      sgd_step(params, config.learning_rate, config.l2);
    }
    model.loss_trace.push_back(model.loss(probe, table, false));
  }
  return model;
}

std::vector<std::vector<double>> predict_next(const SeqModel& model, std::span<const std::string> history,
                                              const Embeddings& table) {
  const Tensor y = model.forward(model.history_inputs(history, table));
  std::vector<std::vector<double>> out;
  for (std::size_t j = 0; j < model.k(); ++j) {
    const auto r = y.row(j);
    out.emplace_back(r.begin(), r.end());
  }
  return out;
}

double seq_accuracy(const std::vector<std::vector<double>>& predicted, std::span<const std::string> actual,
                    const Embeddings& table) {
  require(!actual.empty(), "accuracy needs at least one actual item");
  const std::size_t steps = std::min(predicted.size(), actual.size());
  require(steps >= 1, "accuracy needs at least one prediction");
  double total = 0.0;
  for (std::size_t j = 0; j < steps; ++j) {
    auto it = table.find(actual[j]);
    if (it == table.end()) throw ValidationError("item '" + actual[j] + "' has no hybrid embedding");
    total += cosine(predicted[j], it->second);
  }
  return total / static_cast<double>(steps);
}

std::vector<ScoredItem> seq_recommend(const SeqModel& model, std::span<const std::string> history,
                                      const Embeddings& catalog, std::size_t top_n) {
  return seq_recommend(model, history, catalog, catalog, top_n);
}

std::vector<ScoredItem> seq_recommend(const SeqModel& model, std::span<const std::string> history,
                                      const Embeddings& table, const Embeddings& catalog, std::size_t top_n) {
  if (catalog.empty()) throw ValidationError("empty catalog");
  const auto preds = predict_next(model, history, table);
  const std::set<std::string> seen(history.begin(), history.end());
  std::vector<ScoredItem> scored;
  for (const auto& [id, vec] : catalog) {
    if (seen.count(id)) continue;
    double best = -2.0;
    for (const auto& p : preds) best = std::max(best, cosine(p, vec));
    scored.push_back({id, best});
  }
  const std::size_t n = std::min(top_n, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n), scored.end(),
                    [](const ScoredItem& a, const ScoredItem& b) {
                      return a.score != b.score ? a.score > b.score : a.item_id < b.item_id;
                    });
  scored.resize(n);
  return scored;
}

}  // namespace mrsys
