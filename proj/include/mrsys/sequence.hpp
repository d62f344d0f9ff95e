#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mrsys/checkpoint.hpp"
#include "mrsys/data.hpp"
#include "mrsys/embeddings.hpp"
#include "mrsys/layers.hpp"

namespace mrsys {

struct SequenceExample {
  std::string user_id;
  std::vector<std::string> history;  // oldest first, at most n items
  std::vector<std::string> future;   // at most k items

  friend bool operator==(const SequenceExample&, const SequenceExample&) = default;
};

/// Every sliding position over each user's clicks with at least two history
/// items and a non-empty future. Users are visited in ascending id order.
std::vector<SequenceExample> build_sequences(const EventLog& log, std::size_t n, std::size_t k);

/// Each user's last n clicks, oldest first.
std::map<std::string, std::vector<std::string>> latest_histories(const EventLog& log, std::size_t n);

/// Debug dump: `user_id\thistory\tfuture` with comma-joined item lists.
void save_sequences(std::span<const SequenceExample> examples, const std::filesystem::path& path);

struct SeqConfig {
  std::size_t n = 15;
  std::size_t k = 5;
  std::size_t hidden = 64;
  int epochs = 10;
  double learning_rate = 0.1;
  double l2 = 0.0;
  std::size_t batch = 16;
  std::size_t max_examples = 0;  // per-epoch sample cap, 0 = all
  std::uint64_t seed = 0;
};

/// One GRU layer over the history embeddings; the final state is projected to
/// k stacked embedding-sized predictions.
class SeqModel {
 public:
  SeqModel() = default;
  SeqModel(std::size_t embedding_dim, std::size_t hidden, std::size_t n, std::size_t k);
  void init(Rng& rng);

  /// Inputs [T x D] (T <= n after truncation) to predictions [k x D].
  Tensor forward(const Tensor& inputs) const;
  Tensor history_inputs(std::span<const std::string> history, const Embeddings& table) const;

  /// Mean over examples of the mean over aligned steps of (1 - cos).
  double loss(std::span<const SequenceExample> examples, const Embeddings& table, bool grads);
  ParamList params();

  std::size_t n() const { return n_; }
  std::size_t k() const { return k_; }
  std::size_t embedding_dim() const { return gru_.input_dim(); }
  std::size_t hidden_dim() const { return gru_.hidden_dim(); }
  std::vector<double> loss_trace;

  Checkpoint to_checkpoint();
  static SeqModel from_checkpoint(const Checkpoint& ckpt);

 private:
  std::size_t n_ = 0;
  std::size_t k_ = 0;
  Gru gru_;
  Dense head_;
};

SeqModel train_sequence_model(std::span<const SequenceExample> examples, const Embeddings& table,
                              const SeqConfig& config);

std::vector<std::vector<double>> predict_next(const SeqModel& model, std::span<const std::string> history,
                                              const Embeddings& table);

double seq_accuracy(const std::vector<std::vector<double>>& predicted, std::span<const std::string> actual,
                    const Embeddings& table);

/// Items scored by the best cosine to any of the k predictions; history items
/// are excluded.
std::vector<ScoredItem> seq_recommend(const SeqModel& model, std::span<const std::string> history,
                                      const Embeddings& catalog, std::size_t top_n);
/// Same, with history embedded from `table` and candidates drawn from `catalog`
/// (e.g. only the items listed today).
std::vector<ScoredItem> seq_recommend(const SeqModel& model, std::span<const std::string> history,
                                      const Embeddings& table, const Embeddings& catalog, std::size_t top_n);

}  // namespace mrsys
