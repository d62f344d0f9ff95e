#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mrsys/checkpoint.hpp"
#include "mrsys/data.hpp"
#include "mrsys/embeddings.hpp"
#include "mrsys/layers.hpp"
#include "mrsys/random.hpp"

namespace mrsys {

enum class Source : std::size_t { Behavioral = 0, Text = 1, Image = 2, Location = 3 };
inline constexpr std::size_t kSourceCount = 4;
using SourceDims = std::array<std::size_t, kSourceCount>;

const char* to_string(Source s);

/// Per-item source vectors. Each present block is L2-normalized when it is fed
/// to the encoder so that no source dominates by scale.
class ItemRepresentationSet {
 public:
  explicit ItemRepresentationSet(SourceDims dims = {32, 32, 32, 8});

  void set(const std::string& item, Source source, std::vector<double> vector);
  void add(Source source, const Embeddings& table);
  /// Postcode vectors attached to every item with a known postcode.
  void add_location(const Embeddings& postcode_vectors,
                    const std::map<std::string, std::string>& item_postcode);

  bool contains(const std::string& item) const;
  bool has(const std::string& item, Source source) const;
  const std::optional<std::vector<double>>& get(const std::string& item, Source source) const;
  std::vector<std::string> item_ids() const;
  std::size_t size() const { return items_.size(); }
  const SourceDims& dims() const { return dims_; }
  std::size_t total_dim() const;

  /// Fills one input row and its presence mask. Sources flagged in `dropped`
  /// are treated as absent. Throws ValidationError when nothing is present.
  void encode(const std::string& item, std::span<double> row, std::span<double> mask,
              std::array<bool, kSourceCount> dropped = {}) const;

 private:
  SourceDims dims_;
  std::map<std::string, std::array<std::optional<std::vector<double>>, kSourceCount>> items_;
};

enum class PairLabel { CoConverted, Negative };

struct TrainingPair {
  std::string item_a;
  std::string item_b;
  PairLabel label = PairLabel::CoConverted;

  friend bool operator==(const TrainingPair&, const TrainingPair&) = default;
};

/// Unordered pairs (a < b) of distinct items converted by the same user on the
/// same calendar day, deduplicated and sorted.
std::vector<TrainingPair> mine_co_converted_pairs(const EventLog& log);

/// Uniform random cross-category pairs not among `positives`.
std::vector<TrainingPair> sample_negative_pairs(const std::map<std::string, std::string>& item_category,
                                                std::span<const TrainingPair> positives,
                                                std::size_t count, std::uint64_t seed);

struct HybridConfig {
  std::size_t hidden = 256;
  std::size_t output = 100;
  int epochs = 10;
  double learning_rate = 0.05;
  double l2 = 0.0;
  double margin = 0.2;
  std::size_t batch = 32;
  std::size_t negative_ratio = 4;
  double source_dropout = 0.25;  // chance of hiding the behavioral block in training
  std::size_t max_pairs = 0;     // 0 = use every pair
  std::uint64_t seed = 0;
};

/// Attention gate over the source blocks followed by a two-layer tower.
class HybridEncoder {
 public:
  struct Cache {
    AttentionGate::Cache gate;
    Dense::Cache hidden;
    Dense::Cache out;
  };

  HybridEncoder() = default;
  HybridEncoder(SourceDims dims, std::size_t hidden, std::size_t output);
  void init(Rng& rng);

  Tensor forward(const Tensor& x, const Tensor& mask, Cache* cache = nullptr) const;
  void backward(const Cache& cache, const Tensor& dy);
  ParamList params();

  std::vector<double> embed(const std::string& item, const ItemRepresentationSet& reps) const;
  /// Attention weights the gate assigns to each source for `item`.
  std::vector<double> attention(const std::string& item, const ItemRepresentationSet& reps) const;

  /// Mean contrastive loss over `pairs`; with `grads`, fills parameter gradients.
  double pair_loss(std::span<const TrainingPair> pairs, const ItemRepresentationSet& reps,
                   double margin, bool grads,
                   std::span<const std::array<bool, kSourceCount>> dropped = {});

  const SourceDims& dims() const { return dims_; }
  std::size_t output_dim() const { return out_.out_dim(); }
  std::vector<double> loss_trace;

  Checkpoint to_checkpoint();
  static HybridEncoder from_checkpoint(const Checkpoint& ckpt);

 private:
  SourceDims dims_{};
  AttentionGate gate_;
  Dense hidden_;
  Dense out_;
};

HybridEncoder train_hybrid(std::span<const TrainingPair> pairs, const ItemRepresentationSet& reps,
                           const HybridConfig& config);

std::vector<double> hybrid_embed(const std::string& item, const HybridEncoder& encoder,
                                 const ItemRepresentationSet& reps);

/// Embeddings of every embeddable item.
Embeddings hybrid_embed_all(const HybridEncoder& encoder, const ItemRepresentationSet& reps);

/// Cosine nearest neighbours of `query` in `table`, excluding the query.
std::vector<ScoredItem> similar_items(const std::string& query, const Embeddings& table,
                                      std::size_t top_n);
std::vector<ScoredItem> similar_items(const std::string& query, const HybridEncoder& encoder,
                                      const ItemRepresentationSet& reps, std::size_t top_n);

}  // namespace mrsys
