#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mrsys/checkpoint.hpp"
#include "mrsys/embeddings.hpp"
#include "mrsys/layers.hpp"

namespace mrsys {

enum class LandingPage { MainFront, CategoryFront };
const char* to_string(LandingPage p);
LandingPage parse_landing_page(std::string_view text);

struct FeedContext {
  std::string device = "mobile";
  int hour = 0;
  std::string weekday = "mon";
  LandingPage landing = LandingPage::MainFront;
  std::string location;
  std::optional<std::vector<double>> user_embedding;
};

struct SubmodelProposal {
  std::string submodel;
  std::string item_id;
  double score = 0.0;

  friend bool operator==(const SubmodelProposal&, const SubmodelProposal&) = default;
};

struct ImpressionRecord {
  std::int64_t timestamp = 0;
  std::string user_id;
  std::string item_id;
  std::string submodel;
  double score = 0.0;
  std::size_t position = 0;
  FeedContext context;
  bool clicked = false;
};

/// Impression TSV with a header row:
/// `timestamp\tuser_id\titem_id\tsubmodel\tscore\tposition\tdevice\thour\tweekday\tlanding\tclicked`.
void save_impressions(std::span<const ImpressionRecord> records, const std::filesystem::path& path);
std::vector<ImpressionRecord> load_impressions(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Proposals and feeds

using ProposalFn =
    std::function<std::vector<ScoredItem>(const std::string& user, const FeedContext& context, std::size_t n)>;

struct SubmodelHandle {
  std::string id;
  ProposalFn propose;
};

/// Union of each submodel's top `per_model_n`, scores clamped to [0,1]; an
/// item proposed twice keeps its highest-scoring proposal. Ordered by
/// descending score, ties by item id.
std::vector<SubmodelProposal> collect_proposals(const std::string& user, const FeedContext& context,
                                                std::span<const SubmodelHandle> submodels,
                                                std::size_t per_model_n);

/// One row per submodel in `row_order`, each holding that submodel's best
/// `row_width` items by its own score. Items already placed in an earlier row
/// are skipped.
std::vector<SubmodelProposal> rank_row_separated(std::span<const SubmodelProposal> proposals,
                                                 std::span<const std::string> row_order,
                                                 std::size_t row_width);

using ValueFn = std::function<double(const SubmodelProposal&, const FeedContext&, std::size_t position)>;

struct FeedSlot {
  SubmodelProposal proposal;
  double value = 0.0;
  bool explored = false;
};

/// Greedy order by value (evaluated at position 0, ties by item id); each slot
/// is independently replaced with probability epsilon by a uniformly random
/// proposal not yet in the feed.
std::vector<FeedSlot> rerank(std::span<const SubmodelProposal> proposals, const FeedContext& context,
                             const ValueFn& value, double epsilon, std::size_t slots, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Regression bandit

inline constexpr std::size_t kScoreBuckets = 10;
inline constexpr std::size_t kPositionCap = 50;

std::size_t bin_score(double score, std::size_t buckets = kScoreBuckets);

/// Category vocabulary with a reserved trailing "other" slot.
struct Vocabulary {
  std::vector<std::string> levels;  // sorted
  std::size_t size() const { return levels.size() + 1; }
  std::size_t index(const std::string& level) const;
  static Vocabulary from(std::vector<std::string> levels);
};

struct FeatureVocabularies {
  Vocabulary submodels;
  Vocabulary devices;
  Vocabulary weekdays;

  static FeatureVocabularies from(std::span<const ImpressionRecord> records);
};

struct RegressionBandit {
  FeatureVocabularies vocab;
  double theta = 0.8;
  double lambda = 1.0;
  std::vector<double> weights;  // one per encoded feature
  double intercept = 0.0;

  double raw_value(const ImpressionRecord& record) const;
};

std::vector<double> encode_regression_features(const ImpressionRecord& record, const FeatureVocabularies& vocab,
                                               double theta);

RegressionBandit fit_regression_bandit(std::span<const ImpressionRecord> impressions, double lambda,
                                       double theta = 0.8);

/// Clamped to [0,1].
double value_regression(const RegressionBandit& bandit, const SubmodelProposal& proposal,
                        const FeedContext& context, std::size_t position);

void save_regression_bandit(const RegressionBandit& bandit, const std::filesystem::path& path);
RegressionBandit load_regression_bandit(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Deep bandit

struct DeepBanditConfig {
  std::size_t hidden1 = 64;
  std::size_t hidden2 = 32;
  int epochs = 5;
  double learning_rate = 0.05;
  double l2 = 1e-4;
  std::size_t batch = 64;
  std::size_t user_dim = 0;  // 0 = no user embedding input
  std::uint64_t seed = 0;
};

class DeepBandit {
 public:
  DeepBandit() = default;
  DeepBandit(FeatureVocabularies vocab, std::size_t user_dim, std::size_t hidden1, std::size_t hidden2);
  void init(Rng& rng);

  std::size_t input_dim() const;
  /// Raw (unnormalized scalars first) feature rows for a batch.
  Tensor features(std::span<const ImpressionRecord> records) const;

  /// Weighted BCE over the batch; train-mode batch norm. Fills gradients when `grads`.
  double loss(std::span<const ImpressionRecord> records, bool grads);
  /// Probabilities under the class-weighted objective (inference-mode batch norm).
  Tensor raw_probabilities(std::span<const ImpressionRecord> records) const;
  /// Undoes the positive-class weighting so outputs estimate click rates.
  double calibrate(double weighted_probability) const;
  double predict(const ImpressionRecord& record) const;
  ParamList params();

  double positive_weight = 1.0;
  double negative_weight = 1.0;
  std::vector<double> loss_trace;

  const FeatureVocabularies& vocab() const { return vocab_; }
  std::size_t user_dim() const { return user_dim_; }

  Checkpoint to_checkpoint();
  static DeepBandit from_checkpoint(const Checkpoint& ckpt, FeatureVocabularies vocab);

 private:
  friend DeepBandit fit_deep_bandit(std::span<const ImpressionRecord>, const struct DeepBanditConfig&);

  FeatureVocabularies vocab_;
  std::size_t user_dim_ = 0;
  BatchNorm norm_;
  Dense l1_, l2_, out_;
};

DeepBandit fit_deep_bandit(std::span<const ImpressionRecord> impressions, const DeepBanditConfig& config);

double value_deep(const DeepBandit& bandit, const SubmodelProposal& proposal, const FeedContext& context,
                  std::size_t position);

/// Vocabulary sidecar: `kind\tlevel` rows.
void save_vocabularies(const FeatureVocabularies& vocab, const std::filesystem::path& path);
FeatureVocabularies load_vocabularies(const std::filesystem::path& path);

/// Mean binary log-loss of predicted probabilities, clamped to [1e-7, 1-1e-7].
double log_loss(std::span<const double> predicted, std::span<const ImpressionRecord> records);

}  // namespace mrsys
