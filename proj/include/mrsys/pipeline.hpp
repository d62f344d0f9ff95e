#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "mrsys/bandit.hpp"
#include "mrsys/content.hpp"
#include "mrsys/experiment.hpp"
#include "mrsys/factorization.hpp"
#include "mrsys/hybrid.hpp"
#include "mrsys/policies.hpp"
#include "mrsys/sequence.hpp"
#include "mrsys/simulator.hpp"

namespace mrsys {

/// Every tunable of the pipeline. Text form is flat `key = value` lines with
/// dotted section prefixes (`als.dim = 16`); `#` starts a comment. Keys left
/// out keep the defaults below.
struct PipelineConfig {
  PipelineConfig();

  std::uint64_t seed = 1;
  MarketConfig market;
  double w_click = 1.0;
  double w_conv = 5.0;
  AlsConfig als;
  AlsConfig location;
  Word2VecConfig word2vec;
  TextEncoderConfig text;
  ImageTowerConfig image;
  HybridConfig hybrid;
  SeqConfig seq;

  BanditFeedConfig feed;
  double bandit_lambda = 1.0;
  double bandit_theta = 0.8;
  int popularity_days = 7;
  DeepBanditConfig deep;
  bool deep_user_vectors = true;

  std::size_t hr_n = 10;

  std::string policy_a = "row";
  std::string policy_b = "regression";
  std::vector<double> ramp;      // traffic fractions to B; empty = one 50% stage
  std::vector<double> ramp_days; // minimum stage durations in days

  /// Throws ValidationError on an unknown key or a malformed value.
  void set(std::string_view key, std::string_view value);
  /// Checks every module precondition; throws ValidationError.
  void validate() const;
  /// All keys in canonical order, one `key = value` per line.
  std::string dump() const;
  static std::vector<std::string> keys();

  /// Named sub-seed of the root seed, one per stage.
  std::uint64_t stage_seed(std::string_view stage) const;
  MarketConfig market_config() const;
  std::int64_t split_time() const;
  RampPlan ramp_plan() const;
};

PipelineConfig parse_pipeline_config(std::string_view text);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

/// Artifact file names inside a workspace directory.
namespace files {
inline constexpr const char* kItems = "items.tsv";
inline constexpr const char* kImages = "images.tsv";
inline constexpr const char* kEvents = "events.tsv";
inline constexpr const char* kAlsItems = "als_items.tsv";
inline constexpr const char* kAlsUsers = "als_users.tsv";
inline constexpr const char* kLocation = "location.tsv";
inline constexpr const char* kWords = "words.tsv";
inline constexpr const char* kTextModel = "text.mrsys";
inline constexpr const char* kTextCategories = "text_categories.txt";
inline constexpr const char* kTextRepr = "text_repr.tsv";
inline constexpr const char* kImageModel = "image.mrsys";
inline constexpr const char* kImageRepr = "image_repr.tsv";
inline constexpr const char* kHybridModel = "hybrid.mrsys";
inline constexpr const char* kHybrid = "hybrid.tsv";
inline constexpr const char* kSeqModel = "seq.mrsys";
inline constexpr const char* kBanditLog = "bandit_log.tsv";
inline constexpr const char* kRowOrder = "row_order.txt";
inline constexpr const char* kRegression = "regression.tsv";
inline constexpr const char* kDeepModel = "deep.mrsys";
inline constexpr const char* kDeepVocab = "deep_vocab.tsv";
inline constexpr const char* kHitRates = "hr.tsv";
inline constexpr const char* kAbReport = "ab_report.tsv";
inline constexpr const char* kAbImpressionsA = "ab_impressions_a.tsv";
inline constexpr const char* kAbImpressionsB = "ab_impressions_b.tsv";
inline constexpr const char* kReport = "report.txt";
}  // namespace files

/// Rebuilds a factor model from saved user and item factor tables.
FactorModel factor_model_from_tables(const Embeddings& users, const Embeddings& items);

// ---------------------------------------------------------------------------
// Similar-item evaluation

/// Each user's first test-period click is the query item (as if viewing it);
/// the other items the user touched later in the test period are the truth.
struct SimilarItemTask {
  std::map<std::string, std::string> queries;
  std::map<std::string, std::set<std::string>> truth;
  std::set<std::string> candidates;
};

SimilarItemTask make_similar_item_task(const EventLog& test, std::set<std::string> candidates);
/// Users whose query passes `keep`, with truth and candidates filtered by it.
SimilarItemTask restrict_task(const SimilarItemTask& task, const std::function<bool(const std::string&)>& keep);
/// HR@n of cosine neighbours in `table` among the candidates; users whose
/// query has no vector score zero.
double similar_item_hit_rate(const Embeddings& table, const SimilarItemTask& task, std::size_t n);

/// Content-only vectors: unit text block followed by unit image block.
Embeddings content_embeddings(const Embeddings& text, const Embeddings& image);

struct HitRateSummary {
  double hybrid_all = 0.0;
  double behavioral_all = 0.0;
  double content_all = 0.0;
  double hybrid_warm = 0.0;
  double behavioral_warm = 0.0;
  double content_warm = 0.0;
  std::size_t users_all = 0;
  std::size_t users_warm = 0;
};

// ---------------------------------------------------------------------------
// Stages. Each reads its inputs from and writes its outputs to `dir`.

void run_generate(const PipelineConfig& cfg, const std::filesystem::path& dir);
void run_train_als(const PipelineConfig& cfg, const std::filesystem::path& dir);
void run_train_location(const PipelineConfig& cfg, const std::filesystem::path& dir);
void run_train_text(const PipelineConfig& cfg, const std::filesystem::path& dir);
void run_train_image(const PipelineConfig& cfg, const std::filesystem::path& dir);
void run_train_hybrid(const PipelineConfig& cfg, const std::filesystem::path& dir);
void run_train_seq(const PipelineConfig& cfg, const std::filesystem::path& dir);
/// `impressions`: logged feed data to fit on; when absent an exploration feed
/// is simulated over the test period and saved as the bandit log.
void run_fit_bandit(const PipelineConfig& cfg, const std::filesystem::path& dir, FeedMode mode,
                    const std::optional<std::filesystem::path>& impressions = std::nullopt);
HitRateSummary run_evaluate_hr(const PipelineConfig& cfg, const std::filesystem::path& dir);
AbSimulation run_ab_sim(const PipelineConfig& cfg, const std::filesystem::path& dir);
/// Human-readable summary of whatever evaluation artifacts exist.
std::string run_report(const std::filesystem::path& dir);

/// Recommendation lists file: `user_id\titem,item,...` per line.
std::map<std::string, std::vector<std::string>> load_recommendations(const std::filesystem::path& path);

inline const std::vector<std::string>& policy_names() {
  static const std::vector<std::string> names = {"random", "oracle",     "popular", "mf",  "sequence",
                                                 "explore", "row", "regression", "deep"};
  return names;
}

}  // namespace mrsys
