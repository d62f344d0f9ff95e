#pragma once

#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "mrsys/bandit.hpp"
#include "mrsys/factorization.hpp"
#include "mrsys/sequence.hpp"
#include "mrsys/simulator.hpp"

namespace mrsys {

/// Click counts over a look-back window, normalized by the top count.
class Popularity {
 public:
  Popularity() = default;
  Popularity(const EventLog& log, std::int64_t now, int days);

  double score(const std::string& item) const;
  /// Active items by descending popularity, ties by id.
  std::vector<ScoredItem> top(const FeedRequest& request, std::size_t n,
                              const std::function<bool(const std::string&)>& keep = {}) const;

 private:
  std::unordered_map<std::string, double> counts_;
  double max_ = 0.0;
};

/// Appends popular active items not yet in `feed` until it holds `slots` entries.
void fill_with_popular(std::vector<FeedEntry>& feed, const FeedRequest& request, const Popularity& popularity,
                       const std::string& label);

class PopularPolicy : public FeedPolicy {
 public:
  explicit PopularPolicy(const Popularity& popularity) : popularity_(popularity) {}
  std::string name() const override { return "popular"; }
  std::vector<FeedEntry> serve(const FeedRequest& request) override;

 private:
  const Popularity& popularity_;
};

/// Top items by user x item factor score, previously clicked items excluded.
class MfPolicy : public FeedPolicy {
 public:
  MfPolicy(const FactorModel& model, const Popularity& fallback) : model_(model), fallback_(fallback) {}
  std::string name() const override { return "mf"; }
  std::vector<FeedEntry> serve(const FeedRequest& request) override;

 private:
  const FactorModel& model_;
  const Popularity& fallback_;
};

/// GRU next-item predictions matched against the active catalog.
class SeqPolicy : public FeedPolicy {
 public:
  SeqPolicy(const SeqModel& model, const Embeddings& table, const Popularity& fallback)
      : model_(model), table_(table), fallback_(fallback) {}
  std::string name() const override { return "sequence"; }
  std::vector<FeedEntry> serve(const FeedRequest& request) override;

 private:
  const SeqModel& model_;
  const Embeddings& table_;
  const Popularity& fallback_;
  int catalog_day_ = -1;
  Embeddings catalog_;
};

// ---------------------------------------------------------------------------
// Bandit feeds

/// Everything the standard submodels draw on. Pointers are borrowed.
struct SubmodelSources {
  const FactorModel* factors = nullptr;            // "mf"
  const Popularity* popularity = nullptr;          // "popular", "category"
  const Embeddings* item_vectors = nullptr;        // "similar"
  std::map<std::string, std::string> item_category;
  std::unordered_map<std::string, int> listed_day; // "fresh"
};

inline const std::vector<std::string>& standard_submodels() {
  static const std::vector<std::string> ids = {"mf", "similar", "category", "popular", "fresh", "random"};
  return ids;
}

enum class FeedMode { Explore, RowSeparated, Regression, Deep };
const char* to_string(FeedMode mode);
FeedMode parse_feed_mode(std::string_view text);

struct BanditFeedConfig {
  std::size_t per_model_n = 10;
  double epsilon = 0.05;
  std::vector<std::string> row_order = standard_submodels();
};

class BanditPolicy : public FeedPolicy {
 public:
  BanditPolicy(const SubmodelSources& sources, FeedMode mode, BanditFeedConfig config);

  void set_regression(const RegressionBandit* bandit) { regression_ = bandit; }
  void set_deep(const DeepBandit* bandit) { deep_ = bandit; }
  /// User vectors attached (L2-normalized) to every context; deep bandit input.
  void set_user_vectors(const Embeddings* users) { users_ = users; }

  std::string name() const override;
  std::vector<FeedEntry> serve(const FeedRequest& request) override;

 private:
  std::vector<SubmodelHandle> handles();

  SubmodelSources sources_;
  FeedMode mode_;
  BanditFeedConfig config_;
  const RegressionBandit* regression_ = nullptr;
  const DeepBandit* deep_ = nullptr;
  const Embeddings* users_ = nullptr;
  const FeedRequest* current_ = nullptr;
  std::vector<SubmodelHandle> handles_;
};

/// Attaches L2-normalized user vectors (zeros of `dim` when missing) to each
/// record's context.
void attach_user_vectors(std::vector<ImpressionRecord>& records, const Embeddings& users, std::size_t dim);

}  // namespace mrsys
