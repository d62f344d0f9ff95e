#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "mrsys/bandit.hpp"
#include "mrsys/content.hpp"
#include "mrsys/data.hpp"
#include "mrsys/experiment.hpp"

namespace mrsys {

struct MarketConfig {
  std::size_t n_users = 500;
  std::size_t n_items = 1000;
  std::size_t n_categories = 8;
  std::size_t n_postcodes = 20;
  std::size_t latent_dim = 8;
  double cold_item_fraction = 0.3;
  double mean_lifespan_days = 14.0;
  double viral_item_fraction = 0.02;
  double interest_drift_rate = 0.0;  // std-dev of the daily taste step
  double temperature = 0.35;
  double conversion_probability = 0.1;
  std::uint64_t seed = 0;

  // Horizon: organic history, then the simulated period cold items enter in.
  int history_days = 28;
  int sim_days = 7;

  // Behaviour knobs.
  double activity_rate = 0.5;        // chance a user opens the feed on a day
  std::size_t feed_slots = 10;       // slots per feed request
  double affinity_offset = 1.0;      // subtracted from the latent dot product
  double locality_bonus = 0.3;       // added when item postcode is next to the user's
  double front_page_share = 0.5;     // sessions landing on the main front page
  double freshness_bonus = 0.8;      // front page: new listings appeal, decaying over ~2 days
  double focus_weight = 1.3;         // category page: taste weight (front page uses 1)
  double viral_base = 2.0;           // flattened affinity of viral items
  double viral_personal = 0.1;       // weight of taste in viral affinity
  double viral_fade_days = 3.0;      // viral appeal decays as exp(-age / fade)
  double repeat_factor = 0.7;        // click multiplier for an item clicked before
  double viral_repeat_factor = 0.02; // same, for viral items
  std::size_t subcategories = 3;
  double centroid_norm = 1.2;
  double subcategory_norm = 0.6;
  double item_noise = 0.25;
  double quality_sd = 0.0;           // per-item appeal visible only through behaviour
  std::size_t image_dim = 64;
  double image_noise = 0.3;

  int horizon_days() const { return history_days + sim_days; }
  void validate() const;
};

struct MarketItem {
  ItemContent content;
  std::size_t category = 0;
  std::size_t subcategory = 0;
  std::size_t postcode = 0;
  std::vector<double> latent;
  double quality = 0.0;
  int start_day = 0;  // active on days [start_day, end_day)
  int end_day = 0;
  bool viral = false;
  bool cold = false;
};

struct MarketUser {
  std::string user_id;
  std::size_t postcode = 0;
  std::vector<std::vector<double>> taste;  // unit vector per day of the horizon
};

struct SyntheticMarket {
  MarketConfig config;
  std::vector<std::vector<double>> centroids;
  std::vector<std::vector<std::string>> category_vocabulary;
  std::vector<MarketItem> items;
  std::vector<MarketUser> users;

  std::optional<std::size_t> item_index(const std::string& id) const;
  std::optional<std::size_t> user_index(const std::string& id) const;
  bool active(std::size_t item, int day) const;
  std::vector<std::size_t> active_items(int day) const;

  double affinity(std::size_t user, std::size_t item, int day,
                  LandingPage landing = LandingPage::MainFront) const;
  double click_probability(std::size_t user, std::size_t item, int day, std::size_t position,
                           bool clicked_before, LandingPage landing = LandingPage::MainFront) const;
  std::vector<ItemContent> contents() const;
  std::unordered_map<std::string, std::string> item_postcodes() const;
  std::map<std::string, std::string> item_categories() const;

  std::unordered_map<std::string, std::size_t> item_lookup;
  std::unordered_map<std::string, std::size_t> user_lookup;
};

SyntheticMarket generate_market(const MarketConfig& config);

double position_bias(std::size_t position);

// ---------------------------------------------------------------------------
// Policies

struct FeedRequest {
  std::string user_id;
  int day = 0;
  std::int64_t timestamp = 0;
  FeedContext context;
  std::span<const std::string> recent_clicks;  // oldest first
  const std::unordered_set<std::string>* clicked = nullptr;
  std::span<const std::string> active_items;    // sorted ids
  const std::unordered_set<std::string>* active = nullptr;
  std::size_t slots = 10;
  std::uint64_t seed = 0;
};

struct FeedEntry {
  std::string item_id;
  std::string submodel;
  double score = 0.0;
};

class FeedPolicy {
 public:
  virtual ~FeedPolicy() = default;
  virtual std::string name() const = 0;
  virtual std::vector<FeedEntry> serve(const FeedRequest& request) = 0;
};

class RandomPolicy : public FeedPolicy {
 public:
  std::string name() const override { return "random"; }
  std::vector<FeedEntry> serve(const FeedRequest& request) override;
};

/// Ranks active items by the user's true click probability at the top slot.
class OraclePolicy : public FeedPolicy {
 public:
  explicit OraclePolicy(const SyntheticMarket& market) : market_(market) {}
  std::string name() const override { return "oracle"; }
  std::vector<FeedEntry> serve(const FeedRequest& request) override;

 private:
  const SyntheticMarket& market_;
};

/// Users browsing on their own: pick a category by current taste, see a
/// random sample of its active items. Produces the organic history log.
class OrganicPolicy : public FeedPolicy {
 public:
  explicit OrganicPolicy(const SyntheticMarket& market, double sharpness = 3.0);
  std::string name() const override { return "organic"; }
  std::vector<FeedEntry> serve(const FeedRequest& request) override;

 private:
  const SyntheticMarket& market_;
  double sharpness_;
};

// ---------------------------------------------------------------------------
// Simulation

struct SimulationResult {
  EventLog events;
  std::vector<ImpressionRecord> impressions;
};

/// Simulates days [first_day, first_day + days). `prior` seeds each user's
/// click history (recency and repeat-click state).
SimulationResult simulate_sessions(const SyntheticMarket& market, FeedPolicy& policy, int first_day, int days,
                                   std::uint64_t seed, const EventLog* prior = nullptr);

/// Organic log over the whole horizon.
EventLog organic_log(const SyntheticMarket& market, std::uint64_t seed);

struct AbSimulation {
  ExperimentReport report;
  std::vector<ImpressionRecord> impressions_a;
  std::vector<ImpressionRecord> impressions_b;
  EventLog events;
  std::vector<std::size_t> stage_users_b;  // market users assigned to arm B, per ramp stage
};

/// Stable per-run user bucket in [0,1).
double user_bucket(const std::string& user_id, std::uint64_t salt);

AbSimulation run_ab_simulation(const SyntheticMarket& market, FeedPolicy& policy_a, FeedPolicy& policy_b,
                               int first_day, int days, const RampPlan& ramp, std::uint64_t seed,
                               const EventLog* prior = nullptr);

}  // namespace mrsys
