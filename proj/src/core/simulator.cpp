#include "mrsys/simulator.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "mrsys/error.hpp"
#include "mrsys/layers.hpp"
#include "mrsys/random.hpp"

namespace mrsys {

namespace {

constexpr std::array<const char*, 7> kWeekdays = {"mon", "tue", "wed", "thu", "fri", "sat", "sun"};
constexpr std::size_t kRecentCap = 64;
constexpr std::size_t kCodeBlock = 64;  // pseudo-word codes reserved per category

std::string format_id(char prefix, std::size_t index, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%0*zu", prefix, width, index);
  return buf;
}

int id_width(std::size_t n) {
  int w = 1;
  for (std::size_t m = n; m >= 10; m /= 10) ++w;
  return std::max(w, 4);
}

// Three-syllable pseudo-word; distinct codes give distinct words.
std::string pseudo_word(std::size_t code) {
  static const std::string consonants = "bdfgklmnprstvz";
  static const std::string vowels = "aeiou";
  const std::size_t syllables = consonants.size() * vowels.size();
  std::size_t x = (code * 7919 + 1013) % (syllables * syllables * syllables);
  std::string word;
  for (int i = 0; i < 3; ++i) {
    const std::size_t s = x % syllables;
    x /= syllables;
    word += consonants[s / vowels.size()];
    word += vowels[s % vowels.size()];
  }
  return word;
}

std::vector<double> random_direction(Rng& rng, std::size_t dim, double norm) {
  std::vector<double> v(dim);
  double n2 = 0.0;
  for (double& x : v) {
    x = gaussian(rng);
    n2 += x * x;
  }
  const double scale = n2 > 0.0 ? norm / std::sqrt(n2) : 0.0;
  for (double& x : v) x *= scale;
  return v;
}

double inner(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

FeedContext random_context(Rng& rng, int day, const std::string& location, double front_share) {
  FeedContext ctx;
  const double d = uniform01(rng);
  ctx.device = d < 0.6 ? "mobile" : d < 0.9 ? "desktop" : "tablet";
  ctx.hour = static_cast<int>(uniform_index(rng, 24));
  ctx.weekday = kWeekdays[static_cast<std::size_t>(day) % 7];
  ctx.landing = uniform01(rng) < front_share ? LandingPage::MainFront : LandingPage::CategoryFront;
  ctx.location = location;
  return ctx;
}

}  // namespace

void MarketConfig::validate() const {
  require(n_users >= 1 && n_items >= 1 && n_categories >= 1 && n_postcodes >= 1 && latent_dim >= 1,
          "market counts must be at least 1");
  require(subcategories >= 1 && subcategories + 3 <= kCodeBlock, "subcategories must be in [1, 61]");
  for (double f : {cold_item_fraction, viral_item_fraction, conversion_probability, activity_rate, front_page_share,
                   repeat_factor, viral_repeat_factor})
    require(f >= 0.0 && f <= 1.0, "market fractions and probabilities must lie in [0,1]");
  require(mean_lifespan_days > 0.0, "mean item lifespan must be positive");
  require(viral_fade_days > 0.0, "viral_fade_days must be positive");
  require(temperature > 0.0, "temperature must be positive");
  require(interest_drift_rate >= 0.0, "interest drift rate must be non-negative");
  require(history_days >= 1 && sim_days >= 1, "history_days and sim_days must be at least 1");
  require(feed_slots >= 1 && feed_slots <= kPositionCap, "feed_slots must be in [1, 50]");
  require(image_dim >= 1, "image_dim must be at least 1");
  require(item_noise >= 0.0 && image_noise >= 0.0 && quality_sd >= 0.0, "noise levels must be non-negative");
  const auto cold = static_cast<std::size_t>(std::llround(cold_item_fraction * static_cast<double>(n_items)));
  const auto viral = static_cast<std::size_t>(std::llround(viral_item_fraction * static_cast<double>(n_items)));
  require(cold + viral <= n_items, "cold and viral items together exceed n_items");
}

double position_bias(std::size_t position) { return 1.0 / std::log2(static_cast<double>(position) + 2.0); }

// ---------------------------------------------------------------------------
// Market

std::optional<std::size_t> SyntheticMarket::item_index(const std::string& id) const {
  const auto it = item_lookup.find(id);
  if (it == item_lookup.end()) return std::nullopt;
  return it->second;
}

std::optional<std::size_t> SyntheticMarket::user_index(const std::string& id) const {
  const auto it = user_lookup.find(id);
  if (it == user_lookup.end()) return std::nullopt;
  return it->second;
}

bool SyntheticMarket::active(std::size_t item, int day) const {
  return day >= items[item].start_day && day < items[item].end_day;
}

std::vector<std::size_t> SyntheticMarket::active_items(int day) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < items.size(); ++i)
    if (active(i, day)) out.push_back(i);
  return out;
}

double SyntheticMarket::affinity(std::size_t user, std::size_t item, int day, LandingPage landing) const {
  const auto& u = users[user];
  const auto& taste = u.taste[static_cast<std::size_t>(std::clamp(day, 0, config.horizon_days() - 1))];
  const auto& it = items[item];
  const double personal = inner(taste, it.latent);
  if (it.viral) {
    const double age = std::max(0, day - it.start_day);
    const double appeal = config.viral_base * std::exp(-age / config.viral_fade_days);
    return appeal + config.viral_personal * personal - config.affinity_offset;
  }
  const auto gap = it.postcode > u.postcode ? it.postcode - u.postcode : u.postcode - it.postcode;
  const double local = (gap <= 1 ? config.locality_bonus : 0.0) + it.quality;
  // Front-page visitors browse and favour new listings; category-page
  // visitors are focused on their taste.
  if (landing == LandingPage::CategoryFront) return config.focus_weight * personal + local - config.affinity_offset;
  const double fresh = config.freshness_bonus * std::exp(-std::max(0, day - it.start_day) / 2.0);
  return personal + local + fresh - config.affinity_offset;
}

double SyntheticMarket::click_probability(std::size_t user, std::size_t item, int day, std::size_t position,
                                          bool clicked_before, LandingPage landing) const {
  double p = position_bias(position) * sigmoid(affinity(user, item, day, landing) / config.temperature);
  if (clicked_before) p *= items[item].viral ? config.viral_repeat_factor : config.repeat_factor;
  return p;
}

std::vector<ItemContent> SyntheticMarket::contents() const {
  std::vector<ItemContent> out;
  out.reserve(items.size());
  for (const auto& it : items) out.push_back(it.content);
  return out;
}

std::unordered_map<std::string, std::string> SyntheticMarket::item_postcodes() const {
  std::unordered_map<std::string, std::string> out;
  for (const auto& it : items) out[it.content.item_id] = it.content.postcode;
  return out;
}

std::map<std::string, std::string> SyntheticMarket::item_categories() const {
  std::map<std::string, std::string> out;
  for (const auto& it : items) out[it.content.item_id] = it.content.category;
  return out;
}

SyntheticMarket generate_market(const MarketConfig& config) {
  config.validate();
  SyntheticMarket m;
  m.config = config;
  const std::size_t dim = config.latent_dim;
  const int horizon = config.horizon_days();

  // Categories: centroid, sub-offsets and a private vocabulary.
  Rng cat_rng(sub_seed(config.seed, "categories"));
  std::vector<std::vector<std::vector<double>>> sub_offsets(config.n_categories);
  for (std::size_t c = 0; c < config.n_categories; ++c) {
    m.centroids.push_back(random_direction(cat_rng, dim, config.centroid_norm));
    for (std::size_t s = 0; s < config.subcategories; ++s)
      sub_offsets[c].push_back(random_direction(cat_rng, dim, config.subcategory_norm));
    std::vector<std::string> vocab;
    for (std::size_t j = 0; j < config.subcategories + 3; ++j) vocab.push_back(pseudo_word(c * kCodeBlock + j));
    m.category_vocabulary.push_back(std::move(vocab));
  }
  std::vector<std::string> fillers;
  for (std::size_t j = 0; j < 12; ++j) fillers.push_back(pseudo_word(config.n_categories * kCodeBlock + j));

  // Fixed random map from latent space to backbone image features.
  Rng img_rng(sub_seed(config.seed, "image-map"));
  std::vector<double> image_map(config.image_dim * dim);
  for (double& w : image_map) w = gaussian(img_rng) / std::sqrt(static_cast<double>(dim));

  const auto n_cold = static_cast<std::size_t>(std::llround(config.cold_item_fraction * static_cast<double>(config.n_items)));
  const auto n_viral = static_cast<std::size_t>(std::llround(config.viral_item_fraction * static_cast<double>(config.n_items)));
  Rng flag_rng(sub_seed(config.seed, "flags"));
  std::vector<std::size_t> order(config.n_items);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), flag_rng);
  std::vector<char> cold(config.n_items, 0), viral(config.n_items, 0);
  for (std::size_t i = 0; i < n_cold; ++i) cold[order[i]] = 1;
  for (std::size_t i = 0; i < n_viral; ++i) viral[order[n_cold + i]] = 1;

  Rng item_rng(sub_seed(config.seed, "items"));
  const int item_w = id_width(config.n_items);
  const int post_w = id_width(config.n_postcodes);
  std::exponential_distribution<double> lifespan_dist(1.0 / config.mean_lifespan_days);
  for (std::size_t i = 0; i < config.n_items; ++i) {
    MarketItem it;
    it.category = uniform_index(item_rng, config.n_categories);
    it.subcategory = uniform_index(item_rng, config.subcategories);
    it.postcode = uniform_index(item_rng, config.n_postcodes);
    it.cold = cold[i] != 0;
    it.viral = viral[i] != 0;
    it.latent = m.centroids[it.category];
    for (std::size_t k = 0; k < dim; ++k)
      it.latent[k] += sub_offsets[it.category][it.subcategory][k] + config.item_noise * gaussian(item_rng);

    it.quality = config.quality_sd * gaussian(item_rng);
    const int lifespan = std::max(1, static_cast<int>(std::lround(lifespan_dist(item_rng))));
    int start = 0;
    int end = 0;
    if (it.cold) {
      start = config.history_days + static_cast<int>(uniform_index(item_rng, static_cast<std::size_t>(config.sim_days)));
    } else if (it.viral) {
      // Bursts late in the history and stays listed.
      const int window = std::min(7, config.history_days);
      start = config.history_days - window + static_cast<int>(uniform_index(item_rng, static_cast<std::size_t>(window)));
      end = horizon;
    } else {
      const int lo = -(lifespan - 1);
      start = lo + static_cast<int>(uniform_index(item_rng, static_cast<std::size_t>(config.history_days - lo)));
    }
    it.start_day = std::max(0, start);
    it.end_day = std::min(horizon, std::max(end > 0 ? end : start + lifespan, it.start_day + 1));

    const auto& vocab = m.category_vocabulary[it.category];
    const std::string& noun = vocab[0];
    const std::string& adj = vocab[1 + uniform_index(item_rng, 2)];
    const std::string& sub = vocab[3 + it.subcategory];
    it.content.item_id = format_id('i', i, item_w);
    it.content.category = format_id('c', it.category, 2);
    it.content.postcode = format_id('p', it.postcode, post_w);
    it.content.title = adj + " " + sub + " " + noun;
    it.content.description = sub + " " + noun + " " + fillers[uniform_index(item_rng, fillers.size())] + " " +
                             fillers[uniform_index(item_rng, fillers.size())] + " " +
                             vocab[1 + uniform_index(item_rng, 2)];
    std::vector<double> noisy = it.latent;
    for (double& x : noisy) x += config.image_noise * gaussian(item_rng);
    std::vector<double> feature(config.image_dim, 0.0);
    for (std::size_t r = 0; r < config.image_dim; ++r)
      for (std::size_t k = 0; k < dim; ++k) feature[r] += image_map[r * dim + k] * noisy[k];
    it.content.image_feature = std::move(feature);
    m.item_lookup[it.content.item_id] = i;
    m.items.push_back(std::move(it));
  }

  // Users: unit taste vectors with a daily random-walk drift on the sphere.
  Rng user_rng(sub_seed(config.seed, "users"));
  const int user_w = id_width(config.n_users);
  for (std::size_t u = 0; u < config.n_users; ++u) {
    MarketUser user;
    user.user_id = format_id('u', u, user_w);
    user.postcode = uniform_index(user_rng, config.n_postcodes);
    Rng drift_rng(sub_seed(sub_seed(config.seed, "drift"), u));
    std::vector<double> taste = random_direction(user_rng, dim, 1.0);
    user.taste.reserve(static_cast<std::size_t>(horizon));
    for (int d = 0; d < horizon; ++d) {
      user.taste.push_back(taste);
      if (config.interest_drift_rate > 0.0) {
        for (double& x : taste) x += config.interest_drift_rate * gaussian(drift_rng);
        const double n = std::sqrt(inner(taste, taste));
        for (double& x : taste) x /= n;
      }
    }
    m.user_lookup[user.user_id] = u;
    m.users.push_back(std::move(user));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Policies

std::vector<FeedEntry> RandomPolicy::serve(const FeedRequest& request) {
  Rng rng(request.seed);
  std::vector<std::string> pool(request.active_items.begin(), request.active_items.end());
  const std::size_t n = std::min(request.slots, pool.size());
  std::vector<FeedEntry> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::swap(pool[i], pool[i + uniform_index(rng, pool.size() - i)]);
    out.push_back({pool[i], name(), uniform01(rng)});
  }
  return out;
}

std::vector<FeedEntry> OraclePolicy::serve(const FeedRequest& request) {
  const auto user = market_.user_index(request.user_id);
  if (!user) return {};
  std::vector<ScoredItem> scored;
  for (const auto& id : request.active_items) {
    const std::size_t item = *market_.item_index(id);
    const bool before = request.clicked && request.clicked->count(id);
    scored.push_back({id, market_.click_probability(*user, item, request.day, 0, before, request.context.landing)});
  }
  sort_ranked(scored);
  std::vector<FeedEntry> out;
  for (std::size_t i = 0; i < std::min(request.slots, scored.size()); ++i)
    out.push_back({scored[i].item_id, name(), scored[i].score});
  return out;
}

OrganicPolicy::OrganicPolicy(const SyntheticMarket& market, double sharpness)
    : market_(market), sharpness_(sharpness) {}

std::vector<FeedEntry> OrganicPolicy::serve(const FeedRequest& request) {
  Rng rng(request.seed);
  const auto user = market_.user_index(request.user_id);
  if (!user || request.active_items.empty()) return {};
  const auto& taste = market_.users[*user].taste[static_cast<std::size_t>(
      std::clamp(request.day, 0, market_.config.horizon_days() - 1))];

  std::vector<std::vector<std::string>> by_category(market_.centroids.size());
  for (const auto& id : request.active_items) by_category[market_.items[*market_.item_index(id)].category].push_back(id);
  std::vector<double> weights(by_category.size(), 0.0);
  for (std::size_t c = 0; c < weights.size(); ++c) {
    if (by_category[c].empty()) continue;
    const double cos = inner(taste, market_.centroids[c]) / market_.config.centroid_norm;
    weights[c] = std::exp(sharpness_ * cos);
  }
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  auto pool = by_category[pick(rng)];
  const std::size_t n = std::min(request.slots, pool.size());
  std::vector<FeedEntry> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::swap(pool[i], pool[i + uniform_index(rng, pool.size() - i)]);
    out.push_back({pool[i], name(), 0.0});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Simulation

namespace {

struct UserState {
  std::vector<std::string> recent;
  std::unordered_set<std::string> clicked;

  void add_click(const std::string& item) {
    recent.push_back(item);
    if (recent.size() > kRecentCap) recent.erase(recent.begin());
    clicked.insert(item);
  }
};

std::vector<UserState> initial_states(const SyntheticMarket& market, const EventLog* prior) {
  std::vector<UserState> states(market.users.size());
  if (!prior) return states;
  for (const auto& e : prior->events()) {
    if (e.kind != EventKind::Click) continue;
    if (const auto u = market.user_index(e.user_id)) states[*u].add_click(e.item_id);
  }
  return states;
}

struct ArmOutput {
  std::vector<ImpressionRecord> impressions;
};

// Runs the day loop; `arm_of(user, day)` picks the serving policy index.
template <typename ArmFn>
EventLog run_days(const SyntheticMarket& market, std::span<FeedPolicy* const> policies, const ArmFn& arm_of,
                  int first_day, int days, std::uint64_t seed, const EventLog* prior,
                  std::vector<ArmOutput>& arms) {
  require(days >= 1, "simulation needs at least one day");
  const auto& cfg = market.config;
  auto states = initial_states(market, prior);
  arms.assign(policies.size(), {});
  std::vector<Event> events;

  for (int day = first_day; day < first_day + days; ++day) {
    std::vector<std::string> active_ids;
    for (std::size_t i : market.active_items(day)) active_ids.push_back(market.items[i].content.item_id);
    std::sort(active_ids.begin(), active_ids.end());
    const std::unordered_set<std::string> active_set(active_ids.begin(), active_ids.end());
    const std::uint64_t day_seed = sub_seed(seed, static_cast<std::uint64_t>(day));

    for (std::size_t u = 0; u < market.users.size(); ++u) {
      Rng rng(sub_seed(day_seed, u));
      if (uniform01(rng) >= cfg.activity_rate) continue;
      const auto& user = market.users[u];
      FeedRequest req;
      req.user_id = user.user_id;
      req.day = day;
      req.context = random_context(rng, day, format_id('p', user.postcode, id_width(cfg.n_postcodes)), cfg.front_page_share);
      req.timestamp = static_cast<std::int64_t>(day) * kSecondsPerDay + req.context.hour * 3600;
      req.recent_clicks = states[u].recent;
      req.clicked = &states[u].clicked;
      req.active_items = active_ids;
      req.active = &active_set;
      req.slots = cfg.feed_slots;
      req.seed = rng();

      const std::size_t arm = arm_of(u, day);
      auto feed = policies[arm]->serve(req);
      if (feed.size() > req.slots) feed.resize(req.slots);
      std::unordered_set<std::string> shown;
      std::vector<std::string> new_clicks;
      for (std::size_t pos = 0; pos < feed.size(); ++pos) {
        const auto& entry = feed[pos];
        const auto item = market.item_index(entry.item_id);
        if (!item)
          throw RuntimeError("policy '" + policies[arm]->name() + "' returned unknown item '" + entry.item_id + "'");
        if (!market.active(*item, day))
          throw RuntimeError("policy '" + policies[arm]->name() + "' returned item '" + entry.item_id +
                             "' outside its active window on day " + std::to_string(day));
        if (!shown.insert(entry.item_id).second)
          throw RuntimeError("policy '" + policies[arm]->name() + "' returned item '" + entry.item_id + "' twice");
        const bool before = states[u].clicked.count(entry.item_id) > 0;
        const double p = market.click_probability(u, *item, day, pos, before, req.context.landing);
        const bool click = uniform01(rng) < p;
        const bool convert = uniform01(rng) < cfg.conversion_probability;
        ImpressionRecord rec;
        rec.timestamp = req.timestamp;
        rec.user_id = user.user_id;
        rec.item_id = entry.item_id;
        rec.submodel = entry.submodel;
        rec.score = entry.score;
        rec.position = pos;
        rec.context = req.context;
        rec.clicked = click;
        arms[arm].impressions.push_back(std::move(rec));
        if (!click) continue;
        const std::int64_t t = req.timestamp + static_cast<std::int64_t>(pos) * 60;
        events.push_back({user.user_id, entry.item_id, t, EventKind::Click});
        if (convert) events.push_back({user.user_id, entry.item_id, t + 30, EventKind::Conversion});
        new_clicks.push_back(entry.item_id);
      }
      for (const auto& id : new_clicks) states[u].add_click(id);
    }
  }
  return EventLog(std::move(events));
}

}  // namespace

SimulationResult simulate_sessions(const SyntheticMarket& market, FeedPolicy& policy, int first_day, int days,
                                   std::uint64_t seed, const EventLog* prior) {
  FeedPolicy* policies[] = {&policy};
  std::vector<ArmOutput> arms;
  SimulationResult out;
  out.events = run_days(market, policies, [](std::size_t, int) { return std::size_t{0}; }, first_day, days, seed,
                        prior, arms);
  out.impressions = std::move(arms[0].impressions);
  return out;
}

EventLog organic_log(const SyntheticMarket& market, std::uint64_t seed) {
  OrganicPolicy organic(market);
  return simulate_sessions(market, organic, 0, market.config.horizon_days(), seed).events;
}

double user_bucket(const std::string& user_id, std::uint64_t salt) {
  const std::uint64_t h = splitmix64(sub_seed(salt, user_id));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

AbSimulation run_ab_simulation(const SyntheticMarket& market, FeedPolicy& policy_a, FeedPolicy& policy_b,
                               int first_day, int days, const RampPlan& ramp, std::uint64_t seed,
                               const EventLog* prior) {
  std::vector<RampStage> stages = ramp.stages;
  if (stages.empty()) stages.push_back({0.5, 0});
  const std::uint64_t salt = sub_seed(seed, "split");
  std::vector<double> buckets;
  for (const auto& u : market.users) buckets.push_back(user_bucket(u.user_id, salt));

  // Stage k starts once the earlier stages' minimum durations have elapsed;
  // the last stage runs to the end.
  std::vector<std::int64_t> stage_start{0};
  for (std::size_t k = 0; k + 1 < stages.size(); ++k)
    stage_start.push_back(stage_start.back() + stages[k].min_duration);
  const auto stage_of = [&](int day) {
    const std::int64_t elapsed = static_cast<std::int64_t>(day - first_day) * kSecondsPerDay;
    std::size_t k = 0;
    while (k + 1 < stages.size() && elapsed >= stage_start[k + 1]) ++k;
    return k;
  };

  FeedPolicy* policies[] = {&policy_a, &policy_b};
  std::vector<ArmOutput> arms;
  AbSimulation out;
  out.events = run_days(
      market, policies,
      [&](std::size_t u, int day) { return buckets[u] < stages[stage_of(day)].fraction ? std::size_t{1} : std::size_t{0}; },
      first_day, days, seed, prior, arms);
  out.impressions_a = std::move(arms[0].impressions);
  out.impressions_b = std::move(arms[1].impressions);
  for (const auto& st : stages)
    out.stage_users_b.push_back(static_cast<std::size_t>(
        std::count_if(buckets.begin(), buckets.end(), [&](double b) { return b < st.fraction; })));
  out.report = make_report(out.impressions_a, out.impressions_b, kSecondsPerDay);
  out.report.name_a = policy_a.name();
  out.report.name_b = policy_b.name();
  return out;
}

}  // namespace mrsys
