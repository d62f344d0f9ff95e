#include "mrsys/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <memory>
#include <sstream>

#include "mrsys/error.hpp"
#include "tsv.hpp"

namespace mrsys {

namespace fs = std::filesystem;

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, const char* expected) {
  throw ValidationError("config key '" + std::string(key) + "': '" + std::string(value) + "' is not " + expected);
}

// Typed value parsing and printing for the key registry.
void assign(int& out, std::string_view v, std::string_view key) {
  const auto x = tsv::parse_int(v);
  if (!x || *x < INT32_MIN || *x > INT32_MAX) bad_value(key, v, "an integer");
  out = static_cast<int>(*x);
}
// std::size_t and std::uint64_t are the same type on supported targets.
static_assert(std::is_same_v<std::size_t, std::uint64_t>);
void assign(std::uint64_t& out, std::string_view v, std::string_view key) {
  std::uint64_t x = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (v.empty() || ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  out = x;
}
void assign(double& out, std::string_view v, std::string_view key) {
  const auto x = tsv::parse_double(v);
  if (!x || !std::isfinite(*x)) bad_value(key, v, "a finite number");
  out = *x;
}
void assign(bool& out, std::string_view v, std::string_view key) {
  if (v == "true" || v == "1") out = true;
  else if (v == "false" || v == "0") out = false;
  else bad_value(key, v, "true or false");
}
void assign(std::string& out, std::string_view v, std::string_view) { out = std::string(v); }
template <typename T>
void assign(std::vector<T>& out, std::string_view v, std::string_view key) {
  out.clear();
  if (v.empty()) return;
  for (auto part : tsv::split(v, ',')) {
    T x{};
    assign(x, trim(part), key);
    out.push_back(std::move(x));
  }
}

std::string show(std::size_t v) { return std::to_string(v); }
std::string show(int v) { return std::to_string(v); }
std::string show(bool v) { return v ? "true" : "false"; }
std::string show(const std::string& v) { return v; }
std::string show(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}
template <typename T>
std::string show(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + show(v[i]);
  return out;
}

struct Field {
  std::string key;
  std::function<void(PipelineConfig&, std::string_view)> set;
  std::function<std::string(const PipelineConfig&)> get;
};

template <typename Ref>
Field field(std::string key, Ref ref) {
  return {key, [ref, key](PipelineConfig& c, std::string_view v) { assign(ref(c), v, key); },
          [ref](const PipelineConfig& c) { return show(ref(const_cast<PipelineConfig&>(c))); }};
}

#define MRSYS_FIELD(key, member) field(key, [](PipelineConfig& c) -> auto& { return c.member; })

const std::vector<Field>& registry() {
  static const std::vector<Field> fields = {
      MRSYS_FIELD("seed", seed),
      MRSYS_FIELD("market.n_users", market.n_users),
      MRSYS_FIELD("market.n_items", market.n_items),
      MRSYS_FIELD("market.n_categories", market.n_categories),
      MRSYS_FIELD("market.n_postcodes", market.n_postcodes),
      MRSYS_FIELD("market.latent_dim", market.latent_dim),
      MRSYS_FIELD("market.cold_item_fraction", market.cold_item_fraction),
      MRSYS_FIELD("market.mean_lifespan_days", market.mean_lifespan_days),
      MRSYS_FIELD("market.viral_item_fraction", market.viral_item_fraction),
      MRSYS_FIELD("market.interest_drift_rate", market.interest_drift_rate),
      MRSYS_FIELD("market.temperature", market.temperature),
      MRSYS_FIELD("market.conversion_probability", market.conversion_probability),
      MRSYS_FIELD("market.history_days", market.history_days),
      MRSYS_FIELD("market.sim_days", market.sim_days),
      MRSYS_FIELD("market.activity_rate", market.activity_rate),
      MRSYS_FIELD("market.feed_slots", market.feed_slots),
      MRSYS_FIELD("market.affinity_offset", market.affinity_offset),
      MRSYS_FIELD("market.locality_bonus", market.locality_bonus),
      MRSYS_FIELD("market.front_page_share", market.front_page_share),
      MRSYS_FIELD("market.freshness_bonus", market.freshness_bonus),
      MRSYS_FIELD("market.focus_weight", market.focus_weight),
      MRSYS_FIELD("market.viral_base", market.viral_base),
      MRSYS_FIELD("market.viral_personal", market.viral_personal),
      MRSYS_FIELD("market.viral_fade_days", market.viral_fade_days),
      MRSYS_FIELD("market.repeat_factor", market.repeat_factor),
      MRSYS_FIELD("market.viral_repeat_factor", market.viral_repeat_factor),
      MRSYS_FIELD("market.subcategories", market.subcategories),
      MRSYS_FIELD("market.centroid_norm", market.centroid_norm),
      MRSYS_FIELD("market.subcategory_norm", market.subcategory_norm),
      MRSYS_FIELD("market.item_noise", market.item_noise),
      MRSYS_FIELD("market.quality_sd", market.quality_sd),
      MRSYS_FIELD("market.image_dim", market.image_dim),
      MRSYS_FIELD("market.image_noise", market.image_noise),
      MRSYS_FIELD("data.w_click", w_click),
      MRSYS_FIELD("data.w_conv", w_conv),
      MRSYS_FIELD("als.dim", als.dim),
      MRSYS_FIELD("als.lambda", als.lambda),
      MRSYS_FIELD("als.alpha", als.alpha),
      MRSYS_FIELD("als.iterations", als.iterations),
      MRSYS_FIELD("location.dim", location.dim),
      MRSYS_FIELD("location.lambda", location.lambda),
      MRSYS_FIELD("location.alpha", location.alpha),
      MRSYS_FIELD("location.iterations", location.iterations),
      MRSYS_FIELD("word2vec.dim", word2vec.dim),
      MRSYS_FIELD("word2vec.window", word2vec.window),
      MRSYS_FIELD("word2vec.negatives", word2vec.negatives),
      MRSYS_FIELD("word2vec.epochs", word2vec.epochs),
      MRSYS_FIELD("word2vec.learning_rate", word2vec.learning_rate),
      MRSYS_FIELD("text.widths", text.widths),
      MRSYS_FIELD("text.filters", text.filters),
      MRSYS_FIELD("text.repr_dim", text.repr_dim),
      MRSYS_FIELD("text.epochs", text.epochs),
      MRSYS_FIELD("text.learning_rate", text.learning_rate),
      MRSYS_FIELD("text.l2", text.l2),
      MRSYS_FIELD("text.batch", text.batch),
      MRSYS_FIELD("image.hidden", image.hidden),
      MRSYS_FIELD("image.epochs", image.epochs),
      MRSYS_FIELD("image.learning_rate", image.learning_rate),
      MRSYS_FIELD("image.l2", image.l2),
      MRSYS_FIELD("image.batch", image.batch),
      MRSYS_FIELD("hybrid.hidden", hybrid.hidden),
      MRSYS_FIELD("hybrid.output", hybrid.output),
      MRSYS_FIELD("hybrid.epochs", hybrid.epochs),
      MRSYS_FIELD("hybrid.learning_rate", hybrid.learning_rate),
      MRSYS_FIELD("hybrid.l2", hybrid.l2),
      MRSYS_FIELD("hybrid.margin", hybrid.margin),
      MRSYS_FIELD("hybrid.batch", hybrid.batch),
      MRSYS_FIELD("hybrid.negative_ratio", hybrid.negative_ratio),
      MRSYS_FIELD("hybrid.source_dropout", hybrid.source_dropout),
      MRSYS_FIELD("hybrid.max_pairs", hybrid.max_pairs),
      MRSYS_FIELD("seq.n", seq.n),
      MRSYS_FIELD("seq.k", seq.k),
      MRSYS_FIELD("seq.hidden", seq.hidden),
      MRSYS_FIELD("seq.epochs", seq.epochs),
      MRSYS_FIELD("seq.learning_rate", seq.learning_rate),
      MRSYS_FIELD("seq.l2", seq.l2),
      MRSYS_FIELD("seq.batch", seq.batch),
      MRSYS_FIELD("seq.max_examples", seq.max_examples),
      MRSYS_FIELD("bandit.epsilon", feed.epsilon),
      MRSYS_FIELD("bandit.per_model_n", feed.per_model_n),
      MRSYS_FIELD("bandit.row_order", feed.row_order),
      MRSYS_FIELD("bandit.lambda", bandit_lambda),
      MRSYS_FIELD("bandit.theta", bandit_theta),
      MRSYS_FIELD("bandit.popularity_days", popularity_days),
      MRSYS_FIELD("deep.hidden1", deep.hidden1),
      MRSYS_FIELD("deep.hidden2", deep.hidden2),
      MRSYS_FIELD("deep.epochs", deep.epochs),
      MRSYS_FIELD("deep.learning_rate", deep.learning_rate),
      MRSYS_FIELD("deep.l2", deep.l2),
      MRSYS_FIELD("deep.batch", deep.batch),
      MRSYS_FIELD("deep.user_vectors", deep_user_vectors),
      MRSYS_FIELD("eval.n", hr_n),
      MRSYS_FIELD("ab.policy_a", policy_a),
      MRSYS_FIELD("ab.policy_b", policy_b),
      MRSYS_FIELD("ab.ramp", ramp),
      MRSYS_FIELD("ab.ramp_days", ramp_days),
  };
  return fields;
}

#undef MRSYS_FIELD

std::vector<double> unit(std::vector<double> v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  if (n > 0.0)
    for (double& x : v) x /= std::sqrt(n);
  return v;
}

void require_file(const fs::path& path, const char* stage) {
  if (!fs::exists(path))
    throw ValidationError("missing " + path.string() + " (run " + stage + " first)");
}

EventLog train_events(const PipelineConfig& cfg, const fs::path& dir) {
  require_file(dir / files::kEvents, "generate");
  return temporal_split(load_events(dir / files::kEvents), cfg.split_time()).train;
}

std::vector<ItemContent> load_items(const fs::path& dir, bool with_images) {
  require_file(dir / files::kItems, "generate");
  auto items = load_item_content(dir / files::kItems);
  if (with_images) {
    require_file(dir / files::kImages, "generate");
    attach_image_features(items, dir / files::kImages);
  }
  return items;
}

Embeddings load_table(const fs::path& path, const char* stage) {
  require_file(path, stage);
  return load_embeddings(path);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::set<std::string> test_window_items(const SyntheticMarket& market) {
  std::set<std::string> out;
  const auto& c = market.config;
  for (std::size_t i = 0; i < market.items.size(); ++i)
    for (int d = c.history_days; d < c.horizon_days(); ++d)
      if (market.active(i, d)) {
        out.insert(market.items[i].content.item_id);
        break;
      }
  return out;
}

// Artifacts behind the named feed policies. Policies borrow from it, so it
// must outlive them.
class PolicyKit {
 public:
  PolicyKit(const PipelineConfig& cfg, const fs::path& dir, const SyntheticMarket& market, const EventLog& train)
      : cfg_(cfg), dir_(dir), market_(market), popularity_(train, cfg.split_time() - 1, cfg.popularity_days) {}

  std::unique_ptr<FeedPolicy> make(const std::string& name) {
    if (name == "random") return std::make_unique<RandomPolicy>();
    if (name == "oracle") return std::make_unique<OraclePolicy>(market_);
    if (name == "popular") return std::make_unique<PopularPolicy>(popularity_);
    if (name == "mf") return std::make_unique<MfPolicy>(factors(), popularity_);
    if (name == "sequence") {
      if (!seq_) {
        require_file(dir_ / files::kSeqModel, "train-seq");
        seq_ = SeqModel::from_checkpoint(Checkpoint::load(dir_ / files::kSeqModel));
      }
      return std::make_unique<SeqPolicy>(*seq_, hybrid(), popularity_);
    }
    const FeedMode mode = parse_feed_mode(name);
    auto policy = std::make_unique<BanditPolicy>(sources(), mode, cfg_.feed);
    if (mode == FeedMode::Regression) {
      if (!regression_) {
        require_file(dir_ / files::kRegression, "fit-bandit regression");
        regression_ = load_regression_bandit(dir_ / files::kRegression);
      }
      policy->set_regression(&*regression_);
    }
    if (mode == FeedMode::Deep) {
      if (!deep_) {
        require_file(dir_ / files::kDeepModel, "fit-bandit deep");
        deep_ = DeepBandit::from_checkpoint(Checkpoint::load(dir_ / files::kDeepModel),
                                            load_vocabularies(dir_ / files::kDeepVocab));
      }
      policy->set_deep(&*deep_);
      if (deep_->user_dim() > 0) {
        factors();
        policy->set_user_vectors(&users_);
      }
    }
    return policy;
  }

  const SubmodelSources& sources() {
    if (!sources_) {
      SubmodelSources s;
      s.factors = &factors();
      s.popularity = &popularity_;
      s.item_vectors = &items_;
      s.item_category = market_.item_categories();
      for (const auto& it : market_.items) s.listed_day[it.content.item_id] = it.start_day;
      sources_ = std::move(s);
    }
    return *sources_;
  }

  const FactorModel& factors() {
    if (!factors_) {
      users_ = load_table(dir_ / files::kAlsUsers, "train-als");
      items_ = load_table(dir_ / files::kAlsItems, "train-als");
      factors_ = factor_model_from_tables(users_, items_);
    }
    return *factors_;
  }

  const Embeddings& users() {
    factors();
    return users_;
  }

  const Embeddings& hybrid() {
    if (!hybrid_) hybrid_ = load_table(dir_ / files::kHybrid, "train-hybrid");
    return *hybrid_;
  }

 private:
  const PipelineConfig& cfg_;
  fs::path dir_;
  const SyntheticMarket& market_;
  Popularity popularity_;
  std::optional<FactorModel> factors_;
  Embeddings users_, items_;
  std::optional<Embeddings> hybrid_;
  std::optional<SubmodelSources> sources_;
  std::optional<SeqModel> seq_;
  std::optional<RegressionBandit> regression_;
  std::optional<DeepBandit> deep_;
};

}  // namespace

// ---------------------------------------------------------------------------
// Config

PipelineConfig::PipelineConfig() {
  market.n_users = 1500;
  market.n_items = 1000;
  market.feed_slots = 12;
  market.image_noise = 1.5;
  als.dim = 16;
  als.lambda = 20.0;
  als.alpha = 10.0;
  als.iterations = 10;
  location = als;
  location.dim = 8;
  seq.epochs = 3;
  seq.max_examples = 8000;
}

void PipelineConfig::set(std::string_view key, std::string_view value) {
  for (const auto& f : registry())
    if (f.key == key) {
      f.set(*this, trim(value));
      return;
    }
  throw ValidationError("unknown config key '" + std::string(key) + "'");
}

std::vector<std::string> PipelineConfig::keys() {
  std::vector<std::string> out;
  for (const auto& f : registry()) out.push_back(f.key);
  return out;
}

std::string PipelineConfig::dump() const {
  std::string out;
  for (const auto& f : registry()) out += f.key + " = " + f.get(*this) + "\n";
  return out;
}

void PipelineConfig::validate() const {
  market.validate();
  require(w_click >= 0.0 && w_conv >= 0.0 && w_click + w_conv > 0.0, "data weights must be non-negative, not both 0");
  for (const auto* a : {&als, &location}) {
    require(a->dim >= 1, "factor dimension must be at least 1");
    require(a->lambda >= 0.0 && a->alpha >= 0.0, "ALS lambda and alpha must be non-negative");
    require(a->iterations >= 1, "ALS iterations must be at least 1");
  }
  require(word2vec.dim >= 1 && word2vec.window >= 1 && word2vec.epochs >= 1, "word2vec dim, window, epochs must be >= 1");
  require(word2vec.learning_rate > 0.0, "word2vec learning rate must be positive");
  require(!text.widths.empty() && text.filters >= 1 && text.repr_dim >= 1 && text.batch >= 1 && text.epochs >= 1,
          "text encoder sizes must be at least 1");
  for (auto w : text.widths) require(w >= 1, "text filter widths must be at least 1");
  require(image.hidden >= 1 && image.batch >= 1 && image.epochs >= 1, "image tower sizes must be at least 1");
  require(hybrid.hidden >= 1 && hybrid.output >= 1 && hybrid.batch >= 1 && hybrid.epochs >= 1,
          "hybrid sizes must be at least 1");
  require(hybrid.margin >= 0.0, "hybrid margin must be non-negative");
  require(hybrid.source_dropout >= 0.0 && hybrid.source_dropout < 1.0, "hybrid.source_dropout must be in [0,1)");
  require(seq.n > 1, "seq.n must be greater than 1");
  require(seq.k >= 1 && seq.hidden >= 1 && seq.batch >= 1 && seq.epochs >= 1, "sequence sizes must be at least 1");
  require(feed.epsilon >= 0.0 && feed.epsilon <= 1.0, "bandit.epsilon must be in [0,1]");
  require(feed.per_model_n >= 1, "bandit.per_model_n must be at least 1");
  for (const auto& r : feed.row_order)
    require(std::find(standard_submodels().begin(), standard_submodels().end(), r) != standard_submodels().end(),
            "bandit.row_order: unknown submodel '" + r + "'");
  for (const auto& s : standard_submodels())
    require(std::find(feed.row_order.begin(), feed.row_order.end(), s) != feed.row_order.end(),
            "bandit.row_order must list every submodel (missing '" + s + "')");
  require(bandit_lambda > 0.0, "bandit.lambda must be positive");
  require(bandit_theta > 0.0 && bandit_theta < 1.0, "bandit.theta must be in (0,1)");
  require(popularity_days >= 1, "bandit.popularity_days must be at least 1");
  require(deep.hidden1 >= 1 && deep.hidden2 >= 1 && deep.batch >= 1 && deep.epochs >= 1, "deep sizes must be at least 1");
  require(hr_n >= 1, "eval.n must be at least 1");
  for (const auto* p : {&policy_a, &policy_b})
    require(std::find(policy_names().begin(), policy_names().end(), *p) != policy_names().end(),
            "unknown policy '" + *p + "'");
  require(ramp.size() == ramp_days.size(), "ab.ramp and ab.ramp_days need the same number of stages");
  if (!ramp.empty()) ramp_plan();
}

std::uint64_t PipelineConfig::stage_seed(std::string_view stage) const { return sub_seed(seed, stage); }

MarketConfig PipelineConfig::market_config() const {
  MarketConfig m = market;
  m.seed = stage_seed("market");
  return m;
}

std::int64_t PipelineConfig::split_time() const {
  return static_cast<std::int64_t>(market.history_days) * kSecondsPerDay;
}

RampPlan PipelineConfig::ramp_plan() const {
  if (ramp.empty()) return {};
  std::vector<std::int64_t> durations;
  for (double d : ramp_days) durations.push_back(static_cast<std::int64_t>(std::llround(d * kSecondsPerDay)));
  return make_ramp_plan(ramp, durations);
}

PipelineConfig parse_pipeline_config(std::string_view text) {
  PipelineConfig cfg;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  for (std::string raw; std::getline(in, raw);) {
    ++line_no;
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "config line " + std::to_string(line_no) + ": ";
    if (eq == std::string_view::npos) throw ValidationError(where + "expected 'key = value'");
    const std::string key(trim(line.substr(0, eq)));
    if (!seen.insert(key).second) throw ValidationError(where + "duplicate key '" + key + "'");
    try {
      cfg.set(key, line.substr(eq + 1));
    } catch (const ValidationError& e) {
      throw ValidationError(where + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

PipelineConfig load_pipeline_config(const fs::path& path) {
  if (!fs::exists(path)) throw ValidationError("config file " + path.string() + " does not exist");
  return parse_pipeline_config(read_text(path));
}

FactorModel factor_model_from_tables(const Embeddings& users, const Embeddings& items) {
  require(!users.empty() && !items.empty(), "factor tables must not be empty");
  const std::size_t d = users.begin()->second.size();
  FactorModel m;
  m.dim = d;
  m.row_factors = Tensor({users.size(), d});
  m.col_factors = Tensor({items.size(), d});
  std::size_t r = 0;
  for (const auto& [id, v] : users) {
    require(v.size() == d, "user factor '" + id + "' has the wrong dimension");
    m.row_ids.intern(id);
    std::copy(v.begin(), v.end(), m.row_factors.row(r++).begin());
  }
  r = 0;
  for (const auto& [id, v] : items) {
    require(v.size() == d, "item factor '" + id + "' has the wrong dimension");
    m.col_ids.intern(id);
    std::copy(v.begin(), v.end(), m.col_factors.row(r++).begin());
  }
  return m;
}

// ---------------------------------------------------------------------------
// Similar-item evaluation

SimilarItemTask make_similar_item_task(const EventLog& test, std::set<std::string> candidates) {
  SimilarItemTask task;
  for (const auto& e : test.events()) {
    if (!task.queries.count(e.user_id)) {
      if (e.kind == EventKind::Click) task.queries[e.user_id] = e.item_id;
      continue;
    }
    if (e.item_id != task.queries[e.user_id]) task.truth[e.user_id].insert(e.item_id);
  }
  task.candidates = std::move(candidates);
  return task;
}

SimilarItemTask restrict_task(const SimilarItemTask& task, const std::function<bool(const std::string&)>& keep) {
  SimilarItemTask out;
  for (const auto& [user, items] : task.truth) {
    const auto q = task.queries.find(user);
    if (q == task.queries.end() || !keep(q->second)) continue;
    std::set<std::string> kept;
    for (const auto& i : items)
      if (keep(i)) kept.insert(i);
    if (kept.empty()) continue;
    out.queries[user] = q->second;
    out.truth[user] = std::move(kept);
  }
  for (const auto& c : task.candidates)
    if (keep(c)) out.candidates.insert(c);
  return out;
}

double similar_item_hit_rate(const Embeddings& table, const SimilarItemTask& task, std::size_t n) {
  Embeddings catalog;
  for (const auto& c : task.candidates)
    if (const auto it = table.find(c); it != table.end()) catalog.emplace(c, it->second);
  std::map<std::string, std::vector<std::string>> recs;
  std::vector<Event> truth;
  for (const auto& [user, items] : task.truth) {
    for (const auto& i : items) truth.push_back({user, i, 0, EventKind::Click});
    const auto& query = task.queries.at(user);
    const auto q = table.find(query);
    if (q == table.end()) continue;
    const bool added = catalog.emplace(query, q->second).second;
    auto& list = recs[user];
    for (const auto& s : similar_items(query, catalog, n)) list.push_back(s.item_id);
    if (added) catalog.erase(query);
  }
  if (truth.empty()) return 0.0;
  return hit_rate_at_n(recs, EventLog(std::move(truth)), n);
}

Embeddings content_embeddings(const Embeddings& text, const Embeddings& image) {
  const std::size_t image_dim = image.empty() ? 0 : image.begin()->second.size();
  Embeddings out;
  for (const auto& [id, t] : text) {
    auto v = unit(t);
    const auto im = image.find(id);
    const auto block = im != image.end() ? unit(im->second) : std::vector<double>(image_dim, 0.0);
    v.insert(v.end(), block.begin(), block.end());
    out.emplace(id, std::move(v));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stages

void run_generate(const PipelineConfig& cfg, const fs::path& dir) {
  cfg.validate();
  const auto market = generate_market(cfg.market_config());
  fs::create_directories(dir);
  const auto items = market.contents();
  save_item_content(items, dir / files::kItems);
  save_image_features(items, dir / files::kImages);
  save_events(organic_log(market, cfg.stage_seed("organic")), dir / files::kEvents);
}

void run_train_als(const PipelineConfig& cfg, const fs::path& dir) {
  const auto train = train_events(cfg, dir);
  AlsConfig ac = cfg.als;
  ac.seed = cfg.stage_seed("als");
  const auto model = als_fit(build_interaction_matrix(train, cfg.w_click, cfg.w_conv), ac);
  save_embeddings(behavioral_item_embeddings(model), dir / files::kAlsItems);
  save_embeddings(user_embeddings(model), dir / files::kAlsUsers);
}

void run_train_location(const PipelineConfig& cfg, const fs::path& dir) {
  const auto train = train_events(cfg, dir);
  std::unordered_map<std::string, std::string> postcodes;
  for (const auto& it : load_items(dir, false)) postcodes[it.item_id] = it.postcode;
  AlsConfig lc = cfg.location;
  lc.seed = cfg.stage_seed("location");
  save_embeddings(location_embeddings(train, postcodes, lc), dir / files::kLocation);
}

void run_train_text(const PipelineConfig& cfg, const fs::path& dir) {
  const auto items = load_items(dir, false);
  std::vector<std::vector<std::string>> corpus;
  for (const auto& it : items) corpus.push_back(tokenize(it.title + " " + it.description));
  Word2VecConfig wc = cfg.word2vec;
  wc.seed = cfg.stage_seed("word2vec");
  const auto words = train_word_embeddings(corpus, wc);
  save_embeddings(words.to_table(), dir / files::kWords);

  TextEncoderConfig tc = cfg.text;
  tc.seed = cfg.stage_seed("text");
  auto encoder = train_category_classifier(items, words, tc);
  encoder.to_checkpoint().save(dir / files::kTextModel);
  std::string cats;
  for (const auto& c : encoder.categories()) cats += c + "\n";
  write_text(dir / files::kTextCategories, cats);

  Embeddings repr;
  for (const auto& it : items) repr[it.item_id] = text_representation(it, encoder);
  save_embeddings(repr, dir / files::kTextRepr);
}

void run_train_image(const PipelineConfig& cfg, const fs::path& dir) {
  const auto items = load_items(dir, true);
  const auto words = WordEmbeddings::from_table(load_table(dir / files::kWords, "train-text"));
  ImageTowerConfig ic = cfg.image;
  ic.seed = cfg.stage_seed("image");
  auto tower = train_image_tower(items, words, ic);
  tower.to_checkpoint().save(dir / files::kImageModel);
  Embeddings repr;
  for (const auto& it : items)
    if (auto r = image_representation(it, tower)) repr[it.item_id] = std::move(*r);
  save_embeddings(repr, dir / files::kImageRepr);
}

void run_train_hybrid(const PipelineConfig& cfg, const fs::path& dir) {
  const auto train = train_events(cfg, dir);
  const auto items = load_items(dir, false);
  const auto behavioral = load_table(dir / files::kAlsItems, "train-als");
  const auto text = load_table(dir / files::kTextRepr, "train-text");
  const auto image = load_table(dir / files::kImageRepr, "train-image");
  const auto location = load_table(dir / files::kLocation, "train-location");
  const auto dim_of = [](const Embeddings& t, std::size_t fallback) {
    return t.empty() ? fallback : t.begin()->second.size();
  };

  ItemRepresentationSet reps({dim_of(behavioral, cfg.als.dim), dim_of(text, cfg.text.repr_dim),
                              dim_of(image, cfg.word2vec.dim), dim_of(location, cfg.location.dim)});
  reps.add(Source::Behavioral, behavioral);
  reps.add(Source::Text, text);
  reps.add(Source::Image, image);
  std::map<std::string, std::string> postcode, category;
  for (const auto& it : items) {
    postcode[it.item_id] = it.postcode;
    category[it.item_id] = it.category;
  }
  reps.add_location(location, postcode);

  auto pairs = mine_co_converted_pairs(train);
  if (pairs.empty()) throw ValidationError("no co-converted item pairs in the training events");
  const auto negatives = sample_negative_pairs(category, pairs, pairs.size() * cfg.hybrid.negative_ratio,
                                               cfg.stage_seed("negatives"));
  pairs.insert(pairs.end(), negatives.begin(), negatives.end());

  HybridConfig hc = cfg.hybrid;
  hc.seed = cfg.stage_seed("hybrid");
  auto encoder = train_hybrid(pairs, reps, hc);
  encoder.to_checkpoint().save(dir / files::kHybridModel);
  save_embeddings(hybrid_embed_all(encoder, reps), dir / files::kHybrid);
}

void run_train_seq(const PipelineConfig& cfg, const fs::path& dir) {
  const auto train = train_events(cfg, dir);
  const auto table = load_table(dir / files::kHybrid, "train-hybrid");
  const auto examples = build_sequences(train, cfg.seq.n, cfg.seq.k);
  if (examples.empty()) throw ValidationError("no click sequences long enough for training");
  SeqConfig sc = cfg.seq;
  sc.seed = cfg.stage_seed("seq");
  auto model = train_sequence_model(examples, table, sc);
  model.to_checkpoint().save(dir / files::kSeqModel);
}

void run_fit_bandit(const PipelineConfig& cfg, const fs::path& dir, FeedMode mode,
                    const std::optional<fs::path>& impressions) {
  if (mode == FeedMode::Explore) throw ValidationError("the explore feed has nothing to fit");
  if (mode == FeedMode::RowSeparated) {
    std::string rows;
    for (const auto& r : cfg.feed.row_order) rows += r + "\n";
    write_text(dir / files::kRowOrder, rows);
    return;
  }
  const auto market = generate_market(cfg.market_config());
  const auto train = train_events(cfg, dir);
  PolicyKit kit(cfg, dir, market, train);

  std::vector<ImpressionRecord> logged;
  if (impressions) {
    if (!fs::exists(*impressions)) throw ValidationError("impressions file " + impressions->string() + " does not exist");
    logged = load_impressions(*impressions);
  } else {
    auto explore = kit.make("explore");
    logged = simulate_sessions(market, *explore, market.config.history_days, market.config.sim_days,
                               cfg.stage_seed("bandit-log"), &train)
                 .impressions;
    save_impressions(logged, dir / files::kBanditLog);
  }
  if (logged.empty()) throw ValidationError("no impressions to fit the bandit on");

  if (mode == FeedMode::Regression) {
    save_regression_bandit(fit_regression_bandit(logged, cfg.bandit_lambda, cfg.bandit_theta),
                           dir / files::kRegression);
    return;
  }
  DeepBanditConfig dc = cfg.deep;
  dc.seed = cfg.stage_seed("deep");
  dc.user_dim = 0;
  if (cfg.deep_user_vectors) {
    dc.user_dim = cfg.als.dim;
    const auto& users = kit.users();
    if (!users.empty()) dc.user_dim = users.begin()->second.size();
    attach_user_vectors(logged, users, dc.user_dim);
  }
  auto deep = fit_deep_bandit(logged, dc);
  deep.to_checkpoint().save(dir / files::kDeepModel);
  save_vocabularies(deep.vocab(), dir / files::kDeepVocab);
}

HitRateSummary run_evaluate_hr(const PipelineConfig& cfg, const fs::path& dir) {
  require_file(dir / files::kEvents, "generate");
  const auto market = generate_market(cfg.market_config());
  const auto test = temporal_split(load_events(dir / files::kEvents), cfg.split_time()).test;
  if (test.empty()) throw ValidationError("no test-period events to evaluate on");
  const auto behavioral = load_table(dir / files::kAlsItems, "train-als");
  const auto hybrid = load_table(dir / files::kHybrid, "train-hybrid");
  const auto content = content_embeddings(load_table(dir / files::kTextRepr, "train-text"),
                                          load_table(dir / files::kImageRepr, "train-image"));

  const auto task = make_similar_item_task(test, test_window_items(market));
  const auto warm = restrict_task(task, [&](const std::string& id) { return behavioral.count(id) > 0; });
  HitRateSummary s;
  s.users_all = task.truth.size();
  s.users_warm = warm.truth.size();
  s.hybrid_all = similar_item_hit_rate(hybrid, task, cfg.hr_n);
  s.behavioral_all = similar_item_hit_rate(behavioral, task, cfg.hr_n);
  s.content_all = similar_item_hit_rate(content, task, cfg.hr_n);
  s.hybrid_warm = similar_item_hit_rate(hybrid, warm, cfg.hr_n);
  s.behavioral_warm = similar_item_hit_rate(behavioral, warm, cfg.hr_n);
  s.content_warm = similar_item_hit_rate(content, warm, cfg.hr_n);

  std::ostringstream out;
  out << "representation\tsubset\tusers\thr_at_" << cfg.hr_n << "\n";
  const auto row = [&](const char* rep, const char* subset, std::size_t users, double hr) {
    out << rep << '\t' << subset << '\t' << users << '\t' << tsv::format_double(hr) << '\n';
  };
  row("hybrid", "all", s.users_all, s.hybrid_all);
  row("behavioral", "all", s.users_all, s.behavioral_all);
  row("content", "all", s.users_all, s.content_all);
  row("hybrid", "warm", s.users_warm, s.hybrid_warm);
  row("behavioral", "warm", s.users_warm, s.behavioral_warm);
  row("content", "warm", s.users_warm, s.content_warm);
  write_text(dir / files::kHitRates, out.str());
  return s;
}

AbSimulation run_ab_sim(const PipelineConfig& cfg, const fs::path& dir) {
  cfg.validate();
  const auto market = generate_market(cfg.market_config());
  const auto train = train_events(cfg, dir);
  PolicyKit kit(cfg, dir, market, train);
  auto a = kit.make(cfg.policy_a);
  auto b = kit.make(cfg.policy_b);
  auto ab = run_ab_simulation(market, *a, *b, market.config.history_days, market.config.sim_days, cfg.ramp_plan(),
                              cfg.stage_seed("ab"), &train);
  save_report(ab.report, dir / files::kAbReport);
  save_impressions(ab.impressions_a, dir / files::kAbImpressionsA);
  save_impressions(ab.impressions_b, dir / files::kAbImpressionsB);
  return ab;
}

std::string run_report(const fs::path& dir) {
  std::string out;
  if (fs::exists(dir / files::kHitRates)) {
    out += "Similar-item hit rates\n";
    const auto text = read_text(dir / files::kHitRates);
    for (const auto& line : tsv::split(text, '\n')) {
      if (line.empty()) continue;
      const auto f = tsv::split(line, '\t');
      char buf[160];
      std::snprintf(buf, sizeof buf, "  %-14s %-6s %8s %12s\n", std::string(f[0]).c_str(),
                    std::string(f.size() > 1 ? f[1] : "").c_str(), std::string(f.size() > 2 ? f[2] : "").c_str(),
                    std::string(f.size() > 3 ? f[3] : "").substr(0, 10).c_str());
      out += buf;
    }
  }
  if (fs::exists(dir / files::kAbReport)) {
    if (!out.empty()) out += "\n";
    out += "A/B simulation\n" + format_report(load_report(dir / files::kAbReport));
  }
  if (out.empty()) throw ValidationError("nothing to report in " + dir.string() + " (run evaluate-hr or ab-sim first)");
  write_text(dir / files::kReport, out);
  return out;
}

std::map<std::string, std::vector<std::string>> load_recommendations(const fs::path& path) {
  if (!fs::exists(path)) throw ValidationError("recommendations file " + path.string() + " does not exist");
  std::map<std::string, std::vector<std::string>> recs;
  std::size_t line_no = 0;
  const auto text = read_text(path);
  for (const auto& line : tsv::split(text, '\n')) {
    ++line_no;
    const auto l = trim(line);
    if (l.empty()) continue;
    const auto f = tsv::split(l, '\t');
    if (f.size() != 2 || f[0].empty())
      throw ValidationError(path.string() + " line " + std::to_string(line_no) + ": expected 'user_id<TAB>items'");
    auto& list = recs[std::string(f[0])];
    for (const auto& item : tsv::split(f[1], ','))
      if (!trim(item).empty()) list.emplace_back(trim(item));
  }
  return recs;
}

}  // namespace mrsys
