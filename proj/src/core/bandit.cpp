#include "mrsys/bandit.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <unordered_set>

#include "mrsys/error.hpp"
#include "mrsys/random.hpp"
#include "tsv.hpp"

namespace mrsys {

const char* to_string(LandingPage p) {
  return p == LandingPage::MainFront ? "MainFront" : "CategoryFront";
}

LandingPage parse_landing_page(std::string_view text) {
  if (text == "MainFront") return LandingPage::MainFront;
  if (text == "CategoryFront") return LandingPage::CategoryFront;
  throw ValidationError("unknown landing page '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// Impression files

namespace {
constexpr std::string_view kImpressionHeader =
    "timestamp\tuser_id\titem_id\tsubmodel\tscore\tposition\tdevice\thour\tweekday\tlanding\tclicked";
}

void save_impressions(std::span<const ImpressionRecord> records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot write impressions " + path.string());
  out << kImpressionHeader << '\n';
  for (const auto& r : records)
    out << r.timestamp << '\t' << r.user_id << '\t' << r.item_id << '\t' << r.submodel << '\t'
        << tsv::format_double(r.score) << '\t' << r.position << '\t' << r.context.device << '\t'
        << r.context.hour << '\t' << r.context.weekday << '\t' << to_string(r.context.landing) << '\t'
        << (r.clicked ? 1 : 0) << '\n';
}

std::vector<ImpressionRecord> load_impressions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open impressions " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kImpressionHeader)
    throw ValidationError(path.string() + ":1: expected impression header");
  std::vector<ImpressionRecord> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fail = [&](const std::string& what) {
      return ValidationError(path.string() + ":" + std::to_string(line_no) + ": " + what);
    };
    const auto f = tsv::split(line);
    if (f.size() != 11) throw fail("expected 11 fields, got " + std::to_string(f.size()));
    ImpressionRecord r;
    const auto ts = tsv::parse_int(f[0]);
    const auto score = tsv::parse_double(f[4]);
    const auto pos = tsv::parse_int(f[5]);
    const auto hour = tsv::parse_int(f[7]);
    if (!ts) throw fail("bad timestamp '" + std::string(f[0]) + "'");
    if (!score || !std::isfinite(*score)) throw fail("bad score '" + std::string(f[4]) + "'");
    if (!pos || *pos < 0) throw fail("bad position '" + std::string(f[5]) + "'");
    if (!hour || *hour < 0 || *hour > 23) throw fail("bad hour '" + std::string(f[7]) + "'");
    if (f[10] != "0" && f[10] != "1") throw fail("clicked must be 0 or 1");
    r.timestamp = *ts;
    r.user_id = f[1];
    r.item_id = f[2];
    r.submodel = f[3];
    r.score = *score;
    r.position = static_cast<std::size_t>(*pos);
    r.context.device = f[6];
    r.context.hour = static_cast<int>(*hour);
    r.context.weekday = f[8];
    try {
      r.context.landing = parse_landing_page(f[9]);
    } catch (const ValidationError& e) {
      throw fail(e.what());
    }
    r.clicked = f[10] == "1";
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Proposals and feeds

namespace {

bool ranked_before(const SubmodelProposal& a, const SubmodelProposal& b) {
  return a.score != b.score ? a.score > b.score : a.item_id < b.item_id;
}

}  // namespace

std::vector<SubmodelProposal> collect_proposals(const std::string& user, const FeedContext& context,
                                                std::span<const SubmodelHandle> submodels,
                                                std::size_t per_model_n) {
  require(!submodels.empty(), "at least one submodel is required");
  std::map<std::string, SubmodelProposal> best;
  for (const auto& sm : submodels) {
    auto items = sm.propose(user, context, per_model_n);
    for (const auto& it : items)
      if (!std::isfinite(it.score))
        throw ValidationError("submodel '" + sm.id + "' returned a non-finite score for item '" + it.item_id + "'");
    sort_ranked(items);
    if (items.size() > per_model_n) items.resize(per_model_n);
    for (const auto& it : items) {
      SubmodelProposal p{sm.id, it.item_id, std::clamp(it.score, 0.0, 1.0)};
      auto [pos, inserted] = best.emplace(it.item_id, p);
      if (!inserted && p.score > pos->second.score) pos->second = p;
    }
  }
  if (best.empty()) throw ValidationError("every submodel returned an empty proposal list");
  std::vector<SubmodelProposal> out;
  for (auto& [id, p] : best) out.push_back(std::move(p));
  std::sort(out.begin(), out.end(), ranked_before);
  return out;
}

std::vector<SubmodelProposal> rank_row_separated(std::span<const SubmodelProposal> proposals,
                                                 std::span<const std::string> row_order,
                                                 std::size_t row_width) {
  std::map<std::string, std::vector<SubmodelProposal>> rows;
  for (const auto& p : proposals) rows[p.submodel].push_back(p);
  for (const auto& [sm, list] : rows)
    if (std::find(row_order.begin(), row_order.end(), sm) == row_order.end())
      throw ValidationError("row order does not include submodel '" + sm + "'");
  std::vector<SubmodelProposal> feed;
  std::unordered_set<std::string> placed;
  for (const auto& sm : row_order) {
    auto it = rows.find(sm);
    if (it == rows.end()) continue;
    auto& list = it->second;
    std::sort(list.begin(), list.end(), ranked_before);
    std::size_t taken = 0;
    for (const auto& p : list) {
      if (taken == row_width) break;
      if (!placed.insert(p.item_id).second) continue;
      feed.push_back(p);
      ++taken;
    }
  }
  return feed;
}

std::vector<FeedSlot> rerank(std::span<const SubmodelProposal> proposals, const FeedContext& context,
                             const ValueFn& value, double epsilon, std::size_t slots, std::uint64_t seed) {
  if (proposals.empty()) throw ValidationError("rerank needs at least one proposal");
  require(epsilon >= 0.0 && epsilon <= 1.0, "epsilon must be in [0, 1]");
  require(slots >= 1, "slots must be at least 1");

  std::vector<FeedSlot> ranked;
  std::unordered_set<std::string> seen;
  for (const auto& p : proposals) {
    if (!seen.insert(p.item_id).second) continue;
    const double v = value(p, context, 0);
    if (!std::isfinite(v)) throw RuntimeError("value function returned a non-finite value for '" + p.item_id + "'");
    ranked.push_back({p, v, false});
  }
  std::sort(ranked.begin(), ranked.end(), [](const FeedSlot& a, const FeedSlot& b) {
    return a.value != b.value ? a.value > b.value : a.proposal.item_id < b.proposal.item_id;
  });

  Rng rng(seed);
  std::vector<bool> used(ranked.size(), false);
  std::size_t remaining = ranked.size(), greedy = 0;
  std::vector<FeedSlot> feed;
  while (feed.size() < slots && remaining > 0) {
    const bool explore = epsilon > 0.0 && uniform01(rng) < epsilon;
    std::size_t pick;
    if (explore) {
      std::size_t k = uniform_index(rng, remaining);
      pick = 0;
      for (;; ++pick)
        if (!used[pick] && k-- == 0) break;
    } else {
      while (used[greedy]) ++greedy;
      pick = greedy;
    }
    used[pick] = true;
    --remaining;
    feed.push_back(ranked[pick]);
    feed.back().explored = explore;
  }
  return feed;
}

// ---------------------------------------------------------------------------
// Regression bandit

std::size_t bin_score(double score, std::size_t buckets) {
  if (!(score >= 0.0 && score <= 1.0)) throw ValidationError("score " + tsv::format_double(score) + " outside [0, 1]");
  require(buckets >= 1, "bucket count must be positive");
  return std::min(buckets - 1, static_cast<std::size_t>(std::floor(score * static_cast<double>(buckets))));
}

std::size_t Vocabulary::index(const std::string& level) const {
  auto it = std::lower_bound(levels.begin(), levels.end(), level);
  return it != levels.end() && *it == level ? static_cast<std::size_t>(it - levels.begin()) : levels.size();
}

Vocabulary Vocabulary::from(std::vector<std::string> levels) {
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  return {std::move(levels)};
}

FeatureVocabularies FeatureVocabularies::from(std::span<const ImpressionRecord> records) {
  std::vector<std::string> sm, dev, wd;
  for (const auto& r : records) {
    sm.push_back(r.submodel);
    dev.push_back(r.context.device);
    wd.push_back(r.context.weekday);
  }
  return {Vocabulary::from(std::move(sm)), Vocabulary::from(std::move(dev)), Vocabulary::from(std::move(wd))};
}

std::vector<double> encode_regression_features(const ImpressionRecord& record, const FeatureVocabularies& vocab,
                                               double theta) {
  require(record.context.hour >= 0 && record.context.hour < 24, "hour must be in 0..23");
  const double score = std::clamp(record.score, 0.0, 1.0);
  std::vector<double> f;
  f.reserve(kScoreBuckets + vocab.submodels.size() + vocab.devices.size() + 24 + vocab.weekdays.size() + 2 +
            kPositionCap + 1 + 2);
  auto one_hot = [&](std::size_t size, std::size_t index) {
    const std::size_t base = f.size();
    f.resize(base + size, 0.0);
    f[base + index] = 1.0;
  };
  one_hot(kScoreBuckets, bin_score(score));
  one_hot(vocab.submodels.size(), vocab.submodels.index(record.submodel));
  one_hot(vocab.devices.size(), vocab.devices.index(record.context.device));
  one_hot(24, static_cast<std::size_t>(record.context.hour));
  one_hot(vocab.weekdays.size(), vocab.weekdays.index(record.context.weekday));
  one_hot(2, record.context.landing == LandingPage::MainFront ? 0 : 1);
  one_hot(kPositionCap + 1, std::min(record.position, kPositionCap));
  f.push_back(std::min(score, theta));
  f.push_back(std::max(score - theta, 0.0));
  return f;
}

double RegressionBandit::raw_value(const ImpressionRecord& record) const {
  const auto f = encode_regression_features(record, vocab, theta);
  require(f.size() == weights.size(), "regression bandit feature width mismatch");
  return intercept + std::inner_product(f.begin(), f.end(), weights.begin(), 0.0);
}

RegressionBandit fit_regression_bandit(std::span<const ImpressionRecord> impressions, double lambda,
                                       double theta) {
  if (impressions.empty()) throw ValidationError("regression bandit needs at least one impression");
  if (!(lambda > 0.0)) throw ValidationError("ridge lambda must be positive");
  if (!(theta > 0.0 && theta < 1.0)) throw ValidationError("breakpoint theta must be in (0, 1)");
  RegressionBandit bandit;
  bandit.vocab = FeatureVocabularies::from(impressions);
  bandit.theta = theta;
  bandit.lambda = lambda;

  std::map<std::vector<double>, std::pair<double, double>> groups;  // features -> (count, clicks)
  for (const auto& r : impressions) {
    auto& g = groups[encode_regression_features(r, bandit.vocab, theta)];
    g.first += 1.0;
    g.second += r.clicked ? 1.0 : 0.0;
  }
  const std::size_t p = groups.begin()->first.size();
  // Augmented system with the intercept as the last, unpenalized column.
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p + 1), static_cast<Eigen::Index>(p + 1));
  Eigen::VectorXd b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p + 1));
  Eigen::VectorXd x(static_cast<Eigen::Index>(p + 1));
  for (const auto& [features, g] : groups) {
    for (std::size_t j = 0; j < p; ++j) x[static_cast<Eigen::Index>(j)] = features[j];
    x[static_cast<Eigen::Index>(p)] = 1.0;
    const double w = g.first, y = g.second / g.first;
    a.selfadjointView<Eigen::Lower>().rankUpdate(x, w);
    b += w * y * x;
  }
  a = a.selfadjointView<Eigen::Lower>();
  for (std::size_t j = 0; j < p; ++j) a(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j)) += lambda;
  const Eigen::VectorXd beta = a.ldlt().solve(b);
  if (!beta.allFinite()) throw RuntimeError("ridge solve produced non-finite weights");
  bandit.weights.assign(beta.data(), beta.data() + p);
  bandit.intercept = beta[static_cast<Eigen::Index>(p)];
  return bandit;
}

namespace {
ImpressionRecord as_record(const SubmodelProposal& proposal, const FeedContext& context, std::size_t position) {
  ImpressionRecord r;
  r.item_id = proposal.item_id;
  r.submodel = proposal.submodel;
  r.score = proposal.score;
  r.position = position;
  r.context = context;
  return r;
}
}  // namespace

double value_regression(const RegressionBandit& bandit, const SubmodelProposal& proposal,
                        const FeedContext& context, std::size_t position) {
  return std::clamp(bandit.raw_value(as_record(proposal, context, position)), 0.0, 1.0);
}

void save_vocabularies(const FeatureVocabularies& vocab, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot write " + path.string());
  for (const auto& [kind, v] : {std::pair{"submodel", &vocab.submodels}, std::pair{"device", &vocab.devices},
                                std::pair{"weekday", &vocab.weekdays}})
    for (const auto& level : v->levels) out << kind << '\t' << level << '\n';
}

FeatureVocabularies load_vocabularies(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open vocabulary file " + path.string());
  std::vector<std::string> sm, dev, wd;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = tsv::split(line);
    if (f.size() != 2) throw ValidationError(path.string() + ": malformed vocabulary row");
    if (f[0] == "submodel") sm.emplace_back(f[1]);
    else if (f[0] == "device") dev.emplace_back(f[1]);
    else if (f[0] == "weekday") wd.emplace_back(f[1]);
    else throw ValidationError(path.string() + ": unknown vocabulary kind '" + std::string(f[0]) + "'");
  }
  return {Vocabulary::from(std::move(sm)), Vocabulary::from(std::move(dev)), Vocabulary::from(std::move(wd))};
}

namespace {
std::filesystem::path vocab_path(const std::filesystem::path& p) { return std::filesystem::path(p.string() + ".vocab.tsv"); }
}  // namespace

void save_regression_bandit(const RegressionBandit& bandit, const std::filesystem::path& path) {
  Checkpoint ckpt;
  ckpt.put("weights", Tensor::vector(bandit.weights));
  ckpt.put_scalar("intercept", bandit.intercept);
  ckpt.put_scalar("theta", bandit.theta);
  ckpt.put_scalar("lambda", bandit.lambda);
  ckpt.save(path);
  save_vocabularies(bandit.vocab, vocab_path(path));
}

RegressionBandit load_regression_bandit(const std::filesystem::path& path) {
  const auto ckpt = Checkpoint::load(path);
  RegressionBandit b;
  b.vocab = load_vocabularies(vocab_path(path));
  const auto& w = ckpt.get("weights");
  b.weights.assign(w.data().begin(), w.data().end());
  b.intercept = ckpt.scalar("intercept");
  b.theta = ckpt.scalar("theta");
  b.lambda = ckpt.scalar("lambda");
  return b;
}

// ---------------------------------------------------------------------------
// Deep bandit

namespace {
constexpr std::size_t kScalars = 3;  // score, position, hour
}

DeepBandit::DeepBandit(FeatureVocabularies vocab, std::size_t user_dim, std::size_t hidden1, std::size_t hidden2)
    : vocab_(std::move(vocab)), user_dim_(user_dim), norm_(kScalars) {
  l1_ = Dense(input_dim(), hidden1, Activation::ReLU);
  l2_ = Dense(hidden1, hidden2, Activation::ReLU);
  out_ = Dense(hidden2, 1, Activation::Sigmoid);
}

void DeepBandit::init(Rng& rng) {
  l1_.init(rng);
  l2_.init(rng);
  out_.init(rng);
}

std::size_t DeepBandit::input_dim() const {
  return kScalars + vocab_.submodels.size() + vocab_.devices.size() + vocab_.weekdays.size() + 2 + user_dim_;
}

Tensor DeepBandit::features(std::span<const ImpressionRecord> records) const {
  Tensor x({records.size(), input_dim()});
  for (std::size_t r = 0; r < records.size(); ++r) {
    const auto& rec = records[r];
    auto row = x.row(r);
    row[0] = std::clamp(rec.score, 0.0, 1.0);
    row[1] = static_cast<double>(rec.position);
    row[2] = static_cast<double>(rec.context.hour);
    std::size_t off = kScalars;
    row[off + vocab_.submodels.index(rec.submodel)] = 1.0;
    off += vocab_.submodels.size();
    row[off + vocab_.devices.index(rec.context.device)] = 1.0;
    off += vocab_.devices.size();
    row[off + vocab_.weekdays.index(rec.context.weekday)] = 1.0;
    off += vocab_.weekdays.size();
    row[off + (rec.context.landing == LandingPage::MainFront ? 0 : 1)] = 1.0;
    off += 2;
    if (user_dim_ > 0 && rec.context.user_embedding) {
      const auto& u = *rec.context.user_embedding;
      require(u.size() == user_dim_, "user embedding dimension mismatch");
      std::copy(u.begin(), u.end(), row.begin() + static_cast<std::ptrdiff_t>(off));
    }
  }
  return x;
}

namespace {

// Splits feature rows into the scalar block and the rest.
std::pair<Tensor, Tensor> split_scalars(const Tensor& x) {
  const std::size_t n = x.rows(), rest = x.cols() - kScalars;
  Tensor s({n, kScalars}), o({n, rest});
  for (std::size_t r = 0; r < n; ++r) {
    const auto row = x.row(r);
    std::copy(row.begin(), row.begin() + kScalars, s.row(r).begin());
    std::copy(row.begin() + kScalars, row.end(), o.row(r).begin());
  }
  return {s, o};
}

Tensor join_columns(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.rows();
  Tensor out({n, a.cols() + b.cols()});
  for (std::size_t r = 0; r < n; ++r) {
    std::copy(a.row(r).begin(), a.row(r).end(), out.row(r).begin());
    std::copy(b.row(r).begin(), b.row(r).end(), out.row(r).begin() + static_cast<std::ptrdiff_t>(a.cols()));
  }
  return out;
}

}  // namespace

double DeepBandit::loss(std::span<const ImpressionRecord> records, bool grads) {
  auto [scalars, rest] = split_scalars(features(records));
  Tensor target({records.size()});
  for (std::size_t i = 0; i < records.size(); ++i) target[i] = records[i].clicked ? 1.0 : 0.0;
  BatchNorm::Cache nc;
  Dense::Cache c1, c2, c3;
  const Tensor normed = norm_.forward(scalars, NormMode::Train, grads ? &nc : nullptr);
  const Tensor x = join_columns(normed, rest);
  const Tensor h1 = l1_.forward(x, grads ? &c1 : nullptr);
  const Tensor h2 = l2_.forward(h1, grads ? &c2 : nullptr);
  const Tensor p = out_.forward(h2, grads ? &c3 : nullptr);
  const auto l = weighted_bce_loss(p, target, positive_weight, negative_weight);
  if (grads) {
    zero_grads(params());
    const Tensor dx = l1_.backward(c1, l2_.backward(c2, out_.backward(c3, l.grad)));
    Tensor dscalars({records.size(), kScalars});
    for (std::size_t r = 0; r < records.size(); ++r)
      std::copy(dx.row(r).begin(), dx.row(r).begin() + kScalars, dscalars.row(r).begin());
    norm_.backward(nc, dscalars);
  }
  return l.value;
}

Tensor DeepBandit::raw_probabilities(std::span<const ImpressionRecord> records) const {
  auto [scalars, rest] = split_scalars(features(records));
  const Tensor x = join_columns(norm_.infer(scalars), rest);
  return out_.forward(l2_.forward(l1_.forward(x)));
}

double DeepBandit::calibrate(double q) const {
  const double num = negative_weight * q;
  return num / (num + positive_weight * (1.0 - q));
}

double DeepBandit::predict(const ImpressionRecord& record) const {
  const Tensor p = raw_probabilities(std::span<const ImpressionRecord>(&record, 1));
  return calibrate(p[0]);
}

ParamList DeepBandit::params() {
  ParamList out;
  norm_.collect("norm", out);
  l1_.collect("l1", out);
  l2_.collect("l2", out);
  out_.collect("out", out);
  return out;
}

Checkpoint DeepBandit::to_checkpoint() {
  Checkpoint ckpt;
  ckpt.put("", params());
  ckpt.put("norm.running_mean", norm_.running_mean);
  ckpt.put("norm.running_var", norm_.running_var);
  ckpt.put_scalar("config.user_dim", static_cast<double>(user_dim_));
  ckpt.put_scalar("positive_weight", positive_weight);
  ckpt.put_scalar("negative_weight", negative_weight);
  return ckpt;
}

DeepBandit DeepBandit::from_checkpoint(const Checkpoint& ckpt, FeatureVocabularies vocab) {
  const auto user_dim = static_cast<std::size_t>(ckpt.scalar("config.user_dim"));
  DeepBandit b(std::move(vocab), user_dim, ckpt.get("l1.weight").rows(), ckpt.get("l2.weight").rows());
  ckpt.restore("", b.params());
  b.norm_.running_mean = ckpt.get("norm.running_mean", b.norm_.running_mean.shape());
  b.norm_.running_var = ckpt.get("norm.running_var", b.norm_.running_var.shape());
  b.positive_weight = ckpt.scalar("positive_weight");
  b.negative_weight = ckpt.scalar("negative_weight");
  return b;
}

DeepBandit fit_deep_bandit(std::span<const ImpressionRecord> impressions, const DeepBanditConfig& config) {
  const auto positives = static_cast<std::size_t>(
      std::count_if(impressions.begin(), impressions.end(), [](const auto& r) { return r.clicked; }));
  if (positives == 0 || positives == impressions.size())
    throw ValidationError("deep bandit needs both clicked and unclicked impressions");
  require(config.epochs >= 1 && config.batch >= 2, "deep bandit: epochs >= 1 and batch >= 2 required");

  DeepBandit bandit(FeatureVocabularies::from(impressions), config.user_dim, config.hidden1, config.hidden2);
  bandit.positive_weight = static_cast<double>(impressions.size() - positives) / static_cast<double>(positives);
  bandit.negative_weight = 1.0;
  Rng rng(config.seed);
  bandit.init(rng);
  auto params = bandit.params();

  std::vector<std::size_t> order(impressions.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<ImpressionRecord> probe;
  {
    auto idx = order;
    Rng prng(sub_seed(config.seed, "probe"));
    std::shuffle(idx.begin(), idx.end(), prng);
    for (std::size_t i = 0; i < std::min<std::size_t>(idx.size(), 5000); ++i) probe.push_back(impressions[idx[i]]);
  }
  // Evaluated in train mode so the probe does not depend on running statistics
  // warming up; the saved running stats are then restored.
  auto probe_loss = [&] {
    const auto mean = bandit.norm_.running_mean, var = bandit.norm_.running_var;
    const double v = probe.size() >= 2 ? bandit.loss(probe, false) : 0.0;
    bandit.norm_.running_mean = mean;
    bandit.norm_.running_var = var;
    return v;
  };
  bandit.loss_trace.push_back(probe_loss());

  std::vector<ImpressionRecord> batch;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += config.batch) {
      std::size_t end = std::min(order.size(), start + config.batch);
      if (end - start < 2) break;  // batch norm needs two rows
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(impressions[order[i]]);
      bandit.loss(batch, true);
      sgd_step(params, config.learning_rate, config.l2);
    }
    bandit.loss_trace.push_back(probe_loss());
  }
  return bandit;
}

double value_deep(const DeepBandit& bandit, const SubmodelProposal& proposal, const FeedContext& context,
                  std::size_t position) {
  return bandit.predict(as_record(proposal, context, position));
}

double log_loss(std::span<const double> predicted, std::span<const ImpressionRecord> records) {
  require(predicted.size() == records.size() && !records.empty(), "log loss: size mismatch or empty input");
  double total = 0.0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const double p = std::clamp(predicted[i], 1e-7, 1.0 - 1e-7);
    total -= records[i].clicked ? std::log(p) : std::log(1.0 - p);
  }
  return total / static_cast<double>(records.size());
}

}  // namespace mrsys
