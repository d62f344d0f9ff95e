#include "mrsys/hybrid.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mrsys/error.hpp"

namespace mrsys {

const char* to_string(Source s) {
  switch (s) {
    case Source::Behavioral: return "behavioral";
    case Source::Text: return "text";
    case Source::Image: return "image";
    case Source::Location: return "location";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Representation set

ItemRepresentationSet::ItemRepresentationSet(SourceDims dims) : dims_(dims) {
  for (auto d : dims_) require(d >= 1, "source dimensions must be positive");
}

void ItemRepresentationSet::set(const std::string& item, Source source, std::vector<double> vector) {
  const auto s = static_cast<std::size_t>(source);
  if (vector.size() != dims_[s])
    throw ValidationError(std::string("dimension mismatch for ") + to_string(source) + " vector of '" +
                          item + "': got " + std::to_string(vector.size()) + ", expected " +
                          std::to_string(dims_[s]));
  for (double v : vector)
    if (!std::isfinite(v)) throw ValidationError("non-finite " + std::string(to_string(source)) + " vector for '" + item + "'");
  items_[item][s] = std::move(vector);
}

void ItemRepresentationSet::add(Source source, const Embeddings& table) {
  for (const auto& [id, vec] : table) set(id, source, vec);
}

void ItemRepresentationSet::add_location(const Embeddings& postcode_vectors,
                                         const std::map<std::string, std::string>& item_postcode) {
  for (const auto& [item, postcode] : item_postcode) {
    auto it = postcode_vectors.find(postcode);
    if (it != postcode_vectors.end()) set(item, Source::Location, it->second);
  }
}

bool ItemRepresentationSet::contains(const std::string& item) const {
  auto it = items_.find(item);
  if (it == items_.end()) return false;
  return std::any_of(it->second.begin(), it->second.end(), [](const auto& v) { return v.has_value(); });
}

bool ItemRepresentationSet::has(const std::string& item, Source source) const {
  auto it = items_.find(item);
  return it != items_.end() && it->second[static_cast<std::size_t>(source)].has_value();
}

const std::optional<std::vector<double>>& ItemRepresentationSet::get(const std::string& item,
                                                                     Source source) const {
  static const std::optional<std::vector<double>> absent;
  auto it = items_.find(item);
  return it == items_.end() ? absent : it->second[static_cast<std::size_t>(source)];
}

std::vector<std::string> ItemRepresentationSet::item_ids() const {
  std::vector<std::string> ids;
  for (const auto& [id, sources] : items_)
    if (std::any_of(sources.begin(), sources.end(), [](const auto& v) { return v.has_value(); }))
      ids.push_back(id);
  return ids;
}

std::size_t ItemRepresentationSet::total_dim() const {
  return std::accumulate(dims_.begin(), dims_.end(), std::size_t{0});
}

void ItemRepresentationSet::encode(const std::string& item, std::span<double> row,
                                   std::span<double> mask, std::array<bool, kSourceCount> dropped) const {
  auto it = items_.find(item);
  std::fill(row.begin(), row.end(), 0.0);
  std::fill(mask.begin(), mask.end(), 0.0);
  bool any = false;
  std::size_t off = 0;
  for (std::size_t s = 0; s < kSourceCount; off += dims_[s], ++s) {
    if (it == items_.end() || !it->second[s] || dropped[s]) continue;
    const auto& v = *it->second[s];
    const double n = norm(v);
    if (n == 0.0) continue;
    for (std::size_t j = 0; j < v.size(); ++j) row[off + j] = v[j] / n;
    mask[s] = 1.0;
    any = true;
  }
  if (!any) throw ValidationError("item '" + item + "' has no source representation");
}

// ---------------------------------------------------------------------------
// Pairs

std::vector<TrainingPair> mine_co_converted_pairs(const EventLog& log) {
  std::map<std::pair<std::string, std::int64_t>, std::set<std::string>> baskets;
  for (const auto& e : log.events())
    if (e.kind == EventKind::Conversion) baskets[{e.user_id, e.timestamp / kSecondsPerDay}].insert(e.item_id);
  std::set<std::pair<std::string, std::string>> pairs;
  for (const auto& [key, items] : baskets)
    for (auto a = items.begin(); a != items.end(); ++a)
      for (auto b = std::next(a); b != items.end(); ++b) pairs.insert({*a, *b});
  std::vector<TrainingPair> out;
  for (const auto& [a, b] : pairs) out.push_back({a, b, PairLabel::CoConverted});
  return out;
}

std::vector<TrainingPair> sample_negative_pairs(const std::map<std::string, std::string>& item_category,
                                                std::span<const TrainingPair> positives,
                                                std::size_t count, std::uint64_t seed) {
  if (count == 0) return {};
  if (item_category.size() < 2) throw ValidationError("negative sampling needs at least two items");
  std::vector<const std::pair<const std::string, std::string>*> items;
  for (const auto& kv : item_category) items.push_back(&kv);
  std::set<std::pair<std::string, std::string>> excluded;
  for (const auto& p : positives) excluded.insert(std::minmax(p.item_a, p.item_b));

  Rng rng(seed);
  const std::size_t max_attempts = std::max<std::size_t>(1000, 100 * count);
  std::vector<TrainingPair> out;
  for (std::size_t attempt = 0; attempt < max_attempts && out.size() < count; ++attempt) {
    const auto* a = items[uniform_index(rng, items.size())];
    const auto* b = items[uniform_index(rng, items.size())];
    if (a->second == b->second) continue;
    auto key = std::minmax(a->first, b->first);
    if (excluded.count(key)) continue;
    out.push_back({key.first, key.second, PairLabel::Negative});
  }
  if (out.size() < count)
    throw ValidationError("could not sample " + std::to_string(count) + " cross-category negative pairs after " +
                          std::to_string(max_attempts) + " attempts");
  return out;
}

// ---------------------------------------------------------------------------
// Encoder

HybridEncoder::HybridEncoder(SourceDims dims, std::size_t hidden, std::size_t output)
    : dims_(dims),
      gate_(std::vector<std::size_t>(dims.begin(), dims.end())),
      hidden_(gate_.total_dim(), hidden, Activation::ReLU),
      out_(hidden, output, Activation::Identity) {}

void HybridEncoder::init(Rng& rng) {
  gate_.init(rng);
  hidden_.init(rng);
  out_.init(rng);
}

Tensor HybridEncoder::forward(const Tensor& x, const Tensor& mask, Cache* cache) const {
  const Tensor g = gate_.forward(x, mask, cache ? &cache->gate : nullptr);
  const Tensor h = hidden_.forward(g, cache ? &cache->hidden : nullptr);
  return out_.forward(h, cache ? &cache->out : nullptr);
}

void HybridEncoder::backward(const Cache& cache, const Tensor& dy) {
  gate_.backward(cache.gate, hidden_.backward(cache.hidden, out_.backward(cache.out, dy)));
}

ParamList HybridEncoder::params() {
  ParamList out;
  gate_.collect("gate", out);
  hidden_.collect("hidden", out);
  out_.collect("out", out);
  return out;
}

std::vector<double> HybridEncoder::embed(const std::string& item, const ItemRepresentationSet& reps) const {
  require(reps.dims() == dims_, "representation dimensions do not match the encoder");
  Tensor x({1, gate_.total_dim()}), mask({1, kSourceCount});
  reps.encode(item, x.row(0), mask.row(0));
  const Tensor y = forward(x, mask);
  return {y.data().begin(), y.data().end()};
}

std::vector<double> HybridEncoder::attention(const std::string& item, const ItemRepresentationSet& reps) const {
  Tensor x({1, gate_.total_dim()}), mask({1, kSourceCount});
  reps.encode(item, x.row(0), mask.row(0));
  Cache cache;
  forward(x, mask, &cache);
  return {cache.gate.weights.data().begin(), cache.gate.weights.data().end()};
}

double HybridEncoder::pair_loss(std::span<const TrainingPair> pairs, const ItemRepresentationSet& reps,
                                double margin, bool grads,
                                std::span<const std::array<bool, kSourceCount>> dropped) {
  require(!pairs.empty(), "pair loss needs at least one pair");
  const std::size_t n = pairs.size();
  Tensor x({2 * n, gate_.total_dim()}), mask({2 * n, kSourceCount}), labels({n});
  for (std::size_t i = 0; i < n; ++i) {
    const std::array<bool, kSourceCount> none{};
    reps.encode(pairs[i].item_a, x.row(i), mask.row(i), dropped.empty() ? none : dropped[2 * i]);
    reps.encode(pairs[i].item_b, x.row(n + i), mask.row(n + i), dropped.empty() ? none : dropped[2 * i + 1]);
    labels[i] = pairs[i].label == PairLabel::CoConverted ? 1.0 : 0.0;
  }
  Cache cache;
  const Tensor y = forward(x, mask, grads ? &cache : nullptr);
  const auto loss = cosine_contrastive_loss(y, labels, margin);
  if (grads) {
    zero_grads(params());
    backward(cache, loss.grad);
  }
  return loss.value;
}

Checkpoint HybridEncoder::to_checkpoint() {
  Checkpoint ckpt;
  ckpt.put("", params());
  std::vector<double> dims(dims_.begin(), dims_.end());
  ckpt.put("config.source_dims", Tensor::vector(dims));
  return ckpt;
}

HybridEncoder HybridEncoder::from_checkpoint(const Checkpoint& ckpt) {
  const auto& d = ckpt.get("config.source_dims");
  require(d.size() == kSourceCount, "hybrid checkpoint: bad source_dims record");
  SourceDims dims{};
  for (std::size_t s = 0; s < kSourceCount; ++s) dims[s] = static_cast<std::size_t>(d[s]);
  const auto& hidden = ckpt.get("hidden.weight");
  const auto& out = ckpt.get("out.weight");
  HybridEncoder enc(dims, hidden.rows(), out.rows());
  ckpt.restore("", enc.params());
  return enc;
}

HybridEncoder train_hybrid(std::span<const TrainingPair> pairs, const ItemRepresentationSet& reps,
                           const HybridConfig& config) {
  const auto positives = std::count_if(pairs.begin(), pairs.end(),
                                       [](const auto& p) { return p.label == PairLabel::CoConverted; });
  if (positives == 0 || positives == static_cast<std::ptrdiff_t>(pairs.size()))
    throw ValidationError("hybrid training needs both co-converted and negative pairs");
  require(config.epochs >= 1 && config.batch >= 1, "hybrid: epochs and batch must be positive");
  require(config.source_dropout >= 0.0 && config.source_dropout < 1.0, "hybrid: source_dropout must be in [0, 1)");
  for (const auto& p : pairs) {
    if (p.item_a == p.item_b) throw ValidationError("training pair repeats item '" + p.item_a + "'");
    if (!reps.contains(p.item_a)) throw ValidationError("no representation for '" + p.item_a + "'");
    if (!reps.contains(p.item_b)) throw ValidationError("no representation for '" + p.item_b + "'");
  }

  Rng rng(config.seed);
  HybridEncoder enc(reps.dims(), config.hidden, config.output);
  enc.init(rng);
  auto params = enc.params();

  std::vector<TrainingPair> work(pairs.begin(), pairs.end());
  if (config.max_pairs > 0 && work.size() > config.max_pairs) {
    std::shuffle(work.begin(), work.end(), rng);
    work.resize(config.max_pairs);
  }
  // Loss is tracked on a fixed subset so the trace stays cheap on large pair sets.
  std::vector<TrainingPair> probe(work.begin(), work.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(work.size(), 2000)));
  auto probe_loss = [&] { return enc.pair_loss(probe, reps, config.margin, false); };
  enc.loss_trace.push_back(probe_loss());

  auto can_drop = [&](const std::string& item) {
    if (!reps.has(item, Source::Behavioral)) return false;
    for (auto s : {Source::Text, Source::Image, Source::Location})
      if (reps.has(item, s)) return true;
    return false;
  };

  std::vector<TrainingPair> batch;
  std::vector<std::array<bool, kSourceCount>> dropped;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(work.begin(), work.end(), rng);
    for (std::size_t start = 0; start < work.size(); start += config.batch) {
      const std::size_t end = std::min(work.size(), start + config.batch);
      batch.assign(work.begin() + static_cast<std::ptrdiff_t>(start), work.begin() + static_cast<std::ptrdiff_t>(end));
      dropped.assign(2 * batch.size(), {});
      for (std::size_t i = 0; i < batch.size(); ++i) {
        if (can_drop(batch[i].item_a) && uniform01(rng) < config.source_dropout) dropped[2 * i][0] = true;
        if (can_drop(batch[i].item_b) && uniform01(rng) < config.source_dropout) dropped[2 * i + 1][0] = true;
      }
      enc.pair_loss(batch, reps, config.margin, true, dropped);
      sgd_step(params, config.learning_rate, config.l2);
    }
    enc.loss_trace.push_back(probe_loss());
  }
  return enc;
}

std::vector<double> hybrid_embed(const std::string& item, const HybridEncoder& encoder,
                                 const ItemRepresentationSet& reps) {
  return encoder.embed(item, reps);
}

Embeddings hybrid_embed_all(const HybridEncoder& encoder, const ItemRepresentationSet& reps) {
  Embeddings table;
  const auto ids = reps.item_ids();
  if (ids.empty()) return table;
  const std::size_t chunk = 256;
  for (std::size_t start = 0; start < ids.size(); start += chunk) {
    const std::size_t end = std::min(ids.size(), start + chunk);
    Tensor x({end - start, reps.total_dim()}), mask({end - start, kSourceCount});
    for (std::size_t i = start; i < end; ++i) reps.encode(ids[i], x.row(i - start), mask.row(i - start));
    const Tensor y = encoder.forward(x, mask);
    for (std::size_t i = start; i < end; ++i) {
      const auto r = y.row(i - start);
      table[ids[i]] = std::vector<double>(r.begin(), r.end());
    }
  }
  return table;
}

std::vector<ScoredItem> similar_items(const std::string& query, const Embeddings& table, std::size_t top_n) {
  auto q = table.find(query);
  if (q == table.end()) throw ValidationError("item '" + query + "' cannot be embedded");
  std::vector<ScoredItem> scored;
  scored.reserve(table.size());
  for (const auto& [id, vec] : table)
    if (id != query) scored.push_back({id, cosine(q->second, vec)});
  const std::size_t n = std::min(top_n, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n), scored.end(),
                    [](const ScoredItem& a, const ScoredItem& b) {
                      return a.score != b.score ? a.score > b.score : a.item_id < b.item_id;
                    });
  scored.resize(n);
  return scored;
}

std::vector<ScoredItem> similar_items(const std::string& query, const HybridEncoder& encoder,
                                      const ItemRepresentationSet& reps, std::size_t top_n) {
  if (!reps.contains(query)) throw ValidationError("item '" + query + "' cannot be embedded");
  return similar_items(query, hybrid_embed_all(encoder, reps), top_n);
}

}  // namespace mrsys
