#include "mrsys/policies.hpp"

#include <algorithm>
#include <cmath>

#include "mrsys/error.hpp"
#include "mrsys/random.hpp"

namespace mrsys {

namespace {

bool was_clicked(const FeedRequest& request, const std::string& item) {
  return request.clicked && request.clicked->count(item) > 0;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return aa > 0.0 && bb > 0.0 ? ab / std::sqrt(aa * bb) : 0.0;
}

std::vector<double> unit(std::vector<double> v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  if (n > 0.0)
    for (double& x : v) x /= std::sqrt(n);
  return v;
}

std::vector<ScoredItem> keep_top(std::vector<ScoredItem> scored, std::size_t n) {
  sort_ranked(scored);
  if (scored.size() > n) scored.resize(n);
  return scored;
}

}  // namespace

// ---------------------------------------------------------------------------
// Popularity

Popularity::Popularity(const EventLog& log, std::int64_t now, int days) {
  for (const auto& e : lookback_filter(log, now, days).events())
    if (e.kind == EventKind::Click) max_ = std::max(max_, counts_[e.item_id] += 1.0);
}

double Popularity::score(const std::string& item) const {
  const auto it = counts_.find(item);
  return it == counts_.end() || max_ == 0.0 ? 0.0 : it->second / max_;
}

std::vector<ScoredItem> Popularity::top(const FeedRequest& request, std::size_t n,
                                        const std::function<bool(const std::string&)>& keep) const {
  std::vector<ScoredItem> scored;
  for (const auto& id : request.active_items)
    if (!keep || keep(id)) scored.push_back({id, score(id)});
  return keep_top(std::move(scored), n);
}

void fill_with_popular(std::vector<FeedEntry>& feed, const FeedRequest& request, const Popularity& popularity,
                       const std::string& label) {
  if (feed.size() >= request.slots) return;
  std::unordered_set<std::string> used;
  for (const auto& e : feed) used.insert(e.item_id);
  const auto extra = popularity.top(request, request.slots - feed.size() + used.size(), [&](const std::string& id) {
    return !used.count(id) && !was_clicked(request, id);
  });
  for (const auto& s : extra) {
    if (feed.size() >= request.slots) break;
    feed.push_back({s.item_id, label, s.score});
  }
}

std::vector<FeedEntry> PopularPolicy::serve(const FeedRequest& request) {
  std::vector<FeedEntry> feed;
  fill_with_popular(feed, request, popularity_, name());
  return feed;
}

// ---------------------------------------------------------------------------
// MF and sequence

std::vector<FeedEntry> MfPolicy::serve(const FeedRequest& request) {
  std::vector<FeedEntry> feed;
  if (model_.row_ids.find(request.user_id)) {
    static const std::unordered_set<std::string> kNone;
    const auto recs = mf_recommend(model_, request.user_id, request.clicked ? *request.clicked : kNone, request.slots,
                                   [&](const std::string& id) { return request.active->count(id) > 0; });
    for (const auto& r : recs) feed.push_back({r.item_id, name(), r.score});
  }
  fill_with_popular(feed, request, fallback_, "popular");
  return feed;
}

std::vector<FeedEntry> SeqPolicy::serve(const FeedRequest& request) {
  if (catalog_day_ != request.day) {
    catalog_.clear();
    for (const auto& id : request.active_items)
      if (const auto it = table_.find(id); it != table_.end()) catalog_.emplace(id, it->second);
    catalog_day_ = request.day;
  }
  std::vector<std::string> history;
  for (const auto& id : request.recent_clicks)
    if (table_.count(id)) history.push_back(id);
  if (history.size() > model_.n()) history.erase(history.begin(), history.end() - static_cast<std::ptrdiff_t>(model_.n()));

  std::vector<FeedEntry> feed;
  if (!history.empty() && !catalog_.empty()) {
    const std::size_t clicked = request.clicked ? request.clicked->size() : 0;
    for (const auto& r : seq_recommend(model_, history, table_, catalog_, request.slots + clicked)) {
      if (was_clicked(request, r.item_id)) continue;
      feed.push_back({r.item_id, name(), r.score});
      if (feed.size() == request.slots) break;
    }
  }
  fill_with_popular(feed, request, fallback_, "popular");
  return feed;
}

// ---------------------------------------------------------------------------
// Bandit feeds

const char* to_string(FeedMode mode) {
  switch (mode) {
    case FeedMode::Explore: return "explore";
    case FeedMode::RowSeparated: return "row";
    case FeedMode::Regression: return "regression";
    case FeedMode::Deep: return "deep";
  }
  return "?";
}

FeedMode parse_feed_mode(std::string_view text) {
  if (text == "explore") return FeedMode::Explore;
  if (text == "row") return FeedMode::RowSeparated;
  if (text == "regression") return FeedMode::Regression;
  if (text == "deep") return FeedMode::Deep;
  throw ValidationError("unknown feed mode '" + std::string(text) + "' (expected explore, row, regression or deep)");
}

BanditPolicy::BanditPolicy(const SubmodelSources& sources, FeedMode mode, BanditFeedConfig config)
    : sources_(sources), mode_(mode), config_(std::move(config)) {
  handles_ = handles();
}

std::string BanditPolicy::name() const { return std::string("bandit-") + to_string(mode_); }

std::vector<SubmodelHandle> BanditPolicy::handles() {
  std::vector<SubmodelHandle> out;
  const auto active = [this](const std::string& id) { return current_->active->count(id) > 0; };

  if (sources_.factors)
    out.push_back({"mf", [this, active](const std::string& user, const FeedContext&, std::size_t n) {
                     if (!sources_.factors->row_ids.find(user)) return std::vector<ScoredItem>{};
                     return mf_recommend(*sources_.factors, user, {}, n, active);
                   }});
  if (sources_.item_vectors)
    out.push_back({"similar", [this](const std::string&, const FeedContext&, std::size_t n) {
                     const auto& recent = current_->recent_clicks;
                     if (recent.empty()) return std::vector<ScoredItem>{};
                     const auto q = sources_.item_vectors->find(recent.back());
                     if (q == sources_.item_vectors->end()) return std::vector<ScoredItem>{};
                     std::vector<ScoredItem> scored;
                     for (const auto& id : current_->active_items) {
                       if (id == recent.back()) continue;
                       if (const auto v = sources_.item_vectors->find(id); v != sources_.item_vectors->end())
                         scored.push_back({id, cosine(q->second, v->second)});
                     }
                     return keep_top(std::move(scored), n);
                   }});
  if (sources_.popularity) {
    out.push_back({"category", [this](const std::string&, const FeedContext&, std::size_t n) {
                     std::map<std::string, int> votes;
                     for (const auto& id : current_->recent_clicks)
                       if (const auto c = sources_.item_category.find(id); c != sources_.item_category.end())
                         ++votes[c->second];
                     if (votes.empty()) return std::vector<ScoredItem>{};
                     const auto best = std::max_element(votes.begin(), votes.end(), [](const auto& a, const auto& b) {
                                         return a.second < b.second;
                                       })->first;
                     auto top = sources_.popularity->top(*current_, n, [&](const std::string& id) {
                       const auto c = sources_.item_category.find(id);
                       return c != sources_.item_category.end() && c->second == best;
                     });
                     const double lead = top.empty() ? 0.0 : top.front().score;
                     for (auto& s : top) s.score = lead > 0.0 ? s.score / lead : 0.0;
                     return top;
                   }});
    out.push_back({"popular", [this](const std::string&, const FeedContext&, std::size_t n) {
                     return sources_.popularity->top(*current_, n);
                   }});
  }
  if (!sources_.listed_day.empty())
    out.push_back({"fresh", [this](const std::string&, const FeedContext&, std::size_t n) {
                     std::vector<ScoredItem> scored;
                     for (const auto& id : current_->active_items) {
                       const auto d = sources_.listed_day.find(id);
                       if (d == sources_.listed_day.end()) continue;
                       scored.push_back({id, std::exp(-std::max(0, current_->day - d->second) / 3.0)});
                     }
                     return keep_top(std::move(scored), n);
                   }});
  out.push_back({"random", [this](const std::string&, const FeedContext&, std::size_t n) {
                   Rng rng(sub_seed(current_->seed, "random-submodel"));
                   std::vector<std::string> pool(current_->active_items.begin(), current_->active_items.end());
                   std::vector<ScoredItem> picked;
                   for (std::size_t i = 0; i < std::min(n, pool.size()); ++i) {
                     std::swap(pool[i], pool[i + uniform_index(rng, pool.size() - i)]);
                     picked.push_back({pool[i], uniform01(rng)});
                   }
                   return picked;
                 }});
  return out;
}

std::vector<FeedEntry> BanditPolicy::serve(const FeedRequest& request) {
  if (request.active_items.empty()) return {};
  current_ = &request;
  FeedContext context = request.context;
  if (users_) {
    if (const auto u = users_->find(request.user_id); u != users_->end()) context.user_embedding = unit(u->second);
  }
  const auto proposals = collect_proposals(request.user_id, context, handles_, config_.per_model_n);
  current_ = nullptr;

  std::vector<FeedEntry> feed;
  const auto emit = [&](const SubmodelProposal& p) { feed.push_back({p.item_id, p.submodel, p.score}); };
  switch (mode_) {
    case FeedMode::RowSeparated: {
      const std::size_t rows = std::max<std::size_t>(1, config_.row_order.size());
      const std::size_t width = (request.slots + rows - 1) / rows;
      for (const auto& p : rank_row_separated(proposals, config_.row_order, width)) {
        if (feed.size() == request.slots) break;
        emit(p);
      }
      break;
    }
    case FeedMode::Explore: {
      const ValueFn flat = [](const SubmodelProposal&, const FeedContext&, std::size_t) { return 0.0; };
      for (const auto& s : rerank(proposals, context, flat, 1.0, request.slots, request.seed)) emit(s.proposal);
      break;
    }
    case FeedMode::Regression: {
      if (!regression_) throw RuntimeError("regression feed has no fitted bandit");
      const ValueFn value = [this](const SubmodelProposal& p, const FeedContext& c, std::size_t pos) {
        return value_regression(*regression_, p, c, pos);
      };
      for (const auto& s : rerank(proposals, context, value, config_.epsilon, request.slots, request.seed))
        emit(s.proposal);
      break;
    }
    case FeedMode::Deep: {
      if (!deep_) throw RuntimeError("deep feed has no fitted bandit");
      const ValueFn value = [this](const SubmodelProposal& p, const FeedContext& c, std::size_t pos) {
        return value_deep(*deep_, p, c, pos);
      };
      for (const auto& s : rerank(proposals, context, value, config_.epsilon, request.slots, request.seed))
        emit(s.proposal);
      break;
    }
  }
  return feed;
}

void attach_user_vectors(std::vector<ImpressionRecord>& records, const Embeddings& users, std::size_t dim) {
  for (auto& r : records) {
    const auto u = users.find(r.user_id);
    r.context.user_embedding = u != users.end() ? unit(u->second) : std::vector<double>(dim, 0.0);
  }
}

}  // namespace mrsys
