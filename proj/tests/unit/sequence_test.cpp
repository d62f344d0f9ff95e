#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "mrsys/error.hpp"
#include "mrsys/sequence.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace mrsys;
using testutil::ev;

namespace {

Embeddings random_table(std::size_t items, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  Embeddings table;
  for (std::size_t i = 0; i < items; ++i) {
    std::vector<double> v(d);
    for (double& x : v) x = gaussian(rng);
    table["i" + std::to_string(100 + i)] = v;
  }
  return table;
}

using Strings = std::vector<std::string>;

}  // namespace

TEST_CASE("sequence building") {
  SUBCASE("three clicks, n=2, k=1") {
    EventLog log({ev("u", "c1", 1), ev("u", "c2", 2), ev("u", "c3", 3)});
    const auto ex = build_sequences(log, 2, 1);
    REQUIRE(ex.size() == 1);
    CHECK(ex[0].history == Strings{"c1", "c2"});
    CHECK(ex[0].future == Strings{"c3"});
  }
  SUBCASE("window truncation and conversions ignored") {
    EventLog log({ev("u", "a", 1), ev("u", "b", 2), ev("u", "x", 3, EventKind::Conversion), ev("u", "c", 4),
                  ev("u", "d", 5), ev("v", "e", 1)});
    const auto ex = build_sequences(log, 2, 5);
    REQUIRE(ex.size() == 2);
    CHECK(ex[0].history == Strings{"a", "b"});
    CHECK(ex[0].future == Strings{"c", "d"});
    CHECK(ex[1].history == Strings{"b", "c"});
    CHECK(ex[1].future == Strings{"d"});
  }
  SUBCASE("single click user and n=1") {
    EventLog log({ev("u", "a", 1)});
    CHECK(build_sequences(log, 2, 1).empty());
    CHECK_THROWS_AS(build_sequences(log, 1, 1), ValidationError);
    CHECK_THROWS_AS(build_sequences(log, 2, 0), ValidationError);
  }
  SUBCASE("latest histories and dump") {
    EventLog log({ev("u", "a", 1), ev("u", "b", 2), ev("u", "c", 3)});
    CHECK(latest_histories(log, 2).at("u") == Strings{"b", "c"});
    testutil::TempDir dir;
    save_sequences(build_sequences(log, 2, 1), dir / "seq.tsv");
    CHECK(testutil::read_file(dir / "seq.tsv") == "u\ta,b\tc\n");
  }
}

TEST_CASE("sequence accuracy") {
  const Embeddings table{{"a", {1, 0}}, {"b", {0, 1}}, {"c", {1, 1}}};
  CHECK(seq_accuracy({{2, 0}, {0, 3}}, Strings{"a", "b"}, table) == doctest::Approx(1.0));
  CHECK(seq_accuracy({{0, 1}, {1, 0}}, Strings{"a", "b"}, table) == doctest::Approx(0.0));
  // (cos 0 + cos 45deg) / 2, and truncation to the shorter side
  CHECK(seq_accuracy({{1, 0}, {1, 0}}, Strings{"a", "c"}, table) == doctest::Approx((1.0 + std::sqrt(0.5)) / 2));
  CHECK(seq_accuracy({{1, 0}, {1, 0}}, Strings{"a"}, table) == doctest::Approx(1.0));
  CHECK(seq_accuracy({{-1, 0}}, Strings{"a"}, table) == doctest::Approx(-1.0));
  CHECK_THROWS_AS(seq_accuracy({{1, 0}}, Strings{}, table), ValidationError);
}

TEST_CASE("sequence model gradient through GRU, projection and cosine loss") {
  const auto table = random_table(6, 3, 4);
  SeqModel model(3, 4, 3, 2);
  Rng rng(9);
  model.init(rng);
  const std::vector<SequenceExample> examples{
      {"u", {"i100", "i101", "i102", "i103"}, {"i104", "i105"}},
      {"v", {"i105", "i102"}, {"i100"}}};
  auto params = model.params();
  const double err = grad_check(
      params, [&] { return model.loss(examples, table, false); }, [&] { model.loss(examples, table, true); });
  CHECK(err <= 1e-5);
}

TEST_CASE("sequence model contracts") {
  const auto table = random_table(10, 100, 1);
  SeqModel model(100, 16, 3, 5);
  Rng rng(2);
  model.init(rng);
  const Strings history{"i100", "i101", "i102", "i103", "i104"};
  const auto p = predict_next(model, history, table);
  REQUIRE(p.size() == 5);
  CHECK(p[0].size() == 100);
  CHECK(predict_next(model, history, table) == p);
  // only the last n items matter
  const Strings other_prefix{"i109", "i108", "i102", "i103", "i104"};
  CHECK(predict_next(model, other_prefix, table) == p);
  // order matters
  const Strings reversed{"i104", "i103", "i102"};
  CHECK(predict_next(model, reversed, table) != p);
  // shorter than n: T equals the actual length, no padding rows
  const Strings shorter{"i102", "i103", "i104"};
  CHECK(model.history_inputs(Strings{"i103", "i104"}, table).rows() == 2);
  CHECK(predict_next(model, shorter, table) == p);
  CHECK_THROWS_AS(predict_next(model, Strings{}, table), ValidationError);
  CHECK_THROWS_AS(predict_next(model, Strings{"zz"}, table), ValidationError);

  SUBCASE("recommendation") {
    const auto recs = seq_recommend(model, history, table, 100);
    CHECK(recs.size() == 5);
    for (const auto& r : recs) CHECK(std::find(history.begin(), history.end(), r.item_id) == history.end());
    std::vector<ScoredItem> brute;
    for (const auto& [id, vec] : table) {
      if (std::find(history.begin(), history.end(), id) != history.end()) continue;
      double best = -2;
      for (const auto& q : p) best = std::max(best, oracle::cosine(q, vec));
      brute.push_back({id, best});
    }
    std::sort(brute.begin(), brute.end(), [](const auto& a, const auto& b) {
      return a.score != b.score ? a.score > b.score : a.item_id < b.item_id;
    });
    for (std::size_t i = 0; i < brute.size(); ++i) {
      CHECK(recs[i].item_id == brute[i].item_id);
      CHECK(recs[i].score == doctest::Approx(brute[i].score).epsilon(1e-12));
    }
  }
  SUBCASE("checkpoint round-trip") {
    const auto restored = SeqModel::from_checkpoint(model.to_checkpoint());
    CHECK(predict_next(restored, history, table) == p);
  }
}

TEST_CASE("sequence model learns a nearest-neighbour successor rule") {
  constexpr std::size_t kItems = 30, kDim = 100;
  const auto table = random_table(kItems, kDim, 12);
  std::vector<std::string> ids;
  for (const auto& [id, v] : table) ids.push_back(id);
  auto successor = [&](const std::string& id) {
    std::string best;
    double best_cos = -2;
    for (const auto& other : ids) {
      if (other == id) continue;
      const double c = oracle::cosine(table.at(id), table.at(other));
      if (c > best_cos) best_cos = c, best = other;
    }
    return best;
  };
  Rng rng(3);
  std::vector<Event> events;
  for (int u = 0; u < 150; ++u) {
    std::string item = ids[uniform_index(rng, ids.size())];
    for (int t = 0; t < 6; ++t) {
      events.push_back(ev("u" + std::to_string(u), item, t));
      item = successor(item);
    }
  }
  const auto examples = build_sequences(EventLog(std::move(events)), 3, 2);
  SeqConfig cfg;
  cfg.n = 3;
  cfg.k = 2;
  cfg.hidden = 32;
  cfg.epochs = 30;
  cfg.seed = 8;
  const auto model = train_sequence_model(examples, table, cfg);
  CHECK(model.loss_trace.back() < model.loss_trace.front());
  double acc = 0.0;
  for (const auto& ex : examples) acc += seq_accuracy(predict_next(model, ex.history, table), ex.future, table);
  acc /= static_cast<double>(examples.size());
  MESSAGE("successor-rule accuracy = ", acc);
  CHECK(acc >= 0.8);

  const auto again = train_sequence_model(examples, table, cfg);
  CHECK(predict_next(again, examples[0].history, table) == predict_next(model, examples[0].history, table));

  SUBCASE("items matching the predictions rank first") {
    const auto& ex = examples[5];
    auto catalog = table;
    const auto preds = predict_next(model, ex.history, table);
    catalog["next0"] = preds[0];
    catalog["next1"] = preds[1];
    const auto recs = seq_recommend(model, ex.history, catalog, 2);
    REQUIRE(recs.size() == 2);
    const std::set<std::string> top{recs[0].item_id, recs[1].item_id};
    CHECK(top == std::set<std::string>{"next0", "next1"});
    CHECK(recs[1].score == doctest::Approx(1.0));
  }

  Embeddings missing = table;
  missing.erase(examples[0].future[0]);
  CHECK_THROWS_AS(train_sequence_model(examples, missing, cfg), RuntimeError);
  CHECK_THROWS_AS(train_sequence_model({}, table, cfg), ValidationError);
}
