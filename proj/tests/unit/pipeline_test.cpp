#include <doctest.h>

#include "mrsys/error.hpp"
#include "mrsys/pipeline.hpp"
#include "test_util.hpp"

using namespace mrsys;
namespace fs = std::filesystem;

namespace {

// Small enough that the whole chain runs in a few seconds.
PipelineConfig tiny_config() {
  return parse_pipeline_config(R"(
seed = 11
market.n_users = 150
market.n_items = 160
market.history_days = 10
market.sim_days = 2
als.dim = 6
als.iterations = 3
location.dim = 4
location.iterations = 3
word2vec.dim = 12
word2vec.epochs = 2
text.filters = 6
text.repr_dim = 8
text.epochs = 2
image.hidden = 16
image.epochs = 2
hybrid.hidden = 16
hybrid.output = 8
hybrid.epochs = 2
seq.hidden = 8
seq.epochs = 1
seq.max_examples = 300
deep.hidden1 = 8
deep.hidden2 = 4
deep.epochs = 1
)");
}

void run_all(const PipelineConfig& cfg, const fs::path& dir) {
  run_generate(cfg, dir);
  run_train_als(cfg, dir);
  run_train_location(cfg, dir);
  run_train_text(cfg, dir);
  run_train_image(cfg, dir);
  run_train_hybrid(cfg, dir);
  run_train_seq(cfg, dir);
  run_fit_bandit(cfg, dir, FeedMode::RowSeparated);
  run_fit_bandit(cfg, dir, FeedMode::Regression);
  run_fit_bandit(cfg, dir, FeedMode::Deep);
  run_evaluate_hr(cfg, dir);
  run_ab_sim(cfg, dir);
  run_report(dir);
}

}  // namespace

TEST_CASE("config text parses, validates and round-trips") {
  const auto defaults = parse_pipeline_config("");
  CHECK(defaults.als.dim == 16);
  CHECK(defaults.market.feed_slots == 12);
  CHECK(defaults.seq.n == 15);
  CHECK(defaults.seq.k == 5);

  auto cfg = parse_pipeline_config("# comment\nals.dim = 32  # trailing\n\nab.ramp = 0.01, 0.5\nab.ramp_days = 1,2\n");
  CHECK(cfg.als.dim == 32);
  REQUIRE(cfg.ramp.size() == 2);
  CHECK(cfg.ramp[1] == 0.5);
  CHECK(cfg.ramp_plan().stages.size() == 2);

  cfg.bandit_theta = 0.1 + 0.2;  // needs the shortest round-trip form
  const auto again = parse_pipeline_config(cfg.dump());
  CHECK(again.dump() == cfg.dump());
  CHECK(again.bandit_theta == cfg.bandit_theta);
  const auto text = cfg.dump();
  CHECK(PipelineConfig::keys().size() == static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')));
}

TEST_CASE("config errors name the line and the key") {
  const auto message = [](const char* text) -> std::string {
    try {
      parse_pipeline_config(text);
    } catch (const ValidationError& e) {
      return e.what();
    }
    return "";
  };
  CHECK(message("als.dim = 8\nals.dimm = 3\n").find("line 2") != std::string::npos);
  CHECK(message("als.dimm = 3\n").find("als.dimm") != std::string::npos);
  CHECK(message("als.dim = 8\nals.dim = 9\n").find("duplicate") != std::string::npos);
  CHECK(message("als.dim 8\n").find("key = value") != std::string::npos);
  CHECK(message("als.dim = -1\n").find("non-negative") != std::string::npos);
  CHECK(message("seq.n = 1\n").find("seq.n") != std::string::npos);
  CHECK(message("bandit.theta = 1.5\n") != "");
  CHECK(message("ab.policy_b = magic\n").find("magic") != std::string::npos);
  CHECK(message("ab.ramp = 0.2\n").find("same number") != std::string::npos);
  CHECK(message("ab.ramp = 0.5,0.2\nab.ramp_days = 1,1\n") != "");
  CHECK(message("bandit.row_order = popular,mf\n").find("missing") != std::string::npos);
  CHECK_THROWS_AS(load_pipeline_config("/nonexistent/x.cfg"), ValidationError);
}

TEST_CASE("stage seeds differ by name and follow the root seed") {
  PipelineConfig a, b;
  b.seed = 2;
  CHECK(a.stage_seed("als") != a.stage_seed("hybrid"));
  CHECK(a.stage_seed("als") != b.stage_seed("als"));
  CHECK(a.stage_seed("als") == PipelineConfig().stage_seed("als"));
}

TEST_CASE("stages report missing inputs as validation errors") {
  testutil::TempDir dir;
  const auto cfg = tiny_config();
  CHECK_THROWS_AS(run_train_als(cfg, dir.path()), ValidationError);
  CHECK_THROWS_AS(run_report(dir.path()), ValidationError);
  run_generate(cfg, dir.path());
  CHECK_THROWS_AS(run_train_hybrid(cfg, dir.path()), ValidationError);
  CHECK_THROWS_AS(run_fit_bandit(cfg, dir.path(), FeedMode::Explore), ValidationError);
}

TEST_CASE("similar-item task takes the first test click as the query") {
  EventLog test({testutil::ev("u1", "a", 10), testutil::ev("u1", "b", 20), testutil::ev("u1", "a", 30),
                 testutil::ev("u2", "c", 5, EventKind::Conversion), testutil::ev("u2", "d", 6),
                 testutil::ev("u2", "e", 7), testutil::ev("u3", "z", 1)});
  const auto task = make_similar_item_task(test, {"a", "b", "c", "d", "e"});
  CHECK(task.queries.at("u1") == "a");
  CHECK(task.truth.at("u1") == std::set<std::string>{"b"});
  CHECK(task.queries.at("u2") == "d");  // a conversion alone is not a query
  CHECK(task.truth.at("u2") == std::set<std::string>{"e"});
  CHECK(task.truth.count("u3") == 0);

  // b is nearest to a, e nearest to d.
  const Embeddings table = {{"a", {1, 0}}, {"b", {0.9, 0.1}}, {"c", {0, 1}}, {"d", {-1, 0}}, {"e", {-1, 0.2}}};
  CHECK(similar_item_hit_rate(table, task, 1) == 1.0);
  const auto warm = restrict_task(task, [](const std::string& id) { return id != "e"; });
  CHECK(warm.truth.size() == 1);
  CHECK(warm.candidates.count("e") == 0);

  const auto content = content_embeddings({{"a", {3, 4}}}, {{"b", {1, 1}}});
  REQUIRE(content.at("a").size() == 4);
  CHECK(content.at("a")[0] == doctest::Approx(0.6));
  CHECK(content.at("a")[2] == 0.0);
}

TEST_CASE("whole pipeline runs and every stage is byte-identical on rerun") {
  testutil::TempDir one, two;
  const auto cfg = tiny_config();
  run_all(cfg, one.path());
  run_all(cfg, two.path());
  std::size_t compared = 0;
  for (const auto& entry : fs::directory_iterator(one.path())) {
    const auto name = entry.path().filename().string();
    CHECK_MESSAGE(testutil::read_file(entry.path()) == testutil::read_file(two / name), name);
    ++compared;
  }
  CHECK(compared >= 24);
  const auto report = testutil::read_file(one / files::kReport);
  CHECK(report.find("hybrid") != std::string::npos);
  CHECK(report.find("row") != std::string::npos);

  // Rerunning a stage in place leaves its output unchanged too.
  const auto before = testutil::read_file(one / files::kHybrid);
  run_train_hybrid(cfg, one.path());
  CHECK(testutil::read_file(one / files::kHybrid) == before);
}
