// Command-line front end. Talks to the pipeline only through the C API.
#include <CLI11.hpp>

#include <cstdio>
#include <functional>
#include <iostream>
#include <string>

#include "mrsys/mrsys.h"

namespace {

struct Common {
  std::string config;
  std::string out = ".";
  std::string seed;
};

void add_common(CLI::App* cmd, Common& c, bool with_config = true) {
  if (with_config) {
    cmd->add_option("--config", c.config, "pipeline config file (key = value lines)");
    cmd->add_option("--seed", c.seed, "root seed, overrides the config");
  }
  cmd->add_option("--out", c.out, "workspace directory")->capture_default_str();
}

int fail(int code) {
  std::cerr << "error: " << mrsys_last_error() << "\n";
  return code;
}

// Loads the config (or defaults), applies --seed and hands it to `body`.
int with_config(const Common& c, const std::function<int(mrsys_config*)>& body) {
  mrsys_config* cfg = nullptr;
  int rc = c.config.empty() ? mrsys_config_new(&cfg) : mrsys_config_load(c.config.c_str(), &cfg);
  if (rc != MRSYS_OK) return fail(rc);
  if (!c.seed.empty() && (rc = mrsys_config_set(cfg, "seed", c.seed.c_str())) != MRSYS_OK) {
    mrsys_config_free(cfg);
    return fail(rc);
  }
  rc = body(cfg);
  mrsys_config_free(cfg);
  return rc;
}

int stage(const Common& c, int (*fn)(const mrsys_config*, const char*), const char* what) {
  return with_config(c, [&](mrsys_config* cfg) {
    const int rc = fn(cfg, c.out.c_str());
    if (rc != MRSYS_OK) return fail(rc);
    std::cout << what << ": done (" << c.out << ")\n";
    return 0;
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Marketplace recommender pipeline"};
  app.name("mrsys");
  app.require_subcommand(1);

  struct StageCmd {
    const char* name;
    const char* help;
    int (*fn)(const mrsys_config*, const char*);
    Common c;
    CLI::App* cmd = nullptr;
  };
  std::vector<StageCmd> stages = {
      {"generate", "simulate a market: items, images and the organic event log", mrsys_generate, {}},
      {"train-als", "fit implicit ALS on the training events", mrsys_train_als, {}},
      {"train-location", "fit postcode embeddings", mrsys_train_location, {}},
      {"train-text", "train word vectors and the title/description classifier", mrsys_train_text, {}},
      {"train-image", "train the image tower", mrsys_train_image, {}},
      {"train-hybrid", "merge all item representations", mrsys_train_hybrid, {}},
      {"train-seq", "train the GRU next-item model", mrsys_train_seq, {}},
  };
  for (auto& s : stages) {
    s.cmd = app.add_subcommand(s.name, s.help);
    add_common(s.cmd, s.c);
  }

  Common bandit_c;
  std::string bandit_mode, impressions;
  auto* bandit = app.add_subcommand("fit-bandit", "fit a feed re-ranker");
  add_common(bandit, bandit_c);
  bandit->add_option("mode", bandit_mode, "row, regression or deep")
      ->required()
      ->check(CLI::IsMember({"row", "regression", "deep"}));
  bandit->add_option("--impressions", impressions, "logged impressions to fit on (default: simulate exploration)");

  Common hr_c;
  std::string recs, test_events;
  std::size_t hr_n = 0;
  auto* hr = app.add_subcommand("evaluate-hr", "similar-item hit rates, or HR@n of given lists");
  add_common(hr, hr_c);
  hr->add_option("--n", hr_n, "list length (default: eval.n from the config)")->check(CLI::PositiveNumber);
  auto* recs_opt = hr->add_option("--recs", recs, "recommendation lists: user<TAB>item,item,...");
  auto* test_opt = hr->add_option("--test", test_events, "test events TSV");
  recs_opt->needs(test_opt);
  test_opt->needs(recs_opt);

  Common ab_c;
  auto* ab = app.add_subcommand("ab-sim", "simulate an A/B test between ab.policy_a and ab.policy_b");
  add_common(ab, ab_c);

  Common report_c;
  auto* report = app.add_subcommand("report", "summarise evaluation artifacts");
  add_common(report, report_c, false);

  if (argc > 1 && argv[1][0] != '-') {
    bool known = false;
    for (const auto* sub : app.get_subcommands({})) known = known || sub->check_name(argv[1]);
    if (!known) {
      std::cerr << "error: unknown subcommand '" << argv[1] << "'\n\n" << app.help();
      return 1;
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  for (auto& s : stages)
    if (s.cmd->parsed()) return stage(s.c, s.fn, s.name);

  if (bandit->parsed())
    return with_config(bandit_c, [&](mrsys_config* cfg) {
      const int rc = mrsys_fit_bandit(cfg, bandit_c.out.c_str(), bandit_mode.c_str(),
                                      impressions.empty() ? nullptr : impressions.c_str());
      if (rc != MRSYS_OK) return fail(rc);
      std::cout << "fit-bandit " << bandit_mode << ": done (" << bandit_c.out << ")\n";
      return 0;
    });

  if (hr->parsed()) {
    if (!recs.empty()) {
      double value = 0.0;
      const int rc = mrsys_hit_rate_files(recs.c_str(), test_events.c_str(), hr_n ? hr_n : 10, &value);
      if (rc != MRSYS_OK) return fail(rc);
      std::printf("HR@%zu\t%.10g\n", hr_n ? hr_n : std::size_t{10}, value);
      return 0;
    }
    return with_config(hr_c, [&](mrsys_config* cfg) {
      int rc = MRSYS_OK;
      if (hr_n && (rc = mrsys_config_set(cfg, "eval.n", std::to_string(hr_n).c_str())) != MRSYS_OK) return fail(rc);
      mrsys_hr_summary s{};
      if ((rc = mrsys_evaluate_hr(cfg, hr_c.out.c_str(), &s)) != MRSYS_OK) return fail(rc);
      std::printf("representation  all (%zu users)  warm (%zu users)\n", s.users_all, s.users_warm);
      std::printf("hybrid          %-16.4f %.4f\n", s.hybrid_all, s.hybrid_warm);
      std::printf("behavioral      %-16.4f %.4f\n", s.behavioral_all, s.behavioral_warm);
      std::printf("content         %-16.4f %.4f\n", s.content_all, s.content_warm);
      return 0;
    });
  }

  if (ab->parsed())
    return with_config(ab_c, [&](mrsys_config* cfg) {
      mrsys_ab_summary s{};
      const int rc = mrsys_ab_sim(cfg, ab_c.out.c_str(), &s);
      if (rc != MRSYS_OK) return fail(rc);
      std::printf("A: %llu clicks / %llu views, CTR %.5f\n", static_cast<unsigned long long>(s.clicks_a),
                  static_cast<unsigned long long>(s.views_a), s.ctr_a);
      std::printf("B: %llu clicks / %llu views, CTR %.5f\n", static_cast<unsigned long long>(s.clicks_b),
                  static_cast<unsigned long long>(s.views_b), s.ctr_b);
      if (s.has_delta) std::printf("delta CTR %+.2f%%  ", 100.0 * s.delta_ctr);
      std::printf("p = %.3g\n", s.p_value);
      return 0;
    });

  if (report->parsed()) {
    char* text = nullptr;
    const int rc = mrsys_report(report_c.out.c_str(), &text);
    if (rc != MRSYS_OK) return fail(rc);
    std::cout << text;
    mrsys_string_free(text);
    return 0;
  }
  return 1;
}
