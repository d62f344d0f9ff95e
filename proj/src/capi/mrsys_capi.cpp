#include "mrsys/mrsys.h"

#include <cstdlib>
#include <cstring>
#include <new>
#include <string>
#include <vector>

#include "mrsys/checkpoint.hpp"
#include "mrsys/error.hpp"
#include "mrsys/experiment.hpp"
#include "mrsys/pipeline.hpp"

struct mrsys_config {
  mrsys::PipelineConfig cfg;
};

struct mrsys_checkpoint {
  std::vector<std::pair<std::string, const mrsys::Tensor*>> records;
  mrsys::Checkpoint ckpt;
};

namespace {

thread_local std::string last_error;

// Runs `body`, translating exceptions into status codes.
template <typename F>
int guarded(F&& body) {
  try {
    last_error.clear();
    body();
    return MRSYS_OK;
  } catch (const mrsys::Error& e) {
    last_error = e.what();
    return static_cast<int>(e.kind());
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
  } catch (const std::exception& e) {
    last_error = e.what();
  } catch (...) {
    last_error = "unknown failure";
  }
  return MRSYS_RUNTIME_ERROR;
}

template <typename T>
void need(const T* p, const char* what) {
  if (!p) throw mrsys::ValidationError(std::string(what) + " must not be null");
}

char* copy_string(const std::string& s) {
  auto* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

template <typename Stage>
int run_stage(const mrsys_config* cfg, const char* dir, Stage stage) {
  return guarded([&] {
    need(cfg, "config");
    need(dir, "workspace directory");
    stage(cfg->cfg, std::filesystem::path(dir));
  });
}

}  // namespace

extern "C" {

const char* mrsys_last_error(void) { return last_error.c_str(); }

void mrsys_string_free(char* s) { std::free(s); }

int mrsys_config_new(mrsys_config** out) {
  return guarded([&] {
    need(out, "output handle");
    *out = new mrsys_config{};
  });
}

int mrsys_config_load(const char* path, mrsys_config** out) {
  return guarded([&] {
    need(path, "config path");
    need(out, "output handle");
    *out = nullptr;
    auto cfg = mrsys::load_pipeline_config(path);
    *out = new mrsys_config{std::move(cfg)};
  });
}

int mrsys_config_set(mrsys_config* cfg, const char* key, const char* value) {
  return guarded([&] {
    need(cfg, "config");
    need(key, "key");
    need(value, "value");
    cfg->cfg.set(key, value);
  });
}

int mrsys_config_validate(const mrsys_config* cfg) {
  return guarded([&] {
    need(cfg, "config");
    cfg->cfg.validate();
  });
}

int mrsys_config_dump(const mrsys_config* cfg, char** out) {
  return guarded([&] {
    need(cfg, "config");
    need(out, "output string");
    *out = copy_string(cfg->cfg.dump());
  });
}

void mrsys_config_free(mrsys_config* cfg) { delete cfg; }

int mrsys_generate(const mrsys_config* cfg, const char* dir) { return run_stage(cfg, dir, mrsys::run_generate); }
int mrsys_train_als(const mrsys_config* cfg, const char* dir) { return run_stage(cfg, dir, mrsys::run_train_als); }
int mrsys_train_location(const mrsys_config* cfg, const char* dir) {
  return run_stage(cfg, dir, mrsys::run_train_location);
}
int mrsys_train_text(const mrsys_config* cfg, const char* dir) { return run_stage(cfg, dir, mrsys::run_train_text); }
int mrsys_train_image(const mrsys_config* cfg, const char* dir) { return run_stage(cfg, dir, mrsys::run_train_image); }
int mrsys_train_hybrid(const mrsys_config* cfg, const char* dir) {
  return run_stage(cfg, dir, mrsys::run_train_hybrid);
}
int mrsys_train_seq(const mrsys_config* cfg, const char* dir) { return run_stage(cfg, dir, mrsys::run_train_seq); }

int mrsys_fit_bandit(const mrsys_config* cfg, const char* dir, const char* mode, const char* impressions) {
  return run_stage(cfg, dir, [&](const mrsys::PipelineConfig& c, const std::filesystem::path& d) {
    need(mode, "bandit mode");
    const std::string m = mode;
    if (m != "row" && m != "regression" && m != "deep")
      throw mrsys::ValidationError("unknown bandit mode '" + m + "' (expected row, regression or deep)");
    std::optional<std::filesystem::path> imps;
    if (impressions) imps = impressions;
    mrsys::run_fit_bandit(c, d, mrsys::parse_feed_mode(m), imps);
  });
}

int mrsys_evaluate_hr(const mrsys_config* cfg, const char* dir, mrsys_hr_summary* out) {
  return run_stage(cfg, dir, [&](const mrsys::PipelineConfig& c, const std::filesystem::path& d) {
    const auto s = mrsys::run_evaluate_hr(c, d);
    if (out)
      *out = {s.hybrid_all, s.behavioral_all, s.content_all, s.hybrid_warm, s.behavioral_warm, s.content_warm,
              s.users_all, s.users_warm};
  });
}

int mrsys_hit_rate_files(const char* recommendations, const char* test_events, size_t n, double* out) {
  return guarded([&] {
    need(recommendations, "recommendations path");
    need(test_events, "test events path");
    need(out, "output");
    if (!std::filesystem::exists(test_events))
      throw mrsys::ValidationError(std::string("test events file ") + test_events + " does not exist");
    *out = mrsys::hit_rate_at_n(mrsys::load_recommendations(recommendations), mrsys::load_events(test_events), n);
  });
}

int mrsys_ab_sim(const mrsys_config* cfg, const char* dir, mrsys_ab_summary* out) {
  return run_stage(cfg, dir, [&](const mrsys::PipelineConfig& c, const std::filesystem::path& d) {
    const auto r = mrsys::run_ab_sim(c, d).report;
    if (out)
      *out = {r.clicks_a, r.views_a, r.clicks_b, r.views_b, r.ctr_a, r.ctr_b, r.test.delta_ctr.has_value(),
              r.test.delta_ctr.value_or(0.0), r.test.p_value};
  });
}

int mrsys_report(const char* dir, char** out) {
  return guarded([&] {
    need(dir, "workspace directory");
    const auto text = mrsys::run_report(dir);
    if (out) *out = copy_string(text);
  });
}

int mrsys_checkpoint_open(const char* path, mrsys_checkpoint** out) {
  return guarded([&] {
    need(path, "checkpoint path");
    need(out, "output handle");
    *out = nullptr;
    auto* h = new mrsys_checkpoint{{}, mrsys::Checkpoint::load(path)};
    for (const auto& [name, t] : h->ckpt.tensors()) h->records.emplace_back(name, &t);
    *out = h;
  });
}

size_t mrsys_checkpoint_count(const mrsys_checkpoint* ckpt) { return ckpt ? ckpt->records.size() : 0; }

int mrsys_checkpoint_record(const mrsys_checkpoint* ckpt, size_t i, const char** name, size_t* rank, size_t* size) {
  return guarded([&] {
    need(ckpt, "checkpoint");
    if (i >= ckpt->records.size())
      throw mrsys::ValidationError("record " + std::to_string(i) + " out of range (" +
                                   std::to_string(ckpt->records.size()) + " records)");
    const auto& [n, t] = ckpt->records[i];
    if (name) *name = n.c_str();
    if (rank) *rank = t->rank();
    if (size) *size = t->size();
  });
}

void mrsys_checkpoint_free(mrsys_checkpoint* ckpt) { delete ckpt; }

}  // extern "C"
