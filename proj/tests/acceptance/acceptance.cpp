// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance [criterion ...]   (default: all ten)
//
// Exit status is 0 only when every selected criterion passes.
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mrsys/error.hpp"
#include "mrsys/layers.hpp"
#include "mrsys/pipeline.hpp"

using namespace mrsys;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

class Workspace {
 public:
  explicit Workspace(const std::string& tag) {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("mrsys_accept_" + std::to_string(::getpid()) + "_" + tag + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~Workspace() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  Workspace(const Workspace&) = delete;
  Workspace& operator=(const Workspace&) = delete;
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// ---------------------------------------------------------------------------
// Test-side references, independent of the library code they check.

using Matrix = std::vector<std::vector<double>>;

std::vector<double> gauss_solve(Matrix a, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    std::swap(a[col], a[piv]);
    std::swap(b[col], b[piv]);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a[r][col] / a[col][col];
      for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t c = i + 1; c < n; ++c) s -= a[i][c] * x[c];
    x[i] = s / a[i][i];
  }
  return x;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ab += a[i] * b[i], aa += a[i] * a[i], bb += b[i] * b[i];
  return aa == 0 || bb == 0 ? 0.0 : ab / std::sqrt(aa * bb);
}

std::vector<std::string> brute_top(const std::map<std::string, double>& scores, std::size_t n) {
  std::vector<std::pair<std::string, double>> v(scores.begin(), scores.end());
  std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < std::min(n, v.size()); ++i) out.push_back(v[i].first);
  return out;
}

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = scale * uniform(rng, -1.0, 1.0);
  return t;
}

double weighted_sum(const Tensor& y, const Tensor& c) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * c[i];
  return s;
}

double breakpoint_ctr(double s) { return s < 0.8 ? 0.05 + 0.3 * s : 0.29 - 1.2 * (s - 0.8); }

std::vector<ImpressionRecord> breakpoint_records(std::size_t n, std::uint64_t seed, std::size_t user_dim = 0) {
  Rng rng(seed);
  const char* subs[] = {"mf", "popular", "category"};
  std::vector<ImpressionRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    ImpressionRecord r;
    r.timestamp = static_cast<std::int64_t>(i);
    r.user_id = "u" + std::to_string(uniform_index(rng, 50));
    r.item_id = "i" + std::to_string(uniform_index(rng, 200));
    r.submodel = subs[uniform_index(rng, 3)];
    r.score = uniform01(rng);
    r.position = uniform_index(rng, 10);
    r.context.device = uniform01(rng) < 0.5 ? "mobile" : "desktop";
    r.context.hour = static_cast<int>(uniform_index(rng, 24));
    r.context.weekday = static_cast<int>(uniform_index(rng, 7));
    r.clicked = uniform01(rng) < breakpoint_ctr(r.score);
    if (user_dim) {
      std::vector<double> u(user_dim);
      for (double& x : u) x = gaussian(rng);
      r.context.user_embedding = u;
    }
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// 1. Gradient integrity

Outcome gradient_integrity() {
  std::map<std::string, double> errs;
  Rng rng(101);

  for (auto act : {Activation::Identity, Activation::ReLU, Activation::Tanh, Activation::Sigmoid,
                   Activation::Softmax}) {
    Dense d(5, 4, act);
    d.init(rng);
    d.bias = random_tensor({4}, rng, 0.3);
    Tensor x = random_tensor({6, 5}, rng), dx({6, 5});
    const Tensor c = random_tensor({6, 4}, rng);
    ParamList p;
    d.collect("d", p);
    p.push_back({"x", &x, &dx});
    const double e = grad_check(p, [&] { return weighted_sum(d.forward(x), c); },
                                [&] {
                                  zero_grads(p);
                                  Dense::Cache k;
                                  d.forward(x, &k);
                                  dx = d.backward(k, c);
                                });
    errs["dense"] = std::max(errs["dense"], e);
  }
  {
    Gru g(4, 5);
    g.init(rng);
    for (Tensor* b : {&g.b_z, &g.b_r, &g.b_h}) *b = random_tensor({5}, rng, 0.5);
    Tensor x = random_tensor({6, 4}, rng), h0 = random_tensor({5}, rng, 0.5), dx({6, 4}), dh0({5});
    const Tensor c = random_tensor({6, 5}, rng);
    ParamList p;
    g.collect("gru", p);
    p.push_back({"x", &x, &dx});
    p.push_back({"h0", &h0, &dh0});
    errs["gru"] = grad_check(p, [&] { return weighted_sum(g.forward(x, h0), c); },
                             [&] {
                               zero_grads(p);
                               Gru::Cache k;
                               g.forward(x, h0, &k);
                               auto gr = g.backward(k, c);
                               dx = gr.inputs;
                               dh0 = gr.h0;
                             });
  }
  {
    BatchNorm bn(4);
    bn.gamma = random_tensor({4}, rng);
    bn.beta = random_tensor({4}, rng);
    Tensor x = random_tensor({7, 4}, rng, 2.0), dx({7, 4});
    const Tensor c = random_tensor({7, 4}, rng);
    ParamList p;
    bn.collect("bn", p);
    p.push_back({"x", &x, &dx});
    errs["batchnorm"] = grad_check(p, [&] { return weighted_sum(bn.forward(x, NormMode::Train), c); },
                                   [&] {
                                     zero_grads(p);
                                     BatchNorm::Cache k;
                                     bn.forward(x, NormMode::Train, &k);
                                     dx = bn.backward(k, c);
                                   });
  }
  {
    AttentionGate gate({3, 2, 4});
    gate.init(rng);
    gate.scorer.bias = random_tensor({3}, rng);
    Tensor x = random_tensor({4, 9}, rng), dx({4, 9});
    const Tensor mask = Tensor::matrix(4, 3, {1, 1, 1, 0, 1, 1, 1, 0, 1, 1, 1, 0});
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t b = 0; b < 3; ++b)
        if (mask(r, b) == 0.0)
          for (std::size_t i = gate.offset(b); i < gate.offset(b + 1); ++i) x(r, i) = 0.0;
    const Tensor c = random_tensor({4, 9}, rng);
    ParamList p;
    gate.collect("gate", p);
    p.push_back({"x", &x, &dx});
    errs["attention"] = grad_check(p, [&] { return weighted_sum(gate.forward(x, mask), c); },
                                   [&] {
                                     zero_grads(p);
                                     AttentionGate::Cache k;
                                     gate.forward(x, mask, &k);
                                     dx = gate.backward(k, c);
                                   });
  }
  {
    Conv1dMaxPool conv(3, 4, 5);
    conv.init(rng);
    conv.bias = random_tensor({5}, rng, 0.2);
    Tensor x = random_tensor({8, 4}, rng), dx({8, 4});
    const Tensor c = random_tensor({5}, rng);
    ParamList p;
    conv.collect("conv", p);
    p.push_back({"x", &x, &dx});
    errs["conv"] = grad_check(p, [&] { return weighted_sum(conv.forward(x), c); },
                              [&] {
                                zero_grads(p);
                                Conv1dMaxPool::Cache k;
                                conv.forward(x, &k);
                                dx = conv.backward(k, c);
                              });
  }
  {
    LossOptions opts;
    opts.positive_weight = 3.0;
    opts.negative_weight = 0.7;
    opts.margin = -0.5;
    Tensor pred = random_tensor({3, 4}, rng), g({3, 4});
    const Tensor target = random_tensor({3, 4}, rng);
    ParamList p{{"pred", &pred, &g}};
    errs["loss-mse"] = grad_check(p, [&] { return loss_eval(LossKind::MSE, pred, target).value; },
                                  [&] { g = loss_eval(LossKind::MSE, pred, target).grad; });
    Tensor prob({8}), gp({8});
    for (double& v : prob.data()) v = uniform(rng, 0.1, 0.9);
    const Tensor y = Tensor::vector(std::vector<double>{1, 0, 0, 1, 1, 0, 1, 0});
    ParamList pb{{"p", &prob, &gp}};
    errs["loss-bce"] = grad_check(pb, [&] { return loss_eval(LossKind::WeightedBCE, prob, y, opts).value; },
                                  [&] { gp = loss_eval(LossKind::WeightedBCE, prob, y, opts).grad; });
    Tensor pairs = random_tensor({6, 5}, rng), gpairs({6, 5});
    const Tensor labels = Tensor::vector(std::vector<double>{1, 0, 1});
    ParamList pc{{"pairs", &pairs, &gpairs}};
    errs["loss-cosine"] =
        grad_check(pc, [&] { return loss_eval(LossKind::CosineContrastive, pairs, labels, opts).value; },
                   [&] { gpairs = loss_eval(LossKind::CosineContrastive, pairs, labels, opts).grad; });
  }
  {
    constexpr SourceDims dims{3, 2, 2, 2};
    ItemRepresentationSet reps(dims);
    for (const char* id : {"a", "b", "c", "d"})
      for (std::size_t s = 0; s < kSourceCount; ++s)
        if (!(id[0] == 'c' && s == 0)) {
          std::vector<double> v(dims[s]);
          for (double& x : v) x = gaussian(rng);
          reps.set(id, static_cast<Source>(s), v);
        }
    HybridEncoder enc(dims, 5, 4);
    enc.init(rng);
    const std::vector<TrainingPair> pairs{
        {"a", "b", PairLabel::CoConverted}, {"c", "d", PairLabel::Negative}, {"a", "c", PairLabel::Negative}};
    auto p = enc.params();
    errs["hybrid"] = grad_check(p, [&] { return enc.pair_loss(pairs, reps, -0.9, false); },
                                [&] { enc.pair_loss(pairs, reps, -0.9, true); });
  }
  {
    auto recs = breakpoint_records(14, 9, 3);
    recs[0].clicked = true;
    recs[1].clicked = false;
    DeepBandit b(FeatureVocabularies::from(recs), 3, 6, 4);
    b.init(rng);
    b.positive_weight = 2.5;
    auto p = b.params();
    errs["deep-bandit"] = grad_check(p, [&] { return b.loss(recs, false); }, [&] { b.loss(recs, true); });
  }
  {
    Embeddings table;
    for (int i = 0; i < 6; ++i) {
      std::vector<double> v(3);
      for (double& x : v) x = gaussian(rng);
      table["i" + std::to_string(i)] = v;
    }
    SeqModel model(3, 4, 3, 2);
    model.init(rng);
    const std::vector<SequenceExample> ex{{"u", {"i0", "i1", "i2", "i3"}, {"i4", "i5"}}, {"v", {"i5", "i2"}, {"i0"}}};
    auto p = model.params();
    errs["sequence"] = grad_check(p, [&] { return model.loss(ex, table, false); }, [&] { model.loss(ex, table, true); });
  }

  double worst = 0.0;
  std::string worst_name;
  for (const auto& [name, e] : errs)
    if (e >= worst) worst = e, worst_name = name;
  return {worst <= 1e-5, fmt("%zu units, max rel err %.2e (%s)", errs.size(), worst, worst_name.c_str())};
}

// ---------------------------------------------------------------------------
// 2. Closed-form oracles

Outcome closed_form_oracles() {
  Rng rng(202);
  double als_err = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t rows = 4 + trial % 7, cols = 10 - trial % 5, d = 3;
    IdIndex ri, ci;
    for (std::size_t r = 0; r < rows; ++r) ri.intern("u" + std::to_string(r));
    for (std::size_t c = 0; c < cols; ++c) ci.intern("i" + std::to_string(c));
    Matrix w(rows, std::vector<double>(cols, 0.0));
    std::vector<std::tuple<std::size_t, std::size_t, double>> cells;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c)
        if (uniform01(rng) < 0.4) cells.emplace_back(r, c, w[r][c] = 1.0 + std::floor(uniform(rng, 0, 5)));
    const InteractionMatrix m(ri, ci, cells);
    const double lambda = 0.3, alpha = 10.0;
    for (bool solve_rows : {true, false}) {
      const std::size_t nt = solve_rows ? rows : cols, nf = solve_rows ? cols : rows;
      const Tensor fixed = random_tensor({nf, d}, rng);
      Tensor target({nt, d});
      als_half_step(m, solve_rows, target, fixed, lambda, alpha);
      for (std::size_t t = 0; t < nt; ++t) {
        Matrix a(d, std::vector<double>(d, 0.0));
        std::vector<double> b(d, 0.0);
        for (std::size_t f = 0; f < nf; ++f) {
          const double cell = solve_rows ? w[t][f] : w[f][t];
          const double conf = 1.0 + alpha * cell, pref = cell > 0 ? 1.0 : 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            b[j] += conf * pref * fixed(f, j);
            for (std::size_t k = 0; k < d; ++k) a[j][k] += conf * fixed(f, j) * fixed(f, k);
          }
        }
        for (std::size_t j = 0; j < d; ++j) a[j][j] += lambda;
        const auto x = gauss_solve(a, b);
        for (std::size_t j = 0; j < d; ++j) als_err = std::max(als_err, std::abs(x[j] - target(t, j)));
      }
    }
  }

  double ridge_err = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto recs = breakpoint_records(10, seed);
    const double lambda = 0.5;
    const auto b = fit_regression_bandit(recs, lambda, 0.8);
    const std::size_t p = b.weights.size();
    Matrix a(p + 1, std::vector<double>(p + 1, 0.0));
    std::vector<double> rhs(p + 1, 0.0);
    for (const auto& r : recs) {
      auto x = encode_regression_features(r, b.vocab, 0.8);
      x.push_back(1.0);
      for (std::size_t i = 0; i <= p; ++i) {
        rhs[i] += (r.clicked ? 1.0 : 0.0) * x[i];
        for (std::size_t j = 0; j <= p; ++j) a[i][j] += x[i] * x[j];
      }
    }
    for (std::size_t i = 0; i < p; ++i) a[i][i] += lambda;
    const auto beta = gauss_solve(a, rhs);
    ridge_err = std::max(ridge_err, std::abs(beta[p] - b.intercept));
    for (std::size_t i = 0; i < p; ++i) ridge_err = std::max(ridge_err, std::abs(beta[i] - b.weights[i]));
  }

  // Ranking scans over a 1000-item catalog.
  Embeddings catalog;
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> v(8);
    for (double& x : v) x = gaussian(rng);
    catalog["item" + std::to_string(i)] = v;
  }
  std::size_t rank_mismatch = 0;
  for (int q = 0; q < 25; ++q) {
    const std::string query = "item" + std::to_string(q * 37);
    std::map<std::string, double> scores;
    for (const auto& [id, v] : catalog)
      if (id != query) scores[id] = cosine(catalog.at(query), v);
    const auto got = similar_items(query, catalog, 20);
    const auto want = brute_top(scores, 20);
    for (std::size_t i = 0; i < want.size(); ++i) rank_mismatch += got.at(i).item_id != want[i];
  }
  SeqModel model(8, 6, 15, 5);
  model.init(rng);
  for (int h = 0; h < 10; ++h) {
    std::vector<std::string> history;
    for (int j = 0; j < 3 + h; ++j) history.push_back("item" + std::to_string(uniform_index(rng, 1000)));
    const auto preds = predict_next(model, history, catalog);
    const std::set<std::string> seen(history.begin(), history.end());
    std::map<std::string, double> scores;
    for (const auto& [id, v] : catalog) {
      if (seen.count(id)) continue;
      double best = -2.0;
      for (const auto& p : preds) best = std::max(best, cosine(p, v));
      scores[id] = best;
    }
    const auto got = seq_recommend(model, history, catalog, 20);
    const auto want = brute_top(scores, 20);
    for (std::size_t i = 0; i < want.size(); ++i) rank_mismatch += got.at(i).item_id != want[i];
  }
  double hr_err = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Event> events;
    for (int e = 0; e < 80; ++e)
      events.push_back({"u" + std::to_string(uniform_index(rng, 10)), "item" + std::to_string(uniform_index(rng, 40)),
                        e, uniform01(rng) < 0.2 ? EventKind::Conversion : EventKind::Click});
    std::map<std::string, std::vector<std::string>> recs;
    for (int u = 0; u < 10; ++u)
      for (int k = 0; k < 15; ++k) recs["u" + std::to_string(u)].push_back("item" + std::to_string(uniform_index(rng, 40)));
    const std::size_t n = 1 + trial % 10;
    std::map<std::string, std::set<std::string>> truth;
    for (const auto& e : events) truth[e.user_id].insert(e.item_id);
    double hits = 0;
    for (const auto& [u, items] : truth) {
      std::set<std::string> top;
      for (const auto& r : recs[u])
        if (top.size() < n) top.insert(r);
      for (const auto& r : top) hits += items.count(r);
    }
    hr_err = std::max(hr_err, std::abs(hit_rate_at_n(recs, EventLog(events), n) - hits / truth.size()));
  }

  // Pooled two-proportion z for 50/1000 vs 100/1000, by hand.
  const double pooled = 150.0 / 2000.0;
  const double z_hand = (0.1 - 0.05) / std::sqrt(pooled * (1 - pooled) * (2.0 / 1000.0));
  const double z_err = std::abs(*binomial_ab_test(50, 1000, 100, 1000).z - z_hand);

  const bool pass = als_err <= 1e-8 && ridge_err <= 1e-8 && rank_mismatch == 0 && hr_err == 0.0 && z_err <= 1e-6;
  return {pass, fmt("ALS %.1e, ridge %.1e, rank mismatches %zu, HR err %.1e, z %.6f err %.1e", als_err, ridge_err,
                    rank_mismatch, hr_err, z_hand, z_err)};
}

// ---------------------------------------------------------------------------
// 3-5. Directional reproductions on the simulator

PipelineConfig base_config(std::uint64_t seed) {
  PipelineConfig c;
  c.seed = seed;
  return c;
}

void train_representations(const PipelineConfig& c, const fs::path& dir) {
  run_generate(c, dir);
  run_train_als(c, dir);
  run_train_location(c, dir);
  run_train_text(c, dir);
  run_train_image(c, dir);
  run_train_hybrid(c, dir);
}

Outcome hybrid_vs_mf() {
  const auto t0 = std::chrono::steady_clock::now();
  int hybrid_wins = 0, behavioral_wins = 0;
  double lift = 0.0, content_gap = 0.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto c = base_config(seed);
    c.market.quality_sd = 0.6;
    Workspace ws("c3");
    train_representations(c, ws.path());
    const auto s = run_evaluate_hr(c, ws.path());
    hybrid_wins += s.hybrid_all > s.behavioral_all;
    behavioral_wins += s.behavioral_warm > s.content_warm;
    lift += (s.hybrid_all - s.behavioral_all) / s.behavioral_all / 10.0;
    content_gap += (s.content_warm - s.behavioral_warm) / s.behavioral_warm / 10.0;
  }
  const double secs = seconds_since(t0);
  return {hybrid_wins >= 8 && behavioral_wins >= 8 && secs < 300,
          fmt("hybrid>behavioral %d/10 (mean %+.1f%%), behavioral>content on warm %d/10 (content %+.1f%%), %.0fs",
              hybrid_wins, 100 * lift, behavioral_wins, 100 * content_gap, secs)};
}

Outcome sequence_vs_mf() {
  const auto t0 = std::chrono::steady_clock::now();
  int wins = 0;
  double lift = 0.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto c = base_config(seed);
    c.market.interest_drift_rate = 0.3;
    c.policy_a = "mf";
    c.policy_b = "sequence";
    Workspace ws("c4");
    train_representations(c, ws.path());
    run_train_seq(c, ws.path());
    const auto r = run_ab_sim(c, ws.path()).report;
    wins += r.ctr_b > r.ctr_a && r.test.p_value < 0.05;
    lift += r.test.delta_ctr.value_or(0.0) / 10.0;
  }
  const double secs = seconds_since(t0);
  return {wins >= 8 && secs < 300, fmt("GRU beats MF at p<0.05 in %d/10 (mean dCTR %+.1f%%), %.0fs", wins, 100 * lift, secs)};
}

Outcome bandit_orderings() {
  const auto t0 = std::chrono::steady_clock::now();
  int reg_wins = 0, deep_wins = 0;
  double reg_lift = 0.0, deep_lift = 0.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto c = base_config(seed);
    c.market.n_users = 3000;
    Workspace ws("c5");
    run_generate(c, ws.path());
    run_train_als(c, ws.path());
    run_fit_bandit(c, ws.path(), FeedMode::RowSeparated);
    run_fit_bandit(c, ws.path(), FeedMode::Regression);
    run_fit_bandit(c, ws.path(), FeedMode::Deep, ws.path() / files::kBanditLog);
    c.policy_a = "row";
    c.policy_b = "regression";
    const auto first = run_ab_sim(c, ws.path()).report;
    c.policy_a = "regression";
    c.policy_b = "deep";
    const auto second = run_ab_sim(c, ws.path()).report;
    reg_wins += first.ctr_b > first.ctr_a && first.test.p_value < 0.05;
    deep_wins += second.ctr_b > second.ctr_a && second.test.p_value < 0.05;
    reg_lift += first.test.delta_ctr.value_or(0.0) / 10.0;
    deep_lift += second.test.delta_ctr.value_or(0.0) / 10.0;
  }
  const double secs = seconds_since(t0);
  return {reg_wins >= 8 && deep_wins >= 8 && secs < 600,
          fmt("regression>row %d/10 (mean %+.1f%%), deep>regression %d/10 (mean %+.1f%%), %.0fs", reg_wins,
              100 * reg_lift, deep_wins, 100 * deep_lift, secs)};
}

// ---------------------------------------------------------------------------
// 6-8

Outcome breakpoint_behavior() {
  int ok = 0;
  double worst_gap = 1.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto recs = breakpoint_records(20000, 600 + seed);
    const auto b = fit_regression_bandit(recs, 1.0, 0.8);
    bool all = true;
    for (const char* sub : {"mf", "popular", "category"}) {
      const double hi = value_regression(b, {sub, "x", 0.95}, {}, 0);
      const double lo = value_regression(b, {sub, "x", 0.75}, {}, 0);
      all = all && hi < lo;
      worst_gap = std::min(worst_gap, lo - hi);
    }
    ok += all;
  }
  return {ok == 10, fmt("value(0.95) < value(0.75) in %d/10 seeds, smallest gap %.4f", ok, worst_gap)};
}

Outcome epsilon_rate() {
  Rng rng(707);
  std::vector<SubmodelProposal> props;
  for (int i = 0; i < 60; ++i)
    props.push_back({standard_submodels()[i % standard_submodels().size()], "item" + std::to_string(i), uniform01(rng)});
  const auto reg = fit_regression_bandit(breakpoint_records(5000, 7), 1.0, 0.8);
  const ValueFn value = [&](const SubmodelProposal& p, const FeedContext& ctx, std::size_t pos) {
    return value_regression(reg, p, ctx, pos);
  };
  std::size_t explored = 0, total = 0;
  for (std::uint64_t seed = 0; total < 100000; ++seed) {
    for (const auto& slot : rerank(props, {}, value, BanditFeedConfig{}.epsilon, 12, seed)) explored += slot.explored;
    total += 12;
  }
  const double rate = static_cast<double>(explored) / static_cast<double>(total);
  return {rate >= 0.045 && rate <= 0.055, fmt("explored %zu of %zu slots = %.4f", explored, total, rate)};
}

Outcome aa_calibration() {
  const auto t0 = std::chrono::steady_clock::now();
  int quiet = 0;
  double worst_delta = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    MarketConfig m;
    m.seed = sub_seed(seed, "market");
    m.n_users = 20000;
    m.n_items = 1000;
    m.feed_slots = 12;
    m.history_days = 7;
    m.sim_days = 7;
    const auto market = generate_market(m);
    RandomPolicy a, b;
    const auto r = run_ab_simulation(market, a, b, m.history_days, m.sim_days, {}, sub_seed(seed, "ab")).report;
    const double delta = r.test.delta_ctr.value_or(1.0);
    worst_delta = std::max(worst_delta, std::abs(delta));
    quiet += std::abs(delta) < 0.02 && r.test.p_value > 0.05;
  }
  Rng rng(808);
  int significant = 0;
  for (int run = 0; run < 1000; ++run) {
    std::uint64_t ca = 0, cb = 0;
    for (int i = 0; i < 3000; ++i) ca += uniform01(rng) < 0.08, cb += uniform01(rng) < 0.08;
    significant += binomial_ab_test(ca, 3000, cb, 3000).p_value < 0.05;
  }
  return {quiet >= 18 && significant <= 70,
          fmt("A/A quiet in %d/20 runs (max |dCTR| %.2f%%), null p<0.05 in %d/1000, %.0fs", quiet, 100 * worst_delta,
              significant, seconds_since(t0))};
}

// ---------------------------------------------------------------------------
// 9-10. Whole pipeline

fs::path demo_config_path() { return fs::path(MRSYS_SOURCE_DIR) / "configs" / "demo.cfg"; }

void run_pipeline(const PipelineConfig& c, const fs::path& dir) {
  train_representations(c, dir);
  run_train_seq(c, dir);
  run_fit_bandit(c, dir, FeedMode::RowSeparated);
  run_fit_bandit(c, dir, FeedMode::Regression);
  run_fit_bandit(c, dir, FeedMode::Deep);
  run_evaluate_hr(c, dir);
  run_ab_sim(c, dir);
  run_report(dir);
}

std::vector<std::string> differing_files(const fs::path& a, const fs::path& b, std::size_t& compared) {
  std::vector<std::string> diff;
  compared = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    const auto name = e.path().filename().string();
    ++compared;
    if (!fs::exists(b / name) || read_file(e.path()) != read_file(b / name)) diff.push_back(name);
  }
  return diff;
}

Outcome determinism() {
  const auto cfg = load_pipeline_config(demo_config_path());
  Workspace one("c9a"), two("c9b");
  run_pipeline(cfg, one.path());
  run_pipeline(cfg, two.path());
  // Every stage again, in place, over its own earlier outputs.
  run_pipeline(cfg, two.path());
  std::size_t compared = 0;
  const auto diff = differing_files(one.path(), two.path(), compared);
  std::string detail = fmt("%zu artifacts compared over 3 runs", compared);
  for (const auto& d : diff) detail += ", differs: " + d;
  return {diff.empty() && compared >= 25, detail};
}

Outcome end_to_end() {
  Workspace ws("c10");
  const std::string common =
      " --config " + demo_config_path().string() + " --out " + (ws.path() / "work").string() + " >/dev/null 2>&1";
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::string> failed;
  for (const char* cmd : {"generate", "train-als", "train-location", "train-text", "train-image", "train-hybrid",
                          "train-seq", "fit-bandit row", "fit-bandit regression", "fit-bandit deep", "evaluate-hr",
                          "ab-sim"}) {
    const std::string line = std::string(MRSYS_CLI_PATH) + " " + cmd + common;
    if (std::system(line.c_str()) != 0) failed.push_back(cmd);
  }
  const std::string report = std::string(MRSYS_CLI_PATH) + " report --out " + (ws.path() / "work").string() +
                             " > " + (ws.path() / "report.out").string() + " 2>&1";
  if (std::system(report.c_str()) != 0) failed.push_back("report");
  const double secs = seconds_since(t0);
  const auto text = read_file(ws.path() / "report.out");
  const bool complete = text.find("hr_at_10") != std::string::npos && text.find("p_value") != std::string::npos;
  std::string detail = fmt("13 CLI steps from configs/demo.cfg in %.0fs", secs);
  for (const auto& f : failed) detail += ", failed: " + f;
  if (!complete) detail += ", report incomplete";
  return {failed.empty() && complete && secs < 900, detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient integrity", gradient_integrity},
      {"closed-form oracles", closed_form_oracles},
      {"hybrid vs MF ordering", hybrid_vs_mf},
      {"sequence vs MF ordering", sequence_vs_mf},
      {"bandit orderings", bandit_orderings},
      {"breakpoint behavior", breakpoint_behavior},
      {"epsilon-greedy rate", epsilon_rate},
      {"A/A null calibration", aa_calibration},
      {"determinism", determinism},
      {"end-to-end smoke", end_to_end},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("criterion %2d %s  %-24s %s\n", id, o.pass ? "PASS" : "FAIL", criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
