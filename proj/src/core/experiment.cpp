#include "mrsys/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "mrsys/error.hpp"
#include "tsv.hpp"

namespace mrsys {

double hit_rate_at_n(const std::map<std::string, std::vector<std::string>>& recommendations, const EventLog& test,
                     std::size_t n) {
  require(n >= 1, "n must be at least 1");
  if (test.empty()) throw ValidationError("test log is empty");
  std::map<std::string, std::set<std::string>> truth;
  for (const auto& e : test.events()) truth[e.user_id].insert(e.item_id);
  double total = 0.0;
  for (const auto& [user, items] : truth) {
    auto it = recommendations.find(user);
    if (it == recommendations.end()) continue;
    std::set<std::string> top;
    for (std::size_t i = 0; i < it->second.size() && top.size() < n; ++i) top.insert(it->second[i]);
    for (const auto& item : top) total += items.count(item);
  }
  return total / static_cast<double>(truth.size());
}

double ctr(std::uint64_t clicks, std::uint64_t views) {
  if (clicks > views)
    throw ValidationError("clicks (" + std::to_string(clicks) + ") exceed views (" + std::to_string(views) + ")");
  return views == 0 ? 0.0 : static_cast<double>(clicks) / static_cast<double>(views);
}

namespace {

double log_choose(double n, double k) { return std::lgamma(n + 1) - std::lgamma(k + 1) - std::lgamma(n - k + 1); }

// Fisher-style two-sided p-value: total probability of tables no more likely
// than the observed one, conditional on the total click count.
double exact_conditional_p(std::uint64_t clicks_a, std::uint64_t views_a, std::uint64_t clicks_b,
                           std::uint64_t views_b) {
  const double na = static_cast<double>(views_a), nb = static_cast<double>(views_b);
  const std::uint64_t total = clicks_a + clicks_b;
  const std::uint64_t lo = total > views_a ? total - views_a : 0;
  const std::uint64_t hi = std::min<std::uint64_t>(total, views_b);
  const double denom = log_choose(na + nb, static_cast<double>(total));
  auto prob = [&](std::uint64_t kb) {
    const double k = static_cast<double>(kb);
    return std::exp(log_choose(nb, k) + log_choose(na, static_cast<double>(total) - k) - denom);
  };
  const double observed = prob(clicks_b);
  double p = 0.0;
  for (std::uint64_t k = lo; k <= hi; ++k) {
    const double q = prob(k);
    if (q <= observed * (1.0 + 1e-9)) p += q;
  }
  return std::min(1.0, p);
}

}  // namespace

AbTestResult binomial_ab_test(std::uint64_t clicks_a, std::uint64_t views_a, std::uint64_t clicks_b,
                              std::uint64_t views_b) {
  if (views_a == 0 || views_b == 0) throw ValidationError("both arms need at least one view");
  const double ca = ctr(clicks_a, views_a), cb = ctr(clicks_b, views_b);
  AbTestResult r;
  if (ca > 0.0) r.delta_ctr = (cb - ca) / ca;
  if (std::min(views_a, views_b) <= 30) {
    r.exact = true;
    r.p_value = exact_conditional_p(clicks_a, views_a, clicks_b, views_b);
    return r;
  }
  const double na = static_cast<double>(views_a), nb = static_cast<double>(views_b);
  const double pooled = static_cast<double>(clicks_a + clicks_b) / (na + nb);
  const double se = std::sqrt(pooled * (1.0 - pooled) * (1.0 / na + 1.0 / nb));
  if (se == 0.0) {
    r.z = 0.0;
    r.p_value = 1.0;
    return r;
  }
  r.z = (cb - ca) / se;
  r.p_value = std::min(1.0, std::erfc(std::abs(*r.z) / std::sqrt(2.0)));
  return r;
}

BinnedMonitor time_binned_monitor(std::span<const ImpressionRecord> impressions_a,
                                  std::span<const ImpressionRecord> impressions_b, std::int64_t bin_width) {
  require(bin_width > 0, "bin width must be positive");
  BinnedMonitor out;
  if (impressions_a.empty() && impressions_b.empty()) return out;
  std::int64_t lo = INT64_MAX, hi = INT64_MIN;
  for (auto span : {impressions_a, impressions_b})
    for (const auto& r : span) lo = std::min(lo, r.timestamp), hi = std::max(hi, r.timestamp);
  const auto count = static_cast<std::size_t>((hi - lo) / bin_width + 1);
  out.bins.resize(count);
  for (std::size_t i = 0; i < count; ++i) out.bins[i].start = lo + static_cast<std::int64_t>(i) * bin_width;
  for (const auto& r : impressions_a) {
    auto& b = out.bins[static_cast<std::size_t>((r.timestamp - lo) / bin_width)];
    ++b.views_a;
    b.clicks_a += r.clicked;
  }
  for (const auto& r : impressions_b) {
    auto& b = out.bins[static_cast<std::size_t>((r.timestamp - lo) / bin_width)];
    ++b.views_b;
    b.clicks_b += r.clicked;
  }
  std::size_t wins = 0;
  for (auto& b : out.bins) {
    b.ctr_a = ctr(b.clicks_a, b.views_a);
    b.ctr_b = ctr(b.clicks_b, b.views_b);
    b.b_wins = b.ctr_b > b.ctr_a;
    wins += b.b_wins;
  }
  out.b_win_fraction = static_cast<double>(wins) / static_cast<double>(out.bins.size());
  return out;
}

RampPlan make_ramp_plan(std::span<const double> fractions, std::span<const std::int64_t> min_durations) {
  if (fractions.empty()) throw ValidationError("ramp plan needs at least one stage");
  if (fractions.size() != min_durations.size())
    throw ValidationError("ramp plan needs one minimum duration per stage");
  RampPlan plan;
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    const double f = fractions[i];
    if (!(f > 0.0 && f <= 0.5))
      throw ValidationError("ramp fraction " + tsv::format_double(f) + " outside (0, 0.5]");
    if (i > 0 && !(f > fractions[i - 1])) throw ValidationError("ramp fractions must strictly increase");
    if (min_durations[i] <= 0) throw ValidationError("ramp stage durations must be positive");
    plan.stages.push_back({f, min_durations[i]});
  }
  return plan;
}

ExperimentReport make_report(std::span<const ImpressionRecord> impressions_a,
                             std::span<const ImpressionRecord> impressions_b, std::int64_t bin_width) {
  ExperimentReport rep;
  for (const auto& r : impressions_a) ++rep.views_a, rep.clicks_a += r.clicked;
  for (const auto& r : impressions_b) ++rep.views_b, rep.clicks_b += r.clicked;
  rep.ctr_a = ctr(rep.clicks_a, rep.views_a);
  rep.ctr_b = ctr(rep.clicks_b, rep.views_b);
  rep.test = binomial_ab_test(rep.clicks_a, rep.views_a, rep.clicks_b, rep.views_b);
  rep.monitor = time_binned_monitor(impressions_a, impressions_b, bin_width);
  return rep;
}

namespace {

std::string opt(const std::optional<double>& v) { return v ? tsv::format_double(*v) : "NA"; }

std::optional<double> parse_opt(std::string_view s, const std::string& where) {
  if (s == "NA") return std::nullopt;
  auto v = tsv::parse_double(s);
  if (!v) throw ValidationError(where + ": bad number '" + std::string(s) + "'");
  return v;
}

}  // namespace

void save_report(const ExperimentReport& rep, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot write report " + path.string());
  out << "metric\tarm_a\tarm_b\tdelta\tp_value\n";
  out << "arm\t" << rep.name_a << '\t' << rep.name_b << "\tNA\tNA\n";
  out << "views\t" << rep.views_a << '\t' << rep.views_b << "\tNA\tNA\n";
  out << "clicks\t" << rep.clicks_a << '\t' << rep.clicks_b << "\tNA\tNA\n";
  out << "ctr\t" << tsv::format_double(rep.ctr_a) << '\t' << tsv::format_double(rep.ctr_b) << '\t'
      << opt(rep.test.delta_ctr) << '\t' << tsv::format_double(rep.test.p_value) << '\n';
  out << "z\tNA\tNA\t" << opt(rep.test.z) << "\tNA\n";
  for (const auto& b : rep.monitor.bins) {
    const auto d = b.ctr_a > 0 ? std::optional<double>((b.ctr_b - b.ctr_a) / b.ctr_a) : std::nullopt;
    out << "bin:" << b.start << '\t' << b.clicks_a << '/' << b.views_a << '\t' << b.clicks_b << '/' << b.views_b
        << '\t' << opt(d) << "\tNA\n";
  }
  out << "b_win_fraction\tNA\tNA\t" << tsv::format_double(rep.monitor.b_win_fraction) << "\tNA\n";
}

ExperimentReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open report " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "metric\tarm_a\tarm_b\tdelta\tp_value")
    throw ValidationError(path.string() + ":1: not a report file");
  ExperimentReport rep;
  std::size_t line_no = 1;
  auto count = [&](std::string_view s) {
    auto v = tsv::parse_int(s);
    if (!v || *v < 0) throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": bad count");
    return static_cast<std::uint64_t>(*v);
  };
  auto fraction = [&](std::string_view s, std::uint64_t& clicks, std::uint64_t& views) {
    const auto slash = s.find('/');
    if (slash == std::string_view::npos) throw ValidationError(path.string() + ": bad bin cell");
    clicks = count(s.substr(0, slash));
    views = count(s.substr(slash + 1));
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = tsv::split(line);
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (f.size() != 5) throw ValidationError(where + ": expected 5 fields");
    if (f[0] == "arm") {
      rep.name_a = f[1];
      rep.name_b = f[2];
    } else if (f[0] == "views") {
      rep.views_a = count(f[1]);
      rep.views_b = count(f[2]);
    } else if (f[0] == "clicks") {
      rep.clicks_a = count(f[1]);
      rep.clicks_b = count(f[2]);
    } else if (f[0] == "ctr") {
      rep.ctr_a = *parse_opt(f[1], where);
      rep.ctr_b = *parse_opt(f[2], where);
      rep.test.delta_ctr = parse_opt(f[3], where);
      rep.test.p_value = *parse_opt(f[4], where);
    } else if (f[0] == "z") {
      rep.test.z = parse_opt(f[3], where);
      rep.test.exact = !rep.test.z;
    } else if (f[0].substr(0, 4) == "bin:") {
      TimeBin b;
      auto start = tsv::parse_int(f[0].substr(4));
      if (!start) throw ValidationError(where + ": bad bin start");
      b.start = *start;
      fraction(f[1], b.clicks_a, b.views_a);
      fraction(f[2], b.clicks_b, b.views_b);
      b.ctr_a = ctr(b.clicks_a, b.views_a);
      b.ctr_b = ctr(b.clicks_b, b.views_b);
      b.b_wins = b.ctr_b > b.ctr_a;
      rep.monitor.bins.push_back(b);
    } else if (f[0] == "b_win_fraction") {
      rep.monitor.b_win_fraction = *parse_opt(f[3], where);
    } else {
      throw ValidationError(where + ": unknown metric '" + std::string(f[0]) + "'");
    }
  }
  return rep;
}

std::string format_report(const ExperimentReport& rep) {
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-10s %14s %14s\n", "metric", rep.name_a.c_str(), rep.name_b.c_str());
  out << buf;
  std::snprintf(buf, sizeof buf, "%-10s %14llu %14llu\n", "views", static_cast<unsigned long long>(rep.views_a),
                static_cast<unsigned long long>(rep.views_b));
  out << buf;
  std::snprintf(buf, sizeof buf, "%-10s %14llu %14llu\n", "clicks", static_cast<unsigned long long>(rep.clicks_a),
                static_cast<unsigned long long>(rep.clicks_b));
  out << buf;
  std::snprintf(buf, sizeof buf, "%-10s %14.6f %14.6f\n", "ctr", rep.ctr_a, rep.ctr_b);
  out << buf;
  if (rep.test.delta_ctr)
    std::snprintf(buf, sizeof buf, "delta_ctr  %+.2f%%\n", *rep.test.delta_ctr * 100.0);
  else
    std::snprintf(buf, sizeof buf, "delta_ctr  undefined (arm A has no clicks)\n");
  out << buf;
  std::snprintf(buf, sizeof buf, "p_value    %.4g (%s)\n", rep.test.p_value,
                rep.test.exact ? "exact conditional test" : "two-proportion z-test");
  out << buf;
  if (!rep.monitor.bins.empty()) {
    std::size_t wins = 0;
    for (const auto& b : rep.monitor.bins) wins += b.b_wins;
    std::snprintf(buf, sizeof buf, "B wins %zu of %zu time bins (%.1f%%)\n", wins, rep.monitor.bins.size(),
                  rep.monitor.b_win_fraction * 100.0);
    out << buf;
  }
  return out.str();
}

}  // namespace mrsys
