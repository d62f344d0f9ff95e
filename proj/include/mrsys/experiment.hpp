#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mrsys/bandit.hpp"
#include "mrsys/data.hpp"

namespace mrsys {

/// Mean over users with test activity of |top-n recommendations ∩ test items|.
double hit_rate_at_n(const std::map<std::string, std::vector<std::string>>& recommendations, const EventLog& test,
                     std::size_t n);

double ctr(std::uint64_t clicks, std::uint64_t views);

struct AbTestResult {
  std::optional<double> delta_ctr;  // absent when ctr_a == 0
  double p_value = 1.0;
  std::optional<double> z;          // absent when the exact test was used
  bool exact = false;
};

/// Two-sided two-proportion test; exact conditional test when either arm has
/// at most 30 views.
AbTestResult binomial_ab_test(std::uint64_t clicks_a, std::uint64_t views_a, std::uint64_t clicks_b,
                              std::uint64_t views_b);

struct TimeBin {
  std::int64_t start = 0;
  std::uint64_t clicks_a = 0, views_a = 0, clicks_b = 0, views_b = 0;
  double ctr_a = 0.0, ctr_b = 0.0;
  bool b_wins = false;
};

struct BinnedMonitor {
  std::vector<TimeBin> bins;
  double b_win_fraction = 0.0;
};

/// Bins aligned at the earliest timestamp of either log.
BinnedMonitor time_binned_monitor(std::span<const ImpressionRecord> impressions_a,
                                  std::span<const ImpressionRecord> impressions_b, std::int64_t bin_width);

struct RampStage {
  double fraction = 0.0;
  std::int64_t min_duration = 0;  // seconds
};

struct RampPlan {
  std::vector<RampStage> stages;
};

RampPlan make_ramp_plan(std::span<const double> fractions, std::span<const std::int64_t> min_durations);

struct ExperimentReport {
  std::string name_a = "A";
  std::string name_b = "B";
  std::uint64_t clicks_a = 0, views_a = 0, clicks_b = 0, views_b = 0;
  double ctr_a = 0.0, ctr_b = 0.0;
  AbTestResult test;
  BinnedMonitor monitor;
};

ExperimentReport make_report(std::span<const ImpressionRecord> impressions_a,
                             std::span<const ImpressionRecord> impressions_b, std::int64_t bin_width);

/// Machine-readable report: `metric\tarm_a\tarm_b\tdelta\tp_value` rows.
void save_report(const ExperimentReport& report, const std::filesystem::path& path);
ExperimentReport load_report(const std::filesystem::path& path);
/// Human-readable table.
std::string format_report(const ExperimentReport& report);

}  // namespace mrsys
