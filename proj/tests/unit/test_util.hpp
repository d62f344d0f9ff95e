#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <unistd.h>

#include "mrsys/data.hpp"

namespace testutil {

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("mrsys_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream(path, std::ios::binary) << text;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline mrsys::EventLog random_log(std::mt19937_64& rng, std::size_t n, int users = 5, int items = 7,
                                  std::int64_t horizon = 1000) {
  std::vector<mrsys::Event> events;
  for (std::size_t i = 0; i < n; ++i) {
    mrsys::Event e;
    e.user_id = "u" + std::to_string(rng() % users);
    e.item_id = "i" + std::to_string(rng() % items);
    e.timestamp = static_cast<std::int64_t>(rng() % horizon);
    e.kind = rng() % 4 == 0 ? mrsys::EventKind::Conversion : mrsys::EventKind::Click;
    events.push_back(e);
  }
  return mrsys::EventLog(std::move(events));
}

inline mrsys::Event ev(std::string u, std::string i, std::int64_t t,
                       mrsys::EventKind k = mrsys::EventKind::Click) {
  return {std::move(u), std::move(i), t, k};
}

}  // namespace testutil
