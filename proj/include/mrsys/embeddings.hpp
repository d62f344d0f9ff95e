#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace mrsys {

/// Id-keyed vectors; ordered so exports are byte-stable.
using Embeddings = std::map<std::string, std::vector<double>>;

/// UTF-8 TSV, one row per id: `id\tv1\t...\tvd`, 17 significant digits.
void save_embeddings(const Embeddings& table, const std::filesystem::path& path);
Embeddings load_embeddings(const std::filesystem::path& path);

struct ScoredItem {
  std::string item_id;
  double score = 0.0;

  friend bool operator==(const ScoredItem&, const ScoredItem&) = default;
};

/// Descending score, ties broken by ascending id.
void sort_ranked(std::vector<ScoredItem>& items);

}  // namespace mrsys
