#include "mrsys/embeddings.hpp"

#include <algorithm>
#include <fstream>

#include "mrsys/error.hpp"
#include "tsv.hpp"

namespace mrsys {

void save_embeddings(const Embeddings& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot write embeddings " + path.string());
  for (const auto& [id, vec] : table) {
    out << id;
    for (double v : vec) out << '\t' << tsv::format_double(v);
    out << '\n';
  }
  if (!out) throw RuntimeError("write failed for " + path.string());
}

Embeddings load_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open embeddings " + path.string());
  Embeddings table;
  std::string line;
  std::size_t line_no = 0, dim = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = tsv::split(line);
    const auto where = path.string() + ":" + std::to_string(line_no) + ": ";
    if (fields.size() < 2) throw ValidationError(where + "expected id and at least one value");
    if (dim == 0) dim = fields.size() - 1;
    if (fields.size() - 1 != dim) throw ValidationError(where + "inconsistent dimension");
    std::vector<double> vec;
    vec.reserve(dim);
    for (std::size_t k = 1; k < fields.size(); ++k) {
      auto v = tsv::parse_double(fields[k]);
      if (!v) throw ValidationError(where + "bad number '" + std::string(fields[k]) + "'");
      vec.push_back(*v);
    }
    table[std::string(fields[0])] = std::move(vec);
  }
  return table;
}

void sort_ranked(std::vector<ScoredItem>& items) {
  std::sort(items.begin(), items.end(), [](const ScoredItem& a, const ScoredItem& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.item_id < b.item_id;
  });
}

}  // namespace mrsys
