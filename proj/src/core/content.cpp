#include "mrsys/content.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "mrsys/error.hpp"
#include "tsv.hpp"

namespace mrsys {

// ---------------------------------------------------------------------------
// Files

namespace {
constexpr std::string_view kContentHeader = "item_id\tcategory\tpostcode\ttitle\tdescription";
}

void save_item_content(std::span<const ItemContent> items, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot write item content " + path.string());
  out << kContentHeader << '\n';
  for (const auto& it : items)
    out << it.item_id << '\t' << it.category << '\t' << it.postcode << '\t' << it.title << '\t'
        << it.description << '\n';
}

std::vector<ItemContent> load_item_content(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open item content " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kContentHeader)
    throw ValidationError(path.string() + ":1: expected header '" + std::string(kContentHeader) + "'");
  std::vector<ItemContent> items;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = tsv::split(line);
    if (f.size() != 5)
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": expected 5 fields");
    items.push_back({std::string(f[0]), std::string(f[1]), std::string(f[2]), std::string(f[3]),
                     std::string(f[4]), std::nullopt});
  }
  return items;
}

void save_image_features(std::span<const ItemContent> items, const std::filesystem::path& path) {
  Embeddings table;
  for (const auto& it : items)
    if (it.image_feature) table[it.item_id] = *it.image_feature;
  save_embeddings(table, path);
}

void attach_image_features(std::vector<ItemContent>& items, const std::filesystem::path& path) {
  const auto table = load_embeddings(path);
  for (auto& it : items) {
    auto f = table.find(it.item_id);
    if (f != table.end()) it.image_feature = f->second;
  }
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

// ---------------------------------------------------------------------------
// Word embeddings

std::optional<std::span<const double>> WordEmbeddings::find(const std::string& token) const {
  auto idx = vocabulary.find(token);
  if (!idx) return std::nullopt;
  return vectors.row(*idx);
}

Embeddings WordEmbeddings::to_table() const {
  Embeddings table;
  for (std::size_t i = 0; i < vocabulary.size(); ++i) {
    const auto r = vectors.row(i);
    table[vocabulary.id(i)] = std::vector<double>(r.begin(), r.end());
  }
  return table;
}

WordEmbeddings WordEmbeddings::from_table(const Embeddings& table) {
  WordEmbeddings emb;
  require(!table.empty(), "word embedding table is empty");
  const std::size_t d = table.begin()->second.size();
  emb.vectors = Tensor({table.size(), d});
  for (const auto& [token, vec] : table) {
    require(vec.size() == d, "word embedding dimension mismatch for '" + token + "'");
    const auto idx = emb.vocabulary.intern(token);
    std::copy(vec.begin(), vec.end(), emb.vectors.row(idx).begin());
  }
  return emb;
}

double skipgram_pair_loss(const Tensor& input_vectors, const Tensor& output_vectors,
                          std::size_t center, std::size_t context,
                          std::span<const std::size_t> negatives, Tensor* input_grad,
                          Tensor* output_grad) {
  const auto in = input_vectors.row(center);
  double loss = 0.0;
  auto term = [&](std::size_t target, double label) {
    const auto out = output_vectors.row(target);
    const double s = sigmoid(dot(out, in));
    loss -= label == 1.0 ? std::log(s) : std::log(1.0 - s);
    const double g = s - label;
    if (input_grad) {
      auto gi = input_grad->row(center);
      for (std::size_t j = 0; j < in.size(); ++j) gi[j] += g * out[j];
    }
    if (output_grad) {
      auto go = output_grad->row(target);
      for (std::size_t j = 0; j < in.size(); ++j) go[j] += g * in[j];
    }
  };
  term(context, 1.0);
  for (auto k : negatives) term(k, 0.0);
  return loss;
}

WordEmbeddings train_word_embeddings(const std::vector<std::vector<std::string>>& corpus,
                                     const Word2VecConfig& config) {
  std::size_t total_tokens = 0;
  std::map<std::string, std::size_t> counts;
  for (const auto& sentence : corpus)
    for (const auto& tok : sentence) ++counts[tok], ++total_tokens;
  if (counts.empty()) throw ValidationError("word embeddings: empty corpus");
  require(config.dim >= 1 && config.window >= 1 && config.epochs >= 1,
          "word embeddings: dim, window and epochs must be positive");

  WordEmbeddings emb;
  std::vector<double> noise_weights;
  for (const auto& [tok, n] : counts) {
    emb.vocabulary.intern(tok);
    noise_weights.push_back(std::pow(static_cast<double>(n), 0.75));
  }
  const std::size_t vocab = counts.size(), d = config.dim;
  std::vector<std::vector<std::size_t>> ids;
  for (const auto& sentence : corpus) {
    std::vector<std::size_t> s;
    for (const auto& tok : sentence) s.push_back(*emb.vocabulary.find(tok));
    ids.push_back(std::move(s));
  }

  Rng rng(config.seed);
  std::discrete_distribution<std::size_t> noise(noise_weights.begin(), noise_weights.end());
  Tensor in({vocab, d}), out({vocab, d});
  for (double& v : in.data()) v = uniform(rng, -0.5, 0.5) / static_cast<double>(d);

  auto draw_negatives = [&](std::size_t context, std::vector<std::size_t>& negs) {
    negs.clear();
    for (std::size_t k = 0; k < config.negatives; ++k) {
      std::size_t n = noise(rng);
      for (int retry = 0; n == context && vocab > 1 && retry < 8; ++retry) n = noise(rng);
      negs.push_back(n);
    }
  };

  // Fixed held-in sample used to track the objective across epochs.
  struct Probe {
    std::size_t center, context;
    std::vector<std::size_t> negatives;
  };
  std::vector<Probe> probes;
  Rng probe_rng(sub_seed(config.seed, "probe"));
  for (std::size_t s = 0; s < ids.size() && probes.size() < 512; ++s)
    for (std::size_t p = 0; p + 1 < ids[s].size() && probes.size() < 512; ++p) {
      Probe pr{ids[s][p], ids[s][p + 1], {}};
      for (std::size_t k = 0; k < config.negatives; ++k)
        pr.negatives.push_back(std::discrete_distribution<std::size_t>(
            noise_weights.begin(), noise_weights.end())(probe_rng));
      probes.push_back(std::move(pr));
    }
  auto probe_loss = [&] {
    if (probes.empty()) return 0.0;
    double total = 0.0;
    for (const auto& p : probes)
      total += skipgram_pair_loss(in, out, p.center, p.context, p.negatives, nullptr, nullptr);
    return total / static_cast<double>(probes.size());
  };
  emb.loss_trace.push_back(probe_loss());

  const double steps = static_cast<double>(config.epochs) * static_cast<double>(total_tokens);
  double done = 0.0;
  std::vector<std::size_t> negs;
  std::vector<double> grad_in(d);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (const auto& sentence : ids) {
      for (std::size_t p = 0; p < sentence.size(); ++p, done += 1.0) {
        const double lr = config.learning_rate * std::max(0.1, 1.0 - done / steps);
        const std::size_t center = sentence[p];
        const std::size_t lo = p >= config.window ? p - config.window : 0;
        const std::size_t hi = std::min(sentence.size() - 1, p + config.window);
        for (std::size_t q = lo; q <= hi; ++q) {
          if (q == p) continue;
          draw_negatives(sentence[q], negs);
          std::fill(grad_in.begin(), grad_in.end(), 0.0);
          auto vin = in.row(center);
          auto update = [&](std::size_t target, double label) {
            auto vout = out.row(target);
            const double g = sigmoid(dot(vout, vin)) - label;
            for (std::size_t j = 0; j < d; ++j) {
              grad_in[j] += g * vout[j];
              vout[j] -= lr * g * vin[j];
            }
          };
          update(sentence[q], 1.0);
          for (auto k : negs) update(k, 0.0);
          for (std::size_t j = 0; j < d; ++j) vin[j] -= lr * grad_in[j];
        }
      }
    }
    emb.loss_trace.push_back(probe_loss());
  }
  if (!in.all_finite()) throw RuntimeError("word embedding training diverged");
  emb.vectors = std::move(in);
  return emb;
}

std::vector<double> title_embedding(std::string_view title, const WordEmbeddings& emb) {
  std::vector<double> mean(emb.dim(), 0.0);
  std::size_t known = 0;
  for (const auto& tok : tokenize(title)) {
    auto v = emb.find(tok);
    if (!v) continue;
    for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += (*v)[j];
    ++known;
  }
  if (known > 0)
    for (double& x : mean) x /= static_cast<double>(known);
  return mean;
}

// ---------------------------------------------------------------------------
// Text encoder

TextEncoder::TextEncoder(WordEmbeddings embeddings, std::vector<std::string> categories,
                         const TextEncoderConfig& config)
    : embeddings_(std::move(embeddings)), categories_(std::move(categories)) {
  require(!config.widths.empty() && config.filters >= 1 && config.repr_dim >= 1,
          "text encoder: invalid convolution configuration");
  for (auto w : config.widths) convs_.emplace_back(w, embeddings_.dim(), config.filters);
  repr_ = Dense(config.widths.size() * config.filters, config.repr_dim, Activation::Tanh);
  head_ = Dense(config.repr_dim, categories_.size(), Activation::Identity);
  Rng rng(config.seed);
  for (auto& c : convs_) c.init(rng);
  repr_.init(rng);
  head_.init(rng);
}

Tensor TextEncoder::token_matrix(const ItemContent& item) const {
  std::vector<double> data;
  std::size_t rows = 0;
  for (const auto* text : {&item.title, &item.description})
    for (const auto& tok : tokenize(*text)) {
      auto v = embeddings_.find(tok);
      if (!v) continue;
      data.insert(data.end(), v->begin(), v->end());
      ++rows;
    }
  const std::size_t d = embeddings_.dim();
  return Tensor({rows, d}, std::move(data));
}

namespace {
Tensor concat_pooled(const std::vector<Conv1dMaxPool>& convs, const Tensor& tokens,
                     std::vector<Conv1dMaxPool::Cache>* caches) {
  std::vector<double> pooled;
  if (caches) caches->resize(convs.size());
  for (std::size_t c = 0; c < convs.size(); ++c) {
    const Tensor y = convs[c].forward(tokens, caches ? &(*caches)[c] : nullptr);
    pooled.insert(pooled.end(), y.data().begin(), y.data().end());
  }
  const std::size_t n = pooled.size();
  return Tensor({n}, std::move(pooled));
}
}  // namespace

std::vector<double> TextEncoder::representation(const Tensor& tokens) const {
  const Tensor r = repr_.forward(concat_pooled(convs_, tokens, nullptr));
  return {r.data().begin(), r.data().end()};
}

std::vector<double> TextEncoder::logits(const Tensor& tokens) const {
  const auto r = representation(tokens);
  const Tensor l = head_.forward(Tensor::vector(r));
  return {l.data().begin(), l.data().end()};
}

std::string TextEncoder::predict(const ItemContent& item) const {
  const auto l = logits(token_matrix(item));
  return categories_[static_cast<std::size_t>(std::max_element(l.begin(), l.end()) - l.begin())];
}

double TextEncoder::loss(std::span<const Tensor> tokens, std::span<const std::size_t> labels,
                         bool grads) {
  auto ps = params();
  if (grads) zero_grads(ps);
  double total = 0.0;
  const double inv = 1.0 / static_cast<double>(tokens.size());
  for (std::size_t n = 0; n < tokens.size(); ++n) {
    std::vector<Conv1dMaxPool::Cache> conv_caches;
    Dense::Cache repr_cache, head_cache;
    const Tensor pooled = concat_pooled(convs_, tokens[n], grads ? &conv_caches : nullptr);
    const Tensor r = repr_.forward(pooled, grads ? &repr_cache : nullptr);
    const Tensor l = head_.forward(r, grads ? &head_cache : nullptr);
    const std::size_t label = labels[n];
    const auto ce = softmax_cross_entropy(l, std::span<const std::size_t>(&label, 1));
    total += ce.value * inv;
    if (!grads) continue;
    Tensor dl = ce.grad;
    for (double& v : dl.data()) v *= inv;
    const Tensor dr = head_.backward(head_cache, dl);
    const Tensor dpooled = repr_.backward(repr_cache, dr);
    std::size_t off = 0;
    for (std::size_t c = 0; c < convs_.size(); ++c) {
      const std::size_t f = convs_[c].filters();
      Tensor dy({f}, std::vector<double>(dpooled.data().begin() + static_cast<std::ptrdiff_t>(off),
                                         dpooled.data().begin() + static_cast<std::ptrdiff_t>(off + f)));
      convs_[c].backward(conv_caches[c], dy);
      off += f;
    }
  }
  return total;
}

ParamList TextEncoder::params() {
  ParamList out;
  for (std::size_t c = 0; c < convs_.size(); ++c) convs_[c].collect("conv" + std::to_string(c), out);
  repr_.collect("repr", out);
  head_.collect("head", out);
  return out;
}

Checkpoint TextEncoder::to_checkpoint() {
  Checkpoint ckpt;
  ckpt.put("", params());
  std::vector<double> widths;
  for (const auto& c : convs_) widths.push_back(static_cast<double>(c.width()));
  ckpt.put("config.widths", Tensor::vector(widths));
  ckpt.put_scalar("config.filters", static_cast<double>(convs_.front().filters()));
  ckpt.put_scalar("config.repr_dim", static_cast<double>(repr_dim()));
  return ckpt;
}

TextEncoder TextEncoder::from_checkpoint(const Checkpoint& ckpt, WordEmbeddings embeddings,
                                         std::vector<std::string> categories) {
  TextEncoderConfig cfg;
  cfg.widths.clear();
  for (double w : ckpt.get("config.widths").data()) cfg.widths.push_back(static_cast<std::size_t>(w));
  cfg.filters = static_cast<std::size_t>(ckpt.scalar("config.filters"));
  cfg.repr_dim = static_cast<std::size_t>(ckpt.scalar("config.repr_dim"));
  TextEncoder enc(std::move(embeddings), std::move(categories), cfg);
  ckpt.restore("", enc.params());
  return enc;
}

TextEncoder train_category_classifier(std::span<const ItemContent> items, const WordEmbeddings& emb,
                                      const TextEncoderConfig& config) {
  std::set<std::string> category_set;
  for (const auto& it : items) category_set.insert(it.category);
  if (category_set.size() < 2)
    throw ValidationError("category classifier needs at least two categories");
  std::vector<std::string> categories(category_set.begin(), category_set.end());
  TextEncoder enc(emb, categories, config);

  std::vector<Tensor> tokens;
  std::vector<std::size_t> labels;
  for (const auto& it : items) {
    tokens.push_back(enc.token_matrix(it));
    labels.push_back(static_cast<std::size_t>(
        std::lower_bound(categories.begin(), categories.end(), it.category) - categories.begin()));
  }
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(sub_seed(config.seed, "order"));
  auto params = enc.params();
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += config.batch) {
      const std::size_t end = std::min(order.size(), start + config.batch);
      std::vector<Tensor> bt;
      std::vector<std::size_t> bl;
      for (std::size_t k = start; k < end; ++k) bt.push_back(tokens[order[k]]), bl.push_back(labels[order[k]]);
      enc.loss(bt, bl, true);
      sgd_step(params, config.learning_rate, config.l2);
    }
    enc.loss_trace.push_back(enc.loss(tokens, labels, false));
  }
  return enc;
}

std::vector<double> text_representation(const ItemContent& item, const TextEncoder& encoder) {
  return encoder.representation(encoder.token_matrix(item));
}

// ---------------------------------------------------------------------------
// Image tower

ImageEncoder::ImageEncoder(std::size_t input_dim, std::size_t hidden, std::size_t output_dim) {
  require(input_dim >= 1 && hidden >= 1 && output_dim >= 1, "image tower dimensions must be positive");
  for (std::size_t k = 0; k < kLayers; ++k) {
    const std::size_t in = k == 0 ? input_dim : hidden;
    const std::size_t out = k + 1 == kLayers ? output_dim : hidden;
    layers_.emplace_back(in, out, k + 1 == kLayers ? Activation::Identity : Activation::ReLU);
  }
}

void ImageEncoder::init(Rng& rng) {
  for (auto& l : layers_) l.init(rng);
}

Tensor ImageEncoder::forward(const Tensor& x, std::vector<Dense::Cache>* caches) const {
  if (caches) caches->resize(layers_.size());
  Tensor h = x;
  for (std::size_t k = 0; k < layers_.size(); ++k) h = layers_[k].forward(h, caches ? &(*caches)[k] : nullptr);
  return h;
}

void ImageEncoder::backward(const std::vector<Dense::Cache>& caches, const Tensor& dy) {
  Tensor g = dy;
  for (std::size_t k = layers_.size(); k-- > 0;) g = layers_[k].backward(caches[k], g);
}

ParamList ImageEncoder::params() {
  ParamList out;
  for (std::size_t k = 0; k < layers_.size(); ++k) layers_[k].collect("layer" + std::to_string(k), out);
  return out;
}

Checkpoint ImageEncoder::to_checkpoint() {
  Checkpoint ckpt;
  ckpt.put("", params());
  return ckpt;
}

ImageEncoder ImageEncoder::from_checkpoint(const Checkpoint& ckpt) {
  const auto& first = ckpt.get("layer0.weight");
  const auto& last = ckpt.get("layer" + std::to_string(kLayers - 1) + ".weight");
  ImageEncoder enc(first.cols(), first.rows(), last.rows());
  ckpt.restore("", enc.params());
  return enc;
}

ImageEncoder train_image_tower(std::span<const ItemContent> items, const WordEmbeddings& emb,
                               const ImageTowerConfig& config) {
  std::vector<const ItemContent*> usable;
  for (const auto& it : items)
    if (it.image_feature) usable.push_back(&it);
  if (usable.empty()) throw ValidationError("image tower: no items with image features");
  const std::size_t in_dim = usable.front()->image_feature->size();
  for (const auto* it : usable)
    require(it->image_feature->size() == in_dim, "image tower: inconsistent feature dimension");

  const std::size_t n = usable.size(), out_dim = emb.dim();
  Tensor x({n, in_dim}), y({n, out_dim});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(usable[i]->image_feature->begin(), usable[i]->image_feature->end(), x.row(i).begin());
    const auto t = title_embedding(usable[i]->title, emb);
    std::copy(t.begin(), t.end(), y.row(i).begin());
  }

  ImageEncoder enc(in_dim, config.hidden, out_dim);
  Rng rng(config.seed);
  enc.init(rng);
  auto params = enc.params();
  enc.loss_trace.push_back(mse_loss(enc.forward(x), y).value);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += config.batch) {
      const std::size_t end = std::min(n, start + config.batch);
      Tensor bx({end - start, in_dim}), by({end - start, out_dim});
      for (std::size_t k = start; k < end; ++k) {
        std::copy(x.row(order[k]).begin(), x.row(order[k]).end(), bx.row(k - start).begin());
        std::copy(y.row(order[k]).begin(), y.row(order[k]).end(), by.row(k - start).begin());
      }
      zero_grads(params);
      std::vector<Dense::Cache> caches;
      const Tensor pred = enc.forward(bx, &caches);
      enc.backward(caches, mse_loss(pred, by).grad);
      sgd_step(params, config.learning_rate, config.l2);
    }
    enc.loss_trace.push_back(mse_loss(enc.forward(x), y).value);
  }
  return enc;
}

std::optional<std::vector<double>> image_representation(const ItemContent& item,
                                                        const ImageEncoder& encoder) {
  if (!item.image_feature) return std::nullopt;
  require(item.image_feature->size() == encoder.input_dim(), "image feature dimension mismatch");
  const Tensor y = encoder.forward(Tensor::vector(*item.image_feature));
  return std::vector<double>(y.data().begin(), y.data().end());
}

}  // namespace mrsys
