#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mrsys/checkpoint.hpp"
#include "mrsys/data.hpp"
#include "mrsys/embeddings.hpp"
#include "mrsys/layers.hpp"
#include "mrsys/tensor.hpp"

namespace mrsys {

struct ItemContent {
  std::string item_id;
  std::string category;
  std::string postcode;
  std::string title;
  std::string description;
  std::optional<std::vector<double>> image_feature;  // backbone output
};

/// Item content TSV: `item_id\tcategory\tpostcode\ttitle\tdescription`.
void save_item_content(std::span<const ItemContent> items, const std::filesystem::path& path);
std::vector<ItemContent> load_item_content(const std::filesystem::path& path);
/// Image feature TSV `item_id\tv1..vd`; attaches features to matching items.
void save_image_features(std::span<const ItemContent> items, const std::filesystem::path& path);
void attach_image_features(std::vector<ItemContent>& items, const std::filesystem::path& path);

/// Lowercase, split on non-alphanumeric bytes, drop empty tokens.
std::vector<std::string> tokenize(std::string_view text);

// ---------------------------------------------------------------------------
// Skip-gram word embeddings

struct WordEmbeddings {
  IdIndex vocabulary;
  Tensor vectors;  // [V x d]
  std::vector<double> loss_trace;  // held-in loss after each epoch

  std::size_t dim() const { return vectors.cols(); }
  std::optional<std::span<const double>> find(const std::string& token) const;
  Embeddings to_table() const;
  static WordEmbeddings from_table(const Embeddings& table);
};

struct Word2VecConfig {
  std::size_t dim = 32;
  std::size_t window = 2;
  std::size_t negatives = 5;
  int epochs = 5;
  double learning_rate = 0.025;
  std::uint64_t seed = 0;
};

WordEmbeddings train_word_embeddings(const std::vector<std::vector<std::string>>& corpus,
                                     const Word2VecConfig& config);

/// Negative-sampling loss of one (center, context) pair:
///   -log s(out_ctx . in_c) - sum_k log s(-out_k . in_c)
/// Gradients are accumulated into the given tensors when non-null.
double skipgram_pair_loss(const Tensor& input_vectors, const Tensor& output_vectors,
                          std::size_t center, std::size_t context,
                          std::span<const std::size_t> negatives, Tensor* input_grad,
                          Tensor* output_grad);

/// Mean of known-token vectors; zero vector when no token is known.
std::vector<double> title_embedding(std::string_view title, const WordEmbeddings& emb);

// ---------------------------------------------------------------------------
// Text category classifier

struct TextEncoderConfig {
  std::vector<std::size_t> widths{2, 3, 4};
  std::size_t filters = 16;
  std::size_t repr_dim = 32;
  int epochs = 15;
  double learning_rate = 0.05;
  double l2 = 1e-4;
  std::size_t batch = 8;
  std::uint64_t seed = 0;
};

/// Convolutions over title+description token vectors, max-pooled, a tanh
/// representation layer, then a linear softmax head over categories.
class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(WordEmbeddings embeddings, std::vector<std::string> categories,
              const TextEncoderConfig& config);

  Tensor token_matrix(const ItemContent& item) const;
  std::vector<double> representation(const Tensor& tokens) const;
  std::vector<double> logits(const Tensor& tokens) const;
  std::string predict(const ItemContent& item) const;

  /// Mean cross-entropy over the batch; fills parameter gradients when `grads`.
  double loss(std::span<const Tensor> tokens, std::span<const std::size_t> labels, bool grads);
  ParamList params();

  const std::vector<std::string>& categories() const { return categories_; }
  std::size_t repr_dim() const { return repr_.out_dim(); }
  const WordEmbeddings& embeddings() const { return embeddings_; }
  std::vector<double> loss_trace;

  Checkpoint to_checkpoint();
  static TextEncoder from_checkpoint(const Checkpoint& ckpt, WordEmbeddings embeddings,
                                     std::vector<std::string> categories);

 private:
  WordEmbeddings embeddings_;
  std::vector<std::string> categories_;
  std::vector<Conv1dMaxPool> convs_;
  Dense repr_;
  Dense head_;
};

TextEncoder train_category_classifier(std::span<const ItemContent> items, const WordEmbeddings& emb,
                                      const TextEncoderConfig& config);

std::vector<double> text_representation(const ItemContent& item, const TextEncoder& encoder);

// ---------------------------------------------------------------------------
// Image tower

struct ImageTowerConfig {
  std::size_t hidden = 64;
  int epochs = 60;
  double learning_rate = 0.01;
  double l2 = 0.0;
  std::size_t batch = 16;
  std::uint64_t seed = 0;
};

/// Seven dense layers (ReLU between, linear output) mapping backbone features
/// to the word-embedding space.
class ImageEncoder {
 public:
  static constexpr std::size_t kLayers = 7;

  ImageEncoder() = default;
  ImageEncoder(std::size_t input_dim, std::size_t hidden, std::size_t output_dim);
  void init(Rng& rng);

  Tensor forward(const Tensor& x, std::vector<Dense::Cache>* caches = nullptr) const;
  void backward(const std::vector<Dense::Cache>& caches, const Tensor& dy);
  ParamList params();

  std::size_t input_dim() const { return layers_.front().in_dim(); }
  std::size_t output_dim() const { return layers_.back().out_dim(); }
  std::size_t layer_count() const { return layers_.size(); }
  std::vector<double> loss_trace;

  Checkpoint to_checkpoint();
  static ImageEncoder from_checkpoint(const Checkpoint& ckpt);

 private:
  std::vector<Dense> layers_;
};

ImageEncoder train_image_tower(std::span<const ItemContent> items, const WordEmbeddings& emb,
                               const ImageTowerConfig& config);

std::optional<std::vector<double>> image_representation(const ItemContent& item,
                                                        const ImageEncoder& encoder);

}  // namespace mrsys
