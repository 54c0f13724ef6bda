#ifndef CRLAB_OBJECTIVES_HPP_
#define CRLAB_OBJECTIVES_HPP_

// Training objectives and read-only probes on a Transformer: next-token and
// masked-token cross-entropy, 80/10/10 masking, summed sentence
// log-probability, and mean-pooled word embeddings per layer.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "crlab/error.hpp"
#include "crlab/model.hpp"
#include "crlab/rng.hpp"
#include "crlab/tokenizer.hpp"

namespace crlab {

// Position t predicts token t+1; both must be unmasked. The last position
// never carries a target.
inline std::vector<std::int64_t> causal_targets(std::span<const TokenId> ids,
                                                std::span<const std::uint8_t> loss_mask) {
  if (!loss_mask.empty() && loss_mask.size() != ids.size())
    throw ValidationError("loss_mask length does not match ids");
  std::vector<std::int64_t> targets(ids.size(), kIgnore);
  for (std::size_t t = 0; t + 1 < ids.size(); ++t) {
    const bool ok = loss_mask.empty() || (loss_mask[t] && loss_mask[t + 1]);
    if (ok) targets[t] = ids[t + 1];
  }
  return targets;
}

inline std::vector<std::int64_t> mlm_targets(std::span<const TokenId> original,
                                             std::span<const std::size_t> labels) {
  std::vector<std::int64_t> targets(original.size(), kIgnore);
  for (std::size_t p : labels) {
    if (p >= original.size())
      throw ValidationError("label position out of range");
    targets[p] = original[p];
  }
  return targets;
}

// Mean cross-entropy over positions with a target. When `dlogits` is given
// it receives d(loss)/d(logits). Sums are accumulated in double.
template <typename T>
double cross_entropy(const RowMatrix<T>& logits,
                     std::span<const std::int64_t> targets,
                     RowMatrix<T>* dlogits = nullptr) {
  if (static_cast<std::size_t>(logits.rows()) != targets.size())
    throw ValidationError("logits rows do not match targets");
  std::size_t count = 0;
  for (auto t : targets) count += t != kIgnore;
  if (count == 0)
    throw ValidationError("loss is undefined: every position is masked");
  if (dlogits) dlogits->setZero(logits.rows(), logits.cols());
  double total = 0.0;
  const double inv = 1.0 / static_cast<double>(count);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const auto target = targets[i];
    if (target == kIgnore) continue;
    if (target < 0 || target >= logits.cols())
      throw ValidationError("target id outside the vocabulary");
    const auto row = logits.row(i).array();
    const T m = row.maxCoeff();
    const Eigen::Array<T, 1, Eigen::Dynamic> e = (row - m).exp();
    const double z = e.template cast<double>().sum();
    const double lse = static_cast<double>(m) + std::log(z);
    total += lse - static_cast<double>(logits(i, target));
    if (dlogits) {
      dlogits->row(i) = (e * static_cast<T>(inv / z)).matrix();
      (*dlogits)(i, target) -= static_cast<T>(inv);
    }
  }
  return total * inv;
}

template <typename T>
double loss_causal(const RowMatrix<T>& logits, std::span<const TokenId> ids,
                   std::span<const std::uint8_t> loss_mask = {}) {
  const auto targets = causal_targets(ids, loss_mask);
  return cross_entropy(logits, targets);
}

template <typename T>
double loss_mlm(const RowMatrix<T>& logits, std::span<const TokenId> original,
                std::span<const std::size_t> labels) {
  if (labels.empty()) throw ValidationError("loss_mlm needs at least one label");
  const auto targets = mlm_targets(original, labels);
  return cross_entropy(logits, targets);
}

struct MaskedInput {
  std::vector<TokenId> ids;          // corrupted
  std::vector<std::size_t> labels;   // positions to predict, ascending
};

// Each non-special position is selected with probability `rate`; selected
// positions become <|mask|> (80%), a uniformly random non-special id (10%),
// or stay unchanged (10%).
inline MaskedInput mask_for_mlm(std::span<const TokenId> ids, double rate,
                                std::uint64_t seed, TokenId mask_id,
                                std::size_t vocab_size) {
  if (!(rate >= 0.0 && rate <= 1.0))
    throw ValidationError("mask rate must lie in [0, 1]");
  if (vocab_size < kMinVocabSize)
    throw ValidationError("vocab_size must cover the special tokens");
  MaskedInput out;
  out.ids.assign(ids.begin(), ids.end());
  Xoshiro256 rng(derive_seed(seed, 0x4D4C4DULL));
  const std::uint64_t ordinary = vocab_size - kNumSpecials;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (Tokenizer::is_special(ids[i])) continue;
    // Three draws per position keep the stream aligned regardless of outcome.
    const double select = rng.uniform();
    const double action = rng.uniform();
    auto replacement = static_cast<TokenId>(rng.below(ordinary));
    if (replacement >= 256) replacement += kNumSpecials;
    if (!(select < rate)) continue;
    out.labels.push_back(i);
    if (action < 0.8) {
      out.ids[i] = mask_id;
    } else if (action < 0.9) {
      out.ids[i] = replacement;
    }
  }
  return out;
}

// Summed log-probability of each realized next token; no length
// normalization.
template <typename T>
double sequence_logprob(const Transformer<T>& model, std::span<const TokenId> ids) {
  if (model.config().objective != Objective::causal)
    throw ValidationError(
        "sequence_logprob is only defined for causal models; masked-model "
        "sentence scoring is not supported");
  if (ids.size() < 2)
    throw ValidationError("sequence_logprob needs at least 2 tokens");
  if (ids.size() > model.config().context_length)
    throw ValidationError("text of " + std::to_string(ids.size()) +
                          " tokens exceeds context_length " +
                          std::to_string(model.config().context_length));
  const auto fwd = model.forward(ids);
  double total = 0.0;
  for (std::size_t t = 0; t + 1 < ids.size(); ++t) {
    const auto row = fwd.logits.row(t);
    const double m = static_cast<double>(row.maxCoeff());
    double z = 0.0;
    for (Eigen::Index j = 0; j < row.size(); ++j)
      z += std::exp(static_cast<double>(row(j)) - m);
    total += static_cast<double>(row(ids[t + 1])) - m - std::log(z);
  }
  return total;
}

template <typename T>
double sequence_logprob(const Transformer<T>& model, const Tokenizer& tok,
                        std::string_view text) {
  const auto ids = tok.encode(text);
  return sequence_logprob(model, std::span<const TokenId>(ids));
}

// Mean of layer `layer`'s hidden states over the word's token positions.
// With a non-empty `prefix`, the word is encoded after the prefix tokens and
// only the word positions are pooled.
template <typename T>
std::vector<double> word_embedding(const Transformer<T>& model,
                                   const Tokenizer& tok, std::string_view word,
                                   std::size_t layer, std::string_view prefix = {}) {
  if (word.empty()) throw ValidationError("word_embedding needs a non-empty word");
  if (layer > model.config().n_layers)
    throw ValidationError("layer " + std::to_string(layer) + " > n_layers " +
                          std::to_string(model.config().n_layers));
  std::vector<TokenId> ids = tok.encode(prefix);
  const std::size_t start = ids.size();
  const auto word_ids = tok.encode(word);
  ids.insert(ids.end(), word_ids.begin(), word_ids.end());
  if (ids.size() > model.config().context_length)
    throw ValidationError("word does not fit in the context window");
  const auto fwd = model.forward(ids);
  const auto& h = fwd.hidden[layer];
  std::vector<double> out(model.config().d_model, 0.0);
  for (std::size_t t = start; t < ids.size(); ++t)
    for (std::size_t j = 0; j < out.size(); ++j)
      out[j] += static_cast<double>(h(t, j));
  const double inv = 1.0 / static_cast<double>(ids.size() - start);
  for (auto& v : out) v *= inv;
  return out;
}

}  // namespace crlab

#endif  // CRLAB_OBJECTIVES_HPP_
