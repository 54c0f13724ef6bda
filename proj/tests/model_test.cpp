#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "crlab/model.hpp"
#include "crlab/objectives.hpp"
#include "crlab/optim.hpp"
#include "test_support.hpp"

namespace crlab {
namespace {

using oracle::tiny_config;

std::vector<TokenId> some_ids(std::size_t n, std::uint64_t seed, std::size_t vocab) {
  Xoshiro256 rng(seed);
  std::vector<TokenId> ids(n);
  for (auto& id : ids) id = static_cast<TokenId>(rng.below(vocab));
  return ids;
}

TEST(ModelConfig, ParameterCountMatchesHandArithmetic) {
  ModelConfig c;
  c.n_layers = 2;
  c.n_heads = 4;
  c.d_model = 64;
  c.d_ff = 256;
  c.vocab_size = 512;
  c.context_length = 128;
  // wte 512*64 + wpe 128*64 + 2 * (ln 4*64 + qkv 64*192+192 + proj 64*64+64
  //   + fc 64*256+256 + proj 256*64+64) + ln_f 2*64
  const std::size_t per_layer = 4 * 64 + (64 * 192 + 192) + (64 * 64 + 64) +
                                (64 * 256 + 256) + (256 * 64 + 64);
  const std::size_t expected = 512 * 64 + 128 * 64 + 2 * per_layer + 2 * 64;
  EXPECT_EQ(expected, 141056u);
  EXPECT_EQ(parameter_count(c), expected);
  Transformer<float> model(c);
  EXPECT_EQ(model.num_params(), expected);
}

TEST(ModelConfig, RejectsIndivisibleHeads) {
  ModelConfig c = tiny_config();
  c.d_model = 65;
  c.n_heads = 4;
  EXPECT_THROW(c.validate(), ValidationError);
  EXPECT_THROW(Transformer<double>{c}, ValidationError);
  c = tiny_config();
  c.context_length = 1;
  EXPECT_THROW(c.validate(), ValidationError);
  c = tiny_config();
  c.vocab_size = 100;
  EXPECT_THROW(c.validate(), ValidationError);
}

TEST(Init, DeterministicPerSeed) {
  const auto c = tiny_config();
  Transformer<double> a(c), b(c);
  EXPECT_TRUE(std::equal(a.params().begin(), a.params().end(), b.params().begin()));
  auto c2 = c;
  c2.init_seed = 8;
  Transformer<double> d(c2);
  EXPECT_FALSE(std::equal(a.params().begin(), a.params().end(), d.params().begin()));
}

TEST(Init, ResidualProjectionsUseScaledStd) {
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 64;
  c.n_heads = 4;
  c.d_ff = 256;
  c.vocab_size = 512;
  Transformer<double> m(c);
  auto sample_std = [&](std::size_t slot) {
    auto t = m.tensor(slot);
    const double mean = t.mean();
    return std::sqrt((t.array() - mean).square().mean());
  };
  EXPECT_NEAR(sample_std(m.layout().wte), 0.02, 0.001);
  EXPECT_NEAR(sample_std(m.layout().layers[0].mlp_w), 0.02 / 2.0, 0.0005);
  EXPECT_EQ(m.tensor(m.layout().layers[1].ln2_g).minCoeff(), 1.0);
}

TEST(Forward, ShapesAndHiddenStates) {
  const auto c = tiny_config();
  Transformer<double> m(c);
  const auto ids = some_ids(6, 1, c.vocab_size);
  const auto r = m.forward(ids);
  EXPECT_EQ(r.logits.rows(), 6);
  EXPECT_EQ(r.logits.cols(), static_cast<Eigen::Index>(c.vocab_size));
  ASSERT_EQ(r.hidden.size(), c.n_layers + 1);
  for (const auto& h : r.hidden) {
    EXPECT_EQ(h.rows(), 6);
    EXPECT_EQ(h.cols(), static_cast<Eigen::Index>(c.d_model));
  }
}

TEST(Forward, RejectsBadInputs) {
  const auto c = tiny_config();
  Transformer<double> m(c);
  std::vector<TokenId> too_long(c.context_length + 1, 1);
  EXPECT_THROW(m.forward(too_long), ValidationError);
  std::vector<TokenId> bad_id{1, static_cast<TokenId>(c.vocab_size)};
  EXPECT_THROW(m.forward(bad_id), ValidationError);
}

TEST(Forward, CausalLogitsIgnoreTheFuture) {
  const auto c = tiny_config();
  Transformer<double> m(c);
  oracle::perturb(m, 3, 0.3);
  auto ids = some_ids(8, 2, c.vocab_size);
  const auto base = m.forward(ids);
  for (std::size_t t = 0; t + 1 < ids.size(); ++t) {
    auto altered = ids;
    for (std::size_t u = t + 1; u < ids.size(); ++u)
      altered[u] = static_cast<TokenId>((altered[u] + 17 * (u + 1)) % c.vocab_size);
    const auto other = m.forward(altered);
    for (std::size_t s = 0; s <= t; ++s)
      EXPECT_TRUE((base.logits.row(s).array() == other.logits.row(s).array()).all())
          << "position " << s << " changed after altering tokens > " << t;
  }
}

TEST(Forward, MaskedObjectiveSeesTheFuture) {
  const auto c = tiny_config(Objective::masked);
  Transformer<double> m(c);
  oracle::perturb(m, 3, 0.3);
  auto ids = some_ids(8, 2, c.vocab_size);
  const auto base = m.forward(ids);
  ids.back() = (ids.back() + 1) % c.vocab_size;
  const auto other = m.forward(ids);
  EXPECT_GT((base.logits.row(0) - other.logits.row(0)).norm(), 0.0);
}

TEST(Forward, SoftmaxRowsNormalize) {
  ModelConfig c = tiny_config(Objective::causal, DType::f32);
  Transformer<float> m(c);
  oracle::perturb(m, 4, 0.5);
  const auto r = m.forward(some_ids(8, 5, c.vocab_size));
  for (Eigen::Index i = 0; i < r.logits.rows(); ++i) {
    const double mx = r.logits.row(i).maxCoeff();
    double z = 0.0;
    for (Eigen::Index j = 0; j < r.logits.cols(); ++j) z += std::exp(r.logits(i, j) - mx);
    double sum = 0.0;
    for (Eigen::Index j = 0; j < r.logits.cols(); ++j)
      sum += std::exp(r.logits(i, j) - mx) / z;
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
}

// --- losses ---

TEST(Loss, UniformLogitsGiveLogV) {
  for (std::size_t V : {256u, 512u, 8192u}) {
    RowMatrix<double> logits = RowMatrix<double>::Zero(10, V);
    std::vector<TokenId> ids(10);
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<TokenId>((i * 37) % V);
    EXPECT_NEAR(loss_causal(logits, ids), std::log(static_cast<double>(V)), 1e-4);
    const std::vector<std::size_t> labels{1, 4, 7};
    EXPECT_NEAR(loss_mlm(logits, ids, labels), std::log(static_cast<double>(V)), 1e-4);
  }
  RowMatrix<double> logits = RowMatrix<double>::Zero(4, 512);
  std::vector<TokenId> ids{1, 2, 3, 4};
  EXPECT_NEAR(loss_causal(logits, ids), 6.2383, 1e-4);
}

TEST(Loss, LargeMarginDrivesLossToZero) {
  const std::size_t V = 64;
  std::vector<TokenId> ids{3, 9, 12, 40, 2};
  RowMatrix<double> logits = RowMatrix<double>::Zero(5, V);
  for (std::size_t t = 0; t + 1 < ids.size(); ++t) logits(t, ids[t + 1]) = 30.0;
  EXPECT_LT(loss_causal(logits, ids), 1e-9);
  RowMatrix<double> mlm = RowMatrix<double>::Zero(5, V);
  for (std::size_t t = 0; t < ids.size(); ++t) mlm(t, ids[t]) = 30.0;
  const std::vector<std::size_t> labels{0, 2, 4};
  EXPECT_LT(loss_mlm(mlm, ids, labels), 1e-9);
}

TEST(Loss, MaskedOutPositionsAreIrrelevant) {
  const std::size_t V = 32;
  Xoshiro256 rng(11);
  RowMatrix<double> logits(6, V);
  for (Eigen::Index i = 0; i < logits.size(); ++i) logits.data()[i] = rng.normal();
  std::vector<TokenId> ids{1, 2, 3, 4, 5, 6};
  std::vector<std::uint8_t> mask{1, 1, 1, 1, 0, 0};
  const double base = loss_causal(logits, ids, mask);
  auto permuted = logits;
  permuted.row(4).swap(permuted.row(5));
  auto ids2 = ids;
  std::swap(ids2[4], ids2[5]);
  EXPECT_DOUBLE_EQ(loss_causal(permuted, ids2, mask), base);
  std::vector<std::uint8_t> none(6, 0);
  EXPECT_THROW(loss_causal(logits, ids, none), ValidationError);

  const std::vector<std::size_t> labels{0, 2};
  const double mlm = loss_mlm(logits, ids, labels);
  auto other = logits;
  other.row(1).setConstant(5.0);
  other.row(5).setConstant(-2.0);
  EXPECT_DOUBLE_EQ(loss_mlm(other, ids, labels), mlm);
  EXPECT_THROW(loss_mlm(logits, ids, std::vector<std::size_t>{}), ValidationError);
}

// --- masking ---

TEST(Masking, RateZeroAndOne) {
  std::vector<TokenId> ids{10, 11, kEndOfTextId, 12, kPadId, 13};
  auto none = mask_for_mlm(ids, 0.0, 1, kMaskId, 512);
  EXPECT_TRUE(none.labels.empty());
  EXPECT_EQ(none.ids, ids);
  auto all = mask_for_mlm(ids, 1.0, 1, kMaskId, 512);
  EXPECT_EQ(all.labels, (std::vector<std::size_t>{0, 1, 3, 5}));
  EXPECT_EQ(all.ids[2], kEndOfTextId);
  EXPECT_EQ(all.ids[4], kPadId);
  EXPECT_THROW(mask_for_mlm(ids, 1.5, 1, kMaskId, 512), ValidationError);
}

TEST(Masking, SelectionCountWithinBinomialInterval) {
  const std::size_t n = 10000;
  std::vector<TokenId> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<TokenId>(i % 250);
  const auto m = mask_for_mlm(ids, 0.15, 99, kMaskId, 8192);
  // Binomial(10000, 0.15): mean 1500, sd sqrt(1275) = 35.71; the two-sided
  // 99.9% interval is mean +/- 3.2905 sd.
  const double sd = std::sqrt(n * 0.15 * 0.85);
  EXPECT_NEAR(static_cast<double>(m.labels.size()), 1500.0, 3.2905 * sd);
  std::size_t masked = 0, kept = 0;
  for (auto p : m.labels) {
    if (m.ids[p] == kMaskId) ++masked;
    if (m.ids[p] == ids[p]) ++kept;
    EXPECT_FALSE(Tokenizer::is_special(m.ids[p]) && m.ids[p] != kMaskId);
  }
  const double frac_mask = static_cast<double>(masked) / m.labels.size();
  EXPECT_NEAR(frac_mask, 0.8, 0.04);
  EXPECT_GT(kept, m.labels.size() / 20);
  EXPECT_EQ(mask_for_mlm(ids, 0.15, 99, kMaskId, 8192).ids, m.ids);
}

// --- gradients ---

class GradientCheck : public ::testing::TestWithParam<Objective> {};

TEST_P(GradientCheck, EveryBlockMatchesFiniteDifferencesF64) {
  const auto c = tiny_config(GetParam(), DType::f64);
  Transformer<double> m(c);
  oracle::perturb(m, 21, 0.2);
  const auto ids = some_ids(8, 22, c.vocab_size);
  std::vector<std::uint8_t> valid(8, 1);
  std::vector<std::int64_t> targets;
  if (GetParam() == Objective::causal) {
    targets = causal_targets(ids, valid);
  } else {
    valid[7] = 0;  // one padding key
    targets = mlm_targets(ids, std::vector<std::size_t>{0, 3, 5, 6});
  }
  const auto errors = oracle::finite_difference_check(m, ids, targets, valid, 1e-5);
  ASSERT_EQ(errors.size(), m.layout().slots.size());
  for (const auto& e : errors) {
    EXPECT_LT(e.rel_error, 1e-6) << e.name;
    EXPECT_GT(e.analytic_norm, 0.0) << e.name;
  }
}

TEST_P(GradientCheck, EveryBlockMatchesFiniteDifferencesF32) {
  const auto c = tiny_config(GetParam(), DType::f32);
  Transformer<float> m(c);
  oracle::perturb(m, 21, 0.2);
  const auto ids = some_ids(8, 22, c.vocab_size);
  std::vector<std::uint8_t> valid(8, 1);
  std::vector<std::int64_t> targets = GetParam() == Objective::causal
      ? causal_targets(ids, valid)
      : mlm_targets(ids, std::vector<std::size_t>{0, 3, 5, 6});
  const auto errors = oracle::finite_difference_check(m, ids, targets, valid, 1e-2);
  for (const auto& e : errors) EXPECT_LT(e.rel_error, 1e-3) << e.name;
}

INSTANTIATE_TEST_SUITE_P(Objectives, GradientCheck,
                         ::testing::Values(Objective::causal, Objective::masked));

TEST(Backward, GradientIsExactlyZeroWhereLossCannotDepend) {
  const auto c = tiny_config();
  Transformer<double> m(c);
  oracle::perturb(m, 5, 0.2);
  const auto ids = some_ids(8, 6, c.vocab_size);
  std::vector<std::uint8_t> mask{1, 1, 1, 1, 0, 0, 0, 0};
  const auto targets = causal_targets(ids, mask);
  typename Transformer<double>::Cache cache;
  m.forward(ids, cache);
  RowMatrix<double> dlogits;
  cross_entropy(cache.logits, std::span<const std::int64_t>(targets), &dlogits);
  std::vector<double> grad(m.num_params(), 0.0);
  m.backward(cache, dlogits, std::span<double>(grad));
  const auto& wpe = m.layout().slots[m.layout().wpe];
  for (std::size_t t = 4; t < 8; ++t)
    for (std::size_t j = 0; j < c.d_model; ++j)
      EXPECT_EQ(grad[wpe.offset + t * c.d_model + j], 0.0);
  double early = 0.0;
  for (std::size_t j = 0; j < c.d_model; ++j) early += std::abs(grad[wpe.offset + j]);
  EXPECT_GT(early, 0.0);
}

TEST(Backward, Deterministic) {
  const auto c = tiny_config(Objective::causal, DType::f32);
  Transformer<float> m(c);
  const auto ids = some_ids(8, 9, c.vocab_size);
  auto run = [&] {
    typename Transformer<float>::Cache cache;
    m.forward(ids, cache);
    RowMatrix<float> dl;
    const auto targets = causal_targets(ids, {});
    cross_entropy(cache.logits, std::span<const std::int64_t>(targets), &dl);
    std::vector<float> g(m.num_params(), 0.0f);
    m.backward(cache, dl, std::span<float>(g));
    return g;
  };
  EXPECT_EQ(run(), run());
}

TEST(Backward, IndependentOfGradientBufferAlignment) {
  const auto c = tiny_config(Objective::causal, DType::f32);
  Transformer<float> m(c);
  oracle::perturb(m, 3, 0.1);
  const auto ids = some_ids(8, 4, c.vocab_size);
  typename Transformer<float>::Cache cache;
  m.forward(ids, cache);
  RowMatrix<float> dl;
  const auto targets = causal_targets(ids, {});
  cross_entropy(cache.logits, std::span<const std::int64_t>(targets), &dl);
  std::vector<float> buf(m.num_params() + 8);
  std::vector<float> first;
  for (std::size_t off = 0; off < 8; ++off) {
    std::fill(buf.begin(), buf.end(), 0.0f);
    std::span<float> g(buf.data() + off, m.num_params());
    m.backward(cache, dl, g);
    if (off == 0) first.assign(g.begin(), g.end());
    else EXPECT_TRUE(std::equal(g.begin(), g.end(), first.begin())) << "offset " << off;
  }
}

// --- optimizer & schedule ---

TEST(Schedule, LinearDecayWithoutWarmup) {
  EXPECT_DOUBLE_EQ(lr_at(0, 100, 1e-4), 1e-4);
  EXPECT_DOUBLE_EQ(lr_at(50, 100, 1e-4), 5e-5);
  EXPECT_DOUBLE_EQ(lr_at(100, 100, 1e-4), 0.0);
  EXPECT_THROW(lr_at(101, 100, 1e-4), ValidationError);
  EXPECT_THROW(lr_at(0, 0, 1e-4), ValidationError);
}

TEST(Adam, OneStepHandComputation) {
  std::vector<double> theta{0.5};
  AdamState<double> st(1, 1e-4, 10);
  std::vector<double> g{1.0};
  adam_step(std::span<double>(theta), st, std::span<const double>(g));
  // m = 0.1, v = 0.001; mhat = 0.1/0.1 = 1, vhat = 0.001/0.001 = 1.
  EXPECT_DOUBLE_EQ(theta[0], 0.5 - 1e-4 / (1.0 + 1e-8));
  EXPECT_DOUBLE_EQ(st.m[0], 0.1);
  EXPECT_NEAR(st.v[0], 0.001, 1e-18);
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, ZeroGradientOnlyDecaysMoments) {
  std::vector<double> theta{0.5, -1.0};
  AdamState<double> st(2, 1e-3, 10);
  st.m = {0.0, 0.0};
  st.v = {0.0, 0.0};
  std::vector<double> zero{0.0, 0.0};
  adam_step(std::span<double>(theta), st, std::span<const double>(zero));
  EXPECT_EQ(theta, (std::vector<double>{0.5, -1.0}));
  st.m = {0.2, 0.0};
  st.v = {0.04, 0.0};
  adam_step(std::span<double>(theta), st, std::span<const double>(zero));
  EXPECT_DOUBLE_EQ(st.m[0], 0.9 * 0.2);
  EXPECT_DOUBLE_EQ(st.v[0], 0.999 * 0.04);
}

TEST(Adam, NonFiniteGradientNamesTheParameter) {
  const auto c = tiny_config();
  Transformer<double> m(c);
  AdamState<double> st(m.num_params(), 1e-4, 10);
  std::vector<double> g(m.num_params(), 0.0);
  const auto& slot = m.layout().slots[m.layout().layers[1].fc_w];
  g[slot.offset + 3] = std::nan("");
  try {
    adam_step(m.params(), st, std::span<const double>(g), &m.layout());
    FAIL() << "expected an error";
  } catch (const RuntimeError& e) {
    EXPECT_NE(std::string(e.what()).find("h1.mlp.c_fc.w"), std::string::npos) << e.what();
  }
}

TEST(Adam, TenStepsAreBitwiseReproducible) {
  auto run = [] {
    const auto c = tiny_config(Objective::causal, DType::f32);
    Transformer<float> m(c);
    AdamState<float> st(m.num_params(), 1e-3, 10);
    const auto ids = some_ids(8, 12, c.vocab_size);
    const auto targets = causal_targets(ids, {});
    for (int s = 0; s < 10; ++s) {
      typename Transformer<float>::Cache cache;
      m.forward(ids, cache);
      RowMatrix<float> dl;
      cross_entropy(cache.logits, std::span<const std::int64_t>(targets), &dl);
      std::vector<float> g(m.num_params(), 0.0f);
      m.backward(cache, dl, std::span<float>(g));
      adam_step(m.params(), st, std::span<const float>(g));
    }
    return std::vector<float>(m.params().begin(), m.params().end());
  };
  EXPECT_EQ(run(), run());
}

// --- probes ---

TEST(SequenceLogprob, UniformModelClosedForm) {
  auto c = tiny_config();
  c.context_length = 64;
  Transformer<double> m(c);
  oracle::make_uniform(m);
  Tokenizer tok;
  const std::string text = "the dog runs .";
  const auto L = tok.encode(text).size();
  const double V = static_cast<double>(c.vocab_size);
  EXPECT_NEAR(sequence_logprob(m, tok, text), -(L - 1.0) * std::log(V), 1e-9);
  EXPECT_LT(sequence_logprob(m, tok, text + "x"), sequence_logprob(m, tok, text));
  EXPECT_EQ(sequence_logprob(m, tok, text), sequence_logprob(m, tok, text));
}

TEST(SequenceLogprob, Errors) {
  auto c = tiny_config();
  Transformer<double> causal(c);
  Tokenizer tok;
  EXPECT_THROW(sequence_logprob(causal, tok, "a"), ValidationError);
  EXPECT_THROW(sequence_logprob(causal, tok, "this is far too long"), ValidationError);
  Transformer<double> masked(tiny_config(Objective::masked));
  EXPECT_THROW(sequence_logprob(masked, tok, "ab"), ValidationError);
}

TEST(WordEmbedding, PoolsTheRequestedLayer) {
  auto c = tiny_config();
  Transformer<double> m(c);
  oracle::perturb(m, 2, 0.1);
  Tokenizer tok;  // bytes only: "a" is one token, "ab" two
  const auto one = word_embedding(m, tok, "a", 1);
  ASSERT_EQ(one.size(), c.d_model);
  const auto h = m.forward(tok.encode("a")).hidden[1];
  for (std::size_t j = 0; j < c.d_model; ++j) EXPECT_EQ(one[j], h(0, j));

  const auto two = word_embedding(m, tok, "ab", 2);
  const auto h2 = m.forward(tok.encode("ab")).hidden[2];
  for (std::size_t j = 0; j < c.d_model; ++j)
    EXPECT_NEAR(two[j], 0.5 * (h2(0, j) + h2(1, j)), 1e-15);

  EXPECT_THROW(word_embedding(m, tok, "", 0), ValidationError);
  EXPECT_THROW(word_embedding(m, tok, "a", c.n_layers + 1), ValidationError);
}

}  // namespace
}  // namespace crlab
