// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "slu/error.hpp"
#include "slu/model.hpp"

using namespace slu;
using namespace slu::model;
using slu::testing::single_batch;
using slu::testing::tiny_config;
using slu::testing::tiny_corpus;
using slu::testing::utt;

namespace {

void zero_all(ParameterSet& params) {
  for (auto& [name, p] : params.all()) p.value.fill(0.0);
}

void set_forget_bias(ParameterSet& params, const std::string& prefix, std::size_t hidden) {
  for (const char* dir : {"fwd.b", "bwd.b"}) {
    auto& b = params.at(prefix + dir).value;
    for (std::size_t j = hidden; j < 2 * hidden; ++j) b[j] = 1.0;
  }
}

std::map<std::string, Tensor> grads_of(SlotModel& m, const data::Batch& batch, const LossOptions& opts,
                                       std::uint64_t dropout_seed = 0, Mode mode = Mode::eval,
                                       bool only_l_y = false) {
  m.params().zero_grad();
  Tape tape;
  Rng drop(dropout_seed);
  if (only_l_y) {
    Var states = m.encode(tape, batch, {mode, &drop});
    tape.backward(slot_loss(m.slot_log_probs(tape, states), batch));
  } else {
    tape.backward(m.loss(tape, batch, {mode, &drop}, opts).total);
  }
  std::map<std::string, Tensor> out;
  for (auto& [name, p] : m.params().all()) out[name] = p.grad;
  return out;
}

double total_at(const SlotModel& m, const data::Batch& batch, double lambda) {
  Tape tape;
  LossOptions opts;
  opts.lambda_override = lambda;
  return m.loss(tape, batch, {}, opts).total_value;
}

}  // namespace

TEST(Config, Validation) {
  ModelConfig c;
  c.vocab_size = c.num_slot_labels = c.num_domains = 3;
  EXPECT_NO_THROW(c.validate());
  auto bad = c;
  bad.hidden_dim = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.dropout_rate = 1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.lambda_adv = -0.1;
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_THROW(parse_model_kind("adv"), ConfigError);
  EXPECT_EQ(parse_model_kind("general-adv"), ModelKind::general_adv);
}

TEST(Init, ForgetBiasOneOtherBiasesZero) {
  auto us = tiny_corpus();
  auto vocab = data::build_vocab(us);
  Rng rng(1);
  SlotModel m(tiny_config(vocab), ModelKind::specific, rng);
  const auto& b = m.params().at("encoder.fwd.b").value;
  for (std::size_t j = 0; j < b.size(); ++j) EXPECT_EQ(b[j], (j >= 8 && j < 16) ? 1.0 : 0.0);
  EXPECT_FALSE(m.params().contains("domain.score_w"));
  SlotModel adv(tiny_config(vocab, 0.1), ModelKind::general_adv, rng);
  EXPECT_TRUE(adv.params().contains("domain.score_w"));
}

TEST(Encode, ShapeContract) {
  auto us = tiny_corpus();
  auto vocab = data::build_vocab(us);
  Rng rng(1);
  SlotModel m(tiny_config(vocab), ModelKind::specific, rng);
  Tape tape;
  auto batch = single_batch({us[1]}, vocab);
  EXPECT_EQ(m.encode(tape, batch, {}).shape(), (ad::Shape{1, us[1].length(), 16}));
}

TEST(Encode, ForwardDirectionIsCausal) {
  auto us = tiny_corpus();
  auto vocab = data::build_vocab(us);
  Rng rng(2);
  SlotModel m(tiny_config(vocab), ModelKind::specific, rng);
  auto a = us[1];
  for (std::size_t t = 0; t + 1 < a.length(); ++t) {
    auto b = a;
    b.tokens[t + 1] = "pizza";
    Tape ta, tb;
    Tensor ha = m.encode(ta, single_batch({a}, vocab), {}).value();
    Tensor hb = m.encode(tb, single_batch({b}, vocab), {}).value();
    const std::size_t H = 8, W = 16;
    for (std::size_t s = 0; s <= t; ++s) {
      for (std::size_t j = 0; j < H; ++j) EXPECT_EQ(ha[s * W + j], hb[s * W + j]) << "t=" << t << " s=" << s;
    }
  }
}

TEST(Encode, ZeroEncoderGivesZeroStates) {
  auto us = tiny_corpus();
  auto vocab = data::build_vocab(us);
  Rng rng(3);
  SlotModel m(tiny_config(vocab), ModelKind::specific, rng);
  zero_all(m.params());
  set_forget_bias(m.params(), "encoder.", 8);
  Tape tape;
  Tensor h = m.encode(tape, single_batch(us, vocab), {}).value();
  for (double v : h.data()) EXPECT_EQ(v, 0.0);
}

TEST(Encode, OutOfRangeWordIdNamesUtterance) {
  auto us = tiny_corpus();
  auto vocab = data::build_vocab(us);
  Rng rng(3);
  SlotModel m(tiny_config(vocab), ModelKind::specific, rng);
  auto batch = single_batch(us, vocab);
  batch.words[batch.at(4, 0)] = 999;
  Tape tape;
  try {
    m.encode(tape, batch, {});
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("utterance 4"), std::string::npos) << e.what();
  }
}

TEST(SlotHead, DistributionsNormalizedAndUniformAtZero) {
  auto us = tiny_corpus();
  auto vocab = data::build_vocab(us);
  Rng rng(4);
  SlotModel m(tiny_config(vocab), ModelKind::specific, rng);
  auto batch = single_batch(us, vocab);
  const std::size_t L = vocab.labels.size();
  {
    Tape tape;
    Tensor p = m.slot_label_dist(tape, m.encode(tape, batch, {})).value();
    ASSERT_EQ(p.shape(), (ad::Shape{batch.size * batch.max_len, L}));
    for (std::size_t r = 0; r < p.dim(0); ++r) {
      double s = 0;
      for (std::size_t l = 0; l < L; ++l) s += p[r * L + l];
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
  for (const char* n : {"slot.w1", "slot.b1", "slot.w2", "slot.b2"}) m.params().at(n).value.fill(0.0);
  Tape tape;
  Tensor p = m.slot_label_dist(tape, m.encode(tape, batch, {})).value();
  for (double v : p.data()) EXPECT_NEAR(v, 1.0 / L, 1e-15);
  // All scores tie -> label 0 everywhere.
  for (const auto& seq : m.predict(batch)) {
    for (std::size_t id : seq) EXPECT_EQ(id, 0u);
  }
}

TEST(Decode, TieBreaksToLowestIndex) {
  data::Batch b;
  b.size = 1;
  b.max_len = 2;
  b.lengths = {2};
  b.mask = {1, 1};
  Tensor scores = Tensor::matrix(2, 3, {0.2, 0.7, 0.7, 0.5, 0.5, 0.5});
  auto out = decode(scores, b);
  EXPECT_EQ(out[0], (std::vector<std::size_t>{1, 0}));
}

TEST(SlotLoss, ClosedForms) {
  data::Batch b;
  b.size = 1;
  b.max_len = 3;
  b.lengths = {2};
  b.mask = {1, 1, 0};
  b.labels = {0, 1, 0};
  Tape tape;
  // Row 0: P(gold=0) = 0.5, row 1: P(gold=1) = 0.25, row 2 padded.
  Tensor logp = Tensor::matrix(3, 2, {std::log(0.5), std::log(0.5), std::log(0.75), std::log(0.25), -1e9, 0});
  EXPECT_NEAR(slot_loss(tape.constant(logp), b).value().item(), 1.0397207708, 1e-10);

  Tensor certain = Tensor::matrix(3, 2, {0, -1e300, -1e300, 0, 5, 5});
  EXPECT_EQ(slot_loss(tape.constant(certain), b).value().item(), 0.0);

  Tensor uniform(ad::Shape{3, 2}, std::log(0.5));
  EXPECT_NEAR(slot_loss(tape.constant(uniform), b).value().item(), std::log(2.0), 1e-15);

  b.labels = {0, 7, 0};
  EXPECT_THROW(slot_loss(tape.constant(logp), b), DataError);
}

TEST(SlotLoss, UniformPredictionsGiveLogL) {
  auto us = tiny_corpus();
  auto vocab = data::build_vocab(us);
  Rng rng(5);
  SlotModel m(tiny_config(vocab), ModelKind::specific, rng);
  for (const char* n : {"slot.w2", "slot.b2"}) m.params().at(n).value.fill(0.0);
  Tape tape;
  EXPECT_NEAR(m.loss(tape, single_batch(us, vocab), {}).l_y, std::log(double(vocab.labels.size())), 1e-12);
}

TEST(Attention, ClosedForms) {
  ParameterSet params;
  Rng rng(1);
  ModelConfig cfg;
  cfg.hidden_dim = 1;  // states of width 2
  cfg.mlp_hidden_dim = 3;
  cfg.num_domains = 2;
  DomainClassifier dc(params, "d.", cfg, rng);
  params.at("d.score_w").value = Tensor::matrix(2, 1, {1, 0});
  params.at("d.score_b").value.fill(0.0);

  data::Batch b;
  b.size = 2;
  b.max_len = 2;
  b.lengths = {2, 1};
  b.mask = {1, 1, 1, 0};
  Tape tape;
  // Row 0: h1 = [ln 2, 5], h2 = [0, -1] -> e = [ln 2, 0]. Row 1: T = 1.
  Var h = tape.constant(Tensor({2, 2, 2}, {std::log(2.0), 5, 0, -1, 3, 4, 100, 100}));
  Tensor alpha = dc.attention(tape, h, b).value();
  EXPECT_NEAR(alpha[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(alpha[1], 1.0 / 3.0, 1e-15);
  EXPECT_EQ(alpha[2], 1.0);
  EXPECT_EQ(alpha[3], 0.0);
  Tensor c = dc.pool(tape, h, b).value();
  EXPECT_NEAR(c[0], 2.0 * std::log(2.0) / 3.0, 1e-15);
  EXPECT_NEAR(c[1], (2.0 * 5 - 1) / 3.0, 1e-14);
  EXPECT_EQ(c[2], 3.0);
  EXPECT_EQ(c[3], 4.0);

  // Equal scores -> mean of real states.
  params.at("d.score_w").value.fill(0.0);
  Tensor mean = dc.pool(tape, h, b).value();
  EXPECT_NEAR(mean[0], std::log(2.0) / 2, 1e-15);
  EXPECT_NEAR(mean[1], 2.0, 1e-15);
}

TEST(Attention, WeightsSumToOnePaddingZero) {
  auto us = tiny_corpus();
  auto vocab = data::build_vocab(us);
  Rng rng(6);
  SlotModel m(tiny_config(vocab, 0.1), ModelKind::general_adv, rng);
  auto batch = single_batch(us, vocab);
  Tape tape;
  Tensor alpha = m.domain_classifier().attention(tape, m.encode(tape, batch, {}), batch).value();
  for (std::size_t r = 0; r < batch.size; ++r) {
    double s = 0;
    for (std::size_t t = 0; t < batch.max_len; ++t) {
      const double a = alpha[batch.at(r, t)];
      if (!batch.mask[batch.at(r, t)]) EXPECT_EQ(a, 0.0);
      s += a;
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(DomainHead, DistributionCases) {
  auto us = tiny_corpus();
  auto vocab = data::build_vocab(us);
  auto batch = single_batch(us, vocab);
  Rng rng(7);
  SlotModel m(tiny_config(vocab, 0.1), ModelKind::general_adv, rng);
  {
    Tape tape;
    Tensor lp = m.domain_classifier().log_probs(tape, m.encode(tape, batch, {}), batch).value();
    for (std::size_t r = 0; r < batch.size; ++r) {
      double s = 0;
      for (std::size_t d = 0; d < 3; ++d) s += std::exp(lp[r * 3 + d]);
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
  for (const char* n : {"domain.head.w2", "domain.head.b2"}) m.params().at(n).value.fill(0.0);
  Tape tape;
  Tensor lp = m.domain_classifier().log_probs(tape, m.encode(tape, batch, {}), batch).value();
  for (double v : lp.data()) EXPECT_NEAR(std::exp(v), 1.0 / 3.0, 1e-15);

  auto cfg1 = tiny_config(vocab, 0.1);
  cfg1.num_domains = 1;
  SlotModel one(cfg1, ModelKind::general_adv, rng);
  Tape t1;
  auto b1 = single_batch({us[0]}, vocab);
  b1.domains = {0};
  Tensor p1 = one.domain_classifier().log_probs(t1, one.encode(t1, b1, {}), b1).value();
  EXPECT_EQ(std::exp(p1.item()), 1.0);
}

TEST(DomainLoss, ClosedForms) {
  data::Batch b;
  b.size = 1;
  b.domains = {2};
  Tape tape;
  auto loss = [&](std::initializer_list<double> probs) {
    Tensor lp(ad::Shape{1, probs.size()});
    std::size_t i = 0;
    for (double p : probs) lp[i++] = std::log(p);
    return domain_loss(tape.constant(lp), b).value().item();
  };
  EXPECT_EQ(loss({0, 0, 1, 0}), 0.0);
  EXPECT_NEAR(loss({0.25, 0.25, 0.25, 0.25}), 1.3862943611, 1e-10);
  EXPECT_NEAR(loss({0.3, 0.6, 0.1}), 2.3025850930, 1e-10);
  b.domains = {4};
  EXPECT_THROW(loss({0.25, 0.25, 0.25, 0.25}), DataError);
}

TEST(TotalLoss, Substitution) {
  Tape tape;
  Var total = ad::add(tape.constant(Tensor::scalar(2.0)), ad::scale(tape.constant(Tensor::scalar(3.0)), 0.01));
  EXPECT_EQ(total.value().item(), 2.0 + 0.01 * 3.0);
  EXPECT_NEAR(total.value().item(), 2.03, 1e-15);
}

TEST(TotalLoss, ExactlyLinearInLambda) {
  auto us = tiny_corpus();
  auto vocab = data::build_vocab(us);
  auto batch = single_batch(us, vocab);
  Rng rng(8);
  SlotModel m(tiny_config(vocab, 0.1), ModelKind::general_adv, rng);
  Tape tape;
  LossBundle base = m.loss(tape, batch, {});
  EXPECT_EQ(base.total_value, base.l_y + 0.1 * base.l_d);
  for (double lambda : {0.0, 0.01, 0.1, 1.0}) {
    EXPECT_EQ(total_at(m, batch, lambda), base.l_y + lambda * base.l_d) << lambda;
  }
}

TEST(Reversal, DomainBranchGradientIsMinusLambdaTimesUnreversed) {
  auto us = tiny_corpus();
  auto vocab = data::build_vocab(us);
  auto batch = single_batch(us, vocab);
  auto cfg = tiny_config(vocab);
  cfg.dropout_rate = 0.5;
  Rng rng(9);
  SlotModel m(cfg, ModelKind::general_adv, rng);
  const auto encoder_names = m.encoder().parameter_names();

  for (double lambda : {0.01, 0.1, 1.0}) {
    SCOPED_TRACE(lambda);
    LossOptions with;
    with.lambda_override = lambda;
    LossOptions plain;
    plain.lambda_override = 1.0;
    plain.reverse_gradient = false;
    auto total = grads_of(m, batch, with, 42, Mode::train);
    auto l_y_only = grads_of(m, batch, with, 42, Mode::train, true);
    auto l_d_unreversed_plus_l_y = grads_of(m, batch, plain, 42, Mode::train);
    for (const auto& name : encoder_names) {
      const Tensor& gt = total[name];
      const Tensor& gy = l_y_only[name];
      const Tensor& gyd = l_d_unreversed_plus_l_y[name];
      for (std::size_t i = 0; i < gt.size(); ++i) {
        const double branch = gt[i] - gy[i];
        const double unreversed = gyd[i] - gy[i];
        EXPECT_NEAR(branch, -lambda * unreversed, 1e-12) << name << "[" << i << "]";
      }
    }
    for (auto& [name, g] : total) {
      if (name.rfind("domain.", 0) != 0) continue;
      const Tensor& gyd = l_d_unreversed_plus_l_y[name];
      for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g[i], lambda * gyd[i], 1e-12) << name;
    }
  }
}

TEST(Reversal, LambdaZeroLeavesEncoderUntouchedByDomainBranch) {
  auto us = tiny_corpus();
  auto vocab = data::build_vocab(us);
  auto batch = single_batch(us, vocab);
  Rng rng(10);
  SlotModel m(tiny_config(vocab), ModelKind::general_adv, rng);
  LossOptions zero;
  zero.lambda_override = 0.0;
  auto total = grads_of(m, batch, zero);
  auto l_y_only = grads_of(m, batch, zero, 0, Mode::eval, true);
  for (const auto& name : m.encoder().parameter_names()) {
    for (std::size_t i = 0; i < total[name].size(); ++i) EXPECT_EQ(total[name][i], l_y_only[name][i]);
  }
}

TEST(Masking, PaddedWordIdsChangeNothing) {
  auto us = tiny_corpus();
  auto vocab = data::build_vocab(us);
  auto cfg = tiny_config(vocab, 0.1);
  cfg.dropout_rate = 0.5;
  Rng rng(11);
  SlotModel m(cfg, ModelKind::general_adv, rng);
  auto batch = single_batch(us, vocab);
  auto perturbed = batch;
  std::size_t changed = 0;
  for (std::size_t i = 0; i < perturbed.words.size(); ++i) {
    if (!perturbed.mask[i]) {
      perturbed.words[i] = 2 + (i % 7);
      ++changed;
    }
  }
  ASSERT_GT(changed, 0u);
  auto run = [&](const data::Batch& b, LossBundle& out) {
    m.params().zero_grad();
    Tape tape;
    Rng drop(5);
    out = m.loss(tape, b, {Mode::train, &drop});
    tape.backward(out.total);
    std::map<std::string, Tensor> g;
    for (auto& [name, p] : m.params().all()) g[name] = p.grad;
    return g;
  };
  LossBundle la, lb;
  auto ga = run(batch, la);
  auto gb = run(perturbed, lb);
  EXPECT_EQ(std::memcmp(&la.l_y, &lb.l_y, sizeof(double)), 0);
  EXPECT_EQ(std::memcmp(&la.l_d, &lb.l_d, sizeof(double)), 0);
  EXPECT_EQ(std::memcmp(&la.total_value, &lb.total_value, sizeof(double)), 0);
  for (auto& [name, g] : ga) EXPECT_EQ(g, gb[name]) << name;
}

TEST(Gradients, FullModelMatchesFiniteDifferences) {
  // vocab 20, H 8; the reversal is disabled so the tape computes the plain
  // gradient of l_y + lambda * l_d that finite differences see.
  auto us = slu::testing::vocab20_corpus();
  auto vocab = data::build_vocab(us);
  ASSERT_EQ(vocab.words.size(), 20u);
  auto batch = single_batch(us, vocab);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    SCOPED_TRACE(seed);
    auto cfg = tiny_config(vocab, 0.3);
    cfg.dropout_rate = 0.25;
    Rng rng(seed);
    SlotModel m(cfg, ModelKind::general_adv, rng);
    LossOptions opts;
    opts.reverse_gradient = false;
    auto value = [&] {
      Tape tape;
      Rng drop(seed + 100);
      return m.loss(tape, batch, {Mode::train, &drop}, opts).total_value;
    };
    m.params().zero_grad();
    {
      Tape tape;
      Rng drop(seed + 100);
      tape.backward(m.loss(tape, batch, {Mode::train, &drop}, opts).total);
    }
    double worst = 0;
    for (auto& [name, p] : m.params().all()) {
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double saved = p.value[i];
        p.value[i] = saved + 1e-5;
        const double up = value();
        p.value[i] = saved - 1e-5;
        const double down = value();
        p.value[i] = saved;
        worst = std::max(worst, slu::testing::relative_error(p.grad[i], (up - down) / 2e-5));
      }
    }
    EXPECT_LT(worst, 1e-4);
  }
}

TEST(Joint, ShapeAndNormalization) {
  auto us = tiny_corpus();
  auto vocab = data::build_vocab(us);
  auto batch = single_batch(us, vocab);
  Rng rng(12);
  SlotModel spec(tiny_config(vocab), ModelKind::specific, rng);
  auto gcfg = tiny_config(vocab);
  gcfg.hidden_dim = 5;
  SlotModel gen(gcfg, ModelKind::general, rng);
  JointModel joint(spec, gen, 9, 0.5, vocab.labels.size(), rng);
  Tape tape;
  Tensor p = joint.slot_label_dist(tape, batch, {}).value();
  const std::size_t L = vocab.labels.size();
  ASSERT_EQ(p.shape(), (ad::Shape{batch.size * batch.max_len, L}));
  for (std::size_t r = 0; r < p.dim(0); ++r) {
    double s = 0;
    for (std::size_t l = 0; l < L; ++l) s += p[r * L + l];
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(Joint, WidthMismatchIsConfigError) {
  auto us = tiny_corpus();
  auto vocab = data::build_vocab(us);
  Rng rng(13);
  SlotModel spec(tiny_config(vocab), ModelKind::specific, rng);
  SlotModel gen(tiny_config(vocab), ModelKind::general, rng);
  JointModel joint(spec, gen, 9, 0.5, vocab.labels.size(), rng);
  ParameterSet params = joint.params();
  auto narrow = tiny_config(vocab);
  narrow.hidden_dim = 4;
  // Loaded parameters claim H=8 encoders; binding them as H=4 must fail.
  EXPECT_THROW(JointModel(narrow, tiny_config(vocab), 9, 0.5, vocab.labels.size(), params), ConfigError);
}

TEST(Joint, ZeroedGeneralColumnsIsolateSpecificEncoder) {
  auto us = tiny_corpus();
  auto vocab = data::build_vocab(us);
  auto batch = single_batch(us, vocab);
  Rng rng(14);
  SlotModel spec(tiny_config(vocab), ModelKind::specific, rng);
  SlotModel gen(tiny_config(vocab), ModelKind::general, rng);
  JointModel joint(spec, gen, 9, 0.0, vocab.labels.size(), rng);
  auto& w1 = joint.params().at("joint.w1").value;  // [32 x 9]; rows 16.. read the general encoder
  for (std::size_t r = 16; r < 32; ++r) {
    for (std::size_t c = 0; c < 9; ++c) w1[r * 9 + c] = 0.0;
  }
  Tape ta;
  Tensor before = joint.slot_label_dist(ta, batch, {}).value();
  Rng noise(99);
  for (const auto& name : joint.general_encoder().parameter_names()) {
    for (double& v : joint.params().at(name).value.data()) v += noise.uniform(-1, 1);
  }
  Tape tb;
  EXPECT_EQ(joint.slot_label_dist(tb, batch, {}).value(), before);
}
