#include <gtest/gtest.h>

#include <cmath>
#include <deque>
#include <numeric>

#include "constyle/encoder.hpp"
#include "constyle/errors.hpp"
#include "constyle/losses.hpp"
#include "constyle/queue.hpp"
#include "test_support.hpp"

namespace constyle {
namespace {

using testing::random64;

Tensor64 rows(std::initializer_list<std::initializer_list<double>> values) {
  std::vector<double> flat;
  std::size_t cols = 0;
  for (const auto& r : values) {
    cols = r.size();
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return Tensor64(Shape{values.size(), cols}, flat);
}

Tensor64 unit_rows(std::size_t n, std::size_t d, std::uint64_t seed) {
  NoGradGuard guard;
  return normalize_rows(random64({n, d}, seed));
}

// ---------------------------------------------------------------- queue

// Reference behaviour: a plain deque of code ids.
struct FifoOracle {
  std::size_t capacity;
  std::deque<int> items;

  struct Exposed {
    std::vector<int> q1, q2;
    bool present = false;
  };

  Exposed push(const std::vector<int>& batch) {
    std::deque<int> all = items;
    all.insert(all.end(), batch.begin(), batch.end());
    const std::size_t total = all.size();
    const std::size_t evicted = total > capacity ? total - capacity : 0;
    Exposed out;
    if (evicted > 0 && std::min(capacity, total) >= 2 * batch.size()) {
      out.present = true;
      out.q1.assign(all.begin(), all.begin() + evicted);
      out.q2.assign(all.begin() + evicted, all.begin() + evicted + batch.size());
    }
    all.erase(all.begin(), all.begin() + evicted);
    items = all;
    return out;
  }
};

// Code for id i: a unit vector whose first coordinate encodes i.
std::vector<double> code_for(int id, std::size_t d) {
  std::vector<double> v(d, 0.0);
  const double a = std::sin(0.001 * id), b = std::cos(0.001 * id);
  v[0] = a;
  v[1] = b;
  return v;
}

int id_of(std::span<const double> row) {
  return static_cast<int>(std::lround(std::atan2(row[0], row[1]) / 0.001));
}

std::vector<int> ids(const Tensor64& t) {
  std::vector<int> out;
  const std::size_t d = t.dim(1);
  for (std::size_t r = 0; r < t.dim(0); ++r) out.push_back(id_of(t.data().subspan(r * d, d)));
  return out;
}

void run_queue_case(std::size_t capacity, std::size_t max_batch, std::size_t pushes, Rng& rng, int& next_id) {
  const std::size_t d = 3;
  NegativeQueue queue(capacity, d);
  FifoOracle oracle{capacity, {}};
  std::uniform_int_distribution<std::size_t> batch_dist(1, std::min(max_batch, capacity));
  for (std::size_t p = 0; p < pushes; ++p) {
    const std::size_t b = batch_dist(rng);
    std::vector<int> batch(b);
    std::vector<double> flat;
    for (auto& id : batch) {
      id = next_id++ % 3000;  // ids stay within the atan2 range of code_for
      const auto c = code_for(id, d);
      flat.insert(flat.end(), c.begin(), c.end());
    }
    const PushOutcome peek = queue.peek_push(b);
    const PushOutcome got = queue.push(Tensor64(Shape{b, d}, flat));
    const auto want = oracle.push(batch);
    ASSERT_EQ(got.active(), want.present);
    ASSERT_EQ(peek.active(), want.present);
    if (want.present) {
      ASSERT_EQ(ids(*got.outgoing), want.q1);
      ASSERT_EQ(ids(*got.next_outgoing), want.q2);
      ASSERT_EQ(ids(*peek.outgoing), want.q1);
    }
    ASSERT_EQ(queue.size(), oracle.items.size());
    ASSERT_LE(queue.size(), capacity);
  }
  ASSERT_EQ(ids(queue.snapshot()), std::vector<int>(oracle.items.begin(), oracle.items.end()));
}

TEST(NegativeQueue, WorkedSingletonSequence) {
  NegativeQueue queue(4, 2);
  std::vector<Tensor64> codes;
  for (int i = 0; i < 6; ++i) codes.push_back(rows({{std::cos(0.3 * i), std::sin(0.3 * i)}}));
  std::vector<PushOutcome> outcomes;
  for (const auto& c : codes) outcomes.push_back(queue.push(c));
  for (int i = 0; i < 4; ++i) EXPECT_FALSE(outcomes[i].active()) << i;
  // push of e (index 4): q1 = a, q2 = b
  ASSERT_TRUE(outcomes[4].active());
  for (int j = 0; j < 2; ++j) {
    EXPECT_NEAR(outcomes[4].outgoing->data()[j], codes[0].data()[j], 1e-15);
    EXPECT_NEAR(outcomes[4].next_outgoing->data()[j], codes[1].data()[j], 1e-15);
  }
  // final contents: c, d, e, f
  const Tensor64 snap = queue.snapshot();
  ASSERT_EQ(snap.dim(0), 4u);
  for (int i = 0; i < 4; ++i) {
    EXPECT_NEAR(snap.data()[2 * i], codes[i + 2].data()[0], 1e-15);
    EXPECT_NEAR(snap.data()[2 * i + 1], codes[i + 2].data()[1], 1e-15);
  }
}

TEST(NegativeQueue, FirstPushExposesNothing) {
  NegativeQueue queue(8, 4);
  const auto out = queue.push(unit_rows(2, 4, 1));
  EXPECT_FALSE(out.outgoing.has_value());
  EXPECT_FALSE(out.next_outgoing.has_value());
}

TEST(NegativeQueue, CapacityBound) {
  const std::size_t n = 5;
  NegativeQueue queue(n, 3);
  for (std::size_t i = 0; i < 10 * n; ++i) {
    queue.push(unit_rows(1, 3, i));
    EXPECT_EQ(queue.size(), std::min(i + 1, n));
  }
  EXPECT_EQ(queue.size(), n);
  EXPECT_EQ(queue.total_pushed(), 10 * n);
}

TEST(NegativeQueue, DimensionMismatch) {
  NegativeQueue queue(4, 3);
  EXPECT_THROW(queue.push(unit_rows(1, 4, 1)), DimensionError);
  EXPECT_THROW(queue.push(Tensor64(Shape{1, 3}, {2.0, 0.0, 0.0})), ContractError);
}

TEST(NegativeQueue, StoredCodesHaveUnitNorm) {
  NegativeQueue queue(16, 8);
  for (int i = 0; i < 10; ++i) queue.push(unit_rows(3, 8, 100 + i).cast<float>());
  const Tensor64 snap = queue.snapshot();
  for (std::size_t r = 0; r < snap.dim(0); ++r) {
    double sq = 0;
    for (std::size_t j = 0; j < 8; ++j) sq += snap.data()[r * 8 + j] * snap.data()[r * 8 + j];
    EXPECT_NEAR(std::sqrt(sq), 1.0, 1e-12);
  }
}

TEST(NegativeQueueProperty, MatchesBruteForceFifo) {
  Rng rng(2024);
  int next_id = 0;
  std::uniform_int_distribution<std::size_t> cap_dist(1, 40);
  for (int c = 0; c < 1000; ++c) {
    run_queue_case(cap_dist(rng), 6, 30, rng, next_id);
    if (::testing::Test::HasFatalFailure()) return;
  }
}

TEST(NegativeQueueProperty, FullAndSmallCapacities) {
  Rng rng(7);
  int next_id = 0;
  for (int c = 0; c < 20; ++c) run_queue_case(kSmallQueueCapacity, 8, 60, rng, next_id);
  // 65760 is filled with large batches; ids wrap but the order check is positional.
  run_queue_case(kDefaultQueueCapacity, 4096, 40, rng, next_id);
}

// ---------------------------------------------------------------- losses

TEST(InfoNce, WorkedMocoExample) {
  const double loss = info_nce(rows({{1, 0}}), rows({{1, 0}}), rows({{0, 1}}), Temperature(1.0)).item();
  // -log(e / (e + 1)) = log(1 + e^-1)
  EXPECT_NEAR(loss, std::log1p(std::exp(-1.0)), 1e-12);
  EXPECT_NEAR(loss, 0.31326, 1e-5);
}

TEST(InfoNce, UniformLogitsGiveLogOfNPlusOne) {
  // q·k == q·Q_i for all i: every logit equals 0.6/t.
  const Tensor64 q = rows({{0.6, 0.8}});
  const Tensor64 k = rows({{1, 0}});
  const Tensor64 negatives = rows({{1, 0}, {1, 0}, {1, 0}});
  for (double t : {0.07, 0.5, 1.0, 3.0}) {
    EXPECT_NEAR(info_nce(q, k, negatives, Temperature(t)).item(), std::log(4.0), 1e-12) << t;
  }
}

TEST(InfoNce, LiteralConvention) {
  const double loss =
      info_nce(rows({{1, 0}}), rows({{1, 0}}), rows({{0, 1}}), Temperature(1.0), InfoNceConvention::literal).item();
  EXPECT_NEAR(loss, -1.0, 1e-12);
}

TEST(InfoNce, EmptyQueueIsStateError) {
  NegativeQueue queue(4, 2);
  EXPECT_THROW(info_nce(rows({{1, 0}}), rows({{1, 0}}), queue, Temperature(0.07)), StateError);
  EXPECT_THROW(Temperature(0.0), ConfigError);
}

TEST(InfoNce, QueueOverloadUsesResidentCodes) {
  NegativeQueue queue(4, 2);
  queue.push(rows({{0, 1}}));
  EXPECT_NEAR(info_nce(rows({{1, 0}}), rows({{1, 0}}), queue, Temperature(1.0)).item(), std::log1p(std::exp(-1.0)),
              1e-12);
}

TEST(InfoNce, StrictlyDecreasingInPositiveSimilarity) {
  const Tensor64 q = rows({{1, 0, 0}});
  const Tensor64 negatives = unit_rows(5, 3, 9);
  double previous = std::numeric_limits<double>::infinity();
  for (double angle = 3.0; angle >= 0.0; angle -= 0.25) {
    const Tensor64 k = rows({{std::cos(angle), std::sin(angle), 0}});
    const double loss = info_nce(q, k, negatives, Temperature(0.2)).item();
    EXPECT_LT(loss, previous) << angle;
    previous = loss;
  }
}

TEST(InfoNce, GradientCheck) {
  const Tensor64 negatives = unit_rows(7, 6, 10);
  for (auto conv : {InfoNceConvention::moco, InfoNceConvention::literal}) {
    const auto report = grad_check(
        [&](const std::vector<Tensor64>& in) {
          return info_nce(normalize_rows(in[0]), normalize_rows(in[1]), negatives, Temperature(0.5), conv);
        },
        {random64({3, 6}, 11), random64({3, 6}, 12)});
    EXPECT_LT(report.max_rel_error, 1e-4);
  }
}

TEST(ContentLoss, HandGramComputation) {
  EXPECT_NEAR(content_loss(rows({{1, 0}}), rows({{0, 1}})).item(), 0.5, 1e-12);
  const Tensor64 q = random64({4, 5}, 13);
  EXPECT_EQ(content_loss(q, q).item(), 0.0);
}

TEST(ContentLoss, SignInvariance) {
  const Tensor64 q = random64({3, 4}, 14), k = random64({3, 4}, 15);
  EXPECT_NEAR(content_loss(q, k).item(), content_loss(scale(q, -1.0), k).item(), 1e-15);
}

TEST(ContentLoss, DimensionError) {
  EXPECT_THROW(content_loss(random64({2, 3}, 1), random64({2, 4}, 2)), DimensionError);
}

TEST(StyleLoss, HandGramComputation) {
  const auto s = style_loss<double>(rows({{1, 0}}), rows({{0, 1}}), rows({{1, 0}}));
  ASSERT_TRUE(s.active);
  EXPECT_NEAR(s.value.item(), -0.5, 1e-12);
  const Tensor64 q = random64({3, 4}, 16);
  EXPECT_EQ(style_loss<double>(q, q, q).value.item(), 0.0);
}

TEST(StyleLoss, InactiveWithoutQueueExemplars) {
  const auto s = style_loss<double>(random64({2, 3}, 1), std::nullopt, std::nullopt);
  EXPECT_FALSE(s.active);
  EXPECT_EQ(s.value.item(), 0.0);
}

TEST(StyleLoss, NeverPositive) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto s = style_loss<double>(random64({3, 4}, seed), random64({3, 4}, seed + 1000),
                                      random64({2, 4}, seed + 2000));
    EXPECT_LE(s.value.item(), 0.0);
  }
}

TEST(StyleLoss, OptionalClamp) {
  const auto s = style_loss<double>(rows({{1, 0}}), rows({{0, 1}}), rows({{0, 1}}), GramDistance::mse, 0.25);
  EXPECT_EQ(s.value.item(), -0.25);
}

TEST(GramProperty, SymmetryAndPermutationInvariance) {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor64 x = random64({5, 4}, 100 + trial);
    const Tensor64 g = gram(x);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(g.data()[i * 4 + j], g.data()[j * 4 + i], 1e-10);

    std::vector<std::size_t> perm(5);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> permuted;
    for (auto p : perm) permuted.insert(permuted.end(), x.data().begin() + p * 4, x.data().begin() + p * 4 + 4);
    const Tensor64 xp(Shape{5, 4}, permuted);
    const Tensor64 k = random64({5, 4}, 200 + trial), q1 = random64({5, 4}, 300 + trial);
    EXPECT_NEAR(content_loss(x, k).item(), content_loss(xp, k).item(), 1e-12);
    EXPECT_NEAR(style_loss<double>(x, q1, k).value.item(), style_loss<double>(xp, q1, k).value.item(), 1e-12);
  }
}

TEST(Losses, ContentAndStyleGradientCheck) {
  const Tensor64 k = random64({3, 5}, 18), q1 = random64({3, 5}, 19), q2 = random64({2, 5}, 20);
  for (auto dist : {GramDistance::mse, GramDistance::frobenius}) {
    EXPECT_LT(grad_check([&](const auto& in) { return content_loss(in[0], k, dist); }, {random64({3, 5}, 21)})
                  .max_rel_error,
              1e-4);
    EXPECT_LT(grad_check([&](const auto& in) { return style_loss<double>(in[0], q1, q2, dist).value; },
                         {random64({3, 5}, 22)})
                  .max_rel_error,
              1e-4);
  }
}

// ---------------------------------------------------------------- encoders

EncoderConfig small_encoder() {
  EncoderConfig c;
  c.width = 4;
  c.latent_dim = 16;
  c.stages = 3;
  return c;
}

TEST(Encoder, ShapeContract) {
  Rng rng(1);
  ConStyleEncoder<float> enc(EncoderConfig{}, rng);
  Rng data(2);
  const auto bundle = enc.encode(Tensor::uniform({2, 3, 128, 128}, data, 0.f, 1.f));
  ASSERT_EQ(bundle.feature_maps.size(), 3u);
  EXPECT_EQ(bundle.feature_maps[0].shape(), (Shape{2, 16, 64, 64}));
  EXPECT_EQ(bundle.feature_maps[1].shape(), (Shape{2, 32, 32, 32}));
  EXPECT_EQ(bundle.feature_maps[2].shape(), (Shape{2, 64, 16, 16}));
  EXPECT_EQ(bundle.code.shape(), (Shape{2, 128}));
  for (std::size_t r = 0; r < 2; ++r) {
    double sq = 0;
    for (std::size_t j = 0; j < 128; ++j) sq += double(bundle.code.data()[r * 128 + j]) * bundle.code.data()[r * 128 + j];
    EXPECT_NEAR(std::sqrt(sq), 1.0, 1e-6);
  }
}

TEST(Encoder, DefaultParameterCountNearOnePointTwoMillion) {
  Rng rng(1);
  ConStyleEncoder<float> enc(EncoderConfig{}, rng);
  const double n = static_cast<double>(enc.parameters().scalar_count());
  EXPECT_NEAR(n / 1.19e6, 1.0, 0.10);
}

TEST(Encoder, IndivisibleInputIsDimensionError) {
  Rng rng(1);
  ConStyleEncoder<double> enc(small_encoder(), rng);
  EXPECT_THROW(enc.encode(random64({1, 3, 12, 16}, 1)), DimensionError);
}

TEST(Encoder, Deterministic) {
  Rng a(5), b(5);
  ConStyleEncoder<float> ea(small_encoder(), a), eb(small_encoder(), b);
  Rng data(6);
  const Tensor x = Tensor::uniform({2, 3, 16, 16}, data, 0.f, 1.f);
  const auto ba = ea.encode(x), bb = eb.encode(x);
  EXPECT_TRUE(testing::bit_equal(ba.code.data(), bb.code.data()));
  for (std::size_t s = 0; s < 3; ++s) EXPECT_TRUE(testing::bit_equal(ba.feature_maps[s].data(), bb.feature_maps[s].data()));
}

TEST(Encoder, GradientCheckThroughCode) {
  Rng rng(8);
  EncoderConfig cfg = small_encoder();
  cfg.width = 2;
  cfg.latent_dim = 4;
  ConStyleEncoder<double> enc(cfg, rng);
  const auto report = grad_check(
      [&](const std::vector<Tensor64>& in) {
        const auto b = enc.encode(in[0]);
        return add(testing::weighted_sum(b.code, 1), testing::weighted_sum(b.feature_maps[1], 2));
      },
      {random64({1, 3, 8, 8}, 9)});
  EXPECT_LT(report.max_rel_error, 1e-4);
}

TEST(MomentumEncoder, MirrorsNamesAndValues) {
  Rng rng(1);
  ConStyleEncoder<float> enc(small_encoder(), rng);
  MomentumEncoder<float> mom(enc);
  ASSERT_EQ(mom.parameters().size(), enc.parameters().size());
  for (const auto& [name, p] : enc.parameters()) {
    const auto& m = mom.parameters().get(name);
    EXPECT_TRUE(testing::bit_equal(m.data(), p.data())) << name;
    EXPECT_FALSE(m.requires_grad());
  }
}

TEST(MomentumEncoder, UnchangedByBackward) {
  Rng rng(1);
  ConStyleEncoder<float> enc(small_encoder(), rng);
  MomentumEncoder<float> mom(enc);
  std::vector<std::vector<float>> before;
  for (const auto& [_, p] : mom.parameters()) before.emplace_back(p.data().begin(), p.data().end());
  Rng data(3);
  for (int i = 0; i < 3; ++i) {
    const Tensor x = Tensor::uniform({2, 3, 16, 16}, data, 0.f, 1.f);
    const auto q = enc.encode(x).code;
    const auto k = mom.encode(x).code;
    EXPECT_FALSE(k.requires_grad());
    add(content_loss(q, k), mse_loss(q, k)).backward();
  }
  std::size_t i = 0;
  for (const auto& [name, p] : mom.parameters()) {
    EXPECT_TRUE(testing::bit_equal(p.data(), before[i++])) << name;
    EXPECT_FALSE(p.has_grad());
  }
}

TEST(EmaUpdate, Arithmetic) {
  ParameterSet<double> m, e;
  m.add("w", Tensor64(Shape{1}, {1.0}), false);
  e.add("w", Tensor64(Shape{1}, {0.0}));
  ema_update(m, e, 0.999);
  EXPECT_NEAR(m.get("w").item(), 0.999, 1e-15);

  m.get("w").mutable_data()[0] = 1.0;
  ema_update(m, e, 0.99);
  ema_update(m, e, 0.99);
  EXPECT_NEAR(m.get("w").item(), 0.9801, 1e-12);

  e.get("w").mutable_data()[0] = 0.123;
  ema_update(m, e, 0.0);
  EXPECT_EQ(m.get("w").item(), 0.123);
}

TEST(EmaUpdate, MismatchIsModelError) {
  ParameterSet<double> m, e;
  m.add("a", Tensor64::zeros({2}), false);
  e.add("b", Tensor64::zeros({2}));
  EXPECT_THROW(ema_update(m, e, 0.5), ModelError);
  ParameterSet<double> m2, e2;
  m2.add("a", Tensor64::zeros({2}), false);
  e2.add("a", Tensor64::zeros({3}));
  EXPECT_THROW(ema_update(m2, e2, 0.5), ModelError);
  EXPECT_THROW(ema_update(m2, m2, 1.0), ContractError);
}

TEST(EmaUpdate, ConvexCombinationIdentityOnEncoders) {
  Rng a(1), b(2);
  ConStyleEncoder<double> enc(small_encoder(), a);
  MomentumEncoder<double> mom(enc);
  ConStyleEncoder<double> other(small_encoder(), b);
  copy_parameters(enc.parameters(), other.parameters());  // encoder drifts away from the momentum copy
  std::vector<std::vector<double>> before;
  for (const auto& [_, p] : mom.parameters()) before.emplace_back(p.data().begin(), p.data().end());
  const double m = 0.9;
  ema_update(mom, enc, m);
  std::size_t i = 0;
  for (const auto& [name, p] : mom.parameters()) {
    const auto src = enc.parameters().get(name).data();
    for (std::size_t j = 0; j < p.numel(); ++j) {
      EXPECT_NEAR(p.data()[j], m * before[i][j] + (1 - m) * src[j], 1e-12);
    }
    ++i;
  }
}

}  // namespace
}  // namespace constyle
