#include <bit>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "dmsgcn/gradcheck.hpp"
#include "dmsgcn/gradcheck_suite.hpp"
#include "dmsgcn/ops.hpp"
#include "dmsgcn/optim.hpp"
#include "dmsgcn/parameter.hpp"
#include "dmsgcn/rng.hpp"
#include "dmsgcn/tensor.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace dmsgcn;
using testutil::tensor;
using testutil::vec;

namespace {

std::vector<double> grads(const Tensor<double>& t) { return {t.grad().begin(), t.grad().end()}; }

Tensor<double> tracked(Shape shape, std::vector<double> values) {
  Tensor<double> t(std::move(shape), std::move(values));
  t.set_tracked(true);
  return t;
}

class TapeTest : public ::testing::Test {
 protected:
  void SetUp() override { active_tape<double>().clear(); }
  void TearDown() override { active_tape<double>().clear(); }
};

}  // namespace

TEST(Tensor, NumelMatchesShape) {
  Tensor<float> t(Shape{2, 3, 4});
  EXPECT_EQ(t.numel(), 24u);
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_EQ(t.dim(-1), 4u);
  EXPECT_THROW(Tensor<float>(Shape{2, 0}), DimensionError);
  EXPECT_THROW(Tensor<double>(Shape{2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  EXPECT_THROW((void)t.dim(3), DimensionError);
}

TEST(Tensor, CloneIsDeepAndUntracked) {
  auto a = tracked({2}, {1, 2});
  auto b = a.clone();
  b.data()[0] = 9;
  EXPECT_EQ(a.data()[0], 1);
  EXPECT_FALSE(b.tracked());
}

TEST_F(TapeTest, NonFiniteOutputIsReportedWhenChecking) {
  // ctest runs this binary with DMSGCN_CHECK_NAN=1
  ASSERT_TRUE(detail::nan_check_enabled());
  auto x = tensor({2}, {1.0, 1000.0});
  EXPECT_THROW(map_unary(x, [](double v) { return std::exp(v); }, [](double v) { return std::exp(v); }, "exp"),
               NumericalError);
}

TEST_F(TapeTest, MatmulExamples) {
  auto id = tensor({2, 2}, {1, 0, 0, 1});
  auto b = tensor({2, 2}, {3, 4, 5, 6});
  EXPECT_EQ(vec(matmul(id, b)), (std::vector<double>{3, 4, 5, 6}));
  EXPECT_EQ(vec(matmul(tensor({1, 2}, {1, 2}), tensor({2, 1}, {3, 4}))), std::vector<double>{11});
}

TEST_F(TapeTest, MatmulMatchesTripleLoop) {
  std::mt19937_64 gen(11);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = oracle::uniform(20, gen), b = oracle::uniform(15, gen);
    const auto got = vec(matmul(tensor({4, 5}, a), tensor({5, 3}, b)));
    EXPECT_LE(oracle::max_abs_diff(got, oracle::matmul(a, b, 4, 5, 3)), 1e-12);
  }
}

TEST_F(TapeTest, MatmulBackwardIsGradTimesTranspose) {
  std::mt19937_64 gen(12);
  const auto av = oracle::uniform(12, gen), bv = oracle::uniform(20, gen), gv = oracle::uniform(15, gen);
  auto a = tracked({3, 4}, av), b = tracked({4, 5}, bv);
  auto loss = sum(hadamard(matmul(a, b), tensor({3, 5}, gv)));
  backward(loss);
  std::vector<double> bt(20), at(12);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 5; ++j) bt[j * 4 + i] = bv[i * 5 + j];
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) at[j * 3 + i] = av[i * 4 + j];
  EXPECT_LE(oracle::max_abs_diff(grads(a), oracle::matmul(gv, bt, 3, 5, 4)), 1e-12);
  EXPECT_LE(oracle::max_abs_diff(grads(b), oracle::matmul(at, gv, 4, 3, 5)), 1e-12);
}

TEST_F(TapeTest, MatmulShapeErrorNamesBothShapes) {
  try {
    matmul(tensor({2, 3}, std::vector<double>(6, 1)), tensor({2, 3}, std::vector<double>(6, 1)));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos) << e.what();
  }
}

TEST_F(TapeTest, HadamardExamplesAndMaskedGradient) {
  EXPECT_EQ(vec(hadamard(tensor({3}, {1, 2, 3}), tensor({3}, {4, 0, 6}))), (std::vector<double>{4, 0, 18}));
  EXPECT_EQ(vec(hadamard(tensor({3}, {1, 2, 3}), tensor({3}, {1, 1, 1}))), (std::vector<double>{1, 2, 3}));

  auto a = tracked({2, 2}, {1.5, -2.0, 0.25, 3.0});
  const auto mask = tensor({2, 2}, {1, 0, 0, 1});
  backward(sum(scale(hadamard(a, mask), 3.7)));
  EXPECT_EQ(std::bit_cast<std::uint64_t>(a.grad()[1]), 0u);
  EXPECT_EQ(std::bit_cast<std::uint64_t>(a.grad()[2]), 0u);
  EXPECT_DOUBLE_EQ(a.grad()[0], 3.7);

  active_tape<double>().clear();
  auto b = tracked({3}, {1, 2, 3});
  auto zero = hadamard(b, tensor({3}, {0, 0, 0}));
  EXPECT_EQ(vec(zero), (std::vector<double>{0, 0, 0}));
  backward(sum(zero));
  for (double g : b.grad()) EXPECT_EQ(g, 0.0);
  EXPECT_THROW(hadamard(tensor({2}, {1, 2}), tensor({3}, {1, 2, 3})), DimensionError);
}

TEST_F(TapeTest, PreluExamples) {
  EXPECT_EQ(vec(prelu(tensor({3}, {-2, 0, 3}), tensor({1}, {0.25}))), (std::vector<double>{-0.5, 0, 3}));
  EXPECT_EQ(vec(prelu(tensor({3}, {-2, 0.5, 3}), tensor({1}, {1.0}))), (std::vector<double>{-2, 0.5, 3}));
  auto x = tensor({1}, {-2});
  auto slope = tracked({1}, {0.25});
  backward(sum(prelu(x, slope)));
  EXPECT_DOUBLE_EQ(slope.grad()[0], -2.0);
}

TEST_F(TapeTest, PreluPerChannelSlope) {
  auto y = prelu(tensor({2, 2}, {-1, -1, -2, 4}), tensor({2}, {0.1, 0.5}));
  EXPECT_EQ(vec(y), (std::vector<double>{-0.1, -0.5, -0.2, 4}));
  EXPECT_THROW(prelu(tensor({2, 3}, std::vector<double>(6, 1)), tensor({2}, {0.1, 0.2})), DimensionError);
}

TEST(Dropout, IdentityCases) {
  auto x = tensor({4}, {1, 2, 3, 4});
  EXPECT_EQ(vec(dropout(x, 0.0, true, 7)), vec(x));
  EXPECT_EQ(vec(dropout(x, 0.5, false, 7)), vec(x));
  EXPECT_THROW(dropout(x, 1.0, true, 7), ConfigError);
  EXPECT_THROW(dropout(x, -0.1, true, 7), ConfigError);
}

TEST(Dropout, MonteCarloMeanIsPreserved) {
  Tensor<float> ones(Shape{1000000}, 1.0f);
  const auto y = dropout(ones, 0.1, true, 2024);
  double total = 0.0;
  std::size_t zeros = 0;
  for (float v : y.data()) {
    total += v;
    zeros += v == 0.0f;
  }
  const double mean = total / 1e6;
  EXPECT_GE(mean, 0.99);
  EXPECT_LE(mean, 1.01);
  EXPECT_NEAR(static_cast<double>(zeros) / 1e6, 0.1, 0.002);
  for (float v : y.data()) ASSERT_TRUE(v == 0.0f || v == 1.0f / 0.9f);
}

TEST(Dropout, DeterministicPerSeedAndMatchesScalarDraw) {
  Tensor<double> x(Shape{257}, 2.0);
  const auto a = vec(dropout(x, 0.3, true, 99)), b = vec(dropout(x, 0.3, true, 99)), c = vec(dropout(x, 0.3, true, 100));
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  const Philox rng(99);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i] != 0.0, rng.uniform_float(i) >= 0.3f) << i;
}

TEST_F(TapeTest, L1LossExamples) {
  auto p = tensor({1, 1, 3}, {1, -2, 3});
  EXPECT_EQ(l1_loss(p, p).item(), 0.0);
  EXPECT_DOUBLE_EQ(l1_loss(p, tensor({1, 1, 3}, {0, 0, 0})).item(), 6.0);
  EXPECT_THROW(l1_loss(p, tensor({1, 3}, {0, 0, 0})), DimensionError);

  auto q = tracked({1, 1, 1}, {2.0});
  backward(l1_loss(q, tensor({1, 1, 1}, {1.0})));
  EXPECT_EQ(q.grad()[0], 1.0);
}

TEST_F(TapeTest, L1LossMatchesScalarOracle) {
  std::mt19937_64 gen(13);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = oracle::uniform(60, gen), t = oracle::uniform(60, gen);
    EXPECT_LE(std::abs(l1_loss(tensor({4, 5, 3}, p), tensor({4, 5, 3}, t)).item() - oracle::l1(p, t)), 1e-12);
  }
}

TEST_F(TapeTest, L1SubgradientIsZeroAtTies) {
  auto p = tracked({1, 1, 3}, {1, 2, 3});
  backward(l1_loss(p, tensor({1, 1, 3}, {1, 0, 5})));
  EXPECT_EQ(grads(p), (std::vector<double>{0, 1, -1}));
}

TEST_F(TapeTest, BackwardOfSumIsOnes) {
  auto x = tracked({3}, {4, 5, 6});
  backward(sum(x));
  EXPECT_EQ(grads(x), (std::vector<double>{1, 1, 1}));
}

TEST_F(TapeTest, BackwardAccumulatesIntoLeaves) {
  auto x = tracked({2}, {1, -1});
  auto loss = sum(scale(x, 2.0));
  backward(loss);
  backward(loss);
  EXPECT_EQ(grads(x), (std::vector<double>{4, 4}));
  x.zero_grad();
  backward(loss);
  EXPECT_EQ(x.grad()[0], 2.0);
}

TEST_F(TapeTest, BackwardRejectsNonScalar) {
  auto x = tracked({2}, {1, 2});
  EXPECT_THROW(backward(scale(x, 2.0)), ContractError);
}

TEST_F(TapeTest, BackwardVisitsNodesInReverseOrder) {
  std::vector<char> visits;
  auto x = tracked({1}, {0.5});
  auto a = map_unary(x, [](double v) { return v; }, [&](double) { visits.push_back('a'); return 1.0; }, "a");
  auto b = map_unary(a, [](double v) { return v; }, [&](double) { visits.push_back('b'); return 1.0; }, "b");
  auto c = map_unary(b, [](double v) { return v; }, [&](double) { visits.push_back('c'); return 1.0; }, "c");
  ASSERT_EQ(active_tape<double>().size(), 3u);
  EXPECT_STREQ(active_tape<double>().nodes()[0].op, "a");
  backward(sum(c));
  EXPECT_EQ(visits, (std::vector<char>{'c', 'b', 'a'}));
  active_tape<double>().clear();
  EXPECT_EQ(active_tape<double>().size(), 0u);
}

TEST_F(TapeTest, NoGradGuardRecordsNothing) {
  auto x = tracked({2}, {1, 2});
  {
    NoGradGuard guard;
    auto y = scale(x, 2.0);
    EXPECT_FALSE(y.tracked());
  }
  EXPECT_TRUE(active_tape<double>().empty());
}

namespace {

ParameterSet<double> scalar_param(double value, std::optional<std::vector<unsigned char>> freeze = std::nullopt) {
  ParameterSet<double> ps;
  const std::size_t n = freeze ? freeze->size() : 1;
  ps.create("p", Tensor<double>(Shape{n}, value), ParamKind::weight, std::move(freeze));
  return ps;
}

void set_grad(ParameterSet<double>& ps, double g) {
  for (const auto& p : ps) {
    p->value.zero_grad();
    for (double& x : p->value.grad()) x = g;
  }
}

}  // namespace

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  auto ps = scalar_param(0.7);
  AdamState<double> st;
  for (int i = 0; i < 5; ++i) {
    set_grad(ps, 0.0);
    adam_step(ps, st);
  }
  EXPECT_EQ(ps[0]->value.data()[0], 0.7);
  EXPECT_EQ(st.step_count, 5u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  auto ps = scalar_param(1.0);
  AdamState<double> st(AdamConfig{0.001, 0.9, 0.999, 1e-8});
  EXPECT_EQ(st.step_count, 0u);
  set_grad(ps, 1.0);
  adam_step(ps, st);
  EXPECT_NEAR(ps[0]->value.data()[0] - 1.0, -0.001, 1e-6);
  EXPECT_EQ(st.step_count, 1u);
  for (double g : ps[0]->value.grad()) EXPECT_EQ(g, 0.0);  // zeroed after the step
}

TEST(Adam, MatchesScalarReference) {
  auto ps = scalar_param(0.3);
  AdamState<double> st(AdamConfig{0.01, 0.8, 0.99, 1e-6});
  double p = 0.3, m = 0.0, v = 0.0;
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> dist(-1, 1);
  for (int t = 1; t <= 30; ++t) {
    const double g = dist(gen);
    set_grad(ps, g);
    adam_step(ps, st);
    m = 0.8 * m + 0.2 * g;
    v = 0.99 * v + 0.01 * g * g;
    p -= 0.01 * (m / (1 - std::pow(0.8, t))) / (std::sqrt(v / (1 - std::pow(0.99, t))) + 1e-6);
    EXPECT_NEAR(ps[0]->value.data()[0], p, 1e-14);
  }
}

TEST(Adam, FrozenEntriesStayBitIdentical) {
  auto ps = scalar_param(0.0, std::vector<unsigned char>{1, 0, 1, 0});
  auto values = ps[0]->value.data();
  values[1] = 0.123456789;
  values[3] = -7.5;
  AdamState<double> st;
  for (int i = 0; i < 100; ++i) {
    set_grad(ps, 1.0 + i);
    adam_step(ps, st);
  }
  EXPECT_EQ(std::bit_cast<std::uint64_t>(values[1]), std::bit_cast<std::uint64_t>(0.123456789));
  EXPECT_EQ(std::bit_cast<std::uint64_t>(values[3]), std::bit_cast<std::uint64_t>(-7.5));
  EXPECT_NE(values[0], 0.0);
  EXPECT_EQ(ps.trainable_count(), 2u);
}

TEST(Adam, MissingGradientNamesParameter) {
  ParameterSet<double> ps;
  ps.create("encoder.W", Tensor<double>(Shape{2}), ParamKind::weight);
  AdamState<double> st;
  try {
    adam_step(ps, st);
    FAIL() << "expected ContractError";
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("encoder.W"), std::string::npos);
  }
}

TEST(Parameters, NamesAreUnique) {
  ParameterSet<float> ps;
  ps.create("a", Tensor<float>(Shape{1}), ParamKind::weight);
  EXPECT_THROW(ps.create("a", Tensor<float>(Shape{1}), ParamKind::weight), ContractError);
  EXPECT_THROW(ps.create("b", Tensor<float>(Shape{2}), ParamKind::weight, std::vector<unsigned char>{1}), DimensionError);
}

TEST(LrSchedule, HalvesEveryTenEpochs) {
  EXPECT_EQ(lr_schedule(0, 1e-3), 1e-3);
  EXPECT_EQ(lr_schedule(9, 1e-3), 1e-3);
  EXPECT_EQ(lr_schedule(10, 1e-3), 5e-4);
  EXPECT_EQ(lr_schedule(25, 1e-3), 2.5e-4);
  for (std::size_t e : {10u, 20u, 30u}) EXPECT_EQ(lr_schedule(e, 0.1), lr_schedule(e - 1, 0.1) / 2);
  for (std::size_t e = 1; e < 200; ++e) EXPECT_LE(lr_schedule(e, 0.1), lr_schedule(e - 1, 0.1));
}

TEST_F(TapeTest, FiniteDiffMatmul) {
  auto a = random_tensor<double>({3, 3}, 1), b = random_tensor<double>({3, 3}, 2);
  const auto r = random_tensor<double>({3, 3}, 3);
  const auto res = finite_diff_check([&] { return sum(hadamard(matmul(a, b), r)); }, {a, b});
  EXPECT_LE(res.max_rel_error, 1e-6);
  EXPECT_EQ(res.entries_checked, 18u);
}

TEST_F(TapeTest, FiniteDiffPreluChainAwayFromKink) {
  auto x = random_tensor<double>({4, 3}, 4, -2, 2, 1e-3);
  auto s = random_tensor<double>({1}, 5, 0.1, 0.4);
  const auto res = finite_diff_check([&] { return sum(prelu(scale(prelu(x, s), 1.5), s)); }, {x, s});
  EXPECT_LE(res.max_rel_error, 1e-6);
}

TEST_F(TapeTest, FiniteDiffRejectsNondeterministicFunction) {
  auto x = random_tensor<double>({2}, 6);
  int calls = 0;
  EXPECT_THROW(finite_diff_check([&] { return sum(scale(x, static_cast<double>(++calls))); }, {x}), ContractError);
}

TEST_F(TapeTest, FiniteDiffFlagsWrongDerivative) {
  auto x = random_tensor<double>({3}, 7);
  const auto res = finite_diff_check(
      [&] { return sum(map_unary(x, [](double v) { return std::sin(v); }, [](double v) { return std::sin(v); }, "bad")); },
      {x});
  EXPECT_GT(res.max_rel_error, 1e-2);
}

TEST(GradSuite, LayerChecksPassWithOneLinePerCheck) {
  GradSuiteOptions opt;
  opt.include_model = false;
  std::ostringstream log;
  const auto report = run_gradcheck_suite(opt, &log);
  EXPECT_TRUE(report.passed());
  std::size_t lines = 0;
  for (char c : log.str()) lines += c == '\n';
  EXPECT_EQ(lines, report.lines.size());
  EXPECT_GE(report.lines.size(), 17u);
  for (const auto& l : report.lines) EXPECT_LE(l.result.max_rel_error, 1e-5) << l.name;
}

TEST(GradSuite, InjectedFaultFails) {
  GradSuiteOptions opt;
  opt.include_model = false;
  opt.inject_fault = true;
  const auto report = run_gradcheck_suite(opt);
  EXPECT_FALSE(report.passed());
  EXPECT_NE(report.worst()->name.find("fault"), std::string::npos);
}

TEST(Philox, KnownAnswerVectors) {
  using B = Philox::Block;
  EXPECT_EQ(Philox::generate(B{0, 0, 0, 0}, {0, 0}), (B{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u}));
  EXPECT_EQ(Philox::generate(B{~0u, ~0u, ~0u, ~0u}, {~0u, ~0u}), (B{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu}));
  EXPECT_EQ(Philox::generate(B{0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u}),
            (B{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u}));
}

TEST(Philox, FillWordsMatchesScalarAccess) {
  const Philox rng(123, 456);
  std::vector<std::uint32_t> words(203);
  rng.fill_words(5, words.size(), words.data());
  for (std::size_t i = 0; i < words.size(); ++i) ASSERT_EQ(words[i], rng.u32(20 + i)) << i;
}

TEST(Philox, UniformsStayInRange) {
  const Philox rng(9);
  CounterRng seq(9);
  for (std::uint64_t i = 0; i < 10000; ++i) {
    const double d = rng.uniform_double(i);
    const float f = rng.uniform_float(i);
    ASSERT_TRUE(d >= 0.0 && d < 1.0);
    ASSERT_TRUE(f >= 0.0f && f < 1.0f);
    ASSERT_LT(seq.below(7), 7u);
  }
  EXPECT_THROW(seq.below(0), std::out_of_range);
  EXPECT_NE(mix_seed(1, 2), mix_seed(2, 1));
  EXPECT_NE(hash_name("a"), hash_name("b"));
}
