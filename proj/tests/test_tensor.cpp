#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "survfuse/tensor.hpp"
#include "test_util.hpp"

using namespace survfuse;
using ad::Tensor;
using testutil::random_tensor;

namespace {

constexpr double kEps = 1e-5;
constexpr double kTol = 1e-5;

std::vector<double> grad_of(const std::function<Tensor(const Tensor&)>& f, const Tensor& x) {
  Tensor leaf = x.detach();
  leaf.set_requires_grad(true);
  ad::evaluate_with_grad([&] { return f(leaf); }, leaf);
  return {leaf.grad().begin(), leaf.grad().end()};
}

}  // namespace

TEST(Tensor, ShapeMismatchOnConstruction) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
}

TEST(Tensor, SumOfSquaresGradientIsTwiceInput) {
  const Tensor x = Tensor::vector({1.5, -2.0, 0.25});
  const auto g = grad_of([](const Tensor& t) { return ad::sum(ad::mul(t, t)); }, x);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(g[i], 2.0 * x[i]);
}

TEST(Tensor, ConstantLossLeavesGradientsZero) {
  Tensor x = Tensor::parameter({3}, {1, 2, 3});
  ad::Tape tape;
  ad::Tape::Scope scope(tape);
  tape.backward(Tensor::scalar(4.0));
  for (double g : x.grad()) EXPECT_EQ(g, 0.0);
  EXPECT_EQ(ad::grad_check([](const Tensor&) { return Tensor::scalar(3.0); }, x, kEps), 0.0);
}

TEST(Tensor, UsingAnInputTwiceAccumulates) {
  const auto g = grad_of([](const Tensor& t) { return ad::sum(ad::add(t, t)); }, Tensor::vector({0.3, 0.7}));
  EXPECT_DOUBLE_EQ(g[0], 2.0);
  EXPECT_DOUBLE_EQ(g[1], 2.0);
}

TEST(Tensor, LeafGradientsAccumulateAcrossTapes) {
  Tensor w = Tensor::parameter({2}, {1.0, 2.0});
  for (int k = 0; k < 2; ++k) {
    ad::Tape tape;
    ad::Tape::Scope scope(tape);
    tape.backward(ad::sum(ad::scale(w, 3.0)));
  }
  EXPECT_DOUBLE_EQ(w.grad()[0], 6.0);
  EXPECT_DOUBLE_EQ(w.grad()[1], 6.0);
}

TEST(Tensor, BackwardTwiceIsBitwiseIdentical) {
  Rng rng(4);
  Tensor w = random_tensor({3, 4}, rng);
  w.set_requires_grad(true);
  const Tensor x = random_tensor({4}, rng);
  ad::Tape tape;
  ad::Tape::Scope scope(tape);
  const Tensor y = ad::sum(ad::tanh(ad::linear(x, w, Tensor())));
  tape.backward(y);
  std::vector<double> first(w.grad().begin(), w.grad().end());
  w.zero_grad();
  tape.backward(y);
  EXPECT_EQ(first, std::vector<double>(w.grad().begin(), w.grad().end()));
}

TEST(Tensor, BackwardRejectsNonScalarAndForeignLoss) {
  Tensor x = Tensor::parameter({2}, {1.0, 2.0});
  ad::Tape a;
  Tensor ya;
  {
    ad::Tape::Scope scope(a);
    ya = ad::sum(ad::mul(x, x));
    EXPECT_THROW(a.backward(ad::mul(x, x)), ContractViolation);
  }
  ad::Tape b;
  ad::Tape::Scope scope(b);
  const Tensor yb = ad::sum(x);
  EXPECT_THROW(b.backward(ya), ContractViolation);
  EXPECT_NO_THROW(b.backward(yb));
}

TEST(Tensor, NoGradRecordsNothing) {
  Tensor x = Tensor::parameter({2}, {1.0, 2.0});
  ad::Tape tape;
  ad::Tape::Scope scope(tape);
  {
    ad::NoGrad no_grad;
    const Tensor y = ad::sum(ad::mul(x, x));
    EXPECT_FALSE(y.node_id().has_value());
  }
  EXPECT_EQ(tape.size(), 0u);
}

TEST(Tensor, ResetClearsTouchedGradients) {
  Tensor x = Tensor::parameter({2}, {1.0, 2.0});
  ad::Tape tape;
  ad::Tape::Scope scope(tape);
  tape.backward(ad::sum(ad::mul(x, x)));
  EXPECT_NE(x.grad()[0], 0.0);
  tape.reset();
  EXPECT_EQ(tape.size(), 0u);
  EXPECT_EQ(x.grad()[0], 0.0);
}

TEST(Tensor, SoftmaxSumsToOneAndStaysPositive) {
  Rng rng(1);
  const Tensor s = ad::softmax(random_tensor({17}, rng, 30.0));
  double total = 0.0;
  for (double v : s.values()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LE(v, 1.0);
    total += v;
  }
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_THROW(ad::softmax(Tensor(ad::Shape{0})), PreconditionError);
}

TEST(Tensor, LogRejectsNonPositiveButClampedLogFloors) {
  EXPECT_THROW(ad::log(Tensor::vector({1.0, 0.0})), DomainError);
  const Tensor y = ad::log_clamped(Tensor::vector({0.0, 1e-9, 0.5}), 1e-7);
  EXPECT_DOUBLE_EQ(y[0], std::log(1e-7));
  EXPECT_DOUBLE_EQ(y[1], std::log(1e-7));
  EXPECT_DOUBLE_EQ(y[2], std::log(0.5));
  const auto g = grad_of([](const Tensor& t) { return ad::sum(ad::log_clamped(t, 1e-7)); }, Tensor::vector({1e-9, 0.5}));
  EXPECT_EQ(g[0], 0.0);
  EXPECT_DOUBLE_EQ(g[1], 2.0);
}

TEST(Tensor, CumprodMatchesRunningProduct) {
  const Tensor c = ad::cumprod(Tensor::vector({0.5, 0.4, 2.0, 0.0, 3.0}));
  const std::vector<double> expect = {0.5, 0.2, 0.4, 0.0, 0.0};
  for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_DOUBLE_EQ(c[i], expect[i]);
}

TEST(Tensor, CumprodGradientWithZeroEntry) {
  // d/dx_j sum_i prod_{k<=i} x_k with x = (2, 0, 3): only the products that
  // skip the zero survive.
  const auto g = grad_of([](const Tensor& t) { return ad::sum(ad::cumprod(t)); }, Tensor::vector({2.0, 0.0, 3.0}));
  EXPECT_DOUBLE_EQ(g[0], 1.0);
  EXPECT_DOUBLE_EQ(g[1], 2.0 + 6.0);
  EXPECT_DOUBLE_EQ(g[2], 0.0);
}

TEST(Tensor, LinearMatchesMatmulPlusBias) {
  Rng rng(2);
  const Tensor x = random_tensor({5, 3}, rng), w = random_tensor({4, 3}, rng), b = random_tensor({4}, rng);
  const Tensor y = ad::linear(x, w, b);
  const Tensor ref = ad::matmul(x, ad::transpose(w));
  ASSERT_EQ(y.shape(), (ad::Shape{5, 4}));
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(y.at(r, c), ref.at(r, c) + b[c], 1e-12);
  EXPECT_THROW(ad::linear(random_tensor({2}, rng), w, b), DimensionError);
}

TEST(Tensor, SliceAndConcatRoundTrip) {
  const Tensor a = Tensor::vector({1, 2}), b = Tensor::vector({3, 4, 5});
  const Tensor c = ad::concat(a, b);
  const Tensor s = ad::slice(c, 2, 3);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(s[i], b[i]);
  EXPECT_THROW(ad::slice(c, 4, 2), DimensionError);
}

TEST(Tensor, KinkProbeSeesActivationSigns) {
  ad::KinkProbe probe;
  ad::relu(Tensor::vector({-1.0, 2.0}));
  ad::selu(Tensor::vector({0.5}), 1.67, 1.05);
  EXPECT_EQ(probe.signs(), (std::vector<bool>{false, true, true}));
}

// Every registered op against central finite differences.
struct OpCase {
  const char* name;
  ad::Shape shape;
  std::function<Tensor(const Tensor&)> f;
};

class OpGradCheck : public ::testing::TestWithParam<int> {};

TEST_P(OpGradCheck, EveryOpPassesFiniteDifferences) {
  Rng rng(1000 + GetParam());
  const Tensor other3 = random_tensor({3}, rng);
  const Tensor other34 = random_tensor({3, 4}, rng);
  const Tensor w = random_tensor({2, 4}, rng);
  const Tensor bias = random_tensor({2}, rng);
  const Tensor weights = random_tensor({12}, rng);
  auto dot = [weights](const Tensor& t) {
    Tensor flat = ad::reshape(t, {t.size()});
    return ad::sum(ad::mul(flat, ad::slice(weights, 0, t.size())));
  };
  const std::vector<OpCase> cases = {
      {"add", {3}, [&](const Tensor& x) { return dot(ad::add(x, other3)); }},
      {"sub", {3}, [&](const Tensor& x) { return dot(ad::sub(other3, x)); }},
      {"mul", {3}, [&](const Tensor& x) { return dot(ad::mul(x, other3)); }},
      {"scale", {3}, [&](const Tensor& x) { return dot(ad::scale(x, -1.7)); }},
      {"add_scalar", {3}, [&](const Tensor& x) { return dot(ad::mul(ad::add_scalar(x, 0.3), x)); }},
      {"tanh", {3}, [&](const Tensor& x) { return dot(ad::tanh(x)); }},
      {"sigmoid", {3}, [&](const Tensor& x) { return dot(ad::sigmoid(x)); }},
      {"relu", {3}, [&](const Tensor& x) { return dot(ad::relu(x)); }},
      {"exp", {3}, [&](const Tensor& x) { return dot(ad::exp(x)); }},
      {"log", {3}, [&](const Tensor& x) { return dot(ad::log(ad::add_scalar(ad::mul(x, x), 0.5))); }},
      {"selu", {3}, [&](const Tensor& x) { return dot(ad::selu(x, 1.6732632423543772, 1.0507009873554805)); }},
      {"sum", {3}, [&](const Tensor& x) { return ad::mul(ad::sum(x), ad::sum(x)); }},
      {"index", {3}, [&](const Tensor& x) { return ad::mul(ad::index(x, 1), ad::index(x, 2)); }},
      {"cumprod", {3}, [&](const Tensor& x) { return dot(ad::cumprod(x)); }},
      {"softmax", {3}, [&](const Tensor& x) { return dot(ad::softmax(x)); }},
      {"concat", {3}, [&](const Tensor& x) { return dot(ad::concat(x, ad::slice(other3, 0, 2))); }},
      {"slice", {3}, [&](const Tensor& x) { return dot(ad::slice(x, 1, 2)); }},
      {"matmul", {2, 3}, [&](const Tensor& x) { return dot(ad::reshape(ad::matmul(x, other34), {8})); }},
      {"transpose", {2, 3}, [&](const Tensor& x) { return dot(ad::transpose(x)); }},
      {"linear", {4}, [&](const Tensor& x) { return dot(ad::linear(x, w, bias)); }},
      {"linear_batch", {3, 4}, [&](const Tensor& x) { return dot(ad::reshape(ad::linear(x, w, bias), {6})); }},
  };
  for (const auto& c : cases) {
    const Tensor x = random_tensor(c.shape, rng);
    EXPECT_LT(ad::grad_check(c.f, x, kEps), kTol) << c.name;
  }
}

INSTANTIATE_TEST_SUITE_P(RandomInputs, OpGradCheck, ::testing::Range(0, 5));

TEST(Tensor, LinearWeightGradientMatchesFiniteDifferences) {
  Rng rng(9);
  Tensor w = random_tensor({3, 5}, rng);
  const Tensor x = random_tensor({4, 5}, rng);
  Tensor b = random_tensor({3}, rng);
  auto f = [&] { return ad::sum(ad::tanh(ad::linear(x, w, b))); };
  EXPECT_LT(ad::grad_check_inplace(f, w, kEps), kTol);
  EXPECT_LT(ad::grad_check_inplace(f, b, kEps), kTol);
}

TEST(Tensor, GradCheckIsTightForLinearFunctions) {
  Rng rng(3);
  const Tensor a = random_tensor({6}, rng);
  EXPECT_LT(ad::grad_check([&](const Tensor& x) { return ad::sum(ad::mul(a, x)); }, random_tensor({6}, rng), kEps),
            1e-9);
}

TEST(Tensor, GradCheckRejectsLargeStep) {
  EXPECT_THROW(ad::grad_check([](const Tensor& x) { return ad::sum(x); }, Tensor::vector({1.0}), 1e-2),
               ParameterError);
}
