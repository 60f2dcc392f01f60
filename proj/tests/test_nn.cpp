#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "aope/nn.hpp"

using namespace aope;
using nn::Matrix;
using nn::Mlp;
using nn::Vector;

namespace {

Mlp random_net(std::vector<int> sizes, std::uint64_t seed) {
  Mlp net(std::move(sizes));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 0.7);
  for (auto& l : net.layers()) {
    for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = nd(rng);
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias[i] = nd(rng);
  }
  return net;
}

Matrix random_matrix(int rows, int cols, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
  return m;
}

double loss(const Mlp& net, const Matrix& x, const Matrix& dy) { return (nn::forward(net, x).array() * dy.array()).sum(); }

}  // namespace

TEST(Mlp, ShapesAndParameterCount) {
  Mlp net({7, 128, 128, 3});
  EXPECT_EQ(net.input_dim(), 7);
  EXPECT_EQ(net.output_dim(), 3);
  EXPECT_EQ(net.num_params(), std::size_t(7 * 128 + 128 + 128 * 128 + 128 + 128 * 3 + 3));
  Matrix y = nn::forward(net, Matrix(Matrix::Ones(7, 5)));
  EXPECT_EQ(y.rows(), 3);
  EXPECT_EQ(y.cols(), 5);
  EXPECT_THROW(nn::forward(net, Matrix(Matrix::Ones(6, 1))), Error);
}

TEST(Mlp, RejectsNonFiniteInput) {
  Mlp net({2, 4, 1});
  Matrix x = Matrix::Zero(2, 1);
  x(1, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(nn::forward(net, x), Error);
}

TEST(Mlp, BatchForwardMatchesColumnwise) {
  std::mt19937_64 rng(1);
  Mlp net = random_net({5, 9, 4}, 2);
  Matrix x = random_matrix(5, 6, rng);
  Matrix y = nn::forward(net, x);
  for (int c = 0; c < 6; ++c) EXPECT_LT((nn::forward(net, Vector(x.col(c))) - y.col(c)).norm(), 1e-12);
}

TEST(Mlp, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> sizes{1 + static_cast<int>(rng() % 6)};
    int depth = 1 + static_cast<int>(rng() % 3);
    for (int d = 0; d < depth; ++d) sizes.push_back(1 + static_cast<int>(rng() % 7));
    sizes.push_back(1 + static_cast<int>(rng() % 4));
    Mlp net = random_net(sizes, 100 + trial);
    const int batch = 1 + static_cast<int>(rng() % 4);
    Matrix x = random_matrix(sizes.front(), batch, rng);
    Matrix dy = random_matrix(sizes.back(), batch, rng);

    nn::Cache cache;
    nn::forward(net, x, &cache);
    nn::Gradients g = nn::backward(net, cache, dy);
    const double h = 1e-6;
    for (std::size_t li = 0; li < net.layers().size(); ++li) {
      auto& w = net.layers()[li].weight;
      for (Eigen::Index i = 0; i < w.size(); ++i) {
        double keep = w.data()[i];
        w.data()[i] = keep + h;
        double up = loss(net, x, dy);
        w.data()[i] = keep - h;
        double dn = loss(net, x, dy);
        w.data()[i] = keep;
        EXPECT_NEAR(g.weight[li].data()[i], (up - dn) / (2 * h), 1e-6) << "layer " << li;
      }
      auto& b = net.layers()[li].bias;
      for (Eigen::Index i = 0; i < b.size(); ++i) {
        double keep = b[i];
        b[i] = keep + h;
        double up = loss(net, x, dy);
        b[i] = keep - h;
        double dn = loss(net, x, dy);
        b[i] = keep;
        EXPECT_NEAR(g.bias[li][i], (up - dn) / (2 * h), 1e-6);
      }
    }
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      Matrix xp = x, xm = x;
      xp.data()[i] += h;
      xm.data()[i] -= h;
      EXPECT_NEAR(g.input.data()[i], (loss(net, xp, dy) - loss(net, xm, dy)) / (2 * h), 1e-6);
    }
  }
}

TEST(Init, OrthogonalRowsOrColumns) {
  Mlp net({186, 128, 128, 1});
  auto gains = nn::default_gains(net, 1.0);
  ASSERT_EQ(gains.size(), 3u);
  EXPECT_DOUBLE_EQ(gains[0], std::sqrt(2.0));
  EXPECT_DOUBLE_EQ(gains[2], 1.0);
  nn::orthogonal_init(net, gains, 9);
  for (std::size_t li = 0; li < 3; ++li) {
    const Matrix& w = net.layers()[li].weight;
    double g2 = gains[li] * gains[li];
    Matrix gram = w.rows() <= w.cols() ? Matrix(w * w.transpose()) : Matrix(w.transpose() * w);
    EXPECT_LT((gram - g2 * Matrix::Identity(gram.rows(), gram.cols())).norm(), 1e-9) << "layer " << li;
    EXPECT_EQ(net.layers()[li].bias.norm(), 0.0);
  }
}

TEST(Init, DeterministicPerSeed) {
  Mlp a({10, 16, 4}), b({10, 16, 4}), c({10, 16, 4});
  auto gains = nn::default_gains(a, 0.01);
  nn::orthogonal_init(a, gains, 3);
  nn::orthogonal_init(b, gains, 3);
  nn::orthogonal_init(c, gains, 4);
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(a == c);
}

TEST(Softmax, StableForLargeLogits) {
  Vector z(3);
  z << 1000.0, 1000.0, -1000.0;
  Vector p = nn::softmax(z);
  EXPECT_NEAR(p[0], 0.5, 1e-12);
  EXPECT_NEAR(p[2], 0.0, 1e-12);
  EXPECT_TRUE(p.allFinite());
}

TEST(ClipGradNorm, ScalesOnlyWhenAboveThreshold) {
  Mlp net({2, 3, 1});
  auto g = nn::Gradients::zeros_like(net);
  g.weight[0].setConstant(1.0);  // 6 entries
  g.bias[1].setConstant(2.0);    // 1 entry
  double before = nn::clip_grad_norm(g, 0.5);
  EXPECT_NEAR(before, std::sqrt(10.0), 1e-12);
  EXPECT_NEAR(std::sqrt(g.squared_norm()), 0.5, 1e-12);
  double again = nn::clip_grad_norm(g, 1.0);
  EXPECT_NEAR(again, 0.5, 1e-12);
  EXPECT_NEAR(std::sqrt(g.squared_norm()), 0.5, 1e-12);
}

TEST(Adam, FirstStepMovesEachParameterByLearningRate) {
  Mlp net({2, 2, 1});
  nn::AdamConfig cfg;
  cfg.learning_rate = 0.01;
  nn::AdamState st(net, cfg);
  auto g = nn::Gradients::zeros_like(net);
  g.weight[0] << 3.0, -0.5, 1e-3, -7.0;
  Mlp before = net;
  ASSERT_TRUE(nn::adam_step(net, g, st));
  EXPECT_EQ(st.step, 1);
  for (Eigen::Index i = 0; i < 4; ++i) {
    double sign = g.weight[0].data()[i] > 0 ? 1.0 : -1.0;
    EXPECT_NEAR(net.layers()[0].weight.data()[i] - before.layers()[0].weight.data()[i], -0.01 * sign, 1e-7);
  }
  EXPECT_EQ(net.layers()[1].weight, before.layers()[1].weight);
}

TEST(Adam, ConstantGradientKeepsStepAtLearningRate) {
  Mlp net({1, 1});
  nn::AdamConfig cfg;
  cfg.learning_rate = 0.1;
  nn::AdamState st(net, cfg);
  auto g = nn::Gradients::zeros_like(net);
  g.bias[0][0] = 0.3;
  for (int k = 0; k < 10; ++k) {
    double b0 = net.layers()[0].bias[0];
    ASSERT_TRUE(nn::adam_step(net, g, st));
    EXPECT_NEAR(net.layers()[0].bias[0] - b0, -0.1, 1e-6);
  }
}

TEST(Adam, MinimizesQuadratic) {
  Mlp net({1, 1});
  nn::AdamConfig cfg;
  cfg.learning_rate = 0.05;
  nn::AdamState st(net, cfg);
  for (int k = 0; k < 2000; ++k) {
    auto g = nn::Gradients::zeros_like(net);
    g.bias[0][0] = 2.0 * (net.layers()[0].bias[0] - 3.0);
    nn::adam_step(net, g, st);
  }
  EXPECT_NEAR(net.layers()[0].bias[0], 3.0, 1e-3);
}

TEST(Adam, SkipsNonFiniteGradient) {
  Mlp net({2, 1});
  nn::AdamState st(net, {});
  auto g = nn::Gradients::zeros_like(net);
  g.weight[0](0, 1) = std::numeric_limits<double>::infinity();
  Mlp before = net;
  nn::AdamState st_before = st;
  EXPECT_FALSE(nn::adam_step(net, g, st));
  EXPECT_TRUE(net == before);
  EXPECT_EQ(st.skipped, 1);
  EXPECT_EQ(st.step, st_before.step);
}

TEST(Adam, LearningRateDecaySchedule) {
  Mlp net({1, 1});
  nn::AdamConfig cfg;
  cfg.learning_rate = 1e-3;
  nn::AdamState st(net, cfg);
  st.set_completed_episodes(249);
  EXPECT_DOUBLE_EQ(st.learning_rate, 1e-3);
  st.set_completed_episodes(250);
  EXPECT_DOUBLE_EQ(st.learning_rate, 1e-3 * 0.8);
  st.set_completed_episodes(1000);
  EXPECT_NEAR(st.learning_rate, 1e-3 * std::pow(0.8, 4), 1e-15);
}

TEST(Serialization, RoundTripIsExact) {
  Mlp net = random_net({6, 5, 2}, 77);
  nn::AdamState st(net, {});
  auto g = nn::Gradients::zeros_like(net);
  g.weight[1].setConstant(0.25);
  nn::adam_step(net, g, st);
  std::stringstream ss;
  nn::write_mlp(ss, net);
  nn::write_adam(ss, st);
  nn::write_f64(ss, -0.0);
  Mlp net2 = nn::read_mlp(ss);
  nn::AdamState st2 = nn::read_adam(ss);
  EXPECT_TRUE(net == net2);
  EXPECT_TRUE(st == st2);
  EXPECT_TRUE(std::signbit(nn::read_f64(ss)));
}

TEST(Serialization, TruncatedStreamThrows) {
  Mlp net = random_net({4, 3, 2}, 5);
  std::stringstream ss;
  nn::write_mlp(ss, net);
  std::string bytes = ss.str();
  std::stringstream cut(bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(nn::read_mlp(cut), Error);
}
