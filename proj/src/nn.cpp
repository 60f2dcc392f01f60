#include "aope/nn.hpp"

#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <random>

namespace aope::nn {

Mlp::Mlp(std::vector<int> sizes) : sizes_(std::move(sizes)) {
  if (sizes_.size() < 2) throw Error("Mlp needs at least input and output sizes");
  for (int s : sizes_)
    if (s <= 0) throw Error("Mlp layer sizes must be positive");
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    layers_.push_back({Matrix::Zero(sizes_[l + 1], sizes_[l]), Vector::Zero(sizes_[l + 1])});
  }
}

std::size_t Mlp::num_params() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
  return n;
}

bool Mlp::all_finite() const {
  for (const auto& l : layers_)
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  return true;
}

bool operator==(const Mlp& a, const Mlp& b) {
  if (a.sizes_ != b.sizes_) return false;
  for (std::size_t l = 0; l < a.layers_.size(); ++l) {
    if (a.layers_[l].weight != b.layers_[l].weight || a.layers_[l].bias != b.layers_[l].bias) return false;
  }
  return true;
}

Gradients Gradients::zeros_like(const Mlp& mlp) {
  Gradients g;
  for (const auto& l : mlp.layers()) {
    g.weight.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
    g.bias.push_back(Vector::Zero(l.bias.size()));
  }
  return g;
}

Gradients& Gradients::operator+=(const Gradients& o) {
  for (std::size_t l = 0; l < weight.size(); ++l) {
    weight[l] += o.weight[l];
    bias[l] += o.bias[l];
  }
  return *this;
}

double Gradients::squared_norm() const {
  double s = 0.0;
  for (std::size_t l = 0; l < weight.size(); ++l) s += weight[l].squaredNorm() + bias[l].squaredNorm();
  return s;
}

void Gradients::scale(double factor) {
  for (std::size_t l = 0; l < weight.size(); ++l) {
    weight[l] *= factor;
    bias[l] *= factor;
  }
}

bool Gradients::all_finite() const {
  for (std::size_t l = 0; l < weight.size(); ++l)
    if (!weight[l].allFinite() || !bias[l].allFinite()) return false;
  return true;
}

Matrix forward(const Mlp& mlp, const Matrix& x, Cache* cache) {
  if (x.rows() != mlp.input_dim()) {
    throw Error("forward: input has " + std::to_string(x.rows()) + " rows, expected " +
                std::to_string(mlp.input_dim()));
  }
  if (!x.allFinite()) throw Error("forward: non-finite input");
  const auto& layers = mlp.layers();
  if (cache) cache->layer_inputs.clear();
  Matrix h = x;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (cache) cache->layer_inputs.push_back(h);
    Matrix z = layers[l].weight * h;
    z.colwise() += layers[l].bias;
    if (l + 1 < layers.size()) {
      h = z.array().tanh().matrix();
    } else {
      h = std::move(z);
    }
  }
  if (cache) cache->output = h;
  return h;
}

Vector forward(const Mlp& mlp, const Vector& x) {
  Matrix y = forward(mlp, Matrix(x), nullptr);
  return y.col(0);
}

Gradients backward(const Mlp& mlp, const Cache& cache, const Matrix& dy) {
  const auto& layers = mlp.layers();
  if (cache.layer_inputs.size() != layers.size()) throw Error("backward: cache does not match network");
  if (dy.rows() != mlp.output_dim() || dy.cols() != cache.output.cols()) {
    throw Error("backward: output gradient shape mismatch");
  }
  Gradients g = Gradients::zeros_like(mlp);
  Matrix delta = dy;
  for (std::size_t l = layers.size(); l-- > 0;) {
    const Matrix& in = cache.layer_inputs[l];
    g.weight[l].noalias() = delta * in.transpose();
    g.bias[l] = delta.rowwise().sum();
    Matrix d_in = layers[l].weight.transpose() * delta;
    if (l > 0) {
      delta = d_in.array() * (1.0 - in.array().square());
    } else {
      g.input = std::move(d_in);
    }
  }
  return g;
}

void orthogonal_init(Mlp& mlp, std::span<const double> gains, std::uint64_t seed) {
  auto& layers = mlp.layers();
  if (gains.size() != layers.size()) throw Error("orthogonal_init: one gain per layer required");
  std::mt19937_64 rng(derive_seed(seed, hash_name("orthogonal_init")));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& w = layers[l].weight;
    const Eigen::Index rows = w.rows(), cols = w.cols();
    const Eigen::Index tall = std::max(rows, cols), wide = std::min(rows, cols);
    Matrix a(tall, wide);
    for (Eigen::Index j = 0; j < wide; ++j)
      for (Eigen::Index i = 0; i < tall; ++i) a(i, j) = normal(rng);
    Eigen::HouseholderQR<Matrix> qr(a);
    Matrix q = qr.householderQ() * Matrix::Identity(tall, wide);
    // Sign correction makes the draw uniform over orthogonal matrices.
    Matrix r = qr.matrixQR().topLeftCorner(wide, wide).triangularView<Eigen::Upper>();
    for (Eigen::Index j = 0; j < wide; ++j)
      if (r(j, j) < 0) q.col(j) *= -1.0;
    w = rows >= cols ? q : Matrix(q.transpose());
    w *= gains[l];
    layers[l].bias.setZero();
  }
}

std::vector<double> default_gains(const Mlp& mlp, double output_gain) {
  std::vector<double> g(mlp.layers().size(), std::sqrt(2.0));
  g.back() = output_gain;
  return g;
}

Vector softmax(const Vector& logits) {
  Vector e = (logits.array() - logits.maxCoeff()).exp();
  return e / e.sum();
}

double clip_grad_norm(Gradients& grads, double max_norm) {
  double norm = std::sqrt(grads.squared_norm());
  if (max_norm > 0.0 && norm > max_norm) grads.scale(max_norm / (norm + 1e-12));
  return norm;
}

AdamState::AdamState(const Mlp& mlp, AdamConfig cfg) : config(cfg), learning_rate(cfg.learning_rate) {
  for (const auto& l : mlp.layers()) {
    m_weight.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
    v_weight.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
    m_bias.push_back(Vector::Zero(l.bias.size()));
    v_bias.push_back(Vector::Zero(l.bias.size()));
  }
}

void AdamState::set_completed_episodes(int completed) {
  const int decays = config.decay_every > 0 ? completed / config.decay_every : 0;
  learning_rate = config.learning_rate * std::pow(config.decay_factor, decays);
}

bool operator==(const AdamState& a, const AdamState& b) {
  return a.config.learning_rate == b.config.learning_rate && a.config.beta1 == b.config.beta1 &&
         a.config.beta2 == b.config.beta2 && a.config.epsilon == b.config.epsilon &&
         a.config.decay_factor == b.config.decay_factor && a.config.decay_every == b.config.decay_every &&
         a.learning_rate == b.learning_rate && a.step == b.step && a.m_weight == b.m_weight &&
         a.v_weight == b.v_weight && a.m_bias == b.m_bias && a.v_bias == b.v_bias && a.skipped == b.skipped;
}

bool adam_step(Mlp& mlp, const Gradients& grads, AdamState& st) {
  auto& layers = mlp.layers();
  if (grads.weight.size() != layers.size() || st.m_weight.size() != layers.size()) {
    throw Error("adam_step: shape mismatch");
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (grads.weight[l].rows() != layers[l].weight.rows() || grads.weight[l].cols() != layers[l].weight.cols() ||
        grads.bias[l].size() != layers[l].bias.size()) {
      throw Error("adam_step: shape mismatch");
    }
  }
  if (!grads.all_finite()) {
    st.skipped += 1;
    return false;
  }
  st.step += 1;
  const auto& c = st.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(st.step));
  const double step_size = st.learning_rate / bc1;
  const double sqrt_bc2 = std::sqrt(bc2);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    st.m_weight[l] = c.beta1 * st.m_weight[l] + (1.0 - c.beta1) * grads.weight[l];
    st.v_weight[l] = c.beta2 * st.v_weight[l] + (1.0 - c.beta2) * grads.weight[l].cwiseAbs2();
    layers[l].weight.array() -=
        step_size * st.m_weight[l].array() / (st.v_weight[l].array().sqrt() / sqrt_bc2 + c.epsilon);
    st.m_bias[l] = c.beta1 * st.m_bias[l] + (1.0 - c.beta1) * grads.bias[l];
    st.v_bias[l] = c.beta2 * st.v_bias[l] + (1.0 - c.beta2) * grads.bias[l].cwiseAbs2();
    layers[l].bias.array() -=
        step_size * st.m_bias[l].array() / (st.v_bias[l].array().sqrt() / sqrt_bc2 + c.epsilon);
  }
  return true;
}

// -------------------------------------------------------------------------------------------
// Serialization

void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw Error("checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void write_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  static_assert(sizeof(bits) == sizeof(v));
  std::memcpy(&bits, &v, sizeof(v));
  write_u64(out, bits);
}

double read_f64(std::istream& in) {
  std::uint64_t bits = read_u64(in);
  double v;
  std::memcpy(&v, &bits, sizeof(v));
  return v;
}

void write_matrix(std::ostream& out, const Matrix& m) {
  write_u64(out, static_cast<std::uint64_t>(m.rows()));
  write_u64(out, static_cast<std::uint64_t>(m.cols()));
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) write_f64(out, m(i, j));
}

Matrix read_matrix(std::istream& in) {
  auto rows = static_cast<Eigen::Index>(read_u64(in));
  auto cols = static_cast<Eigen::Index>(read_u64(in));
  if (rows < 0 || cols < 0 || rows > (1 << 20) || cols > (1 << 20)) throw Error("checkpoint: bad matrix shape");
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = read_f64(in);
  return m;
}

void write_mlp(std::ostream& out, const Mlp& mlp) {
  write_u64(out, mlp.sizes().size());
  for (int s : mlp.sizes()) write_u64(out, static_cast<std::uint64_t>(s));
  for (const auto& l : mlp.layers()) {
    write_matrix(out, l.weight);
    write_matrix(out, l.bias);
  }
}

Mlp read_mlp(std::istream& in) {
  auto n = read_u64(in);
  if (n < 2 || n > 64) throw Error("checkpoint: bad layer count");
  std::vector<int> sizes(n);
  for (auto& s : sizes) s = static_cast<int>(read_u64(in));
  Mlp mlp(sizes);
  for (auto& l : mlp.layers()) {
    Matrix w = read_matrix(in);
    Matrix b = read_matrix(in);
    if (w.rows() != l.weight.rows() || w.cols() != l.weight.cols() || b.rows() != l.bias.size() || b.cols() != 1) {
      throw Error("checkpoint: layer shape mismatch");
    }
    l.weight = w;
    l.bias = b.col(0);
  }
  return mlp;
}

void write_adam(std::ostream& out, const AdamState& s) {
  for (double v : {s.config.learning_rate, s.config.beta1, s.config.beta2, s.config.epsilon, s.config.decay_factor})
    write_f64(out, v);
  write_u64(out, static_cast<std::uint64_t>(s.config.decay_every));
  write_f64(out, s.learning_rate);
  write_u64(out, static_cast<std::uint64_t>(s.step));
  write_u64(out, static_cast<std::uint64_t>(s.skipped));
  write_u64(out, s.m_weight.size());
  for (std::size_t l = 0; l < s.m_weight.size(); ++l) {
    write_matrix(out, s.m_weight[l]);
    write_matrix(out, s.v_weight[l]);
    write_matrix(out, s.m_bias[l]);
    write_matrix(out, s.v_bias[l]);
  }
}

AdamState read_adam(std::istream& in) {
  AdamState s;
  s.config.learning_rate = read_f64(in);
  s.config.beta1 = read_f64(in);
  s.config.beta2 = read_f64(in);
  s.config.epsilon = read_f64(in);
  s.config.decay_factor = read_f64(in);
  s.config.decay_every = static_cast<int>(read_u64(in));
  s.learning_rate = read_f64(in);
  s.step = static_cast<std::int64_t>(read_u64(in));
  s.skipped = static_cast<std::int64_t>(read_u64(in));
  auto n = read_u64(in);
  if (n > 64) throw Error("checkpoint: bad Adam layer count");
  for (std::size_t l = 0; l < n; ++l) {
    s.m_weight.push_back(read_matrix(in));
    s.v_weight.push_back(read_matrix(in));
    s.m_bias.push_back(read_matrix(in).col(0));
    s.v_bias.push_back(read_matrix(in).col(0));
  }
  return s;
}

}  // namespace aope::nn
