#ifndef AOPE_NN_HPP_
#define AOPE_NN_HPP_

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "aope/common.hpp"

namespace aope::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Fully connected network with tanh hidden layers and a linear output layer.
///
/// Batches are column-major: an input batch is an (in x batch) matrix.
class Mlp {
 public:
  struct Layer {
    Matrix weight;  // out x in
    Vector bias;
  };

  Mlp() = default;
  /// `sizes` = {in, hidden..., out}; parameters start at zero.
  explicit Mlp(std::vector<int> sizes);

  const std::vector<int>& sizes() const { return sizes_; }
  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::size_t num_params() const;
  bool all_finite() const;

  friend bool operator==(const Mlp& a, const Mlp& b);

 private:
  std::vector<int> sizes_;
  std::vector<Layer> layers_;
};

/// Intermediates needed by backward(): the input of every layer and the network output.
struct Cache {
  std::vector<Matrix> layer_inputs;
  Matrix output;
};

/// Gradients with the same shapes as the network parameters, plus the input gradient.
struct Gradients {
  std::vector<Matrix> weight;
  std::vector<Vector> bias;
  Matrix input;

  static Gradients zeros_like(const Mlp& mlp);
  Gradients& operator+=(const Gradients& other);
  double squared_norm() const;
  void scale(double factor);
  bool all_finite() const;
};

/// y = affine(tanh(affine(... tanh(affine(x))))). Throws on non-finite input.
Matrix forward(const Mlp& mlp, const Matrix& x, Cache* cache = nullptr);
Vector forward(const Mlp& mlp, const Vector& x);

/// Reverse-mode gradients of sum(dy .* y) with respect to all parameters and the input.
Gradients backward(const Mlp& mlp, const Cache& cache, const Matrix& dy);

/// Orthogonal initialization: W Wᵀ = gain² I for wide layers, Wᵀ W = gain² I for tall ones;
/// biases zero. `gains` has one entry per layer.
void orthogonal_init(Mlp& mlp, std::span<const double> gains, std::uint64_t seed);

/// Standard gains: sqrt(2) on hidden layers and `output_gain` on the last layer.
std::vector<double> default_gains(const Mlp& mlp, double output_gain);

/// Numerically stable softmax of one logit vector.
Vector softmax(const Vector& logits);

/// Rescales the gradients so their global L2 norm is at most `max_norm`; returns the norm
/// before clipping.
double clip_grad_norm(Gradients& grads, double max_norm);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double decay_factor = 0.8;  // multiplies the learning rate ...
  int decay_every = 250;      // ... once per this many completed episodes
};

struct AdamState {
  AdamConfig config;
  double learning_rate = 1e-3;  // current, after decay
  std::int64_t step = 0;
  std::vector<Matrix> m_weight, v_weight;
  std::vector<Vector> m_bias, v_bias;
  std::int64_t skipped = 0;  // updates rejected for non-finite gradients

  AdamState() = default;
  AdamState(const Mlp& mlp, AdamConfig config);

  /// Sets the learning rate to lr0 * decay_factor^floor(completed / decay_every).
  void set_completed_episodes(int completed);

  friend bool operator==(const AdamState& a, const AdamState& b);
};

/// One Adam update. Returns false (and leaves parameters and moments untouched, but
/// counts the step as skipped) when any gradient is non-finite.
bool adam_step(Mlp& mlp, const Gradients& grads, AdamState& state);

// Checkpoint primitives. The format is little-endian binary with explicit shapes.
void write_mlp(std::ostream& out, const Mlp& mlp);
Mlp read_mlp(std::istream& in);
void write_adam(std::ostream& out, const AdamState& state);
AdamState read_adam(std::istream& in);

void write_u64(std::ostream& out, std::uint64_t v);
std::uint64_t read_u64(std::istream& in);
void write_f64(std::ostream& out, double v);
double read_f64(std::istream& in);
void write_matrix(std::ostream& out, const Matrix& m);
Matrix read_matrix(std::istream& in);

}  // namespace aope::nn

#endif  // AOPE_NN_HPP_
