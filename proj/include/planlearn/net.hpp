#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "planlearn/core.hpp"

namespace planlearn {

enum class Act { Identity, Relu, Sigmoid };

struct LayerSpec {
  int in = 0;
  int out = 0;
  Act act = Act::Identity;
};

std::vector<double> softmax(std::span<const double> logits);
double entropy(std::span<const double> probs);

// Dense feed-forward stack with analytic gradients. Parameters live in one
// contiguous vector (per layer: row-major weights, then biases) so the
// optimizer and the checkpoint format can treat them uniformly.
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<LayerSpec> spec);  // zero-initialized

  void init_random(std::uint64_t seed);  // He-scaled normal weights, zero biases

  const std::vector<LayerSpec>& spec() const { return spec_; }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }
  int input_size() const { return spec_.empty() ? 0 : spec_.front().in; }
  int output_size() const { return spec_.empty() ? 0 : spec_.back().out; }

  std::vector<double> forward(std::span<const double> x) const;

  struct Cache {
    std::vector<double> input;
    std::vector<std::vector<double>> pre;   // pre-activation per layer
    std::vector<std::vector<double>> post;  // post-activation per layer
  };
  std::vector<double> forward(std::span<const double> x, Cache& cache) const;

  // Accumulates dL/dparams into grad (same layout as params) and returns
  // dL/dinput. grad must be zero-initialized by the caller on first use.
  std::vector<double> backward(const Cache& cache, std::span<const double> dy,
                               std::vector<double>& grad) const;

 private:
  std::vector<LayerSpec> spec_;
  std::vector<double> params_;
  std::vector<std::size_t> offsets_;
};

// Policy network: trunk + two-layer head producing |A| logits. Softmax is
// applied at the point of use.
Mlp make_policy_net(int input, int actions, std::span<const int> trunk);

// Q network: same shape as the policy network, linear outputs.
Mlp make_q_net(int input, int actions, std::span<const int> trunk);

// Value network: shared trunk, a sigmoid mask head and a linear value head,
// two outputs each (safe factor, collision factor).
class ValueNet {
 public:
  ValueNet() = default;
  ValueNet(int input, std::span<const int> trunk);

  void init_random(std::uint64_t seed);

  struct Output {
    double mask_safe = 0.5;
    double mask_col = 0.5;
    double v_safe = 0.0;
    double v_col = 0.0;
  };
  Output forward(std::span<const double> x) const;

  Mlp& trunk() { return trunk_; }
  Mlp& mask_head() { return mask_head_; }
  Mlp& value_head() { return value_head_; }
  const Mlp& trunk() const { return trunk_; }
  const Mlp& mask_head() const { return mask_head_; }
  const Mlp& value_head() const { return value_head_; }
  int input_size() const { return trunk_.input_size(); }

  struct Grad {
    std::vector<double> trunk;
    std::vector<double> mask;
    std::vector<double> value;
  };
  Grad zero_grad() const;

 private:
  Mlp trunk_;
  Mlp mask_head_;
  Mlp value_head_;
};

// ---------------------------------------------------------------------------
// Losses. Each returns the scalar loss and, when a gradient buffer is given,
// accumulates analytic dL/dparams into it. All averages are over the batch.

// Cross-entropy to action labels minus alpha-weighted policy entropy.
double ssl_policy_loss(const Mlp& policy, std::span<const FeatureVector> xs,
                       std::span<const int> labels, double alpha,
                       std::vector<double>* grad);

// Mask MSE against the nonzero-value indicators, and indicator-gated value
// regression. Reported separately; callers typically sum them.
struct ValueLoss {
  double mask = 0.0;
  double value = 0.0;
  double total() const { return mask + value; }
};
ValueLoss ssl_value_loss(const ValueNet& net, std::span<const FeatureVector> xs,
                         std::span<const double> v_safe_labels,
                         std::span<const double> v_col_labels, ValueNet::Grad* grad);

// Discrete-action soft policy objective: E_x[ pi(x)^T (alpha log pi(x) - q(x)) ]
// with the q values held constant. q_values is row-major |batch| x |A|.
double sac_policy_loss(const Mlp& policy, std::span<const FeatureVector> xs,
                       std::span<const double> q_values, double alpha,
                       std::vector<double>* grad);

// MSE of Q(x)[a] against fixed targets.
double sac_q_loss(const Mlp& q, std::span<const FeatureVector> xs,
                  std::span<const int> actions, std::span<const double> targets,
                  std::vector<double>* grad);

// Soft Bellman target: r + gamma * (1 - done) * sum_a' pi(a'|x') *
// (min(q1t, q2t)(x', a') - alpha log pi(a'|x')).
double soft_q_target(const Mlp& policy, const Mlp& q1_target, const Mlp& q2_target,
                     double reward, const FeatureVector& x_next, bool done,
                     double alpha, double gamma);

// ---------------------------------------------------------------------------
// Optimization

struct AdamState {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<double> m;
  std::vector<double> v;
};

// One Adam update. Returns false (and leaves params untouched) when the
// gradient contains non-finite entries.
bool adam_step(std::vector<double>& params, std::span<const double> grad, AdamState& state);

// Polyak-averaged target update: target <- (1 - rate) * target + rate * online.
void polyak_update(std::vector<double>& target, std::span<const double> online, double rate);

// Online tuning of the entropy-regularization weight. alpha grows when the
// measured entropy is below target, shrinks when above; positivity is kept
// by updating log(alpha).
struct EntropyController {
  double log_alpha = 0.0;
  double target_entropy = 0.0;
  double lr = 1e-3;

  double alpha() const;
  void update(double batch_mean_entropy);
};

// ---------------------------------------------------------------------------
// Checkpoints: versioned structured text, '%.17g' floats (round-trip exact).

struct Checkpoint {
  std::vector<std::pair<std::string, Mlp>> nets;
  std::vector<std::pair<std::string, double>> scalars;

  const Mlp* find_net(const std::string& name) const;
  double scalar_or(const std::string& name, double fallback) const;
};

void save_checkpoint(std::ostream& os, const Checkpoint& ckpt);
Checkpoint load_checkpoint(std::istream& is);
void save_checkpoint_file(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint_file(const std::string& path);

Checkpoint pack_value_net(const ValueNet& net, const std::string& prefix);
ValueNet unpack_value_net(const Checkpoint& ckpt, const std::string& prefix);

}  // namespace planlearn
