#include "planlearn/net.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "planlearn/rng.hpp"

namespace planlearn {

std::vector<double> softmax(std::span<const double> logits) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double z : logits) hi = std::max(hi, z);
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - hi);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

double entropy(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

namespace {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double activate(double z, Act a) {
  switch (a) {
    case Act::Identity: return z;
    case Act::Relu: return z > 0.0 ? z : 0.0;
    case Act::Sigmoid: return sigmoid(z);
  }
  return z;
}

double activate_grad(double pre, double post, Act a) {
  switch (a) {
    case Act::Identity: return 1.0;
    case Act::Relu: return pre > 0.0 ? 1.0 : 0.0;
    case Act::Sigmoid: return post * (1.0 - post);
  }
  return 1.0;
}

}  // namespace

Mlp::Mlp(std::vector<LayerSpec> spec) : spec_(std::move(spec)) {
  std::size_t total = 0;
  offsets_.reserve(spec_.size());
  for (const LayerSpec& l : spec_) {
    offsets_.push_back(total);
    total += static_cast<std::size_t>(l.in) * l.out + l.out;
  }
  params_.assign(total, 0.0);
}

void Mlp::init_random(std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t li = 0; li < spec_.size(); ++li) {
    const LayerSpec& l = spec_[li];
    const double scale = std::sqrt(2.0 / l.in);
    double* w = params_.data() + offsets_[li];
    for (int i = 0; i < l.out * l.in; ++i) w[i] = scale * rng.next_gaussian();
    // biases stay zero
  }
}

std::vector<double> Mlp::forward(std::span<const double> x) const {
  std::vector<double> cur(x.begin(), x.end());
  for (std::size_t li = 0; li < spec_.size(); ++li) {
    const LayerSpec& l = spec_[li];
    const double* w = params_.data() + offsets_[li];
    const double* b = w + static_cast<std::size_t>(l.in) * l.out;
    std::vector<double> next(l.out);
    for (int o = 0; o < l.out; ++o) {
      double z = b[o];
      const double* row = w + static_cast<std::size_t>(o) * l.in;
      for (int i = 0; i < l.in; ++i) z += row[i] * cur[i];
      next[o] = activate(z, l.act);
    }
    cur = std::move(next);
  }
  return cur;
}

std::vector<double> Mlp::forward(std::span<const double> x, Cache& cache) const {
  cache.input.assign(x.begin(), x.end());
  cache.pre.assign(spec_.size(), {});
  cache.post.assign(spec_.size(), {});
  std::vector<double> cur(x.begin(), x.end());
  for (std::size_t li = 0; li < spec_.size(); ++li) {
    const LayerSpec& l = spec_[li];
    const double* w = params_.data() + offsets_[li];
    const double* b = w + static_cast<std::size_t>(l.in) * l.out;
    cache.pre[li].resize(l.out);
    cache.post[li].resize(l.out);
    for (int o = 0; o < l.out; ++o) {
      double z = b[o];
      const double* row = w + static_cast<std::size_t>(o) * l.in;
      for (int i = 0; i < l.in; ++i) z += row[i] * cur[i];
      cache.pre[li][o] = z;
      cache.post[li][o] = activate(z, l.act);
    }
    cur = cache.post[li];
  }
  return cur;
}

std::vector<double> Mlp::backward(const Cache& cache, std::span<const double> dy,
                                  std::vector<double>& grad) const {
  if (grad.size() != params_.size()) grad.assign(params_.size(), 0.0);
  std::vector<double> delta(dy.begin(), dy.end());
  for (int li = static_cast<int>(spec_.size()) - 1; li >= 0; --li) {
    const LayerSpec& l = spec_[li];
    const double* w = params_.data() + offsets_[li];
    double* dw = grad.data() + offsets_[li];
    double* db = dw + static_cast<std::size_t>(l.in) * l.out;
    const std::vector<double>& below =
        li == 0 ? cache.input : cache.post[static_cast<std::size_t>(li) - 1];
    std::vector<double> dx(l.in, 0.0);
    for (int o = 0; o < l.out; ++o) {
      const double dz = delta[o] * activate_grad(cache.pre[li][o], cache.post[li][o], l.act);
      db[o] += dz;
      double* dwrow = dw + static_cast<std::size_t>(o) * l.in;
      const double* wrow = w + static_cast<std::size_t>(o) * l.in;
      for (int i = 0; i < l.in; ++i) {
        dwrow[i] += dz * below[i];
        dx[i] += dz * wrow[i];
      }
    }
    delta = std::move(dx);
  }
  return delta;
}

Mlp make_policy_net(int input, int actions, std::span<const int> trunk) {
  std::vector<LayerSpec> spec;
  int cur = input;
  for (int width : trunk) {
    spec.push_back({cur, width, Act::Relu});
    cur = width;
  }
  const int mid = std::max(8, cur / 2);
  spec.push_back({cur, mid, Act::Relu});
  spec.push_back({mid, actions, Act::Identity});
  return Mlp(std::move(spec));
}

Mlp make_q_net(int input, int actions, std::span<const int> trunk) {
  return make_policy_net(input, actions, trunk);
}

ValueNet::ValueNet(int input, std::span<const int> trunk) {
  std::vector<LayerSpec> tspec;
  int cur = input;
  for (int width : trunk) {
    tspec.push_back({cur, width, Act::Relu});
    cur = width;
  }
  trunk_ = Mlp(std::move(tspec));
  mask_head_ = Mlp({{cur, 2, Act::Sigmoid}});
  value_head_ = Mlp({{cur, 2, Act::Identity}});
}

void ValueNet::init_random(std::uint64_t seed) {
  trunk_.init_random(mix64(seed, 1));
  mask_head_.init_random(mix64(seed, 2));
  value_head_.init_random(mix64(seed, 3));
}

ValueNet::Output ValueNet::forward(std::span<const double> x) const {
  const std::vector<double> t = trunk_.forward(x);
  const std::vector<double> m = mask_head_.forward(t);
  const std::vector<double> v = value_head_.forward(t);
  return {m[0], m[1], v[0], v[1]};
}

ValueNet::Grad ValueNet::zero_grad() const {
  Grad g;
  g.trunk.assign(trunk_.params().size(), 0.0);
  g.mask.assign(mask_head_.params().size(), 0.0);
  g.value.assign(value_head_.params().size(), 0.0);
  return g;
}

// ---------------------------------------------------------------------------

double ssl_policy_loss(const Mlp& policy, std::span<const FeatureVector> xs,
                       std::span<const int> labels, double alpha,
                       std::vector<double>* grad) {
  if (xs.empty()) throw std::invalid_argument("empty batch");
  const double inv_n = 1.0 / static_cast<double>(xs.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    Mlp::Cache cache;
    const std::vector<double> logits = policy.forward(xs[i].values, cache);
    const std::vector<double> p = softmax(logits);
    const double h = entropy(p);
    const double log_pa = std::log(std::max(p[labels[i]], 1e-300));
    loss += inv_n * (-log_pa - alpha * h);
    if (grad != nullptr) {
      std::vector<double> dz(p.size());
      for (std::size_t j = 0; j < p.size(); ++j) {
        const double logp = std::log(std::max(p[j], 1e-300));
        dz[j] = inv_n * (p[j] - (static_cast<int>(j) == labels[i] ? 1.0 : 0.0) +
                         alpha * p[j] * (logp + h));
      }
      policy.backward(cache, dz, *grad);
    }
  }
  return loss;
}

ValueLoss ssl_value_loss(const ValueNet& net, std::span<const FeatureVector> xs,
                         std::span<const double> v_safe_labels,
                         std::span<const double> v_col_labels, ValueNet::Grad* grad) {
  if (xs.empty()) throw std::invalid_argument("empty batch");
  const double inv_n = 1.0 / static_cast<double>(xs.size());
  ValueLoss loss;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    Mlp::Cache tc, mc, vc;
    const std::vector<double> t = net.trunk().forward(xs[i].values, tc);
    const std::vector<double> m = net.mask_head().forward(t, mc);
    const std::vector<double> v = net.value_head().forward(t, vc);
    const double ind_s = v_safe_labels[i] != 0.0 ? 1.0 : 0.0;
    const double ind_c = v_col_labels[i] != 0.0 ? 1.0 : 0.0;
    loss.mask += inv_n * ((m[0] - ind_s) * (m[0] - ind_s) + (m[1] - ind_c) * (m[1] - ind_c));
    const double es = ind_s * v[0] - v_safe_labels[i];
    const double ec = ind_c * v[1] - v_col_labels[i];
    loss.value += inv_n * (es * es + ec * ec);
    if (grad != nullptr) {
      const std::vector<double> dm = {inv_n * 2.0 * (m[0] - ind_s), inv_n * 2.0 * (m[1] - ind_c)};
      const std::vector<double> dv = {inv_n * 2.0 * es * ind_s, inv_n * 2.0 * ec * ind_c};
      std::vector<double> dt = net.mask_head().backward(mc, dm, grad->mask);
      const std::vector<double> dt2 = net.value_head().backward(vc, dv, grad->value);
      for (std::size_t k = 0; k < dt.size(); ++k) dt[k] += dt2[k];
      net.trunk().backward(tc, dt, grad->trunk);
    }
  }
  return loss;
}

double sac_policy_loss(const Mlp& policy, std::span<const FeatureVector> xs,
                       std::span<const double> q_values, double alpha,
                       std::vector<double>* grad) {
  if (xs.empty()) throw std::invalid_argument("empty batch");
  const int actions = policy.output_size();
  const double inv_n = 1.0 / static_cast<double>(xs.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    Mlp::Cache cache;
    const std::vector<double> logits = policy.forward(xs[i].values, cache);
    const std::vector<double> p = softmax(logits);
    const double* q = q_values.data() + i * actions;
    std::vector<double> f(actions);
    double expectation = 0.0;
    for (int a = 0; a < actions; ++a) {
      f[a] = alpha * std::log(std::max(p[a], 1e-300)) - q[a];
      expectation += p[a] * f[a];
    }
    loss += inv_n * expectation;
    if (grad != nullptr) {
      std::vector<double> dz(actions);
      for (int a = 0; a < actions; ++a) dz[a] = inv_n * p[a] * (f[a] - expectation);
      policy.backward(cache, dz, *grad);
    }
  }
  return loss;
}

double sac_q_loss(const Mlp& q, std::span<const FeatureVector> xs,
                  std::span<const int> actions, std::span<const double> targets,
                  std::vector<double>* grad) {
  if (xs.empty()) throw std::invalid_argument("empty batch");
  const double inv_n = 1.0 / static_cast<double>(xs.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    Mlp::Cache cache;
    const std::vector<double> out = q.forward(xs[i].values, cache);
    const double err = out[actions[i]] - targets[i];
    loss += inv_n * err * err;
    if (grad != nullptr) {
      std::vector<double> dy(out.size(), 0.0);
      dy[actions[i]] = inv_n * 2.0 * err;
      q.backward(cache, dy, *grad);
    }
  }
  return loss;
}

double soft_q_target(const Mlp& policy, const Mlp& q1_target, const Mlp& q2_target,
                     double reward, const FeatureVector& x_next, bool done,
                     double alpha, double gamma) {
  if (done) return reward;
  const std::vector<double> p = softmax(policy.forward(x_next.values));
  const std::vector<double> q1 = q1_target.forward(x_next.values);
  const std::vector<double> q2 = q2_target.forward(x_next.values);
  double v = 0.0;
  for (std::size_t a = 0; a < p.size(); ++a) {
    v += p[a] * (std::min(q1[a], q2[a]) - alpha * std::log(std::max(p[a], 1e-300)));
  }
  return reward + gamma * v;
}

// ---------------------------------------------------------------------------

bool adam_step(std::vector<double>& params, std::span<const double> grad, AdamState& state) {
  for (double g : grad) {
    if (!std::isfinite(g)) return false;
  }
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, state.step);
  const double c2 = 1.0 - std::pow(state.beta2, state.step);
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grad[i];
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
    params[i] -= state.lr * (state.m[i] / c1) / (std::sqrt(state.v[i] / c2) + state.eps);
  }
  return true;
}

void polyak_update(std::vector<double>& target, std::span<const double> online, double rate) {
  for (std::size_t i = 0; i < target.size(); ++i) {
    target[i] = (1.0 - rate) * target[i] + rate * online[i];
  }
}

double EntropyController::alpha() const { return std::exp(log_alpha); }

void EntropyController::update(double batch_mean_entropy) {
  log_alpha += lr * (target_entropy - batch_mean_entropy);
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

const char* act_name(Act a) {
  switch (a) {
    case Act::Identity: return "identity";
    case Act::Relu: return "relu";
    case Act::Sigmoid: return "sigmoid";
  }
  return "identity";
}

Act act_from(const std::string& s) {
  if (s == "relu") return Act::Relu;
  if (s == "sigmoid") return Act::Sigmoid;
  if (s == "identity") return Act::Identity;
  throw std::runtime_error("checkpoint: unknown activation " + s);
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

const Mlp* Checkpoint::find_net(const std::string& name) const {
  for (const auto& [n, net] : nets) {
    if (n == name) return &net;
  }
  return nullptr;
}

double Checkpoint::scalar_or(const std::string& name, double fallback) const {
  for (const auto& [n, v] : scalars) {
    if (n == name) return v;
  }
  return fallback;
}

void save_checkpoint(std::ostream& os, const Checkpoint& ckpt) {
  os << "planlearn-ckpt 1\n";
  for (const auto& [name, value] : ckpt.scalars) {
    os << "scalar " << name << " " << fmt_double(value) << "\n";
  }
  for (const auto& [name, net] : ckpt.nets) {
    os << "net " << name << " " << net.spec().size() << "\n";
    for (const LayerSpec& l : net.spec()) {
      os << "layer " << l.in << " " << l.out << " " << act_name(l.act) << "\n";
    }
    os << "params";
    for (double p : net.params()) os << " " << fmt_double(p);
    os << "\n";
  }
}

Checkpoint load_checkpoint(std::istream& is) {
  std::string magic;
  int version = 0;
  is >> magic >> version;
  if (magic != "planlearn-ckpt" || version != 1) {
    throw std::runtime_error("not a planlearn checkpoint");
  }
  Checkpoint ckpt;
  std::string tok;
  while (is >> tok) {
    if (tok == "scalar") {
      std::string name;
      double v = 0.0;
      is >> name >> v;
      ckpt.scalars.emplace_back(name, v);
    } else if (tok == "net") {
      std::string name;
      std::size_t layers = 0;
      is >> name >> layers;
      std::vector<LayerSpec> spec(layers);
      for (std::size_t i = 0; i < layers; ++i) {
        std::string kw, act;
        is >> kw >> spec[i].in >> spec[i].out >> act;
        if (kw != "layer") throw std::runtime_error("checkpoint: expected layer");
        spec[i].act = act_from(act);
      }
      Mlp net(spec);
      std::string kw;
      is >> kw;
      if (kw != "params") throw std::runtime_error("checkpoint: expected params");
      for (double& p : net.params()) {
        if (!(is >> p)) throw std::runtime_error("checkpoint: truncated params");
      }
      ckpt.nets.emplace_back(name, std::move(net));
    } else {
      throw std::runtime_error("checkpoint: unexpected token " + tok);
    }
  }
  return ckpt;
}

void save_checkpoint_file(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  save_checkpoint(os, ckpt);
}

Checkpoint load_checkpoint_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path);
  return load_checkpoint(is);
}

Checkpoint pack_value_net(const ValueNet& net, const std::string& prefix) {
  Checkpoint c;
  c.nets.emplace_back(prefix + ".trunk", net.trunk());
  c.nets.emplace_back(prefix + ".mask", net.mask_head());
  c.nets.emplace_back(prefix + ".value", net.value_head());
  return c;
}

ValueNet unpack_value_net(const Checkpoint& ckpt, const std::string& prefix) {
  const Mlp* trunk = ckpt.find_net(prefix + ".trunk");
  const Mlp* mask = ckpt.find_net(prefix + ".mask");
  const Mlp* value = ckpt.find_net(prefix + ".value");
  if (trunk == nullptr || mask == nullptr || value == nullptr) {
    throw std::runtime_error("checkpoint: missing value net " + prefix);
  }
  ValueNet net;
  net.trunk() = *trunk;
  net.mask_head() = *mask;
  net.value_head() = *value;
  return net;
}

}  // namespace planlearn
