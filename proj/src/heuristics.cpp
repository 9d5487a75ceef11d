#include "planlearn/heuristics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace planlearn {

FactoredValuePrior recover_value(double mask_safe, double mask_col, double v_safe,
                                 double v_col) {
  // Expected-value combination: the mask estimates the probability of a
  // nonzero factor, so m * v keeps the mass of rare catastrophic factors
  // that a hard 0.5 threshold would zero out.
  FactoredValuePrior v;
  v.safe = mask_safe * v_safe;
  v.collision = mask_col * v_col;
  return v;
}

namespace {

class UniformProvider : public HeuristicProvider {
 public:
  explicit UniformProvider(std::vector<double> prior) : prior_(std::move(prior)) {}

  std::vector<double> policy_prior(const FeatureVector&) const override { return prior_; }
  std::optional<FactoredValuePrior> value_prior(const FeatureVector&) const override {
    return std::nullopt;
  }

 private:
  std::vector<double> prior_;
};

}  // namespace

std::shared_ptr<const HeuristicProvider> uniform_provider(int action_count) {
  if (action_count < 1) throw std::invalid_argument("action_count must be >= 1");
  return std::make_shared<UniformProvider>(
      std::vector<double>(action_count, 1.0 / action_count));
}

std::shared_ptr<const HeuristicProvider> fixed_prior_provider(std::vector<double> prior) {
  double sum = 0.0;
  for (double p : prior) {
    if (p < 0.0) throw std::invalid_argument("prior entries must be nonnegative");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("prior must sum to 1");
  return std::make_shared<UniformProvider>(std::move(prior));
}

NetworkProvider::NetworkProvider(Mlp policy, ValueNet value, double value_scale)
    : policy_(std::move(policy)),
      value_(std::move(value)),
      value_scale_(value_scale),
      actions_(policy_.output_size()) {}

std::vector<double> NetworkProvider::policy_prior(const FeatureVector& x) const {
  const std::vector<double> p = softmax(policy_.forward(x.values));
  for (double v : p) {
    if (!std::isfinite(v)) {
      fallbacks_.fetch_add(1);
      return std::vector<double>(actions_, 1.0 / actions_);
    }
  }
  return p;
}

std::optional<FactoredValuePrior> NetworkProvider::value_prior(const FeatureVector& x) const {
  const ValueNet::Output out = value_.forward(x.values);
  if (!std::isfinite(out.mask_safe) || !std::isfinite(out.mask_col) ||
      !std::isfinite(out.v_safe) || !std::isfinite(out.v_col)) {
    fallbacks_.fetch_add(1);
    return std::nullopt;
  }
  // The nonzero factor values are penalties; a head drifting positive is
  // regression noise, not evidence, and positive factors poison the value
  // labels of later training generations.
  FactoredValuePrior v = recover_value(out.mask_safe, out.mask_col,
                                       std::min(out.v_safe, 0.0), std::min(out.v_col, 0.0));
  v.safe *= value_scale_;
  v.collision *= value_scale_;
  return v;
}

std::shared_ptr<const NetworkProvider> network_provider(Mlp policy, ValueNet value,
                                                        double value_scale) {
  return std::make_shared<NetworkProvider>(std::move(policy), std::move(value), value_scale);
}

}  // namespace planlearn
