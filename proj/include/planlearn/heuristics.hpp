#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "planlearn/core.hpp"
#include "planlearn/net.hpp"

namespace planlearn {

// Raw value-head outputs: two masks in [0,1] and two unconstrained factor
// values, on the normalized training scale.
struct ValueHeads {
  double mask_safe = 0.0;
  double mask_col = 0.0;
  double v_safe = 0.0;
  double v_col = 0.0;
};

struct FactoredValuePrior {
  double safe = 0.0;
  double collision = 0.0;
  double total() const { return safe + collision; }
};

// Recovers a factored value from mask/value heads as the expectation
// m_s * v_s + m_c * v_c (the masks estimate nonzero-factor probabilities).
FactoredValuePrior recover_value(double mask_safe, double mask_col, double v_safe,
                                 double v_col);

// The planning/learning boundary: action priors and leaf-value priors.
// Providers are immutable once handed to a search; learners publish fresh
// snapshots between planning steps.
class HeuristicProvider {
 public:
  virtual ~HeuristicProvider() = default;

  // Distribution over actions; nonnegative, sums to 1.
  virtual std::vector<double> policy_prior(const FeatureVector& x) const = 0;

  // Factored leaf-value estimate, already rescaled to reward units.
  // nullopt is the cold-start sentinel: the search substitutes the midpoint
  // of the node's initial bounds.
  virtual std::optional<FactoredValuePrior> value_prior(const FeatureVector& x) const = 0;
};

// Cold-start provider: uniform action prior, sentinel values.
std::shared_ptr<const HeuristicProvider> uniform_provider(int action_count);

// Fixed arbitrary action prior (uniform-value sentinel). Used by tests and
// by the oracle-equivalence sweeps.
std::shared_ptr<const HeuristicProvider> fixed_prior_provider(std::vector<double> prior);

// Wraps network snapshots. Non-finite network outputs fall back to the
// uniform/sentinel behavior and bump a counter instead of poisoning the
// search.
class NetworkProvider : public HeuristicProvider {
 public:
  NetworkProvider(Mlp policy, ValueNet value, double value_scale);

  std::vector<double> policy_prior(const FeatureVector& x) const override;
  std::optional<FactoredValuePrior> value_prior(const FeatureVector& x) const override;

  long nonfinite_fallbacks() const { return fallbacks_.load(); }

 private:
  Mlp policy_;
  ValueNet value_;
  double value_scale_;
  int actions_;
  mutable std::atomic<long> fallbacks_{0};
};

std::shared_ptr<const NetworkProvider> network_provider(Mlp policy, ValueNet value,
                                                        double value_scale);

}  // namespace planlearn
