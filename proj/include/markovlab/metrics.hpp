#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "markovlab/kernels.hpp"
#include "markovlab/transforms.hpp"

namespace markovlab {

/// Half the L1 distance between two distributions over the same vocabulary.
double tv_distance(const Distribution& p, const Distribution& q);

/// Relabels outcomes: result[perm[i]] = d[i]. `perm` must be a bijection on ids.
Distribution pushforward(const Distribution& d, std::span<const TokenId> perm);

/// Lifts an entity bijection to vocabulary ids; non-entity tokens are fixed.
std::vector<TokenId> lift_entity_action(const SyntheticLanguage& lang, const std::vector<int>& entity_action);

struct EpsilonStats {
  double max = 0.0;
  double mean = 0.0;
  std::size_t pairs = 0;
};

struct TransformationInvariance {
  double epsilon_max = 0.0;
  double epsilon_mean = 0.0;
  std::size_t num_pairs = 0;
  std::map<std::string, EpsilonStats> by_kind;
};

/// One evaluation pair: a context and a transformation to apply to it.
struct ContextTransform {
  TokenSeq context;
  Transformation transform;
};

/// For each pair: TV(pushforward(action(t), kappa(.|x)), kappa(.|t(x))).
/// Reports the max and the mean; every sum is taken over sorted values so the
/// result does not depend on the order of the inputs.
TransformationInvariance transformation_invariance(const Kernel& kernel, const SyntheticLanguage& lang,
                                                   const std::vector<ContextTransform>& pairs);

/// Every context paired with every transformation.
TransformationInvariance transformation_invariance(const Kernel& kernel, const SyntheticLanguage& lang,
                                                   const std::vector<TokenSeq>& contexts,
                                                   const std::vector<Transformation>& transforms);

struct RuleStats {
  double worst = 0.0;  // 1 - min mass on the required token
  double mean = 0.0;   // 1 - mean mass
  double greedy_accuracy = 0.0;
  std::size_t count = 0;
};

struct InferentialInvariance {
  double delta_worst = 0.0;
  double delta_mean = 0.0;
  double greedy_accuracy = 0.0;
  std::size_t num_instances = 0;
  std::map<std::string, RuleStats> per_rule;
};

InferentialInvariance inferential_invariance(const Kernel& kernel, const std::vector<InferenceInstance>& instances);

struct InvarianceReport {
  TransformationInvariance epsilon;
  InferentialInvariance delta;              // raw instances
  InferentialInvariance delta_transformed;  // every transformed instance
  std::size_t num_contexts = 0;
  std::size_t num_transforms = 0;
  std::string kernel_type;
  std::size_t kernel_order = 0;
};

/// Transformation invariance over all (instance, transform) pairs plus
/// inferential invariance on the raw and on the transformed instances. The
/// transformed instance of (x, y) under t is (t(x), action(t)(y)).
/// transforms[i] lists the transformations for instances[i]; each must
/// preserve the instance's source sequence.
InvarianceReport combined_report(const Kernel& kernel, const SyntheticLanguage& lang,
                                 const std::vector<InferenceInstance>& instances,
                                 const std::vector<std::vector<Transformation>>& transforms);

/// Same transformation list for every instance.
InvarianceReport combined_report(const Kernel& kernel, const SyntheticLanguage& lang,
                                 const std::vector<InferenceInstance>& instances,
                                 const std::vector<Transformation>& transforms);

nlohmann::json report_to_json(const InvarianceReport& report);

/// Throws Error naming the first missing or out-of-range field.
void validate_report_json(const nlohmann::json& report);

}  // namespace markovlab
