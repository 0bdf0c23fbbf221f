#include "markovlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace markovlab {

namespace {

// Sum of sorted values: identical bits for any permutation of the input.
double sorted_sum(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  double s = 0.0;
  for (double v : values) s += v;
  return s;
}

EpsilonStats summarize(const std::vector<double>& values) {
  EpsilonStats s;
  s.pairs = values.size();
  if (values.empty()) return s;
  s.max = *std::max_element(values.begin(), values.end());
  s.mean = std::min(s.max, sorted_sum(values) / static_cast<double>(values.size()));
  return s;
}

}  // namespace

double tv_distance(const Distribution& p, const Distribution& q) {
  if (p.size() != q.size()) throw Error("tv_distance: distributions over different vocabularies");
  std::vector<double> diffs(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    diffs[i] = std::abs(p.probs()[i] - q.probs()[i]);
  }
  return std::clamp(0.5 * sorted_sum(std::move(diffs)), 0.0, 1.0);
}

Distribution pushforward(const Distribution& d, std::span<const TokenId> perm) {
  if (perm.size() != d.size()) throw Error("pushforward: permutation size does not match distribution");
  std::vector<double> out(d.size(), 0.0);
  std::vector<bool> hit(d.size(), false);
  for (std::size_t i = 0; i < perm.size(); ++i) {
    auto j = static_cast<std::size_t>(perm[i]);
    if (perm[i] < 0 || j >= d.size() || hit[j]) throw Error("pushforward: not a bijection");
    hit[j] = true;
    out[j] = d.probs()[i];
  }
  return Distribution::from_probs(std::move(out), kNeuralTolerance);
}

std::vector<TokenId> lift_entity_action(const SyntheticLanguage& lang, const std::vector<int>& entity_action) {
  std::vector<TokenId> perm(lang.vocabulary().size());
  std::iota(perm.begin(), perm.end(), TokenId{0});
  for (std::size_t e = 0; e < entity_action.size(); ++e) {
    perm[static_cast<std::size_t>(lang.entity_token(static_cast<int>(e)))] = lang.entity_token(entity_action[e]);
  }
  return perm;
}

TransformationInvariance transformation_invariance(const Kernel& kernel, const SyntheticLanguage& lang,
                                                   const std::vector<ContextTransform>& pairs) {
  if (pairs.empty()) throw Error("transformation_invariance: no (context, transform) pairs");
  std::vector<double> all;
  std::map<std::string, std::vector<double>> by_kind;
  all.reserve(pairs.size());
  for (const auto& [context, t] : pairs) {
    const auto action = lift_entity_action(lang, t.output_action(lang.num_entities()));
    const Distribution before = pushforward(kernel.evaluate(context), action);
    const Distribution after = kernel.evaluate(apply(lang, t, context));
    const double d = tv_distance(before, after);
    all.push_back(d);
    by_kind[t.kind()].push_back(d);
  }
  TransformationInvariance out;
  auto s = summarize(all);
  out.epsilon_max = s.max;
  out.epsilon_mean = s.mean;
  out.num_pairs = s.pairs;
  for (const auto& [kind, values] : by_kind) out.by_kind[kind] = summarize(values);
  return out;
}

TransformationInvariance transformation_invariance(const Kernel& kernel, const SyntheticLanguage& lang,
                                                   const std::vector<TokenSeq>& contexts,
                                                   const std::vector<Transformation>& transforms) {
  if (contexts.empty()) throw Error("transformation_invariance: empty context list");
  if (transforms.empty()) throw Error("transformation_invariance: empty transformation list");
  std::vector<ContextTransform> pairs;
  pairs.reserve(contexts.size() * transforms.size());
  for (const auto& x : contexts) {
    for (const auto& t : transforms) pairs.push_back({x, t});
  }
  return transformation_invariance(kernel, lang, pairs);
}

namespace {

struct MassRecord {
  double mass;
  bool hit;
};

RuleStats rule_stats(const std::vector<MassRecord>& records) {
  RuleStats s;
  s.count = records.size();
  std::vector<double> masses;
  masses.reserve(records.size());
  std::size_t hits = 0;
  for (const auto& r : records) {
    masses.push_back(r.mass);
    hits += r.hit ? 1 : 0;
  }
  const double min_mass = *std::min_element(masses.begin(), masses.end());
  const double mean_mass = std::max(min_mass, sorted_sum(masses) / static_cast<double>(masses.size()));
  s.worst = std::clamp(1.0 - min_mass, 0.0, 1.0);
  s.mean = std::clamp(1.0 - mean_mass, 0.0, s.worst);
  s.greedy_accuracy = static_cast<double>(hits) / static_cast<double>(records.size());
  return s;
}

}  // namespace

InferentialInvariance inferential_invariance(const Kernel& kernel, const std::vector<InferenceInstance>& instances) {
  if (instances.empty()) throw Error("inferential_invariance: empty instance list");
  std::vector<MassRecord> all;
  std::map<std::string, std::vector<MassRecord>> by_rule;
  for (const auto& inst : instances) {
    if (!kernel.vocabulary().contains(inst.required_token)) throw Error("required token out of range");
    const Distribution d = kernel.evaluate(inst.context);
    MassRecord r{d[inst.required_token], argmax_token(d) == inst.required_token};
    all.push_back(r);
    by_rule[inst.rule_id].push_back(r);
  }
  InferentialInvariance out;
  const RuleStats s = rule_stats(all);
  out.delta_worst = s.worst;
  out.delta_mean = s.mean;
  out.greedy_accuracy = s.greedy_accuracy;
  out.num_instances = s.count;
  for (const auto& [rule, records] : by_rule) out.per_rule[rule] = rule_stats(records);
  return out;
}

InvarianceReport combined_report(const Kernel& kernel, const SyntheticLanguage& lang,
                                 const std::vector<InferenceInstance>& instances,
                                 const std::vector<std::vector<Transformation>>& transforms) {
  if (instances.empty()) throw Error("combined_report: empty instance list");
  if (transforms.size() != instances.size()) throw Error("combined_report: one transformation list per instance required");
  std::vector<ContextTransform> pairs;
  std::vector<InferenceInstance> moved;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& inst = instances[i];
    const GeneratedSequence source = sequence_of(lang, inst);
    for (const auto& t : transforms[i]) {
      if (!verify_preservation(lang, t, source)) {
        throw Error("transformation \"" + format_transformation(t) + "\" does not preserve instance " +
                    std::to_string(i));
      }
      pairs.push_back({inst.context, t});
      const auto action = lift_entity_action(lang, t.output_action(lang.num_entities()));
      moved.push_back({apply(lang, t, inst.context), action[static_cast<std::size_t>(inst.required_token)], inst.rule_id});
    }
  }
  if (pairs.empty()) throw Error("combined_report: empty transformation list");

  InvarianceReport report;
  report.epsilon = transformation_invariance(kernel, lang, pairs);
  report.delta = inferential_invariance(kernel, instances);
  report.delta_transformed = inferential_invariance(kernel, moved);
  report.num_contexts = instances.size();
  report.num_transforms = pairs.size();
  report.kernel_type = kernel.type_name();
  report.kernel_order = kernel.order();
  return report;
}

InvarianceReport combined_report(const Kernel& kernel, const SyntheticLanguage& lang,
                                 const std::vector<InferenceInstance>& instances,
                                 const std::vector<Transformation>& transforms) {
  return combined_report(kernel, lang, instances,
                         std::vector<std::vector<Transformation>>(instances.size(), transforms));
}

namespace {

nlohmann::json rule_json(const RuleStats& s) {
  return {{"worst", s.worst}, {"mean", s.mean}, {"greedy_accuracy", s.greedy_accuracy}, {"count", s.count}};
}

nlohmann::json delta_json(const InferentialInvariance& d) {
  nlohmann::json by_rule = nlohmann::json::object();
  for (const auto& [rule, s] : d.per_rule) by_rule[rule] = rule_json(s);
  return {{"worst", d.delta_worst},
          {"mean", d.delta_mean},
          {"greedy_accuracy", d.greedy_accuracy},
          {"num_instances", d.num_instances},
          {"by_rule", by_rule}};
}

}  // namespace

nlohmann::json report_to_json(const InvarianceReport& r) {
  nlohmann::json by_kind = nlohmann::json::object();
  for (const auto& [kind, s] : r.epsilon.by_kind) {
    by_kind[kind] = {{"max", s.max}, {"mean", s.mean}, {"pairs", s.pairs}};
  }
  nlohmann::json delta = delta_json(r.delta);
  delta["under_transforms"] = delta_json(r.delta_transformed);
  return {{"epsilon", {{"max", r.epsilon.epsilon_max}, {"mean", r.epsilon.epsilon_mean},
                       {"num_pairs", r.epsilon.num_pairs}, {"by_kind", by_kind}}},
          {"delta", delta},
          {"greedy_accuracy", r.delta.greedy_accuracy},
          {"num_contexts", r.num_contexts},
          {"num_transforms", r.num_transforms},
          {"kernel", {{"type", r.kernel_type}, {"order", r.kernel_order}}}};
}

namespace {

const nlohmann::json& require(const nlohmann::json& j, const std::string& key, const std::string& path) {
  if (!j.is_object() || !j.contains(key)) throw Error("report lacks field " + path + key);
  return j.at(key);
}

double unit_interval(const nlohmann::json& j, const std::string& key, const std::string& path) {
  const auto& v = require(j, key, path);
  if (!v.is_number()) throw Error("report field " + path + key + " is not a number");
  double x = v.get<double>();
  if (!(x >= 0.0 && x <= 1.0)) throw Error("report field " + path + key + " outside [0,1]");
  return x;
}

void count_field(const nlohmann::json& j, const std::string& key, const std::string& path) {
  if (!require(j, key, path).is_number_unsigned()) throw Error("report field " + path + key + " is not a count");
}

void check_delta(const nlohmann::json& d, const std::string& path) {
  double worst = unit_interval(d, "worst", path);
  double mean = unit_interval(d, "mean", path);
  if (mean > worst) throw Error("report field " + path + "mean exceeds worst");
  unit_interval(d, "greedy_accuracy", path);
  const auto& by_rule = require(d, "by_rule", path);
  if (!by_rule.is_object()) throw Error("report field " + path + "by_rule is not an object");
  for (const auto& [rule, s] : by_rule.items()) {
    const std::string sub = path + "by_rule." + rule + ".";
    if (unit_interval(s, "mean", sub) > unit_interval(s, "worst", sub)) throw Error("report field " + sub + "mean exceeds worst");
    unit_interval(s, "greedy_accuracy", sub);
    count_field(s, "count", sub);
  }
}

}  // namespace

void validate_report_json(const nlohmann::json& report) {
  const auto& eps = require(report, "epsilon", "");
  if (unit_interval(eps, "mean", "epsilon.") > unit_interval(eps, "max", "epsilon.")) {
    throw Error("report field epsilon.mean exceeds epsilon.max");
  }
  const auto& by_kind = require(eps, "by_kind", "epsilon.");
  if (!by_kind.is_object()) throw Error("report field epsilon.by_kind is not an object");
  for (const auto& [kind, s] : by_kind.items()) {
    const std::string sub = "epsilon.by_kind." + kind + ".";
    if (unit_interval(s, "mean", sub) > unit_interval(s, "max", sub)) throw Error("report field " + sub + "mean exceeds max");
  }
  const auto& delta = require(report, "delta", "");
  check_delta(delta, "delta.");
  if (delta.contains("under_transforms")) check_delta(delta.at("under_transforms"), "delta.under_transforms.");
  unit_interval(report, "greedy_accuracy", "");
  count_field(report, "num_contexts", "");
  count_field(report, "num_transforms", "");
  const auto& kernel = require(report, "kernel", "");
  if (!require(kernel, "type", "kernel.").is_string()) throw Error("report field kernel.type is not a string");
  count_field(kernel, "order", "kernel.");
}

}  // namespace markovlab
