#include "attrdial/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <json.hpp>

#include "attrdial/error.hpp"

namespace attrdial {

using ordered_json = nlohmann::ordered_json;

void EnergySpec::validate(const std::vector<const LatentScorer*>& classifiers) const {
  std::set<int> seen;
  for (const EnergyTerm& t : terms) {
    if (t.attribute < 0 || t.attribute >= static_cast<int>(classifiers.size())) {
      throw ValidationError("energy spec: attribute index " + std::to_string(t.attribute) +
                            " outside the " + std::to_string(classifiers.size()) +
                            " classifiers");
    }
    if (!seen.insert(t.attribute).second) {
      throw ValidationError("energy spec: attribute " + std::to_string(t.attribute) +
                            " appears twice");
    }
    const LatentScorer* c = classifiers[t.attribute];
    if (c == nullptr) {
      throw ValidationError("energy spec: classifier " + std::to_string(t.attribute) +
                            " is null");
    }
    if (t.aspect < 0 || t.aspect >= c->num_aspects()) {
      throw ValidationError("energy spec: aspect " + std::to_string(t.aspect) +
                            " outside attribute " + std::to_string(t.attribute) + "'s " +
                            std::to_string(c->num_aspects()) + " aspects");
    }
    if (!std::isfinite(t.weight) || t.weight < 0.0) {
      throw ValidationError("energy spec: weight for attribute " +
                            std::to_string(t.attribute) +
                            " must be finite and non-negative");
    }
  }
}

void SolverConfig::validate() const {
  if (!(beta_min > 0.0) || !(beta_min <= beta_max)) {
    throw ValidationError("solver config: need 0 < beta_min <= beta_max, got " +
                          std::to_string(beta_min) + ".." + std::to_string(beta_max));
  }
  if (steps < 1) {
    throw ValidationError("solver config: steps must be >= 1");
  }
}

double beta(double s, const SolverConfig& cfg) {
  if (!(s >= 0.0 && s <= 1.0)) {
    throw InputError("beta: pseudo-time " + std::to_string(s) + " outside [0, 1]");
  }
  return cfg.beta_min + s * (cfg.beta_max - cfg.beta_min);
}

double aspect_potential(const EnergySpec& spec,
                        const std::vector<const LatentScorer*>& classifiers,
                        const std::vector<double>& z) {
  double u = 0.0;
  for (const EnergyTerm& t : spec.terms) {
    if (t.attribute < 0 || t.attribute >= static_cast<int>(classifiers.size())) {
      throw InputError("aspect_potential: attribute index out of range");
    }
    u += t.weight * classifiers[t.attribute]->logits(z)[t.aspect];
  }
  return u;
}

std::vector<double> aspect_potential_grad(
    const EnergySpec& spec, const std::vector<const LatentScorer*>& classifiers,
    const std::vector<double>& z) {
  std::vector<double> g(z.size(), 0.0);
  for (const EnergyTerm& t : spec.terms) {
    if (t.attribute < 0 || t.attribute >= static_cast<int>(classifiers.size())) {
      throw InputError("aspect_potential_grad: attribute index out of range");
    }
    const std::vector<double> gi = classifiers[t.attribute]->logit_grad(z, t.aspect);
    for (size_t d = 0; d < z.size(); ++d) g[d] += t.weight * gi[d];
  }
  return g;
}

std::vector<double> drift(const std::vector<double>& z, double s, const EnergySpec& spec,
                          const std::vector<const LatentScorer*>& classifiers,
                          const LatentGaussian& prior, const SolverConfig& cfg) {
  std::vector<double> v = aspect_potential_grad(spec, classifiers, z);
  if (cfg.drift == DriftForm::kFull) {
    if (prior.mu.size() != z.size() || prior.log_var.size() != z.size()) {
      throw DimensionError("drift: prior has " + std::to_string(prior.mu.size()) +
                           " dims, state has " + std::to_string(z.size()));
    }
    for (size_t d = 0; d < z.size(); ++d) {
      const double var = std::exp(prior.log_var[d]);
      v[d] -= ((var - 1.0) * z[d] + prior.mu[d]) / var;
    }
  }
  const double half_beta = 0.5 * beta(s, cfg);
  for (double& x : v) x *= half_beta;
  return v;
}

Trajectory integrate(const std::vector<double>& z0, const EnergySpec& spec,
                     const std::vector<const LatentScorer*>& classifiers,
                     const LatentGaussian& prior, const SolverConfig& cfg) {
  cfg.validate();
  spec.validate(classifiers);
  for (double v : z0) {
    if (!std::isfinite(v)) {
      throw InputError("integrate: non-finite start state");
    }
  }
  const double h = 1.0 / cfg.steps;
  const size_t dim = z0.size();
  auto f = [&](const std::vector<double>& z, double s) {
    return drift(z, s, spec, classifiers, prior, cfg);
  };

  Trajectory traj;
  traj.states.reserve(cfg.steps + 1);
  traj.potentials.reserve(cfg.steps + 1);
  std::vector<double> z = z0;
  traj.states.push_back(z);
  traj.potentials.push_back(aspect_potential(spec, classifiers, z));

  std::vector<double> tmp(dim);
  for (int k = 0; k < cfg.steps; ++k) {
    const double s = k * h;
    if (cfg.integrator == Integrator::kEuler) {
      const std::vector<double> k1 = f(z, s);
      for (size_t d = 0; d < dim; ++d) z[d] += h * k1[d];
    } else {
      const std::vector<double> k1 = f(z, s);
      for (size_t d = 0; d < dim; ++d) tmp[d] = z[d] + 0.5 * h * k1[d];
      const std::vector<double> k2 = f(tmp, s + 0.5 * h);
      for (size_t d = 0; d < dim; ++d) tmp[d] = z[d] + 0.5 * h * k2[d];
      const std::vector<double> k3 = f(tmp, s + 0.5 * h);
      for (size_t d = 0; d < dim; ++d) tmp[d] = z[d] + h * k3[d];
      const std::vector<double> k4 = f(tmp, s + h);
      for (size_t d = 0; d < dim; ++d) {
        z[d] += h / 6.0 * (k1[d] + 2.0 * k2[d] + 2.0 * k3[d] + k4[d]);
      }
    }
    for (double v : z) {
      if (!std::isfinite(v)) {
        throw DivergenceError("integration produced a non-finite state at step " +
                              std::to_string(k + 1) + " of " + std::to_string(cfg.steps));
      }
    }
    traj.states.push_back(z);
    traj.potentials.push_back(aspect_potential(spec, classifiers, z));
  }
  return traj;
}

ControlledSample sample_controlled(const CvaeParams& cvae,
                                   const std::vector<const LatentScorer*>& classifiers,
                                   const EnergySpec& spec,
                                   const std::vector<std::vector<int>>& context,
                                   const SolverConfig& cfg, SeededRng& rng, int max_len) {
  DialogueExample stub;
  stub.context = context;
  const LatentGaussian prior = encode_prior(cvae, stub);
  ControlledSample out;
  out.z_start = reparameterize(prior, rng);
  Trajectory traj = integrate(out.z_start, spec, classifiers, prior, cfg);
  out.z_end = traj.states.back();
  out.u_start = traj.potentials.front();
  out.u_end = traj.potentials.back();
  out.response = decode_greedy(cvae, context, out.z_end, max_len);
  return out;
}

SnisResult snis_oracle(const LatentGaussian& prior,
                       const std::vector<const LatentScorer*>& classifiers,
                       const EnergySpec& spec, int n_samples, SeededRng& rng,
                       double min_ess) {
  if (n_samples < 1000) {
    throw InputError("snis_oracle: need at least 1000 samples, got " +
                     std::to_string(n_samples));
  }
  spec.validate(classifiers);
  const size_t dim = prior.mu.size();

  std::vector<std::vector<double>> zs(n_samples, std::vector<double>(dim));
  std::vector<double> us(n_samples);
  // Per-term softmax probability of the target aspect.
  std::vector<std::vector<double>> probs(spec.terms.size(),
                                         std::vector<double>(n_samples));
  for (int i = 0; i < n_samples; ++i) {
    std::vector<double>& z = zs[i];
    for (size_t d = 0; d < dim; ++d) {
      z[d] = prior.mu[d] + std::exp(0.5 * prior.log_var[d]) * rng.next_gaussian();
    }
    us[i] = aspect_potential(spec, classifiers, z);
    for (size_t t = 0; t < spec.terms.size(); ++t) {
      const std::vector<double> lg = classifiers[spec.terms[t].attribute]->logits(z);
      const double mx = *std::max_element(lg.begin(), lg.end());
      double den = 0.0;
      for (double l : lg) den += std::exp(l - mx);
      probs[t][i] = std::exp(lg[spec.terms[t].aspect] - mx) / den;
    }
  }

  const double u_max = *std::max_element(us.begin(), us.end());
  std::vector<double> w(n_samples);
  double w_sum = 0.0, w_sq = 0.0;
  for (int i = 0; i < n_samples; ++i) {
    w[i] = std::exp(us[i] - u_max);
    w_sum += w[i];
    w_sq += w[i] * w[i];
  }
  const double ess = w_sum * w_sum / w_sq;
  if (ess < min_ess) {
    throw OracleDegenerateError(
        "snis_oracle: effective sample size " + std::to_string(ess) + " below " +
        std::to_string(min_ess) + "; increase n_samples or reduce weights");
  }

  SnisResult res;
  res.n_samples = n_samples;
  res.ess = ess;
  res.tilted_mean_z.assign(dim, 0.0);
  res.tilted_target_prob.assign(spec.terms.size(), 0.0);
  for (int i = 0; i < n_samples; ++i) {
    const double wi = w[i] / w_sum;
    res.tilted_mean_u += wi * us[i];
    for (size_t d = 0; d < dim; ++d) res.tilted_mean_z[d] += wi * zs[i][d];
    for (size_t t = 0; t < spec.terms.size(); ++t) {
      res.tilted_target_prob[t] += wi * probs[t][i];
    }
  }
  return res;
}

EnergySpec parse_attr_spec(const std::string& text, const AttributeSchema& schema,
                           double weight) {
  EnergySpec spec;
  if (text.empty()) return spec;
  size_t pos = 0;
  while (pos <= text.size()) {
    size_t comma = text.find(',', pos);
    if (comma == std::string::npos) comma = text.size();
    const std::string pair = text.substr(pos, comma - pos);
    const size_t eq = pair.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 >= pair.size()) {
      throw InputError("attribute spec entry '" + pair + "' is not name=aspect");
    }
    const std::string attr_name = pair.substr(0, eq);
    const std::string aspect_name = pair.substr(eq + 1);
    const int attr = schema.attribute_index(attr_name);
    if (attr < 0) {
      throw SchemaError("unknown attribute '" + attr_name + "' in spec");
    }
    const int aspect = schema.aspect_index(attr, aspect_name);
    if (aspect < 0) {
      throw SchemaError("unknown aspect '" + aspect_name + "' of attribute '" +
                        attr_name + "'");
    }
    spec.terms.push_back(EnergyTerm{attr, aspect, weight});
    pos = comma + 1;
    if (comma == text.size()) break;
  }
  return spec;
}

std::string spec_to_json(const EnergySpec& spec, const AttributeSchema& schema) {
  ordered_json terms = ordered_json::array();
  for (const EnergyTerm& t : spec.terms) {
    if (t.attribute < 0 || t.attribute >= static_cast<int>(schema.num_attributes())) {
      throw InputError("spec_to_json: attribute index outside schema");
    }
    const Attribute& a = schema.attributes[t.attribute];
    if (t.aspect < 0 || t.aspect >= static_cast<int>(a.aspects.size())) {
      throw InputError("spec_to_json: aspect index outside attribute " + a.name);
    }
    ordered_json term;
    term["attribute"] = a.name;
    term["aspect"] = a.aspects[t.aspect];
    term["weight"] = t.weight;
    terms.push_back(term);
  }
  ordered_json root;
  root["terms"] = terms;
  return root.dump();
}

}  // namespace attrdial
