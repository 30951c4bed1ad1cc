// Latent-space control: a composed aspect potential U(z) (weighted sum of
// target-aspect logits, additive across attributes), a linear beta schedule,
// deterministic probability-flow integration (Euler / classical RK4, reduced
// or full drift), end-to-end controlled sampling, and a self-normalized
// importance-sampling oracle for the tilted distribution p(z) proportional to
// N(z; mu', sigma'^2) * exp(U(z)).
//
// Sign convention: the sampler ASCENDS U. The logged energy is -U.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "attrdial/cvae.hpp"
#include "attrdial/latent_space.hpp"
#include "attrdial/rng.hpp"

namespace attrdial {

struct EnergyTerm {
  int attribute = 0;  // index into the classifier list
  int aspect = 0;     // target aspect of that attribute
  double weight = 1.0;
};

struct EnergySpec {
  std::vector<EnergyTerm> terms;

  // Distinct in-range attribute indices, valid aspects, finite non-negative
  // weights. Throws ValidationError / DimensionError.
  void validate(const std::vector<const LatentScorer*>& classifiers) const;
};

enum class Integrator { kEuler, kRk4 };
enum class DriftForm { kReduced, kFull };

struct SolverConfig {
  double beta_min = 0.1;
  double beta_max = 20.0;
  int steps = 32;
  Integrator integrator = Integrator::kRk4;
  DriftForm drift = DriftForm::kReduced;

  void validate() const;  // 0 < beta_min <= beta_max, steps >= 1
};

// Linear interpolation beta_min + s * (beta_max - beta_min); s outside [0,1]
// raises InputError.
double beta(double s, const SolverConfig& cfg);

// U(z) = sum_i weight_i * f_{attribute_i}(z)[aspect_i]
double aspect_potential(const EnergySpec& spec,
                        const std::vector<const LatentScorer*>& classifiers,
                        const std::vector<double>& z);
// grad_z U(z), analytic.
std::vector<double> aspect_potential_grad(const EnergySpec& spec,
                                          const std::vector<const LatentScorer*>& classifiers,
                                          const std::vector<double>& z);

// Reduced: 0.5 * beta(s) * grad U
// Full:    0.5 * beta(s) * (grad U - ((sigma'^2 - 1) * z + mu') / sigma'^2)
std::vector<double> drift(const std::vector<double>& z, double s, const EnergySpec& spec,
                          const std::vector<const LatentScorer*>& classifiers,
                          const LatentGaussian& prior, const SolverConfig& cfg);

struct Trajectory {
  std::vector<std::vector<double>> states;  // steps + 1 entries, states[0] = z0
  std::vector<double> potentials;           // U at each state
};

// Fixed-step integration over pseudo-time s in [0,1]. Non-finite state raises
// DivergenceError naming the step.
Trajectory integrate(const std::vector<double>& z0, const EnergySpec& spec,
                     const std::vector<const LatentScorer*>& classifiers,
                     const LatentGaussian& prior, const SolverConfig& cfg);

struct ControlledSample {
  std::vector<int> response;
  std::vector<double> z_start, z_end;
  double u_start = 0.0;
  double u_end = 0.0;
};

// Draw z from the prior encoder over `context`, ascend U via `integrate`,
// greedy-decode the endpoint. An empty spec reduces to uncontrolled prior
// sampling.
ControlledSample sample_controlled(const CvaeParams& cvae,
                                   const std::vector<const LatentScorer*>& classifiers,
                                   const EnergySpec& spec,
                                   const std::vector<std::vector<int>>& context,
                                   const SolverConfig& cfg, SeededRng& rng,
                                   int max_len = 24);

struct SnisResult {
  // Tilted-distribution mean of softmax(f_attr(z))[aspect] per spec term,
  // in spec order.
  std::vector<double> tilted_target_prob;
  std::vector<double> tilted_mean_z;
  double tilted_mean_u = 0.0;
  double ess = 0.0;  // effective sample size, <= n_samples
  int n_samples = 0;
};

// Proposal = prior, weights proportional to exp(U). Requires n_samples >=
// 1000 (InputError) and ESS >= min_ess (OracleDegenerateError otherwise).
SnisResult snis_oracle(const LatentGaussian& prior,
                       const std::vector<const LatentScorer*>& classifiers,
                       const EnergySpec& spec, int n_samples, SeededRng& rng,
                       double min_ess = 50.0);

// Parses "style=lyrical,attitude=optimistic" against the schema into a spec
// with uniform weight. Unknown names raise SchemaError; an empty string
// yields an empty spec.
EnergySpec parse_attr_spec(const std::string& text, const AttributeSchema& schema,
                           double weight);

// JSON echo of a spec for sample records: {"terms":[{"attribute":...,
// "aspect":..., "weight":...}]} with schema names.
std::string spec_to_json(const EnergySpec& spec, const AttributeSchema& schema);

}  // namespace attrdial
