#pragma once

#include <string>
#include <vector>

#include "tedi/features.hpp"
#include "tedi/generator.hpp"
#include "tedi/inversion.hpp"
#include "tedi/layer_mask.hpp"

namespace tedi {

struct OptConfig {
  double lambda1 = 5e-2;  // perceptual
  double lambda2 = 2.0;   // encoder regularizer
  int steps = 100;
  double lr = 1e-2;
  /// Layers never updated (W-space only).
  LayerMask frozen;
  void validate() const;
};

/// Frozen networks the objective is evaluated with.
struct InstanceModels {
  const GeneratorModel& generator;
  const EncoderModel& encoder;
  const FeatureExtractor& features;
};

struct ObjectiveTerms {
  ag::Var total;
  ag::Var pixel;        // ||x - G(w)||^2
  ag::Var perceptual;   // ||F(x) - F(G(w))||^2
  ag::Var regularizer;  // ||w - f(E(G(w)))||^2 over all layers, or ||z - E(G(z))||^2
};

/// Objective for a (1, L, C) code in W.
ObjectiveTerms instance_objective(const ag::Var& w, const Image& x, const InstanceModels& m, const OptConfig& cfg);
/// Objective for a (1, C) latent in Z, generating with f(z) on every layer.
ObjectiveTerms instance_objective_z(const ag::Var& z, const Image& x, const InstanceModels& m, const OptConfig& cfg);

struct TraceRow {
  int step = 0;
  double total = 0.0, pixel = 0.0, perceptual = 0.0, regularizer = 0.0;
};
std::string trace_csv(const std::vector<TraceRow>& trace);

struct OptResult {
  StyleW code;
  LatentZ latent;  // set by the Z-space variant
  int best_step = 0;
  double initial_objective = 0.0;
  double objective = 0.0;
  std::vector<TraceRow> trace;
};

/// Plain gradient descent returning the lowest-objective iterate seen
/// (the initial code counts as step 0).
OptResult optimize_instance(const Image& x, const StyleW& init, const InstanceModels& m, const OptConfig& cfg);
OptResult optimize_instance(const Image& x, const LatentZ& init, const InstanceModels& m, const OptConfig& cfg);

}  // namespace tedi
