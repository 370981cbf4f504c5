#pragma once

// Interaction-aware LSTM: position embedding, correntropy-weighted
// interaction aggregation, shared LSTM step and bivariate Gaussian head.

#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ialstm/geometry.hpp"
#include "ialstm/ndmath.hpp"

namespace ialstm {

struct ModelDims {
  std::size_t embed = 64;
  std::size_t hidden = 128;

  bool operator==(const ModelDims&) const = default;
};

// All learnable weights. Shapes:
//   w_e: E x 2        b_e: E
//   w_a: E x D        b_a: E
//   w_l: 4D x (2E+D)  b_l: 4D   (gate order i, f, g, o)
//   w_o: 5 x D        b_o: 5    (mu_x, mu_y, log sigma_x, log sigma_y, atanh rho)
struct ModelParams {
  ModelDims dims;
  DenseMatrix w_e;
  DenseVector b_e;
  DenseMatrix w_a;
  DenseVector b_a;
  DenseMatrix w_l;
  DenseVector b_l;
  DenseMatrix w_o;
  DenseVector b_o;

  static ModelParams zeros(ModelDims dims);
  // Weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] (LSTM: 1/sqrt(D)),
  // biases zero except the forget gate at +1.
  static ModelParams initialize(ModelDims dims, std::uint64_t seed);

  // Throws DimensionError on inconsistent shapes, NumericError on non-finite
  // elements.
  void validate() const;

  // Visits every tensor as (name, flat span) in a fixed order.
  template <class F>
  void for_each_tensor(F&& f) {
    f("w_e", w_e.flat());
    f("b_e", b_e.flat());
    f("w_a", w_a.flat());
    f("b_a", b_a.flat());
    f("w_l", w_l.flat());
    f("b_l", b_l.flat());
    f("w_o", w_o.flat());
    f("b_o", b_o.flat());
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    f("w_e", w_e.flat());
    f("b_e", b_e.flat());
    f("w_a", w_a.flat());
    f("b_a", b_a.flat());
    f("w_l", w_l.flat());
    f("b_l", b_l.flat());
    f("w_o", w_o.flat());
    f("b_o", b_o.flat());
  }

  std::size_t parameter_count() const;
  bool operator==(const ModelParams&) const = default;
};

// Parameters used by a forward pass, plus an optional gradient sink of the
// same shapes.
struct ModelBinding {
  const ModelParams* params = nullptr;
  ModelParams* grads = nullptr;
};

enum class CorrentropySpace { world, normalized };

struct InteractionConfig {
  double sigma = 4.0;
  CorrentropySpace space = CorrentropySpace::world;
  // false: ablation with the interaction input fixed at zero.
  bool enabled = true;
  // Maps the normalized network inputs back to meters for correntropy.
  NormalizationTransform transform;
};

struct PedestrianState {
  int id = 0;
  Var h;
  Var c;
  Position position;
};

struct GaussianParams2D {
  double mu_x = 0.0;
  double mu_y = 0.0;
  double sigma_x = 1.0;
  double sigma_y = 1.0;
  double rho = 0.0;
};

// Tape handles for the head outputs: mu (2), sigma (2), rho (1).
struct GaussianHead {
  Var mu;
  Var sigma;
  Var rho;

  GaussianParams2D value() const;
};

inline constexpr double kRhoClamp = 0.999;

PedestrianState zero_state(Tape& tape, int id, Position position, std::size_t hidden);

Var embed_position(Tape& tape, const Position& p, const ModelBinding& model);

// exp(-|p_i - p_j|^2 / (2 sigma^2)). ConfigError when sigma <= 0.
double correntropy_weight(const Position& p_i, const Position& p_j, double sigma);

// target.h + sum_j CE(target, j) * others[j].h, summed in the order given.
// Correntropy uses the positions stored in the states.
Var interaction_vector(const PedestrianState& target, std::span<const PedestrianState> others,
                       double sigma);

Var embed_interaction(Var interaction, const ModelBinding& model);

// Advances every pedestrian in `positions` (normalized units) by one frame.
// Interaction vectors are built from the pre-step hidden states, so the
// update is simultaneous. Pedestrians absent from `positions` are dropped,
// new ones start from a zero state. Result is ordered by pedestrian id.
std::vector<PedestrianState> step_scene(Tape& tape, std::span<const PedestrianState> states,
                                        const std::map<int, Position>& positions,
                                        const ModelBinding& model,
                                        const InteractionConfig& interaction);

GaussianHead output_head(Var h, const ModelBinding& model);

// Negative log density of the bivariate normal at `target` (normalized).
// rho is clamped to [-0.999, 0.999]; NumericError on non-finite inputs.
Var nll_loss(const GaussianHead& g, const Position& target);
double nll_loss(const GaussianParams2D& g, const Position& target);

Position sample_position(const GaussianParams2D& g, std::mt19937_64& rng);

}  // namespace ialstm
