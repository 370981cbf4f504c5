#include "ialstm/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace ialstm {

namespace {

MatrixParam bind(const DenseMatrix& value, DenseMatrix* grad) { return {&value, grad}; }
VectorParam bind(const DenseVector& value, DenseVector* grad) { return {&value, grad}; }

void check_shape(const char* name, const DenseMatrix& m, std::size_t rows, std::size_t cols) {
  if (m.rows() != rows || m.cols() != cols) {
    throw DimensionError(std::string(name) + " has shape " + shape_string(m) + ", expected (" +
                         std::to_string(rows) + "x" + std::to_string(cols) + ")");
  }
}

void check_shape(const char* name, const DenseVector& v, std::size_t n) {
  if (v.size() != n) {
    throw DimensionError(std::string(name) + " has shape " + shape_string(v) + ", expected (" +
                         std::to_string(n) + ")");
  }
}

Position correntropy_position(const Position& normalized, const InteractionConfig& cfg) {
  return cfg.space == CorrentropySpace::world ? cfg.transform.denormalize(normalized) : normalized;
}

}  // namespace

ModelParams ModelParams::zeros(ModelDims dims) {
  const std::size_t e = dims.embed;
  const std::size_t d = dims.hidden;
  ModelParams p;
  p.dims = dims;
  p.w_e = DenseMatrix(e, 2);
  p.b_e = DenseVector(e);
  p.w_a = DenseMatrix(e, d);
  p.b_a = DenseVector(e);
  p.w_l = DenseMatrix(4 * d, 2 * e + d);
  p.b_l = DenseVector(4 * d);
  p.w_o = DenseMatrix(5, d);
  p.b_o = DenseVector(5);
  return p;
}

ModelParams ModelParams::initialize(ModelDims dims, std::uint64_t seed) {
  ModelParams p = zeros(dims);
  std::mt19937_64 rng(seed);
  auto fill = [&rng](std::span<double> values, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : values) v = dist(rng);
  };
  const double d = static_cast<double>(dims.hidden);
  fill(p.w_e.flat(), 1.0 / std::sqrt(2.0));
  fill(p.w_a.flat(), 1.0 / std::sqrt(d));
  fill(p.w_l.flat(), 1.0 / std::sqrt(d));
  fill(p.w_o.flat(), 1.0 / std::sqrt(d));
  for (std::size_t k = dims.hidden; k < 2 * dims.hidden; ++k) p.b_l[k] = 1.0;
  return p;
}

void ModelParams::validate() const {
  const std::size_t e = dims.embed;
  const std::size_t d = dims.hidden;
  check_shape("w_e", w_e, e, 2);
  check_shape("b_e", b_e, e);
  check_shape("w_a", w_a, e, d);
  check_shape("b_a", b_a, e);
  check_shape("w_l", w_l, 4 * d, 2 * e + d);
  check_shape("b_l", b_l, 4 * d);
  check_shape("w_o", w_o, 5, d);
  check_shape("b_o", b_o, 5);
  for_each_tensor([](const char* name, std::span<const double> values) {
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (!std::isfinite(values[i])) {
        throw NumericError(std::string("parameter ") + name + "[" + std::to_string(i) +
                           "] is not finite");
      }
    }
  });
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for_each_tensor([&n](const char*, std::span<const double> values) { n += values.size(); });
  return n;
}

GaussianParams2D GaussianHead::value() const {
  return {mu.value()[0], mu.value()[1], sigma.value()[0], sigma.value()[1], rho.value()[0]};
}

PedestrianState zero_state(Tape& tape, int id, Position position, std::size_t hidden) {
  const Var zeros = tape.constant(DenseVector(hidden));
  return {id, zeros, zeros, position};
}

Var embed_position(Tape& tape, const Position& p, const ModelBinding& model) {
  require_units(p, Units::normalized, "embed_position");
  const ModelParams& w = *model.params;
  ModelParams* g = model.grads;
  const Var x = tape.constant(DenseVector{p.x, p.y});
  return relu(affine(bind(w.w_e, g ? &g->w_e : nullptr), x, bind(w.b_e, g ? &g->b_e : nullptr)));
}

double correntropy_weight(const Position& p_i, const Position& p_j, double sigma) {
  if (!(sigma > 0.0)) {
    throw ConfigError("correntropy bandwidth must be positive, got " + std::to_string(sigma));
  }
  if (p_i.units != p_j.units) throw UnitsError("correntropy between positions in different units");
  const double dx = p_i.x - p_j.x;
  const double dy = p_i.y - p_j.y;
  return std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
}

Var interaction_vector(const PedestrianState& target, std::span<const PedestrianState> others,
                       double sigma) {
  std::vector<Var> terms;
  std::vector<double> weights;
  terms.reserve(others.size() + 1);
  weights.reserve(others.size() + 1);
  terms.push_back(target.h);
  weights.push_back(1.0);
  for (const auto& other : others) {
    if (other.h.size() != target.h.size()) {
      throw DimensionError("interaction_vector: hidden state of pedestrian " +
                           std::to_string(other.id) + " has shape " +
                           shape_string(other.h.value()) + ", target has " +
                           shape_string(target.h.value()));
    }
    terms.push_back(other.h);
    weights.push_back(correntropy_weight(target.position, other.position, sigma));
  }
  if (others.empty()) return target.h;
  return weighted_sum(terms, weights);
}

Var embed_interaction(Var interaction, const ModelBinding& model) {
  const ModelParams& w = *model.params;
  ModelParams* g = model.grads;
  return relu(affine(bind(w.w_a, g ? &g->w_a : nullptr), interaction,
                     bind(w.b_a, g ? &g->b_a : nullptr)));
}

std::vector<PedestrianState> step_scene(Tape& tape, std::span<const PedestrianState> states,
                                        const std::map<int, Position>& positions,
                                        const ModelBinding& model,
                                        const InteractionConfig& interaction) {
  const ModelParams& w = *model.params;
  ModelParams* g = model.grads;
  const std::size_t d = w.dims.hidden;

  std::map<int, const PedestrianState*> previous;
  for (const auto& s : states) previous[s.id] = &s;

  // Snapshot at time t: hidden/cell from t-1, positions from t (in the
  // space correntropy is evaluated in).
  std::vector<PedestrianState> snapshot;
  snapshot.reserve(positions.size());
  Var zeros;
  for (const auto& [id, pos] : positions) {
    require_units(pos, Units::normalized, "step_scene");
    const Position ce_pos = correntropy_position(pos, interaction);
    auto it = previous.find(id);
    if (it != previous.end()) {
      if (it->second->h.size() != d || it->second->c.size() != d) {
        throw DimensionError("step_scene: state of pedestrian " + std::to_string(id) +
                             " has hidden shape " + shape_string(it->second->h.value()));
      }
      snapshot.push_back({id, it->second->h, it->second->c, ce_pos});
    } else {
      if (!zeros.valid()) zeros = tape.constant(DenseVector(d));
      snapshot.push_back({id, zeros, zeros, ce_pos});
    }
  }

  const LstmWeights lstm{2 * w.dims.embed, d, bind(w.w_l, g ? &g->w_l : nullptr),
                         bind(w.b_l, g ? &g->b_l : nullptr)};
  Var no_interaction;
  std::vector<PedestrianState> next;
  next.reserve(snapshot.size());
  std::vector<PedestrianState> others;
  std::size_t index = 0;
  for (const auto& [id, pos] : positions) {
    const PedestrianState& self = snapshot[index];
    const Var e = embed_position(tape, pos, model);
    Var a;
    if (interaction.enabled) {
      others.clear();
      for (std::size_t j = 0; j < snapshot.size(); ++j) {
        if (j != index) others.push_back(snapshot[j]);
      }
      a = embed_interaction(interaction_vector(self, others, interaction.sigma), model);
    } else {
      if (!no_interaction.valid()) no_interaction = tape.constant(DenseVector(w.dims.embed));
      a = no_interaction;
    }
    const LstmOutput out = lstm_cell(concat(e, a), self.h, self.c, lstm);
    next.push_back({id, out.h, out.c, pos});
    ++index;
  }
  return next;
}

GaussianHead output_head(Var h, const ModelBinding& model) {
  const ModelParams& w = *model.params;
  ModelParams* g = model.grads;
  const Var raw = affine(bind(w.w_o, g ? &g->w_o : nullptr), h, bind(w.b_o, g ? &g->b_o : nullptr));
  return {slice(raw, 0, 2), exp(slice(raw, 2, 2)), tanh(slice(raw, 4, 1))};
}

namespace {

struct NllTerms {
  double loss;
  double d_mu_x, d_mu_y, d_sigma_x, d_sigma_y, d_rho;
};

NllTerms bivariate_nll(const GaussianParams2D& g, const Position& target) {
  require_units(target, Units::normalized, "nll_loss");
  const bool finite = std::isfinite(g.mu_x) && std::isfinite(g.mu_y) && std::isfinite(g.sigma_x) &&
                      std::isfinite(g.sigma_y) && std::isfinite(g.rho) && g.sigma_x > 0.0 &&
                      g.sigma_y > 0.0 && std::isfinite(target.x) && std::isfinite(target.y);
  if (!finite) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "nll_loss: invalid density inputs mu=(" << g.mu_x << ", " << g.mu_y << ") sigma=("
        << g.sigma_x << ", " << g.sigma_y << ") rho=" << g.rho << " target=(" << target.x << ", "
        << target.y << ")";
    throw NumericError(msg.str());
  }
  const bool clamped = std::abs(g.rho) > kRhoClamp;
  const double rho = std::clamp(g.rho, -kRhoClamp, kRhoClamp);
  const double dx = (target.x - g.mu_x) / g.sigma_x;
  const double dy = (target.y - g.mu_y) / g.sigma_y;
  const double q = 1.0 - rho * rho;
  const double z = dx * dx + dy * dy - 2.0 * rho * dx * dy;

  NllTerms t{};
  t.loss = std::log(2.0 * std::numbers::pi) + std::log(g.sigma_x) + std::log(g.sigma_y) +
           0.5 * std::log(q) + z / (2.0 * q);
  const double gx = (dx - rho * dy) / q;  // d(z/2q)/d(dx)
  const double gy = (dy - rho * dx) / q;
  t.d_mu_x = -gx / g.sigma_x;
  t.d_mu_y = -gy / g.sigma_y;
  t.d_sigma_x = 1.0 / g.sigma_x - gx * dx / g.sigma_x;
  t.d_sigma_y = 1.0 / g.sigma_y - gy * dy / g.sigma_y;
  t.d_rho = clamped ? 0.0 : -rho / q - dx * dy / q + z * rho / (q * q);
  return t;
}

}  // namespace

double nll_loss(const GaussianParams2D& g, const Position& target) {
  return bivariate_nll(g, target).loss;
}

Var nll_loss(const GaussianHead& head, const Position& target) {
  const NllTerms t = bivariate_nll(head.value(), target);
  Tape& tape = head.mu.tape();
  const bool rg = tape.requires_grad(head.mu) || tape.requires_grad(head.sigma) ||
                  tape.requires_grad(head.rho);
  return tape.record("bivariate_nll", DenseVector{t.loss}, rg,
                     [head, t](Tape& tp, const DenseVector& g) {
                       const double s = g[0];
                       if (tp.requires_grad(head.mu)) {
                         auto& gm = tp.grad_of(head.mu);
                         gm[0] += s * t.d_mu_x;
                         gm[1] += s * t.d_mu_y;
                       }
                       if (tp.requires_grad(head.sigma)) {
                         auto& gs = tp.grad_of(head.sigma);
                         gs[0] += s * t.d_sigma_x;
                         gs[1] += s * t.d_sigma_y;
                       }
                       if (tp.requires_grad(head.rho)) tp.grad_of(head.rho)[0] += s * t.d_rho;
                     });
}

Position sample_position(const GaussianParams2D& g, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const double z1 = normal(rng);
  const double z2 = normal(rng);
  const double rho = std::clamp(g.rho, -1.0, 1.0);
  const double x = g.mu_x + g.sigma_x * z1;
  const double y = g.mu_y + g.sigma_y * (rho * z1 + std::sqrt(1.0 - rho * rho) * z2);
  return {x, y, Units::normalized};
}

}  // namespace ialstm
