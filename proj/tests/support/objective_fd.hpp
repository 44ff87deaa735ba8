#pragma once

// Finite-difference check of a full objective. The stop-gradient inputs are
// computed once from the current parameters and then held fixed while every
// parameter entry is perturbed, which is what the stop-gradient means.

#include "avae/objectives.hpp"
#include "support/fd.hpp"

namespace avae::testing {

struct ObjectiveGradCheck {
  double rel_error = 0.0;
  double max_frozen_grad = 0.0;  ///< largest |grad| over frozen (decoder, for AVAE_SS) entries
};

inline ObjectiveGradCheck check_objective_gradient(ModelPair m, const Tensor& x, const ObjectiveConfig& cfg,
                                                   const Noise& noise, Rng* attack_rng = nullptr, double h = 1e-5) {
  const bool ss = cfg.kind == ObjectiveKind::AVAE_SS;
  const Delusions d = make_delusions(m, x, cfg, noise, attack_rng);

  Graph g;
  ModelVars mv = bind(g, m, Freeze{false, ss});
  Var loss = objective_terms_given(g, mv, x, cfg, noise, d).loss;
  auto analytic = gather_gradients(g.backward(loss), mv);

  ObjectiveGradCheck out;
  std::vector<Tensor*> ptrs;
  std::vector<Tensor> a;
  auto params = named_parameters(m);
  for (std::size_t k = 0; k < params.size(); ++k) {
    const bool frozen = ss && params[k].first.rfind("decoder.", 0) == 0;
    if (frozen) {
      out.max_frozen_grad = std::max(out.max_frozen_grad, max_abs(analytic[k]));
      continue;
    }
    ptrs.push_back(params[k].second);
    a.push_back(analytic[k]);
  }
  auto numeric = finite_difference(
      [&] {
        Graph h2;
        ModelVars hv = bind(h2, m, Freeze{true, true});
        return objective_terms_given(h2, hv, x, cfg, noise, d).loss.value().item();
      },
      ptrs, h);
  out.rel_error = relative_error(a, numeric);
  return out;
}

/// Analytic gradient with delusions rebuilt in-graph behind stop_gradient,
/// for comparing against the fixed-delusion version above.
inline std::vector<Tensor> in_graph_gradient(const ModelPair& m, const Tensor& x, const ObjectiveConfig& cfg,
                                             const Noise& noise, Rng* attack_rng = nullptr) {
  Graph g;
  ModelVars mv = bind(g, m, Freeze{false, cfg.kind == ObjectiveKind::AVAE_SS});
  Var loss = objective_terms(g, mv, x, cfg, noise, attack_rng).loss;
  return gather_gradients(g.backward(loss), mv);
}

}  // namespace avae::testing
