#include "dfe/model/gradcheck.hpp"

#include "dfe/model/model.hpp"
#include "dfe/numcore/errors.hpp"

namespace dfe::model {

ModelGradCheck check_model_gradients(const Hyperparams& hp, std::uint64_t seed, std::size_t batch, double sd) {
  if (batch == 0) throw ContractViolation("gradcheck: batch must be positive");
  Rng rng(Rng::derive(seed, "gradcheck"));
  Model m(hp);
  for (nc::Parameter* p : m.parameters())
    for (double& v : p->value.data()) v = rng.normal(0.0, sd);
  for (auto& l : m.encoder().layers) {
    for (double& v : l.ln1_gamma.value.data()) v += 1.0;
    for (double& v : l.ln2_gamma.value.data()) v += 1.0;
  }
  nc::Tensor x({batch, hp.input_dim});
  for (double& v : x.data()) v = rng.normal();

  nc::Tape base;
  const FrozenAssignment frozen = m.forward(base, x).assignment;
  auto params = m.parameters();
  ModelGradCheck out;
  out.total = nc::grad_check([&](nc::Tape& t) { return m.forward(t, x, &frozen).total; }, params);
  out.objective = nc::grad_check([&](nc::Tape& t) { return m.forward(t, x, &frozen).objective; }, params);
  return out;
}

}  // namespace dfe::model
