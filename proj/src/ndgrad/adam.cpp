#include "ccica/ndgrad/adam.hpp"

#include <cmath>

#include "ccica/error.hpp"

namespace ccica::ndgrad {

void Adam::step(std::span<Parameter* const> params) {
  for (Parameter* p : params) {
    if (p->grad.shape() != p->value.shape()) {
      throw ShapeError("adam: gradient of '" + p->name + "' has shape " + shape_string(p->grad.shape()) +
                       ", parameter has " + shape_string(p->value.shape()));
    }
    update(*p, p->grad.data());
  }
}

void Adam::step(std::span<Parameter* const> params, std::span<const double> flat_grad) {
  std::size_t total = 0;
  for (const Parameter* p : params) total += p->value.size();
  if (total != flat_grad.size()) {
    throw ShapeError("adam: flat gradient has " + std::to_string(flat_grad.size()) + " entries, parameters have " +
                     std::to_string(total));
  }
  std::size_t off = 0;
  for (Parameter* p : params) {
    update(*p, flat_grad.subspan(off, p->value.size()));
    off += p->value.size();
  }
}

void Adam::update(Parameter& p, std::span<const double> g) {
  auto [it, inserted] = moments_.try_emplace(p.name);
  Moments& mo = it->second;
  if (inserted || mo.m.shape() != p.value.shape()) {
    mo.m = Tensor(p.value.shape());
    mo.v = Tensor(p.value.shape());
    mo.t = 0;
  }
  ++mo.t;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(mo.t));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(mo.t));
  for (std::size_t k = 0; k < g.size(); ++k) {
    mo.m[k] = cfg_.beta1 * mo.m[k] + (1.0 - cfg_.beta1) * g[k];
    mo.v[k] = cfg_.beta2 * mo.v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
    const double mhat = mo.m[k] / bc1;
    const double vhat = mo.v[k] / bc2;
    p.value[k] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
  }
}

}  // namespace ccica::ndgrad
