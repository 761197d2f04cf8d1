#include "metaplast/autodiff/tensor.hpp"

#include "metaplast/errors.hpp"

namespace metaplast::ad {

Tensor::Tensor(Shape s, std::vector<double> d) : shape(s), data(std::move(d)) {
  if (data.size() != shape.size()) {
    throw ShapeError("tensor: " + std::to_string(data.size()) + " values for shape " + to_string(shape));
  }
}

void ParamSet::add(const std::string& name, Tensor t, bool learnable) {
  if (entries_.count(name) != 0) throw Error("parameter '" + name + "' already defined");
  entries_.emplace(name, Entry{std::move(t), learnable});
}

Tensor& ParamSet::at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw Error("unknown parameter '" + name + "'");
  return it->second.tensor;
}

const Tensor& ParamSet::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw Error("unknown parameter '" + name + "'");
  return it->second.tensor;
}

bool ParamSet::learnable(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw Error("unknown parameter '" + name + "'");
  return it->second.learnable;
}

std::vector<std::string> ParamSet::learnable_names() const {
  std::vector<std::string> out;
  for (const auto& [name, e] : entries_) {
    if (e.learnable) out.push_back(name);
  }
  return out;
}

std::size_t ParamSet::learnable_count() const {
  std::size_t n = 0;
  for (const auto& [name, e] : entries_) {
    if (e.learnable) n += e.tensor.data.size();
  }
  return n;
}

bool operator==(const ParamSet& a, const ParamSet& b) {
  if (a.entries_.size() != b.entries_.size()) return false;
  auto ib = b.entries_.begin();
  for (const auto& [name, e] : a.entries_) {
    if (name != ib->first || e.learnable != ib->second.learnable || !(e.tensor.shape == ib->second.tensor.shape) ||
        e.tensor.data != ib->second.tensor.data) {
      return false;
    }
    ++ib;
  }
  return true;
}

Bindings bind(Tape& tape, const ParamSet& params) {
  Bindings out;
  for (const auto& [name, e] : params.entries()) {
    out.emplace(name, e.learnable ? tape.parameter(name, e.tensor.data, e.tensor.shape)
                                  : tape.constant(e.tensor.data, e.tensor.shape));
  }
  return out;
}

}  // namespace metaplast::ad
