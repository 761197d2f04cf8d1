#pragma once

#include <map>
#include <string>
#include <vector>

#include "metaplast/autodiff/tape.hpp"

namespace metaplast::ad {

struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(Shape s, double fill = 0.0) : shape(s), data(s.size(), fill) {}
  Tensor(Shape s, std::vector<double> d);

  double& operator()(std::size_t r, std::size_t c) { return data[r * shape.cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * shape.cols + c]; }
};

// Named, ordered collection of arrays. Learnable entries are bound to a tape
// as parameters; the rest (masks, signs) are bound as constants.
class ParamSet {
 public:
  struct Entry {
    Tensor tensor;
    bool learnable = true;
  };

  void add(const std::string& name, Tensor t, bool learnable = true);
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool learnable(const std::string& name) const;

  const std::map<std::string, Entry>& entries() const { return entries_; }
  std::map<std::string, Entry>& entries() { return entries_; }
  std::vector<std::string> learnable_names() const;
  std::size_t learnable_count() const;

  friend bool operator==(const ParamSet& a, const ParamSet& b);

 private:
  std::map<std::string, Entry> entries_;
};

using Bindings = std::map<std::string, Value>;

Bindings bind(Tape& tape, const ParamSet& params);

}  // namespace metaplast::ad
