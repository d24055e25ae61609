#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pemb/tensor.hpp"

namespace pemb {

template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool frozen = false;

  void zero_grad() { grad = Tensor<T>(value.shape()); }
};

/// Named trainable tensors in registration order. Parameter addresses are
/// stable for the lifetime of the set, so layers may hold raw pointers.
template <class T>
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet&) = delete;
  ParameterSet& operator=(const ParameterSet&) = delete;
  ParameterSet(ParameterSet&&) noexcept = default;
  ParameterSet& operator=(ParameterSet&&) noexcept = default;

  Parameter<T>& add(const std::string& name, Tensor<T> value) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    auto p = std::make_unique<Parameter<T>>();
    p->name = name;
    p->grad = Tensor<T>(value.shape());
    p->value = std::move(value);
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return *params_.back();
  }

  Parameter<T>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return *params_[it->second];
  }
  const Parameter<T>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return *params_[it->second];
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const noexcept { return params_.size(); }
  Parameter<T>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return *params_[i]; }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

  /// Parameters whose names start with any of the prefixes.
  std::vector<Parameter<T>*> with_prefix(const std::vector<std::string>& prefixes) {
    std::vector<Parameter<T>*> out;
    for (auto& p : params_)
      for (const auto& pre : prefixes)
        if (p->name.rfind(pre, 0) == 0) {
          out.push_back(p.get());
          break;
        }
    return out;
  }

  std::vector<Parameter<T>*> all() {
    std::vector<Parameter<T>*> out;
    for (auto& p : params_) out.push_back(p.get());
    return out;
  }

  std::map<std::string, Tensor<T>> snapshot() const {
    std::map<std::string, Tensor<T>> out;
    for (const auto& p : params_) out.emplace(p->name, p->value);
    return out;
  }

  std::map<std::string, Tensor<T>> gradients() const {
    std::map<std::string, Tensor<T>> out;
    for (const auto& p : params_) out.emplace(p->name, p->grad);
    return out;
  }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::map<std::string, std::size_t> index_;
};

template <class T>
class Graph;

/// Handle to a node of a Graph.
template <class T>
struct Var {
  Graph<T>* graph = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return graph->node(id).value; }
  const Shape& shape() const { return graph->node(id).value.shape(); }
  bool requires_grad() const { return graph->node(id).requires_grad; }
};

/// Define-by-run computation graph. Every op appends a node whose value is
/// computed eagerly, so nodes are stored in topological order; backward walks
/// them in exact reverse.
template <class T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  struct Node {
    std::string op;
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    Parameter<T>* param = nullptr;
    BackwardFn backward;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> input(const std::string& name, Tensor<T> value, const Shape& expected = {}) {
    if (!expected.empty() && value.shape() != expected) {
      throw ShapeError("node '" + name + "' (input): expected shape " + shape_string(expected) +
                       ", got " + shape_string(value.shape()));
    }
    return push("input:" + name, std::move(value), false, nullptr);
  }

  Var<T> constant(Tensor<T> value) { return push("constant", std::move(value), false, nullptr); }

  Var<T> param(Parameter<T>& p) {
    auto v = push("param:" + p.name, p.value, !p.frozen, nullptr);
    nodes_.back().param = &p;
    return v;
  }

  Var<T> push(std::string op, Tensor<T> value, bool requires_grad, BackwardFn backward) {
    Node n;
    n.op = std::move(op);
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var<T>{this, nodes_.size() - 1};
  }

  Node& node(std::size_t id) { return nodes_.at(id); }
  const Node& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient buffer of a node, zero-allocated on first access.
  Tensor<T>& grad(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }
  bool wants_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  void mark_output(const std::string& name, Var<T> v) { outputs_[name] = v.id; }
  std::map<std::string, Tensor<T>> outputs() const {
    std::map<std::string, Tensor<T>> out;
    for (const auto& [name, id] : outputs_) out.emplace(name, nodes_[id].value);
    return out;
  }

  /// Accumulates d(loss)/d(param) into every non-frozen parameter reached.
  void backward(Var<T> loss) {
    if (nodes_.empty()) throw std::logic_error("backward called before any forward pass");
    if (loss.graph != this) throw std::invalid_argument("loss node belongs to another graph");
    if (loss.value().size() != 1) {
      throw ShapeError("backward needs a scalar loss, node '" + nodes_[loss.id].op + "' has shape " +
                       shape_string(loss.shape()));
    }
    for (auto& n : nodes_) n.grad = Tensor<T>();
    visit_order_.clear();
    if (!nodes_[loss.id].requires_grad) return;
    grad(loss.id)[0] = T(1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      visit_order_.push_back(i);
      if (n.backward) n.backward(*this, i);
      if (n.param) {
        auto& pg = n.param->grad;
        if (pg.shape() != n.value.shape()) pg = Tensor<T>(n.value.shape());
        for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += n.grad[k];
      }
    }
  }

  const std::vector<std::size_t>& last_backward_order() const noexcept { return visit_order_; }

 private:
  std::vector<Node> nodes_;
  std::map<std::string, std::size_t> outputs_;
  std::vector<std::size_t> visit_order_;
};

}  // namespace pemb
