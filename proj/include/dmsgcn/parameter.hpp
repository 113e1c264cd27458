#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dmsgcn/errors.hpp"
#include "dmsgcn/tensor.hpp"

namespace dmsgcn {

enum class ParamKind { weight, bias, adjacency, table, slope, alpha };

inline const char* to_string(ParamKind kind) {
  switch (kind) {
    case ParamKind::weight: return "weight";
    case ParamKind::bias: return "bias";
    case ParamKind::adjacency: return "adjacency";
    case ParamKind::table: return "table";
    case ParamKind::slope: return "slope";
    case ParamKind::alpha: return "alpha";
  }
  return "?";
}

/// A named trainable tensor. Entries where freeze_mask is 0 never change
/// under the optimizer.
template <typename S>
struct Parameter {
  std::string name;
  Tensor<S> value;
  ParamKind kind = ParamKind::weight;
  std::optional<std::vector<unsigned char>> freeze_mask;

  std::size_t trainable_count() const {
    if (!freeze_mask) return value.numel();
    std::size_t n = 0;
    for (unsigned char m : *freeze_mask) n += m != 0;
    return n;
  }

  bool trainable(std::size_t i) const { return !freeze_mask || (*freeze_mask)[i] != 0; }
};

/// Registry owning a model's parameters in creation order; names are unique.
template <typename S>
class ParameterSet {
 public:
  using Ptr = std::shared_ptr<Parameter<S>>;

  Ptr create(std::string name, Tensor<S> init, ParamKind kind,
             std::optional<std::vector<unsigned char>> freeze_mask = std::nullopt) {
    if (find(name)) throw ContractError("duplicate parameter name '" + name + "'");
    if (freeze_mask && freeze_mask->size() != init.numel())
      throw DimensionError("freeze mask for '" + name + "' does not match " + shape_str(init.shape()));
    init.set_tracked(true);
    auto p = std::make_shared<Parameter<S>>(Parameter<S>{std::move(name), std::move(init), kind, std::move(freeze_mask)});
    params_.push_back(p);
    return p;
  }

  /// Registers an existing parameter, renaming it to `name`.
  Ptr adopt(Ptr param, std::string name) {
    if (find(name)) throw ContractError("duplicate parameter name '" + name + "'");
    param->name = std::move(name);
    param->value.set_tracked(true);
    params_.push_back(param);
    return param;
  }

  Ptr find(const std::string& name) const {
    for (const auto& p : params_)
      if (p->name == name) return p;
    return nullptr;
  }

  std::size_t size() const { return params_.size(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  const Ptr& operator[](std::size_t i) const { return params_[i]; }

  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->trainable_count();
    return n;
  }

  void zero_grad() {
    for (const auto& p : params_) p->value.zero_grad();
  }

 private:
  std::vector<Ptr> params_;
};

}  // namespace dmsgcn
