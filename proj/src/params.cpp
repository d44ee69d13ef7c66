#include "uniemo/params.hpp"

namespace uniemo {

std::string_view Parameter::group() const {
  const std::string_view n = name;
  return n.substr(0, n.find('.'));
}

Parameter& ParameterStore::add(std::string name, Tensor init) {
  if (find(name) != nullptr) throw Error("duplicate parameter name " + name);
  auto p = std::make_unique<Parameter>();
  p->name = std::move(name);
  p->value = std::move(init);
  p->grad = Tensor(p->value.shape());
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter* ParameterStore::find(std::string_view name) {
  for (auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

const Parameter* ParameterStore::find(std::string_view name) const {
  for (const auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

Parameter& ParameterStore::at(std::string_view name) {
  Parameter* p = find(name);
  if (p == nullptr) throw Error("unknown parameter " + std::string(name));
  return *p;
}

const Parameter& ParameterStore::at(std::string_view name) const {
  const Parameter* p = find(name);
  if (p == nullptr) throw Error("unknown parameter " + std::string(name));
  return *p;
}

std::vector<Parameter*> ParameterStore::all() const {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<Parameter*> ParameterStore::with_prefix(std::string_view prefix) const {
  std::vector<Parameter*> out;
  for (const auto& p : params_) {
    if (std::string_view(p->name).starts_with(prefix)) out.push_back(p.get());
  }
  return out;
}

std::size_t ParameterStore::element_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) {
    if (p->grad.shape() == p->value.shape()) {
      p->grad.fill(0.0);
    } else {
      p->grad = Tensor::zeros_like(p->value);
    }
  }
}

}  // namespace uniemo
