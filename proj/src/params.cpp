// SPDX-License-Identifier: Apache-2.0
#include "veggie/params.hpp"

#include <stdexcept>

namespace veggie::nn {

Var ParamRegistry::add(const std::string& name, Tensor init, bool trainable) {
    if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    Var v = leaf(std::move(init), trainable);
    params_.push_back({name, v, trainable});
    return v;
}

Var ParamRegistry::find(const std::string& name) const {
    for (const auto& p : params_)
        if (p.name == name) return p.var;
    throw std::out_of_range("no parameter named " + name);
}

bool ParamRegistry::contains(const std::string& name) const {
    for (const auto& p : params_)
        if (p.name == name) return true;
    return false;
}

void ParamRegistry::set_trainable_by_prefix(const std::vector<std::string>& prefixes,
                                            bool trainable) {
    for (auto& p : params_)
        for (const auto& pre : prefixes)
            if (p.name.rfind(pre, 0) == 0) p.trainable = trainable;
}

void ParamRegistry::set_all_trainable(bool trainable) {
    for (auto& p : params_) p.trainable = trainable;
}

std::vector<Var> ParamRegistry::trainable_vars() const {
    std::vector<Var> out;
    for (const auto& p : params_)
        if (p.trainable) out.push_back(p.var);
    return out;
}

std::vector<std::string> ParamRegistry::trainable_names() const {
    std::vector<std::string> out;
    for (const auto& p : params_)
        if (p.trainable) out.push_back(p.name);
    return out;
}

std::int64_t ParamRegistry::trainable_count() const {
    std::int64_t n = 0;
    for (const auto& p : params_)
        if (p.trainable) n += p.var->value.numel();
    return n;
}

void ParamRegistry::sync_requires_grad() {
    for (auto& p : params_) p.var->requires_grad = p.trainable;
}

void ParamRegistry::zero_grads() {
    for (auto& p : params_) p.var->grad = Tensor();
}

std::map<std::string, Tensor> ParamRegistry::snapshot() const {
    std::map<std::string, Tensor> out;
    for (const auto& p : params_) out[p.name] = p.var->value;
    return out;
}

void ParamRegistry::restore(const std::map<std::string, Tensor>& state, bool strict) {
    for (auto& p : params_) {
        auto it = state.find(p.name);
        if (it == state.end()) {
            if (strict) throw std::out_of_range("checkpoint missing parameter " + p.name);
            continue;
        }
        if (it->second.shape() != p.var->value.shape())
            throw std::invalid_argument("shape mismatch restoring " + p.name);
        p.var->value = it->second;
    }
}

}  // namespace veggie::nn
