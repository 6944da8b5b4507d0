// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "veggie/autodiff.hpp"

namespace veggie::nn {

struct Param {
    std::string name;
    Var var;
    bool trainable = true;
};

/// Ordered collection of named model parameters. Names use '/'-separated
/// paths (e.g. "unet/down0/res/conv1/w"); freezing works on path prefixes.
class ParamRegistry {
public:
    Var add(const std::string& name, Tensor init, bool trainable = true);
    Var find(const std::string& name) const;       // throws if absent
    bool contains(const std::string& name) const;

    const std::vector<Param>& all() const { return params_; }
    std::vector<Param>& all() { return params_; }

    /// All params whose name starts with one of the prefixes.
    void set_trainable_by_prefix(const std::vector<std::string>& prefixes, bool trainable);
    void set_all_trainable(bool trainable);

    std::vector<Var> trainable_vars() const;
    std::vector<std::string> trainable_names() const;
    std::int64_t trainable_count() const;  // total scalar count

    /// requires_grad follows the trainable flag; call before building a graph.
    void sync_requires_grad();
    void zero_grads();

    std::map<std::string, Tensor> snapshot() const;
    void restore(const std::map<std::string, Tensor>& state, bool strict = true);

private:
    std::vector<Param> params_;
};

}  // namespace veggie::nn
