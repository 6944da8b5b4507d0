// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "veggie/tensor.hpp"

namespace veggie {

/// Single-file archive: magic, JSON header (format version, user metadata,
/// tensor directory with shapes and offsets), then raw little-endian doubles.
struct Checkpoint {
    nlohmann::json meta;
    std::map<std::string, Tensor> tensors;

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);
};

}  // namespace veggie
