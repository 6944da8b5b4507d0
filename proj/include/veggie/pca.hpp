// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "veggie/conditioner.hpp"
#include "veggie/media.hpp"
#include "veggie/tensor.hpp"

namespace veggie {

struct Pca2 {
    Tensor mean;        // [d]
    Tensor components;  // [2,d], orthonormal rows, deterministic sign
    Tensor projected;   // [N,2]
    std::vector<double> eigenvalues;  // all d, descending
};

/// Rank-2 principal component analysis of X:[N,d] via the covariance
/// eigendecomposition. Sign convention: largest-magnitude entry of each
/// component is positive.
Pca2 pca2(const Tensor& X);

struct QueryProjectionRow {
    std::string skill;
    double x;
    double y;
};

/// Mean-pools each sample's grounded queries to one vector and projects the
/// pooled vectors to 2 components.
std::vector<QueryProjectionRow> export_query_projection(
    const Conditioner& cond, const std::vector<InstructionSample>& samples);

void write_projection_csv(const std::vector<QueryProjectionRow>& rows,
                          const std::string& path);

}  // namespace veggie
