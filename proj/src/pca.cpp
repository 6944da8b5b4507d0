// SPDX-License-Identifier: Apache-2.0
#include "veggie/pca.hpp"

#include <Eigen/Dense>

#include <fstream>
#include <set>

#include "veggie/errors.hpp"

namespace veggie {

Pca2 pca2(const Tensor& X) {
    if (X.ndim() != 2 || X.dim(0) < 2) throw InsufficientData("pca2 needs at least 2 rows");
    const int N = X.dim(0), d = X.dim(1);
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
        M(X.data(), N, d);
    Eigen::VectorXd mean = M.colwise().mean();
    Eigen::MatrixXd centered = M.rowwise() - mean.transpose();
    Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(N);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);

    Pca2 out;
    out.mean = Tensor({d});
    for (int j = 0; j < d; ++j) out.mean[j] = mean(j);
    out.eigenvalues.resize(static_cast<size_t>(d));
    for (int j = 0; j < d; ++j)
        out.eigenvalues[static_cast<size_t>(j)] = es.eigenvalues()(d - 1 - j);  // descending

    out.components = Tensor({2, d});
    for (int k = 0; k < 2; ++k) {
        Eigen::VectorXd v = es.eigenvectors().col(d - 1 - k);
        // Fix the sign so repeated runs agree.
        int arg = 0;
        for (int j = 1; j < d; ++j)
            if (std::fabs(v(j)) > std::fabs(v(arg))) arg = j;
        if (v(arg) < 0) v = -v;
        for (int j = 0; j < d; ++j) out.components.at({k, j}) = v(j);
    }

    out.projected = Tensor({N, 2});
    for (int i = 0; i < N; ++i)
        for (int k = 0; k < 2; ++k) {
            double s = 0;
            for (int j = 0; j < d; ++j) s += centered(i, j) * out.components.at({k, j});
            out.projected.at({i, k}) = s;
        }
    return out;
}

std::vector<QueryProjectionRow> export_query_projection(
    const Conditioner& cond, const std::vector<InstructionSample>& samples) {
    if (samples.size() < 2) throw InsufficientData("need at least 2 samples");
    std::set<Skill> skills;
    for (const auto& s : samples) skills.insert(s.skill);
    if (skills.size() < 2) throw InsufficientData("need at least 2 distinct skills");

    const int d = cond.config().d_cond;
    Tensor pooled({static_cast<int>(samples.size()), d});
    for (size_t i = 0; i < samples.size(); ++i) {
        GroundedTaskQueries q = cond.encode(samples[i].source, samples[i].instruction,
                                            samples[i].references);
        const std::int64_t rows = q.tokens.numel() / d;
        for (std::int64_t r = 0; r < rows; ++r)
            for (int j = 0; j < d; ++j)
                pooled.at({static_cast<int>(i), j}) += q.tokens[r * d + j] / static_cast<double>(rows);
    }
    Pca2 p = pca2(pooled);
    std::vector<QueryProjectionRow> out;
    for (size_t i = 0; i < samples.size(); ++i)
        out.push_back({skill_name(samples[i].skill), p.projected.at({static_cast<int>(i), 0}),
                       p.projected.at({static_cast<int>(i), 1})});
    return out;
}

void write_projection_csv(const std::vector<QueryProjectionRow>& rows,
                          const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
    f << "skill,x,y\n";
    f.precision(12);
    for (const auto& r : rows) f << r.skill << "," << r.x << "," << r.y << "\n";
}

}  // namespace veggie
