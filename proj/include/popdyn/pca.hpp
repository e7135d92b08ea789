#pragma once

// Principal component analysis through the eigendecomposition of the sample covariance.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "popdyn/error.hpp"

namespace popdyn {

struct PcaModel {
  std::vector<double> mean;
  std::vector<std::vector<double>> components;  // orthonormal rows, by decreasing variance
  std::vector<double> explained_variance;
  std::vector<double> explained_variance_ratio;

  std::vector<double> transform(const std::vector<double>& x) const {
    std::vector<double> scores(components.size(), 0.0);
    for (std::size_t k = 0; k < components.size(); ++k)
      for (std::size_t j = 0; j < mean.size(); ++j) scores[k] += components[k][j] * (x[j] - mean[j]);
    return scores;
  }

  std::vector<double> inverse_transform(const std::vector<double>& scores) const {
    std::vector<double> x = mean;
    for (std::size_t k = 0; k < scores.size() && k < components.size(); ++k)
      for (std::size_t j = 0; j < x.size(); ++j) x[j] += scores[k] * components[k][j];
    return x;
  }

  double cumulative_ratio(std::size_t k) const {
    double s = 0.0;
    for (std::size_t i = 0; i < std::min(k, explained_variance_ratio.size()); ++i) s += explained_variance_ratio[i];
    return s;
  }
};

/// Fits on rows of X (n_samples x n_features, n_samples >= 2). Covariance uses n - 1.
/// Each component's sign is fixed so that its largest-magnitude entry is positive.
/// A corpus with zero total variance yields one component (the first axis) with ratio 0.
inline PcaModel pca_fit(const std::vector<std::vector<double>>& X) {
  if (X.size() < 2) throw ValidationError("PCA needs at least 2 samples");
  const std::size_t n = X.size(), f = X.front().size();
  if (f == 0) throw ValidationError("PCA needs at least 1 feature");
  Eigen::MatrixXd data(n, f);
  for (std::size_t i = 0; i < n; ++i) {
    if (X[i].size() != f) throw ValidationError("PCA rows must have equal length");
    for (std::size_t j = 0; j < f; ++j) data(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = X[i][j];
  }
  const Eigen::RowVectorXd mu = data.colwise().mean();
  const Eigen::MatrixXd centered = data.rowwise() - mu;
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n - 1);

  PcaModel model;
  model.mean.assign(mu.data(), mu.data() + f);
  const double trace = cov.trace();
  if (!(trace > 0.0)) {
    std::vector<double> axis(f, 0.0);
    axis[0] = 1.0;
    model.components.push_back(std::move(axis));
    model.explained_variance.push_back(0.0);
    model.explained_variance_ratio.push_back(0.0);
    return model;
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  const Eigen::VectorXd& values = solver.eigenvalues();  // ascending
  const Eigen::MatrixXd& vectors = solver.eigenvectors();
  for (Eigen::Index k = static_cast<Eigen::Index>(f) - 1; k >= 0; --k) {
    Eigen::VectorXd v = vectors.col(k);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0) v = -v;
    model.components.emplace_back(v.data(), v.data() + f);
    const double lambda = std::max(0.0, values(k));
    model.explained_variance.push_back(lambda);
    model.explained_variance_ratio.push_back(lambda / trace);
  }
  return model;
}

inline nlohmann::json to_json(const PcaModel& m) {
  return {{"mean", m.mean},
          {"components", m.components},
          {"explained_variance", m.explained_variance},
          {"explained_variance_ratio", m.explained_variance_ratio}};
}

inline PcaModel pca_from_json(const nlohmann::json& j) {
  PcaModel m;
  m.mean = j.at("mean").get<std::vector<double>>();
  m.components = j.at("components").get<std::vector<std::vector<double>>>();
  m.explained_variance = j.at("explained_variance").get<std::vector<double>>();
  m.explained_variance_ratio = j.at("explained_variance_ratio").get<std::vector<double>>();
  return m;
}

}  // namespace popdyn
