// Synthetic features correlated with the hidden parameters.
#pragma once

#include "dfmdp/mlp.hpp"
#include "dfmdp/rng.hpp"
#include "dfmdp/types.hpp"

#include <stdexcept>

namespace dfmdp {

inline constexpr int kFeatureDim = 16;

/// A fixed random network mapping one entity's parameter block to 16 raw
/// features. One generator is shared by every instance of a dataset so that
/// the feature/parameter relation is the same across training and test MDPs.
struct FeatureGenerator {
  MlpShape shape;
  ad::ParamVector params;
};

inline FeatureGenerator make_feature_generator(int block, std::uint64_t seed) {
  FeatureGenerator g;
  g.shape = MlpShape{block, {64, 64}, kFeatureDim};
  Rng rng = make_rng(seed, streams::features);
  g.params = init_mlp(g.shape, rng);
  return g;
}

/// Per-row standardization across columns (entities). Constant rows become 0.
inline void standardize_rows(Matrix& x) {
  const double n = static_cast<double>(x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).mean();
    x.row(r).array() -= mean;
    const double var = x.row(r).squaredNorm() / n;
    if (var > 1e-24) x.row(r) /= std::sqrt(var);
  }
}

/// Features for one instance: rows are entities.
///
/// `blocks` holds one parameter block per column. Raw generator outputs are
/// standardized per feature across entities, corrupted with
/// `noise_scale` · N(0, 1), and standardized again.
inline Matrix generate_features(const FeatureGenerator& gen, const Matrix& blocks, double noise_scale,
                                std::uint64_t noise_seed) {
  if (blocks.cols() < 2) throw std::invalid_argument("generate_features: need at least 2 entities");
  if (!blocks.allFinite()) throw std::invalid_argument("generate_features: non-finite parameters");
  if (blocks.rows() != gen.shape.input)
    throw std::invalid_argument("generate_features: parameter block width mismatch");
  Matrix x = mlp_forward(gen.shape, gen.params, blocks);
  standardize_rows(x);
  if (noise_scale > 0.0) {
    Rng rng = make_rng(noise_seed, streams::feature_noise);
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      for (Eigen::Index i = 0; i < x.rows(); ++i) x(i, j) += noise_scale * normal(rng);
    standardize_rows(x);
  }
  return x.transpose();
}

/// Parameter vector (entity-major) viewed as one block per column.
inline Matrix parameter_blocks(const Vector& theta, int block) {
  if (theta.size() % block != 0) throw std::invalid_argument("parameter count not a multiple of block");
  return Eigen::Map<const Matrix>(theta.data(), block, theta.size() / block);
}

}  // namespace dfmdp
