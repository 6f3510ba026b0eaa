#pragma once

// Latent-conditioned field interface shared by the neural decoder and the
// linear synthetic decoders used as closed-form oracles.

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "windinr/autodiff.hpp"
#include "windinr/synth.hpp"

namespace windinr {

using QueryPoint = synth::Point3;

/// Per-point inputs of a decoder evaluation that do not depend on the latent.
struct PointBatch {
  virtual ~PointBatch() = default;
  std::size_t size = 0;
};

class LatentField {
 public:
  virtual ~LatentField() = default;
  virtual std::size_t latent_dim() const = 0;
  virtual std::unique_ptr<PointBatch> prepare(std::span<const QueryPoint> points) const = 0;
  /// Wind (u, v, w) in m/s at the prepared points, shape [n, 3]; z is [1, d].
  virtual ad::Var decode(ad::Graph& g, const PointBatch& batch, ad::Var z) const = 0;
  /// Hash of the frozen weights behind the field.
  virtual std::uint64_t weight_hash() const = 0;
};

/// decode(p, z) = G(p) z + c(p) with G(p) = A0 + rx A1 + ry A2 + h A3.
class LinearField : public LatentField {
 public:
  /// Random coefficients with entries in [-scale, scale].
  LinearField(std::size_t latent_dim, std::uint64_t seed, double scale = 1.0);
  LinearField(Tensor weights, Tensor offsets);

  std::size_t latent_dim() const override { return weights_.rows(); }
  std::unique_ptr<PointBatch> prepare(std::span<const QueryPoint> points) const override;
  ad::Var decode(ad::Graph& g, const PointBatch& batch, ad::Var z) const override;
  std::uint64_t weight_hash() const override;

  /// G(p), 3 x d.
  Tensor jacobian(const QueryPoint& p) const;
  /// c(p)
  std::vector<double> offset(const QueryPoint& p) const;

 private:
  Tensor weights_;  // [d, 4*3]: column 3k+c holds row c of A_k
  Tensor offsets_;  // [4, 3]
};

/// Batched decode at a fixed latent, chunked to bound memory. Returns [n, 3].
Tensor predict_at(const LatentField& field, std::span<const double> z, std::span<const QueryPoint> points,
                  std::size_t chunk = 2048);

}  // namespace windinr
