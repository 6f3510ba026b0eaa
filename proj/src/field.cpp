#include "windinr/field.hpp"

#include <stdexcept>

#include "windinr/rng.hpp"

namespace windinr {

namespace {

struct LinearBatch : PointBatch {
  Tensor basis;  // [n, 4]: 1, rx, ry, h
};

const double* basis_of(const QueryPoint& p, double out[4]) {
  out[0] = 1.0;
  out[1] = p.rx;
  out[2] = p.ry;
  out[3] = p.h;
  return out;
}

}  // namespace

LinearField::LinearField(std::size_t latent_dim, std::uint64_t seed, double scale)
    : weights_({latent_dim, 12}), offsets_({4, 3}) {
  Rng rng(seed);
  for (double& v : weights_.data()) v = uniform(rng, -scale, scale);
  for (double& v : offsets_.data()) v = uniform(rng, -scale, scale);
}

LinearField::LinearField(Tensor weights, Tensor offsets) : weights_(std::move(weights)), offsets_(std::move(offsets)) {
  if (weights_.cols() != 12 || offsets_.shape() != Shape{4, 3})
    throw std::invalid_argument("LinearField: weights must be [d, 12] and offsets [4, 3]");
}

std::unique_ptr<PointBatch> LinearField::prepare(std::span<const QueryPoint> points) const {
  auto b = std::make_unique<LinearBatch>();
  b->size = points.size();
  b->basis = Tensor({points.size(), 4});
  for (std::size_t i = 0; i < points.size(); ++i) basis_of(points[i], &b->basis.at(i, 0));
  return b;
}

ad::Var LinearField::decode(ad::Graph& g, const PointBatch& batch, ad::Var z) const {
  const auto& b = dynamic_cast<const LinearBatch&>(batch);
  ad::Var coeff = ad::reshape(ad::matmul(z, g.constant(weights_)), {4, 3});
  ad::Var phi = g.constant(b.basis);
  return ad::add(ad::matmul(phi, coeff), ad::matmul(phi, g.constant(offsets_)));
}

std::uint64_t LinearField::weight_hash() const {
  auto bytes = [](const Tensor& t) {
    return std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(t.raw()), t.size() * sizeof(double));
  };
  return fnv1a64(bytes(offsets_), fnv1a64(bytes(weights_)));
}

Tensor LinearField::jacobian(const QueryPoint& p) const {
  double phi[4];
  basis_of(p, phi);
  const std::size_t d = latent_dim();
  Tensor gm({3, d});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t k = 0; k < 4; ++k) gm.at(c, j) += phi[k] * weights_.at(j, 3 * k + c);
  return gm;
}

std::vector<double> LinearField::offset(const QueryPoint& p) const {
  double phi[4];
  basis_of(p, phi);
  std::vector<double> c(3, 0.0);
  for (std::size_t k = 0; k < 4; ++k)
    for (std::size_t j = 0; j < 3; ++j) c[j] += phi[k] * offsets_.at(k, j);
  return c;
}

Tensor predict_at(const LatentField& field, std::span<const double> z, std::span<const QueryPoint> points,
                  std::size_t chunk) {
  if (chunk == 0) throw std::invalid_argument("predict_at: chunk size must be positive");
  if (z.size() != field.latent_dim())
    throw std::invalid_argument("predict_at: latent of length " + std::to_string(z.size()) + ", expected " +
                                std::to_string(field.latent_dim()));
  Tensor out({points.size(), 3});
  const Tensor zt = Tensor::vector(z).reshaped({1, z.size()});
  for (std::size_t start = 0; start < points.size(); start += chunk) {
    const std::size_t n = std::min(chunk, points.size() - start);
    const auto batch = field.prepare(points.subspan(start, n));
    ad::Graph g;
    const ad::Var y = field.decode(g, *batch, g.constant(zt));
    std::copy(y.value().raw(), y.value().raw() + 3 * n, out.raw() + 3 * start);
  }
  return out;
}

}  // namespace windinr
