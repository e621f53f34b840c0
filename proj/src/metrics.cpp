#include "pild/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "pild/rng.hpp"

namespace pild {

namespace {

std::vector<const Tensor*> subsample(const std::vector<Tensor>& v,
                                     std::size_t max_side, Rng& rng) {
  std::vector<const Tensor*> out;
  if (v.size() <= max_side) {
    out.reserve(v.size());
    for (const Tensor& t : v) out.push_back(&t);
    return out;
  }
  // partial Fisher-Yates draw without replacement
  std::vector<std::size_t> idx(v.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (std::size_t i = 0; i < max_side; ++i) {
    std::size_t j = i + rng.uniform_int(idx.size() - i);
    std::swap(idx[i], idx[j]);
  }
  out.reserve(max_side);
  for (std::size_t i = 0; i < max_side; ++i) out.push_back(&v[idx[i]]);
  return out;
}

Real euclidean(const Tensor& a, const Tensor& b) {
  Real s = 0.0;
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < ad.size(); ++i) {
    Real d = ad[i] - bd[i];
    s += d * d;
  }
  return std::sqrt(s);
}

Real mean_pairwise(const std::vector<const Tensor*>& a,
                   const std::vector<const Tensor*>& b) {
  Real s = 0.0;
  for (const Tensor* x : a)
    for (const Tensor* y : b) s += euclidean(*x, *y);
  return s / (static_cast<Real>(a.size()) * static_cast<Real>(b.size()));
}

}  // namespace

Real energy_distance(const std::vector<Tensor>& a, const std::vector<Tensor>& b,
                     std::size_t max_side, std::uint64_t subsample_seed) {
  if (a.empty() || b.empty())
    throw DataError("energy_distance: empty sample set");
  if (a.front().numel() != b.front().numel())
    throw ShapeError("energy_distance: sample sizes differ, " +
                     shape_str(a.front().shape()) + " vs " +
                     shape_str(b.front().shape()));
  Rng rng(subsample_seed);
  auto xs = subsample(a, max_side, rng);
  auto ys = subsample(b, max_side, rng);
  Real cross = mean_pairwise(xs, ys);
  Real within_x = mean_pairwise(xs, xs);
  Real within_y = mean_pairwise(ys, ys);
  return 0.5 * (2.0 * cross - within_x - within_y);
}

MetricsReport evaluate(const std::vector<Tensor>& samples,
                       const Dataset& reference, const ResidualFn& residual_op,
                       std::size_t max_side, std::uint64_t subsample_seed) {
  if (samples.empty()) throw DataError("evaluate: no samples");
  MetricsReport rep;
  if (residual_op) {
    NoGradGuard no_grad;
    std::size_t violations = 0;
    Real abs_sum = 0.0;
    for (const Tensor& s : samples) {
      Tensor r = residual_op(s);
      bool violated = false;
      Real acc = 0.0;
      for (Real v : r.data()) {
        acc += std::abs(v);
        violated = violated || std::abs(v) > 1e-9;
      }
      abs_sum += acc / static_cast<Real>(r.numel());
      if (violated) ++violations;
    }
    rep.violation_rate =
        static_cast<Real>(violations) / static_cast<Real>(samples.size());
    rep.mean_abs_residual = abs_sum / static_cast<Real>(samples.size());
  }
  rep.energy_distance =
      energy_distance(samples, reference.samples, max_side, subsample_seed);
  return rep;
}

}  // namespace pild
