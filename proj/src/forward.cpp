#include "qimg/forward.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <utility>

namespace qimg {

namespace {

using cd = std::complex<double>;

struct Subpoint {
  Vec2 pos;
  double weight = 0.0;
};

void check_options(const TensorOptions& opt) {
  if (opt.integration == PixelIntegration::GaussLegendre &&
      (opt.quadrature_points < 1 || opt.quadrature_points > 16)) {
    throw GeometryError("quadrature points per axis must be in [1, 16]");
  }
}

// Quadrature sub-points of one pixel; weights carry the pixel measure.
std::vector<Subpoint> pixel_nodes(const ObjectModel& obj, int pixel, const TensorOptions& opt) {
  const Vec2 c = obj.center(pixel);
  if (opt.integration == PixelIntegration::SmallPixel) return {{c, obj.pixel_measure()}};
  const QuadratureRule rule = gauss_legendre_unit(opt.quadrature_points);
  const double d = obj.pixel_size;
  std::vector<Subpoint> out;
  if (obj.is_1d()) {
    for (std::size_t a = 0; a < rule.nodes.size(); ++a) {
      out.push_back({{c.x + rule.nodes[a] * d, c.y}, rule.weights[a] * d});
    }
    return out;
  }
  for (std::size_t b = 0; b < rule.nodes.size(); ++b) {
    for (std::size_t a = 0; a < rule.nodes.size(); ++a) {
      out.push_back({{c.x + rule.nodes[a] * d, c.y + rule.nodes[b] * d},
                     rule.weights[a] * rule.weights[b] * d * d});
    }
  }
  return out;
}

void check_indices(int i, int j, int l, int m, const ObjectModel& obj, const DetectorGrid& det) {
  const int nd = static_cast<int>(det.size());
  const int np = static_cast<int>(obj.size());
  if (i < 0 || i >= nd || j < 0 || j >= nd) throw GeometryError("detector index out of range");
  if (l < 0 || l >= np || m < 0 || m >= np) throw GeometryError("pixel index out of range");
}

// Laplace expansion along the first row; n <= kMaxOrder so this stays tiny.
cd permanent_rec(const Eigen::MatrixXcd& m, std::array<int, kMaxOrder>& cols, int row, int used) {
  const int n = static_cast<int>(m.rows());
  if (row == n) return 1.0;
  cd sum = 0.0;
  for (int c = 0; c < n; ++c) {
    if (used & (1 << c)) continue;
    cols[row] = c;
    sum += m(row, c) * permanent_rec(m, cols, row + 1, used | (1 << c));
  }
  return sum;
}

Eigen::MatrixXcd minor_of(const Eigen::MatrixXcd& m, int r, int c) {
  const int n = static_cast<int>(m.rows());
  Eigen::MatrixXcd out(n - 1, n - 1);
  for (int a = 0, oa = 0; a < n; ++a) {
    if (a == r) continue;
    for (int b = 0, ob = 0; b < n; ++b) {
      if (b == c) continue;
      out(oa, ob++) = m(a, b);
    }
    ++oa;
  }
  return out;
}

double real_checked(cd v) {
  const double scale = std::max(std::abs(v.real()), 1e-300);
  if (std::abs(v.imag()) > 1e-10 * scale && std::abs(v.imag()) > 1e-280) {
    throw NumericError("correlation has a non-negligible imaginary part");
  }
  return v.real();
}

}  // namespace

TensorOptions TensorOptions::defaults_for(const ObjectModel& obj) {
  if (obj.is_1d()) return {PixelIntegration::GaussLegendre, 3};
  return {PixelIntegration::SmallPixel, 1};
}

QuadratureRule gauss_legendre_unit(int points) {
  if (points < 1) throw GeometryError("quadrature needs at least one point");
  // Golub-Welsch: eigenpairs of the Jacobi matrix of the Legendre recurrence.
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(points, points);
  for (int k = 1; k < points; ++k) {
    const double b = k / std::sqrt(4.0 * k * k - 1.0);
    jac(k, k - 1) = b;
    jac(k - 1, k) = b;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jac);
  QuadratureRule rule;
  for (int k = 0; k < points; ++k) {
    rule.nodes.push_back(0.5 * es.eigenvalues()(k));
    const double v0 = es.eigenvectors()(0, k);
    rule.weights.push_back(v0 * v0);  // 2 v0^2 on [-1, 1], halved for [-1/2, 1/2]
  }
  return rule;
}

CoefficientTensor CoefficientTensor::build(const ObjectModel& geometry, const ImagingSystem& sys,
                                           const SourceModel& src, const DetectorGrid& detectors,
                                           TensorOptions options) {
  if (geometry.nx <= 0 || geometry.ny <= 0 || !(geometry.pixel_size > 0.0)) {
    throw GeometryError("tensor: invalid object geometry");
  }
  detectors.validate();
  validate(src);
  check_options(options);
  if (options.integration == PixelIntegration::SmallPixel) options.quadrature_points = 1;

  const int np = geometry.nx * geometry.ny;
  std::vector<Subpoint> nodes;
  std::vector<int> owner;
  for (int j = 0; j < np; ++j) {
    for (const Subpoint& s : pixel_nodes(geometry, j, options)) {
      nodes.push_back(s);
      owner.push_back(j);
    }
  }
  const int ns = static_cast<int>(nodes.size());
  const int nd = static_cast<int>(detectors.size());

  Eigen::MatrixXcd w(nd, ns);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < nd; ++i) {
    for (int p = 0; p < ns; ++p) {
      w(i, p) = nodes[p].weight * psf_eval(nodes[p].pos, detectors.points[i], sys);
    }
  }
  Eigen::MatrixXd k(ns, ns);
#pragma omp parallel for schedule(static)
  for (int p = 0; p < ns; ++p) {
    for (int q = 0; q < ns; ++q) k(p, q) = source_kernel(src, nodes[p].pos, nodes[q].pos);
  }
  return CoefficientTensor(kind_of(src), options, np, std::move(w), std::move(k), std::move(owner));
}

CoefficientTensor::CoefficientTensor(SourceKind kind, TensorOptions options, int num_pixels,
                                     Eigen::MatrixXcd weights, Eigen::MatrixXd kernel,
                                     std::vector<int> subpoint_pixel)
    : kind_(kind),
      options_(options),
      num_pixels_(num_pixels),
      weights_(std::move(weights)),
      kernel_(std::move(kernel)),
      subpoint_pixel_(std::move(subpoint_pixel)),
      pixel_subpoints_(static_cast<std::size_t>(std::max(num_pixels, 0))) {
  if (num_pixels_ <= 0) throw GeometryError("tensor: no pixels");
  const auto ns = static_cast<Eigen::Index>(subpoint_pixel_.size());
  if (weights_.cols() != ns || kernel_.rows() != ns || kernel_.cols() != ns) {
    throw GeometryError("tensor: inconsistent sub-point dimensions");
  }
  for (int p = 0; p < ns; ++p) {
    const int pix = subpoint_pixel_[p];
    if (pix < 0 || pix >= num_pixels_) throw GeometryError("tensor: sub-point owner out of range");
    pixel_subpoints_[pix].push_back(p);
  }
}

std::complex<double> CoefficientTensor::pair(int i, int j, int l, int m) const {
  cd sum = 0.0;
  if (kind_ == SourceKind::Thermal) {
    for (int q : pixel_subpoints_[m]) {
      for (int p : pixel_subpoints_[l]) sum += std::conj(weights_(i, q)) * kernel_(q, p) * weights_(j, p);
    }
  } else {
    for (int p : pixel_subpoints_[l]) {
      for (int q : pixel_subpoints_[m]) sum += weights_(i, p) * kernel_(p, q) * weights_(j, q);
    }
  }
  return sum;
}

std::complex<double> thermal_pair_coeff(int i, int j, int l, int m, const ObjectModel& geometry,
                                        const ImagingSystem& sys, const SourceModel& src,
                                        const DetectorGrid& detectors, TensorOptions options) {
  if (kind_of(src) != SourceKind::Thermal) throw ModelError("thermal_pair_coeff needs a thermal source");
  check_indices(i, j, l, m, geometry, detectors);
  check_options(options);
  const Vec2 ri = detectors.points[i];
  const Vec2 rj = detectors.points[j];
  cd sum = 0.0;
  for (const Subpoint& s : pixel_nodes(geometry, m, options)) {
    for (const Subpoint& sp : pixel_nodes(geometry, l, options)) {
      sum += s.weight * sp.weight * source_kernel(src, s.pos, sp.pos) * psf_eval(s.pos, ri, sys) *
             psf_eval(sp.pos, rj, sys);
    }
  }
  return sum;
}

std::complex<double> spdc_pair_coeff(int j, int k, int m1, int m2, const ObjectModel& geometry,
                                     const ImagingSystem& sys, const SourceModel& src,
                                     const DetectorGrid& detectors, TensorOptions options) {
  if (kind_of(src) != SourceKind::Spdc) throw ModelError("spdc_pair_coeff needs an SPDC source");
  check_indices(j, k, m1, m2, geometry, detectors);
  check_options(options);
  const Vec2 rj = detectors.points[j];
  const Vec2 rk = detectors.points[k];
  cd sum = 0.0;
  for (const Subpoint& s1 : pixel_nodes(geometry, m1, options)) {
    for (const Subpoint& s2 : pixel_nodes(geometry, m2, options)) {
      sum += s1.weight * s2.weight * source_kernel(src, s1.pos, s2.pos) * psf_eval(s1.pos, rj, sys) *
             psf_eval(s2.pos, rk, sys);
    }
  }
  return sum;
}

namespace {

// Pairwise matrix over a detector subset plus what the gradient needs.
using GradRow = Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>>;

struct PairState {
  Eigen::MatrixXcd m;        // nd x nd: I_ab (thermal) or Phi_ab (SPDC)
  Eigen::MatrixXcd wg;       // nd x |gq|: weights on gradient sub-points
  Eigen::MatrixXcd cg;       // |gq| x nd: (kernel * A^T) rows for gradient sub-points
  std::vector<int> gq_pixel; // local gradient-pixel index of each gradient sub-point
};

PairState pair_state(const CoefficientTensor& t, std::span<const double> x,
                     const std::vector<int>& dets, std::span<const int> grad_pixels, bool with_grad) {
  if (static_cast<int>(x.size()) != t.num_pixels()) {
    throw GeometryError("object has " + std::to_string(x.size()) + " pixels, tensor expects " +
                        std::to_string(t.num_pixels()));
  }
  const auto& owner = t.subpoint_pixel();
  std::vector<int> act;
  for (int p = 0; p < t.num_subpoints(); ++p) {
    if (x[owner[p]] != 0.0) act.push_back(p);
  }
  Eigen::VectorXd xa(static_cast<Eigen::Index>(act.size()));
  for (std::size_t a = 0; a < act.size(); ++a) xa(static_cast<Eigen::Index>(a)) = x[owner[act[a]]];

  const bool thermal = t.source_kind() == SourceKind::Thermal;
  PairState st;
  const Eigen::MatrixXcd a_act = t.weights()(dets, act) * xa.asDiagonal();
  const Eigen::MatrixXcd c_act = t.kernel()(act, act).cast<cd>() * a_act.transpose();
  st.m = thermal ? Eigen::MatrixXcd(a_act.conjugate() * c_act) : Eigen::MatrixXcd(a_act * c_act);
  if (!with_grad) return st;

  std::vector<int> gq;
  for (std::size_t g = 0; g < grad_pixels.size(); ++g) {
    const int pix = grad_pixels[g];
    if (pix < 0 || pix >= t.num_pixels()) throw GeometryError("gradient pixel out of range");
    for (int q : t.pixel_subpoints(pix)) {
      gq.push_back(q);
      st.gq_pixel.push_back(static_cast<int>(g));
    }
  }
  st.wg = t.weights()(dets, gq);
  st.cg = t.kernel()(gq, act).cast<cd>() * a_act.transpose();
  return st;
}

// d M_ab / d x_g accumulated into grad with complex factor f:
// grad_g += Re(f * dM_ab/dx_g).
void accumulate_pair_gradient(const PairState& st, bool thermal, int a, int b, cd f,
                              GradRow grad) {
  const auto nq = static_cast<Eigen::Index>(st.gq_pixel.size());
  for (Eigen::Index q = 0; q < nq; ++q) {
    cd d;
    if (thermal) {
      d = std::conj(st.wg(a, q)) * st.cg(q, b) + std::conj(st.cg(q, a)) * st.wg(b, q);
    } else {
      d = st.wg(a, q) * st.cg(q, b) + st.cg(q, a) * st.wg(b, q);
    }
    grad(st.gq_pixel[q]) += (f * d).real();
  }
}

// Raw probability (and gradient row) of one tuple from a pair state. `local`
// holds the tuple's detector positions inside the state.
double tuple_probability(const PairState& st, bool thermal, std::span<const int> local,
                         bool with_grad, GradRow grad) {
  const int n = static_cast<int>(local.size());
  if (!thermal) {
    const cd phi = st.m(local[0], local[1]);
    if (with_grad) accumulate_pair_gradient(st, false, local[0], local[1], 2.0 * std::conj(phi), grad);
    return std::norm(phi);
  }
  Eigen::MatrixXcd sub(n, n);
  for (int a = 0; a < n; ++a) {
    for (int b = 0; b < n; ++b) sub(a, b) = st.m(local[a], local[b]);
  }
  const double g = std::max(real_checked(permanent(sub)), 0.0);
  if (with_grad) {
    for (int a = 0; a < n; ++a) {
      for (int b = 0; b < n; ++b) {
        const cd cof = n == 1 ? cd(1.0) : permanent(minor_of(sub, a, b));
        accumulate_pair_gradient(st, true, local[a], local[b], cof, grad);
      }
    }
  }
  return g;
}

}  // namespace

Eigen::MatrixXcd pair_matrix(const CoefficientTensor& tensor, std::span<const double> x,
                             std::span<const int> detectors) {
  std::vector<int> dets(detectors.begin(), detectors.end());
  for (int d : dets) {
    if (d < 0 || d >= tensor.num_detectors()) throw GeometryError("detector index out of range");
  }
  return pair_state(tensor, x, dets, {}, false).m;
}

std::complex<double> thermal_pair_correlation(int i, int j, std::span<const double> x,
                                              const CoefficientTensor& tensor) {
  if (tensor.source_kind() != SourceKind::Thermal) throw ModelError("thermal correlation needs a thermal tensor");
  const std::array<int, 2> dets{i, j};
  return pair_matrix(tensor, x, dets)(0, 1);
}

std::complex<double> permanent(const Eigen::MatrixXcd& m) {
  if (m.rows() != m.cols()) throw ModelError("permanent of a non-square matrix");
  if (m.rows() == 0) return 1.0;
  if (m.rows() > kMaxOrder) throw ModelError("permanent order above the supported maximum");
  std::array<int, kMaxOrder> cols{};
  return permanent_rec(m, cols, 0, 0);
}

double gn_thermal(std::span<const int> tuple, std::span<const double> x,
                  const CoefficientTensor& tensor, int max_order) {
  if (tensor.source_kind() != SourceKind::Thermal) throw ModelError("G^(n) needs a thermal tensor");
  const int n = static_cast<int>(tuple.size());
  if (n < 1) throw ModelError("correlation order must be >= 1");
  if (n > max_order || n > kMaxOrder) {
    throw ModelError("correlation order " + std::to_string(n) + " exceeds the cap of " +
                     std::to_string(std::min(max_order, kMaxOrder)));
  }
  return std::max(real_checked(permanent(pair_matrix(tensor, x, tuple))), 0.0);
}

double spdc_probability(int j, int k, std::span<const double> x, const CoefficientTensor& tensor) {
  if (tensor.source_kind() != SourceKind::Spdc) throw ModelError("coincidence probability needs an SPDC tensor");
  const std::array<int, 2> dets{j, k};
  return std::norm(pair_matrix(tensor, x, dets)(0, 1));
}

DetectorTuple make_detector_tuple(std::span<const int> ids) {
  if (ids.empty() || ids.size() > static_cast<std::size_t>(kMaxOrder)) {
    throw ModelError("tuple order must be in [1, " + std::to_string(kMaxOrder) + "]");
  }
  DetectorTuple t;
  t.order = static_cast<int>(ids.size());
  std::copy(ids.begin(), ids.end(), t.det.begin());
  return t;
}

std::vector<DetectorTuple> form_tuples(const DetectorGrid& detectors,
                                       std::span<const int> detector_ids, int order,
                                       double diameter_cap) {
  if (order < 1 || order > kMaxOrder) {
    throw ModelError("tuple order must be in [1, " + std::to_string(kMaxOrder) + "]");
  }
  for (int d : detector_ids) {
    if (d < 0 || d >= static_cast<int>(detectors.size())) throw GeometryError("detector index out of range");
  }
  const bool capped = diameter_cap > 0.0;
  const auto close = [&](int a, int b) {
    return !capped || norm(detectors.points[a] - detectors.points[b]) <= diameter_cap * (1.0 + 1e-12);
  };
  std::vector<DetectorTuple> out;
  DetectorTuple cur;
  cur.order = order;
  const int nid = static_cast<int>(detector_ids.size());
  std::function<void(int, int)> rec = [&](int depth, int start) {
    if (depth == order) {
      out.push_back(cur);
      return;
    }
    for (int s = start; s < nid; ++s) {
      const int d = detector_ids[s];
      bool ok = true;
      for (int e = 0; e < depth && ok; ++e) ok = close(cur.det[e], d);
      if (!ok) continue;
      cur.det[depth] = d;
      rec(depth + 1, s);
    }
  };
  rec(0, 0);
  return out;
}

namespace {

NormalizedProbabilities normalize_with(std::span<const double> raw, double ps) {
  if (!(ps > 0.0)) throw ModelError("transparent-object probabilities sum to zero");
  NormalizedProbabilities out;
  out.probability.reserve(raw.size());
  double sum = 0.0;
  for (double p : raw) {
    if (p < 0.0) throw ModelError("negative raw probability");
    out.probability.push_back(p / ps);
    sum += p / ps;
  }
  const double p0 = 1.0 - sum;
  if (p0 < -1e-9) {
    throw ModelError("no-counts probability " + std::to_string(p0) +
                     " is negative: probabilities are not monotone in the object");
  }
  out.no_counts = std::max(p0, 0.0);
  return out;
}

}  // namespace

NormalizedProbabilities normalize_probabilities(std::span<const double> raw,
                                                std::span<const double> raw_transparent) {
  if (raw.size() != raw_transparent.size()) throw ModelError("probability vectors differ in length");
  double ps = 0.0;
  for (double p : raw_transparent) {
    if (p < 0.0) throw ModelError("negative raw probability");
    ps += p;
  }
  return normalize_with(raw, ps);
}

ForwardModel::ForwardModel(std::shared_ptr<const CoefficientTensor> tensor,
                           std::vector<DetectorTuple> tuples, std::optional<double> transparent_sum)
    : tensor_(std::move(tensor)), tuples_(std::move(tuples)) {
  if (!tensor_) throw ModelError("forward model without a tensor");
  if (tuples_.empty()) throw ModelError("forward model without detector tuples");
  order_ = tuples_.front().order;
  for (const DetectorTuple& t : tuples_) {
    if (t.order != order_) throw ModelError("detector tuples of mixed order");
    for (int d : t.ids()) {
      if (d < 0 || d >= tensor_->num_detectors()) throw GeometryError("tuple detector out of range");
    }
  }
  if (order_ < 1 || order_ > kMaxOrder) throw ModelError("unsupported correlation order");
  if (tensor_->source_kind() == SourceKind::Spdc && order_ != 2) {
    throw ModelError("SPDC coincidences are second order");
  }
  if (transparent_sum) {
    transparent_sum_ = *transparent_sum;
  } else {
    const std::vector<double> ones(static_cast<std::size_t>(num_pixels()), 1.0);
    const std::vector<double> raw = raw_probabilities(ones);
    transparent_sum_ = std::accumulate(raw.begin(), raw.end(), 0.0);
  }
  if (!(transparent_sum_ > 0.0)) throw ModelError("degenerate geometry: P_S = 0");
}

Evaluation ForwardModel::evaluate(std::span<const double> x, std::span<const int> tuple_ids,
                                  std::span<const int> grad_pixels, bool with_gradient) const {
  // Gather the detectors used by the requested tuples.
  std::vector<int> dets;
  std::vector<int> local_of(static_cast<std::size_t>(tensor_->num_detectors()), -1);
  for (int k : tuple_ids) {
    if (k < 0 || k >= static_cast<int>(tuples_.size())) throw ModelError("tuple index out of range");
    for (int d : tuples_[k].ids()) {
      if (local_of[d] < 0) {
        local_of[d] = static_cast<int>(dets.size());
        dets.push_back(d);
      }
    }
  }
  const bool thermal = tensor_->source_kind() == SourceKind::Thermal;
  const PairState st = pair_state(*tensor_, x, dets, grad_pixels, with_gradient);
  const int nt = static_cast<int>(tuple_ids.size());
  Evaluation ev;
  ev.probability.assign(static_cast<std::size_t>(nt), 0.0);
  ev.gradient = Eigen::MatrixXd::Zero(with_gradient ? nt : 0,
                                      with_gradient ? static_cast<Eigen::Index>(grad_pixels.size()) : 0);
  Eigen::RowVectorXd scratch = Eigen::RowVectorXd::Zero(0);
  const double inv_ps = transparent_sum_ > 0.0 ? 1.0 / transparent_sum_ : 1.0;

#pragma omp parallel for schedule(static) firstprivate(scratch)
  for (int r = 0; r < nt; ++r) {
    const DetectorTuple& t = tuples_[tuple_ids[r]];
    std::array<int, kMaxOrder> local{};
    for (int a = 0; a < t.order; ++a) local[a] = local_of[t.det[a]];
    const std::span<const int> loc(local.data(), static_cast<std::size_t>(t.order));
    if (with_gradient) {
      auto row = ev.gradient.row(r);
      ev.probability[r] = tuple_probability(st, thermal, loc, true, row);
      row *= inv_ps;
    } else {
      ev.probability[r] = tuple_probability(st, thermal, loc, false, scratch);
    }
    ev.probability[r] *= inv_ps;
  }
  return ev;
}

std::vector<double> ForwardModel::raw_probabilities(std::span<const double> x) const {
  std::vector<int> all(tuples_.size());
  std::iota(all.begin(), all.end(), 0);
  const double ps = transparent_sum_;
  // evaluate() divides by P_S; undo it (P_S is 0 during construction).
  Evaluation ev = evaluate(x, all, {}, false);
  if (ps > 0.0) {
    for (double& p : ev.probability) p *= ps;
  }
  return ev.probability;
}

NormalizedProbabilities ForwardModel::probabilities(std::span<const double> x) const {
  return normalize_with(raw_probabilities(x), transparent_sum_);
}

ProbabilityJacobian ForwardModel::jacobian(std::span<const double> x) const {
  std::vector<int> all(tuples_.size());
  std::iota(all.begin(), all.end(), 0);
  std::vector<int> pix(static_cast<std::size_t>(num_pixels()));
  std::iota(pix.begin(), pix.end(), 0);
  Evaluation ev = evaluate(x, all, pix, true);
  ProbabilityJacobian out;
  double sum = 0.0;
  for (double p : ev.probability) sum += p;
  const double p0 = 1.0 - sum;
  if (p0 < -1e-9) throw ModelError("no-counts probability is negative: probabilities are not monotone");
  out.probability = std::move(ev.probability);
  out.no_counts = std::max(p0, 0.0);
  out.no_counts_gradient = -ev.gradient.colwise().sum().transpose();
  out.gradient = std::move(ev.gradient);
  return out;
}

Eigen::VectorXd probability_gradient(int k, std::span<const double> x, const ForwardModel& model) {
  const int nt = static_cast<int>(model.tuples().size());
  if (k < 0 || k > nt) throw ModelError("outcome index out of range");
  if (k == nt) return model.jacobian(x).no_counts_gradient;
  std::vector<int> pix(static_cast<std::size_t>(model.num_pixels()));
  std::iota(pix.begin(), pix.end(), 0);
  const std::array<int, 1> ids{k};
  return model.evaluate(x, ids, pix, true).gradient.row(0).transpose();
}

}  // namespace qimg
