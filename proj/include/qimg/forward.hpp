#pragma once

// Forward model for n-th order intensity correlation measurements.
//
// A CoefficientTensor holds the pairwise coefficients D^(ij)(l, m) for one
// (geometry, source, pixelization) triple in factored form:
//
//   D^(ij)(l, m) = sum_{Q in m, P in l} conj(W_iQ) K_QP W_jP     (thermal)
//   D^(jk)(m1, m2) = sum_{P in m1, Q in m2} W_jP L_PQ W_kQ       (SPDC)
//
// where P, Q run over quadrature sub-points of the pixels, W_iP is the
// quadrature weight times h(s_P, r_i) and K / L is the source kernel. The
// small-pixel form is the special case of one sub-point per pixel with
// weight equal to the pixel measure.
//
// Detection probabilities are polynomials in the transmissions:
//   thermal: p_k = sum over permutations of products of I_ij   (a permanent)
//   SPDC:    p_jk = |Phi_jk|^2
// They are normalized by P_S, the sum of all raw probabilities for a fully
// transparent object, and completed by the no-counts probability P_0.

#include <array>
#include <complex>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "qimg/optics.hpp"
#include "qimg/source.hpp"

namespace qimg {

inline constexpr int kMaxOrder = 4;

enum class PixelIntegration : std::uint8_t { SmallPixel = 0, GaussLegendre = 1 };

struct TensorOptions {
  PixelIntegration integration = PixelIntegration::GaussLegendre;
  int quadrature_points = 3;  ///< per pixel per axis, GaussLegendre only

  /// Gauss-Legendre (q = 3) for lines, small-pixel for 2D grids.
  static TensorOptions defaults_for(const ObjectModel& obj);
};

/// Gauss-Legendre nodes and weights on [-1/2, 1/2] (weights sum to 1).
struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};
QuadratureRule gauss_legendre_unit(int points);

class CoefficientTensor {
 public:
  static CoefficientTensor build(const ObjectModel& geometry, const ImagingSystem& sys,
                                 const SourceModel& src, const DetectorGrid& detectors,
                                 TensorOptions options);

  CoefficientTensor(SourceKind kind, TensorOptions options, int num_pixels,
                    Eigen::MatrixXcd weights, Eigen::MatrixXd kernel,
                    std::vector<int> subpoint_pixel);

  SourceKind source_kind() const { return kind_; }
  const TensorOptions& options() const { return options_; }
  int num_detectors() const { return static_cast<int>(weights_.rows()); }
  int num_pixels() const { return num_pixels_; }
  int num_subpoints() const { return static_cast<int>(weights_.cols()); }

  /// detectors x sub-points
  const Eigen::MatrixXcd& weights() const { return weights_; }
  /// sub-points x sub-points, symmetric
  const Eigen::MatrixXd& kernel() const { return kernel_; }
  const std::vector<int>& subpoint_pixel() const { return subpoint_pixel_; }
  const std::vector<int>& pixel_subpoints(int pixel) const { return pixel_subpoints_[pixel]; }

  /// D^(ij)(l, m) for thermal tensors, D^(ij)(l, m) of the two-photon
  /// amplitude for SPDC tensors.
  std::complex<double> pair(int i, int j, int l, int m) const;

 private:
  SourceKind kind_;
  TensorOptions options_;
  int num_pixels_;
  Eigen::MatrixXcd weights_;
  Eigen::MatrixXd kernel_;
  std::vector<int> subpoint_pixel_;
  std::vector<std::vector<int>> pixel_subpoints_;
};

/// Thermal coefficient D^(ij)(l, m) evaluated directly by quadrature over the
/// two pixels, without building a tensor. Rejects SPDC sources.
std::complex<double> thermal_pair_coeff(int i, int j, int l, int m, const ObjectModel& geometry,
                                        const ImagingSystem& sys, const SourceModel& src,
                                        const DetectorGrid& detectors, TensorOptions options);

/// SPDC coefficient D^(jk)(m1, m2) evaluated directly by quadrature. Rejects
/// thermal sources.
std::complex<double> spdc_pair_coeff(int j, int k, int m1, int m2, const ObjectModel& geometry,
                                     const ImagingSystem& sys, const SourceModel& src,
                                     const DetectorGrid& detectors, TensorOptions options);

/// Matrix of pairwise quantities over a detector subset: I_ab for thermal
/// tensors, Phi_ab for SPDC tensors.
Eigen::MatrixXcd pair_matrix(const CoefficientTensor& tensor, std::span<const double> x,
                             std::span<const int> detectors);

/// I_ij = sum_{l,m} D^(ij)(l, m) x_l^* x_m.
std::complex<double> thermal_pair_correlation(int i, int j, std::span<const double> x,
                                              const CoefficientTensor& tensor);

/// Permanent by explicit enumeration of all n! permutations.
std::complex<double> permanent(const Eigen::MatrixXcd& m);

/// n-th order thermal correlation G^(n) at a detector tuple (raw scale).
double gn_thermal(std::span<const int> tuple, std::span<const double> x,
                  const CoefficientTensor& tensor, int max_order = kMaxOrder);

/// Raw SPDC coincidence probability |Phi_jk|^2.
double spdc_probability(int j, int k, std::span<const double> x, const CoefficientTensor& tensor);

struct DetectorTuple {
  std::array<int, kMaxOrder> det{};
  int order = 0;

  std::span<const int> ids() const { return {det.data(), static_cast<std::size_t>(order)}; }
  friend bool operator==(const DetectorTuple&, const DetectorTuple&) = default;
};

DetectorTuple make_detector_tuple(std::span<const int> ids);

/// All nondecreasing index tuples of the given order drawn from `detector_ids`
/// whose pairwise image-plane distances are <= diameter_cap (a non-positive
/// cap disables the restriction). Repeated detectors are allowed.
std::vector<DetectorTuple> form_tuples(const DetectorGrid& detectors,
                                       std::span<const int> detector_ids, int order,
                                       double diameter_cap);

struct NormalizedProbabilities {
  std::vector<double> probability;  ///< p_k / P_S
  double no_counts = 0.0;           ///< P_0
};

/// p_k / P_S with P_S = sum of the transparent-object probabilities, and
/// P_0 = 1 - sum. Throws ModelError when P_S = 0 or P_0 < -1e-9.
NormalizedProbabilities normalize_probabilities(std::span<const double> raw,
                                                std::span<const double> raw_transparent);

struct Evaluation {
  std::vector<double> probability;  ///< normalized p_k for the requested tuples
  Eigen::MatrixXd gradient;         ///< tuples x gradient pixels
};

struct ProbabilityJacobian {
  std::vector<double> probability;  ///< normalized p_k, all tuples
  double no_counts = 0.0;
  Eigen::MatrixXd gradient;          ///< tuples x pixels
  Eigen::VectorXd no_counts_gradient;  ///< dP_0/dx
};

/// Normalized detection probabilities and their analytic gradients for a fixed
/// tuple set over one tensor.
class ForwardModel {
 public:
  /// P_S is computed from the tensor's own transparent object unless
  /// `transparent_sum` supplies it (used when the model covers a padded grid).
  ForwardModel(std::shared_ptr<const CoefficientTensor> tensor, std::vector<DetectorTuple> tuples,
               std::optional<double> transparent_sum = std::nullopt);

  const CoefficientTensor& tensor() const { return *tensor_; }
  std::shared_ptr<const CoefficientTensor> tensor_ptr() const { return tensor_; }
  const std::vector<DetectorTuple>& tuples() const { return tuples_; }
  int order() const { return order_; }
  int num_pixels() const { return tensor_->num_pixels(); }
  double transparent_sum() const { return transparent_sum_; }

  std::vector<double> raw_probabilities(std::span<const double> x) const;

  /// Normalized probabilities for a subset of tuples plus gradients with respect
  /// to the listed pixels. All pixels contribute to the probabilities through x.
  Evaluation evaluate(std::span<const double> x, std::span<const int> tuple_ids,
                      std::span<const int> grad_pixels, bool with_gradient) const;

  NormalizedProbabilities probabilities(std::span<const double> x) const;
  ProbabilityJacobian jacobian(std::span<const double> x) const;

 private:
  std::shared_ptr<const CoefficientTensor> tensor_;
  std::vector<DetectorTuple> tuples_;
  int order_ = 0;
  double transparent_sum_ = 0.0;
};

/// dp_k/dx for outcome k; k == tuples().size() selects the no-counts outcome.
Eigen::VectorXd probability_gradient(int k, std::span<const double> x, const ForwardModel& model);

}  // namespace qimg
