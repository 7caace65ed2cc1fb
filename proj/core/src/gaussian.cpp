#include "rmrouter/gaussian.hpp"

#include <cmath>
#include <string>
#include <utility>

#include <Eigen/Cholesky>
#include <nlohmann/json.hpp>

#include "rmrouter/errors.hpp"
#include "rmrouter/serialization.hpp"

namespace rmrouter {

namespace {

constexpr double kSymmetryTolerance = 1e-10;

void check_shapes(const Eigen::VectorXd& mean, const Eigen::MatrixXd& covariance) {
  if (covariance.rows() != covariance.cols()) {
    throw DimError("covariance must be square, got " + std::to_string(covariance.rows()) + "x" +
                   std::to_string(covariance.cols()));
  }
  if (covariance.rows() != mean.size()) {
    throw DimError("mean has length " + std::to_string(mean.size()) + " but covariance is " +
                   std::to_string(covariance.rows()) + "x" + std::to_string(covariance.cols()));
  }
}

void check_noise(double noise_variance) {
  if (!(noise_variance > 0.0) || !std::isfinite(noise_variance)) {
    throw ConfigError("noise variance must be positive and finite, got " +
                      std::to_string(noise_variance));
  }
}

void check_symmetric(const Eigen::MatrixXd& m, const char* what) {
  const double asym = m.size() == 0 ? 0.0 : (m - m.transpose()).cwiseAbs().maxCoeff();
  if (!(asym <= kSymmetryTolerance)) {
    throw ConfigError(std::string(what) + " is not symmetric (max asymmetry " +
                      std::to_string(asym) + ")");
  }
}

// Index of the first leading principal minor that is not positive-definite.
std::size_t first_failing_pivot(const Eigen::MatrixXd& m) {
  for (Eigen::Index k = 1; k <= m.rows(); ++k) {
    Eigen::LLT<Eigen::MatrixXd> llt(m.topLeftCorner(k, k));
    if (llt.info() != Eigen::Success) {
      return static_cast<std::size_t>(k - 1);
    }
  }
  return static_cast<std::size_t>(m.rows());
}

}  // namespace

ArmPosterior::ArmPosterior(Eigen::VectorXd mean, Eigen::MatrixXd covariance,
                           double noise_variance, std::uint64_t update_count)
    : mean_(std::move(mean)),
      covariance_(std::move(covariance)),
      noise_variance_(noise_variance),
      update_count_(update_count) {
  check_shapes(mean_, covariance_);
  check_noise(noise_variance_);
  check_symmetric(covariance_, "covariance");
  factorize();
  if (factor_) {
    const Eigen::MatrixXd& l = *factor_;
    const Eigen::MatrixXd identity = Eigen::MatrixXd::Identity(dim(), dim());
    Eigen::MatrixXd linv = l.triangularView<Eigen::Lower>().solve(identity);
    precision_ = linv.transpose() * linv;
    precision_ = 0.5 * (precision_ + precision_.transpose());
  }
}

ArmPosterior::ArmPosterior(Eigen::VectorXd mean, Eigen::MatrixXd covariance,
                           Eigen::MatrixXd precision, double noise_variance,
                           std::uint64_t update_count)
    : mean_(std::move(mean)),
      covariance_(std::move(covariance)),
      precision_(std::move(precision)),
      noise_variance_(noise_variance),
      update_count_(update_count) {
  check_shapes(mean_, covariance_);
  check_noise(noise_variance_);
  check_symmetric(covariance_, "covariance");
  if (precision_.rows() != covariance_.rows() || precision_.cols() != covariance_.cols()) {
    throw DimError("precision and covariance shapes differ");
  }
  check_symmetric(precision_, "precision");
  factorize();
}

ArmPosterior ArmPosterior::point_mass(Eigen::VectorXd mean, double noise_variance) {
  check_noise(noise_variance);
  ArmPosterior p;
  const Eigen::Index d = mean.size();
  p.mean_ = std::move(mean);
  p.covariance_ = Eigen::MatrixXd::Zero(d, d);
  p.noise_variance_ = noise_variance;
  p.zero_variance_ = true;
  return p;
}

void ArmPosterior::factorize() {
  Eigen::LLT<Eigen::MatrixXd> llt(covariance_);
  if (llt.info() == Eigen::Success) {
    factor_ = Eigen::MatrixXd(llt.matrixL());
    return;
  }
  const Eigen::MatrixXd jittered =
      covariance_ + kCholeskyJitter * Eigen::MatrixXd::Identity(dim(), dim());
  Eigen::LLT<Eigen::MatrixXd> retry(jittered);
  if (retry.info() == Eigen::Success) {
    factor_ = Eigen::MatrixXd(retry.matrixL());
    return;
  }
  failed_pivot_ = first_failing_pivot(jittered);
}

ObservationBatch::ObservationBatch(std::vector<Eigen::VectorXd> contexts,
                                   std::vector<double> rewards)
    : contexts_(std::move(contexts)), rewards_(std::move(rewards)) {
  if (contexts_.size() != rewards_.size()) {
    throw DimError("observation batch has " + std::to_string(contexts_.size()) +
                   " contexts but " + std::to_string(rewards_.size()) + " rewards");
  }
}

void ObservationBatch::add(Eigen::VectorXd context, double reward) {
  contexts_.push_back(std::move(context));
  rewards_.push_back(reward);
}

ArmPosterior make_prior(Eigen::Index d, const Eigen::VectorXd& prior_mean,
                        double prior_variance, double noise_variance) {
  if (d < 1) {
    throw ConfigError("dimension must be at least 1");
  }
  if (!(prior_variance > 0.0) || !std::isfinite(prior_variance)) {
    throw ConfigError("prior variance must be positive, got " + std::to_string(prior_variance));
  }
  check_noise(noise_variance);
  if (prior_mean.size() != d) {
    throw DimError("prior mean has length " + std::to_string(prior_mean.size()) +
                   ", expected " + std::to_string(d));
  }
  const Eigen::MatrixXd identity = Eigen::MatrixXd::Identity(d, d);
  return ArmPosterior(prior_mean, prior_variance * identity, identity / prior_variance,
                      noise_variance, 0);
}

Eigen::VectorXd sample_weight(const ArmPosterior& posterior, Rng& rng) {
  if (posterior.zero_variance()) {
    return posterior.mean();
  }
  const Eigen::MatrixXd* l = posterior.cholesky_factor();
  if (l == nullptr) {
    const std::size_t pivot = posterior.failed_pivot().value_or(0);
    throw NonPsdError(pivot, "covariance is not positive-definite: Cholesky pivot " +
                                 std::to_string(pivot) + " is not positive");
  }
  const Eigen::VectorXd z = standard_normal_vector(posterior.dim(), rng);
  return posterior.mean() + l->triangularView<Eigen::Lower>() * z;
}

ArmPosterior posterior_update(const ArmPosterior& posterior, const ObservationBatch& batch) {
  const Eigen::Index d = posterior.dim();
  for (const auto& h : batch.contexts()) {
    if (h.size() != d) {
      throw DimError("context has length " + std::to_string(h.size()) + ", posterior has d=" +
                     std::to_string(d));
    }
  }
  if (batch.empty()) {
    return posterior;
  }
  if (posterior.zero_variance()) {
    throw NumericalError("a zero-variance posterior cannot be updated");
  }
  if (posterior.precision().size() == 0) {
    throw NumericalError("posterior covariance is not invertible");
  }

  const double inv_noise = 1.0 / posterior.noise_variance();
  Eigen::MatrixXd precision = posterior.precision();
  Eigen::VectorXd rhs = posterior.precision() * posterior.mean();
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Eigen::VectorXd& h = batch.contexts()[i];
    precision.noalias() += inv_noise * (h * h.transpose());
    rhs.noalias() += (inv_noise * batch.rewards()[i]) * h;
  }

  Eigen::LLT<Eigen::MatrixXd> llt(precision);
  if (llt.info() != Eigen::Success) {
    precision += kCholeskyJitter * Eigen::MatrixXd::Identity(d, d);
    llt.compute(precision);
    if (llt.info() != Eigen::Success) {
      throw NumericalError("precision matrix is not positive-definite after regularization");
    }
  }
  Eigen::VectorXd mean = llt.solve(rhs);
  Eigen::MatrixXd covariance = llt.solve(Eigen::MatrixXd::Identity(d, d));
  covariance = 0.5 * (covariance + covariance.transpose());
  return ArmPosterior(std::move(mean), std::move(covariance), std::move(precision),
                      posterior.noise_variance(), posterior.update_count() + batch.size());
}

nlohmann::json to_json(const ArmPosterior& posterior) {
  nlohmann::json doc;
  doc["kind"] = "arm_posterior";
  doc["version"] = kPosteriorFormatVersion;
  doc["d"] = posterior.dim();
  doc["mean"] = io::vector_to_json(posterior.mean());
  doc["covariance"] = io::matrix_to_row_major(posterior.covariance());
  if (posterior.precision().size() != 0) {
    doc["precision"] = io::matrix_to_row_major(posterior.precision());
  }
  doc["noise_variance"] = posterior.noise_variance();
  doc["update_count"] = posterior.update_count();
  doc["zero_variance"] = posterior.zero_variance();
  return doc;
}

ArmPosterior arm_posterior_from_json(const nlohmann::json& doc) {
  io::check_document(doc, "arm_posterior", kPosteriorFormatVersion);
  const auto d = io::require(doc, "d").get<Eigen::Index>();
  Eigen::VectorXd mean = io::vector_from_json(io::require(doc, "mean"), "mean");
  if (mean.size() != d) {
    throw FormatError(0, "posterior mean length does not match d");
  }
  const double noise = io::require(doc, "noise_variance").get<double>();
  if (doc.value("zero_variance", false)) {
    return ArmPosterior::point_mass(std::move(mean), noise);
  }
  Eigen::MatrixXd covariance =
      io::matrix_from_row_major(io::require(doc, "covariance"), d, d, "covariance");
  const auto count = io::require(doc, "update_count").get<std::uint64_t>();
  if (doc.contains("precision")) {
    Eigen::MatrixXd precision =
        io::matrix_from_row_major(doc["precision"], d, d, "precision");
    return ArmPosterior(std::move(mean), std::move(covariance), std::move(precision), noise,
                        count);
  }
  return ArmPosterior(std::move(mean), std::move(covariance), noise, count);
}

}  // namespace rmrouter
