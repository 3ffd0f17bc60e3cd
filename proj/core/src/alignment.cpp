#include "dtfl/alignment.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

#include "dtfl/errors.hpp"
#include "dtfl/random.hpp"
#include "json.hpp"

namespace dtfl::align {

namespace {

void check_pair(const data::Dataset& real, const data::Dataset& twin) {
  if (real.dim != twin.dim)
    throw InvalidInput("alignment: feature counts differ (" + std::to_string(real.dim) + " vs " +
                       std::to_string(twin.dim) + ")");
  if (real.empty() || twin.empty()) throw InvalidInput("alignment: both datasets must be non-empty");
}

std::vector<double> column_means(const data::Dataset& ds) {
  std::vector<double> mu(ds.dim, 0.0);
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (std::size_t j = 0; j < ds.dim; ++j) mu[j] += ds.row(i)[j];
  for (double& m : mu) m /= static_cast<double>(ds.size());
  return mu;
}

std::vector<double> column_variances(const data::Dataset& ds, const std::vector<double>& mu) {
  std::vector<double> var(ds.dim, 0.0);
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (std::size_t j = 0; j < ds.dim; ++j) {
      const double c = ds.row(i)[j] - mu[j];
      var[j] += c * c;
    }
  for (double& v : var) v /= static_cast<double>(ds.size());
  return var;
}

std::vector<double> project(const data::Dataset& ds, const std::vector<double>& dir) {
  std::vector<double> out(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < ds.dim; ++j) s += ds.row(i)[j] * dir[j];
    out[i] = s;
  }
  return out;
}

double quantile_sorted(const std::vector<double>& sorted, double level) {
  const double n = static_cast<double>(sorted.size());
  const double h = std::clamp(level * n - 0.5, 0.0, n - 1.0);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = h - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace

MomentGaps moment_gaps(const data::Dataset& real, const data::Dataset& twin) {
  check_pair(real, twin);
  const auto mr = column_means(real);
  const auto mt = column_means(twin);
  const auto vr = column_variances(real, mr);
  const auto vt = column_variances(twin, mt);
  MomentGaps g;
  for (std::size_t j = 0; j < real.dim; ++j) {
    g.mean_gap += std::abs(mr[j] - mt[j]);
    g.var_gap += std::abs(vr[j] - vt[j]);
  }
  g.mean_gap /= static_cast<double>(real.dim);
  g.var_gap /= static_cast<double>(real.dim);
  return g;
}

double linear_mmd(const data::Dataset& real, const data::Dataset& twin) {
  check_pair(real, twin);
  const auto mr = column_means(real);
  const auto mt = column_means(twin);
  double s = 0.0;
  for (std::size_t j = 0; j < real.dim; ++j) s += (mr[j] - mt[j]) * (mr[j] - mt[j]);
  return s;
}

std::vector<double> slice_direction(std::size_t dim, std::uint64_t seed, std::size_t index) {
  Rng rng = make_stream(seed, {stream::kSlices, index});
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(dim);
  double norm = 0.0;
  do {
    for (double& x : v) x = normal(rng);
    norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
  } while (norm < 1e-12);
  for (double& x : v) x /= norm;
  return v;
}

double wasserstein1_1d(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw InvalidInput("wasserstein: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const std::size_t levels = std::max(a.size(), b.size());
  double total = 0.0;
  for (std::size_t i = 0; i < levels; ++i) {
    const double q = (static_cast<double>(i) + 0.5) / static_cast<double>(levels);
    total += std::abs(quantile_sorted(a, q) - quantile_sorted(b, q));
  }
  return total / static_cast<double>(levels);
}

double sliced_wasserstein(const data::Dataset& real, const data::Dataset& twin, std::size_t num_projections,
                          std::uint64_t seed) {
  check_pair(real, twin);
  if (num_projections == 0) throw InvalidInput("sliced_wasserstein: need at least one projection");
  double total = 0.0;
  for (std::size_t s = 0; s < num_projections; ++s) {
    const auto dir = slice_direction(real.dim, seed, s);
    total += wasserstein1_1d(project(real, dir), project(twin, dir));
  }
  return total / static_cast<double>(num_projections);
}

PcaProjection pca2(const data::Dataset& real, const data::Dataset& twin) {
  check_pair(real, twin);
  const std::size_t d = real.dim;
  if (d < 2) throw InvalidInput("pca2: need at least two features");
  const std::size_t n = real.size() + twin.size();

  PcaProjection out;
  out.pooled_mean.assign(d, 0.0);
  for (const data::Dataset* ds : {&real, &twin})
    for (std::size_t i = 0; i < ds->size(); ++i)
      for (std::size_t j = 0; j < d; ++j) out.pooled_mean[j] += ds->row(i)[j];
  for (double& m : out.pooled_mean) m /= static_cast<double>(n);

  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  Eigen::VectorXd c(static_cast<Eigen::Index>(d));
  for (const data::Dataset* ds : {&real, &twin})
    for (std::size_t i = 0; i < ds->size(); ++i) {
      for (std::size_t j = 0; j < d; ++j) c(static_cast<Eigen::Index>(j)) = ds->row(i)[j] - out.pooled_mean[j];
      cov.selfadjointView<Eigen::Lower>().rankUpdate(c);
    }
  cov = cov.selfadjointView<Eigen::Lower>();
  cov /= static_cast<double>(n);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericError("pca2: eigendecomposition failed");
  const Eigen::VectorXd& evals = solver.eigenvalues();  // ascending
  const double total = std::max(evals.sum(), 0.0);
  for (int k = 0; k < 2; ++k) {
    const Eigen::Index col = static_cast<Eigen::Index>(d) - 1 - k;
    Eigen::VectorXd v = solver.eigenvectors().col(col);
    for (Eigen::Index j = 0; j < v.size(); ++j) {
      if (std::abs(v(j)) > 1e-12) {
        if (v(j) < 0) v = -v;
        break;
      }
    }
    out.components[k].assign(v.data(), v.data() + v.size());
    out.eigenvalues[k] = std::max(evals(col), 0.0);
    out.explained[k] = total > 0.0 ? out.eigenvalues[k] / total : 0.0;
  }

  auto project_all = [&](const data::Dataset& ds) {
    std::vector<std::array<double, 2>> pts(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i)
      for (int k = 0; k < 2; ++k) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += (ds.row(i)[j] - out.pooled_mean[j]) * out.components[k][j];
        pts[i][k] = s;
      }
    return pts;
  };
  out.real = project_all(real);
  out.twin = project_all(twin);
  return out;
}

AlignmentReport alignment_report(const data::Dataset& real, const data::Dataset& twin,
                                 const AlignmentOptions& options) {
  check_pair(real, twin);
  data::Dataset r = real;
  data::Dataset t = twin;
  if (options.standardize) {
    auto joint = data::standardize_jointly(real, twin);
    r = std::move(joint.a);
    t = std::move(joint.b);
  }
  AlignmentReport rep;
  rep.n_real = r.size();
  rep.n_twin = t.size();
  rep.dim = r.dim;
  const auto gaps = moment_gaps(r, t);
  rep.mean_gap = gaps.mean_gap;
  rep.var_gap = gaps.var_gap;
  rep.mmd = linear_mmd(r, t);
  rep.swd_projections = options.num_projections;
  rep.swd_seed = options.seed;
  rep.swd = sliced_wasserstein(r, t, options.num_projections, options.seed);
  if (r.dim >= 2) rep.pca = pca2(r, t);
  return rep;
}

std::string report_json(const AlignmentReport& report) {
  nlohmann::ordered_json j;
  j["samples"] = {{"real", report.n_real}, {"twin", report.n_twin}};
  j["features"] = report.dim;
  j["mean_gap"] = report.mean_gap;
  j["var_gap"] = report.var_gap;
  j["mmd"] = report.mmd;
  j["swd"] = report.swd;
  j["swd_projections"] = report.swd_projections;
  j["swd_seed"] = report.swd_seed;
  if (!report.pca.components[0].empty()) {
    j["pca_explained_variance"] = {report.pca.explained[0], report.pca.explained[1]};
  }
  return j.dump(2);
}

void write_pca_csv(std::ostream& out, const PcaProjection& pca) {
  out << "component1,component2,source\n";
  out << std::setprecision(17);
  for (const auto& p : pca.real) out << p[0] << ',' << p[1] << ",real\n";
  for (const auto& p : pca.twin) out << p[0] << ',' << p[1] << ",twin\n";
}

}  // namespace dtfl::align
