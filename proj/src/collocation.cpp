#include "bfstar/collocation.hpp"

#include "bfstar/errors.hpp"

#include <lapacke.h>

#include <algorithm>
#include <cmath>
#include <string>

namespace bfstar {

std::atomic<std::size_t> FactoredSystem::factorizations_{0};

Mesh::Mesh(std::vector<double> nodes) : nodes_(std::move(nodes)) {
  if (nodes_.size() < 3) throw DomainError("mesh needs at least two cells");
  for (std::size_t i = 0; i + 1 < nodes_.size(); ++i) {
    if (!std::isfinite(nodes_[i]) || !(nodes_[i + 1] > nodes_[i]))
      throw DomainError("mesh nodes must be finite and strictly increasing");
  }
}

std::size_t Mesh::cell_of(double x) const {
  auto it = std::upper_bound(nodes_.begin(), nodes_.end(), x);
  if (it == nodes_.begin()) return 0;
  const auto idx = static_cast<std::size_t>(it - nodes_.begin()) - 1;
  return std::min(idx, cells() - 1);
}

double Mesh::collocation_point(std::size_t k) const {
  if (k >= collocation_count()) throw DomainError("collocation index out of range");
  const std::size_t j = k / 2;
  if (k % 2 == 0) return nodes_[j];
  return 0.5 * (nodes_[j] + nodes_[j + 1]);
}

std::vector<double> Mesh::collocation_points() const {
  std::vector<double> pts(collocation_count());
  for (std::size_t k = 0; k < pts.size(); ++k) pts[k] = collocation_point(k);
  return pts;
}

Mesh build_mesh(double a, double b, std::size_t n_cells, Grading grading) {
  if (!std::isfinite(a) || !std::isfinite(b) || !(b > a))
    throw DomainError("mesh interval must satisfy a < b");
  if (n_cells < 2) throw DomainError("mesh needs at least two cells");

  std::vector<double> widths(n_cells, 1.0);
  if (grading.kind == Grading::Kind::Geometric) {
    if (!(grading.ratio > 0.0) || !std::isfinite(grading.ratio))
      throw DomainError("mesh grading ratio must be positive");
    for (std::size_t k = 1; k < n_cells; ++k) widths[k] = widths[k - 1] * grading.ratio;
    if (grading.toward == Grading::Toward::Right) std::reverse(widths.begin(), widths.end());
  }
  double total = 0.0;
  for (double w : widths) total += w;

  std::vector<double> nodes(n_cells + 1);
  nodes[0] = a;
  double acc = 0.0;
  for (std::size_t k = 0; k < n_cells; ++k) {
    acc += widths[k];
    nodes[k + 1] = a + (b - a) * (acc / total);
  }
  nodes[n_cells] = b;
  return Mesh(std::move(nodes));
}

namespace {

// Hermite basis on [0,1] for (y_j, h y'_j, y_{j+1}, h y'_{j+1}).
struct Basis {
  double v[4];
  double d[4];
};

Basis hermite_basis(double t) {
  const double t2 = t * t;
  const double t3 = t2 * t;
  return {{2 * t3 - 3 * t2 + 1, t3 - 2 * t2 + t, -2 * t3 + 3 * t2, t3 - t2},
          {6 * t2 - 6 * t, 3 * t2 - 4 * t + 1, -6 * t2 + 6 * t, 3 * t2 - 2 * t}};
}

const Basis kMid = hermite_basis(0.5);

HermiteGridFunction::Point eval_cell(const Eigen::MatrixXd& vals, const Eigen::MatrixXd& ders,
                                     std::size_t j, double h, const Basis& B) {
  HermiteGridFunction::Point p;
  p.value = B.v[0] * vals.row(j).transpose() + (B.v[1] * h) * ders.row(j).transpose() +
            B.v[2] * vals.row(j + 1).transpose() + (B.v[3] * h) * ders.row(j + 1).transpose();
  p.derivative = (B.d[0] / h) * vals.row(j).transpose() + B.d[1] * ders.row(j).transpose() +
                 (B.d[2] / h) * vals.row(j + 1).transpose() + B.d[3] * ders.row(j + 1).transpose();
  return p;
}

} // namespace

HermiteGridFunction::HermiteGridFunction(MeshPtr mesh, Eigen::MatrixXd values,
                                         Eigen::MatrixXd derivatives)
    : mesh_(std::move(mesh)), values_(std::move(values)), derivatives_(std::move(derivatives)) {
  if (!mesh_) throw DomainError("grid function needs a mesh");
  const auto rows = static_cast<Eigen::Index>(mesh_->nodes().size());
  if (values_.rows() != rows || derivatives_.rows() != rows ||
      values_.cols() != derivatives_.cols())
    throw DomainError("grid function shape does not match its mesh");
}

HermiteGridFunction::HermiteGridFunction(MeshPtr mesh, std::size_t dim)
    : HermiteGridFunction(mesh,
                          Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(mesh->nodes().size()),
                                                static_cast<Eigen::Index>(dim)),
                          Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(mesh->nodes().size()),
                                                static_cast<Eigen::Index>(dim))) {}

HermiteGridFunction::Point HermiteGridFunction::evaluate(double x) const {
  const Mesh& m = *mesh_;
  if (!(x >= m.a() && x <= m.b()))
    throw DomainError("evaluation point " + std::to_string(x) + " outside the mesh");
  const std::size_t j = m.cell_of(x);
  const double h = m.width(j);
  const double t = (x - m.nodes()[j]) / h;
  if (t == 0.0) return {values_.row(j).transpose(), derivatives_.row(j).transpose()};
  if (t == 1.0) return {values_.row(j + 1).transpose(), derivatives_.row(j + 1).transpose()};
  return eval_cell(values_, derivatives_, j, h, hermite_basis(t));
}

HermiteGridFunction::Point HermiteGridFunction::at_collocation(std::size_t k) const {
  const Mesh& m = *mesh_;
  if (k >= m.collocation_count()) throw DomainError("collocation index out of range");
  const auto j = static_cast<Eigen::Index>(k / 2);
  if (k % 2 == 0) return {values_.row(j).transpose(), derivatives_.row(j).transpose()};
  return eval_cell(values_, derivatives_, k / 2, m.width(k / 2), kMid);
}

HermiteGridFunction& HermiteGridFunction::axpy(double alpha, const HermiteGridFunction& other) {
  if (other.values_.rows() != values_.rows() || other.dim() != dim())
    throw DomainError("axpy on incompatible grid functions");
  values_ += alpha * other.values_;
  derivatives_ += alpha * other.derivatives_;
  return *this;
}

HermiteGridFunction::Point evaluate(const HermiteGridFunction& f, double x) {
  return f.evaluate(x);
}

BoundaryRows BoundaryRows::selector(const std::vector<int>& mask) {
  std::vector<std::size_t> picked;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i] != 0) picked.push_back(i);
  BoundaryRows rows;
  rows.value = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(picked.size()),
                                     static_cast<Eigen::Index>(mask.size()));
  for (std::size_t r = 0; r < picked.size(); ++r)
    rows.value(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(picked[r])) = 1.0;
  return rows;
}

FactoredSystem::FactoredSystem(FactoredSystem&& o) noexcept
    : mesh_(std::move(o.mesh_)), bvp_(std::move(o.bvp_)), dim_(o.dim_), size_(o.size_),
      kl_(o.kl_), ku_(o.ku_), band_(std::move(o.band_)), pivots_(std::move(o.pivots_)),
      rcond_(o.rcond_), back_substitutions_(o.back_substitutions_.load()) {}

FactoredSystem& FactoredSystem::operator=(FactoredSystem&& o) noexcept {
  mesh_ = std::move(o.mesh_);
  bvp_ = std::move(o.bvp_);
  dim_ = o.dim_;
  size_ = o.size_;
  kl_ = o.kl_;
  ku_ = o.ku_;
  band_ = std::move(o.band_);
  pivots_ = std::move(o.pivots_);
  rcond_ = o.rcond_;
  back_substitutions_.store(o.back_substitutions_.load());
  return *this;
}

namespace {

// Row layout: left BC rows, then n rows per collocation point in point order
// (node 0, midpoint 0, node 1, ...), then right BC rows.
// Column layout: node j holds values at 2nj and derivatives at 2nj + n.
struct Layout {
  std::size_t n, cells, nl, nr;
  std::size_t size() const { return 2 * n * (cells + 1); }
  std::size_t point_row(std::size_t k) const { return nl + n * k; }
  std::size_t right_row() const { return nl + n * (2 * cells + 1); }
  std::size_t val(std::size_t node) const { return 2 * n * node; }
  std::size_t der(std::size_t node) const { return 2 * n * node + n; }
};

template <class Sink>
void visit_entries(const LinearBVP& bvp, const Mesh& mesh, const Layout& L, Sink&& put) {
  const std::size_t n = L.n;
  const auto ni = static_cast<Eigen::Index>(n);
  auto put_bc = [&](const BoundaryRows& bc, std::size_t row0, std::size_t node) {
    for (std::size_t r = 0; r < bc.count(); ++r) {
      for (std::size_t c = 0; c < n; ++c) {
        put(row0 + r, L.val(node) + c, bc.value(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)));
        if (bc.derivative.cols() > 0)
          put(row0 + r, L.der(node) + c,
              bc.derivative(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)));
      }
    }
  };
  put_bc(bvp.left, 0, 0);

  for (std::size_t k = 0; k < mesh.collocation_count(); ++k) {
    const Eigen::MatrixXd Q = bvp.coefficient(k, mesh.collocation_point(k));
    if (Q.rows() != ni || Q.cols() != ni) throw DomainError("coefficient matrix has wrong shape");
    const std::size_t row0 = L.point_row(k);
    const std::size_t j = k / 2;
    if (k % 2 == 0) {
      // y'_j - Q y_j = r at the node.
      for (std::size_t i = 0; i < n; ++i) {
        put(row0 + i, L.der(j) + i, 1.0);
        for (std::size_t m = 0; m < n; ++m)
          put(row0 + i, L.val(j) + m, -Q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(m)));
      }
      continue;
    }
    const double h = mesh.width(j);
    const std::size_t off[4] = {L.val(j), L.der(j), L.val(j + 1), L.der(j + 1)};
    const double wv[4] = {kMid.v[0], kMid.v[1] * h, kMid.v[2], kMid.v[3] * h};
    const double wd[4] = {kMid.d[0] / h, kMid.d[1], kMid.d[2] / h, kMid.d[3]};
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < 4; ++c) {
        put(row0 + i, off[c] + i, wd[c]);
        for (std::size_t m = 0; m < n; ++m)
          put(row0 + i, off[c] + m,
              -wv[c] * Q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(m)));
      }
    }
  }

  put_bc(bvp.right, L.right_row(), L.cells);
}

} // namespace

FactoredSystem assemble(const LinearBVP& bvp, MeshPtr mesh) {
  if (!mesh) throw DomainError("assemble needs a mesh");
  if (bvp.dim == 0 || !bvp.coefficient) throw DomainError("linear BVP is incomplete");
  const std::size_t n = bvp.dim;
  auto check_bc = [n](const BoundaryRows& bc) {
    if (bc.count() > 0 && static_cast<std::size_t>(bc.value.cols()) != n)
      throw DomainError("boundary rows have the wrong width");
    if (bc.derivative.cols() > 0 &&
        (static_cast<std::size_t>(bc.derivative.cols()) != n || bc.derivative.rows() != bc.value.rows()))
      throw DomainError("boundary derivative rows have the wrong shape");
  };
  check_bc(bvp.left);
  check_bc(bvp.right);
  if (bvp.left.count() + bvp.right.count() != n)
    throw DomainError("expected " + std::to_string(n) + " boundary conditions, got " +
                      std::to_string(bvp.left.count() + bvp.right.count()));

  const Layout L{n, mesh->cells(), bvp.left.count(), bvp.right.count()};
  const std::size_t N = L.size();

  // The structural band is fixed by the layout; derive it from the row ranges.
  std::vector<std::size_t> lo(N, N), hi(N, 0);
  auto mark = [&](std::size_t r, std::size_t c) {
    lo[r] = std::min(lo[r], c);
    hi[r] = std::max(hi[r], c);
  };
  for (std::size_t r = 0; r < L.nl; ++r) {
    mark(r, 0);
    mark(r, 2 * n - 1);
  }
  for (std::size_t k = 0; k < mesh->collocation_count(); ++k)
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t j = k / 2;
      mark(L.point_row(k) + r, L.val(j));
      mark(L.point_row(k) + r, L.der(k % 2 == 0 ? j : j + 1) + n - 1);
    }
  for (std::size_t r = L.right_row(); r < N; ++r) {
    mark(r, L.val(L.cells));
    mark(r, L.der(L.cells) + n - 1);
  }
  int kl = 0, ku = 0;
  for (std::size_t r = 0; r < N; ++r) {
    kl = std::max(kl, static_cast<int>(r) - static_cast<int>(lo[r]));
    ku = std::max(ku, static_cast<int>(hi[r]) - static_cast<int>(r));
  }

  FactoredSystem fs;
  fs.mesh_ = mesh;
  fs.bvp_ = bvp;
  fs.dim_ = n;
  fs.size_ = N;
  fs.kl_ = kl;
  fs.ku_ = ku;
  const std::size_t ldab = static_cast<std::size_t>(2 * kl + ku + 1);
  fs.band_.assign(ldab * N, 0.0);
  std::vector<double> colsum(N, 0.0);

  visit_entries(bvp, *mesh, L, [&](std::size_t r, std::size_t c, double v) {
    if (v == 0.0) return;
    if (!std::isfinite(v)) throw EvaluationError(r, static_cast<double>(c));
    fs.band_[static_cast<std::size_t>(kl + ku) + r - c + c * ldab] += v;
    colsum[c] += std::abs(v);
  });
  const double anorm = *std::max_element(colsum.begin(), colsum.end());

  fs.pivots_.assign(N, 0);
  const auto nn = static_cast<lapack_int>(N);
  const lapack_int info = LAPACKE_dgbtrf(LAPACK_COL_MAJOR, nn, nn, kl, ku, fs.band_.data(),
                                         static_cast<lapack_int>(ldab), fs.pivots_.data());
  FactoredSystem::factorizations_.fetch_add(1);
  if (info > 0) throw FactorizationError(static_cast<std::size_t>(info - 1));
  if (info < 0) throw Error("dgbtrf rejected argument " + std::to_string(-info));

  double rcond = 0.0;
  if (LAPACKE_dgbcon(LAPACK_COL_MAJOR, '1', nn, kl, ku, fs.band_.data(),
                     static_cast<lapack_int>(ldab), fs.pivots_.data(), anorm, &rcond) == 0)
    fs.rcond_ = rcond;
  return fs;
}

Eigen::VectorXd FactoredSystem::right_hand_side(const LinearProblem& p) const {
  const Mesh& mesh = *mesh_;
  const Layout L{dim_, mesh.cells(), bvp_.left.count(), bvp_.right.count()};
  const auto n = static_cast<Eigen::Index>(dim_);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(size_));

  auto take = [](const Eigen::VectorXd& d, std::size_t count, const char* side) {
    if (count == 0) return Eigen::VectorXd();
    if (static_cast<std::size_t>(d.size()) != count)
      throw DomainError(std::string(side) + " boundary data has the wrong length");
    return d;
  };
  const Eigen::VectorXd dl = take(p.left_data, L.nl, "left");
  const Eigen::VectorXd dr = take(p.right_data, L.nr, "right");
  if (L.nl > 0) rhs.segment(0, dl.size()) = dl;
  if (L.nr > 0) rhs.segment(static_cast<Eigen::Index>(L.right_row()), dr.size()) = dr;

  if (p.forcing) {
    for (std::size_t k = 0; k < mesh.collocation_count(); ++k) {
      const Eigen::VectorXd r = p.forcing(k, mesh.collocation_point(k));
      if (r.size() != n) throw DomainError("forcing vector has the wrong length");
      rhs.segment(static_cast<Eigen::Index>(L.point_row(k)), n) = r;
    }
  }
  return rhs;
}

std::vector<HermiteGridFunction> FactoredSystem::solve_many(
    const std::vector<LinearProblem>& problems) const {
  if (band_.empty()) throw Error("solve on an unassembled system");
  std::vector<HermiteGridFunction> out;
  if (problems.empty()) return out;

  const auto N = static_cast<Eigen::Index>(size_);
  Eigen::MatrixXd B(N, static_cast<Eigen::Index>(problems.size()));
  for (std::size_t q = 0; q < problems.size(); ++q)
    B.col(static_cast<Eigen::Index>(q)) = right_hand_side(problems[q]);

  const std::size_t ldab = static_cast<std::size_t>(2 * kl_ + ku_ + 1);
  const lapack_int info =
      LAPACKE_dgbtrs(LAPACK_COL_MAJOR, 'N', static_cast<lapack_int>(size_), kl_, ku_,
                     static_cast<lapack_int>(problems.size()), band_.data(),
                     static_cast<lapack_int>(ldab), pivots_.data(), B.data(), static_cast<lapack_int>(N));
  if (info != 0) throw Error("dgbtrs failed with code " + std::to_string(info));
  back_substitutions_.fetch_add(problems.size());

  const auto nodes = static_cast<Eigen::Index>(mesh_->nodes().size());
  const auto n = static_cast<Eigen::Index>(dim_);
  out.reserve(problems.size());
  for (std::size_t q = 0; q < problems.size(); ++q) {
    Eigen::MatrixXd vals(nodes, n), ders(nodes, n);
    const auto col = B.col(static_cast<Eigen::Index>(q));
    for (Eigen::Index j = 0; j < nodes; ++j) {
      vals.row(j) = col.segment(2 * n * j, n).transpose();
      ders.row(j) = col.segment(2 * n * j + n, n).transpose();
    }
    out.emplace_back(mesh_, std::move(vals), std::move(ders));
  }
  return out;
}

double defect_norm(const HermiteGridFunction& y,
                   const std::function<Eigen::VectorXd(double x, const Eigen::VectorXd& y)>& rhs,
                   double scale) {
  const Mesh& m = y.mesh();
  auto sq = [&](std::size_t k) {
    const auto p = y.at_collocation(k);
    return (p.derivative - scale * rhs(m.collocation_point(k), p.value)).squaredNorm();
  };
  double acc = 0.0;
  double left = sq(0);
  for (std::size_t j = 0; j < m.cells(); ++j) {
    const double right = sq(2 * j + 2);
    acc += m.width(j) * (left + 4.0 * sq(2 * j + 1) + right) / 6.0;
    left = right;
  }
  return std::sqrt(acc);
}

} // namespace bfstar
