#ifndef BFSTAR_COLLOCATION_HPP
#define BFSTAR_COLLOCATION_HPP

// Fourth-order C1 cubic Hermite collocation for linear first-order systems
//
//   y'(x) = Q(x) y(x) + r(x),   x in [a, b],
//
// with separated boundary conditions  B_a y(a) + C_a y'(a) = d_a  and
// B_b y(b) + C_b y'(b) = d_b.  The unknowns are the nodal values and nodal
// derivatives of every component. The ODE is collocated at every node (which
// ties each derivative unknown to the equation) and at every cell midpoint,
// i.e. at the three Lobatto points of each cell. This is the Hermite-Simpson
// scheme: fourth order for values and derivatives, at nodes and in between.

#include <Eigen/Core>

#include <atomic>
#include <cstddef>
#include <functional>
#include <memory>
#include <vector>

namespace bfstar {

struct Grading {
  enum class Kind { Uniform, Geometric };
  enum class Toward { Left, Right };

  Kind kind = Kind::Uniform;
  double ratio = 1.0; // width(cell k+1) / width(cell k), away from the refined end
  Toward toward = Toward::Left;

  static Grading uniform() { return {}; }
  static Grading geometric(double ratio, Toward toward = Toward::Left) {
    return {Kind::Geometric, ratio, toward};
  }
};

class Mesh {
public:
  /// Nodes must be strictly increasing with at least three entries.
  explicit Mesh(std::vector<double> nodes);

  const std::vector<double>& nodes() const noexcept { return nodes_; }
  std::size_t cells() const noexcept { return nodes_.size() - 1; }
  double a() const noexcept { return nodes_.front(); }
  double b() const noexcept { return nodes_.back(); }
  double width(std::size_t cell) const { return nodes_[cell + 1] - nodes_[cell]; }

  /// Index of the cell containing x (the last cell for x == b).
  std::size_t cell_of(double x) const;

  /// Collocation point k is node k/2 for even k and the midpoint of cell
  /// (k-1)/2 for odd k.
  std::size_t collocation_count() const noexcept { return 2 * cells() + 1; }
  double collocation_point(std::size_t k) const;
  std::vector<double> collocation_points() const;

private:
  std::vector<double> nodes_;
};

using MeshPtr = std::shared_ptr<const Mesh>;

/// Throws DomainError on a >= b, n_cells < 2 or a non-positive ratio.
Mesh build_mesh(double a, double b, std::size_t n_cells, Grading grading = {});

/// Piecewise cubic Hermite function; rows are nodes, columns components.
class HermiteGridFunction {
public:
  HermiteGridFunction() = default;
  HermiteGridFunction(MeshPtr mesh, Eigen::MatrixXd values, Eigen::MatrixXd derivatives);
  /// Zero function with `dim` components.
  HermiteGridFunction(MeshPtr mesh, std::size_t dim);

  const Mesh& mesh() const { return *mesh_; }
  const MeshPtr& mesh_ptr() const noexcept { return mesh_; }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(values_.cols()); }

  const Eigen::MatrixXd& values() const noexcept { return values_; }
  const Eigen::MatrixXd& derivatives() const noexcept { return derivatives_; }
  Eigen::MatrixXd& values() noexcept { return values_; }
  Eigen::MatrixXd& derivatives() noexcept { return derivatives_; }

  struct Point {
    Eigen::VectorXd value;
    Eigen::VectorXd derivative;
  };

  /// Cubic Hermite evaluation; exact at nodes. Throws outside [a, b].
  Point evaluate(double x) const;
  /// Evaluation at the k-th collocation point of the mesh.
  Point at_collocation(std::size_t k) const;

  Eigen::VectorXd left_value() const { return values_.row(0).transpose(); }
  Eigen::VectorXd right_value() const { return values_.row(values_.rows() - 1).transpose(); }

  /// this += alpha * other (same mesh and dimension).
  HermiteGridFunction& axpy(double alpha, const HermiteGridFunction& other);

private:
  MeshPtr mesh_;
  Eigen::MatrixXd values_;
  Eigen::MatrixXd derivatives_;
};

HermiteGridFunction::Point evaluate(const HermiteGridFunction& f, double x);

/// Boundary rows at one end: value * y + derivative * y' = data. A derivative
/// block with zero columns means "no derivative terms".
struct BoundaryRows {
  Eigen::MatrixXd value;
  Eigen::MatrixXd derivative;

  std::size_t count() const noexcept { return static_cast<std::size_t>(value.rows()); }

  /// Rows of the identity selected by the nonzero entries of `mask`.
  static BoundaryRows selector(const std::vector<int>& mask);
};

struct LinearBVP {
  std::size_t dim = 0;
  /// Q at the k-th collocation point x.
  std::function<Eigen::MatrixXd(std::size_t k, double x)> coefficient;
  BoundaryRows left;
  BoundaryRows right;
};

struct LinearProblem {
  /// r at the k-th collocation point; empty means r = 0.
  std::function<Eigen::VectorXd(std::size_t k, double x)> forcing;
  Eigen::VectorXd left_data;
  Eigen::VectorXd right_data;
};

/// Factorized global collocation matrix for one (mesh, Q, selectors) triple.
/// Immutable after assembly; solve_many may be called from several threads.
class FactoredSystem {
public:
  std::size_t dim() const noexcept { return dim_; }
  std::size_t unknowns() const noexcept { return size_; }
  const MeshPtr& mesh_ptr() const noexcept { return mesh_; }
  const LinearBVP& bvp() const noexcept { return bvp_; }

  /// Reciprocal 1-norm condition estimate of the collocation matrix.
  double rcond() const noexcept { return rcond_; }

  /// Back-substitutes every problem against the one factorization.
  std::vector<HermiteGridFunction> solve_many(const std::vector<LinearProblem>& problems) const;

  std::size_t back_substitutions() const noexcept { return back_substitutions_.load(); }

  /// Process-wide number of factorizations, for instrumentation.
  static std::size_t factorization_count() noexcept { return factorizations_.load(); }

private:
  friend FactoredSystem assemble(const LinearBVP& bvp, MeshPtr mesh);

  Eigen::VectorXd right_hand_side(const LinearProblem& p) const;

  MeshPtr mesh_;
  LinearBVP bvp_;
  std::size_t dim_ = 0;
  std::size_t size_ = 0;
  int kl_ = 0;
  int ku_ = 0;
  std::vector<double> band_;
  std::vector<int> pivots_;
  double rcond_ = 0.0;
  mutable std::atomic<std::size_t> back_substitutions_{0};
  static std::atomic<std::size_t> factorizations_;

public:
  FactoredSystem() = default;
  FactoredSystem(FactoredSystem&& o) noexcept;
  FactoredSystem& operator=(FactoredSystem&& o) noexcept;
};

/// Assembles and LU-factorizes the banded collocation matrix. Throws
/// DomainError on a boundary-row count mismatch and FactorizationError on a
/// zero pivot.
FactoredSystem assemble(const LinearBVP& bvp, MeshPtr mesh);

/// Discrete L2 norm of y' - scale * F(x, y) over the collocation points,
/// weighted by the Simpson rule of each cell.
double defect_norm(const HermiteGridFunction& y,
                   const std::function<Eigen::VectorXd(double x, const Eigen::VectorXd& y)>& rhs,
                   double scale);

} // namespace bfstar

#endif
