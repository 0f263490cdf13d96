#pragma once

// Dictionary baseline: OMP sparse coding, K-SVD training and an ADMM
// solver for   min_a ||y - A a||^2 + lambda ||a||_1   (no 1/2 factor).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "lfr/error.hpp"
#include "lfr/io.hpp"
#include "lfr/lightfield.hpp"
#include "lfr/optics.hpp"

namespace lfr::sparse {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Overcomplete dictionary; columns are unit-norm atoms.
struct Dictionary {
    MatrixXd atoms; // signal_dim x K

    Index dim() const noexcept { return atoms.rows(); }
    Index size() const noexcept { return atoms.cols(); }
};

struct SparseCode {
    VectorXd coef;
    std::size_t sparsity = 0;
    std::vector<double> residual_norms; // after each OMP step, starting with ||y||
};

struct SparseReconConfig {
    double lambda = 0.01;
    double rho = 1.0;
    std::size_t max_iterations = 500;
    double abs_tol = 1e-5;
    double rel_tol = 1e-4;

    void validate() const
    {
        if (!(lambda >= 0.0))
            throw Error("sparse: lambda must be >= 0");
        if (!(rho > 0.0))
            throw Error("sparse: rho must be > 0");
        if (max_iterations == 0)
            throw Error("sparse: max_iterations must be >= 1");
    }
};

/// Flips every atom so its largest-magnitude entry is positive.
inline void canonicalize_signs(MatrixXd& atoms, MatrixXd* codes = nullptr)
{
    for (Index j = 0; j < atoms.cols(); ++j) {
        Index imax = 0;
        atoms.col(j).cwiseAbs().maxCoeff(&imax);
        if (atoms(imax, j) < 0.0) {
            atoms.col(j) *= -1.0;
            if (codes)
                codes->row(j) *= -1.0;
        }
    }
}

// ---------------------------------------------------------------------------
// OMP

/// Greedy coder with a cached Gram matrix G = D^T D.
class OmpCoder {
public:
    explicit OmpCoder(const MatrixXd& atoms)
        : d_(&atoms)
        , gram_(atoms.transpose() * atoms)
    {
    }

    /// `dty` is D^T y, supplied so callers can batch it.
    SparseCode encode(const VectorXd& y, const VectorXd& dty, std::size_t k) const
    {
        const MatrixXd& d = *d_;
        if (y.size() != d.rows())
            throw DimensionError("omp: signal length does not match dictionary");
        if (k > static_cast<std::size_t>(d.cols()))
            throw Error("omp: sparsity exceeds dictionary size");

        SparseCode out;
        out.coef = VectorXd::Zero(d.cols());
        const double ynorm = y.norm();
        out.residual_norms.push_back(ynorm);
        if (ynorm == 0.0 || k == 0)
            return out;

        std::vector<Index> support;
        VectorXd alpha;
        VectorXd corr = dty;
        std::vector<char> used(static_cast<std::size_t>(d.cols()), 0);

        for (std::size_t step = 0; step < k; ++step) {
            Index best = -1;
            double best_abs = 0.0;
            for (Index j = 0; j < corr.size(); ++j) {
                if (used[static_cast<std::size_t>(j)])
                    continue;
                const double a = std::abs(corr[j]);
                if (a > best_abs) {
                    best_abs = a;
                    best = j;
                }
            }
            if (best < 0 || best_abs <= 1e-14 * ynorm)
                break;

            support.push_back(best);
            const Index s = static_cast<Index>(support.size());
            MatrixXd gss(s, s);
            VectorXd rhs(s);
            for (Index a = 0; a < s; ++a) {
                rhs[a] = dty[support[static_cast<std::size_t>(a)]];
                for (Index b = 0; b < s; ++b)
                    gss(a, b) = gram_(support[static_cast<std::size_t>(a)], support[static_cast<std::size_t>(b)]);
            }
            Eigen::LLT<MatrixXd> llt(gss);
            if (llt.info() != Eigen::Success || !(llt.rcond() > 1e-12)) {
                support.pop_back(); // selected subset became rank deficient
                break;
            }
            used[static_cast<std::size_t>(best)] = 1;
            alpha = llt.solve(rhs);

            VectorXd approx = VectorXd::Zero(d.rows());
            for (Index a = 0; a < s; ++a)
                approx.noalias() += alpha[a] * d.col(support[static_cast<std::size_t>(a)]);
            out.residual_norms.push_back((y - approx).norm());

            corr = dty;
            for (Index a = 0; a < s; ++a)
                corr.noalias() -= alpha[a] * gram_.col(support[static_cast<std::size_t>(a)]);
        }
        for (std::size_t a = 0; a < support.size(); ++a)
            out.coef[support[a]] = alpha[static_cast<Index>(a)];
        out.sparsity = support.size();
        return out;
    }

    SparseCode encode(const VectorXd& y, std::size_t k) const { return encode(y, d_->transpose() * y, k); }

    const MatrixXd& gram() const noexcept { return gram_; }

private:
    const MatrixXd* d_;
    MatrixXd gram_;
};

/// k-sparse code of y by orthogonal matching pursuit.
inline SparseCode omp(const Dictionary& dict, const VectorXd& y, std::size_t k)
{
    if (!y.allFinite())
        throw NumericError("omp: non-finite signal");
    return OmpCoder(dict.atoms).encode(y, k);
}

// ---------------------------------------------------------------------------
// K-SVD

struct KsvdOptions {
    std::size_t atoms = 0; // K
    std::size_t sparsity = 5;
    std::size_t iterations = 10;
    std::uint64_t seed = 1;
    std::size_t power_iterations = 50;
};

struct KsvdResult {
    Dictionary dict;
    std::vector<double> objective; // sum ||y - D a||^2 after each iteration
};

namespace detail {

/// Rank-1 approximation e ~ d g^T by alternating least squares started from
/// `d` (the current atom). Each half step is an exact block minimization,
/// so the fit never gets worse than the starting point.
inline void rank1_update(const MatrixXd& e, VectorXd& d, VectorXd& g, std::size_t max_iter)
{
    g = e.transpose() * d;
    for (std::size_t it = 0; it < max_iter; ++it) {
        VectorXd dn = e * g;
        const double nrm = dn.norm();
        if (nrm == 0.0)
            break;
        dn /= nrm;
        const double change = (dn - d).norm();
        d = dn;
        g = e.transpose() * d;
        if (change < 1e-10)
            break;
    }
}

} // namespace detail

/// Trains a K-atom dictionary on the columns of `samples` (signal_dim x n).
inline KsvdResult ksvd_train(const MatrixXd& samples, const KsvdOptions& opt)
{
    const Index dim = samples.rows();
    const Index n = samples.cols();
    const Index kk = static_cast<Index>(opt.atoms);
    if (kk <= 0)
        throw Error("ksvd: number of atoms must be >= 1");
    if (n < kk)
        throw Error("ksvd: " + std::to_string(n) + " samples is fewer than " + std::to_string(kk) + " atoms");
    if (opt.sparsity == 0 || opt.sparsity > opt.atoms)
        throw Error("ksvd: sparsity must lie in [1, K]");
    if (!samples.allFinite())
        throw NumericError("ksvd: non-finite training data");

    std::mt19937_64 rng(opt.seed);
    MatrixXd d(dim, kk);
    {
        std::vector<Index> order(static_cast<std::size_t>(n));
        std::iota(order.begin(), order.end(), Index{0});
        std::shuffle(order.begin(), order.end(), rng);
        std::normal_distribution<double> normal;
        for (Index j = 0; j < kk; ++j) {
            VectorXd a = samples.col(order[static_cast<std::size_t>(j)]);
            if (a.norm() < 1e-12)
                for (auto& v : a)
                    v = normal(rng);
            d.col(j) = a.normalized();
        }
    }
    canonicalize_signs(d);

    MatrixXd codes = MatrixXd::Zero(kk, n); // dense storage of the sparse codes
    MatrixXd residual = samples;            // samples - d * codes
    KsvdResult result;
    double previous = residual.squaredNorm();

    for (std::size_t iter = 0; iter < opt.iterations; ++iter) {
        // Sparse coding; keep the previous code when OMP does not improve it.
        {
            OmpCoder coder(d);
            const MatrixXd dty = d.transpose() * samples;
            for (Index i = 0; i < n; ++i) {
                const VectorXd y = samples.col(i);
                SparseCode c = coder.encode(y, dty.col(i), opt.sparsity);
                const VectorXd r = y - d * c.coef;
                if (r.squaredNorm() <= residual.col(i).squaredNorm()) {
                    codes.col(i) = c.coef;
                    residual.col(i) = r;
                }
            }
        }

        // Atom updates.
        std::vector<Index> unused;
        for (Index j = 0; j < kk; ++j) {
            std::vector<Index> users;
            for (Index i = 0; i < n; ++i)
                if (codes(j, i) != 0.0)
                    users.push_back(i);
            if (users.empty()) {
                unused.push_back(j);
                continue;
            }
            const Index m = static_cast<Index>(users.size());
            MatrixXd e(dim, m);
            for (Index a = 0; a < m; ++a) {
                const Index i = users[static_cast<std::size_t>(a)];
                e.col(a) = residual.col(i) + d.col(j) * codes(j, i);
            }
            VectorXd atom = d.col(j);
            VectorXd g;
            detail::rank1_update(e, atom, g, opt.power_iterations);
            d.col(j) = atom;
            for (Index a = 0; a < m; ++a) {
                const Index i = users[static_cast<std::size_t>(a)];
                codes(j, i) = g[a];
                residual.col(i) = e.col(a) - atom * g[a];
            }
        }

        // Re-seed unused atoms from the worst represented samples.
        if (!unused.empty()) {
            std::vector<Index> order(static_cast<std::size_t>(n));
            std::iota(order.begin(), order.end(), Index{0});
            VectorXd err = residual.colwise().squaredNorm().transpose();
            std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return err[a] > err[b]; });
            std::size_t next = 0;
            for (Index j : unused) {
                while (next < order.size() && err[order[next]] <= 1e-24)
                    ++next;
                if (next >= order.size())
                    break;
                d.col(j) = residual.col(order[next++]).normalized();
            }
        }

        for (Index j = 0; j < kk; ++j) {
            const double nrm = d.col(j).norm();
            if (nrm > 0.0 && std::abs(nrm - 1.0) > 0.0) {
                d.col(j) /= nrm;
                codes.row(j) *= nrm;
            }
        }
        canonicalize_signs(d, &codes);

        const double obj = residual.squaredNorm();
        if (obj > previous * (1.0 + 1e-9) + 1e-12)
            throw NumericError("ksvd: objective increased at iteration " + std::to_string(iter));
        previous = obj;
        result.objective.push_back(obj);
    }
    result.dict.atoms = std::move(d);
    return result;
}

// ---------------------------------------------------------------------------
// ADMM LASSO

inline double soft_threshold(double v, double t)
{
    if (v > t)
        return v - t;
    if (v < -t)
        return v + t;
    return 0.0;
}

inline double lasso_objective(const MatrixXd& a, const VectorXd& y, const VectorXd& x, double lambda)
{
    return (y - a * x).squaredNorm() + lambda * x.lpNorm<1>();
}

struct LassoResult {
    VectorXd alpha;
    bool converged = false;
    std::size_t iterations = 0;
    std::vector<double> objective_trace; // objective of the z iterate every 10 iterations
};

/// ADMM for min ||y - A a||^2 + lambda ||a||_1 with the factorization of
/// (A^T A + rho I) computed once. Dividing the objective by two gives the
/// standard splitting, so the shrinkage threshold is lambda / (2 rho).
class LassoSolver {
public:
    LassoSolver(MatrixXd a, double rho)
        : a_(std::move(a))
        , rho_(rho)
    {
        if (!(rho > 0.0))
            throw Error("admm: rho must be > 0");
        if (!a_.allFinite())
            throw NumericError("admm: non-finite system matrix");
        wide_ = a_.rows() < a_.cols();
        if (wide_) {
            MatrixXd s = a_ * a_.transpose();
            s.diagonal().array() += rho_;
            llt_.compute(s);
        } else {
            MatrixXd s = a_.transpose() * a_;
            s.diagonal().array() += rho_;
            llt_.compute(s);
        }
        if (llt_.info() != Eigen::Success)
            throw NumericError("admm: factorization failed");
    }

    const MatrixXd& matrix() const noexcept { return a_; }

    LassoResult solve(const VectorXd& y, const SparseReconConfig& cfg) const
    {
        cfg.validate();
        if (cfg.rho != rho_)
            throw Error("admm: solver was factorized for a different rho");
        if (y.size() != a_.rows())
            throw DimensionError("admm: measurement length does not match system");

        const Index n = a_.cols();
        const VectorXd aty = a_.transpose() * y;
        VectorXd x = VectorXd::Zero(n), z = VectorXd::Zero(n), u = VectorXd::Zero(n);
        const double thresh = cfg.lambda / (2.0 * rho_);
        const double sqrt_n = std::sqrt(static_cast<double>(n));

        LassoResult res;
        for (std::size_t it = 1; it <= cfg.max_iterations; ++it) {
            const VectorXd q = aty + rho_ * (z - u);
            if (wide_)
                x = q / rho_ - a_.transpose() * llt_.solve(a_ * q) / rho_;
            else
                x = llt_.solve(q);

            const VectorXd z_old = z;
            for (Index i = 0; i < n; ++i)
                z[i] = soft_threshold(x[i] + u[i], thresh);
            u += x - z;

            if (!x.allFinite() || !u.allFinite())
                throw NumericError("admm: non-finite iterate at iteration " + std::to_string(it));

            res.iterations = it;
            if (it % 10 == 0)
                res.objective_trace.push_back(lasso_objective(a_, y, z, cfg.lambda));

            const double r_norm = (x - z).norm();
            const double s_norm = rho_ * (z - z_old).norm();
            const double eps_pri = sqrt_n * cfg.abs_tol + cfg.rel_tol * std::max(x.norm(), z.norm());
            const double eps_dual = sqrt_n * cfg.abs_tol + cfg.rel_tol * rho_ * u.norm();
            if (r_norm < eps_pri && s_norm < eps_dual) {
                res.converged = true;
                break;
            }
        }
        res.alpha = z;
        // Never return something worse than the trivial solution.
        if (lasso_objective(a_, y, z, cfg.lambda) > lasso_objective(a_, y, VectorXd::Zero(n), cfg.lambda))
            res.alpha.setZero();
        return res;
    }

private:
    MatrixXd a_;
    double rho_;
    bool wide_ = false;
    Eigen::LLT<MatrixXd> llt_;
};

inline LassoResult admm_lasso(const MatrixXd& a, const VectorXd& y, const SparseReconConfig& cfg)
{
    cfg.validate();
    return LassoSolver(a, cfg.rho).solve(y, cfg);
}

// ---------------------------------------------------------------------------
// Patch reconstruction

/// Caches A = Phi D and its factorization for one operator.
class SparseReconstructor {
public:
    SparseReconstructor(const optics::SensingOperator& op, const Dictionary& dict, const SparseReconConfig& cfg)
        : op_(&op)
        , dict_(&dict)
        , cfg_(cfg)
        , solver_((cfg.validate(), check(op, dict), op.phi * dict.atoms), cfg.rho)
    {
    }

    template <typename T>
    BasicLightField<T> reconstruct(const BasicMeasurement<T>& meas, LassoResult* info = nullptr) const
    {
        optics::check_measurement(*op_, meas, "sparse_reconstruct");
        LassoResult r = solver_.solve(optics::vectorize(meas.values()), cfg_);
        auto out = optics::unvectorize<T>(dict_->atoms * r.alpha, op_->patch);
        if (info)
            *info = std::move(r);
        return out;
    }

private:
    static void check(const optics::SensingOperator& op, const Dictionary& dict)
    {
        if (static_cast<std::size_t>(dict.dim()) != op.cols())
            throw DimensionError("sparse_reconstruct: dictionary rows (" + std::to_string(dict.dim())
                + ") do not match operator columns (" + std::to_string(op.cols()) + ")");
    }

    const optics::SensingOperator* op_;
    const Dictionary* dict_;
    SparseReconConfig cfg_;
    LassoSolver solver_;
};

template <typename T>
BasicLightField<T> sparse_reconstruct(const optics::SensingOperator& op, const BasicMeasurement<T>& meas,
    const Dictionary& dict, const SparseReconConfig& cfg)
{
    return SparseReconstructor(op, dict, cfg).reconstruct(meas);
}

// ---------------------------------------------------------------------------
// DICT container: magic "DICT", u16 version, u16 reserved, u32 rows, u32 K,
// then rows*K little-endian float32, column-major (one atom after another).

inline void save_dictionary(const std::filesystem::path& path, const Dictionary& dict)
{
    std::vector<std::uint8_t> out;
    for (char c : {'D', 'I', 'C', 'T'})
        out.push_back(static_cast<std::uint8_t>(c));
    io::detail::put_u16(out, io::kContainerVersion);
    io::detail::put_u16(out, 0);
    io::detail::put_u32(out, io::detail::checked_u32(static_cast<std::size_t>(dict.dim()), "rows"));
    io::detail::put_u32(out, io::detail::checked_u32(static_cast<std::size_t>(dict.size()), "K"));
    for (Index j = 0; j < dict.size(); ++j)
        for (Index i = 0; i < dict.dim(); ++i)
            io::detail::put_f32(out, static_cast<float>(dict.atoms(i, j)));
    io::write_file(path, out);
}

inline Dictionary load_dictionary(const std::filesystem::path& path)
{
    const auto bytes = io::read_file(path);
    if (bytes.size() < 16)
        throw FormatError("DICT: truncated header");
    if (std::memcmp(bytes.data(), "DICT", 4) != 0)
        throw FormatError("DICT: bad magic");
    if (io::detail::get_u16(bytes.data() + 4) != io::kContainerVersion)
        throw FormatError("DICT: unsupported version");
    const std::uint64_t rows = io::detail::get_u32(bytes.data() + 8);
    const std::uint64_t k = io::detail::get_u32(bytes.data() + 12);
    if (bytes.size() - 16 != rows * k * 4)
        throw FormatError("DICT: payload size does not match header");
    Dictionary d;
    d.atoms.resize(static_cast<Index>(rows), static_cast<Index>(k));
    std::size_t off = 16;
    for (Index j = 0; j < d.size(); ++j)
        for (Index i = 0; i < d.dim(); ++i, off += 4)
            d.atoms(i, j) = io::detail::get_f32(bytes.data() + off);
    if (!d.atoms.allFinite())
        throw FormatError("DICT: non-finite entries");
    return d;
}

} // namespace lfr::sparse
