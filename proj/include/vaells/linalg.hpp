#pragma once

// Dense double-precision matrix/vector kernel: matrix exponential by
// scaling-and-squaring with Pade approximants, its Frechet derivative via the
// block-triangular embedding, and stable reductions. Sized for the small
// operators this library works with (latent dimensions of a few units).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "vaells/common.hpp"

namespace vaells {

class Vec {
public:
    Vec() = default;
    explicit Vec(std::size_t n, double fill = 0.0) : v_(n, fill) {}
    Vec(std::initializer_list<double> init) : v_(init) {}

    std::size_t size() const { return v_.size(); }
    double& operator[](std::size_t i) { return v_[i]; }
    double operator[](std::size_t i) const { return v_[i]; }
    double* data() { return v_.data(); }
    const double* data() const { return v_.data(); }
    auto begin() { return v_.begin(); }
    auto end() { return v_.end(); }
    auto begin() const { return v_.begin(); }
    auto end() const { return v_.end(); }

    Vec& operator+=(const Vec& o) {
        for (std::size_t i = 0; i < v_.size(); ++i) v_[i] += o.v_[i];
        return *this;
    }
    Vec& operator-=(const Vec& o) {
        for (std::size_t i = 0; i < v_.size(); ++i) v_[i] -= o.v_[i];
        return *this;
    }
    Vec& operator*=(double s) {
        for (double& x : v_) x *= s;
        return *this;
    }

private:
    std::vector<double> v_;
};

inline Vec operator+(Vec a, const Vec& b) { return a += b; }
inline Vec operator-(Vec a, const Vec& b) { return a -= b; }
inline Vec operator*(double s, Vec a) { return a *= s; }

// Row-major dense matrix.
class Mat {
public:
    Mat() = default;
    Mat(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), a_(rows * cols, fill) {}

    static Mat identity(std::size_t n) {
        Mat m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool square() const { return rows_ == cols_; }

    double& operator()(std::size_t i, std::size_t j) { return a_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return a_[i * cols_ + j]; }
    double* data() { return a_.data(); }
    const double* data() const { return a_.data(); }
    std::size_t count() const { return a_.size(); }

    Mat& operator+=(const Mat& o) {
        for (std::size_t i = 0; i < a_.size(); ++i) a_[i] += o.a_[i];
        return *this;
    }
    Mat& operator-=(const Mat& o) {
        for (std::size_t i = 0; i < a_.size(); ++i) a_[i] -= o.a_[i];
        return *this;
    }
    Mat& operator*=(double s) {
        for (double& x : a_) x *= s;
        return *this;
    }

private:
    std::size_t rows_ = 0, cols_ = 0;
    std::vector<double> a_;
};

inline Mat operator+(Mat a, const Mat& b) { return a += b; }
inline Mat operator-(Mat a, const Mat& b) { return a -= b; }
inline Mat operator*(double s, Mat a) { return a *= s; }

inline Mat matmul(const Mat& a, const Mat& b) {
    if (a.cols() != b.rows()) throw dim_error("matmul: inner dimensions differ");
    Mat c(a.rows(), b.cols());
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    for (std::size_t i = 0; i < n; ++i) {
        double* ci = c.data() + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a(i, p);
            const double* bp = b.data() + p * m;
            for (std::size_t j = 0; j < m; ++j) ci[j] += aip * bp[j];
        }
    }
    return c;
}

inline Vec matvec(const Mat& a, const Vec& x) {
    if (a.cols() != x.size()) throw dim_error("matvec: dimension mismatch");
    Vec y(a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double acc = 0.0;
        const double* row = a.data() + i * a.cols();
        for (std::size_t j = 0; j < a.cols(); ++j) acc += row[j] * x[j];
        y[i] = acc;
    }
    return y;
}

// y = A^T x without forming the transpose.
inline Vec matvec_t(const Mat& a, const Vec& x) {
    if (a.rows() != x.size()) throw dim_error("matvec_t: dimension mismatch");
    Vec y(a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double xi = x[i];
        const double* row = a.data() + i * a.cols();
        for (std::size_t j = 0; j < a.cols(); ++j) y[j] += row[j] * xi;
    }
    return y;
}

inline Mat transpose(const Mat& a) {
    Mat t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

inline Mat outer(const Vec& x, const Vec& y) {
    Mat m(x.size(), y.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < y.size(); ++j) m(i, j) = x[i] * y[j];
    return m;
}

inline double dot(const Vec& x, const Vec& y) {
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * y[i];
    return acc;
}

inline double norm2(const Vec& x) { return std::sqrt(dot(x, x)); }

inline double norm2_sq(const Vec& x) { return dot(x, x); }

// Maximum absolute column sum.
inline double one_norm(const Mat& a) {
    double best = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < a.rows(); ++i) s += std::abs(a(i, j));
        best = std::max(best, s);
    }
    return best;
}

inline double frobenius_norm(const Mat& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.count(); ++i) s += a.data()[i] * a.data()[i];
    return std::sqrt(s);
}

inline double frobenius_inner(const Mat& a, const Mat& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.count(); ++i) s += a.data()[i] * b.data()[i];
    return s;
}

inline bool all_finite(const Mat& a) {
    for (std::size_t i = 0; i < a.count(); ++i)
        if (!std::isfinite(a.data()[i])) return false;
    return true;
}

inline bool all_finite(const Vec& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

// Solves A X = B by Gaussian elimination with partial pivoting. A and B are
// taken by value and used as workspace.
inline Mat lu_solve(Mat a, Mat b) {
    if (!a.square() || a.rows() != b.rows())
        throw dim_error("lu_solve: shape mismatch");
    const std::size_t n = a.rows(), m = b.cols();
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t piv = k;
        for (std::size_t i = k + 1; i < n; ++i)
            if (std::abs(a(i, k)) > std::abs(a(piv, k))) piv = i;
        if (a(piv, k) == 0.0) throw numeric_error("lu_solve: singular matrix");
        if (piv != k) {
            for (std::size_t j = 0; j < n; ++j) std::swap(a(k, j), a(piv, j));
            for (std::size_t j = 0; j < m; ++j) std::swap(b(k, j), b(piv, j));
        }
        const double inv = 1.0 / a(k, k);
        for (std::size_t i = k + 1; i < n; ++i) {
            const double f = a(i, k) * inv;
            if (f == 0.0) continue;
            for (std::size_t j = k + 1; j < n; ++j) a(i, j) -= f * a(k, j);
            for (std::size_t j = 0; j < m; ++j) b(i, j) -= f * b(k, j);
        }
    }
    for (std::size_t k = n; k-- > 0;) {
        const double inv = 1.0 / a(k, k);
        for (std::size_t j = 0; j < m; ++j) {
            double acc = b(k, j);
            for (std::size_t i = k + 1; i < n; ++i) acc -= a(k, i) * b(i, j);
            b(k, j) = acc * inv;
        }
    }
    return b;
}

namespace detail {

// Pade numerator coefficients and 1-norm thresholds from the standard
// scaling-and-squaring method (orders 3, 5, 7, 9, 13).
inline constexpr double kPadeTheta[5] = {
    1.495585217958292e-2, 2.539398330063230e-1, 9.504178996162932e-1,
    2.097847961257068e0, 5.371920351148152e0};

inline const std::vector<double>& pade_coeffs(int order) {
    static const std::vector<double> b3 = {120, 60, 12, 1};
    static const std::vector<double> b5 = {30240, 15120, 3360, 420, 30, 1};
    static const std::vector<double> b7 = {17297280, 8648640, 1995840, 277200,
                                           25200,    1512,    56,      1};
    static const std::vector<double> b9 = {17643225600, 8821612800, 2075673600,
                                           302702400,   30270240,   2162160,
                                           110880,      3960,       90,
                                           1};
    static const std::vector<double> b13 = {64764752532480000.0,
                                            32382376266240000.0,
                                            7771770303897600.0,
                                            1187353796428800.0,
                                            129060195264000.0,
                                            10559470521600.0,
                                            670442572800.0,
                                            33522128640.0,
                                            1323241920.0,
                                            40840800.0,
                                            960960.0,
                                            16380.0,
                                            182.0,
                                            1.0};
    switch (order) {
        case 3: return b3;
        case 5: return b5;
        case 7: return b7;
        case 9: return b9;
        default: return b13;
    }
}

// r_m(A) for order m in {3,5,7,9}: U odd powers, V even powers, then solve
// (V - U) R = (V + U).
inline Mat pade_low_order(const Mat& a, int order) {
    const std::size_t n = a.rows();
    const auto& b = pade_coeffs(order);
    std::vector<Mat> pow2;  // I, A^2, A^4, ...
    pow2.push_back(Mat::identity(n));
    Mat a2 = matmul(a, a);
    pow2.push_back(a2);
    for (int k = 4; k <= order - 1; k += 2)
        pow2.push_back(matmul(pow2.back(), a2));

    Mat u_inner(n, n), v(n, n);
    for (int k = 0; 2 * k + 1 <= order; ++k) {
        const Mat& p = pow2[static_cast<std::size_t>(k)];
        for (std::size_t i = 0; i < p.count(); ++i) {
            u_inner.data()[i] += b[static_cast<std::size_t>(2 * k + 1)] * p.data()[i];
            v.data()[i] += b[static_cast<std::size_t>(2 * k)] * p.data()[i];
        }
    }
    Mat u = matmul(a, u_inner);
    return lu_solve(v - u, v + u);
}

// r_13(A) with the factored evaluation that reuses A^2, A^4, A^6.
inline Mat pade_13(const Mat& a) {
    const std::size_t n = a.rows();
    const auto& b = pade_coeffs(13);
    Mat a2 = matmul(a, a);
    Mat a4 = matmul(a2, a2);
    Mat a6 = matmul(a2, a4);
    Mat id = Mat::identity(n);

    Mat w1 = b[13] * a6 + b[11] * a4 + b[9] * a2;
    Mat w2 = b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * id;
    Mat u = matmul(a, matmul(a6, w1) + w2);
    Mat z1 = b[12] * a6 + b[10] * a4 + b[8] * a2;
    Mat v = matmul(a6, z1) + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * id;
    return lu_solve(v - u, v + u);
}

}  // namespace detail

// Matrix exponential by scaling-and-squaring with a Pade approximant whose
// order (3, 5, 7, 9, or 13) is selected from the 1-norm of the input.
inline Mat mat_exp(const Mat& a) {
    if (!a.square()) throw dim_error("mat_exp: matrix must be square");
    if (!all_finite(a)) throw numeric_error("mat_exp: non-finite input entry");

    const double nrm = one_norm(a);
    for (int idx = 0; idx < 4; ++idx) {
        static constexpr int kOrders[4] = {3, 5, 7, 9};
        if (nrm <= detail::kPadeTheta[idx])
            return detail::pade_low_order(a, kOrders[idx]);
    }
    int squarings = 0;
    Mat scaled = a;
    if (nrm > detail::kPadeTheta[4]) {
        squarings = static_cast<int>(
            std::ceil(std::log2(nrm / detail::kPadeTheta[4])));
        scaled *= std::ldexp(1.0, -squarings);
    }
    Mat r = detail::pade_13(scaled);
    for (int i = 0; i < squarings; ++i) r = matmul(r, r);
    return r;
}

// Frechet derivative of the matrix exponential: expm of the 2n x 2n block
// matrix [[A, E], [0, A]] has e^A on the diagonal and L(A, E) in the
// top-right block. Returns (e^A, L(A, E)).
inline std::pair<Mat, Mat> mat_exp_frechet(const Mat& a, const Mat& e) {
    if (!a.square() || a.rows() != e.rows() || a.cols() != e.cols())
        throw dim_error("mat_exp_frechet: A and E must be square and same shape");
    const std::size_t n = a.rows();
    Mat block(2 * n, 2 * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            block(i, j) = a(i, j);
            block(i, n + j) = e(i, j);
            block(n + i, n + j) = a(i, j);
        }
    Mat be = mat_exp(block);
    Mat expa(n, n), frechet(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            expa(i, j) = be(i, j);
            frechet(i, j) = be(i, n + j);
        }
    return {std::move(expa), std::move(frechet)};
}

// log sum_i exp(v_i), computed with a max shift.
inline double logsumexp(std::span<const double> values) {
    if (values.empty()) throw dim_error("logsumexp: empty input");
    double m = -std::numeric_limits<double>::infinity();
    for (double v : values) m = std::max(m, v);
    if (!std::isfinite(m)) return m;  // all -inf (or a stray inf) dominates
    double s = 0.0;
    for (double v : values) s += std::exp(v - m);
    return m + std::log(s);
}

inline double logsumexp(const Vec& v) {
    return logsumexp(std::span<const double>(v.data(), v.size()));
}

}  // namespace vaells
