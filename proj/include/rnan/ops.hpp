#ifndef RNAN_OPS_HPP_
#define RNAN_OPS_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "rnan/tensor.hpp"

namespace rnan {

template<typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Geometry of a 2-D convolution with zero padding.
struct ConvSpec {
	std::size_t kh = 3, kw = 3;
	std::size_t stride = 1;
	std::size_t pad = 1;
	std::size_t in_channels = 1, out_channels = 1;

	/// "Same" padding for odd kernels at stride one.
	static ConvSpec same(std::size_t in, std::size_t out, std::size_t k = 3, std::size_t stride = 1) {
		return {k, k, stride, k / 2, in, out};
	}

	Shape weight_shape() const { return {out_channels, in_channels, kh, kw}; }
	std::size_t patch_size() const { return in_channels * kh * kw; }

	/// Output extent along one axis, or 0 when the kernel does not fit.
	static std::size_t output_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
		if (in + 2 * pad < k) return 0;
		return (in + 2 * pad - k) / stride + 1;
	}
	std::size_t out_h(std::size_t h) const { return output_extent(h, kh, stride, pad); }
	std::size_t out_w(std::size_t w) const { return output_extent(w, kw, stride, pad); }

	void validate() const {
		if (kh == 0 || kw == 0 || stride == 0 || in_channels == 0 || out_channels == 0)
			throw ConfigError("convolution spec needs positive kernel, stride and channel counts");
	}
};

namespace detail {

template<typename T>
using MatMap = Eigen::Map<Matrix<T>>;
template<typename T>
using ConstMatMap = Eigen::Map<const Matrix<T>>;

/// Dimensions of one convolution application, shared by the kernels below.
struct ConvGeom {
	std::size_t c, h, w;     // input side
	std::size_t oh, ow;      // output side
	std::size_t kh, kw, stride, pad;

	bool is_pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
	std::size_t rows() const { return c * kh * kw; }
	std::size_t cols() const { return oh * ow; }
};

inline ConvGeom geometry(const ConvSpec& spec, std::size_t h, std::size_t w) {
	return {spec.in_channels, h, w, spec.out_h(h), spec.out_w(w), spec.kh, spec.kw, spec.stride, spec.pad};
}

/// Unfolds one (c, h, w) image into a (c·kh·kw, oh·ow) patch matrix.
template<typename T>
void im2col(const T* x, const ConvGeom& g, T* col) {
	for (std::size_t ch = 0; ch < g.c; ++ch)
		for (std::size_t ky = 0; ky < g.kh; ++ky)
			for (std::size_t kx = 0; kx < g.kw; ++kx) {
				T* row = col + ((ch * g.kh + ky) * g.kw + kx) * g.cols();
				const T* plane = x + ch * g.h * g.w;
				for (std::size_t oy = 0; oy < g.oh; ++oy) {
					const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
											  static_cast<std::ptrdiff_t>(g.pad);
					T* dst = row + oy * g.ow;
					if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
						std::fill_n(dst, g.ow, T(0));
						continue;
					}
					const T* src = plane + iy * g.w;
					for (std::size_t ox = 0; ox < g.ow; ++ox) {
						const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
												  static_cast<std::ptrdiff_t>(g.pad);
						dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) ? T(0) : src[ix];
					}
				}
			}
}

/// Scatter-adds a patch matrix back onto a zero-initialised (c, h, w) image.
template<typename T>
void col2im(const T* col, const ConvGeom& g, T* x) {
	for (std::size_t ch = 0; ch < g.c; ++ch)
		for (std::size_t ky = 0; ky < g.kh; ++ky)
			for (std::size_t kx = 0; kx < g.kw; ++kx) {
				const T* row = col + ((ch * g.kh + ky) * g.kw + kx) * g.cols();
				T* plane = x + ch * g.h * g.w;
				for (std::size_t oy = 0; oy < g.oh; ++oy) {
					const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
											  static_cast<std::ptrdiff_t>(g.pad);
					if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
					const T* src = row + oy * g.ow;
					T* dst = plane + iy * g.w;
					for (std::size_t ox = 0; ox < g.ow; ++ox) {
						const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
												  static_cast<std::ptrdiff_t>(g.pad);
						if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) dst[ix] += src[ox];
					}
				}
			}
}

template<typename T>
void check_conv_operands(const Tensor4<T>& w, std::span<const T> b, const ConvSpec& spec,
						 std::size_t bias_len, const char* op) {
	spec.validate();
	if (w.shape() != spec.weight_shape())
		throw ConfigError(std::string(op) + ": weight shape " + to_string(w.shape()) + " does not match spec " +
						  to_string(spec.weight_shape()));
	if (!b.empty() && b.size() != bias_len)
		throw ConfigError(std::string(op) + ": bias length " + std::to_string(b.size()) + ", expected " +
						  std::to_string(bias_len));
}

/// out(cout, P) = W(cout, K) · X(K, P) for one batch item, X given as im2col or raw.
template<typename T>
void conv_item(const T* x, const ConvGeom& g, const Tensor4<T>& w, std::size_t out_c, T* out, Matrix<T>& col) {
	ConstMatMap<T> wm(w.data(), out_c, g.rows());
	MatMap<T> om(out, out_c, g.cols());
	if (g.is_pointwise()) {
		om.noalias() = wm * ConstMatMap<T>(x, g.rows(), g.cols());
	} else {
		col.resize(g.rows(), g.cols());
		im2col(x, g, col.data());
		om.noalias() = wm * col;
	}
}

/// Adjoint of conv_item: scatters W^T · y onto a zeroed (c, h, w) image.
template<typename T>
void conv_item_adjoint(const T* y, const ConvGeom& g, const Tensor4<T>& w, std::size_t out_c, T* x, Matrix<T>& col) {
	ConstMatMap<T> wm(w.data(), out_c, g.rows());
	ConstMatMap<T> ym(y, out_c, g.cols());
	if (g.is_pointwise()) {
		MatMap<T>(x, g.rows(), g.cols()).noalias() += wm.transpose() * ym;
	} else {
		col.noalias() = wm.transpose() * ym;
		col2im(col.data(), g, x);
	}
}

template<typename T>
void add_channel_bias(Tensor4<T>& t, std::span<const T> b) {
	if (b.empty()) return;
	const std::size_t plane = t.shape().plane();
	for (std::size_t n = 0; n < t.n(); ++n)
		for (std::size_t c = 0; c < t.c(); ++c) {
			T* p = t.data() + (n * t.c() + c) * plane;
			const T bias = b[c];
			for (std::size_t i = 0; i < plane; ++i) p[i] += bias;
		}
}

template<typename T>
Tensor4<T> channel_sums(const Tensor4<T>& t) {
	Tensor4<T> out({t.c(), 1, 1, 1});
	const std::size_t plane = t.shape().plane();
	for (std::size_t n = 0; n < t.n(); ++n)
		for (std::size_t c = 0; c < t.c(); ++c) {
			const T* p = t.data() + (n * t.c() + c) * plane;
			T acc = 0;
			for (std::size_t i = 0; i < plane; ++i) acc += p[i];
			out[c] += acc;
		}
	return out;
}

inline void require_same(const Shape& a, const Shape& b, const char* op) {
	if (a != b) throw ConfigError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

}  // namespace detail

/// Gradients of a convolution-type op with respect to its three operands.
template<typename T>
struct ConvGrads {
	Tensor4<T> dx;
	Tensor4<T> dw;
	Tensor4<T> db;  ///< shape (channels, 1, 1, 1)
};

/**
 * Zero-padded 2-D cross-correlation.
 * x: (n, in, h, w), w: (out, in, kh, kw), b: empty or length out.
 */
template<typename T>
Tensor4<T> conv2d(const Tensor4<T>& x, const Tensor4<T>& w, std::type_identity_t<std::span<const T>> b,
				  const ConvSpec& spec) {
	detail::check_conv_operands(w, b, spec, spec.out_channels, "conv2d");
	if (x.c() != spec.in_channels)
		throw ConfigError("conv2d: input has " + std::to_string(x.c()) + " channels, spec expects " +
						  std::to_string(spec.in_channels));
	const auto g = detail::geometry(spec, x.h(), x.w());
	if (g.oh == 0 || g.ow == 0)
		throw ConfigError("conv2d: non-positive output size for input " + to_string(x.shape()));
	Tensor4<T> out({x.n(), spec.out_channels, g.oh, g.ow});
	Matrix<T> col;
	for (std::size_t n = 0; n < x.n(); ++n) detail::conv_item(x.item(n), g, w, spec.out_channels, out.item(n), col);
	detail::add_channel_bias(out, b);
	return out;
}

template<typename T>
ConvGrads<T> conv2d_backward(const Tensor4<T>& x, const Tensor4<T>& w, const ConvSpec& spec, const Tensor4<T>& gy) {
	const auto g = detail::geometry(spec, x.h(), x.w());
	detail::require_same(gy.shape(), {x.n(), spec.out_channels, g.oh, g.ow}, "conv2d_backward");
	ConvGrads<T> grads{Tensor4<T>(x.shape()), Tensor4<T>(w.shape()), {}};
	detail::MatMap<T> dw(grads.dw.data(), spec.out_channels, g.rows());
	Matrix<T> col(g.rows(), g.cols());
	for (std::size_t n = 0; n < x.n(); ++n) {
		detail::ConstMatMap<T> gm(gy.item(n), spec.out_channels, g.cols());
		if (g.is_pointwise()) {
			dw.noalias() += gm * detail::ConstMatMap<T>(x.item(n), g.rows(), g.cols()).transpose();
		} else {
			detail::im2col(x.item(n), g, col.data());
			dw.noalias() += gm * col.transpose();
		}
		detail::conv_item_adjoint(gy.item(n), g, w, spec.out_channels, grads.dx.item(n), col);
	}
	grads.db = detail::channel_sums(gy);
	return grads;
}

/**
 * Transposed convolution: the adjoint of conv2d(·, w, spec) evaluated onto an
 * image of size target_hw. Maps spec.out_channels to spec.in_channels; `b`
 * has length spec.in_channels. Any target whose forward convolution lands on
 * x's spatial size is accepted, which resolves the rounding ambiguity of
 * strided downscaling on odd sizes.
 */
template<typename T>
Tensor4<T> conv2d_transpose(const Tensor4<T>& x, const Tensor4<T>& w, std::type_identity_t<std::span<const T>> b,
							const ConvSpec& spec,
							std::pair<std::size_t, std::size_t> target_hw) {
	detail::check_conv_operands(w, b, spec, spec.in_channels, "conv2d_transpose");
	if (x.c() != spec.out_channels)
		throw ConfigError("conv2d_transpose: input has " + std::to_string(x.c()) + " channels, spec expects " +
						  std::to_string(spec.out_channels));
	const auto [th, tw] = target_hw;
	const auto g = detail::geometry(spec, th, tw);
	if (g.oh != x.h() || g.ow != x.w() || g.oh == 0 || g.ow == 0)
		throw ConfigError("conv2d_transpose: target " + std::to_string(th) + "x" + std::to_string(tw) +
						  " is not a valid pre-downscale size for input " + to_string(x.shape()));
	Tensor4<T> out({x.n(), spec.in_channels, th, tw});
	Matrix<T> col(g.rows(), g.cols());
	for (std::size_t n = 0; n < x.n(); ++n)
		detail::conv_item_adjoint(x.item(n), g, w, spec.out_channels, out.item(n), col);
	detail::add_channel_bias(out, b);
	return out;
}

template<typename T>
ConvGrads<T> conv2d_transpose_backward(const Tensor4<T>& x, const Tensor4<T>& w, const ConvSpec& spec,
									   const Tensor4<T>& gy) {
	const auto g = detail::geometry(spec, gy.h(), gy.w());
	detail::require_same(x.shape(), {gy.n(), spec.out_channels, g.oh, g.ow}, "conv2d_transpose_backward");
	ConvGrads<T> grads{Tensor4<T>(x.shape()), Tensor4<T>(w.shape()), {}};
	detail::MatMap<T> dw(grads.dw.data(), spec.out_channels, g.rows());
	Matrix<T> col;
	for (std::size_t n = 0; n < x.n(); ++n) {
		detail::conv_item(gy.item(n), g, w, spec.out_channels, grads.dx.item(n), col);
		detail::ConstMatMap<T> xm(x.item(n), spec.out_channels, g.cols());
		if (g.is_pointwise())
			dw.noalias() += xm * detail::ConstMatMap<T>(gy.item(n), g.rows(), g.cols()).transpose();
		else
			dw.noalias() += xm * col.transpose();
	}
	grads.db = detail::channel_sums(gy);
	return grads;
}

// Elementwise ops.

template<typename T>
Tensor4<T> relu(const Tensor4<T>& x) {
	Tensor4<T> y(x.shape());
	for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
	return y;
}

/// Subgradient at zero is taken as zero.
template<typename T>
Tensor4<T> relu_backward(const Tensor4<T>& x, const Tensor4<T>& gy) {
	detail::require_same(x.shape(), gy.shape(), "relu_backward");
	Tensor4<T> gx(x.shape());
	for (std::size_t i = 0; i < x.size(); ++i) gx[i] = x[i] > T(0) ? gy[i] : T(0);
	return gx;
}

template<typename T>
T sigmoid(T v) {
	T s;
	if (v >= T(0)) {
		s = T(1) / (T(1) + std::exp(-v));
	} else {
		const T e = std::exp(v);
		s = e / (T(1) + e);
	}
	// Saturated values stay strictly inside (0, 1).
	constexpr T lo = std::numeric_limits<T>::min();
	constexpr T hi = T(1) - std::numeric_limits<T>::epsilon() / 2;
	return std::clamp(s, lo, hi);
}

template<typename T>
Tensor4<T> sigmoid(const Tensor4<T>& x) {
	Tensor4<T> y(x.shape());
	for (std::size_t i = 0; i < x.size(); ++i) y[i] = sigmoid(x[i]);
	return y;
}

/// Takes the forward output y = sigmoid(x).
template<typename T>
Tensor4<T> sigmoid_backward(const Tensor4<T>& y, const Tensor4<T>& gy) {
	detail::require_same(y.shape(), gy.shape(), "sigmoid_backward");
	Tensor4<T> gx(y.shape());
	for (std::size_t i = 0; i < y.size(); ++i) gx[i] = gy[i] * y[i] * (T(1) - y[i]);
	return gx;
}

template<typename T>
Tensor4<T> add(const Tensor4<T>& a, const Tensor4<T>& b) {
	detail::require_same(a.shape(), b.shape(), "add");
	Tensor4<T> y(a.shape());
	for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i] + b[i];
	return y;
}

template<typename T>
Tensor4<T> mul(const Tensor4<T>& a, const Tensor4<T>& b) {
	detail::require_same(a.shape(), b.shape(), "mul");
	Tensor4<T> y(a.shape());
	for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i] * b[i];
	return y;
}

/// Returns (d/da, d/db) of a·b given upstream gy.
template<typename T>
std::pair<Tensor4<T>, Tensor4<T>> mul_backward(const Tensor4<T>& a, const Tensor4<T>& b, const Tensor4<T>& gy) {
	detail::require_same(a.shape(), gy.shape(), "mul_backward");
	return {mul(gy, b), mul(gy, a)};
}

// Matrix helpers.

/// Row-wise softmax with per-row max subtraction.
template<typename T>
Matrix<T> softmax_rows(const Matrix<T>& m) {
	Matrix<T> out(m.rows(), m.cols());
	for (Eigen::Index r = 0; r < m.rows(); ++r) {
		const T mx = m.row(r).maxCoeff();
		T sum = 0;
		for (Eigen::Index c = 0; c < m.cols(); ++c) {
			const T e = std::exp(m(r, c) - mx);
			out(r, c) = e;
			sum += e;
		}
		out.row(r) /= sum;
	}
	return out;
}

/// Takes the forward output s = softmax_rows(m).
template<typename T>
Matrix<T> softmax_rows_backward(const Matrix<T>& s, const Matrix<T>& gs) {
	if (s.rows() != gs.rows() || s.cols() != gs.cols()) throw ConfigError("softmax_rows_backward: shape mismatch");
	Matrix<T> gm(s.rows(), s.cols());
	for (Eigen::Index r = 0; r < s.rows(); ++r) {
		const T dot = s.row(r).dot(gs.row(r));
		gm.row(r) = s.row(r).cwiseProduct((gs.row(r).array() - dot).matrix());
	}
	return gm;
}

template<typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
	if (a.cols() != b.rows())
		throw ConfigError("matmul: inner dimensions " + std::to_string(a.cols()) + " and " + std::to_string(b.rows()) +
						  " disagree");
	Matrix<T> c = a * b;
	return c;
}

/// Returns (d/da, d/db) of a·b given upstream g.
template<typename T>
std::pair<Matrix<T>, Matrix<T>> matmul_backward(const Matrix<T>& a, const Matrix<T>& b, const Matrix<T>& g) {
	if (g.rows() != a.rows() || g.cols() != b.cols()) throw ConfigError("matmul_backward: shape mismatch");
	Matrix<T> ga = g * b.transpose();
	Matrix<T> gb = a.transpose() * g;
	return {std::move(ga), std::move(gb)};
}

/// Batch item `n` of `t` as a (c, h·w) matrix.
template<typename T>
Matrix<T> item_as_matrix(const Tensor4<T>& t, std::size_t n) {
	return detail::ConstMatMap<T>(t.item(n), t.c(), t.shape().plane());
}

/// Writes a (c, h·w) matrix into batch item `n` of `t`.
template<typename T>
void matrix_into_item(const Matrix<T>& m, Tensor4<T>& t, std::size_t n) {
	if (static_cast<std::size_t>(m.rows()) != t.c() || static_cast<std::size_t>(m.cols()) != t.shape().plane())
		throw ConfigError("matrix_into_item: matrix does not match tensor item shape");
	detail::MatMap<T>(t.item(n), t.c(), t.shape().plane()) = m;
}

}  // namespace rnan

#endif  // RNAN_OPS_HPP_
