#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "rnan/ops.hpp"

namespace rnan {
namespace {

using oracle::random_tensor;

Tensor4d ones(Shape s) { return Tensor4d(s, 1.0); }

TEST(Conv2d, AllOnesKernelMatchesSlidingWindowOracle) {
	const Tensor4d x({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
	const Tensor4d w = ones({1, 1, 3, 3});
	const std::vector<double> bias{0.0};
	const auto out = conv2d(x, w, std::span<const double>(bias), ConvSpec::same(1, 1));
	const Tensor4d expected({1, 1, 3, 3}, {12, 21, 16, 27, 45, 33, 24, 39, 28});
	EXPECT_EQ(out, expected);
	EXPECT_EQ(oracle::conv2d(x, w, bias, 1, 1), expected);
}

TEST(Conv2d, CenterTapKernelIsIdentity) {
	const auto x = random_tensor<double>({2, 1, 5, 4}, 3);
	Tensor4d w({1, 1, 3, 3});
	w(0, 0, 1, 1) = 1.0;
	EXPECT_EQ(conv2d(x, w, {}, ConvSpec::same(1, 1)), x);
}

TEST(Conv2d, StrideTwoShape) {
	const auto out = conv2d(ones({1, 1, 4, 4}), ones({1, 1, 3, 3}), {}, ConvSpec::same(1, 1, 3, 2));
	EXPECT_EQ(out.shape(), (Shape{1, 1, 2, 2}));
}

TEST(Conv2d, MatchesOracleOnRandomMultiChannelInput) {
	for (std::size_t stride : {1u, 2u, 3u}) {
		const auto x = random_tensor<double>({2, 3, 7, 6}, 11 + stride);
		const auto w = random_tensor<double>({4, 3, 3, 3}, 12);
		const auto b = random_tensor<double>({4, 1, 1, 1}, 13);
		const auto out = conv2d(x, w, b.values(), ConvSpec::same(3, 4, 3, stride));
		const std::vector<double> bv(b.values().begin(), b.values().end());
		EXPECT_LT(max_abs_diff(out, oracle::conv2d(x, w, bv, stride, 1)), 1e-12) << "stride " << stride;
	}
}

TEST(Conv2d, PointwiseMatchesOracle) {
	const auto x = random_tensor<double>({2, 5, 3, 4}, 21);
	const auto w = random_tensor<double>({2, 5, 1, 1}, 22);
	const std::vector<double> b{0.25, -0.5};
	const auto out = conv2d(x, w, std::span<const double>(b), ConvSpec::same(5, 2, 1));
	EXPECT_LT(max_abs_diff(out, oracle::conv2d(x, w, b, 1, 0)), 1e-12);
}

TEST(Conv2d, RejectsMismatchedOperands) {
	const auto x = random_tensor<double>({1, 2, 5, 5}, 1);
	EXPECT_THROW(conv2d(x, ones({1, 3, 3, 3}), {}, ConvSpec::same(3, 1)), ConfigError);
	EXPECT_THROW(conv2d(x, ones({1, 1, 3, 3}), {}, ConvSpec::same(2, 1)), ConfigError);
	const std::vector<double> bad_bias{1.0, 2.0};
	EXPECT_THROW(conv2d(x, ones({1, 2, 3, 3}), std::span<const double>(bad_bias), ConvSpec::same(2, 1)), ConfigError);
	// 5x5 kernel without padding does not fit a 3x3 image.
	EXPECT_THROW(conv2d(random_tensor<double>({1, 1, 3, 3}, 1), ones({1, 1, 5, 5}), {}, ConvSpec{5, 5, 1, 0, 1, 1}),
				 ConfigError);
}

TEST(Conv2dTranspose, RestoresTargetShape) {
	const auto spec = ConvSpec::same(1, 1, 3, 2);
	const auto out = conv2d_transpose(ones({1, 1, 2, 2}), ones({1, 1, 3, 3}), {}, spec, {4, 4});
	EXPECT_EQ(out.shape(), (Shape{1, 1, 4, 4}));
}

TEST(Conv2dTranspose, AllOnesGivesOverlapCounts) {
	const auto spec = ConvSpec::same(1, 1, 3, 2);
	const auto x = ones({1, 1, 2, 2});
	const auto w = ones({1, 1, 3, 3});
	const auto out = conv2d_transpose(x, w, {}, spec, {4, 4});
	const auto scatter = oracle::scatter_transpose(x, w, 2, 1, 4, 4);
	const Tensor4d expected({1, 1, 4, 4}, {1, 2, 1, 1, 2, 4, 2, 2, 1, 2, 1, 1, 1, 2, 1, 1});
	EXPECT_EQ(scatter, expected);
	EXPECT_EQ(out, expected);
}

TEST(Conv2dTranspose, OddTargetsAndOracle) {
	const auto spec = ConvSpec::same(3, 2, 3, 2);
	const auto w = random_tensor<double>({2, 3, 3, 3}, 5);
	for (auto [th, tw] : {std::pair<std::size_t, std::size_t>{7, 9}, {8, 9}, {7, 10}}) {
		const auto x = random_tensor<double>({2, 2, spec.out_h(th), spec.out_w(tw)}, th * 31 + tw);
		const auto out = conv2d_transpose(x, w, {}, spec, {th, tw});
		EXPECT_EQ(out.shape(), (Shape{2, 3, th, tw}));
		EXPECT_LT(max_abs_diff(out, oracle::scatter_transpose(x, w, 2, 1, th, tw)), 1e-12);
	}
}

TEST(Conv2dTranspose, RejectsInconsistentTarget) {
	const auto spec = ConvSpec::same(1, 1, 3, 2);
	EXPECT_THROW(conv2d_transpose(ones({1, 1, 2, 2}), ones({1, 1, 3, 3}), {}, spec, {6, 6}), ConfigError);
	EXPECT_THROW(conv2d_transpose(ones({1, 1, 2, 2}), ones({1, 1, 3, 3}), {}, spec, {2, 4}), ConfigError);
}

TEST(Conv2dTranspose, IsAdjointOfConv2d) {
	for (std::uint64_t seed = 0; seed < 5; ++seed) {
		for (std::size_t stride : {1u, 2u}) {
			const auto spec = ConvSpec::same(3, 4, 3, stride);
			const auto x = random_tensor<double>({2, 3, 9, 8}, 100 + seed);
			const auto w = random_tensor<double>({4, 3, 3, 3}, 200 + seed);
			const auto y = random_tensor<double>({2, 4, spec.out_h(9), spec.out_w(8)}, 300 + seed);
			const double lhs = inner_product(conv2d(x, w, {}, spec), y);
			const double rhs = inner_product(x, conv2d_transpose(y, w, {}, spec, {9, 8}));
			EXPECT_NEAR(lhs, rhs, 1e-10) << "seed " << seed << " stride " << stride;
		}
	}
}

TEST(Elementwise, SigmoidValues) {
	const Tensor4d x({1, 1, 1, 5}, {0.0, 3.0, -3.0, 800.0, -800.0});
	const auto s = sigmoid(x);
	EXPECT_EQ(s[0], 0.5);
	EXPECT_NEAR(s[1] + s[2], 1.0, 1e-15);
	for (double v : s.values()) {
		EXPECT_GT(v, 0.0);
		EXPECT_LT(v, 1.0);
	}
	const auto r = random_tensor<double>({1, 2, 4, 4}, 9, -20, 20);
	Tensor4d neg(r.shape());
	for (std::size_t i = 0; i < r.size(); ++i) neg[i] = -r[i];
	const auto sum = add(sigmoid(r), sigmoid(neg));
	for (double v : sum.values()) EXPECT_NEAR(v, 1.0, 1e-15);
	const auto sf = sigmoid(Tensor4f({1, 1, 1, 2}, {40.0f, -200.0f}));
	EXPECT_LT(sf[0], 1.0f);
	EXPECT_GT(sf[1], 0.0f);
}

TEST(Elementwise, Relu) {
	const Tensor4d x({1, 1, 1, 3}, {-1, 0, 2});
	EXPECT_EQ(relu(x), Tensor4d({1, 1, 1, 3}, {0, 0, 2}));
	const auto r = random_tensor<double>({1, 3, 4, 4}, 4);
	EXPECT_EQ(relu(relu(r)), relu(r));
	// Subgradient at zero is zero.
	EXPECT_EQ(relu_backward(x, Tensor4d({1, 1, 1, 3}, {5, 5, 5})), Tensor4d({1, 1, 1, 3}, {0, 0, 5}));
}

TEST(Elementwise, ShapeMismatchIsConfigError) {
	const Tensor4d a({1, 1, 2, 2}), b({1, 1, 2, 3});
	EXPECT_THROW(add(a, b), ConfigError);
	EXPECT_THROW(mul(a, b), ConfigError);
}

TEST(SoftmaxRows, Properties) {
	Matrix<double> same = Matrix<double>::Constant(2, 5, 3.7);
	const auto s = softmax_rows(same);
	for (Eigen::Index i = 0; i < s.size(); ++i) EXPECT_DOUBLE_EQ(s.data()[i], 0.2);

	Matrix<double> column(4, 1);
	column << -3, 0, 1e6, 42;
	const auto sc = softmax_rows(column);
	for (Eigen::Index i = 0; i < 4; ++i) EXPECT_EQ(sc(i, 0), 1.0);

	Matrix<double> r(3, 7);
	CounterRng rng(8);
	for (Eigen::Index i = 0; i < r.size(); ++i) r.data()[i] = rng.uniform(-30, 30);
	const auto sr = softmax_rows(r);
	const auto shifted = softmax_rows(Matrix<double>(r.array() + 123.25));
	for (Eigen::Index i = 0; i < r.rows(); ++i) {
		EXPECT_NEAR(sr.row(i).sum(), 1.0, 1e-6);
		for (Eigen::Index j = 0; j < r.cols(); ++j) {
			EXPECT_GT(sr(i, j), 0.0);
			EXPECT_LE(sr(i, j), 1.0);
			EXPECT_NEAR(sr(i, j), shifted(i, j), 1e-12);
		}
	}
	// Large logits do not overflow.
	Matrix<float> big(1, 3);
	big << 1000.0f, 999.0f, -1000.0f;
	const auto sb = softmax_rows(big);
	EXPECT_TRUE(std::isfinite(sb(0, 0)));
	EXPECT_NEAR(sb.sum(), 1.0f, 1e-6f);
}

TEST(Matmul, Examples) {
	Matrix<double> a(2, 2), b(2, 1);
	a << 1, 2, 3, 4;
	b << 5, 6;
	const auto c = matmul(a, b);
	ASSERT_EQ(c.rows(), 2);
	EXPECT_EQ(c(0, 0), 17);
	EXPECT_EQ(c(1, 0), 39);
	EXPECT_EQ(matmul(a, Matrix<double>(Matrix<double>::Identity(2, 2))), a);
	EXPECT_THROW(matmul(b, b), ConfigError);

	Matrix<double> p(3, 4), q(4, 5);
	CounterRng rng(2);
	for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = rng.uniform(-1, 1);
	for (Eigen::Index i = 0; i < q.size(); ++i) q.data()[i] = rng.uniform(-1, 1);
	const Matrix<double> lhs = matmul(p, q).transpose();
	const Matrix<double> rhs = matmul(Matrix<double>(q.transpose()), Matrix<double>(p.transpose()));
	EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(MatrixHelpers, RoundTrip) {
	const auto t = random_tensor<double>({2, 3, 2, 5}, 6);
	Tensor4d back(t.shape());
	for (std::size_t n = 0; n < 2; ++n) {
		const auto m = item_as_matrix(t, n);
		EXPECT_EQ(m.rows(), 3);
		EXPECT_EQ(m.cols(), 10);
		EXPECT_EQ(m(1, 7), t(n, 1, 1, 2));
		matrix_into_item(m, back, n);
	}
	EXPECT_EQ(back, t);
}

TEST(Determinism, RepeatedCallsAreBitIdentical) {
	const auto x = random_tensor<float>({2, 16, 12, 12}, 1);
	const auto w = random_tensor<float>({16, 16, 3, 3}, 2);
	const auto a = conv2d(x, w, {}, ConvSpec::same(16, 16));
	for (int i = 0; i < 3; ++i) {
		Tensor4f copy = x;  // different allocation
		EXPECT_EQ(conv2d(copy, w, {}, ConvSpec::same(16, 16)), a);
	}
}

}  // namespace
}  // namespace rnan
