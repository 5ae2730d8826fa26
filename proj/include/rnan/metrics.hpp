#ifndef RNAN_METRICS_HPP_
#define RNAN_METRICS_HPP_

#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "rnan/tensor.hpp"

namespace rnan {

/// Returned by psnr for identical images.
inline constexpr double kPsnrInfinite = std::numeric_limits<double>::infinity();

struct MetricResult {
	double psnr_db = 0;
	double ssim = 0;
};

namespace detail {

// Images live in [0, 1]; scores are taken on the 8-bit grid. Values are not
// clamped first, so out-of-range network outputs are penalised as they are.
inline double to_8bit(double v) { return std::round(v * 255.0); }

template<typename T>
void require_same_dims(const Tensor4<T>& a, const Tensor4<T>& b, const char* what) {
	if (a.shape() != b.shape())
		throw ConfigError(std::string(what) + ": shapes differ, " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

}  // namespace detail

/**
 * Peak signal-to-noise ratio in dB over every element, on values quantised
 * to round(x·255). `max_val` is the peak on that 8-bit scale. Identical
 * images give kPsnrInfinite.
 */
template<typename T>
double psnr(const Tensor4<T>& a, const Tensor4<T>& b, double max_val = 255.0) {
	detail::require_same_dims(a, b, "psnr");
	if (a.size() == 0) throw ConfigError("psnr: empty image");
	double sse = 0;
	for (std::size_t i = 0; i < a.size(); ++i) {
		const double d = detail::to_8bit(a[i]) - detail::to_8bit(b[i]);
		sse += d * d;
	}
	if (sse == 0) return kPsnrInfinite;
	return 10.0 * std::log10(max_val * max_val / (sse / static_cast<double>(a.size())));
}

/// Studio-range BT.601 luma of a 3-channel [0, 1] image, still in [0, 1].
template<typename T>
Tensor4<T> rgb_to_y(const Tensor4<T>& img) {
	if (img.c() != 3) throw ConfigError("rgb_to_y: expected 3 channels, got " + std::to_string(img.c()));
	Tensor4<T> y({img.n(), 1, img.h(), img.w()});
	for (std::size_t n = 0; n < img.n(); ++n)
		for (std::size_t r = 0; r < img.h(); ++r)
			for (std::size_t c = 0; c < img.w(); ++c) {
				const double v =
					16.0 + 65.481 * img(n, 0, r, c) + 128.553 * img(n, 1, r, c) + 24.966 * img(n, 2, r, c);
				y(n, 0, r, c) = static_cast<T>(v / 255.0);
			}
	return y;
}

/// Drops `border` pixels from every side (super-resolution scoring convention).
template<typename T>
Tensor4<T> crop_border(const Tensor4<T>& img, std::size_t border) {
	if (border == 0) return img;
	if (img.h() <= 2 * border || img.w() <= 2 * border)
		throw ConfigError("crop_border: " + std::to_string(border) + " px border leaves nothing of " +
						  to_string(img.shape()));
	Tensor4<T> out({img.n(), img.c(), img.h() - 2 * border, img.w() - 2 * border});
	for (std::size_t n = 0; n < out.n(); ++n)
		for (std::size_t c = 0; c < out.c(); ++c)
			for (std::size_t r = 0; r < out.h(); ++r)
				for (std::size_t x = 0; x < out.w(); ++x) out(n, c, r, x) = img(n, c, r + border, x + border);
	return out;
}

namespace detail {

inline constexpr std::size_t kSsimWindow = 11;

inline std::array<double, kSsimWindow> ssim_gaussian() {
	std::array<double, kSsimWindow> g{};
	double sum = 0;
	for (std::size_t i = 0; i < kSsimWindow; ++i) {
		const double d = static_cast<double>(i) - 5.0;
		g[i] = std::exp(-d * d / (2 * 1.5 * 1.5));
		sum += g[i];
	}
	for (auto& v : g) v /= sum;
	return g;
}

// 'valid' separable Gaussian filtering of an h×w plane
inline std::vector<double> gaussian_valid(const std::vector<double>& src, std::size_t h, std::size_t w) {
	static const auto g = ssim_gaussian();
	const std::size_t ow = w - kSsimWindow + 1, oh = h - kSsimWindow + 1;
	std::vector<double> rows(h * ow, 0.0), out(oh * ow, 0.0);
	for (std::size_t y = 0; y < h; ++y)
		for (std::size_t x = 0; x < ow; ++x) {
			double acc = 0;
			for (std::size_t k = 0; k < kSsimWindow; ++k) acc += g[k] * src[y * w + x + k];
			rows[y * ow + x] = acc;
		}
	for (std::size_t y = 0; y < oh; ++y)
		for (std::size_t x = 0; x < ow; ++x) {
			double acc = 0;
			for (std::size_t k = 0; k < kSsimWindow; ++k) acc += g[k] * rows[(y + k) * ow + x];
			out[y * ow + x] = acc;
		}
	return out;
}

inline double ssim_plane(const std::vector<double>& a, const std::vector<double>& b, std::size_t h, std::size_t w) {
	constexpr double L = 255.0, C1 = (0.01 * L) * (0.01 * L), C2 = (0.03 * L) * (0.03 * L);
	std::vector<double> aa(a.size()), bb(a.size()), ab(a.size());
	for (std::size_t i = 0; i < a.size(); ++i) {
		aa[i] = a[i] * a[i];
		bb[i] = b[i] * b[i];
		ab[i] = a[i] * b[i];
	}
	const auto mu_a = gaussian_valid(a, h, w), mu_b = gaussian_valid(b, h, w);
	const auto s_aa = gaussian_valid(aa, h, w), s_bb = gaussian_valid(bb, h, w), s_ab = gaussian_valid(ab, h, w);
	double total = 0;
	for (std::size_t i = 0; i < mu_a.size(); ++i) {
		const double ma = mu_a[i], mb = mu_b[i];
		const double va = s_aa[i] - ma * ma, vb = s_bb[i] - mb * mb, cov = s_ab[i] - ma * mb;
		total += ((2 * ma * mb + C1) * (2 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
	}
	return total / static_cast<double>(mu_a.size());
}

}  // namespace detail

/**
 * Mean structural similarity: 11×11 Gaussian window (σ = 1.5), K1 = 0.01,
 * K2 = 0.03, L = 255 on the 8-bit grid, averaged over the valid region.
 * Multi-channel inputs score each channel separately and average; batches
 * average over items.
 */
template<typename T>
double ssim(const Tensor4<T>& a, const Tensor4<T>& b) {
	detail::require_same_dims(a, b, "ssim");
	if (a.h() < detail::kSsimWindow || a.w() < detail::kSsimWindow)
		throw ConfigError("ssim: image " + to_string(a.shape()) + " is smaller than the 11x11 window");
	const std::size_t h = a.h(), w = a.w();
	double total = 0;
	std::vector<double> pa(h * w), pb(h * w);
	for (std::size_t n = 0; n < a.n(); ++n)
		for (std::size_t c = 0; c < a.c(); ++c) {
			for (std::size_t y = 0; y < h; ++y)
				for (std::size_t x = 0; x < w; ++x) {
					pa[y * w + x] = detail::to_8bit(a(n, c, y, x));
					pb[y * w + x] = detail::to_8bit(b(n, c, y, x));
				}
			total += detail::ssim_plane(pa, pb, h, w);
		}
	return total / static_cast<double>(a.n() * a.c());
}

/**
 * PSNR and SSIM of `restored` against `reference`, optionally on the luma
 * channel only and with `border` pixels cropped from each side.
 */
template<typename T>
MetricResult measure(const Tensor4<T>& restored, const Tensor4<T>& reference, bool y_channel = false,
					 std::size_t border = 0) {
	Tensor4<T> a = restored, b = reference;
	if (y_channel && a.c() == 3) {
		a = rgb_to_y(a);
		b = rgb_to_y(b);
	}
	a = crop_border(a, border);
	b = crop_border(b, border);
	return {psnr(a, b), ssim(a, b)};
}

}  // namespace rnan

#endif  // RNAN_METRICS_HPP_
