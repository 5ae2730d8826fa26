#ifndef RNAN_DEGRADE_HPP_
#define RNAN_DEGRADE_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "rnan/random.hpp"
#include "rnan/tensor.hpp"

namespace rnan {

enum class DegradationKind { awgn, mosaic, jpeg, bicubic_sr };
enum class BayerPattern { RGGB, BGGR, GRBG, GBRG };

inline std::string_view to_string(DegradationKind k) {
	switch (k) {
	case DegradationKind::awgn: return "awgn";
	case DegradationKind::mosaic: return "mosaic";
	case DegradationKind::jpeg: return "jpeg";
	case DegradationKind::bicubic_sr: return "bicubic_sr";
	}
	return "?";
}

inline DegradationKind parse_degradation_kind(std::string_view s) {
	if (s == "awgn" || s == "noise") return DegradationKind::awgn;
	if (s == "mosaic" || s == "demosaic") return DegradationKind::mosaic;
	if (s == "jpeg" || s == "car") return DegradationKind::jpeg;
	if (s == "bicubic_sr" || s == "sr") return DegradationKind::bicubic_sr;
	throw ConfigError("unknown degradation kind '" + std::string(s) + "'");
}

inline std::string_view to_string(BayerPattern p) {
	switch (p) {
	case BayerPattern::RGGB: return "RGGB";
	case BayerPattern::BGGR: return "BGGR";
	case BayerPattern::GRBG: return "GRBG";
	case BayerPattern::GBRG: return "GBRG";
	}
	return "?";
}

inline BayerPattern parse_bayer_pattern(std::string_view s) {
	if (s == "RGGB") return BayerPattern::RGGB;
	if (s == "BGGR") return BayerPattern::BGGR;
	if (s == "GRBG") return BayerPattern::GRBG;
	if (s == "GBRG") return BayerPattern::GBRG;
	throw ConfigError("unknown Bayer pattern '" + std::string(s) + "' (expected RGGB, BGGR, GRBG or GBRG)");
}

struct DegradationSpec {
	DegradationKind kind = DegradationKind::awgn;
	double sigma = 25;  ///< noise std on the 0–255 scale
	BayerPattern pattern = BayerPattern::RGGB;
	int quality = 10;   ///< JPEG quality, 1–100
	int scale = 2;      ///< super-resolution factor, 2–4
	std::uint64_t seed = 0;

	void validate() const {
		if (!(sigma >= 0) || !std::isfinite(sigma)) throw ConfigError("degradation: sigma must be a finite value >= 0");
		if (quality < 1 || quality > 100) throw ConfigError("degradation: JPEG quality must be in [1, 100]");
		if (scale < 2 || scale > 4) throw ConfigError("degradation: scale must be 2, 3 or 4");
	}
};

/// img + N(0, (sigma/255)²) per element, unclipped. Same seed → same noise.
template<typename T>
Tensor4<T> add_awgn(const Tensor4<T>& img, double sigma, std::uint64_t seed) {
	if (!(sigma >= 0)) throw ConfigError("add_awgn: sigma must be >= 0");
	Tensor4<T> out = img;
	if (sigma == 0) return out;
	CounterRng rng(derive_seed(seed, 0xA5C7));
	const double s = sigma / 255.0;
	for (auto& v : out.values()) v = static_cast<T>(static_cast<double>(v) + s * rng.normal());
	return out;
}

/// Channel (0 = R, 1 = G, 2 = B) sampled at pixel (y, x) under `pattern`.
inline std::size_t bayer_channel(BayerPattern pattern, std::size_t y, std::size_t x) {
	static constexpr std::array<std::array<std::size_t, 4>, 4> layout{{
		{0, 1, 1, 2},  // RGGB
		{2, 1, 1, 0},  // BGGR
		{1, 0, 2, 1},  // GRBG
		{1, 2, 0, 1},  // GBRG
	}};
	return layout[static_cast<std::size_t>(pattern)][(y % 2) * 2 + x % 2];
}

/// Keeps the single colour sample each pixel of a Bayer sensor would record.
template<typename T>
Tensor4<T> mosaic_bayer(const Tensor4<T>& img, BayerPattern pattern = BayerPattern::RGGB) {
	if (img.c() != 3) throw ConfigError("mosaic_bayer: expected 3 channels, got " + std::to_string(img.c()));
	Tensor4<T> out(img.shape());
	for (std::size_t n = 0; n < img.n(); ++n)
		for (std::size_t y = 0; y < img.h(); ++y)
			for (std::size_t x = 0; x < img.w(); ++x) {
				const std::size_t c = bayer_channel(pattern, y, x);
				out(n, c, y, x) = img(n, c, y, x);
			}
	return out;
}

namespace detail {

inline constexpr std::array<int, 64> kJpegLuminance{
	16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,  14, 13, 16, 24,  40,  57,
	69, 56, 14, 17, 22,  29,  51,  87,  80, 62, 18, 22, 37,  56,  68,  109, 103, 77, 24, 35, 55, 64,
	81, 104, 113, 92, 49, 64, 78,  87,  103, 121, 120, 101, 72, 92, 95, 98,  112, 100, 103, 99};

inline std::array<double, 64> dct_basis() {
	std::array<double, 64> b{};  // b[u*8 + x] = α(u) cos((2x+1)uπ/16)
	for (int u = 0; u < 8; ++u)
		for (int x = 0; x < 8; ++x)
			b[u * 8 + x] = (u == 0 ? std::sqrt(0.125) : 0.5) * std::cos((2 * x + 1) * u * std::numbers::pi / 16);
	return b;
}

}  // namespace detail

/// Annex-K luminance table scaled to `quality` (libjpeg convention), entries clamped to [1, 255].
inline std::array<int, 64> jpeg_quant_table(int quality) {
	if (quality < 1 || quality > 100) throw ConfigError("jpeg: quality must be in [1, 100]");
	const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
	std::array<int, 64> q{};
	for (std::size_t i = 0; i < 64; ++i) q[i] = std::clamp((detail::kJpegLuminance[i] * scale + 50) / 100, 1, 255);
	return q;
}

/**
 * JPEG-style compression round trip of every plane: 8×8 orthonormal DCT-II
 * on level-shifted 8-bit values, quantisation by the scaled luminance table,
 * dequantisation, inverse DCT, then rounding to 8-bit and clamping to [0, 1].
 * Partial edge blocks are completed by replicating the last row/column.
 * Entropy coding is lossless and therefore omitted.
 */
template<typename T>
Tensor4<T> jpeg_degrade(const Tensor4<T>& img, int quality) {
	static const auto basis = detail::dct_basis();
	const auto table = jpeg_quant_table(quality);
	Tensor4<T> out(img.shape());
	const std::size_t h = img.h(), w = img.w();
	std::array<double, 64> block{}, tmp{}, coef{};
	for (std::size_t n = 0; n < img.n(); ++n)
		for (std::size_t c = 0; c < img.c(); ++c)
			for (std::size_t by = 0; by < h; by += 8)
				for (std::size_t bx = 0; bx < w; bx += 8) {
					for (std::size_t y = 0; y < 8; ++y)
						for (std::size_t x = 0; x < 8; ++x) {
							const std::size_t sy = std::min(by + y, h - 1), sx = std::min(bx + x, w - 1);
							block[y * 8 + x] = static_cast<double>(img(n, c, sy, sx)) * 255.0 - 128.0;
						}
					// forward: coef = B · block · Bᵀ
					for (int u = 0; u < 8; ++u)
						for (int x = 0; x < 8; ++x) {
							double acc = 0;
							for (int y = 0; y < 8; ++y) acc += basis[u * 8 + y] * block[y * 8 + x];
							tmp[u * 8 + x] = acc;
						}
					for (int u = 0; u < 8; ++u)
						for (int v = 0; v < 8; ++v) {
							double acc = 0;
							for (int x = 0; x < 8; ++x) acc += tmp[u * 8 + x] * basis[v * 8 + x];
							const double q = table[u * 8 + v];
							coef[u * 8 + v] = std::round(acc / q) * q;
						}
					// inverse: block = Bᵀ · coef · B
					for (int y = 0; y < 8; ++y)
						for (int v = 0; v < 8; ++v) {
							double acc = 0;
							for (int u = 0; u < 8; ++u) acc += basis[u * 8 + y] * coef[u * 8 + v];
							tmp[y * 8 + v] = acc;
						}
					for (std::size_t y = 0; y < 8 && by + y < h; ++y)
						for (std::size_t x = 0; x < 8 && bx + x < w; ++x) {
							double acc = 0;
							for (std::size_t v = 0; v < 8; ++v) acc += tmp[y * 8 + v] * basis[v * 8 + x];
							const double pixel = std::clamp(std::round(acc + 128.0), 0.0, 255.0);
							out(n, c, by + y, bx + x) = static_cast<T>(pixel / 255.0);
						}
				}
	return out;
}

namespace detail {

struct Taps {
	std::vector<std::size_t> index;  // flattened, `width` taps per output sample
	std::vector<double> weight;
	std::size_t width = 0;
};

inline double keys_cubic(double x) {
	constexpr double a = -0.5;
	const double t = std::abs(x);
	if (t <= 1) return ((a + 2) * t - (a + 3)) * t * t + 1;
	if (t < 2) return ((a * t - 5 * a) * t + 8 * a) * t - 4 * a;
	return 0;
}

// Pixel-centre aligned taps for resampling `in` samples to `out`; when
// shrinking, the kernel is stretched by 1/scale so it also low-passes.
inline Taps bicubic_taps(std::size_t in, std::size_t out) {
	const double scale = static_cast<double>(out) / static_cast<double>(in);
	const double stretch = scale < 1 ? scale : 1.0;
	const double support = 2.0 / stretch;
	Taps t;
	t.width = static_cast<std::size_t>(std::ceil(2 * support)) + 2;
	t.index.assign(out * t.width, 0);
	t.weight.assign(out * t.width, 0.0);
	for (std::size_t o = 0; o < out; ++o) {
		const double center = (static_cast<double>(o) + 0.5) / scale - 0.5;
		const long first = static_cast<long>(std::floor(center - support));
		double sum = 0;
		for (std::size_t k = 0; k < t.width; ++k) {
			const long j = first + static_cast<long>(k);
			const double wgt = keys_cubic((center - static_cast<double>(j)) * stretch);
			t.index[o * t.width + k] = static_cast<std::size_t>(std::clamp<long>(j, 0, static_cast<long>(in) - 1));
			t.weight[o * t.width + k] = wgt;
			sum += wgt;
		}
		for (std::size_t k = 0; k < t.width; ++k) t.weight[o * t.width + k] /= sum;
	}
	return t;
}

}  // namespace detail

/// Separable bicubic (a = −0.5) resampling to an explicit size, edges replicated.
template<typename T>
Tensor4<T> bicubic_resize_to(const Tensor4<T>& img, std::size_t out_h, std::size_t out_w) {
	if (out_h == 0 || out_w == 0 || img.h() == 0 || img.w() == 0)
		throw ConfigError("bicubic_resize: empty input or output size");
	if (out_h == img.h() && out_w == img.w()) return img;
	const auto ty = detail::bicubic_taps(img.h(), out_h), tx = detail::bicubic_taps(img.w(), out_w);
	Tensor4<T> out({img.n(), img.c(), out_h, out_w});
	std::vector<double> rows(img.h() * out_w);
	for (std::size_t n = 0; n < img.n(); ++n)
		for (std::size_t c = 0; c < img.c(); ++c) {
			for (std::size_t y = 0; y < img.h(); ++y)
				for (std::size_t x = 0; x < out_w; ++x) {
					double acc = 0;
					for (std::size_t k = 0; k < tx.width; ++k)
						acc += tx.weight[x * tx.width + k] * static_cast<double>(img(n, c, y, tx.index[x * tx.width + k]));
					rows[y * out_w + x] = acc;
				}
			for (std::size_t y = 0; y < out_h; ++y)
				for (std::size_t x = 0; x < out_w; ++x) {
					double acc = 0;
					for (std::size_t k = 0; k < ty.width; ++k)
						acc += ty.weight[y * ty.width + k] * rows[ty.index[y * ty.width + k] * out_w + x];
					out(n, c, y, x) = static_cast<T>(acc);
				}
		}
	return out;
}

/// Resizes by num/den; the output extent is ceil(extent · num / den).
template<typename T>
Tensor4<T> bicubic_resize(const Tensor4<T>& img, std::size_t scale_num, std::size_t scale_den) {
	if (scale_num == 0 || scale_den == 0) throw ConfigError("bicubic_resize: scale must be positive");
	const auto extent = [&](std::size_t v) { return (v * scale_num + scale_den - 1) / scale_den; };
	return bicubic_resize_to(img, extent(img.h()), extent(img.w()));
}

/**
 * Low-quality counterpart of `img` under `spec`. Super-resolution input is
 * bicubic-downscaled by `scale` and upscaled back to the original size, so
 * every task maps images to images of the same size.
 */
template<typename T>
Tensor4<T> degrade(const Tensor4<T>& img, const DegradationSpec& spec) {
	spec.validate();
	switch (spec.kind) {
	case DegradationKind::awgn: return add_awgn(img, spec.sigma, spec.seed);
	case DegradationKind::mosaic: return mosaic_bayer(img, spec.pattern);
	case DegradationKind::jpeg: return jpeg_degrade(img, spec.quality);
	case DegradationKind::bicubic_sr: {
		const auto s = static_cast<std::size_t>(spec.scale);
		const auto small = bicubic_resize(img, 1, s);
		return bicubic_resize_to(small, img.h(), img.w());
	}
	}
	throw ConfigError("unknown degradation kind");
}

}  // namespace rnan

#endif  // RNAN_DEGRADE_HPP_
