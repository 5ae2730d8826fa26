#ifndef RNAN_SYNTHETIC_HPP_
#define RNAN_SYNTHETIC_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <array>
#include <numbers>
#include <vector>

#include "rnan/random.hpp"
#include "rnan/tensor.hpp"

namespace rnan {

/**
 * Deterministic natural-looking test image in [0.06, 0.94]: smooth shading,
 * a handful of flat-coloured discs and rectangles with sharp edges, and a
 * striped texture patch. Colour channels share structure and differ in tint,
 * as real photographs do. Same (shape, seed) → same image.
 */
template<typename T = float>
Tensor4<T> synthetic_image(std::size_t h, std::size_t w, std::size_t channels, std::uint64_t seed) {
	CounterRng rng(derive_seed(seed, 0x5717));
	const double H = static_cast<double>(h), W = static_cast<double>(w);
	constexpr double tau = 2 * std::numbers::pi;

	struct Wave {
		double fy, fx, phase, amp;
	};
	std::array<Wave, 4> shading{};
	for (auto& s : shading)
		s = {rng.uniform(0.2, 1.5), rng.uniform(0.2, 1.5), rng.uniform(0, tau), rng.uniform(0.05, 0.15)};

	struct Shape {
		bool disc;
		double cy, cx, ry, rx, level;
		std::array<double, 3> tint;
	};
	const std::size_t n_shapes = 3 + rng.below(4);
	std::vector<Shape> shapes;
	for (std::size_t i = 0; i < n_shapes; ++i) {
		Shape s{rng.uniform() < 0.5,
				rng.uniform(0, H),
				rng.uniform(0, W),
				rng.uniform(0.08, 0.3) * H,
				rng.uniform(0.08, 0.3) * W,
				rng.uniform(0.15, 0.85),
				{rng.uniform(0.85, 1.15), rng.uniform(0.85, 1.15), rng.uniform(0.85, 1.15)}};
		shapes.push_back(s);
	}
	const double ty = rng.uniform(0, H * 0.6), tx = rng.uniform(0, W * 0.6);
	const double th = rng.uniform(0.2, 0.4) * H, tw = rng.uniform(0.2, 0.4) * W;
	const double stripe_angle = rng.uniform(0, std::numbers::pi), stripe_period = rng.uniform(3.0, 7.0);
	const std::array<double, 3> base_tint{rng.uniform(0.9, 1.1), rng.uniform(0.9, 1.1), rng.uniform(0.9, 1.1)};

	Tensor4<T> img({1, channels, h, w});
	for (std::size_t y = 0; y < h; ++y)
		for (std::size_t x = 0; x < w; ++x) {
			const double py = static_cast<double>(y), px = static_cast<double>(x);
			double lum = 0.5;
			for (const auto& s : shading) lum += s.amp * std::sin(tau * (s.fy * py / H + s.fx * px / W) + s.phase);
			std::array<double, 3> tint = base_tint;
			for (const auto& s : shapes) {
				const double dy = (py - s.cy) / s.ry, dx = (px - s.cx) / s.rx;
				const bool inside = s.disc ? dy * dy + dx * dx <= 1 : std::abs(dy) <= 1 && std::abs(dx) <= 1;
				if (inside) {
					lum = 0.3 * lum + 0.7 * s.level;
					tint = s.tint;
				}
			}
			if (py >= ty && py < ty + th && px >= tx && px < tx + tw) {
				const double u = px * std::cos(stripe_angle) + py * std::sin(stripe_angle);
				lum += 0.12 * std::sin(tau * u / stripe_period);
			}
			for (std::size_t c = 0; c < channels; ++c) {
				const double v = channels == 3 ? 0.5 + (lum - 0.5) * tint[c] + 0.04 * (tint[c] - 1) * 5 : lum;
				img(0, c, y, x) = static_cast<T>(std::clamp(v, 0.06, 0.94));
			}
		}
	return img;
}

}  // namespace rnan

#endif  // RNAN_SYNTHETIC_HPP_
