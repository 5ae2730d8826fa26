#ifndef RNAN_ENSEMBLE_HPP_
#define RNAN_ENSEMBLE_HPP_

#include <cstddef>

#include "rnan/network.hpp"

namespace rnan {

/**
 * The eight symmetries of the square: k & 3 counter-clockwise quarter turns
 * applied after a left-right mirror when k & 4. k = 0 is the identity.
 */
template<typename T>
Tensor4<T> dihedral(const Tensor4<T>& t, unsigned k) {
	const std::size_t h = t.h(), w = t.w();
	const bool mirror = (k & 4) != 0;
	const unsigned turns = k & 3;
	const bool swap = turns % 2 == 1;
	Tensor4<T> out({t.n(), t.c(), swap ? w : h, swap ? h : w});
	for (std::size_t n = 0; n < t.n(); ++n)
		for (std::size_t c = 0; c < t.c(); ++c)
			for (std::size_t y = 0; y < h; ++y)
				for (std::size_t x0 = 0; x0 < w; ++x0) {
					const std::size_t x = mirror ? w - 1 - x0 : x0;
					std::size_t oy = y, ox = x;
					switch (turns) {
					case 1: oy = w - 1 - x, ox = y; break;
					case 2: oy = h - 1 - y, ox = w - 1 - x; break;
					case 3: oy = x, ox = h - 1 - y; break;
					default: break;
					}
					out(n, c, oy, ox) = t(n, c, y, x0);
				}
	return out;
}

/// Undoes dihedral(·, k).
template<typename T>
Tensor4<T> dihedral_inverse(const Tensor4<T>& t, unsigned k) {
	if (k & 4) return dihedral(t, k);  // mirrored elements are involutions
	return dihedral(t, (4 - (k & 3)) & 3);
}

/// Average of the network output over the eight dihedral views, each mapped back.
template<typename T>
Tensor4<T> self_ensemble_infer(const Tensor4<T>& img, const ParamStore<T>& store, const NetworkConfig& cfg) {
	const Rnan net(cfg);
	net.check_store(store);
	Tensor4<T> acc(img.shape());
	for (unsigned k = 0; k < 8; ++k) acc += dihedral_inverse(net.forward(dihedral(img, k), store), k);
	for (auto& v : acc.values()) v /= T(8);
	return acc;
}

}  // namespace rnan

#endif  // RNAN_ENSEMBLE_HPP_
