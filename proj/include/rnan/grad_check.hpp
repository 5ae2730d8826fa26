#ifndef RNAN_GRAD_CHECK_HPP_
#define RNAN_GRAD_CHECK_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <string>
#include <vector>

#include "rnan/random.hpp"
#include "rnan/tensor.hpp"

namespace rnan {

struct GradCheckReport {
	std::string op_name;
	double max_rel_error = 0;
	/// (input index, n, c, h, w) of the worst coordinate.
	std::array<std::size_t, 5> worst_coordinate{};
	std::size_t coordinates_checked = 0;
	/// Coordinates left out because the objective stayed non-smooth (a ReLU
	/// kink) within every probed step.
	std::size_t kinks_skipped = 0;

	bool passed(double tolerance) const { return max_rel_error < tolerance; }
};

/**
 * An operation with a hand-written backward pass. `backward` receives the
 * upstream gradient of the scalar objective with respect to the forward
 * output and returns one gradient per input, shaped like that input.
 */
template<typename Op>
concept DifferentiableOp = requires(const Op& op, const std::vector<Tensor4d>& in, const Tensor4d& g) {
	{ op.forward(in) } -> std::convertible_to<Tensor4d>;
	{ op.backward(in, g) } -> std::convertible_to<std::vector<Tensor4d>>;
};

template<typename Forward, typename Backward>
struct LambdaOp {
	Forward fwd;
	Backward bwd;
	Tensor4d forward(const std::vector<Tensor4d>& in) const { return fwd(in); }
	std::vector<Tensor4d> backward(const std::vector<Tensor4d>& in, const Tensor4d& g) const { return bwd(in, g); }
};

template<typename Forward, typename Backward>
LambdaOp<Forward, Backward> make_op(Forward f, Backward b) {
	return {std::move(f), std::move(b)};
}

struct GradCheckOptions {
	/// Seed of the random projection that reduces the output to a scalar.
	std::uint64_t seed = 0x5EED;
	/// Upper bound on checked coordinates per input; 0 checks all of them.
	std::size_t max_coords_per_input = 0;
	/// Inputs excluded from checking (e.g. integer-like masks).
	std::vector<std::size_t> skip_inputs{};
};

namespace detail {

struct FiniteDifference {
	double central, forward, backward;
};

inline double jump(const FiniteDifference& d) { return std::abs(d.forward - d.backward); }

inline double scale(double x, double y) { return std::max({std::abs(x), std::abs(y), 1e-8}); }

inline bool agree(double x, double y) { return std::abs(x - y) <= 2.5e-5 * scale(x, y); }

/**
 * Decides whether the quotients at steps h, h/2, h/4 can be trusted.
 * Curvature separates the one-sided slopes by O(step), so halving the step
 * halves the gap; a ReLU kink near the point leaves a gap that does not shrink
 * and biases the central quotient by up to half of it. Kinks further out bias
 * the central quotients by step-dependent amounts, which the agreement test
 * catches (and a second halving makes cancellation between several kinks
 * unlikely).
 */
inline bool settled(const std::array<FiniteDifference, 3>& d) {
	const bool no_kink = jump(d[0]) <= 1e-4 * scale(d[0].forward, d[0].backward) || jump(d[1]) <= 0.75 * jump(d[0]);
	return no_kink && agree(d[0].central, d[1].central) && agree(d[1].central, d[2].central) &&
		   agree(d[0].central, d[2].central);
}

inline void record_worst(GradCheckReport& report, double rel, std::size_t k, const Shape& s, std::size_t i) {
	if (rel < report.max_rel_error && report.coordinates_checked > 1) return;
	report.max_rel_error = std::max(rel, report.max_rel_error);
	const std::size_t x = i % s.w;
	i /= s.w;
	const std::size_t y = i % s.h;
	i /= s.h;
	report.worst_coordinate = {k, i / s.c, i % s.c, y, x};
}

}  // namespace detail

/**
 * Compares the analytic gradient of ⟨r, op(inputs)⟩ against central
 * finite differences, with r a fixed random projection. Relative error per
 * coordinate is |a − n| / max(|a|, |n|, 1e-8).
 *
 * Each coordinate is probed at steps eps, eps/2, eps/4 and the finest
 * quotient is used once they have settled (see detail::settled); otherwise
 * the step is shrunk by 10×, at most twice, and a coordinate that never
 * settles (a ReLU kink sitting on it) is counted in `kinks_skipped` instead.
 */
template<DifferentiableOp Op>
GradCheckReport grad_check(const std::string& name, const Op& op, std::vector<Tensor4d> inputs, double eps = 1e-5,
						   const GradCheckOptions& options = {}) {
	const Tensor4d out = op.forward(inputs);
	Tensor4d projection(out.shape());
	CounterRng rng(options.seed);
	for (auto& v : projection.values()) v = rng.uniform(-1.0, 1.0);

	const auto objective = [&](const std::vector<Tensor4d>& in) { return inner_product(op.forward(in), projection); };
	const std::vector<Tensor4d> analytic = op.backward(inputs, projection);
	const double center = objective(inputs);

	const auto difference = [&](std::size_t k, std::size_t i, double h) {
		const double saved = inputs[k][i];
		inputs[k][i] = saved + h;
		const double plus = objective(inputs);
		inputs[k][i] = saved - h;
		const double minus = objective(inputs);
		inputs[k][i] = saved;
		return detail::FiniteDifference{(plus - minus) / (2 * h), (plus - center) / h, (center - minus) / h};
	};

	GradCheckReport report{name};
	for (std::size_t k = 0; k < inputs.size(); ++k) {
		if (std::find(options.skip_inputs.begin(), options.skip_inputs.end(), k) != options.skip_inputs.end()) continue;
		if (analytic.at(k).shape() != inputs[k].shape())
			throw ConfigError("grad_check(" + name + "): gradient " + std::to_string(k) + " has shape " +
							  to_string(analytic[k].shape()) + ", input has " + to_string(inputs[k].shape()));
		const std::size_t size = inputs[k].size();
		std::vector<std::size_t> coords;
		if (options.max_coords_per_input == 0 || options.max_coords_per_input >= size) {
			coords.resize(size);
			for (std::size_t i = 0; i < size; ++i) coords[i] = i;
		} else {
			CounterRng pick(derive_seed(options.seed, k + 1));
			for (std::size_t i = 0; i < options.max_coords_per_input; ++i) coords.push_back(pick.below(size));
		}
		for (const std::size_t i : coords) {
			bool accepted = false;
			std::array<detail::FiniteDifference, 3> d{};
			for (double h = eps; !accepted && h >= eps * 1e-2; h /= 10) {
				d = {difference(k, i, h), difference(k, i, h / 2), difference(k, i, h / 4)};
				accepted = detail::settled(d);
			}
			if (!accepted) {
				++report.kinks_skipped;
				continue;
			}
			const double a = analytic[k][i];
			const double numeric = d[2].central;
			const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
			++report.coordinates_checked;
			detail::record_worst(report, rel, k, inputs[k].shape(), i);
		}
	}
	return report;
}

}  // namespace rnan

#endif  // RNAN_GRAD_CHECK_HPP_
