#ifndef RNAN_EVALUATE_HPP_
#define RNAN_EVALUATE_HPP_

#include <cstddef>
#include <ostream>
#include <string>
#include <vector>

#include "rnan/degrade.hpp"
#include "rnan/ensemble.hpp"
#include "rnan/metrics.hpp"
#include "rnan/network.hpp"

namespace rnan {

struct EvalOptions {
	bool self_ensemble = false;
	bool y_channel = false;  ///< score luma only (3-channel images)
};

struct EvalRow {
	std::string image;
	MetricResult restored;
	MetricResult degraded;  ///< the network input scored the same way
};

struct EvalSummary {
	std::vector<EvalRow> rows;
	MetricResult mean;
	MetricResult mean_degraded;
};

/// Network output for one image, optionally averaged over the eight dihedral views.
template<typename T>
Tensor4<T> restore(const Tensor4<T>& lq, const ParamStore<T>& params, const NetworkConfig& cfg, bool self_ensemble) {
	if (self_ensemble) return self_ensemble_infer(lq, params, cfg);
	return rnan_forward(lq, params, cfg);
}

/**
 * Degrades each reference image (image i with seed derive_seed(spec.seed, i)),
 * restores it and scores the unclamped output. Super-resolution results drop
 * `scale` pixels from each border before scoring.
 */
inline EvalSummary evaluate(const std::vector<std::pair<std::string, Tensor4f>>& images, const DegradationSpec& spec,
							const NetworkConfig& cfg, const ParamStore<float>& params, const EvalOptions& opts = {}) {
	spec.validate();
	if (images.empty()) throw ConfigError("evaluate: no images");
	const std::size_t border = spec.kind == DegradationKind::bicubic_sr ? static_cast<std::size_t>(spec.scale) : 0;
	EvalSummary out;
	for (std::size_t i = 0; i < images.size(); ++i) {
		const auto& [id, hq] = images[i];
		DegradationSpec s = spec;
		s.seed = derive_seed(spec.seed, i);
		const Tensor4f lq = degrade(hq, s);
		const Tensor4f sr = restore(lq, params, cfg, opts.self_ensemble);
		EvalRow row{id, measure(sr, hq, opts.y_channel, border), measure(lq, hq, opts.y_channel, border)};
		out.mean.psnr_db += row.restored.psnr_db;
		out.mean.ssim += row.restored.ssim;
		out.mean_degraded.psnr_db += row.degraded.psnr_db;
		out.mean_degraded.ssim += row.degraded.ssim;
		out.rows.push_back(std::move(row));
	}
	const double n = static_cast<double>(images.size());
	for (auto* m : {&out.mean, &out.mean_degraded}) {
		m->psnr_db /= n;
		m->ssim /= n;
	}
	return out;
}

/// `image,psnr_db,ssim` with a final `mean` row.
inline void write_eval_csv(std::ostream& os, const EvalSummary& s) {
	const auto old = os.precision(8);
	os << "image,psnr_db,ssim\n";
	for (const auto& r : s.rows) os << r.image << ',' << r.restored.psnr_db << ',' << r.restored.ssim << '\n';
	os << "mean," << s.mean.psnr_db << ',' << s.mean.ssim << '\n';
	os.precision(old);
}

}  // namespace rnan

#endif  // RNAN_EVALUATE_HPP_
