#ifndef RNAN_TRAIN_HPP_
#define RNAN_TRAIN_HPP_

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "rnan/checkpoint.hpp"
#include "rnan/degrade.hpp"
#include "rnan/ensemble.hpp"
#include "rnan/network.hpp"

namespace rnan {

struct TrainConfig {
	std::size_t batch_size = 16;
	std::size_t patch_size = 48;
	double lr0 = 1e-4;
	std::size_t lr_halve_every = 200'000;
	double adam_beta1 = 0.9;
	double adam_beta2 = 0.999;
	double adam_eps = 1e-8;
	std::size_t max_iters = 1000;
	std::uint64_t seed = 1;
	std::size_t checkpoint_every = 0;  ///< 0 saves only at the end
	bool augment = true;               ///< random flips and quarter turns
	std::size_t threads = 1;           ///< batch items processed concurrently

	void validate() const {
		if (batch_size < 1 || patch_size < 1) throw ConfigError("train config: batch_size and patch_size must be >= 1");
		if (lr_halve_every < 1) throw ConfigError("train config: lr_halve_every must be >= 1");
		if (!(lr0 > 0)) throw ConfigError("train config: lr0 must be positive");
		if (!(adam_beta1 > 0 && adam_beta1 < 1) || !(adam_beta2 > 0 && adam_beta2 < 1))
			throw ConfigError("train config: Adam betas must lie in (0, 1)");
		if (!(adam_eps > 0)) throw ConfigError("train config: adam_eps must be positive");
		if (threads < 1) throw ConfigError("train config: threads must be >= 1");
	}

	/// Settings for single-machine runs: batch 4 of 32×32 patches.
	static TrainConfig desk() {
		TrainConfig t;
		t.batch_size = 4;
		t.patch_size = 32;
		t.max_iters = 2000;
		return t;
	}
};

inline double lr_at(const TrainConfig& cfg, std::size_t iter) {
	return cfg.lr0 * std::ldexp(1.0, -static_cast<int>(std::min<std::size_t>(iter / cfg.lr_halve_every, 1000)));
}

template<typename T>
struct LossAndGrad {
	double loss = 0;
	Tensor4<T> grad;
};

/// Mean squared error over all elements and its gradient 2·(pred − target)/count.
template<typename T>
LossAndGrad<T> l2_loss(const Tensor4<T>& pred, const Tensor4<T>& target, std::size_t count = 0) {
	if (pred.shape() != target.shape())
		throw ConfigError("l2_loss: shapes differ, " + to_string(pred.shape()) + " vs " + to_string(target.shape()));
	// `count` lets a batch be scored item by item with the batch-wide normaliser
	const double denom = static_cast<double>(count ? count : pred.size());
	LossAndGrad<T> out{0, Tensor4<T>(pred.shape())};
	for (std::size_t i = 0; i < pred.size(); ++i) {
		const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
		out.loss += d * d;
		out.grad[i] = static_cast<T>(2 * d / denom);
	}
	out.loss /= denom;
	return out;
}

/// One bias-corrected Adam update; increments the store's step counter.
template<typename T>
void adam_step(ParamStore<T>& store, const Gradients<T>& grads, double lr, const TrainConfig& cfg) {
	if (grads.size() != store.size())
		throw ConfigError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
						  std::to_string(store.size()) + " parameters");
	const std::uint64_t t = store.step() + 1;
	const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
	const double c1 = 1 - std::pow(b1, static_cast<double>(t)), c2 = 1 - std::pow(b2, static_cast<double>(t));
	for (std::size_t i = 0; i < store.size(); ++i) {
		auto& e = store.entry(i);
		const auto& g = grads[i];
		if (g.shape() != e.value.shape()) throw ConfigError("adam_step: gradient shape mismatch for " + e.name);
		for (std::size_t k = 0; k < g.size(); ++k) {
			const double gk = g[k];
			const double m = b1 * e.adam_m[k] + (1 - b1) * gk;
			const double v = b2 * e.adam_v[k] + (1 - b2) * gk * gk;
			e.adam_m[k] = static_cast<T>(m);
			e.adam_v[k] = static_cast<T>(v);
			e.value[k] = static_cast<T>(e.value[k] - lr * (m / c1) / (std::sqrt(v / c2) + cfg.adam_eps));
		}
	}
	store.set_step(t);
}

/// A training image; `lq` optionally holds a fixed, pre-degraded counterpart of equal size.
struct CorpusImage {
	std::string id;
	Tensor4f hq;
	std::optional<Tensor4f> lq{};
};

using Corpus = std::vector<CorpusImage>;

struct PatchPair {
	Tensor4f lq, hq;
	std::size_t image = 0;
	std::size_t top = 0, left = 0;
	unsigned transform = 0;
};

/// Indices of images large enough for `patch`; the rest are reported to `warn`.
inline std::vector<std::size_t> usable_images(const Corpus& corpus, std::size_t patch, std::ostream* warn = nullptr) {
	if (corpus.empty()) throw ConfigError("training corpus is empty");
	std::vector<std::size_t> idx;
	for (std::size_t i = 0; i < corpus.size(); ++i) {
		const auto& img = corpus[i];
		if (img.hq.n() != 1) throw ConfigError("corpus image '" + img.id + "' must hold a single item");
		if (img.lq && img.lq->shape() != img.hq.shape())
			throw ConfigError("corpus image '" + img.id + "': LQ and HQ shapes differ");
		if (img.hq.h() >= patch && img.hq.w() >= patch)
			idx.push_back(i);
		else if (warn)
			*warn << "warning: skipping '" << img.id << "' (" << img.hq.h() << "x" << img.hq.w()
				  << ") smaller than the " << patch << "px patch\n";
	}
	if (idx.empty()) throw ConfigError("no corpus image is at least " + std::to_string(patch) + " pixels on each side");
	return idx;
}

namespace detail {

inline Tensor4f crop(const Tensor4f& img, std::size_t top, std::size_t left, std::size_t size) {
	Tensor4f out({1, img.c(), size, size});
	for (std::size_t c = 0; c < img.c(); ++c)
		for (std::size_t y = 0; y < size; ++y)
			for (std::size_t x = 0; x < size; ++x) out(0, c, y, x) = img(0, c, top + y, left + x);
	return out;
}

}  // namespace detail

/**
 * Batch for iteration `iter`: item b draws its image, crop and transform from
 * a stream keyed by (seed, iter, b), so batches can be produced in any order.
 * The HQ crop is transformed first and then degraded, which keeps mosaics
 * aligned to the pattern origin and gives every item fresh noise; a stored LQ
 * image is cropped and transformed identically instead.
 */
inline std::vector<PatchPair> sample_patches(const Corpus& corpus, const DegradationSpec& spec, const TrainConfig& cfg,
											 std::size_t iter, const std::vector<std::size_t>* usable = nullptr) {
	const std::vector<std::size_t> own = usable ? std::vector<std::size_t>{} : usable_images(corpus, cfg.patch_size);
	const auto& pool = usable ? *usable : own;
	std::vector<PatchPair> batch;
	for (std::size_t b = 0; b < cfg.batch_size; ++b) {
		CounterRng rng(derive_seed(cfg.seed, 0x7A7C, iter, b));
		PatchPair p;
		p.image = pool[rng.below(pool.size())];
		const auto& img = corpus[p.image];
		p.top = rng.below(img.hq.h() - cfg.patch_size + 1);
		p.left = rng.below(img.hq.w() - cfg.patch_size + 1);
		p.transform = cfg.augment ? static_cast<unsigned>(rng.below(8)) : 0u;
		p.hq = dihedral(detail::crop(img.hq, p.top, p.left, cfg.patch_size), p.transform);
		if (img.lq) {
			p.lq = dihedral(detail::crop(*img.lq, p.top, p.left, cfg.patch_size), p.transform);
		} else {
			DegradationSpec s = spec;
			s.seed = derive_seed(spec.seed, iter, b);
			p.lq = degrade(p.hq, s);
		}
		batch.push_back(std::move(p));
	}
	return batch;
}

class TrainingDiverged : public std::runtime_error {
public:
	using std::runtime_error::runtime_error;
};

struct TrainOutputs {
	std::ostream* loss_log = nullptr;  ///< receives the `iter,lr,loss` CSV
	std::ostream* messages = nullptr;  ///< warnings and progress lines
	std::filesystem::path checkpoint{};  ///< empty: no checkpoint files
	std::size_t progress_every = 0;
};

struct TrainResult {
	ParamStore<float> params;
	std::vector<double> losses;
};

namespace detail {

struct ItemResult {
	double loss = 0;
	Gradients<float> grads;
};

inline ItemResult train_item(const Rnan& net, const ParamStore<float>& params, const PatchPair& p, std::size_t count) {
	NetworkCache<float> cache;
	const auto pred = net.forward(p.lq, params, &cache);
	auto lg = l2_loss(pred, p.hq, count);
	ItemResult r{lg.loss, Gradients<float>(params)};
	net.backward(cache, lg.grad, params, r.grads);
	return r;
}

}  // namespace detail

/**
 * Adam on the mean squared error between network(LQ) and HQ, one batch per
 * iteration. Batch items run on up to `threads` threads, but losses and
 * gradients are always summed in item order, so results are bit-identical
 * for any thread count.
 */
inline TrainResult train(const Corpus& corpus, const DegradationSpec& spec, const NetworkConfig& net_cfg,
						 const TrainConfig& cfg, ParamStore<float> params, const TrainOutputs& out = {}) {
	cfg.validate();
	spec.validate();
	const Rnan net(net_cfg);
	net.check_store(params);
	const auto pool = usable_images(corpus, cfg.patch_size, out.messages);
	const std::size_t count = cfg.batch_size * net_cfg.in_channels * cfg.patch_size * cfg.patch_size;
	for (const auto& img : corpus)
		if (img.hq.c() != net_cfg.in_channels)
			throw ConfigError("corpus image '" + img.id + "' has " + std::to_string(img.hq.c()) +
							  " channels, network expects " + std::to_string(net_cfg.in_channels));

	TrainResult result;
	if (out.loss_log) *out.loss_log << "iter,lr,loss\n";
	const auto save = [&](const ParamStore<float>& p) {
		if (!out.checkpoint.empty()) save_checkpoint(out.checkpoint, net_cfg, p, true);
	};

	for (std::size_t iter = 0; iter < cfg.max_iters; ++iter) {
		const double lr = lr_at(cfg, iter);
		const auto batch = sample_patches(corpus, spec, cfg, iter, &pool);
		Gradients<float> grads(params);
		double loss = 0;
		for (std::size_t first = 0; first < batch.size(); first += cfg.threads) {
			const std::size_t n = std::min(cfg.threads, batch.size() - first);
			std::vector<detail::ItemResult> items(n);
			if (n == 1) {
				items[0] = detail::train_item(net, params, batch[first], count);
			} else {
				std::vector<std::jthread> workers;
				for (std::size_t k = 0; k < n; ++k)
					workers.emplace_back([&, k] { items[k] = detail::train_item(net, params, batch[first + k], count); });
			}
			for (auto& r : items) {
				loss += r.loss;
				grads += r.grads;
			}
		}
		if (!std::isfinite(loss) || !grads.all_finite()) {
			std::ostringstream msg;
			msg << "training diverged at iteration " << iter << ": loss " << loss << ", lr " << lr << ", grad-norm "
				<< grads.norm();
			throw TrainingDiverged(msg.str());
		}
		adam_step(params, grads, lr, cfg);
		result.losses.push_back(loss);
		if (out.loss_log) {
			std::ostringstream line;
			line.precision(9);
			line << iter << ',' << lr << ',' << loss << '\n';
			*out.loss_log << line.str();
		}
		if (out.messages && out.progress_every && (iter + 1) % out.progress_every == 0)
			*out.messages << "iter " << iter + 1 << "/" << cfg.max_iters << "  loss " << loss << "  lr " << lr << "\n";
		if (cfg.checkpoint_every && (iter + 1) % cfg.checkpoint_every == 0 && iter + 1 < cfg.max_iters) save(params);
	}
	save(params);
	result.params = std::move(params);
	return result;
}

/// Trains from the seeded initialisation of `net_cfg`.
inline TrainResult train(const Corpus& corpus, const DegradationSpec& spec, const NetworkConfig& net_cfg,
						 const TrainConfig& cfg, const TrainOutputs& out = {}, InitMode init = InitMode::uniform) {
	return train(corpus, spec, net_cfg, cfg, Rnan(net_cfg).init_params<float>(cfg.seed, init), out);
}

}  // namespace rnan

#endif  // RNAN_TRAIN_HPP_
