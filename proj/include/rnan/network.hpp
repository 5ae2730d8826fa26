#ifndef RNAN_NETWORK_HPP_
#define RNAN_NETWORK_HPP_

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "rnan/config.hpp"
#include "rnan/layers.hpp"

namespace rnan {

template<typename T>
struct NetworkCache {
	Tensor4<T> image, head_out;
	std::vector<AttentionBlockCache<T>> blocks;
	std::vector<Tensor4<T>> block_inputs;
	Tensor4<T> tail_in;
};

/**
 * Residual (non-)local attention network: a shallow conv3x3 feature
 * extractor, a stack of attention blocks, a conv3x3 reconstruction layer and
 * an optional global skip from the input image.
 *
 * The object holds only the layout; parameters live in a ParamStore built
 * from `plan()`, so one network can run over float and double stores alike.
 */
class Rnan {
public:
	explicit Rnan(NetworkConfig cfg) : cfg_(std::move(cfg)) {
		cfg_.validate();
		const std::size_t f = cfg_.block.features;
		head_ = ConvRef::declare(plan_, "head", ConvSpec::same(cfg_.in_channels, f));
		for (std::size_t i = 0; i < cfg_.num_blocks(); ++i) {
			BlockConfig b = cfg_.block;
			b.non_local = cfg_.is_nonlocal(i);
			blocks_.push_back(AttentionBlockRef::declare(plan_, "blocks." + std::to_string(i), b));
		}
		tail_ = ConvRef::declare(plan_, "tail", ConvSpec::same(f, cfg_.in_channels));
	}

	const NetworkConfig& config() const { return cfg_; }
	const ParamPlan& plan() const { return plan_; }
	const std::vector<AttentionBlockRef>& blocks() const { return blocks_; }
	const ConvRef& head() const { return head_; }
	const ConvRef& tail() const { return tail_; }

	template<typename T>
	ParamStore<T> init_params(std::uint64_t seed, InitMode mode = InitMode::uniform) const {
		return initialize<T>(plan_, seed, mode);
	}

	/// Throws unless `store` holds exactly this network's parameters, in order.
	template<typename T>
	void check_store(const ParamStore<T>& store) const {
		const auto& specs = plan_.specs();
		if (store.size() != specs.size())
			throw ConfigError("parameter store has " + std::to_string(store.size()) + " tensors, network needs " +
							  std::to_string(specs.size()));
		for (std::size_t i = 0; i < specs.size(); ++i) {
			const auto& e = store.entry(i);
			if (e.name != specs[i].name || e.value.shape() != specs[i].shape)
				throw ConfigError("parameter " + std::to_string(i) + " ('" + e.name + "') does not match '" +
								  specs[i].name + "' " + to_string(specs[i].shape));
		}
	}

	template<typename T>
	Tensor4<T> forward(const Tensor4<T>& image, const ParamStore<T>& p, NetworkCache<T>* cache = nullptr) const {
		if (image.c() != cfg_.in_channels)
			throw ConfigError("network expects " + std::to_string(cfg_.in_channels) + " channels, image has " +
							  std::to_string(image.c()));
		Tensor4<T> x = conv_forward(head_, image, p);
		if (cache) {
			cache->image = image;
			cache->head_out = x;
			cache->blocks.assign(blocks_.size(), {});
			cache->block_inputs.clear();
		}
		for (std::size_t i = 0; i < blocks_.size(); ++i) {
			if (cache) cache->block_inputs.push_back(x);
			x = attention_block(blocks_[i], x, p, cache ? &cache->blocks[i] : nullptr);
		}
		Tensor4<T> out = conv_forward(tail_, x, p);
		if (cache) cache->tail_in = std::move(x);
		if (cfg_.global_residual) out += image;
		return out;
	}

	/// Accumulates parameter gradients into `g`; returns the image gradient.
	template<typename T>
	Tensor4<T> backward(const NetworkCache<T>& c, const Tensor4<T>& gy, const ParamStore<T>& p,
						Gradients<T>& g) const {
		Tensor4<T> gx = conv_backward(tail_, c.tail_in, gy, p, g);
		for (std::size_t i = blocks_.size(); i-- > 0;) gx = attention_block_backward(blocks_[i], c.blocks[i], gx, p, g);
		Tensor4<T> gimg = conv_backward(head_, c.image, gx, p, g);
		if (cfg_.global_residual) gimg += gy;
		return gimg;
	}

private:
	NetworkConfig cfg_;
	ParamPlan plan_;
	ConvRef head_, tail_;
	std::vector<AttentionBlockRef> blocks_;
};

template<typename T>
Tensor4<T> rnan_forward(const Tensor4<T>& image, const ParamStore<T>& params, const NetworkConfig& cfg) {
	const Rnan net(cfg);
	net.check_store(params);
	return net.forward(image, params);
}

/// Number of learnable scalars (weights and biases) of the network built from cfg.
inline std::size_t count_parameters(const NetworkConfig& cfg) { return Rnan(cfg).plan().total_scalars(); }

/**
 * Parameter counts grouped by the first `depth` dot-separated name components
 * (the trailing weight/bias leaf never counts), in declaration order:
 * depth 2 gives head, blocks.0, ..., tail.
 */
inline std::vector<std::pair<std::string, std::size_t>> parameter_breakdown(const NetworkConfig& cfg,
																			 std::size_t depth = 2) {
	std::vector<std::pair<std::string, std::size_t>> groups;
	const Rnan net(cfg);
	for (const auto& spec : net.plan().specs()) {
		const std::string& name = spec.name;
		std::size_t end = 0;
		for (std::size_t k = 0; k < depth; ++k) {
			const std::size_t dot = name.find('.', end == 0 ? 0 : end + 1);
			if (dot == std::string::npos) break;
			end = dot;
		}
		const std::string key = name.substr(0, end);
		if (groups.empty() || groups.back().first != key) groups.emplace_back(key, 0);
		groups.back().second += spec.shape.size();
	}
	return groups;
}

}  // namespace rnan

#endif  // RNAN_NETWORK_HPP_
