#ifndef RNAN_CONFIG_HPP_
#define RNAN_CONFIG_HPP_

#include <algorithm>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rnan/tensor.hpp"

namespace rnan {

/// How trunk and mask outputs are merged inside an attention block.
enum class FusionMode {
	proposed_eq8,  ///< trunk·mask + input
	prior_eq7,     ///< trunk·(mask + 1)
	none,          ///< trunk + input, no mask branch
};

inline std::string_view to_string(FusionMode m) {
	switch (m) {
	case FusionMode::proposed_eq8: return "proposed_eq8";
	case FusionMode::prior_eq7: return "prior_eq7";
	case FusionMode::none: return "none";
	}
	return "?";
}

inline FusionMode parse_fusion_mode(std::string_view s) {
	if (s == "proposed_eq8" || s == "proposed") return FusionMode::proposed_eq8;
	if (s == "prior_eq7" || s == "prior") return FusionMode::prior_eq7;
	if (s == "none") return FusionMode::none;
	throw ConfigError("unknown fusion mode '" + std::string(s) + "'");
}

struct BlockConfig {
	std::size_t q = 2;  ///< residual blocks at each end
	std::size_t t = 2;  ///< residual blocks in the trunk
	std::size_t m = 1;  ///< mask-branch granularity (m, 2m, m residual blocks)
	std::size_t features = 64;
	std::size_t nlb_channels = 32;
	bool non_local = false;
	std::size_t downscale_stride = 2;
	FusionMode fusion_mode = FusionMode::proposed_eq8;

	void validate() const {
		if (q < 1 || t < 1 || m < 1) throw ConfigError("block config: q, t and m must be at least 1");
		if (features < 1 || nlb_channels < 1) throw ConfigError("block config: channel widths must be positive");
		if (downscale_stride < 2) throw ConfigError("block config: downscale stride must be at least 2");
	}
	friend bool operator==(const BlockConfig&, const BlockConfig&) = default;
};

struct NetworkConfig {
	std::size_t num_local_blocks = 8;
	std::size_t num_nonlocal_blocks = 2;
	/// Indices of non-local blocks; empty selects the default spread.
	std::vector<std::size_t> nonlocal_positions{};
	std::size_t in_channels = 3;
	BlockConfig block{};
	bool global_residual = true;

	std::size_t num_blocks() const { return num_local_blocks + num_nonlocal_blocks; }

	/**
	 * Non-local positions in effect: the explicit list if given, otherwise
	 * spread evenly from the first to the last block (so two non-local blocks
	 * sit at the low-level and high-level ends).
	 */
	std::vector<std::size_t> resolved_nonlocal_positions() const {
		if (!nonlocal_positions.empty()) return nonlocal_positions;
		std::vector<std::size_t> pos;
		const std::size_t k = num_nonlocal_blocks, total = num_blocks();
		if (k == 1) pos.push_back(0);
		for (std::size_t i = 0; k > 1 && i < k; ++i)
			pos.push_back((i * (total - 1) * 2 + (k - 1)) / (2 * (k - 1)));
		return pos;
	}

	bool is_nonlocal(std::size_t block_index) const {
		const auto pos = resolved_nonlocal_positions();
		return std::find(pos.begin(), pos.end(), block_index) != pos.end();
	}

	void validate() const {
		block.validate();
		if (in_channels < 1) throw ConfigError("network config: in_channels must be positive");
		auto pos = resolved_nonlocal_positions();
		if (pos.size() != num_nonlocal_blocks)
			throw ConfigError("network config: " + std::to_string(pos.size()) + " non-local positions for " +
							  std::to_string(num_nonlocal_blocks) + " non-local blocks");
		std::sort(pos.begin(), pos.end());
		if (std::adjacent_find(pos.begin(), pos.end()) != pos.end())
			throw ConfigError("network config: non-local positions must be distinct");
		if (!pos.empty() && pos.back() >= num_blocks())
			throw ConfigError("network config: non-local position " + std::to_string(pos.back()) + " out of range");
	}

	/// Desk-scale preset: one local and one non-local block at 16 features.
	static NetworkConfig tiny(std::size_t in_channels = 3) {
		NetworkConfig cfg;
		cfg.num_local_blocks = 1;
		cfg.num_nonlocal_blocks = 1;
		cfg.in_channels = in_channels;
		cfg.block.features = 16;
		cfg.block.nlb_channels = 8;
		return cfg;
	}

	friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

}  // namespace rnan

#endif  // RNAN_CONFIG_HPP_
